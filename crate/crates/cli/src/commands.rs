//! The `fit`, `path`, `study` and `eval` verbs.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde_json::{json, Value};
use splr_core::bench::{
    relative_error, repetition_study, validation_seed, BenchError, SampleSet, StudySpec,
    StudySummary,
};
use splr_core::greedy::{greedy_fit, select_rank, FitReport};
use splr_core::linalg::DenseMatrix;
use splr_core::solvers::{default_max_steps, lars_lasso_path, loo_select, RegularizationPath};
use splr_core::tensor::CanonicalModel;

use crate::config::{ConfigError, RunConfig};
use crate::output::{csv_table, json_text, num, opt_num, write_atomic, Format};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit code 2.
    Config(ConfigError),
    /// Exit code 3.
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type CmdResult = Result<(), Failure>;

fn training_set(cfg: &RunConfig, q: usize, seed: u64) -> Result<SampleSet, Failure> {
    cfg.function.sample(q, seed).map_err(|e| match e {
        BenchError::InvalidInput(m) => Failure::Config(ConfigError(format!("samples: {m}"))),
        e => Failure::Runtime(e.into()),
    })
}

fn metadata(cfg: &RunConfig, command: &str) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!("splr"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert(
        "config".into(),
        serde_json::to_value(&cfg.file).expect("serialisable config"),
    );
    m
}

/// Writes `config.toml`, from which the run can be repeated as is.
fn write_echo(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut file = cfg.file.clone();
    file.seed = Some(cfg.seed);
    file.output.dir = None;
    let text = toml::to_string(&file).context("serialising the configuration")?;
    write_atomic(&cfg.out_dir.join("config.toml"), text.as_bytes())
}

struct RankRow {
    m: usize,
    empirical: Option<f64>,
    cv: Option<f64>,
    validation: Option<f64>,
    sparsity: Option<f64>,
    per_dimension: Vec<Option<f64>>,
}

fn rank_rows(
    cfg: &RunConfig,
    models: &[CanonicalModel],
    report: &FitReport,
) -> anyhow::Result<Vec<RankRow>> {
    let d = cfg.function.dimension();
    let n = models.len().max(report.cv_errors.len());
    let vseed = validation_seed(cfg.seed);
    (0..n)
        .map(|i| {
            let (validation, sparsity, per_dimension) = match models.get(i) {
                Some(model) => {
                    let v =
                        relative_error(model, &cfg.function, cfg.file.samples.validation, vseed)?;
                    let s = model.sparsity_ratios()?;
                    (
                        Some(v),
                        Some(s.total),
                        s.per_dimension.into_iter().map(Some).collect(),
                    )
                }
                None => (None, None, vec![None; d]),
            };
            Ok(RankRow {
                m: i + 1,
                empirical: report.per_rank_empirical_error.get(i).copied(),
                cv: report.cv_errors.get(i).copied(),
                validation,
                sparsity,
                per_dimension,
            })
        })
        .collect()
}

fn write_fit_report(
    cfg: &RunConfig,
    format: Format,
    rows: &[RankRow],
    summary: serde_json::Map<String, Value>,
) -> anyhow::Result<()> {
    let d = cfg.function.dimension();
    let path = cfg.out_dir.join(format!("report.{}", format.extension()));
    let bytes = match format {
        Format::Csv => {
            let mut header: Vec<String> = [
                "m",
                "empirical_error",
                "cv_error",
                "validation_error",
                "sparsity",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            header.extend((1..=d).map(|k| format!("sparsity_{k}")));
            header.push("selected".into());
            let selected = summary.get("selected_rank").and_then(Value::as_u64);
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = vec![
                        r.m.to_string(),
                        opt_num(r.empirical),
                        opt_num(r.cv),
                        opt_num(r.validation),
                        opt_num(r.sparsity),
                    ];
                    row.extend(r.per_dimension.iter().map(|x| opt_num(*x)));
                    row.push((selected == Some(r.m as u64)).to_string());
                    row
                })
                .collect();
            csv_table(&header, &table)?
        }
        Format::Json => {
            let mut doc = metadata(cfg, "fit");
            doc.extend(summary);
            let table: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "m": r.m,
                        "empirical_error": r.empirical,
                        "cv_error": r.cv,
                        "validation_error": r.validation,
                        "sparsity": r.sparsity,
                        "sparsity_per_dimension": r.per_dimension,
                    })
                })
                .collect();
            doc.insert("ranks".into(), Value::Array(table));
            json_text(&Value::Object(doc))
        }
    };
    write_atomic(&path, &bytes)
}

pub fn fit(cfg: &RunConfig, format: Format) -> CmdResult {
    let basis = cfg.basis();
    let q = cfg.sample_size(cfg.max_degree())?;
    let train = training_set(cfg, q, cfg.seed)?;
    let z = train.evaluations().expect("sampled values").to_vec();
    let greedy = cfg.greedy();
    write_echo(cfg)?;
    let start = Instant::now();

    let outcome = if cfg.file.fit.select_rank {
        select_rank(&train, &z, &basis, &greedy, cfg.seed).map(|s| {
            let folds = s.fold_errors.clone();
            (s.models, s.report, s.selected_rank, s.model, Some(folds))
        })
    } else {
        greedy_fit(&train, &z, &basis, &greedy).map(|(models, report)| {
            let rank = models.len();
            let model = models
                .last()
                .cloned()
                .unwrap_or_else(|| CanonicalModel::zero(basis.clone()));
            (models, report, rank, model, None)
        })
    };
    let mut summary = serde_json::Map::new();
    summary.insert("function".into(), json!(cfg.function.name()));
    summary.insert("samples".into(), json!(q));
    summary.insert(
        "validation_samples".into(),
        json!(cfg.file.samples.validation),
    );

    let (models, report, selected, model, folds) = match outcome {
        Ok(o) => o,
        Err(e) => {
            summary.insert("error".into(), json!(e.to_string()));
            summary.insert(
                "timing_seconds".into(),
                json!(start.elapsed().as_secs_f64()),
            );
            write_fit_report(cfg, format, &[], summary)?;
            return Err(Failure::Runtime(anyhow!(e).context("fit failed")));
        }
    };
    let rows = rank_rows(cfg, &models, &report)?;
    summary.insert("selected_rank".into(), json!(selected));
    summary.insert("stop_reason".into(), json!(report.stop_reason.as_str()));
    summary.insert("sweeps_used".into(), json!(report.sweeps_used));
    summary.insert("term_sparsity".into(), json!(report.sparsity));
    if let Some(folds) = folds {
        summary.insert("fold_errors".into(), json!(folds));
    }
    summary.insert(
        "timing_seconds".into(),
        json!(start.elapsed().as_secs_f64()),
    );

    write_atomic(&cfg.out_dir.join("model.json"), model.to_json().as_bytes())?;
    let fitted = model
        .evaluate_batch(&train)
        .context("evaluating the model")?;
    let mut header: Vec<String> = (1..=train.dim()).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    header.push("fitted".into());
    let table: Vec<Vec<String>> = (0..train.len())
        .map(|i| {
            let mut row: Vec<String> = train.point(i).iter().map(|x| num(*x)).collect();
            row.push(num(z[i]));
            row.push(num(fitted[i]));
            row
        })
        .collect();
    write_atomic(
        &cfg.out_dir.join("fitted.csv"),
        &csv_table(&header, &table)?,
    )?;
    write_fit_report(cfg, format, &rows, summary)?;
    Ok(())
}

fn read_design(path: &Path) -> Result<(DenseMatrix, Vec<f64>), Failure> {
    let config =
        |m: String| Failure::Config(ConfigError(format!("path.design: {}: {m}", path.display())));
    let file = std::fs::File::open(path).map_err(|e| config(e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let width = rdr.headers().map_err(|e| config(e.to_string()))?.len();
    if width < 2 {
        return Err(config(
            "need at least one predictor and the response".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut z = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| config(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| config(format!("line {line}: fields must be finite numbers")))?;
        z.push(vals[width - 1]);
        rows.push(vals[..width - 1].to_vec());
    }
    if rows.is_empty() {
        return Err(config("no rows".into()));
    }
    Ok((
        DenseMatrix::from_rows(&rows).map_err(|e| config(e.to_string()))?,
        z,
    ))
}

/// The first ALS subproblem in dimension `k`: other factors fixed to their
/// first basis function.
fn als_design(cfg: &RunConfig, k: usize) -> Result<(DenseMatrix, Vec<f64>), Failure> {
    let d = cfg.function.dimension();
    if k >= d {
        return Err(ConfigError(format!("path.dimension: {k} out of range for d = {d}")).into());
    }
    let basis = cfg.basis();
    let q = cfg.sample_size(cfg.max_degree())?;
    let train = training_set(cfg, q, cfg.seed)?;
    let evals = basis
        .evaluate_samples(&train)
        .map_err(|e| Failure::Runtime(e.into()))?;
    let mut phi = evals[k].clone();
    for i in 0..q {
        let w: f64 = (0..d)
            .filter(|&j| j != k)
            .map(|j| evals[j][(i, 0)])
            .product();
        phi.row_mut(i).iter_mut().for_each(|x| *x *= w);
    }
    Ok((phi, train.evaluations().expect("sampled values").to_vec()))
}

pub fn path(cfg: &RunConfig, format: Format) -> CmdResult {
    let section = cfg.file.path.clone().unwrap_or(crate::config::PathSection {
        design: None,
        dimension: 0,
        max_steps: None,
    });
    let (phi, z) = match &section.design {
        Some(p) => read_design(p)?,
        None => als_design(cfg, section.dimension)?,
    };
    let max_steps = section
        .max_steps
        .unwrap_or_else(|| default_max_steps(phi.rows(), phi.cols()));
    if max_steps == 0 {
        return Err(ConfigError("path.max_steps: must be >= 1".into()).into());
    }
    write_echo(cfg)?;
    let mut path = lars_lasso_path(&phi, &z, max_steps).map_err(|e| anyhow!(e))?;
    let selection = loo_select(&mut path, &phi, &z);
    write_path(
        cfg,
        format,
        &path,
        selection.as_ref().ok().map(|s| s.step_index),
    )?;
    match selection {
        Ok(_) | Err(splr_core::solvers::SolverError::ConstantResponse { .. }) => Ok(()),
        Err(e) => Err(Failure::Runtime(
            anyhow!(e).context("leave-one-out selection failed"),
        )),
    }
}

fn write_path(
    cfg: &RunConfig,
    format: Format,
    path: &RegularizationPath,
    selected: Option<usize>,
) -> anyhow::Result<()> {
    let out = cfg.out_dir.join(format!("path.{}", format.extension()));
    let bytes = match format {
        Format::Csv => {
            let header: Vec<String> = ["step", "lambda", "l1_norm", "active", "loo_error"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let rows: Vec<Vec<String>> = path
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    vec![
                        i.to_string(),
                        num(s.lambda),
                        num(s.coefficients.norm_l1()),
                        s.active_set.len().to_string(),
                        opt_num(s.loo_error),
                    ]
                })
                .collect();
            csv_table(&header, &rows)?
        }
        Format::Json => {
            let mut doc = metadata(cfg, "path");
            let steps: Vec<Value> = path
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    json!({
                        "step": i,
                        "lambda": s.lambda,
                        "l1_norm": s.coefficients.norm_l1(),
                        "active": s.active_set.len(),
                        "active_set": s.active_set,
                        "loo_error": s.loo_error,
                    })
                })
                .collect();
            doc.insert("steps".into(), Value::Array(steps));
            doc.insert("selected_step".into(), json!(selected));
            json_text(&Value::Object(doc))
        }
    };
    write_atomic(&out, &bytes)
}

struct Cell {
    degree: usize,
    c: Option<f64>,
    alpha: Option<u32>,
    q: usize,
    max_rank: usize,
}

fn grid<T: Clone>(
    name: &str,
    values: &Option<Vec<T>>,
    default: Vec<T>,
) -> Result<Vec<T>, ConfigError> {
    match values {
        Some(v) if v.is_empty() => Err(ConfigError(format!("study.{name}: empty grid"))),
        Some(v) => Ok(v.clone()),
        None => Ok(default),
    }
}

fn study_cells(cfg: &RunConfig) -> Result<Vec<Cell>, ConfigError> {
    let Some(study) = &cfg.file.study else {
        return Err(ConfigError("study: section missing".into()));
    };
    if study.repetitions == 0 {
        return Err(ConfigError("study.repetitions: must be >= 1".into()));
    }
    let degrees = grid("degrees", &study.degrees, vec![cfg.max_degree()])?;
    let ranks = grid("max_rank", &study.max_rank, vec![cfg.file.fit.max_rank])?;
    let rule = match (&study.c, &study.alpha) {
        (None, None) => None,
        (Some(_), Some(_)) => Some((
            grid("c", &study.c, vec![])?,
            grid("alpha", &study.alpha, vec![])?,
        )),
        _ => {
            return Err(ConfigError(
                "study: give both c and alpha, or neither".into(),
            ))
        }
    };
    let s = &cfg.file.samples;
    let d = cfg.function.dimension();
    let mut cells = Vec::new();
    for &degree in &degrees {
        for &max_rank in &ranks {
            if max_rank == 0 {
                return Err(ConfigError("study.max_rank: must be >= 1".into()));
            }
            match &rule {
                Some((cs, alphas)) => {
                    for &c in cs {
                        for &alpha in alphas {
                            if !(c > 0.0 && c.is_finite()) || !(alpha == 1 || alpha == 2) {
                                return Err(ConfigError(format!(
                                    "study: invalid rule c = {c}, alpha = {alpha}"
                                )));
                            }
                            let q = splr_core::bench::sample_rule(c, d, s.m, degree, alpha);
                            cells.push(Cell {
                                degree,
                                c: Some(c),
                                alpha: Some(alpha),
                                q,
                                max_rank,
                            });
                        }
                    }
                }
                None => {
                    let q = cfg.sample_size(degree)?;
                    cells.push(Cell {
                        degree,
                        c: s.c,
                        alpha: s.alpha,
                        q,
                        max_rank,
                    });
                }
            }
        }
    }
    for cell in &cells {
        let basis = cfg.basis_with_degree(Some(cell.degree));
        if basis.dims().is_empty() {
            return Err(ConfigError("study: empty basis".into()));
        }
    }
    Ok(cells)
}

pub fn study(cfg: &RunConfig, format: Format) -> CmdResult {
    let cells = study_cells(cfg)?;
    let repetitions = cfg.file.study.as_ref().map_or(1, |s| s.repetitions);
    write_echo(cfg)?;
    let seeds: Vec<u64> = (0..repetitions as u64)
        .map(|r| cfg.seed.wrapping_add(r))
        .collect();
    let results: Vec<Result<StudySummary, String>> = cells
        .par_iter()
        .map(|cell| {
            let mut fit = cfg.greedy();
            fit.max_rank = cell.max_rank;
            let spec = StudySpec {
                function: cfg.function.clone(),
                basis: cfg.basis_with_degree(Some(cell.degree)),
                sample_size: cell.q,
                fit,
                select_rank: cfg.file.fit.select_rank,
                validation_size: cfg.file.samples.validation,
            };
            repetition_study(&spec, &seeds).map_err(|e| e.to_string())
        })
        .collect();

    let status = |r: &Result<StudySummary, String>| match r {
        Ok(s) if s.succeeded == s.outcomes.len() => "ok",
        Ok(s) if s.succeeded > 0 => "partial",
        _ => "failed",
    };
    let out = cfg.out_dir.join(format!("study.{}", format.extension()));
    let bytes = match format {
        Format::Csv => {
            let header: Vec<String> = [
                "cell",
                "degree",
                "c",
                "alpha",
                "q",
                "max_rank",
                "repetitions",
                "succeeded",
                "statistic",
                "value",
                "status",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            let mut rows = Vec::new();
            for (i, (cell, res)) in cells.iter().zip(&results).enumerate() {
                let (succeeded, stats) = match res {
                    Ok(s) => (
                        s.succeeded,
                        [("mean", s.mean), ("min", s.min), ("max", s.max)],
                    ),
                    Err(_) => (
                        0,
                        [("mean", f64::NAN), ("min", f64::NAN), ("max", f64::NAN)],
                    ),
                };
                for (name, value) in stats {
                    rows.push(vec![
                        i.to_string(),
                        cell.degree.to_string(),
                        cell.c.map(num).unwrap_or_default(),
                        cell.alpha.map(|a| a.to_string()).unwrap_or_default(),
                        cell.q.to_string(),
                        cell.max_rank.to_string(),
                        repetitions.to_string(),
                        succeeded.to_string(),
                        name.to_string(),
                        num(value),
                        status(res).to_string(),
                    ]);
                }
            }
            csv_table(&header, &rows)?
        }
        Format::Json => {
            let mut doc = metadata(cfg, "study");
            let list: Vec<Value> = cells
                .iter()
                .zip(&results)
                .enumerate()
                .map(|(i, (cell, res))| {
                    let mut v = json!({
                        "cell": i,
                        "degree": cell.degree,
                        "c": cell.c,
                        "alpha": cell.alpha,
                        "q": cell.q,
                        "max_rank": cell.max_rank,
                        "repetitions": repetitions,
                        "status": status(res),
                    });
                    match res {
                        Ok(s) => {
                            v["succeeded"] = json!(s.succeeded);
                            v["mean"] = json!(s.mean);
                            v["min"] = json!(s.min);
                            v["max"] = json!(s.max);
                            v["runs"] = s
                                .outcomes
                                .iter()
                                .map(|o| match &o.result {
                                    Ok(r) => json!({
                                        "seed": o.seed,
                                        "relative_error": r.relative_error,
                                        "selected_rank": r.selected_rank,
                                        "effective_rank": r.effective_rank,
                                    }),
                                    Err(e) => json!({ "seed": o.seed, "error": e }),
                                })
                                .collect();
                        }
                        Err(e) => {
                            v["succeeded"] = json!(0);
                            v["error"] = json!(e);
                        }
                    }
                    v
                })
                .collect();
            doc.insert("cells".into(), Value::Array(list));
            json_text(&Value::Object(doc))
        }
    };
    write_atomic(&out, &bytes)?;
    if results.iter().any(|r| status(r) != "failed") {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("every study cell failed")))
    }
}

pub fn eval(model: &Path, points: &Path, out: Option<&Path>, format: Format) -> CmdResult {
    let text = std::fs::read_to_string(model)
        .map_err(|e| ConfigError(format!("--model {}: {e}", model.display())))?;
    let model =
        CanonicalModel::from_json(&text).map_err(|e| ConfigError(format!("--model: {e}")))?;
    let d = model.basis().ndim();
    let bad =
        |m: String| Failure::Config(ConfigError(format!("--points {}: {m}", points.display())));
    let file = std::fs::File::open(points).map_err(|e| bad(e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let expected: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    if header.len() < d || header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(bad(format!(
            "header must start with {}",
            expected.join(",")
        )));
    }
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let y = rec
            .iter()
            .take(d)
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .filter(|y| y.len() == d)
            .ok_or_else(|| bad(format!("line {line}: expected {d} numeric coordinates")))?;
        pts.push(y);
    }
    let values = pts
        .iter()
        .map(|y| model.evaluate(y))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| Failure::Runtime(anyhow!(e).context("evaluating the model")))?;
    let bytes = match format {
        Format::Csv => {
            let mut header = expected.clone();
            header.push("value".into());
            let rows: Vec<Vec<String>> = pts
                .iter()
                .zip(&values)
                .map(|(y, v)| {
                    y.iter()
                        .map(|x| num(*x))
                        .chain(std::iter::once(num(*v)))
                        .collect()
                })
                .collect();
            csv_table(&header, &rows)?
        }
        Format::Json => json_text(&json!({ "points": pts, "values": values })),
    };
    match out {
        Some(dir) => write_atomic(&dir.join(format!("eval.{}", format.extension())), &bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| Failure::Runtime(e.into()))?;
        }
    }
    Ok(())
}
