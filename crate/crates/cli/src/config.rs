//! Run configuration: a TOML document resolved against the core types.
//!
//! ```toml
//! seed = 7
//!
//! [function]
//! name = "checkerboard"        # friedman | checkerboard | rastrigin | custom
//! # table = "data.csv"         # custom only; header x1,...,xd,y
//!
//! [basis]                      # applied to every dimension
//! kind = "piecewise_legendre"  # legendre | piecewise_legendre | multiwavelet
//! degree = 2
//! pieces = 6                   # piecewise_legendre
//! # levels = 3                 # multiwavelet
//! # lower = 0.0                # defaults to the function's domain
//! # upper = 1.0
//!
//! # [[bases]]                  # per-dimension alternative to [basis]
//!
//! [samples]
//! q = 200                      # or c and alpha for Q = ceil(c d m (p+1)^alpha)
//! validation = 1000
//!
//! [fit]
//! max_rank = 10
//! als = "l1_loo"               # l1_loo | l2_cv | ols
//! update = "l1_loo"            # l1_loo | ols | none
//! cv_folds = 3
//! select_rank = true
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use splr_core::bases::{BasisKind, Interval, TensorBasis, UnivariateBasis};
use splr_core::bench::{sample_rule, BenchmarkFunction, SampleSet};
use splr_core::greedy::{AlsConfig, AlsRegularization, GreedyConfig, Stopping, UpdateMode};

/// Invalid or unusable configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub function: FunctionSection,
    pub basis: Option<BasisSpec>,
    pub bases: Option<Vec<BasisSpec>>,
    #[serde(default)]
    pub samples: SamplesSection,
    #[serde(default)]
    pub fit: FitSection,
    pub path: Option<PathSection>,
    pub study: Option<StudySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSection {
    pub name: String,
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Legendre,
    PiecewiseLegendre,
    Multiwavelet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: KindName,
    pub degree: usize,
    pub pieces: Option<usize>,
    pub levels: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesSection {
    pub q: Option<usize>,
    pub c: Option<f64>,
    pub alpha: Option<u32>,
    /// Rank factor `m` of the sample rule.
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "default_validation")]
    pub validation: usize,
}

impl Default for SamplesSection {
    fn default() -> Self {
        Self {
            q: None,
            c: None,
            alpha: None,
            m: 1,
            validation: default_validation(),
        }
    }
}

fn one() -> usize {
    1
}

fn default_validation() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlsName {
    L1Loo,
    L2Cv,
    Ols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateName {
    L1Loo,
    Ols,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_rank: usize,
    pub als: AlsName,
    pub update: UpdateName,
    pub cv_folds: usize,
    pub select_rank: bool,
    pub max_sweeps: usize,
    pub stagnation_tol: f64,
    /// Switches ALS to the residual stopping rule `‖z − ẑ‖₂ ≤ ε`.
    pub residual_epsilon: Option<f64>,
    pub screen_starts: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let g = GreedyConfig::default();
        Self {
            max_rank: g.max_rank,
            als: AlsName::L1Loo,
            update: UpdateName::L1Loo,
            cv_folds: g.cv_folds,
            select_rank: true,
            max_sweeps: g.als.max_sweeps,
            stagnation_tol: g.als.stagnation_tol,
            residual_epsilon: None,
            screen_starts: g.als.screen_starts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    /// CSV design: one column per predictor, response in the last column.
    pub design: Option<PathBuf>,
    /// Without a design, the first ALS subproblem in this dimension.
    #[serde(default)]
    pub dimension: usize,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub degrees: Option<Vec<usize>>,
    pub c: Option<Vec<f64>>,
    pub alpha: Option<Vec<u32>>,
    pub max_rank: Option<Vec<usize>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_repetitions() -> usize {
    11
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Configuration with command-line and environment overrides applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: FileConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub function: BenchmarkFunction,
    pub specs: Vec<BasisSpec>,
}

pub fn load(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let file: FileConfig =
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(file, base, seed, out)
}

pub fn resolve(
    mut file: FileConfig,
    base: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, ConfigError> {
    let function = match file.function.name.as_str() {
        "custom" => {
            let Some(table) = &file.function.table else {
                return err("function.table: required for the custom function");
            };
            let table = base.join(table);
            let table = table.canonicalize().unwrap_or(table);
            let set = SampleSet::from_csv_path(&table)
                .map_err(|e| ConfigError(format!("function.table: {}: {e}", table.display())))?;
            file.function.table = Some(table);
            BenchmarkFunction::Custom(Arc::new(set))
        }
        name => {
            if file.function.table.is_some() {
                return err("function.table: only allowed for the custom function");
            }
            BenchmarkFunction::from_name(name).ok_or_else(|| {
                ConfigError(format!(
                    "function.name: unknown function `{name}` \
                     (expected friedman, checkerboard, rastrigin or custom)"
                ))
            })?
        }
    };
    let d = function.dimension();
    let specs = match (&file.basis, &file.bases) {
        (Some(b), None) => vec![b.clone(); d],
        (None, Some(list)) => {
            if list.len() != d {
                return err(format!(
                    "bases: {} entries for a {d}-dimensional function",
                    list.len()
                ));
            }
            list.clone()
        }
        (Some(_), Some(_)) => return err("basis, bases: give one of the two"),
        (None, None) => return err("basis: missing"),
    };
    let domain = function.domain();
    for (k, spec) in specs.iter().enumerate() {
        build_basis(spec, domain[k]).map_err(|e| ConfigError(format!("basis[{k}]: {}", e.0)))?;
    }
    if let Some(p) = &mut file.path {
        if let Some(design) = &p.design {
            let design = base.join(design);
            p.design = Some(design.canonicalize().unwrap_or(design));
        }
    }
    let s = &file.samples;
    match (s.q, s.c, s.alpha) {
        (Some(_), None, None) | (None, Some(_), Some(_)) => {}
        (None, None, None) if file.study.is_some() => {}
        _ => return err("samples: give either q, or both c and alpha"),
    }
    if s.q == Some(0) {
        return err("samples.q: must be >= 1");
    }
    if s.validation == 0 {
        return err("samples.validation: must be >= 1");
    }
    if matches!(s.c, Some(c) if !(c > 0.0 && c.is_finite())) {
        return err("samples.c: must be positive");
    }
    if matches!(s.alpha, Some(a) if a != 1 && a != 2) {
        return err("samples.alpha: must be 1 or 2");
    }
    greedy_config(&file.fit, 0)?;
    let out_dir = out
        .or_else(|| file.output.dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("splr-out"));
    Ok(RunConfig {
        seed: seed.or(file.seed).unwrap_or(0),
        out_dir,
        function,
        specs,
        file,
    })
}

pub fn build_basis(spec: &BasisSpec, domain: Interval) -> Result<UnivariateBasis, ConfigError> {
    let kind = match spec.kind {
        KindName::Legendre => {
            if spec.pieces.is_some() || spec.levels.is_some() {
                return err("legendre takes no pieces or levels");
            }
            BasisKind::Legendre {
                degree: spec.degree,
            }
        }
        KindName::PiecewiseLegendre => BasisKind::PiecewiseLegendre {
            degree: spec.degree,
            pieces: spec
                .pieces
                .ok_or_else(|| ConfigError("pieces: required for piecewise_legendre".into()))?,
        },
        KindName::Multiwavelet => BasisKind::Multiwavelet {
            degree: spec.degree,
            levels: spec
                .levels
                .ok_or_else(|| ConfigError("levels: required for multiwavelet".into()))?,
        },
    };
    let interval = Interval {
        lower: spec.lower.unwrap_or(domain.lower),
        upper: spec.upper.unwrap_or(domain.upper),
    };
    UnivariateBasis::new(kind, interval).map_err(|e| ConfigError(e.to_string()))
}

impl RunConfig {
    pub fn basis(&self) -> TensorBasis {
        self.basis_with_degree(None)
    }

    /// The configured basis, optionally with every degree replaced.
    pub fn basis_with_degree(&self, degree: Option<usize>) -> TensorBasis {
        let domain = self.function.domain();
        let factors = self
            .specs
            .iter()
            .zip(domain)
            .map(|(s, iv)| {
                let mut s = s.clone();
                if let Some(p) = degree {
                    s.degree = p;
                }
                build_basis(&s, iv).expect("validated basis")
            })
            .collect();
        TensorBasis::new(factors).expect("non-empty basis")
    }

    pub fn max_degree(&self) -> usize {
        self.specs.iter().map(|s| s.degree).max().unwrap_or(0)
    }

    /// Sample size from `samples`, with the rule evaluated at `degree`.
    pub fn sample_size(&self, degree: usize) -> Result<usize, ConfigError> {
        let s = &self.file.samples;
        let d = self.function.dimension();
        match (s.q, s.c, s.alpha) {
            (Some(q), _, _) => Ok(q),
            (None, Some(c), Some(alpha)) => Ok(sample_rule(c, d, s.m, degree, alpha)),
            _ => err("samples: give either q, or both c and alpha"),
        }
    }

    pub fn greedy(&self) -> GreedyConfig {
        greedy_config(&self.file.fit, self.seed).expect("validated fit section")
    }
}

pub fn greedy_config(fit: &FitSection, seed: u64) -> Result<GreedyConfig, ConfigError> {
    let cfg = GreedyConfig {
        max_rank: fit.max_rank,
        als: AlsConfig {
            regularization: match fit.als {
                AlsName::L1Loo => AlsRegularization::L1Loo,
                AlsName::L2Cv => AlsRegularization::L2Cv,
                AlsName::Ols => AlsRegularization::Ols,
            },
            max_sweeps: fit.max_sweeps,
            stagnation_tol: fit.stagnation_tol,
            stopping: match fit.residual_epsilon {
                Some(epsilon) => Stopping::Residual { epsilon },
                None => Stopping::Stagnation,
            },
            seed,
            screen_starts: fit.screen_starts,
        },
        update: match fit.update {
            UpdateName::L1Loo => UpdateMode::L1Loo,
            UpdateName::Ols => UpdateMode::Ols,
            UpdateName::None => UpdateMode::None,
        },
        cv_folds: fit.cv_folds,
    };
    cfg.validate()
        .map_err(|e| ConfigError(format!("fit: {e}")))?;
    if fit.select_rank && fit.cv_folds < 2 {
        return err("fit.cv_folds: must be >= 2 for rank selection");
    }
    Ok(cfg)
}
