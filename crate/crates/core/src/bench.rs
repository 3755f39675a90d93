//! Benchmark functions, seeded sample sets, Monte-Carlo error estimation and
//! repetition studies.
//!
//! Sample points are drawn from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`; each coordinate uses `(next_u64 >> 11) · 2⁻⁵³` mapped
//! affinely onto its interval, points in row order.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bases::{BasisError, Interval, TensorBasis};
use crate::greedy::{greedy_fit, select_rank, GreedyConfig, GreedyError};
use crate::linalg::{norm2, DenseMatrix, DenseVector};
use crate::tensor::{CanonicalModel, TensorError};

/// Mixed into a training seed to obtain the validation seed.
pub const VALIDATION_SEED_MASK: u64 = 0xA5A5_A5A5_A5A5_A5A5;

pub fn validation_seed(training_seed: u64) -> u64 {
    training_seed ^ VALIDATION_SEED_MASK
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Fit(#[from] GreedyError),

    #[error("reference function has zero norm on the validation sample")]
    ZeroDenominator,

    #[error("point is not tabulated in the custom benchmark")]
    NotTabulated,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Sample points `y^1..y^Q` with optional function values.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: DenseMatrix,
    seed: Option<u64>,
    evaluations: Option<DenseVector>,
}

impl SampleSet {
    /// `q` i.i.d. uniform points on the box `domain`.
    pub fn uniform(domain: &[Interval], q: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = domain.len();
        let mut data = Vec::with_capacity(q * d);
        for _ in 0..q {
            for iv in domain {
                data.push(iv.lower + unit_uniform(&mut rng) * iv.width());
            }
        }
        Self {
            points: DenseMatrix::from_row_major(q, d, data).expect("finite samples"),
            seed: Some(seed),
            evaluations: None,
        }
    }

    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self, BenchError> {
        let d = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != d) {
            return Err(BenchError::InvalidInput(
                "points have different dimensions".into(),
            ));
        }
        let q = points.len();
        let data: Vec<f64> = points.into_iter().flatten().collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(BenchError::InvalidInput("non-finite coordinate".into()));
        }
        Ok(Self {
            points: DenseMatrix::from_row_major(q, d, data)
                .map_err(|e| BenchError::InvalidInput(e.to_string()))?,
            seed: None,
            evaluations: None,
        })
    }

    /// Reads a table with header `x1,...,xd,y`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, BenchError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| BenchError::Csv {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let width = header.len();
        let expected: Vec<String> = (1..width)
            .map(|i| format!("x{i}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if width < 2 || header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(BenchError::Csv {
                line: 1,
                message: format!("expected header {}", expected.join(",")),
            });
        }
        let mut points = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| BenchError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != width {
                return Err(BenchError::Csv {
                    line,
                    message: format!("expected {width} fields, found {}", record.len()),
                });
            }
            let row = record
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| BenchError::Csv {
                    line,
                    message: "fields must be finite decimal numbers".into(),
                })?;
            values.push(row[width - 1]);
            points.push(row[..width - 1].to_vec());
        }
        if points.is_empty() {
            return Err(BenchError::Csv {
                line: 2,
                message: "table has no rows".into(),
            });
        }
        Self::from_points(points)?.with_evaluations(values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, BenchError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn with_evaluations(mut self, values: Vec<f64>) -> Result<Self, BenchError> {
        if values.len() != self.len() {
            return Err(BenchError::InvalidInput(format!(
                "{} values for {} points",
                values.len(),
                self.len()
            )));
        }
        self.evaluations =
            Some(DenseVector::new(values).map_err(|e| BenchError::InvalidInput(e.to_string()))?);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn point(&self, q: usize) -> &[f64] {
        self.points.row(q)
    }

    pub fn points(&self) -> &DenseMatrix {
        &self.points
    }

    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.points.column(k)
    }

    pub fn evaluations(&self) -> Option<&DenseVector> {
        self.evaluations.as_ref()
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: self.points.select_rows(indices),
            seed: self.seed,
            evaluations: self.evaluations.as_ref().map(|v| {
                DenseVector::new(indices.iter().map(|&i| v[i]).collect()).expect("finite")
            }),
        }
    }
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub fn unit_uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkFunction {
    /// `10 sin(πy₁y₂) + 20(y₃ − 1/2)² + 10y₄ + 5y₅` on `[0,1]⁵`.
    Friedman,
    /// `c(y₁)(1 − c(y₂)) + (1 − c(y₁))c(y₂)` on `[0,1]²`.
    Checkerboard,
    /// `20 + Σ (y_i² − 10 cos(2πy_i))` on `[−4,4]²`.
    Rastrigin,
    /// Tabulated values; no closed form.
    Custom(Arc<SampleSet>),
}

impl BenchmarkFunction {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "friedman" => Some(Self::Friedman),
            "checkerboard" => Some(Self::Checkerboard),
            "rastrigin" => Some(Self::Rastrigin),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Friedman => "friedman",
            Self::Checkerboard => "checkerboard",
            Self::Rastrigin => "rastrigin",
            Self::Custom(_) => "custom",
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::Friedman => 5,
            Self::Checkerboard | Self::Rastrigin => 2,
            Self::Custom(t) => t.dim(),
        }
    }

    /// Bounding box; for tables, the bounding box of the tabulated points.
    pub fn domain(&self) -> Vec<Interval> {
        match self {
            Self::Friedman => vec![Interval::unit(); 5],
            Self::Checkerboard => vec![Interval::unit(); 2],
            Self::Rastrigin => vec![Interval::symmetric(4.0); 2],
            Self::Custom(t) => (0..t.dim())
                .map(|k| {
                    let c = t.coordinate(k);
                    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    Interval {
                        lower: lo,
                        upper: if hi > lo { hi } else { lo + 1.0 },
                    }
                })
                .collect(),
        }
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<f64, BenchError> {
        evaluate_benchmark(self, y)
    }

    /// Training set of `q` points with values. Analytic functions are
    /// sampled uniformly; tables are shuffled with `seed` and truncated.
    pub fn sample(&self, q: usize, seed: u64) -> Result<SampleSet, BenchError> {
        match self {
            Self::Custom(t) => {
                if q > t.len() {
                    return Err(BenchError::InvalidInput(format!(
                        "requested {q} samples from a table of {} rows",
                        t.len()
                    )));
                }
                let mut idx: Vec<usize> = (0..t.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                idx.truncate(q);
                Ok(t.subset(&idx))
            }
            _ => {
                let pts = SampleSet::uniform(&self.domain(), q, seed);
                let values = (0..q)
                    .map(|i| self.evaluate(pts.point(i)))
                    .collect::<Result<Vec<_>, _>>()?;
                pts.with_evaluations(values)
            }
        }
    }
}

/// 1 on `[2n/6, (2n+1)/6)` and 0 on `[(2n+1)/6, (2n+2)/6)`, `n = 0, 1, 2`.
pub fn crenel(x: f64) -> f64 {
    let cell = ((x * 6.0).floor().max(0.0) as usize).min(5);
    if cell % 2 == 0 {
        1.0
    } else {
        0.0
    }
}

pub fn evaluate_benchmark(f: &BenchmarkFunction, y: &[f64]) -> Result<f64, BenchError> {
    let domain = f.domain();
    if y.len() != domain.len() {
        return Err(BenchError::InvalidInput(format!(
            "point has {} coordinates, function has {}",
            y.len(),
            domain.len()
        )));
    }
    for (iv, &v) in domain.iter().zip(y) {
        if !v.is_finite() || v < iv.lower || v > iv.upper {
            return Err(BasisError::OutOfDomain {
                value: v,
                lower: iv.lower,
                upper: iv.upper,
            }
            .into());
        }
    }
    Ok(match f {
        BenchmarkFunction::Friedman => {
            10.0 * (PI * y[0] * y[1]).sin() + 20.0 * (y[2] - 0.5).powi(2) + 10.0 * y[3] + 5.0 * y[4]
        }
        BenchmarkFunction::Checkerboard => {
            let (a, b) = (crenel(y[0]), crenel(y[1]));
            a * (1.0 - b) + (1.0 - a) * b
        }
        BenchmarkFunction::Rastrigin => {
            20.0 + y
                .iter()
                .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
                .sum::<f64>()
        }
        BenchmarkFunction::Custom(t) => {
            let values = t.evaluations().ok_or(BenchError::NotTabulated)?;
            (0..t.len())
                .find(|&q| t.point(q) == y)
                .map(|q| values[q])
                .ok_or(BenchError::NotTabulated)?
        }
    })
}

/// `‖u_m − u‖_{Q′} / ‖u‖_{Q′}` over `q_prime` fresh uniform points drawn
/// with `seed`. For tables the ratio is taken over every tabulated row.
pub fn relative_error(
    model: &CanonicalModel,
    f: &BenchmarkFunction,
    q_prime: usize,
    seed: u64,
) -> Result<f64, BenchError> {
    if q_prime == 0 {
        return Err(BenchError::InvalidInput(
            "validation size must be >= 1".into(),
        ));
    }
    let validation = match f {
        BenchmarkFunction::Custom(t) => (**t).clone(),
        _ => f.sample(q_prime, seed)?,
    };
    let reference = validation.evaluations().ok_or(BenchError::NotTabulated)?;
    let predicted = model.evaluate_batch(&validation)?;
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(BenchError::ZeroDenominator);
    }
    let diff: Vec<f64> = predicted
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| a - b)
        .collect();
    Ok(norm2(&diff) / denom)
}

/// `Q = ⌈c · d · m · (p+1)^α⌉`.
pub fn sample_rule(c: f64, d: usize, m: usize, p: usize, alpha: u32) -> usize {
    let q = c * d as f64 * m as f64 * ((p + 1) as f64).powi(alpha as i32);
    // guard against representation error pushing an integer product up
    (q * (1.0 - 1e-12)).ceil() as usize
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub function: BenchmarkFunction,
    pub basis: TensorBasis,
    pub sample_size: usize,
    pub fit: GreedyConfig,
    /// Run k-fold rank selection; otherwise the rank-`M` model is scored.
    pub select_rank: bool,
    pub validation_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub relative_error: f64,
    pub selected_rank: usize,
    pub effective_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub result: Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub outcomes: Vec<RunOutcome>,
    pub succeeded: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl StudySummary {
    pub fn failed(&self) -> bool {
        self.succeeded < self.outcomes.len()
    }
}

/// One fit plus validation error for a single seeded sample set.
pub fn run_once(spec: &StudySpec, seed: u64) -> Result<RunResult, BenchError> {
    let train = spec.function.sample(spec.sample_size, seed)?;
    let z = train.evaluations().expect("sampled values").to_vec();
    let (model, selected_rank) = if spec.select_rank {
        let sel = select_rank(&train, &z, &spec.basis, &spec.fit, seed)?;
        (sel.model, sel.selected_rank)
    } else {
        let (models, _) = greedy_fit(&train, &z, &spec.basis, &spec.fit)?;
        let rank = models.len();
        let model = models
            .into_iter()
            .last()
            .unwrap_or_else(|| CanonicalModel::zero(spec.basis.clone()));
        (model, rank)
    };
    let err = relative_error(
        &model,
        &spec.function,
        spec.validation_size,
        validation_seed(seed),
    )?;
    Ok(RunResult {
        relative_error: err,
        selected_rank,
        effective_rank: model.effective_rank(),
    })
}

/// Independent runs, one per seed. Failures are recorded and excluded from
/// the statistics.
pub fn repetition_study(spec: &StudySpec, seeds: &[u64]) -> Result<StudySummary, BenchError> {
    if seeds.is_empty() {
        return Err(BenchError::InvalidInput(
            "at least one repetition required".into(),
        ));
    }
    let outcomes: Vec<RunOutcome> = seeds
        .par_iter()
        .map(|&seed| RunOutcome {
            seed,
            result: run_once(spec, seed).map_err(|e| e.to_string()),
        })
        .collect();
    let errors: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| r.relative_error))
        .collect();
    let n = errors.len();
    let (mean, min, max) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            errors.iter().sum::<f64>() / n as f64,
            errors.iter().copied().fold(f64::INFINITY, f64::min),
            errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    Ok(StudySummary {
        outcomes,
        succeeded: n,
        mean,
        min,
        max,
    })
}
