//! Greedy construction of sparse low-rank approximations.
//!
//! Each iteration computes a rank-one correction of the current residual by
//! alternating least squares (one regularised regression per dimension),
//! then re-fits the coefficients `α` of all terms. Rank selection runs the
//! whole sequence on k folds and keeps the rank with the smallest mean
//! validation error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bases::{factor_products, scale_rows, BasisError, TensorBasis};
use crate::bench::{unit_uniform, SampleSet};
use crate::linalg::{norm2, DenseMatrix, DenseVector, LinalgError};
use crate::solvers::{default_ridge_grid, lasso_loo, ols, ridge_cv, SolverError};
use crate::tensor::{projection_scalar, CanonicalModel, RankOneTerm, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreedyError {
    #[error("factor {dimension} collapsed to zero in sweep {sweep}")]
    DegenerateFactor { dimension: usize, sweep: usize },

    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Regression backend for the per-dimension problems inside ALS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlsRegularization {
    /// Lasso path with leave-one-out selection.
    L1Loo,
    /// Ridge with 5-fold cross-validation over the default grid.
    L2Cv,
    Ols,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stopping {
    /// `‖ẑ_l − ẑ_{l−1}‖₂ ≤ tol · ‖ẑ_l‖₂`, checked from the second sweep.
    Stagnation,
    /// `‖z − ẑ_l‖₂ ≤ epsilon`.
    Residual { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub regularization: AlsRegularization,
    pub max_sweeps: usize,
    pub stagnation_tol: f64,
    pub stopping: Stopping,
    /// Seeds the random restart after a degenerate first sweep.
    pub seed: u64,
    /// Number of canonical starting points `e_j` tried for one sweep each
    /// before the full iteration; the one with the smallest residual wins.
    /// `1` always starts from `e_1`.
    pub screen_starts: usize,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            regularization: AlsRegularization::L1Loo,
            max_sweeps: 10,
            stagnation_tol: 1e-6,
            stopping: Stopping::Stagnation,
            seed: 0,
            screen_starts: 1,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<(), GreedyError> {
        if self.max_sweeps == 0 {
            return Err(GreedyError::InvalidInput("max_sweeps must be >= 1".into()));
        }
        if !(self.stagnation_tol > 0.0) {
            return Err(GreedyError::InvalidInput(
                "stagnation_tol must be > 0".into(),
            ));
        }
        if self.screen_starts == 0 {
            return Err(GreedyError::InvalidInput(
                "screen_starts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// How the coefficients `α` are recomputed after each correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    L1Loo,
    Ols,
    /// Keep previous `α`; the new term gets its least-squares scalar.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyConfig {
    pub max_rank: usize,
    pub als: AlsConfig,
    pub update: UpdateMode,
    pub cv_folds: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            max_rank: 10,
            als: AlsConfig::default(),
            update: UpdateMode::L1Loo,
            cv_folds: 3,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<(), GreedyError> {
        if self.max_rank == 0 {
            return Err(GreedyError::InvalidInput("max_rank must be >= 1".into()));
        }
        self.als.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxRank,
    DegenerateFactor,
    ResidualVanished,
    RankDeficient,
    /// The update gave the new term a zero coefficient and left the
    /// others unchanged.
    Stalled,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxRank => "max_rank",
            StopReason::DegenerateFactor => "degenerate_factor",
            StopReason::ResidualVanished => "residual_vanished",
            StopReason::RankDeficient => "rank_deficient",
            StopReason::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// `‖z − ẑ_m‖₂ / ‖z‖₂` for `m = 1..`.
    pub per_rank_empirical_error: Vec<f64>,
    /// `‖z − ẑ_m‖₂`.
    pub per_rank_residual_norm: Vec<f64>,
    /// Mean k-fold validation MSE per rank; empty without rank selection.
    pub cv_errors: Vec<f64>,
    pub selected_rank: Option<usize>,
    pub sweeps_used: Vec<usize>,
    /// Sparsity ratio of each term on its own.
    pub sparsity: Vec<f64>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneCorrection {
    /// Normalised term.
    pub term: RankOneTerm,
    /// Scalar such that `scale · term` is the ALS solution.
    pub scale: f64,
    pub sweeps: usize,
    /// `‖z − ẑ‖₂` after every inner solve.
    pub residual_trace: Vec<f64>,
}

/// Solves on the nonzero columns of `phi` only; the others get zero
/// coefficients. Sparse factors in other dimensions make such columns common.
fn solve_inner(
    phi: &DenseMatrix,
    z: &[f64],
    reg: AlsRegularization,
) -> Result<DenseVector, SolverError> {
    let keep: Vec<usize> = (0..phi.cols())
        .filter(|&j| phi.column(j).iter().any(|x| *x != 0.0))
        .collect();
    let mut out = DenseVector::zeros(phi.cols());
    if keep.is_empty() {
        return Ok(out);
    }
    if keep.len() == phi.cols() {
        return solve_dense(phi, z, reg);
    }
    let v = solve_dense(&phi.select_columns(&keep), z, reg)?;
    for (&j, x) in keep.iter().zip(v.iter()) {
        out[j] = *x;
    }
    Ok(out)
}

fn solve_dense(
    phi: &DenseMatrix,
    z: &[f64],
    reg: AlsRegularization,
) -> Result<DenseVector, SolverError> {
    match reg {
        AlsRegularization::L1Loo => match lasso_loo(phi, z) {
            Ok(sel) => Ok(sel.coefficients),
            Err(SolverError::ConstantResponse { fallback }) => Ok(fallback.coefficients),
            Err(e) => Err(e),
        },
        AlsRegularization::L2Cv => {
            let folds = 5.min(z.len());
            Ok(ridge_cv(phi, z, &default_ridge_grid(phi), folds)?.coefficients)
        }
        AlsRegularization::Ols => ols(phi, z),
    }
}

/// A failure in the first sweep that a different starting point may avoid.
fn bad_start(failure: &(usize, GreedyError)) -> bool {
    failure.0 == 1
        && matches!(
            failure.1,
            GreedyError::DegenerateFactor { .. }
                | GreedyError::Solver(SolverError::Linalg(
                    LinalgError::RankDeficient { .. } | LinalgError::Underdetermined { .. }
                ))
        )
}

/// Runs ALS from `w`; errors carry the sweep in which they occurred.
fn als_sweeps(
    z: &[f64],
    evals: &[DenseMatrix],
    cfg: &AlsConfig,
    mut w: Vec<DenseVector>,
) -> Result<RankOneCorrection, (usize, GreedyError)> {
    let d = evals.len();
    let mut scale = 1.0;
    let mut previous: Option<Vec<f64>> = None;
    let mut trace = Vec::with_capacity(cfg.max_sweeps * d);
    let mut sweeps = 0;
    for sweep in 1..=cfg.max_sweeps {
        sweeps = sweep;
        let mut fitted = Vec::new();
        for j in 0..d {
            let weights = factor_products(evals, &w, j).map_err(|e| (sweep, e.into()))?;
            let mut phi = evals[j].clone();
            scale_rows(&mut phi, &weights);
            let v = solve_inner(&phi, z, cfg.regularization).map_err(|e| (sweep, e.into()))?;
            let n = v.norm();
            if n == 0.0 {
                return Err((
                    sweep,
                    GreedyError::DegenerateFactor {
                        dimension: j,
                        sweep,
                    },
                ));
            }
            fitted = phi.mul_vec(&v);
            let r: Vec<f64> = z.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            trace.push(norm2(&r));
            scale = n;
            w[j] = DenseVector::new(v.iter().map(|x| x / n).collect()).expect("finite factor");
        }
        let done = match cfg.stopping {
            Stopping::Stagnation => previous.as_ref().map_or(false, |p| {
                let diff: Vec<f64> = fitted.iter().zip(p).map(|(a, b)| a - b).collect();
                norm2(&diff) <= cfg.stagnation_tol * norm2(&fitted)
            }),
            Stopping::Residual { epsilon } => trace.last().map_or(false, |r| *r <= epsilon),
        };
        if done {
            break;
        }
        previous = Some(fitted);
    }
    let mut term = RankOneTerm::new(w);
    scale *= term.normalize().map_err(|e| (sweeps, e.into()))?;
    Ok(RankOneCorrection {
        term,
        scale,
        sweeps,
        residual_trace: trace,
    })
}

/// Rank-one correction from precomputed per-dimension evaluation matrices.
pub fn rank_one_from_evals(
    residual: &[f64],
    evals: &[DenseMatrix],
    basis: &TensorBasis,
    cfg: &AlsConfig,
) -> Result<RankOneCorrection, GreedyError> {
    cfg.validate()?;
    if residual.len() < 2 {
        return Err(GreedyError::InvalidInput(
            "at least two samples required".into(),
        ));
    }
    if let Some(pos) = residual.iter().position(|x| !x.is_finite()) {
        return Err(SolverError::from(LinalgError::NonFinite(pos)).into());
    }
    // Start from the first basis function in every dimension. If that
    // weighting hides the residual or leaves too few informative samples,
    // move on to the next basis functions, then to one random start.
    let dims = basis.dims();
    let starts = dims.iter().copied().max().unwrap_or(1);
    let unit = |j: usize| -> Vec<DenseVector> {
        dims.iter().map(|&n| DenseVector::unit(n, j % n)).collect()
    };
    let screen = cfg.screen_starts.min(starts);
    let mut first = 0;
    if screen > 1 {
        let probe = AlsConfig {
            max_sweeps: 1,
            ..cfg.clone()
        };
        let mut best = f64::INFINITY;
        for j in 0..screen {
            if let Ok(c) = als_sweeps(residual, evals, &probe, unit(j)) {
                let r = *c.residual_trace.last().expect("one sweep");
                if r < best {
                    best = r;
                    first = j;
                }
            }
        }
    }
    for j in (first..starts).chain(0..first) {
        match als_sweeps(residual, evals, cfg, unit(j)) {
            Err(f) if bad_start(&f) => continue,
            other => return other.map_err(|(_, e)| e),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = dims
        .iter()
        .map(|&n| {
            let v: Vec<f64> = (0..n).map(|_| 2.0 * unit_uniform(&mut rng) - 1.0).collect();
            let s = norm2(&v);
            DenseVector::new(v.iter().map(|x| x / s).collect()).expect("finite")
        })
        .collect();
    als_sweeps(residual, evals, cfg, init).map_err(|(_, e)| e)
}

/// Sparse rank-one approximation of `residual` sampled at `points`.
pub fn sparse_rank_one(
    residual: &[f64],
    points: &SampleSet,
    basis: &TensorBasis,
    cfg: &AlsConfig,
) -> Result<RankOneCorrection, GreedyError> {
    check_samples(points, residual, basis)?;
    let evals = basis.evaluate_samples(points)?;
    rank_one_from_evals(residual, &evals, basis, cfg)
}

fn check_samples(points: &SampleSet, z: &[f64], basis: &TensorBasis) -> Result<(), GreedyError> {
    if points.len() != z.len() {
        return Err(GreedyError::InvalidInput(format!(
            "{} points but {} values",
            points.len(),
            z.len()
        )));
    }
    if points.dim() != basis.ndim() {
        return Err(GreedyError::InvalidInput(format!(
            "points have {} coordinates, basis has {} dimensions",
            points.dim(),
            basis.ndim()
        )));
    }
    if z.len() < 2 {
        return Err(GreedyError::InvalidInput(
            "at least two samples required".into(),
        ));
    }
    Ok(())
}

fn values_matrix(values: &[Vec<f64>]) -> DenseMatrix {
    let rows = values.first().map_or(0, Vec::len);
    DenseMatrix::from_columns(rows, values).expect("consistent term values")
}

/// New coefficients from the term values `W` at the samples.
fn update_from_values(
    values: &[Vec<f64>],
    z: &[f64],
    mode: UpdateMode,
    previous: &[f64],
) -> Result<Vec<f64>, SolverError> {
    match mode {
        UpdateMode::None => {
            let mut alphas = previous.to_vec();
            let mut residual = z.to_vec();
            for (a, w) in previous.iter().zip(values) {
                for (r, x) in residual.iter_mut().zip(w) {
                    *r -= a * x;
                }
            }
            alphas.push(projection_scalar(&residual, &values[values.len() - 1]));
            Ok(alphas)
        }
        UpdateMode::Ols => {
            Ok(solve_inner(&values_matrix(values), z, AlsRegularization::Ols)?.into_vec())
        }
        UpdateMode::L1Loo => {
            Ok(solve_inner(&values_matrix(values), z, AlsRegularization::L1Loo)?.into_vec())
        }
    }
}

/// Recomputes `α` for `terms` (`previous` is used by [`UpdateMode::None`]).
pub fn update_coefficients(
    terms: &[RankOneTerm],
    basis: &TensorBasis,
    points: &SampleSet,
    z: &[f64],
    mode: UpdateMode,
    previous: &[f64],
) -> Result<DenseVector, GreedyError> {
    if terms.is_empty() {
        return Err(GreedyError::InvalidInput("no terms to update".into()));
    }
    check_samples(points, z, basis)?;
    let evals = basis.evaluate_samples(points)?;
    let values: Vec<Vec<f64>> = terms.iter().map(|t| t.values(&evals)).collect();
    let alphas = update_from_values(&values, z, mode, previous)?;
    Ok(DenseVector::new(alphas).expect("finite coefficients"))
}

/// Runs the greedy construction up to `cfg.max_rank` terms and returns the
/// models `u_1, u_2, …` (possibly fewer than `max_rank` on early stop).
pub fn greedy_fit(
    points: &SampleSet,
    z: &[f64],
    basis: &TensorBasis,
    cfg: &GreedyConfig,
) -> Result<(Vec<CanonicalModel>, FitReport), GreedyError> {
    cfg.validate()?;
    check_samples(points, z, basis)?;
    let evals = basis.evaluate_samples(points)?;
    greedy_from_evals(z, &evals, basis, cfg)
}

fn greedy_from_evals(
    z: &[f64],
    evals: &[DenseMatrix],
    basis: &TensorBasis,
    cfg: &GreedyConfig,
) -> Result<(Vec<CanonicalModel>, FitReport), GreedyError> {
    let z_norm = norm2(z);
    let relative = |r: f64| if z_norm > 0.0 { r / z_norm } else { r };
    let mut terms: Vec<RankOneTerm> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut zhat = vec![0.0; z.len()];
    let mut models = Vec::new();
    let mut report = FitReport {
        per_rank_empirical_error: Vec::new(),
        per_rank_residual_norm: Vec::new(),
        cv_errors: Vec::new(),
        selected_rank: None,
        sweeps_used: Vec::new(),
        sparsity: Vec::new(),
        stop_reason: StopReason::MaxRank,
    };
    let total_n: usize = basis.dims().iter().sum();

    for _ in 0..cfg.max_rank {
        let residual: Vec<f64> = z.iter().zip(&zhat).map(|(a, b)| a - b).collect();
        if norm2(&residual) <= 1e-14 * z_norm || z_norm == 0.0 {
            report.stop_reason = StopReason::ResidualVanished;
            break;
        }
        let corr = match rank_one_from_evals(&residual, evals, basis, &cfg.als) {
            Ok(c) => c,
            Err(GreedyError::DegenerateFactor { .. }) => {
                report.stop_reason = StopReason::DegenerateFactor;
                break;
            }
            Err(GreedyError::Solver(SolverError::Linalg(LinalgError::RankDeficient {
                ..
            }))) => {
                report.stop_reason = StopReason::RankDeficient;
                break;
            }
            Err(e) => return Err(e),
        };
        let new_values = corr.term.values(evals);
        values.push(new_values);
        let updated = match update_from_values(&values, z, cfg.update, &alphas) {
            Ok(a) => a,
            Err(SolverError::ConstantResponse { fallback }) => fallback.coefficients.into_vec(),
            Err(SolverError::Linalg(LinalgError::RankDeficient { .. }))
            | Err(SolverError::DegenerateColumn(_)) => {
                values.pop();
                report.stop_reason = StopReason::RankDeficient;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let stalled = cfg.update == UpdateMode::L1Loo
            && updated[updated.len() - 1] == 0.0
            && updated[..alphas.len()] == alphas[..];
        alphas = updated;
        report.sweeps_used.push(corr.sweeps);
        report
            .sparsity
            .push(corr.term.nonzeros() as f64 / total_n as f64);
        terms.push(corr.term);

        zhat = vec![0.0; z.len()];
        for (a, w) in alphas.iter().zip(&values) {
            if *a != 0.0 {
                for (h, x) in zhat.iter_mut().zip(w) {
                    *h += a * x;
                }
            }
        }
        let r: Vec<f64> = z.iter().zip(&zhat).map(|(a, b)| a - b).collect();
        let rn = norm2(&r);
        report.per_rank_residual_norm.push(rn);
        report.per_rank_empirical_error.push(relative(rn));
        models.push(CanonicalModel::new(
            basis.clone(),
            terms.clone(),
            DenseVector::new(alphas.clone()).expect("finite coefficients"),
        )?);
        if stalled {
            report.stop_reason = StopReason::Stalled;
            break;
        }
    }
    Ok((models, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSelection {
    pub selected_rank: usize,
    /// `u_{m_op}` fitted on all samples.
    pub model: CanonicalModel,
    /// The full-data sequence `u_1, u_2, …`.
    pub models: Vec<CanonicalModel>,
    /// Full-data report with `cv_errors` and `selected_rank` filled in.
    pub report: FitReport,
    /// Validation MSE per fold and rank.
    pub fold_errors: Vec<Vec<f64>>,
}

/// Validation folds: a seeded shuffle of the sample indices dealt
/// round-robin into `k` groups, each sorted.
pub fn cv_folds(q: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..q).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (t, &i) in perm.iter().enumerate() {
        folds[t % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// k-fold selection of the rank over the greedy sequence, followed by a
/// full-data refit. Ties go to the smaller rank.
pub fn select_rank(
    points: &SampleSet,
    z: &[f64],
    basis: &TensorBasis,
    cfg: &GreedyConfig,
    seed: u64,
) -> Result<RankSelection, GreedyError> {
    cfg.validate()?;
    check_samples(points, z, basis)?;
    let k = cfg.cv_folds;
    if k < 2 || z.len() < 2 * k {
        return Err(GreedyError::InvalidInput(format!(
            "{k}-fold selection needs k >= 2 and at least {} samples",
            2 * k
        )));
    }
    let evals = basis.evaluate_samples(points)?;
    let folds = cv_folds(z.len(), k, seed);
    let m_max = cfg.max_rank;

    let fold_errors: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|valid| -> Result<Vec<f64>, GreedyError> {
            let mut in_valid = vec![false; z.len()];
            valid.iter().for_each(|&i| in_valid[i] = true);
            let train: Vec<usize> = (0..z.len()).filter(|&i| !in_valid[i]).collect();
            let train_evals: Vec<DenseMatrix> =
                evals.iter().map(|e| e.select_rows(&train)).collect();
            let valid_evals: Vec<DenseMatrix> =
                evals.iter().map(|e| e.select_rows(valid)).collect();
            let z_train: Vec<f64> = train.iter().map(|&i| z[i]).collect();
            let z_valid: Vec<f64> = valid.iter().map(|&i| z[i]).collect();
            let (models, _) = greedy_from_evals(&z_train, &train_evals, basis, cfg)?;
            let mse = |pred: &[f64]| {
                pred.iter()
                    .zip(&z_valid)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    / z_valid.len() as f64
            };
            let zero = mse(&vec![0.0; z_valid.len()]);
            let errs: Vec<f64> = models
                .iter()
                .map(|m| mse(&m.evaluate_with(&valid_evals)))
                .collect();
            Ok((0..m_max)
                .map(|m| errs.get(m).or(errs.last()).copied().unwrap_or(zero))
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let cv_errors: Vec<f64> = (0..m_max)
        .map(|m| fold_errors.iter().map(|f| f[m]).sum::<f64>() / k as f64)
        .collect();
    let mut best = 0;
    for m in 1..m_max {
        if cv_errors[m] < cv_errors[best] {
            best = m;
        }
    }
    let selected_rank = best + 1;

    let (models, mut report) = greedy_from_evals(z, &evals, basis, cfg)?;
    let model = if models.is_empty() {
        CanonicalModel::zero(basis.clone())
    } else {
        models[selected_rank.min(models.len()) - 1].clone()
    };
    report.cv_errors = cv_errors;
    report.selected_rank = Some(selected_rank);
    Ok(RankSelection {
        selected_rank,
        model,
        models,
        report,
        fold_errors,
    })
}
