//! Regression backends: ordinary least squares, ridge with k-fold
//! cross-validation, and the Lasso path by least angle regression with
//! leave-one-out model selection.
//!
//! The Lasso objective is `‖z − Φv‖₂² + λ‖v‖₁`, with no ½ and no 1/Q factor.
//! At a solution the correlations `Φᵀ(z − Φv)` equal `λ/2 · sign(v_i)` on the
//! support and are bounded by `λ/2` in magnitude elsewhere.

use thiserror::Error;

use crate::linalg::{
    norm2, solve_least_squares, DenseMatrix, DenseVector, IncrementalQr, LinalgError,
};

/// Leverage above which a leave-one-out estimate is treated as undefined.
pub const MAX_LEVERAGE: f64 = 1.0 - 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("column {0} of the design matrix has zero norm")]
    DegenerateColumn(usize),

    /// The response has (numerically) zero spread, so the relative
    /// leave-one-out error is undefined. `fallback` is the path step chosen
    /// by the unnormalised leave-one-out error.
    #[error("response is constant; relative leave-one-out error undefined")]
    ConstantResponse { fallback: Box<SelectedSolution> },

    #[error("no path step admits a leave-one-out estimate")]
    AllStepsInvalid,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub coefficients: DenseVector,
    /// Support of `coefficients`, in order of entry into the path.
    pub active_set: Vec<usize>,
    pub lambda: f64,
    /// Filled in by [`loo_select`]; `None` for steps that were skipped.
    pub loo_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegularizationPath {
    pub steps: Vec<PathStep>,
}

impl RegularizationPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSolution {
    /// Least-squares refit on `active_set`, zero elsewhere.
    pub coefficients: DenseVector,
    pub active_set: Vec<usize>,
    pub loo_error: f64,
    pub step_index: usize,
}

fn check_system(phi: &DenseMatrix, z: &[f64]) -> Result<(), SolverError> {
    if phi.rows() != z.len() {
        return Err(SolverError::InvalidInput(format!(
            "design has {} rows but response has {} entries",
            phi.rows(),
            z.len()
        )));
    }
    if let Some(pos) = z.iter().position(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite(pos).into());
    }
    Ok(())
}

pub fn ols(phi: &DenseMatrix, z: &[f64]) -> Result<DenseVector, SolverError> {
    check_system(phi, z)?;
    Ok(solve_least_squares(phi, z)?)
}

/// `argmin ‖z − Φv‖₂² + λ‖v‖₂²`, solved as the augmented least-squares
/// problem `[Φ; √λ I] v ≈ [z; 0]`.
pub fn ridge(phi: &DenseMatrix, z: &[f64], lambda: f64) -> Result<DenseVector, SolverError> {
    check_system(phi, z)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolverError::InvalidInput(format!(
            "ridge parameter {lambda}"
        )));
    }
    if lambda == 0.0 {
        return ols(phi, z);
    }
    let (q, p) = (phi.rows(), phi.cols());
    let mut aug = DenseMatrix::zeros(q + p, p);
    for i in 0..q {
        aug.row_mut(i).copy_from_slice(phi.row(i));
    }
    let s = lambda.sqrt();
    for j in 0..p {
        aug[(q + j, j)] = s;
    }
    let mut rhs = z.to_vec();
    rhs.resize(q + p, 0.0);
    Ok(solve_least_squares(&aug, &rhs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coefficients: DenseVector,
    pub lambda: f64,
    /// Mean validation MSE for each grid point (infinite when a fold could
    /// not be solved).
    pub cv_errors: Vec<f64>,
}

/// Ten logarithmically spaced values in `[1e-8, 1e2]` times the largest
/// diagonal entry of `ΦᵀΦ`.
pub fn default_ridge_grid(phi: &DenseMatrix) -> Vec<f64> {
    let scale = (0..phi.cols())
        .map(|j| phi.column(j).iter().map(|x| x * x).sum::<f64>())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    (0..10)
        .map(|i| scale * 10f64.powf(-8.0 + 10.0 * i as f64 / 9.0))
        .collect()
}

/// Row `q` belongs to validation fold `q % folds`.
pub fn round_robin_folds(q: usize, folds: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for i in 0..q {
        out[i % folds].push(i);
    }
    out
}

/// Ridge regression with the parameter chosen by k-fold cross-validation
/// (round-robin fold assignment), refit on all rows.
pub fn ridge_cv(
    phi: &DenseMatrix,
    z: &[f64],
    lambda_grid: &[f64],
    folds: usize,
) -> Result<RidgeFit, SolverError> {
    check_system(phi, z)?;
    if folds < 2 || folds > z.len() {
        return Err(SolverError::InvalidInput(format!(
            "{folds} folds for {} samples",
            z.len()
        )));
    }
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(SolverError::InvalidInput(
            "ridge grid must be non-empty and >= 0".into(),
        ));
    }
    let validation = round_robin_folds(z.len(), folds);
    let training: Vec<Vec<usize>> = (0..folds)
        .map(|f| (0..z.len()).filter(|q| q % folds != f).collect())
        .collect();
    let cv_errors: Vec<f64> = lambda_grid
        .iter()
        .map(|&lambda| {
            let mut total = 0.0;
            for (train, valid) in training.iter().zip(&validation) {
                let a = phi.select_rows(train);
                let b: Vec<f64> = train.iter().map(|&i| z[i]).collect();
                let Ok(v) = ridge(&a, &b, lambda) else {
                    return f64::INFINITY;
                };
                let mse = valid
                    .iter()
                    .map(|&i| (z[i] - crate::linalg::dot(phi.row(i), &v)).powi(2))
                    .sum::<f64>()
                    / valid.len() as f64;
                total += mse;
            }
            total / folds as f64
        })
        .collect();
    let (best, _) = cv_errors
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, be), (i, e)| if *e < be { (i, *e) } else { (bi, be) },
        );
    if !cv_errors[best].is_finite() {
        // every grid point failed on some fold; only possible with λ = 0
        return Err(LinalgError::RankDeficient {
            smallest: 0.0,
            largest: 0.0,
        }
        .into());
    }
    let lambda = lambda_grid[best];
    Ok(RidgeFit {
        coefficients: ridge(phi, z, lambda)?,
        lambda,
        cv_errors,
    })
}

/// `3 · min(Q − 1, P)`, at least 2.
pub fn default_max_steps(q: usize, p: usize) -> usize {
    (3 * q.saturating_sub(1).min(p)).max(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Add(usize),
    Drop(usize),
    End,
}

/// Lasso regularisation path by least angle regression with the Lasso
/// modification. Steps are the breakpoints of the piecewise-linear path in
/// order of decreasing λ, starting from `v = 0`.
///
/// The path stops when λ reaches zero, when the support would grow beyond
/// `min(Q − 1, P)`, or after `max_steps` recorded steps. Correlation ties go
/// to the lowest column index.
pub fn lars_lasso_path(
    phi: &DenseMatrix,
    z: &[f64],
    max_steps: usize,
) -> Result<RegularizationPath, SolverError> {
    check_system(phi, z)?;
    let (q, p) = (phi.rows(), phi.cols());
    if p == 0 || q == 0 {
        return Err(SolverError::InvalidInput("empty design matrix".into()));
    }
    if max_steps == 0 {
        return Err(SolverError::InvalidInput("max_steps must be >= 1".into()));
    }
    let columns: Vec<Vec<f64>> = (0..p).map(|j| phi.column(j)).collect();
    if let Some(j) = columns.iter().position(|c| norm2(c) == 0.0) {
        return Err(SolverError::DegenerateColumn(j));
    }
    let cap = (q - 1).min(p);

    let mut v = vec![0.0; p];
    let mut c = phi.tr_mul_vec(z);
    let (first, c_max) = c
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |(bj, bc), (j, cj)| {
            if cj.abs() > bc {
                (j, cj.abs())
            } else {
                (bj, bc)
            }
        });
    let mut path = RegularizationPath::default();
    let mut lam_half = c_max;
    path.steps.push(make_step(&v, &[], 2.0 * lam_half));
    if c_max == 0.0 || cap == 0 || max_steps == 1 {
        return Ok(path);
    }

    let mut active: Vec<usize> = Vec::with_capacity(cap);
    let mut is_active = vec![false; p];
    let mut excluded = vec![false; p];
    let mut qr = IncrementalQr::new(q);
    qr.push(first, &columns[first])?;
    active.push(first);
    is_active[first] = true;
    let mut just_dropped: Option<usize> = None;
    let zero_gamma = 1e-14 * c_max;

    let iteration_limit = 50 * (p + 1) + 4 * max_steps;
    for _ in 0..iteration_limit {
        if path.steps.len() >= max_steps {
            break;
        }
        let signs: Vec<f64> = active
            .iter()
            .map(|&j| {
                if v[j] != 0.0 {
                    v[j].signum()
                } else {
                    c[j].signum()
                }
            })
            .collect();
        let d = qr.solve_normal(&signs);
        let mut u = vec![0.0; q];
        for (di, &j) in d.iter().zip(&active) {
            for (ui, cj) in u.iter_mut().zip(&columns[j]) {
                *ui += di * cj;
            }
        }
        let a = phi.tr_mul_vec(&u);

        let mut gamma = lam_half;
        let mut event = Event::End;
        for j in 0..p {
            if is_active[j] || excluded[j] {
                continue;
            }
            for (num, den) in [(lam_half - c[j], 1.0 - a[j]), (lam_half + c[j], 1.0 + a[j])] {
                if den <= 1e-12 {
                    continue;
                }
                let g = (num / den).max(0.0);
                // a column that just left sits on the boundary; only a later
                // crossing counts as re-entry
                if just_dropped == Some(j) && g <= zero_gamma {
                    continue;
                }
                if g < gamma {
                    gamma = g;
                    event = Event::Add(j);
                }
            }
        }
        for (di, &j) in d.iter().zip(&active) {
            if *di == 0.0 || v[j] == 0.0 {
                continue;
            }
            let g = -v[j] / di;
            if g > 0.0 && g < gamma {
                gamma = g;
                event = Event::Drop(j);
            }
        }

        for (di, &j) in d.iter().zip(&active) {
            v[j] += gamma * di;
        }
        lam_half = if event == Event::End {
            0.0
        } else {
            (lam_half - gamma).max(0.0)
        };
        just_dropped = None;
        let mut stop = event == Event::End;
        match event {
            Event::Drop(j) => {
                v[j] = 0.0;
                active.retain(|&k| k != j);
                is_active[j] = false;
                qr.remove(j);
                just_dropped = Some(j);
            }
            Event::Add(j) if active.len() >= cap => {
                let _ = j;
                stop = true;
            }
            Event::Add(j) => {
                if qr.push(j, &columns[j]).is_ok() {
                    active.push(j);
                    is_active[j] = true;
                } else {
                    excluded[j] = true;
                }
            }
            Event::End => {}
        }
        let fitted = phi.mul_vec(&v);
        let residual: Vec<f64> = z.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        c = phi.tr_mul_vec(&residual);

        if gamma > zero_gamma || matches!(event, Event::Drop(_)) || stop {
            let support: Vec<usize> = active.iter().copied().filter(|&j| v[j] != 0.0).collect();
            let step = make_step(&v, &support, 2.0 * lam_half);
            let l1 = step.coefficients.norm_l1();
            // a zero-length move replaces the previous breakpoint
            while path.steps.len() > 1
                && path
                    .steps
                    .last()
                    .map_or(false, |s| s.coefficients.norm_l1() >= l1)
            {
                path.steps.pop();
            }
            if l1 > 0.0 {
                path.steps.push(step);
            }
        }
        if stop {
            break;
        }
    }
    Ok(path)
}

fn make_step(v: &[f64], support: &[usize], lambda: f64) -> PathStep {
    PathStep {
        coefficients: DenseVector::new(v.to_vec()).expect("finite path coefficients"),
        active_set: support.to_vec(),
        lambda,
        loo_error: None,
    }
}

/// Sample standard deviation (denominator `Q − 1`).
pub fn empirical_std(z: &[f64]) -> f64 {
    if z.len() < 2 {
        return 0.0;
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Brings `qr` to hold exactly the columns in `target`.
fn sync_qr(qr: &mut IncrementalQr, target: &[usize], phi: &DenseMatrix) -> Result<(), LinalgError> {
    let stale: Vec<usize> = qr
        .labels()
        .iter()
        .copied()
        .filter(|l| !target.contains(l))
        .collect();
    for l in stale {
        qr.remove(l);
    }
    for &j in target {
        if !qr.labels().contains(&j) {
            qr.push(j, &phi.column(j))?;
        }
    }
    Ok(())
}

/// Refits each path step by least squares on its support and scores it by
/// the relative leave-one-out error
/// `ε_j = (1/Q) Σ_q ((z_q − ẑ_q) / ((1 − h_q) σ̂(z)))²`.
///
/// Steps whose support has `Q` or more columns, is rank deficient, or has a
/// leverage above [`MAX_LEVERAGE`] are skipped.
pub fn loo_select(
    path: &mut RegularizationPath,
    phi: &DenseMatrix,
    z: &[f64],
) -> Result<SelectedSolution, SolverError> {
    check_system(phi, z)?;
    let q = z.len();
    let sigma = empirical_std(z);
    let z_max = z.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let constant = sigma < 1e-14 * z_max.max(1.0);
    let scale = if constant { 1.0 } else { sigma };

    let mut qr = IncrementalQr::new(q);
    let mut best: Option<(f64, usize)> = None;
    for (j, step) in path.steps.iter_mut().enumerate() {
        step.loo_error = None;
        if step.active_set.len() >= q {
            continue;
        }
        if sync_qr(&mut qr, &step.active_set, phi).is_err() {
            qr.clear();
            continue;
        }
        let (_, fitted) = qr.least_squares(z);
        let h = qr.hat_diagonal();
        if h.iter().any(|&x| x > MAX_LEVERAGE) {
            continue;
        }
        let eps = z
            .iter()
            .zip(&fitted)
            .zip(&h)
            .map(|((zq, fq), hq)| ((zq - fq) / ((1.0 - hq) * scale)).powi(2))
            .sum::<f64>()
            / q as f64;
        step.loo_error = Some(eps);
        if best.map_or(true, |(e, _)| eps < e) {
            best = Some((eps, j));
        }
    }
    let (loo_error, step_index) = best.ok_or(SolverError::AllStepsInvalid)?;
    let active_set = path.steps[step_index].active_set.clone();
    let mut coefficients = DenseVector::zeros(phi.cols());
    if !active_set.is_empty() {
        let refit = solve_least_squares(&phi.select_columns(&active_set), z)?;
        for (&j, c) in active_set.iter().zip(refit.iter()) {
            coefficients[j] = *c;
        }
    }
    let selected = SelectedSolution {
        coefficients,
        active_set,
        loo_error,
        step_index,
    };
    if constant {
        return Err(SolverError::ConstantResponse {
            fallback: Box::new(selected),
        });
    }
    Ok(selected)
}

/// Full path with the default step cap followed by leave-one-out selection.
pub fn lasso_loo(phi: &DenseMatrix, z: &[f64]) -> Result<SelectedSolution, SolverError> {
    let mut path = lars_lasso_path(phi, z, default_max_steps(phi.rows(), phi.cols()))?;
    loo_select(&mut path, phi, z)
}
