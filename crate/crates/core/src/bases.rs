//! Orthonormal univariate bases under the uniform probability measure on an
//! interval, their tensorisation, and design-matrix assembly.
//!
//! Three families are provided:
//!
//! * `Legendre(p)`: normalised Legendre polynomials of degree `0..=p`.
//! * `PiecewiseLegendre(p, s)`: on each of `s` uniform pieces, normalised
//!   Legendre polynomials of degree `0..=p` supported on that piece only.
//! * `Multiwavelet(p, L)`: Alpert-type multiwavelets. The `p+1` Legendre
//!   polynomials on the whole interval followed, for each level `ℓ < L` and
//!   each dyadic cell of that level, by `p+1` functions that are piecewise
//!   polynomial on the two halves of the cell and orthogonal to all coarser
//!   functions. They span the same space as `PiecewiseLegendre(p, 2^L)`.
//!
//! Piecewise families use half-open pieces `[a_i, a_{i+1})`; the last piece
//! is closed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::SampleSet;
use crate::linalg::{dot, DenseMatrix, DenseVector};

/// Slack allowed when checking that a coordinate lies in its interval.
pub const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("coordinate {value} outside [{lower}, {upper}]")]
    OutOfDomain { value: f64, lower: f64, upper: f64 },

    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self, BasisError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(BasisError::InvalidInterval(lower, upper));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
        }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self {
            lower: -half_width,
            upper: half_width,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Maps `y` to `[0, 1]`, clamping values within [`DOMAIN_SLACK`].
    fn relative(&self, y: f64) -> Result<f64, BasisError> {
        if !y.is_finite() || y < self.lower - DOMAIN_SLACK || y > self.upper + DOMAIN_SLACK {
            return Err(BasisError::OutOfDomain {
                value: y,
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok(((y - self.lower) / self.width()).clamp(0.0, 1.0))
    }
}

/// Serializable description of a univariate basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    Legendre { degree: usize },
    PiecewiseLegendre { degree: usize, pieces: usize },
    Multiwavelet { degree: usize, levels: usize },
}

impl BasisKind {
    pub fn degree(&self) -> usize {
        match *self {
            BasisKind::Legendre { degree }
            | BasisKind::PiecewiseLegendre { degree, .. }
            | BasisKind::Multiwavelet { degree, .. } => degree,
        }
    }

    /// Number of polynomial pieces the functions are defined on.
    pub fn finest_pieces(&self) -> usize {
        match *self {
            BasisKind::Legendre { .. } => 1,
            BasisKind::PiecewiseLegendre { pieces, .. } => pieces,
            BasisKind::Multiwavelet { levels, .. } => 1 << levels,
        }
    }

    pub fn dim(&self) -> usize {
        (self.degree() + 1) * self.finest_pieces()
    }
}

/// A basis function of a multiwavelet family: coefficients with respect to
/// the local normalised Legendre polynomials on a contiguous run of finest
/// pieces. Pieces outside the run are exact zeros.
#[derive(Debug, Clone, PartialEq)]
struct PiecewiseFunction {
    first_piece: usize,
    /// `coeffs[i][j]`: degree `j` on piece `first_piece + i`.
    coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateBasis {
    kind: BasisKind,
    interval: Interval,
    wavelets: Option<Arc<Vec<PiecewiseFunction>>>,
}

impl UnivariateBasis {
    pub fn new(kind: BasisKind, interval: Interval) -> Result<Self, BasisError> {
        Interval::new(interval.lower, interval.upper)?;
        let wavelets = match kind {
            BasisKind::Legendre { .. } => None,
            BasisKind::PiecewiseLegendre { pieces, .. } => {
                if pieces == 0 {
                    return Err(BasisError::InvalidBasis("piece count must be >= 1".into()));
                }
                None
            }
            BasisKind::Multiwavelet { degree, levels } => {
                if levels > 20 {
                    return Err(BasisError::InvalidBasis(format!(
                        "resolution level {levels} is too large"
                    )));
                }
                Some(Arc::new(build_multiwavelets(degree, levels)))
            }
        };
        Ok(Self {
            kind,
            interval,
            wavelets,
        })
    }

    pub fn legendre(degree: usize, interval: Interval) -> Result<Self, BasisError> {
        Self::new(BasisKind::Legendre { degree }, interval)
    }

    pub fn piecewise_legendre(
        degree: usize,
        pieces: usize,
        interval: Interval,
    ) -> Result<Self, BasisError> {
        Self::new(BasisKind::PiecewiseLegendre { degree, pieces }, interval)
    }

    pub fn multiwavelet(
        degree: usize,
        levels: usize,
        interval: Interval,
    ) -> Result<Self, BasisError> {
        Self::new(BasisKind::Multiwavelet { degree, levels }, interval)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Writes `(φ_1(y), …, φ_n(y))` into `out`.
    pub fn eval_into(&self, y: f64, out: &mut [f64]) -> Result<(), BasisError> {
        debug_assert_eq!(out.len(), self.dim());
        let rel = self.interval.relative(y)?;
        let degree = self.kind.degree();
        let pieces = self.kind.finest_pieces();
        let (piece, t) = locate(rel, pieces);
        let scale = (pieces as f64).sqrt();
        let mut local = vec![0.0; degree + 1];
        normalized_legendre(t, &mut local);
        match self.kind {
            BasisKind::Legendre { .. } => out.copy_from_slice(&local),
            BasisKind::PiecewiseLegendre { .. } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                let block = &mut out[piece * (degree + 1)..(piece + 1) * (degree + 1)];
                for (o, l) in block.iter_mut().zip(&local) {
                    *o = scale * l;
                }
            }
            BasisKind::Multiwavelet { .. } => {
                let funcs = self.wavelets.as_ref().expect("multiwavelet tables");
                for (o, f) in out.iter_mut().zip(funcs.iter()) {
                    *o = if piece >= f.first_piece && piece < f.first_piece + f.coeffs.len() {
                        scale * dot(&f.coeffs[piece - f.first_piece], &local)
                    } else {
                        0.0
                    };
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: f64) -> Result<DenseVector, BasisError> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(y, &mut out)?;
        Ok(DenseVector::new(out).expect("basis values are finite"))
    }

    /// Values at many points as a `points.len() × dim` matrix.
    pub fn eval_many(&self, ys: &[f64]) -> Result<DenseMatrix, BasisError> {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(ys.len(), n);
        for (q, &y) in ys.iter().enumerate() {
            self.eval_into(y, m.row_mut(q))?;
        }
        Ok(m)
    }
}

/// Finest piece containing `rel ∈ [0,1]` and the local coordinate in `[-1,1]`.
fn locate(rel: f64, pieces: usize) -> (usize, f64) {
    let scaled = rel * pieces as f64;
    let piece = (scaled.floor() as usize).min(pieces - 1);
    let t = 2.0 * (scaled - piece as f64) - 1.0;
    (piece, t.clamp(-1.0, 1.0))
}

/// `√(2j+1) P_j(t)` for `j = 0..out.len()`, orthonormal for `dt/2` on `[-1,1]`.
pub fn normalized_legendre(t: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let mut p_prev = 1.0;
    out[0] = 1.0;
    if n > 1 {
        let mut p = t;
        out[1] = 3f64.sqrt() * p;
        for j in 1..n - 1 {
            let jf = j as f64;
            let next = ((2.0 * jf + 1.0) * t * p - jf * p_prev) / (jf + 1.0);
            p_prev = p;
            p = next;
            out[j + 1] = (2.0 * jf + 3.0).sqrt() * p;
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (weights sum to 2).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Builds the multiwavelet family in coefficient form. Inner products of
/// coefficient vectors equal `L²` inner products under the uniform measure,
/// because the local piece bases are orthonormal.
fn build_multiwavelets(degree: usize, levels: usize) -> Vec<PiecewiseFunction> {
    let np = degree + 1;
    let pieces = 1usize << levels;
    let (nodes, weights) = gauss_legendre(np);
    let mut local = vec![0.0; np];
    let mut target = vec![0.0; np];

    // Project a function that is a polynomial of degree ≤ p on `[lo, hi]`
    // (given by `f` in cell coordinates) onto finest piece `k`.
    let project =
        |k: usize, f: &dyn Fn(f64, &mut [f64]), j: usize, local: &mut [f64], target: &mut [f64]| {
            let mut c = vec![0.0; np];
            for (x, w) in nodes.iter().zip(&weights) {
                normalized_legendre(*x, local);
                let rel = (k as f64 + 0.5 * (x + 1.0)) / pieces as f64;
                f(rel, target);
                for (ci, li) in c.iter_mut().zip(local.iter()) {
                    *ci += 0.5 * w * target[j] * li;
                }
            }
            c
        };

    let mut funcs: Vec<PiecewiseFunction> = Vec::with_capacity(np * pieces);

    // scaling functions: global normalised Legendre, rescaled to piece norm
    let inv_scale = 1.0 / (pieces as f64).sqrt();
    for j in 0..np {
        let global = |rel: f64, out: &mut [f64]| normalized_legendre(2.0 * rel - 1.0, out);
        let coeffs = (0..pieces)
            .map(|k| {
                project(k, &global, j, &mut local, &mut target)
                    .into_iter()
                    .map(|c| c * inv_scale)
                    .collect()
            })
            .collect();
        funcs.push(PiecewiseFunction {
            first_piece: 0,
            coeffs,
        });
    }

    for level in 0..levels {
        let cells = 1usize << level;
        let span = pieces / cells;
        for cell in 0..cells {
            let first = cell * span;
            let half = span / 2;
            // coarser functions restricted to the cell span the degree-p
            // polynomials there
            let coarse: Vec<Vec<f64>> = (0..np)
                .map(|j| {
                    let lo = first as f64 / pieces as f64;
                    let width = span as f64 / pieces as f64;
                    let poly = |rel: f64, out: &mut [f64]| {
                        normalized_legendre(2.0 * (rel - lo) / width - 1.0, out)
                    };
                    let mut v = Vec::with_capacity(span * np);
                    for i in 0..span {
                        v.extend(project(first + i, &poly, j, &mut local, &mut target));
                    }
                    let n = crate::linalg::norm2(&v);
                    v.iter_mut().for_each(|x| *x /= n);
                    v
                })
                .collect();
            let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(np);
            for j in 0..np {
                if accepted.len() == np {
                    break;
                }
                // candidate: degree-j Legendre on the left half of the cell
                let lo = first as f64 / pieces as f64;
                let width = half as f64 / pieces as f64;
                let cand = |rel: f64, out: &mut [f64]| {
                    normalized_legendre(2.0 * (rel - lo) / width - 1.0, out)
                };
                let mut v = vec![0.0; span * np];
                for i in 0..half {
                    let c = project(first + i, &cand, j, &mut local, &mut target);
                    v[i * np..(i + 1) * np].copy_from_slice(&c);
                }
                let initial = crate::linalg::norm2(&v);
                for _ in 0..2 {
                    for basis in coarse.iter().chain(accepted.iter()) {
                        let s = dot(basis, &v);
                        for (vi, bi) in v.iter_mut().zip(basis) {
                            *vi -= s * bi;
                        }
                    }
                }
                let norm = crate::linalg::norm2(&v);
                if norm > 1e-8 * initial {
                    v.iter_mut().for_each(|x| *x /= norm);
                    accepted.push(v);
                }
            }
            for v in accepted {
                funcs.push(PiecewiseFunction {
                    first_piece: first,
                    coeffs: v.chunks(np).map(<[f64]>::to_vec).collect(),
                });
            }
        }
    }
    funcs
}

/// `∫ φ_i φ_j dP` by composite Gauss–Legendre quadrature with `quad_order`
/// nodes on each finest piece.
pub fn gram_matrix(basis: &UnivariateBasis, quad_order: usize) -> DenseMatrix {
    let n = basis.dim();
    let pieces = basis.kind.finest_pieces();
    let (nodes, weights) = gauss_legendre(quad_order.max(1));
    let mut g = DenseMatrix::zeros(n, n);
    let mut vals = vec![0.0; n];
    let iv = basis.interval;
    for k in 0..pieces {
        for (x, w) in nodes.iter().zip(&weights) {
            let rel = (k as f64 + 0.5 * (x + 1.0)) / pieces as f64;
            let y = iv.lower + rel * iv.width();
            basis
                .eval_into(y, &mut vals)
                .expect("quadrature node inside interval");
            let wk = 0.5 * w / pieces as f64;
            for a in 0..n {
                if vals[a] == 0.0 {
                    continue;
                }
                for b in 0..n {
                    g[(a, b)] += wk * vals[a] * vals[b];
                }
            }
        }
    }
    g
}

/// One univariate basis per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    factors: Vec<UnivariateBasis>,
}

impl TensorBasis {
    pub fn new(factors: Vec<UnivariateBasis>) -> Result<Self, BasisError> {
        if factors.is_empty() {
            return Err(BasisError::InvalidBasis("tensor basis needs d >= 1".into()));
        }
        Ok(Self { factors })
    }

    /// The same univariate basis in every dimension.
    pub fn isotropic(basis: UnivariateBasis, d: usize) -> Result<Self, BasisError> {
        Self::new(vec![basis; d])
    }

    pub fn factors(&self) -> &[UnivariateBasis] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &UnivariateBasis {
        &self.factors[k]
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(UnivariateBasis::dim).collect()
    }

    /// `Π_k n_k`, saturating at `u128::MAX`.
    pub fn full_dimension(&self) -> u128 {
        self.factors
            .iter()
            .fold(1u128, |acc, f| acc.saturating_mul(f.dim() as u128))
    }

    pub fn check_point(&self, y: &[f64]) -> Result<(), BasisError> {
        if y.len() != self.ndim() {
            return Err(BasisError::DimensionMismatch(format!(
                "point has {} coordinates, basis has {} dimensions",
                y.len(),
                self.ndim()
            )));
        }
        for (f, &v) in self.factors.iter().zip(y) {
            f.interval.relative(v)?;
        }
        Ok(())
    }

    /// Per-dimension evaluation matrices for all sample points.
    pub fn evaluate_samples(&self, points: &SampleSet) -> Result<Vec<DenseMatrix>, BasisError> {
        if points.dim() != self.ndim() {
            return Err(BasisError::DimensionMismatch(format!(
                "samples have {} coordinates, basis has {} dimensions",
                points.dim(),
                self.ndim()
            )));
        }
        self.factors
            .iter()
            .enumerate()
            .map(|(k, f)| f.eval_many(&points.coordinate(k)))
            .collect()
    }
}

/// Design matrix for dimension `dim`: `(Φ)_{qi} = φ_i(y^q_dim) Π_{k≠dim} w^(k)(y^q_k)`.
///
/// Without `factors` the products over other dimensions are taken as 1.
pub fn design_matrix(
    basis: &TensorBasis,
    points: &SampleSet,
    dim: usize,
    factors: Option<&[DenseVector]>,
) -> Result<DenseMatrix, BasisError> {
    if dim >= basis.ndim() {
        return Err(BasisError::DimensionMismatch(format!(
            "dimension {dim} out of range for d = {}",
            basis.ndim()
        )));
    }
    let evals = basis.evaluate_samples(points)?;
    let weights = match factors {
        None => None,
        Some(ws) => Some(factor_products(&evals, ws, dim)?),
    };
    let mut phi = evals[dim].clone();
    if let Some(w) = weights {
        scale_rows(&mut phi, &w);
    }
    Ok(phi)
}

/// `Π_{k≠skip} (B_k w^(k))_q` for every sample `q`.
pub(crate) fn factor_products(
    evals: &[DenseMatrix],
    factors: &[DenseVector],
    skip: usize,
) -> Result<Vec<f64>, BasisError> {
    if factors.len() != evals.len() {
        return Err(BasisError::DimensionMismatch(format!(
            "{} factors for {} dimensions",
            factors.len(),
            evals.len()
        )));
    }
    let q = evals.first().map_or(0, DenseMatrix::rows);
    let mut prod = vec![1.0; q];
    for (k, (b, w)) in evals.iter().zip(factors).enumerate() {
        if k == skip {
            continue;
        }
        if w.len() != b.cols() {
            return Err(BasisError::DimensionMismatch(format!(
                "factor {k} has {} entries, basis has {}",
                w.len(),
                b.cols()
            )));
        }
        for (p, v) in prod.iter_mut().zip(b.mul_vec(w)) {
            *p *= v;
        }
    }
    Ok(prod)
}

pub(crate) fn scale_rows(m: &mut DenseMatrix, w: &[f64]) {
    for (q, &s) in w.iter().enumerate() {
        m.row_mut(q).iter_mut().for_each(|x| *x *= s);
    }
}
