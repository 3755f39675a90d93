//! Canonical low-rank models `u_m(y) = Σ_i α_i Π_k w_i^(k)(y_k)`.
//!
//! Each factor `w_i^(k)` is a coefficient vector in the univariate basis of
//! dimension `k`. Stored terms are normalised: every factor has unit
//! Euclidean norm and its largest-magnitude entry is positive, so `α`
//! carries both magnitude and sign.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bases::{BasisError, BasisKind, Interval, TensorBasis, UnivariateBasis};
use crate::bench::SampleSet;
use crate::linalg::{dot, DenseMatrix, DenseVector};

pub const MODEL_FORMAT: &str = "splr-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("factor {0} of the term is identically zero")]
    ZeroFactor(usize),

    #[error("model has no terms")]
    EmptyModel,

    #[error("malformed model document at {location}: {message}")]
    MalformedDocument { location: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneTerm {
    factors: Vec<DenseVector>,
}

impl RankOneTerm {
    pub fn new(factors: Vec<DenseVector>) -> Self {
        Self { factors }
    }

    pub fn factors(&self) -> &[DenseVector] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &DenseVector {
        &self.factors[k]
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    /// Rescales every factor to unit norm with a positive largest-magnitude
    /// entry and returns the scalar that was divided out, so that
    /// `scale · normalised term` equals the original term.
    pub fn normalize(&mut self) -> Result<f64, TensorError> {
        let mut scale = 1.0;
        for (k, f) in self.factors.iter_mut().enumerate() {
            let norm = f.norm();
            if norm == 0.0 {
                return Err(TensorError::ZeroFactor(k));
            }
            let pivot =
                f.iter().copied().fold(
                    0.0_f64,
                    |best, x| if x.abs() > best.abs() { x } else { best },
                );
            let s = norm * pivot.signum();
            f.as_mut_slice().iter_mut().for_each(|x| *x /= s);
            scale *= s;
        }
        Ok(scale)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.factors.iter().all(|f| {
            let pivot =
                f.iter().copied().fold(
                    0.0_f64,
                    |best, x| if x.abs() > best.abs() { x } else { best },
                );
            (f.norm() - 1.0).abs() <= tol && pivot > 0.0
        })
    }

    /// Number of exactly nonzero coefficients across all factors.
    pub fn nonzeros(&self) -> usize {
        self.factors.iter().map(DenseVector::count_nonzero).sum()
    }

    /// `Π_k ⟨φ^(k)(y_k), w^(k)⟩`.
    pub fn evaluate(&self, basis: &TensorBasis, y: &[f64]) -> Result<f64, TensorError> {
        check_term(basis, self)?;
        basis.check_point(y)?;
        let mut value = 1.0;
        for ((f, w), &yk) in basis.factors().iter().zip(&self.factors).zip(y) {
            value *= f.eval(yk)?.dot(w);
        }
        Ok(value)
    }

    /// Values at all sample points from precomputed per-dimension
    /// evaluation matrices.
    pub fn values(&self, evals: &[DenseMatrix]) -> Vec<f64> {
        let q = evals.first().map_or(0, DenseMatrix::rows);
        let mut out = vec![1.0; q];
        for (b, w) in evals.iter().zip(&self.factors) {
            for (o, v) in out.iter_mut().zip(b.mul_vec(w)) {
                *o *= v;
            }
        }
        out
    }
}

fn check_term(basis: &TensorBasis, term: &RankOneTerm) -> Result<(), TensorError> {
    if term.ndim() != basis.ndim() {
        return Err(TensorError::DimensionMismatch(format!(
            "term has {} factors, basis has {} dimensions",
            term.ndim(),
            basis.ndim()
        )));
    }
    for (k, (f, w)) in basis.factors().iter().zip(term.factors()).enumerate() {
        if f.dim() != w.len() {
            return Err(TensorError::DimensionMismatch(format!(
                "factor {k} has {} entries, basis has {}",
                w.len(),
                f.dim()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRatios {
    pub total: f64,
    pub per_dimension: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModel {
    basis: TensorBasis,
    terms: Vec<RankOneTerm>,
    alphas: DenseVector,
}

impl CanonicalModel {
    pub fn new(
        basis: TensorBasis,
        terms: Vec<RankOneTerm>,
        alphas: DenseVector,
    ) -> Result<Self, TensorError> {
        if terms.len() != alphas.len() {
            return Err(TensorError::DimensionMismatch(format!(
                "{} terms but {} coefficients",
                terms.len(),
                alphas.len()
            )));
        }
        for t in &terms {
            check_term(&basis, t)?;
        }
        Ok(Self {
            basis,
            terms,
            alphas,
        })
    }

    /// The zero function.
    pub fn zero(basis: TensorBasis) -> Self {
        Self {
            basis,
            terms: Vec::new(),
            alphas: DenseVector::zeros(0),
        }
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn terms(&self) -> &[RankOneTerm] {
        &self.terms
    }

    pub fn alphas(&self) -> &DenseVector {
        &self.alphas
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn effective_rank(&self) -> usize {
        self.alphas.count_nonzero()
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<f64, TensorError> {
        self.basis.check_point(y)?;
        let evals: Vec<DenseVector> = self
            .basis
            .factors()
            .iter()
            .zip(y)
            .map(|(f, &yk)| f.eval(yk))
            .collect::<Result<_, _>>()?;
        Ok(self
            .terms
            .iter()
            .zip(self.alphas.iter())
            .map(|(t, a)| {
                a * t
                    .factors
                    .iter()
                    .zip(&evals)
                    .map(|(w, e)| e.dot(w))
                    .product::<f64>()
            })
            .sum())
    }

    pub fn evaluate_batch(&self, points: &SampleSet) -> Result<DenseVector, TensorError> {
        let evals = self.basis.evaluate_samples(points)?;
        Ok(DenseVector::new(self.evaluate_with(&evals)).expect("finite model values"))
    }

    /// Values at the points behind precomputed evaluation matrices.
    pub fn evaluate_with(&self, evals: &[DenseMatrix]) -> Vec<f64> {
        let q = evals.first().map_or(0, DenseMatrix::rows);
        let mut out = vec![0.0; q];
        for (t, &a) in self.terms.iter().zip(self.alphas.iter()) {
            if a == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(t.values(evals)) {
                *o += a * v;
            }
        }
        out
    }

    pub fn sparsity_ratios(&self) -> Result<SparsityRatios, TensorError> {
        if self.terms.is_empty() {
            return Err(TensorError::EmptyModel);
        }
        let m = self.terms.len() as f64;
        let dims = self.basis.dims();
        let total_n: usize = dims.iter().sum();
        let per_dimension = dims
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let beta: usize = self.terms.iter().map(|t| t.factor(k).count_nonzero()).sum();
                beta as f64 / (m * n as f64)
            })
            .collect();
        let beta: usize = self.terms.iter().map(RankOneTerm::nonzeros).sum();
        Ok(SparsityRatios {
            total: beta as f64 / (m * total_n as f64),
            per_dimension,
        })
    }

    /// Sparsity ratio of term `i` on its own.
    pub fn term_sparsity(&self, i: usize) -> f64 {
        let total_n: usize = self.basis.dims().iter().sum();
        self.terms[i].nonzeros() as f64 / total_n as f64
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            bases: self
                .basis
                .factors()
                .iter()
                .map(|f| BasisDescriptor {
                    kind: f.kind(),
                    lower: f.interval().lower,
                    upper: f.interval().upper,
                })
                .collect(),
            alphas: self.alphas.to_vec(),
            terms: self
                .terms
                .iter()
                .map(|t| TermDocument {
                    factors: t
                        .factors
                        .iter()
                        .map(|f| FactorDocument {
                            length: f.len(),
                            entries: f
                                .iter()
                                .enumerate()
                                .filter(|(_, v)| **v != 0.0)
                                .map(|(i, v)| (i, *v))
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model document serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, TensorError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| TensorError::MalformedDocument {
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
        let malformed = |location: String, message: String| TensorError::MalformedDocument {
            location,
            message,
        };
        if doc.format != MODEL_FORMAT {
            return Err(malformed(
                "format".into(),
                format!("unknown format {:?}", doc.format),
            ));
        }
        if doc.version != MODEL_VERSION {
            return Err(malformed(
                "version".into(),
                format!("unsupported version {}", doc.version),
            ));
        }
        let factors = doc
            .bases
            .iter()
            .enumerate()
            .map(|(k, b)| {
                Interval::new(b.lower, b.upper)
                    .and_then(|iv| UnivariateBasis::new(b.kind, iv))
                    .map_err(|e| malformed(format!("bases[{k}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let basis =
            TensorBasis::new(factors).map_err(|e| malformed("bases".into(), e.to_string()))?;
        if doc.alphas.len() != doc.terms.len() {
            return Err(malformed(
                "alphas".into(),
                format!(
                    "{} coefficients for {} terms",
                    doc.alphas.len(),
                    doc.terms.len()
                ),
            ));
        }
        let alphas =
            DenseVector::new(doc.alphas).map_err(|e| malformed("alphas".into(), e.to_string()))?;
        let mut terms = Vec::with_capacity(doc.terms.len());
        for (i, t) in doc.terms.iter().enumerate() {
            if t.factors.len() != basis.ndim() {
                return Err(malformed(
                    format!("terms[{i}].factors"),
                    format!(
                        "{} factors for {} dimensions",
                        t.factors.len(),
                        basis.ndim()
                    ),
                ));
            }
            let mut fs = Vec::with_capacity(t.factors.len());
            for (k, f) in t.factors.iter().enumerate() {
                let loc = format!("terms[{i}].factors[{k}]");
                if f.length != basis.factor(k).dim() {
                    return Err(malformed(
                        loc,
                        format!(
                            "length {} but basis dimension {}",
                            f.length,
                            basis.factor(k).dim()
                        ),
                    ));
                }
                let mut v = vec![0.0; f.length];
                for &(j, x) in &f.entries {
                    if j >= f.length || !x.is_finite() {
                        return Err(malformed(loc, format!("invalid entry ({j}, {x})")));
                    }
                    v[j] = x;
                }
                fs.push(DenseVector::new(v).expect("checked finite"));
            }
            terms.push(RankOneTerm::new(fs));
        }
        Self::new(basis, terms, alphas)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    bases: Vec<BasisDescriptor>,
    alphas: Vec<f64>,
    terms: Vec<TermDocument>,
}

#[derive(Serialize, Deserialize)]
struct BasisDescriptor {
    #[serde(flatten)]
    kind: BasisKind,
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDocument {
    factors: Vec<FactorDocument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDocument {
    length: usize,
    entries: Vec<(usize, f64)>,
}

/// Dense coefficient tensor of a model, in row-major multi-index order.
/// Only sensible for small bases; used as an evaluation oracle.
pub fn dense_coefficients(model: &CanonicalModel) -> Vec<f64> {
    let dims = model.basis().dims();
    let total: usize = dims.iter().product();
    let mut out = vec![0.0; total];
    for (t, &a) in model.terms().iter().zip(model.alphas().iter()) {
        for (flat, o) in out.iter_mut().enumerate() {
            let mut rem = flat;
            let mut v = a;
            for k in (0..dims.len()).rev() {
                v *= t.factor(k)[rem % dims[k]];
                rem /= dims[k];
            }
            *o += v;
        }
    }
    out
}

/// `Σ_i v_i φ_i(y)` over the full tensor-product basis.
pub fn evaluate_dense(
    basis: &TensorBasis,
    coefficients: &[f64],
    y: &[f64],
) -> Result<f64, TensorError> {
    basis.check_point(y)?;
    let dims = basis.dims();
    let evals: Vec<DenseVector> = basis
        .factors()
        .iter()
        .zip(y)
        .map(|(f, &yk)| f.eval(yk))
        .collect::<Result<_, _>>()?;
    let mut sum = 0.0;
    for (flat, c) in coefficients.iter().enumerate() {
        let mut rem = flat;
        let mut phi = 1.0;
        for k in (0..dims.len()).rev() {
            phi *= evals[k][rem % dims[k]];
            rem /= dims[k];
        }
        sum += c * phi;
    }
    Ok(sum)
}

/// Empirical inner product helper: `⟨a, b⟩ / ⟨b, b⟩`.
pub(crate) fn projection_scalar(a: &[f64], b: &[f64]) -> f64 {
    let bb = dot(b, b);
    if bb == 0.0 {
        0.0
    } else {
        dot(a, b) / bb
    }
}
