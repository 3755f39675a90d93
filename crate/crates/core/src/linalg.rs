//! Dense linear algebra used by the regression backends.
//!
//! Everything here is deliberately small: row-major matrices, Householder QR
//! for least squares and hat-matrix diagonals, and an updatable thin QR that
//! follows an active set as columns enter and leave.

use std::ops::{Deref, Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold on the diagonal of the triangular factor below which a
/// matrix is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is rank deficient: |r_kk| = {smallest:e} vs max {largest:e}")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at position {0}")]
    NonFinite(usize),

    #[error("least squares needs rows >= cols >= 1, got {rows}x{cols}")]
    Underdetermined { rows: usize, cols: usize },
}

/// A vector of finite reals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, LinalgError> {
        if let Some(pos) = entries.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(pos));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Unit vector `e_index` of length `len`.
    pub fn unit(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    /// Number of entries that are not exactly zero.
    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|x| **x != 0.0).count()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = LinalgError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(pos));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::DimensionMismatch("ragged rows".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(LinalgError::DimensionMismatch(format!(
                    "column {j} has {} entries, expected {rows}",
                    col.len()
                )));
            }
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tr_mul_vec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul: inner dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..self.cols {
                    g.data[a * self.cols + b] += ra * r[b];
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                g.data[a * self.cols + b] = g.data[b * self.cols + a];
            }
        }
        g
    }

    pub fn select_columns(&self, cols: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            let src = self.row(i);
            for (o, &c) in out.row_mut(i).iter_mut().zip(cols) {
                *o = src[c];
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DenseMatrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    // scaled to avoid overflow on large responses
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * a.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// Householder QR of a tall matrix, stored column-wise for cache-friendly
/// reflector application.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    rows: usize,
    cols: usize,
    /// Column `k` holds the reflector below the diagonal and R above it.
    columns: Vec<Vec<f64>>,
    rdiag: Vec<f64>,
}

impl HouseholderQr {
    pub fn new(a: &DenseMatrix) -> Result<Self, LinalgError> {
        let (rows, cols) = (a.rows(), a.cols());
        if cols == 0 || rows < cols {
            return Err(LinalgError::Underdetermined { rows, cols });
        }
        let mut columns: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
        let mut rdiag = vec![0.0; cols];
        for k in 0..cols {
            let (done, rest) = columns.split_at_mut(k + 1);
            let col = &mut done[k];
            let alpha = norm2(&col[k..]);
            if alpha == 0.0 {
                rdiag[k] = 0.0;
                continue;
            }
            let alpha = if col[k] > 0.0 { -alpha } else { alpha };
            // v = x - alpha e1, normalised so that v[k] = 1 is implicit in beta
            col[k] -= alpha;
            let vnorm2: f64 = col[k..].iter().map(|x| x * x).sum();
            for other in rest.iter_mut() {
                let s = dot(&col[k..], &other[k..]) * 2.0 / vnorm2;
                for (o, v) in other[k..].iter_mut().zip(&col[k..]) {
                    *o -= s * v;
                }
            }
            rdiag[k] = alpha;
        }
        let qr = Self {
            rows,
            cols,
            columns,
            rdiag,
        };
        qr.check_rank()?;
        Ok(qr)
    }

    fn check_rank(&self) -> Result<(), LinalgError> {
        let largest = self.rdiag.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let smallest = self.rdiag.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        if largest == 0.0 || smallest < RANK_TOLERANCE * largest {
            return Err(LinalgError::RankDeficient { smallest, largest });
        }
        Ok(())
    }

    /// Applies `Qᵀ` to `b` in place.
    fn apply_qt(&self, b: &mut [f64]) {
        for k in 0..self.cols {
            let col = &self.columns[k];
            // the diagonal slot holds v_k = x_k - alpha, not R_kk
            let v0 = col[k];
            let vnorm2: f64 = v0 * v0 + col[k + 1..].iter().map(|x| x * x).sum::<f64>();
            if vnorm2 == 0.0 {
                continue;
            }
            let s = (v0 * b[k] + dot(&col[k + 1..], &b[k + 1..])) * 2.0 / vnorm2;
            b[k] -= s * v0;
            for (bi, vi) in b[k + 1..].iter_mut().zip(&col[k + 1..]) {
                *bi -= s * vi;
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.rdiag[i]
        } else {
            self.columns[j][i]
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs has {} entries, matrix has {} rows",
                b.len(),
                self.rows
            )));
        }
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let mut x = vec![0.0; self.cols];
        for i in (0..self.cols).rev() {
            let mut s = qtb[i];
            for (j, xj) in x.iter().enumerate().skip(i + 1) {
                s -= self.r(i, j) * xj;
            }
            x[i] = s / self.rdiag[i];
        }
        Ok(x)
    }

    /// Diagonal of the orthogonal projector onto the column space, via
    /// `h_q = ‖R⁻ᵀ a_q‖²` for each row `a_q`.
    pub fn hat_diagonal(&self, a: &DenseMatrix) -> Vec<f64> {
        let p = self.cols;
        let mut y = vec![0.0; p];
        (0..self.rows)
            .map(|q| {
                let row = a.row(q);
                for i in 0..p {
                    let mut s = row[i];
                    for (j, yj) in y.iter().enumerate().take(i) {
                        s -= self.r(j, i) * yj;
                    }
                    y[i] = s / self.rdiag[i];
                }
                y.iter().map(|v| v * v).sum::<f64>()
            })
            .collect()
    }
}

/// `argmin_v ‖b − A v‖₂` through Householder QR.
pub fn solve_least_squares(a: &DenseMatrix, b: &[f64]) -> Result<DenseVector, LinalgError> {
    let qr = HouseholderQr::new(a)?;
    DenseVector::new(qr.solve(b)?)
}

/// Diagonal of `A (AᵀA)⁻¹ Aᵀ`.
pub fn hat_diagonal(a: &DenseMatrix) -> Result<DenseVector, LinalgError> {
    let qr = HouseholderQr::new(a)?;
    DenseVector::new(qr.hat_diagonal(a))
}

/// Thin QR factorisation `A = Q R` of a column subset that supports adding
/// and removing columns in `O(rows · cols)`.
///
/// Columns are appended with classical Gram–Schmidt and one
/// re-orthogonalisation pass; removal re-triangularises `R` with Givens
/// rotations that are also applied to `Q`.
#[derive(Debug, Clone)]
pub struct IncrementalQr {
    rows: usize,
    /// Orthonormal columns of Q, each of length `rows`.
    q: Vec<Vec<f64>>,
    /// R stored by column: `r[j]` holds entries `0..=j` of column j.
    r: Vec<Vec<f64>>,
    /// Caller-side labels of the columns currently held.
    labels: Vec<usize>,
}

impl IncrementalQr {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            q: Vec::new(),
            r: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clear(&mut self) {
        self.q.clear();
        self.r.clear();
        self.labels.clear();
    }

    fn max_rdiag(&self) -> f64 {
        self.r
            .iter()
            .enumerate()
            .fold(0.0_f64, |m, (j, c)| m.max(c[j].abs()))
    }

    /// Appends `column` under `label`. Leaves the factorisation untouched and
    /// returns `RankDeficient` if the column is numerically in the span of
    /// the current ones.
    pub fn push(&mut self, label: usize, column: &[f64]) -> Result<(), LinalgError> {
        if column.len() != self.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "column has {} entries, expected {}",
                column.len(),
                self.rows
            )));
        }
        if self.len() >= self.rows {
            return Err(LinalgError::RankDeficient {
                smallest: 0.0,
                largest: self.max_rdiag(),
            });
        }
        let original = norm2(column);
        let mut w = column.to_vec();
        let mut coeffs = vec![0.0; self.len()];
        for _ in 0..2 {
            for (c, qj) in coeffs.iter_mut().zip(&self.q) {
                let s = dot(qj, &w);
                *c += s;
                for (wi, qi) in w.iter_mut().zip(qj) {
                    *wi -= s * qi;
                }
            }
        }
        let rho = norm2(&w);
        let largest = self.max_rdiag().max(original);
        if rho == 0.0 || rho < RANK_TOLERANCE * largest || rho < 1e-10 * original {
            return Err(LinalgError::RankDeficient {
                smallest: rho,
                largest,
            });
        }
        w.iter_mut().for_each(|x| *x /= rho);
        coeffs.push(rho);
        self.q.push(w);
        self.r.push(coeffs);
        self.labels.push(label);
        Ok(())
    }

    /// Removes the column carrying `label`; returns false if absent.
    pub fn remove(&mut self, label: usize) -> bool {
        let Some(pos) = self.labels.iter().position(|l| *l == label) else {
            return false;
        };
        self.labels.remove(pos);
        self.r.remove(pos);
        // columns pos.. now have one sub-diagonal entry at row j+1 (their
        // original index); zero it with a rotation of rows (j, j+1).
        for j in pos..self.r.len() {
            let a = self.r[j][j];
            let b = self.r[j][j + 1];
            let h = a.hypot(b);
            let (c, s) = if h == 0.0 { (1.0, 0.0) } else { (a / h, b / h) };
            for col in self.r[j..].iter_mut() {
                let (x, y) = (col[j], col[j + 1]);
                col[j] = c * x + s * y;
                col[j + 1] = -s * x + c * y;
            }
            self.r[j].truncate(j + 1);
            let (left, right) = self.q.split_at_mut(j + 1);
            for (x, y) in left[j].iter_mut().zip(right[0].iter_mut()) {
                let (qx, qy) = (*x, *y);
                *x = c * qx + s * qy;
                *y = -s * qx + c * qy;
            }
        }
        self.q.pop();
        true
    }

    /// Coefficients of the least-squares fit of `b`, in label order, and the
    /// fitted values `Q Qᵀ b`.
    pub fn least_squares(&self, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.len();
        let qtb: Vec<f64> = self.q.iter().map(|qj| dot(qj, b)).collect();
        let mut fitted = vec![0.0; self.rows];
        for (qj, c) in self.q.iter().zip(&qtb) {
            for (f, qi) in fitted.iter_mut().zip(qj) {
                *f += c * qi;
            }
        }
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = qtb[i];
            for j in i + 1..k {
                s -= self.r[j][i] * x[j];
            }
            x[i] = s / self.r[i][i];
        }
        (x, fitted)
    }

    /// Solves `(AᵀA) x = s` using `R` only.
    pub fn solve_normal(&self, s: &[f64]) -> Vec<f64> {
        let k = self.len();
        // Rᵀ y = s
        let mut y = vec![0.0; k];
        for i in 0..k {
            let mut acc = s[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                acc -= self.r[i][j] * yj;
            }
            y[i] = acc / self.r[i][i];
        }
        // R x = y
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = y[i];
            for j in i + 1..k {
                acc -= self.r[j][i] * x[j];
            }
            x[i] = acc / self.r[i][i];
        }
        x
    }

    pub fn hat_diagonal(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.rows];
        for qj in &self.q {
            for (hi, qi) in h.iter_mut().zip(qj) {
                *hi += qi * qi;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(rows, cols, data).unwrap()
    }

    /// Normal-equation oracle via Gauss-Jordan on AᵀA.
    fn normal_equations(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
        let g = a.gram();
        let rhs = a.tr_mul_vec(b);
        let n = g.cols();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = g.row(i).to_vec();
                r.push(rhs[i]);
                r
            })
            .collect();
        for c in 0..n {
            let piv = (c..n)
                .max_by(|x, y| aug[*x][c].abs().total_cmp(&aug[*y][c].abs()))
                .unwrap();
            aug.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = aug[r][c] / aug[c][c];
                    for k in c..=n {
                        aug[r][k] -= f * aug[c][k];
                    }
                }
            }
        }
        (0..n).map(|i| aug[i][n] / aug[i][i]).collect()
    }

    #[test]
    fn identity_solve() {
        let x = solve_least_squares(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ones_column_gives_mean() {
        let a = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let x = solve_least_squares(&a, &[1.0, 3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn random_solve_matches_normal_equations() {
        let a = random_matrix(6, 3, 7);
        let b = [0.3, -1.2, 0.8, 2.0, -0.1, 0.5];
        let x = solve_least_squares(&a, &b).unwrap();
        let oracle = normal_equations(&a, &b);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn hat_of_identity_and_constants() {
        let h = hat_diagonal(&DenseMatrix::identity(4)).unwrap();
        assert!(h.iter().all(|x| (x - 1.0).abs() < 1e-15));
        let ones = DenseMatrix::from_rows(&vec![vec![1.0]; 4]).unwrap();
        let h = hat_diagonal(&ones).unwrap();
        assert!(h.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn hat_matches_explicit_projector() {
        let a = random_matrix(8, 3, 11);
        let h = hat_diagonal(&a).unwrap();
        // explicit A (AᵀA)⁻¹ Aᵀ, column by column through the oracle
        for q in 0..8 {
            let mut e = vec![0.0; 8];
            e[q] = 1.0;
            let coef = normal_equations(&a, &e);
            let proj = a.mul_vec(&coef);
            assert!((proj[q] - h[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_detected() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(matches!(
            solve_least_squares(&a, &[1.0, 1.0, 1.0]),
            Err(LinalgError::RankDeficient { .. })
        ));
        assert!(hat_diagonal(&a).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(DenseVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_row_major(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn incremental_qr_tracks_fresh_factorisation() {
        let a = random_matrix(12, 6, 3);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut inc = IncrementalQr::new(12);
        for j in [0, 3, 1, 5, 2] {
            inc.push(j, &a.column(j)).unwrap();
        }
        assert!(inc.remove(3));
        assert!(inc.remove(0));
        inc.push(4, &a.column(4)).unwrap();
        let labels = inc.labels().to_vec();
        assert_eq!(labels, vec![1, 5, 2, 4]);
        let sub = a.select_columns(&labels);
        let (x, _) = inc.least_squares(&b);
        let fresh = solve_least_squares(&sub, &b).unwrap();
        for (u, v) in x.iter().zip(fresh.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        let h = inc.hat_diagonal();
        let h2 = hat_diagonal(&sub).unwrap();
        for (u, v) in h.iter().zip(h2.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        let s = [1.0, -1.0, 1.0, 1.0];
        let d = inc.solve_normal(&s);
        let g = sub.gram();
        let back = g.mul_vec(&d);
        for (u, v) in back.iter().zip(s) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn incremental_qr_rejects_dependent_column() {
        let a = random_matrix(5, 2, 1);
        let mut inc = IncrementalQr::new(5);
        inc.push(0, &a.column(0)).unwrap();
        let doubled: Vec<f64> = a.column(0).iter().map(|x| 2.0 * x).collect();
        assert!(inc.push(1, &doubled).is_err());
        assert_eq!(inc.len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn residual_orthogonal_and_hat_trace(seed in 0u64..500, rows in 4usize..15, cols in 1usize..4) {
                let a = random_matrix(rows, cols, seed);
                let b: Vec<f64> = random_matrix(rows, 1, seed + 9999).column(0);
                let x = solve_least_squares(&a, &b).unwrap();
                let fit = a.mul_vec(&x);
                let resid: Vec<f64> = b.iter().zip(&fit).map(|(u, v)| u - v).collect();
                let g = a.tr_mul_vec(&resid);
                let scale = norm2(&b) * a.max_abs() * (rows as f64);
                prop_assert!(g.iter().all(|v| v.abs() <= 1e-9 * scale.max(1.0)));
                let h = hat_diagonal(&a).unwrap();
                prop_assert!(h.iter().all(|v| *v >= -1e-12 && *v <= 1.0 + 1e-12));
                let tr: f64 = h.iter().sum();
                prop_assert!((tr - cols as f64).abs() < 1e-9);
            }
        }
    }
}
