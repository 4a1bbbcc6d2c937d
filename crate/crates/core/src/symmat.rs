//! Dense matrix algebra for the small (dim < 10) matrices that appear in
//! the analysis: the closed-loop system, Lyapunov/Gram matrices and the
//! bordered matrices used for membership tests.
//!
//! Semidefiniteness is decided from the smallest eigenvalue computed with
//! cyclic Jacobi rotations, which is accurate to roughly `eps * ||S||` for
//! symmetric input. Cholesky is kept separately; it is used for sampling
//! and for the compiled membership tests, and serves as an independent
//! witness of definiteness in tests.

use std::fmt;
use std::ops::Index;

use thiserror::Error;

/// Relative pivot size below which an elimination step is declared singular.
const SINGULAR_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("singular matrix: pivot {index} has magnitude {magnitude:.3e}")]
    Singular { index: usize, magnitude: f64 },
    #[error("matrix is not positive definite (pivot {index})")]
    NotPositiveDefinite { index: usize },
    #[error("invalid matrix: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, AlgebraError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AlgebraError::Invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(AlgebraError::Invalid(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(AlgebraError::Invalid("ragged rows".into()));
        }
        Matrix::new(
            r,
            c,
            rows.iter().flat_map(|row| row.iter().copied()).collect(),
        )
    }

    pub fn column(v: &[f64]) -> Self {
        Matrix::new(v.len(), 1, v.to_vec()).expect("column vector must be nonempty")
    }

    pub fn row(v: &[f64]) -> Self {
        Matrix::new(1, v.len(), v.to_vec()).expect("row vector must be nonempty")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row_slice(i).to_vec()).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(AlgebraError::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(AlgebraError::Dimension {
                op: "mul_vec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row_slice(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(AlgebraError::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// Concatenates blocks left to right.
    pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let first = blocks
            .first()
            .ok_or_else(|| AlgebraError::Invalid("hstack of nothing".into()))?;
        let rows = first.rows;
        let mut cols = 0;
        for b in blocks {
            if b.rows != rows {
                return Err(AlgebraError::Dimension {
                    op: "hstack",
                    left: first.shape(),
                    right: b.shape(),
                });
            }
            cols += b.cols;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            out.set_block(0, off, b);
            off += b.cols;
        }
        Ok(out)
    }

    /// Concatenates blocks top to bottom.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let first = blocks
            .first()
            .ok_or_else(|| AlgebraError::Invalid("vstack of nothing".into()))?;
        let cols = first.cols;
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(AlgebraError::Dimension {
                    op: "vstack",
                    left: first.shape(),
                    right: b.shape(),
                });
            }
            rows += b.rows;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            out.set_block(off, 0, b);
            off += b.rows;
        }
        Ok(out)
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.set(r0 + i, c0 + j, block.get(i, j));
            }
        }
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Solves `self * X = rhs` by LU factorization with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if !self.is_square() || rhs.rows != self.rows {
            return Err(AlgebraError::Dimension {
                op: "solve",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let lu = Lu::factor(self)?;
        Ok(lu.solve(rhs))
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.solve(&Matrix::identity(self.rows))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = f.precision().unwrap_or(4);
        let cells: Vec<String> = self.data.iter().map(|v| format!("{v:.prec$}")).collect();
        let width = cells.iter().map(String::len).max().unwrap_or(0);
        for i in 0..self.rows {
            write!(f, "[")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, "  ")?;
                }
                write!(f, "{:>width$}", cells[i * self.cols + j])?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}

struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(m: &Matrix) -> Result<Lu> {
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, big) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if big <= SINGULAR_RTOL * scale {
                return Err(AlgebraError::Singular {
                    index: k,
                    magnitude: big,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    fn solve(&self, rhs: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n, rhs.cols);
        let mut col = vec![0.0; n];
        for c in 0..rhs.cols {
            for i in 0..n {
                col[i] = rhs.get(self.perm[i], c);
            }
            for i in 0..n {
                let mut s = col[i];
                for j in 0..i {
                    s -= self.lu[i * n + j] * col[j];
                }
                col[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for j in i + 1..n {
                    s -= self.lu[i * n + j] * col[j];
                }
                col[i] = s / self.lu[i * n + i];
            }
            for i in 0..n {
                out.set(i, c, col[i]);
            }
        }
        out
    }
}

/// Square matrix that is exactly symmetric (`a[i][j] == a[j][i]` bit for bit).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Builds a symmetric matrix from row-major data, replacing it by
    /// `(M + Mᵀ)/2`.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_matrix(&Matrix::new(dim, dim, data)?)
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(AlgebraError::Dimension {
                op: "symmetric",
                left: m.shape(),
                right: (m.cols, m.rows),
            });
        }
        let n = m.rows;
        let mut s = m.clone();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (m.get(i, j) + m.get(j, i));
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        Ok(SymMatrix(s))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_matrix(&Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        SymMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, k: f64) -> SymMatrix {
        SymMatrix(self.0.scale(k))
    }

    pub fn neg(&self) -> SymMatrix {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        Ok(SymMatrix(self.0.add(&other.0)?))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        Ok(SymMatrix(self.0.sub(&other.0)?))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn frobenius_distance(&self, other: &SymMatrix) -> Result<f64> {
        Ok(self.0.sub(&other.0)?.frobenius_norm())
    }

    /// `xᵀ S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        let mut acc = 0.0;
        for i in 0..n {
            let row = self.0.row_slice(i);
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * x[j];
            }
            acc += x[i] * s;
        }
        acc
    }

    pub fn principal_submatrix(&self, keep: &[usize]) -> Result<SymMatrix> {
        if keep.is_empty() {
            return Err(AlgebraError::Invalid("empty principal submatrix".into()));
        }
        Ok(SymMatrix(self.0.select(keep, keep)))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        jacobi(self, false).0
    }

    /// Eigenvalues (ascending) with the matching unit eigenvectors as columns.
    pub fn eigen(&self) -> (Vec<f64>, Matrix) {
        let (vals, vecs) = jacobi(self, true);
        (vals, vecs.expect("eigenvectors requested"))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("dim >= 1")
    }

    /// Lower-triangular `L` with `S = L Lᵀ`.
    pub fn cholesky(&self) -> Result<Matrix> {
        let n = self.dim();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d.is_nan() || d <= 0.0 {
                return Err(AlgebraError::NotPositiveDefinite { index: j });
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(l)
    }

    pub fn inverse(&self) -> Result<SymMatrix> {
        inverse(self)
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl fmt::Display for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

fn jacobi(s: &SymMatrix, want_vectors: bool) -> (Vec<f64>, Option<Matrix>) {
    let n = s.dim();
    let mut a = s.0.data.clone();
    let mut v = want_vectors.then(|| Matrix::identity(n));
    let norm = s.frobenius_norm();
    if norm > 0.0 && n > 1 {
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum();
            if off.sqrt() <= f64::EPSILON * 1e-2 * norm {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - sn * akq;
                        a[k * n + q] = sn * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - sn * aqk;
                        a[q * n + k] = sn * apk + c * aqk;
                    }
                    if let Some(v) = v.as_mut() {
                        for k in 0..n {
                            let vkp = v.get(k, p);
                            let vkq = v.get(k, q);
                            v.set(k, p, c * vkp - sn * vkq);
                            v.set(k, q, sn * vkp + c * vkq);
                        }
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let vecs = v.map(|v| v.select(&(0..n).collect::<Vec<_>>(), &order));
    (vals, vecs)
}

/// `M S Mᵀ`, symmetrized.
pub fn congruence(m: &Matrix, s: &SymMatrix) -> Result<SymMatrix> {
    if m.cols() != s.dim() {
        return Err(AlgebraError::Dimension {
            op: "congruence",
            left: m.shape(),
            right: (s.dim(), s.dim()),
        });
    }
    let ms = m.matmul(s.as_matrix())?;
    SymMatrix::from_matrix(&ms.matmul(&m.transpose())?)
}

/// True iff the smallest eigenvalue of `s` is at least `-tol`.
pub fn is_psd(s: &SymMatrix, tol: f64) -> bool {
    s.min_eigenvalue() >= -tol
}

/// True iff the largest eigenvalue of `s` is at most `tol`.
pub fn is_nsd(s: &SymMatrix, tol: f64) -> bool {
    is_psd(&s.neg(), tol)
}

pub fn inverse(s: &SymMatrix) -> Result<SymMatrix> {
    SymMatrix::from_matrix(&s.as_matrix().inverse()?)
}

/// Eliminates the rows/columns in `eliminate`, returning
/// `S₁₁ − S₁₂ S₂₂⁻¹ S₂₁` over the remaining indices (kept in order).
pub fn schur_complement(s: &SymMatrix, eliminate: &[usize]) -> Result<SymMatrix> {
    let n = s.dim();
    if let Some(&bad) = eliminate.iter().find(|&&i| i >= n) {
        return Err(AlgebraError::Invalid(format!(
            "index {bad} out of range for dimension {n}"
        )));
    }
    let keep: Vec<usize> = (0..n).filter(|i| !eliminate.contains(i)).collect();
    if keep.is_empty() {
        return Err(AlgebraError::Invalid(
            "schur complement eliminates every index".into(),
        ));
    }
    if eliminate.is_empty() {
        return Ok(s.clone());
    }
    let m = s.as_matrix();
    let s22 = m.select(eliminate, eliminate);
    let s21 = m.select(eliminate, &keep);
    let s12 = m.select(&keep, eliminate);
    let s11 = m.select(&keep, &keep);
    let x = s22.solve(&s21)?;
    SymMatrix::from_matrix(&s11.sub(&s12.matmul(&x)?)?)
}

/// Largest `|a[i][j] − a[j][i]|` over a square array. Returns infinity for
/// ragged or non-square input.
pub fn max_abs_asym(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[i][j] - a[j][i]).abs());
        }
    }
    worst
}
