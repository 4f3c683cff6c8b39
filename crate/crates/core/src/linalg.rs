//! Dense row-major matrices and the handful of operations the networks and
//! the curvature code need.
//!
//! Vectorization is column-stacking throughout: `vec(M)` lists the first
//! column, then the second, and so on. Under that convention
//! `vec(B · V · Aᵀ) = (A ⊗ B) · vec(V)`, which is what lets a Kronecker
//! factored curvature block `A ⊗ G` act on a layer gradient `V` as
//! `G⁻¹ · V · A⁻¹`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// A single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol * scale))
    }

    /// Replaces the matrix with `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn scaled(&self, k: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(k);
        m
    }

    /// `self ← self + k · other`
    pub fn axpy(&mut self, k: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += k * b);
        Ok(())
    }

    pub fn add_diag(&mut self, k: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += k;
        }
    }

    /// Appends a constant column to the right, e.g. the homogeneous bias
    /// coordinate.
    pub fn with_constant_column(&self, value: f64) -> Matrix {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.push(value);
        }
        Matrix { rows: self.rows, cols, data }
    }

    /// Copies columns `start..end`.
    pub fn col_range(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix { rows: self.rows, cols: end - start, data }
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::shape("hcat of matrices with differing row counts"));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }
}

fn gemm(a: &Matrix, a_t: bool, b: &Matrix, b_t: bool) -> Result<Matrix> {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(Error::shape(format!(
            "product of {m}x{k} and {k2}x{n} operands"
        )));
    }
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    let (rsa, csa) = if a_t { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if b_t { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the owned buffers exactly: `a` is viewed as
    // m×k, `b` as k×n and `out` as m×n, all within their allocations.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, false, b, false)
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, true, b, false)
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, false, b, true)
}

/// Inverse of `m + jitter·I` for a symmetric positive definite `m`, via a
/// Cholesky factorization. Fails with a curvature error when the jittered
/// matrix is not numerically positive definite.
pub fn sym_inverse(m: &Matrix, jitter: f64) -> Result<Matrix> {
    if m.rows != m.cols {
        return Err(Error::shape(format!("cannot invert a {}x{} matrix", m.rows, m.cols)));
    }
    if !m.is_finite() || !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::curvature(None, "non-finite matrix or invalid jitter"));
    }
    if !m.is_symmetric(1e-10) {
        return Err(Error::shape("sym_inverse requires a symmetric matrix"));
    }
    let n = m.rows;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m.get(j, j) + jitter;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::curvature(
                None,
                format!("matrix is not positive definite (pivot {j} = {d:e})"),
            ));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    // L⁻¹ by forward substitution, lower triangular.
    let mut linv = vec![0.0; n * n];
    for j in 0..n {
        linv[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = s / l[i * n + i];
        }
    }
    // (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹
    let linv = Matrix { rows: n, cols: n, data: linv };
    let mut inv = matmul_tn(&linv, &linv)?;
    inv.symmetrize();
    if !inv.is_finite() {
        return Err(Error::curvature(None, "inverse is not finite"));
    }
    Ok(inv)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    Matrix::from_fn(rows, cols, |r, c| {
        a.get(r / b.rows, c / b.cols) * b.get(r % b.rows, c % b.cols)
    })
}

/// Column-stacking vectorization into a `(rows·cols) × 1` matrix.
pub fn vec(m: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(m.data.len());
    for c in 0..m.cols {
        for r in 0..m.rows {
            data.push(m.get(r, c));
        }
    }
    Matrix { rows: m.data.len(), cols: 1, data }
}

/// Inverse of [`vec`].
pub fn unvec(v: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
    if v.data.len() != rows * cols {
        return Err(Error::shape(format!(
            "cannot unvec {} values into {rows}x{cols}",
            v.data.len()
        )));
    }
    Ok(Matrix::from_fn(rows, cols, |r, c| v.data[c * rows + r]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(n: usize, rng: &mut impl Rng) -> Matrix {
        let x = random(n + 3, n, rng);
        let mut m = matmul_tn(&x, &x).unwrap();
        m.add_diag(0.1);
        m
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        let v = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let p = matmul(&m, &v).unwrap();
        assert_eq!(p.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let fast = matmul(&a, &b).unwrap();
        assert!(fast.max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        assert!(tn.max_abs_diff(&fast) <= 1e-12);
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        assert!(nt.max_abs_diff(&fast) <= 1e-12);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn sym_inverse_simple_cases() {
        let i3 = Matrix::identity(3);
        assert!(sym_inverse(&i3, 0.0).unwrap().max_abs_diff(&i3) < 1e-15);
        let d = Matrix::from_diag(&[2.0, 4.0]);
        let inv = sym_inverse(&d, 0.0).unwrap();
        assert!(inv.max_abs_diff(&Matrix::from_diag(&[0.5, 0.25])) < 1e-15);
    }

    #[test]
    fn sym_inverse_multiply_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_spd(6, &mut rng);
        let inv = sym_inverse(&m, 0.0).unwrap();
        let prod = matmul(&m, &inv).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(6)) <= 1e-8);
        assert!(inv.is_symmetric(1e-10));
    }

    #[test]
    fn sym_inverse_rejects_indefinite() {
        let m = Matrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(sym_inverse(&m, 0.0), Err(Error::Curvature { .. })));
        // jitter rescues it
        assert!(sym_inverse(&m, 2.0).is_ok());
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(sym_inverse(&asym, 0.0).is_err());
    }

    #[test]
    fn kron_definitions() {
        assert_eq!(kron(&Matrix::identity(2), &Matrix::identity(2)), Matrix::identity(4));
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        let k = kron(&a, &b);
        assert_eq!(k, Matrix::from_rows(&[[3.0, 6.0], [4.0, 8.0]]).unwrap());
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(3, 2, &mut rng);
        let b = random(2, 4, &mut rng);
        let x = random(2, 1, &mut rng);
        let y = random(4, 1, &mut rng);
        let lhs = matmul(&kron(&a, &b), &kron(&x, &y)).unwrap();
        let rhs = kron(&matmul(&a, &x).unwrap(), &matmul(&b, &y).unwrap());
        assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }

    #[test]
    fn vec_is_column_stacking() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(vec(&m).data(), &[1.0, 3.0, 2.0, 4.0]);
        assert!(unvec(&Matrix::zeros(5, 1), 2, 3).is_err());
    }

    #[test]
    fn kronecker_vec_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            // V is 2x3, B is 2x2, A is 3x3
            let v = random(2, 3, &mut rng);
            let b = random(2, 2, &mut rng);
            let a = random(3, 3, &mut rng);
            let lhs = vec(&matmul_nt(&matmul(&b, &v).unwrap(), &a).unwrap());
            let rhs = matmul(&kron(&a, &b), &vec(&v)).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
        }
    }

    proptest! {
        #[test]
        fn unvec_inverts_vec(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random(rows, cols, &mut rng);
            prop_assert_eq!(unvec(&vec(&m), rows, cols).unwrap(), m);
        }

        #[test]
        fn matmul_is_associative(n in 1usize..8, k in 1usize..8, p in 1usize..8, q in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(n, k, &mut rng);
            let b = random(k, p, &mut rng);
            let c = random(p, q, &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(left.max_abs_diff(&right) <= 1e-9 * scale);
        }

        #[test]
        fn jittered_inverse_multiplies_back(n in 1usize..=32, jitter in 0.0f64..2.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_spd(n, &mut rng);
            let inv = sym_inverse(&m, jitter).unwrap();
            let mut damped = m.clone();
            damped.add_diag(jitter);
            let prod = matmul(&inv, &damped).unwrap();
            prop_assert!(prod.max_abs_diff(&Matrix::identity(n)) <= 1e-8);
        }
    }
}
