//! Dense row-major matrices and the small linear-algebra kernel the rest of
//! the crate is built on: products, SPD solves and spectral radius.
//!
//! Every reduction in this module uses a fixed summation order, so results
//! are bit-reproducible for a given input regardless of how callers batch or
//! parallelize their work.

use std::fmt;

use crate::error::{Error, Result};

/// Default relative tolerance for [`spectral_radius`].
pub const DEFAULT_RADIUS_TOL: f64 = 1e-6;

/// Relative asymmetry accepted by [`solve_spd`].
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
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

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::from_vec"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                format!("row length {cols}"),
                format!("row length {}", bad.len()),
            ));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Internal constructor for kernels that already guarantee the invariants.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
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

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "Matrix::add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "Matrix::sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix::from_raw(self.rows, w, data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Vector::from_vec"));
        }
        Ok(Vector { data })
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Four dot products sharing `a`; each output is bit-identical to [`dot`].
#[inline]
fn dot4(a: &[f64], b: [&[f64]; 4]) -> [f64; 4] {
    let n = a.len();
    let full = n - n % 4;
    let mut acc = [[0.0f64; 4]; 4];
    let mut t = 0;
    while t < full {
        let x = &a[t..t + 4];
        for (k, bk) in b.iter().enumerate() {
            let y = &bk[t..t + 4];
            for l in 0..4 {
                acc[k][l] += x[l] * y[l];
            }
        }
        t += 4;
    }
    let mut out = [0.0; 4];
    for k in 0..4 {
        let mut s = (acc[k][0] + acc[k][1]) + (acc[k][2] + acc[k][3]);
        for t in full..n {
            s += a[t] * b[k][t];
        }
        out[k] = s;
    }
    out
}

/// `gram += X·Xᵀ` for row-major `x` (n × t); `gram` stays exactly symmetric.
pub(crate) fn add_gram(gram: &mut Matrix, x: &Matrix) {
    let n = x.rows();
    debug_assert_eq!(gram.shape(), (n, n));
    for i in 0..n {
        let ri = x.row(i);
        let mut k = i;
        while k + 4 <= n {
            let d = dot4(ri, [x.row(k), x.row(k + 1), x.row(k + 2), x.row(k + 3)]);
            let g = gram.row_mut(i);
            for l in 0..4 {
                g[k + l] += d[l];
            }
            k += 4;
        }
        while k < n {
            let d = dot(ri, x.row(k));
            gram.row_mut(i)[k] += d;
            k += 1;
        }
    }
    for i in 0..n {
        for k in 0..i {
            let v = gram.get(k, i);
            gram.set(i, k, v);
        }
    }
}

/// `acc += Y·Xᵀ` for `y` (l × t) and `x` (n × t).
pub(crate) fn add_cross(acc: &mut Matrix, y: &Matrix, x: &Matrix) {
    debug_assert_eq!(acc.shape(), (y.rows(), x.rows()));
    for l in 0..y.rows() {
        let yl = y.row(l);
        for i in 0..x.rows() {
            let d = dot(yl, x.row(i));
            acc.row_mut(l)[i] += d;
        }
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape_str(), b.shape_str()));
    }
    let (n, m) = (a.rows, b.cols);
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (cj, &bkj) in crow.iter_mut().zip(b.row(k)) {
                *cj += aik * bkj;
            }
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matmul"));
    }
    Ok(Matrix::from_raw(n, m, c))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows;
    let scale = (0..n).fold(0.0f64, |s, i| s.max(m.get(i, i).abs()));
    // Pivots at rounding level relative to the diagonal mean the matrix is
    // numerically singular even if the sign happens to come out positive.
    let floor = scale * f64::EPSILON * n as f64;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.row(j)[..j];
        let d = m.get(j, j) - dot(lj, lj);
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN pivots fail too
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let s = m.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `m · S = rhs` for symmetric positive definite `m` via Cholesky.
///
/// Inputs whose asymmetry exceeds [`SYMMETRY_TOL`] relative to the largest
/// entry are rejected instead of being symmetrized.
pub fn solve_spd(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::shape("solve_spd", m.shape_str(), "square matrix"));
    }
    if rhs.rows != m.rows {
        return Err(Error::shape("solve_spd", m.shape_str(), rhs.shape_str()));
    }
    let n = m.rows;
    let tolerance = SYMMETRY_TOL * m.max_abs();
    let mut asymmetry = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asymmetry = asymmetry.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asymmetry > tolerance {
        return Err(Error::NotSymmetric { asymmetry, tolerance });
    }

    let l = cholesky(m)?;
    let k = rhs.cols;
    let mut out = Matrix::zeros(n, k);
    let mut y = vec![0.0; n];
    for c in 0..k {
        // L y = b
        for i in 0..n {
            let mut s = rhs.get(i, c);
            let li = l.row(i);
            for (j, yj) in y.iter().enumerate().take(i) {
                s -= li[j] * yj;
            }
            y[i] = s / li[i];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= l.get(j, i) * out.get(j, c);
            }
            out.set(i, c, s / l.get(i, i));
        }
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_spd"));
    }
    Ok(out)
}

/// Largest eigenvalue magnitude of a general real square matrix.
///
/// The full spectrum is computed through Hessenberg reduction and a real Schur
/// decomposition, which handles complex dominant pairs and resolves ρ to a few
/// ulps for well-conditioned spectra; `tol` only needs to be positive.
pub fn spectral_radius(m: &Matrix, tol: f64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::shape("spectral_radius", m.shape_str(), "square matrix"));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid(format!(
            "spectral radius tolerance must be positive, got {tol}"
        )));
    }
    let n = m.rows;
    match n {
        0 => return Ok(0.0),
        1 => return Ok(m.data[0].abs()),
        _ => {}
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m.data[i * n + j]);
    let eig = fm.eigenvalues().map_err(|_| Error::Convergence {
        what: "Schur eigenvalue iteration",
        iterations: n * 30,
    })?;
    let rho = eig.iter().fold(0.0f64, |r, z| r.max(z.re.hypot(z.im)));
    if !rho.is_finite() {
        return Err(Error::NonFinite("spectral_radius"));
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    /// Gaussian elimination with partial pivoting; independent of Cholesky.
    #[allow(clippy::needless_range_loop)]
    fn gauss_solve(m: &Matrix, rhs: &Matrix) -> Matrix {
        let n = m.rows();
        let k = rhs.cols();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = m.row(i).to_vec();
                r.extend_from_slice(rhs.row(i));
                r
            })
            .collect();
        for col in 0..n {
            let p = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, p);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n + k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
        let mut x = Matrix::zeros(n, k);
        for c in 0..k {
            for i in (0..n).rev() {
                let mut s = a[i][n + c];
                for j in i + 1..n {
                    s -= a[i][j] * x.get(j, c);
                }
                x.set(i, c, s / a[i][i]);
            }
        }
        x
    }

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let a = random(n, n, seed);
        matmul(&a.transpose(), &a).unwrap().add(&Matrix::identity(n)).unwrap()
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let m = random(3, 3, 1);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let a = random(7, 5, 2);
        let b = random(5, 3, 3);
        let c = matmul(&a, &b).unwrap();
        assert!(c.max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn from_vec_rejects_non_finite_and_bad_length() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn gram_and_cross_kernels_match_matmul() {
        let x = random(11, 37, 4);
        let y = random(2, 37, 5);
        let mut g = Matrix::zeros(11, 11);
        add_gram(&mut g, &x);
        assert!(g.max_abs_diff(&matmul(&x, &x.transpose()).unwrap()) < 1e-12);
        for i in 0..11 {
            for j in 0..11 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let mut c = Matrix::zeros(2, 11);
        add_cross(&mut c, &y, &x);
        assert!(c.max_abs_diff(&matmul(&y, &x.transpose()).unwrap()) < 1e-12);
    }

    #[test]
    fn solve_spd_trivial_cases() {
        let b = Matrix::from_rows(&[&[3.0], &[-1.0]]).unwrap();
        assert_eq!(solve_spd(&Matrix::identity(2), &b).unwrap(), b);
        let d = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]).unwrap();
        let r = Matrix::from_rows(&[&[2.0], &[8.0]]).unwrap();
        let x = solve_spd(&d, &r).unwrap();
        assert!((x.get(0, 0) - 1.0).abs() < 1e-15 && (x.get(1, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_spd_matches_gaussian_elimination() {
        let m = random_spd(12, 6);
        let rhs = random(12, 3, 7);
        let s = solve_spd(&m, &rhs).unwrap();
        assert!(s.max_abs_diff(&gauss_solve(&m, &rhs)) < 1e-9);
    }

    #[test]
    fn solve_spd_residual_at_600() {
        let m = random_spd(600, 8);
        let rhs = random(600, 2, 9);
        let s = solve_spd(&m, &rhs).unwrap();
        let resid = matmul(&m, &s).unwrap().max_abs_diff(&rhs);
        assert!(resid / rhs.max_abs() < 1e-8, "residual {resid}");
    }

    #[test]
    fn solve_spd_errors() {
        let r = Matrix::zeros(2, 1);
        assert!(matches!(solve_spd(&Matrix::zeros(2, 3), &r), Err(Error::Shape { .. })));
        let asym = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 2.0]]).unwrap();
        assert!(matches!(solve_spd(&asym, &r), Err(Error::NotSymmetric { .. })));
        let indef = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&indef, &r),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn spectral_radius_examples() {
        let tol = DEFAULT_RADIUS_TOL;
        assert!((spectral_radius(&Matrix::identity(3), tol).unwrap() - 1.0).abs() < tol);
        let tri = Matrix::from_rows(&[&[0.2, 5.0, -3.0], &[0.0, -0.9, 7.0], &[0.0, 0.0, 0.5]]).unwrap();
        assert!((spectral_radius(&tri, tol).unwrap() - 0.9).abs() < tol);
        let rot = Matrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]).unwrap();
        assert!((spectral_radius(&rot, tol).unwrap() - 1.0).abs() < tol);
        assert!(spectral_radius(&Matrix::zeros(2, 3), tol).is_err());
        assert!(spectral_radius(&rot, 0.0).is_err());
    }

    /// Gelfand's formula by repeated squaring, ρ = lim ‖M^(2^k)‖^(2^-k),
    /// with the log-scale tracked separately to avoid overflow.
    fn gelfand_radius(m: &Matrix, squarings: u32) -> f64 {
        let mut p = m.clone();
        let mut log_scale = 0.0f64;
        for _ in 0..squarings {
            let s = p.frobenius_norm();
            p = p.scale(1.0 / s);
            log_scale = 2.0 * (log_scale + s.ln());
            p = matmul(&p, &p).unwrap();
        }
        let total = log_scale + p.frobenius_norm().ln();
        (total / 2f64.powi(squarings as i32)).exp()
    }

    #[test]
    fn spectral_radius_matches_gelfand_oracle() {
        for seed in 0..4 {
            let m = random(40, 40, 100 + seed);
            let rho = spectral_radius(&m, DEFAULT_RADIUS_TOL).unwrap();
            let oracle = gelfand_radius(&m, 40);
            assert!((rho - oracle).abs() / oracle < 1e-6, "{rho} vs {oracle}");
        }
    }

    #[test]
    fn spectral_radius_scales_with_abs_c() {
        let m = random(30, 30, 11);
        let rho = spectral_radius(&m, DEFAULT_RADIUS_TOL).unwrap();
        for c in [-2.0, 0.5, 3.0] {
            let rc = spectral_radius(&m.scale(c), DEFAULT_RADIUS_TOL).unwrap();
            assert!((rc - c.abs() * rho).abs() <= DEFAULT_RADIUS_TOL * rc);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn matmul_is_associative(seed in any::<u64>(), n in 1usize..8, m in 1usize..8, k in 1usize..8, p in 1usize..8) {
                let a = random(n, m, seed);
                let b = random(m, k, seed ^ 1);
                let c = random(k, p, seed ^ 2);
                let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                let scale = l.max_abs().max(1.0);
                prop_assert!(l.max_abs_diff(&r) / scale < 1e-9);
            }

            #[test]
            fn triangular_radius_is_max_diagonal(seed in any::<u64>(), n in 2usize..25, upper in any::<bool>()) {
                let base = random(n, n, seed);
                let tri = Matrix::from_fn(n, n, |i, j| {
                    let keep = if upper { j >= i } else { j <= i };
                    if keep { base.get(i, j) } else { 0.0 }
                });
                let expected = (0..n).fold(0.0f64, |m, i| m.max(base.get(i, i).abs()));
                let rho = spectral_radius(&tri, DEFAULT_RADIUS_TOL).unwrap();
                prop_assert!((rho - expected).abs() <= DEFAULT_RADIUS_TOL * expected.max(1e-3));
            }

            #[test]
            fn solve_spd_small_residual(seed in any::<u64>(), n in 1usize..40, k in 1usize..4) {
                let m = random_spd(n, seed);
                let rhs = random(n, k, seed ^ 5);
                let s = solve_spd(&m, &rhs).unwrap();
                let resid = matmul(&m, &s).unwrap().max_abs_diff(&rhs);
                prop_assert!(resid / rhs.max_abs() < 1e-8);
            }
        }
    }
}
