//! Dense row-major matrices and the handful of kernels the solver needs.
//!
//! Every reduction here runs sequentially in a fixed order, so results are
//! reproducible bit-for-bit across runs and thread counts.

use std::fmt;

use crate::error::{PruneError, Result};

/// Dense 2-D array of finite `f64` values stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes,
    /// length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(PruneError::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(PruneError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PruneError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for internal kernels whose inputs are already
    /// validated. Finiteness is not enforced here; the solver checks its
    /// iterates explicitly.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(PruneError::Shape(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    /// # Panics
    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// # Panics
    /// Panics on out-of-range indices or a non-finite value.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "matrix entries must be finite");
        assert!(row < self.rows && col < self.cols, "index out of range");
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.ensure_same_shape(other, "subtract")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entrywise l1 norm, i.e. the sum of the row-wise l1 norms.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub(crate) fn ensure_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(PruneError::Shape(format!(
                "cannot {what} {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Standard product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(PruneError::Shape(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for (i, out_row) in out.chunks_mut(b.cols).enumerate() {
        matmul_row(a.row(i), b, out_row);
    }
    Ok(Matrix::from_raw(a.rows, b.cols, out))
}

/// One output row of `a · b`, given the corresponding row of `a`.
/// Accumulates in i-k-j order.
pub(crate) fn matmul_row(a_row: &[f64], b: &Matrix, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (k, &aik) in a_row.iter().enumerate() {
        if aik == 0.0 {
            continue;
        }
        for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
            *o += aik * bkj;
        }
    }
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(PruneError::Shape(format!(
            "matmul_nt: {}x{} times ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            out.push(dot(ai, b.row(j)));
        }
    }
    Ok(Matrix::from_raw(a.rows, b.rows, out))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F` without allocating the difference.
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.ensure_same_shape(b, "compare")?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

pub const DEFAULT_POWER_TOL: f64 = 1e-6;
pub const DEFAULT_POWER_MAX_ITERS: usize = 1000;

/// Result of the power iteration behind [`lipschitz_constant`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the Rayleigh quotient settled.
    pub converged: bool,
}

/// Largest eigenvalue of `X* (X*)ᵀ`, the gradient Lipschitz constant of the
/// reconstruction term.
///
/// Runs power iteration on whichever Gram matrix (`X* X*ᵀ` or `X*ᵀ X*`) is
/// smaller; both share the nonzero spectrum. Stops once the Rayleigh quotient
/// changes by less than `tol` relative.
pub fn lipschitz_constant(xstar: &Matrix, tol: f64, max_iters: usize) -> Result<LipschitzEstimate> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(PruneError::Parameter(format!(
            "power iteration tolerance must be positive, got {tol}"
        )));
    }
    if xstar.data.iter().all(|&v| v == 0.0) {
        return Ok(LipschitzEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let gram = if xstar.rows <= xstar.cols {
        matmul_nt(xstar, xstar)?
    } else {
        let xt = xstar.transpose();
        matmul_nt(&xt, &xt)?
    };
    Ok(power_iteration(&gram, tol, max_iters))
}

fn power_iteration(gram: &Matrix, tol: f64, max_iters: usize) -> LipschitzEstimate {
    let n = gram.rows;
    // all-ones plus a small index-dependent tilt, so the start vector is not
    // orthogonal to the dominant eigenvector for symmetric sign patterns
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 1e-3 * ((i * 7919 % 101) as f64 / 101.0 - 0.5))
        .collect();
    normalize(&mut v);

    let mut w = vec![0.0; n];
    let mut estimate = 0.0_f64;
    let mut prev = f64::NAN;
    for iter in 1..=max_iters {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = dot(gram.row(i), &v);
        }
        let rayleigh = dot(&v, &w);
        estimate = estimate.max(rayleigh);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return LipschitzEstimate {
                value: estimate.max(0.0),
                iterations: iter,
                converged: true,
            };
        }
        if (rayleigh - prev).abs() <= tol * rayleigh.abs() {
            return LipschitzEstimate {
                value: estimate,
                iterations: iter,
                converged: true,
            };
        }
        prev = rayleigh;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    log::warn!("power iteration did not converge in {max_iters} iterations; L ≈ {estimate:e}");
    LipschitzEstimate {
        value: estimate,
        iterations: max_iters,
        converged: false,
    }
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Scalar soft-thresholding: shrink `x` toward zero by `rho`.
#[inline]
pub fn shrink(x: f64, rho: f64) -> f64 {
    if x > rho {
        x - rho
    } else if x < -rho {
        x + rho
    } else {
        0.0
    }
}

/// Elementwise proximal operator of `rho · ‖·‖₁`.
pub fn soft_shrinkage(a: &Matrix, rho: f64) -> Result<Matrix> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(PruneError::Parameter(format!(
            "shrinkage threshold must be a finite non-negative number, got {rho}"
        )));
    }
    Ok(a.map(|x| shrink(x, rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    /// Cyclic Jacobi eigenvalue sweep for symmetric matrices.
    fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[i][i]).collect()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);

        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[3.0], [7.0]]).unwrap());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(5, 7, 1);
        let b = random(7, 3, 2);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        for (x, y) in nt.data().iter().zip(c.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&random(2, 3, 0), &random(2, 3, 1)).unwrap_err();
        assert!(matches!(err, PruneError::Shape(_)));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Matrix::new(0, 3, vec![]), Err(PruneError::Shape(_))));
        assert!(matches!(Matrix::new(2, 2, vec![1.0; 3]), Err(PruneError::Shape(_))));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(PruneError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()), 5.0);
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        let a = random(4, 4, 9);
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                s += a.get(i, j).powi(2);
            }
        }
        assert!((frobenius_norm(&a) - s.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_simple_cases() {
        let l = lipschitz_constant(&Matrix::identity(3), 1e-12, 1000).unwrap();
        assert!((l.value - 1.0).abs() < 1e-12);
        let d = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let l = lipschitz_constant(&d, 1e-14, 1000).unwrap();
        assert!((l.value - 4.0).abs() < 1e-9, "{l:?}");
        let z = lipschitz_constant(&Matrix::zeros(3, 5), 1e-6, 10).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.converged);
    }

    #[test]
    fn lipschitz_matches_jacobi() {
        for seed in 0..5 {
            let x = random(6, 10, 100 + seed);
            let gram = matmul_nt(&x, &x).unwrap();
            let expected = jacobi_eigenvalues(&gram)
                .into_iter()
                .fold(f64::MIN, f64::max);
            let l = lipschitz_constant(&x, 1e-15, 100_000).unwrap();
            assert!(
                (l.value - expected).abs() <= 1e-8 * expected,
                "seed {seed}: {} vs {expected}",
                l.value
            );
            // tall input goes through the smaller Gram
            let lt = lipschitz_constant(&x.transpose(), 1e-15, 100_000).unwrap();
            assert!((lt.value - expected).abs() <= 1e-8 * expected);
        }
    }

    #[test]
    fn lipschitz_rejects_bad_tol() {
        assert!(matches!(
            lipschitz_constant(&Matrix::identity(2), 0.0, 10),
            Err(PruneError::Parameter(_))
        ));
    }

    #[test]
    fn lipschitz_reports_non_convergence() {
        let x = random(8, 8, 3);
        let l = lipschitz_constant(&x, 1e-15, 2).unwrap();
        assert!(!l.converged);
        assert_eq!(l.iterations, 2);
        assert!(l.value > 0.0);
    }

    #[test]
    fn soft_shrinkage_examples() {
        let a = Matrix::from_rows(&[[2.5, -0.5, -3.0]]).unwrap();
        let s = soft_shrinkage(&a, 1.0).unwrap();
        assert_eq!(s.data(), &[1.5, 0.0, -2.0]);
        assert_eq!(soft_shrinkage(&a, 0.0).unwrap(), a);
        assert!(matches!(soft_shrinkage(&a, -1.0), Err(PruneError::Parameter(_))));

        let r = random(8, 8, 4);
        let s = soft_shrinkage(&r, 0.3).unwrap();
        for (x, y) in r.data().iter().zip(s.data()) {
            assert_eq!(y.abs(), (x.abs() - 0.3).max(0.0));
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |d| Matrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn shrinkage_keeps_sign_and_never_grows(a in matrix_strategy(), rho in 0.0f64..5.0) {
            let s = soft_shrinkage(&a, rho).unwrap();
            for (x, y) in a.data().iter().zip(s.data()) {
                prop_assert!(y.abs() <= x.abs());
                if *y != 0.0 {
                    prop_assert_eq!(y.signum(), x.signum());
                }
            }
            prop_assert_eq!(soft_shrinkage(&a, 0.0).unwrap(), a);
        }

        #[test]
        fn lipschitz_dominates_rayleigh_probe(
            a in matrix_strategy(),
            probe in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let tol = 1e-6;
            let l = lipschitz_constant(&a, tol, 1000).unwrap().value;
            let v = &probe[..a.rows()];
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            prop_assume!(vnorm2 > 1e-6);
            // ‖X*ᵀ v‖² / ‖v‖² is a Rayleigh quotient of X* X*ᵀ
            let xtv: f64 = (0..a.cols())
                .map(|j| (0..a.rows()).map(|i| a.get(i, j) * v[i]).sum::<f64>().powi(2))
                .sum();
            prop_assert!(l >= xtv / vnorm2 - tol * l - 1e-12);
        }

        #[test]
        fn frobenius_rotation_invariant(
            data in (1usize..6).prop_flat_map(|c| prop::collection::vec(-10.0f64..10.0, 2 * c)),
            theta in 0.0f64..6.3,
        ) {
            let a = Matrix::new(2, data.len() / 2, data).unwrap();
            let (s, c) = theta.sin_cos();
            let q = Matrix::from_rows(&[[c, -s], [s, c]]).unwrap();
            let qa = matmul(&q, &a).unwrap();
            prop_assert!((frobenius_norm(&qa) - frobenius_norm(&a)).abs() <= 1e-10);
        }
    }
}
