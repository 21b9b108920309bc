//! FISTA for the l1-regularized reconstruction problem
//!
//! ```text
//! min_W*  ½‖W* X* − WX‖_F² + λ Σᵢ ‖W*ᵢ,:‖₁
//! ```
//!
//! where `WX` is the dense operator's output (the `target`) and `X*` is the
//! input actually seen by the pruned operator. Also hosts a coordinate-descent
//! LASSO solver used to certify FISTA solutions, and the KKT residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PruneError, Result};
use crate::linalg::{
    self, frobenius_distance, matmul, matmul_nt, shrink, Matrix, DEFAULT_POWER_MAX_ITERS,
    DEFAULT_POWER_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FistaSettings {
    /// Iteration budget `K`.
    pub max_iters: usize,
    /// Stop once consecutive iterates are closer than this in Frobenius norm.
    pub stop_tol: f64,
    /// Run the gradient product on one thread. Row products are reduced
    /// sequentially either way, so this only pins the thread count.
    pub deterministic: bool,
}

impl Default for FistaSettings {
    fn default() -> Self {
        Self {
            max_iters: 20,
            stop_tol: 1e-6,
            deterministic: true,
        }
    }
}

impl FistaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(PruneError::Parameter("FISTA needs at least one iteration".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(PruneError::Parameter(format!(
                "FISTA stop tolerance must be non-negative, got {}",
                self.stop_tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FistaResult {
    /// Last proximal iterate.
    pub weights: Matrix,
    pub iterations_used: usize,
    /// Objective value at each proximal iterate, one entry per iteration.
    pub objective_trace: Vec<f64>,
    pub converged_by_tol: bool,
    pub lipschitz: f64,
}

/// Momentum schedule: `t_{k+1} = (1 + √(1 + 4 t_k²)) / 2`.
pub fn next_momentum(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

fn check_shapes(wstar: &Matrix, xstar: &Matrix, target: &Matrix) -> Result<()> {
    if wstar.cols() != xstar.rows() {
        return Err(PruneError::Shape(format!(
            "weights are {}x{} but activations are {}x{}",
            wstar.rows(),
            wstar.cols(),
            xstar.rows(),
            xstar.cols()
        )));
    }
    if target.shape() != (wstar.rows(), xstar.cols()) {
        return Err(PruneError::Shape(format!(
            "target is {}x{}, expected {}x{}",
            target.rows(),
            target.cols(),
            wstar.rows(),
            xstar.cols()
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(PruneError::Parameter(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// `½‖W* X* − WX‖_F² + λ ‖W*‖₁`.
pub fn objective(wstar: &Matrix, xstar: &Matrix, target: &Matrix, lambda: f64) -> Result<f64> {
    check_shapes(wstar, xstar, target)?;
    check_lambda(lambda)?;
    let recon = frobenius_distance(&matmul(wstar, xstar)?, target)?;
    Ok(0.5 * recon * recon + lambda * wstar.l1_norm())
}

/// Quantities shared by every FISTA run against the same `(target, X*)` pair.
#[derive(Clone, Debug)]
pub(crate) struct Problem<'a> {
    target: &'a Matrix,
    xstar: &'a Matrix,
    /// `X* X*ᵀ`, n×n.
    gram: Matrix,
    /// `WX X*ᵀ`, m×n.
    cross: Matrix,
    lipschitz: f64,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(target: &'a Matrix, xstar: &'a Matrix) -> Result<Self> {
        if target.cols() != xstar.cols() {
            return Err(PruneError::Shape(format!(
                "target has {} columns but activations have {}",
                target.cols(),
                xstar.cols()
            )));
        }
        let lipschitz =
            linalg::lipschitz_constant(xstar, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITERS)?.value;
        Ok(Self {
            target,
            xstar,
            gram: matmul_nt(xstar, xstar)?,
            cross: matmul_nt(target, xstar)?,
            lipschitz,
        })
    }

    /// `grad = Y X* X*ᵀ − WX X*ᵀ`, written row by row into `out`.
    fn gradient(&self, y: &Matrix, out: &mut [f64], parallel: bool) {
        let n = self.gram.cols();
        let row = |(i, out_row): (usize, &mut [f64])| {
            linalg::matmul_row(y.row(i), &self.gram, out_row);
            for (g, c) in out_row.iter_mut().zip(self.cross.row(i)) {
                *g -= c;
            }
        };
        if parallel {
            out.par_chunks_mut(n).enumerate().for_each(row);
        } else {
            out.chunks_mut(n).enumerate().for_each(row);
        }
    }

    pub(crate) fn run(
        &self,
        lambda: f64,
        warm_start: &Matrix,
        settings: &FistaSettings,
    ) -> Result<FistaResult> {
        settings.validate()?;
        check_lambda(lambda)?;
        check_shapes(warm_start, self.xstar, self.target)?;

        let (m, n) = warm_start.shape();
        if self.lipschitz == 0.0 {
            // zero activations: only the l1 term is left, minimized at 0
            return Ok(FistaResult {
                weights: Matrix::zeros(m, n),
                iterations_used: 0,
                objective_trace: Vec::new(),
                converged_by_tol: true,
                lipschitz: 0.0,
            });
        }

        let step = 1.0 / self.lipschitz;
        let threshold = lambda * step;
        let parallel = !settings.deterministic;

        let mut x_prev = warm_start.clone();
        let mut y = warm_start.clone();
        let mut x = Matrix::zeros(m, n);
        let mut grad = vec![0.0; m * n];
        let mut t = 1.0;
        let mut trace = Vec::with_capacity(settings.max_iters);
        let mut converged = false;

        for k in 1..=settings.max_iters {
            // gradient step followed by the proximal (soft-threshold) step
            self.gradient(&y, &mut grad, parallel);
            for ((xi, yi), gi) in x.data_mut().iter_mut().zip(y.data()).zip(&grad) {
                *xi = shrink(yi - step * gi, threshold);
            }

            let t_next = next_momentum(t);
            let beta = (t - 1.0) / t_next;
            let mut moved = 0.0;
            for ((yi, xi), pi) in y.data_mut().iter_mut().zip(x.data()).zip(x_prev.data()) {
                let y_new = xi + beta * (xi - pi);
                moved += (y_new - *yi) * (y_new - *yi);
                *yi = y_new;
            }
            t = t_next;

            if !x.is_finite() || !y.is_finite() {
                return Err(PruneError::Numerical {
                    iteration: k,
                    context: format!("non-finite FISTA iterate (lambda = {lambda:e})"),
                });
            }
            trace.push(objective(&x, self.xstar, self.target, lambda)?);
            std::mem::swap(&mut x_prev, &mut x);

            if moved.sqrt() < settings.stop_tol {
                converged = true;
                break;
            }
        }

        Ok(FistaResult {
            weights: x_prev,
            iterations_used: trace.len(),
            objective_trace: trace,
            converged_by_tol: converged,
            lipschitz: self.lipschitz,
        })
    }
}

/// Runs FISTA from `warm_start` with step `1/L`, `L` the largest eigenvalue
/// of `X* X*ᵀ`.
///
/// Stops after `settings.max_iters` iterations or when two consecutive
/// momentum iterates are within `settings.stop_tol` of each other.
pub fn fista_run(
    target: &Matrix,
    xstar: &Matrix,
    lambda: f64,
    warm_start: &Matrix,
    settings: &FistaSettings,
) -> Result<FistaResult> {
    check_shapes(warm_start, xstar, target)?;
    Problem::new(target, xstar)?.run(lambda, warm_start, settings)
}

/// Hard cap on coordinate-descent sweeps in [`lasso_oracle`].
pub const ORACLE_MAX_SWEEPS: usize = 1_000_000;

/// Cyclic coordinate descent on the same objective, row by row, from zero.
/// Stops when no coordinate moves by more than `tol` in a full sweep.
///
/// Slow but simple; meant for certifying solver output on small instances.
pub fn lasso_oracle(target: &Matrix, xstar: &Matrix, lambda: f64, tol: f64) -> Result<Matrix> {
    check_lambda(lambda)?;
    if !(tol > 0.0) {
        return Err(PruneError::Parameter(format!("oracle tolerance must be positive, got {tol}")));
    }
    if target.cols() != xstar.cols() {
        return Err(PruneError::Shape(format!(
            "target has {} columns but activations have {}",
            target.cols(),
            xstar.cols()
        )));
    }
    let (m, p) = target.shape();
    let n = xstar.rows();
    let col_sq: Vec<f64> = (0..n).map(|j| linalg::dot(xstar.row(j), xstar.row(j))).collect();

    let mut w = vec![0.0; m * n];
    for i in 0..m {
        let wi = &mut w[i * n..(i + 1) * n];
        // residual r = target_i − wi X*
        let mut r = target.row(i).to_vec();
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut max_change = 0.0_f64;
            for j in 0..n {
                if col_sq[j] == 0.0 {
                    wi[j] = 0.0;
                    continue;
                }
                let xj = xstar.row(j);
                let rho = linalg::dot(xj, &r) + wi[j] * col_sq[j];
                let updated = shrink(rho, lambda) / col_sq[j];
                let delta = updated - wi[j];
                if delta != 0.0 {
                    for (rk, xk) in r.iter_mut().zip(xj) {
                        *rk -= delta * xk;
                    }
                    wi[j] = updated;
                }
                max_change = max_change.max(delta.abs());
            }
            if max_change < tol {
                break;
            }
            if sweeps >= ORACLE_MAX_SWEEPS {
                return Err(PruneError::OracleFailure {
                    sweeps,
                    last_change: max_change,
                });
            }
        }
        debug_assert_eq!(r.len(), p);
    }
    Matrix::new(m, n, w)
}

/// Largest violation of the subgradient optimality conditions at `wstar`.
///
/// With `g = (W* X* − WX) X*ᵀ`: nonzero entries contribute
/// `|g + λ sign(w)|`, zero entries contribute `max(|g| − λ, 0)`.
pub fn kkt_residual(wstar: &Matrix, xstar: &Matrix, target: &Matrix, lambda: f64) -> Result<f64> {
    check_shapes(wstar, xstar, target)?;
    let residual = matmul(wstar, xstar)?.sub(target)?;
    let grad = matmul_nt(&residual, xstar)?;
    Ok(wstar
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&w, &g)| {
            if w != 0.0 {
                (g + lambda * w.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn scalar(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    /// Gaussian elimination with partial pivoting, solving `a x = b` for each
    /// column of `b`.
    fn solve(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.rows();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.extend_from_slice(b.row(i));
                r
            })
            .collect();
        let width = n + b.cols();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| aug[x][col].abs().partial_cmp(&aug[y][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = aug[r][col] / aug[col][col];
                    for c in col..width {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        let data = (0..n)
            .flat_map(|i| (n..width).map(move |c| (i, c)))
            .map(|(i, c)| aug[i][c] / aug[i][i])
            .collect();
        Matrix::new(n, b.cols(), data).unwrap()
    }

    #[test]
    fn objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random(3, 4, &mut rng);
        let x = random(4, 5, &mut rng);
        let wx = matmul(&w, &x).unwrap();
        let zero = Matrix::zeros(3, 4);
        let expected = 0.5 * linalg::frobenius_norm(&wx).powi(2);
        assert_eq!(objective(&zero, &x, &wx, 7.0).unwrap(), expected);
        assert_eq!(objective(&w, &x, &wx, 0.0).unwrap(), 0.0);
        let f = objective(&scalar(0.7), &scalar(1.0), &scalar(1.0), 0.3).unwrap();
        assert!((f - 0.255).abs() < 1e-15);
        assert!(matches!(
            objective(&w, &x, &Matrix::zeros(2, 5), 0.1),
            Err(PruneError::Shape(_))
        ));
    }

    #[test]
    fn momentum_first_step_is_golden_ratio() {
        assert!((next_momentum(1.0) - 1.618_033_988_7).abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_lasso_closed_form() {
        let settings = FistaSettings {
            max_iters: 500,
            ..Default::default()
        };
        let r = fista_run(&scalar(1.0), &scalar(1.0), 0.3, &scalar(0.0), &settings).unwrap();
        assert!((r.weights.get(0, 0) - 0.7).abs() < 1e-8);
        assert_eq!(r.objective_trace.len(), r.iterations_used);
    }

    #[test]
    fn unregularized_square_system_recovers_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::identity(4).map(|v| v * 3.0);
        let x = {
            let noise = random(4, 4, &mut rng);
            let data = x.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
            Matrix::new(4, 4, data).unwrap()
        };
        let target = random(3, 4, &mut rng);
        let settings = FistaSettings {
            max_iters: 20_000,
            stop_tol: 1e-14,
            deterministic: true,
        };
        let r = fista_run(&target, &x, 0.0, &Matrix::zeros(3, 4), &settings).unwrap();
        // W = T X⁻¹  ⇔  Xᵀ Wᵀ = Tᵀ
        let expected = solve(&x.transpose(), &target.transpose()).transpose();
        for (a, b) in r.weights.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let recon = frobenius_distance(&matmul(&r.weights, &x).unwrap(), &target).unwrap();
        assert!(recon < 1e-6);
    }

    #[test]
    fn zero_activations_short_circuit() {
        let r = fista_run(
            &Matrix::zeros(2, 3),
            &Matrix::zeros(4, 3),
            0.1,
            &Matrix::new(2, 4, vec![1.0; 8]).unwrap(),
            &FistaSettings::default(),
        )
        .unwrap();
        assert_eq!(r.weights, Matrix::zeros(2, 4));
        assert!(r.converged_by_tol);
        assert_eq!(r.iterations_used, 0);
        assert!(r.objective_trace.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = FistaSettings::default();
        let t = scalar(1.0);
        assert!(matches!(fista_run(&t, &t, -1.0, &t, &s), Err(PruneError::Parameter(_))));
        let bad = FistaSettings { max_iters: 0, ..s };
        assert!(matches!(fista_run(&t, &t, 0.1, &t, &bad), Err(PruneError::Parameter(_))));
        assert!(matches!(
            fista_run(&t, &t, 0.1, &Matrix::zeros(1, 2), &s),
            Err(PruneError::Shape(_))
        ));
    }

    #[test]
    fn oracle_closed_form_and_threshold() {
        let w = lasso_oracle(&scalar(1.0), &scalar(1.0), 0.3, 1e-12).unwrap();
        assert!((w.get(0, 0) - 0.7).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(4, 6, &mut rng);
        let target = random(3, 6, &mut rng);
        let cross = matmul_nt(&target, &x).unwrap();
        let lambda = cross.max_abs() * (1.0 + 1e-9);
        let w = lasso_oracle(&target, &x, lambda, 1e-12).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
        assert_eq!(kkt_residual(&w, &x, &target, lambda).unwrap(), 0.0);
    }

    #[test]
    fn kkt_of_closed_form_solution() {
        let r = kkt_residual(&scalar(0.7), &scalar(1.0), &scalar(1.0), 0.3).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn fista_agrees_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = random(3, 4, &mut rng);
        let x = random(4, 6, &mut rng);
        let target = matmul(&w, &x).unwrap();
        let settings = FistaSettings {
            max_iters: 5000,
            stop_tol: 1e-10,
            deterministic: true,
        };
        let f = fista_run(&target, &x, 0.1, &w, &settings).unwrap();
        let o = lasso_oracle(&target, &x, 0.1, 1e-13).unwrap();
        let fo = objective(&f.weights, &x, &target, 0.1).unwrap();
        let oo = objective(&o, &x, &target, 0.1).unwrap();
        assert!((fo - oo).abs() <= 1e-6 * oo, "{fo} vs {oo}");
        assert!(kkt_residual(&f.weights, &x, &target, 0.1).unwrap() <= 1e-5);
    }

    #[test]
    fn proximal_step_is_exact_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (l, lambda) = (2.5, 0.4);
        for _ in 0..10 {
            let z = random(3, 5, &mut rng).map(|v| 2.0 * v);
            let p = linalg::soft_shrinkage(&z, lambda / l).unwrap();
            let prox_obj = |w: &Matrix| {
                let d = frobenius_distance(w, &z).unwrap();
                0.5 * l * d * d + lambda * w.l1_norm()
            };
            let base = prox_obj(&p);
            for i in 0..3 {
                for j in 0..5 {
                    for delta in [1e-4, -1e-4] {
                        let mut q = p.clone();
                        q.set(i, j, p.get(i, j) + delta);
                        assert!(prox_obj(&q) >= base - 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn unregularized_tail_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..5 {
            let x = random(5, 9, &mut rng);
            let target = random(4, 9, &mut rng);
            let settings = FistaSettings {
                max_iters: 1000,
                stop_tol: 0.0,
                deterministic: true,
            };
            let r = fista_run(&target, &x, 0.0, &Matrix::zeros(4, 5), &settings).unwrap();
            assert_eq!(r.iterations_used, 1000);
            let tail = &r.objective_trace[990..];
            for pair in tail.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
            }
        }
    }

    #[test]
    fn deterministic_runs_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random(6, 12, &mut rng);
        let target = random(5, 12, &mut rng);
        let warm = random(5, 6, &mut rng);
        let seq = FistaSettings {
            max_iters: 200,
            stop_tol: 0.0,
            deterministic: true,
        };
        let a = fista_run(&target, &x, 0.05, &warm, &seq).unwrap();
        let b = fista_run(&target, &x, 0.05, &warm, &seq).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.objective_trace, b.objective_trace);
        let par = FistaSettings {
            deterministic: false,
            ..seq
        };
        let c = fista_run(&target, &x, 0.05, &warm, &par).unwrap();
        assert_eq!(a.weights, c.weights);
        assert_eq!(a.weights.shape(), warm.shape());
    }
}
