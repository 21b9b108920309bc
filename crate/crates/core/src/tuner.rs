//! Outer loop for a single operator: alternate FISTA solves with rounding,
//! keep the best rounded candidate, and steer λ by bisection on the share of
//! the error introduced by rounding.

use serde::{Deserialize, Serialize};

use crate::error::{PruneError, Result};
use crate::linalg::{frobenius_distance, matmul, Matrix};
use crate::solver::{FistaSettings, Problem};
use crate::sparsity::{round_to_pattern, satisfies_pattern, SparsityPattern};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub lambda_init: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Threshold on `E_round / E_total` above which λ is raised.
    pub xi: f64,
    /// Number of non-improving outer iterations tolerated (`T`).
    pub max_non_improving: usize,
    /// Relative-improvement stopping threshold.
    pub epsilon: f64,
    pub fista: FistaSettings,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            lambda_init: 1e-5,
            lambda_lo: 0.0,
            lambda_hi: 1e6,
            xi: 0.3,
            max_non_improving: 3,
            epsilon: 1e-6,
            fista: FistaSettings::default(),
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PruneError::Parameter(msg));
        if !(0.0 <= self.lambda_lo
            && self.lambda_lo < self.lambda_init
            && self.lambda_init < self.lambda_hi
            && self.lambda_hi.is_finite())
        {
            return bad(format!(
                "need 0 <= lambda_lo < lambda_init < lambda_hi, got {} / {} / {}",
                self.lambda_lo, self.lambda_init, self.lambda_hi
            ));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return bad(format!("xi must lie in (0, 1), got {}", self.xi));
        }
        if self.max_non_improving == 0 {
            return bad("T must be at least 1".into());
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        self.fista.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NonImprovement,
    Epsilon,
    IntervalCollapse,
}

/// One outer iteration of [`prune_operator`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub lambda: f64,
    pub e_total: f64,
    pub e_round: f64,
    pub accepted: bool,
    pub fista_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct OperatorPruneResult {
    /// Best rounded candidate; always satisfies the requested pattern.
    pub weights: Matrix,
    pub best_total_error: f64,
    /// Total error of the rounded warm start the search began from.
    pub initial_total_error: f64,
    pub lambda_trace: Vec<LambdaStep>,
    pub outer_iterations: usize,
    pub stop_reason: StopReason,
}

impl OperatorPruneResult {
    pub fn inner_iterations(&self) -> usize {
        self.lambda_trace.iter().map(|s| s.fista_iterations).sum()
    }
}

/// Returns `(E_total, E_round)` where `E_total = ‖W_rounded X* − WX‖_F` and
/// `E_round = E_total − ‖W_unrounded X* − WX‖_F`.
pub fn compute_errors(
    w_rounded: &Matrix,
    w_unrounded: &Matrix,
    xstar: &Matrix,
    target: &Matrix,
) -> Result<(f64, f64)> {
    let e_total = frobenius_distance(&matmul(w_rounded, xstar)?, target)?;
    let e_unrounded = frobenius_distance(&matmul(w_unrounded, xstar)?, target)?;
    Ok((e_total, e_total - e_unrounded))
}

/// Bisection bracket for λ. Persists across the outer iterations of one operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaBracket {
    pub lo: f64,
    pub hi: f64,
    pub lambda: f64,
    /// Upper end of the bracket at construction; collapse is measured against it.
    initial_hi: f64,
}

impl LambdaBracket {
    pub fn new(lo: f64, lambda: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lambda,
            initial_hi: hi,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn collapsed(&self) -> bool {
        self.width() < 1e-12 * self.initial_hi
    }
}

/// One bisection update of λ.
///
/// A ratio above `xi` means rounding dominates the error, so λ moves up
/// toward `hi`; otherwise it moves down toward `lo`. Returns `true` once the
/// bracket has collapsed.
pub fn bisect_lambda(bracket: &mut LambdaBracket, ratio: f64, xi: f64) -> bool {
    if ratio > xi {
        bracket.lo = bracket.lambda;
        bracket.lambda = 0.5 * (bracket.lambda + bracket.hi);
    } else {
        bracket.hi = bracket.lambda;
        bracket.lambda = 0.5 * (bracket.lo + bracket.lambda);
    }
    bracket.collapsed()
}

/// Prunes one linear operator.
///
/// `w` is the dense weight, `x` its dense input (so the target is `w · x`),
/// and `xstar` the input seen after upstream pruning. The search starts from
/// `round(warm_start)` and only ever replaces the incumbent with a strictly
/// better rounded candidate.
pub fn prune_operator(
    w: &Matrix,
    x: &Matrix,
    xstar: &Matrix,
    pattern: &SparsityPattern,
    warm_start: &Matrix,
    cfg: &TunerConfig,
) -> Result<OperatorPruneResult> {
    cfg.validate()?;
    pattern.check_shape(w.rows(), w.cols())?;
    if x.shape() != xstar.shape() {
        return Err(PruneError::Shape(format!(
            "dense input is {}x{} but pruned input is {}x{}",
            x.rows(),
            x.cols(),
            xstar.rows(),
            xstar.cols()
        )));
    }
    w.ensure_same_shape(warm_start, "warm-start")?;
    let target = matmul(w, x)?;
    prune_with_target(&target, xstar, pattern, warm_start, cfg)
}

pub(crate) fn prune_with_target(
    target: &Matrix,
    xstar: &Matrix,
    pattern: &SparsityPattern,
    warm_start: &Matrix,
    cfg: &TunerConfig,
) -> Result<OperatorPruneResult> {
    cfg.validate()?;
    if !satisfies_pattern(warm_start, pattern)? {
        log::warn!("warm start does not satisfy {pattern}; rounding it first");
    }
    let problem = Problem::new(target, xstar)?;

    let mut best = round_to_pattern(warm_start, pattern)?;
    let mut e_best = frobenius_distance(&matmul(&best, xstar)?, target)?;
    let initial_total_error = e_best;

    let mut trace = Vec::new();
    let finish = |weights, e_best, trace: Vec<LambdaStep>, stop_reason| OperatorPruneResult {
        weights,
        best_total_error: e_best,
        initial_total_error,
        outer_iterations: trace.len(),
        lambda_trace: trace,
        stop_reason,
    };
    if e_best == 0.0 {
        return Ok(finish(best, e_best, trace, StopReason::Epsilon));
    }

    let mut bracket = LambdaBracket::new(cfg.lambda_lo, cfg.lambda_init, cfg.lambda_hi);
    let mut non_improving = 0;
    // undefined until the first improvement
    let mut e_stop = f64::INFINITY;

    loop {
        let lambda = bracket.lambda;
        let solved = problem
            .run(lambda, &best, &cfg.fista)
            .map_err(|e| match e {
                PruneError::Numerical { iteration, context } => PruneError::Numerical {
                    iteration,
                    context: format!("{context}; tuner lambda = {lambda:e}"),
                },
                other => other,
            })?;
        let rounded = round_to_pattern(&solved.weights, pattern)?;
        let (e_total, e_round) = compute_errors(&rounded, &solved.weights, xstar, target)?;
        if !e_total.is_finite() {
            return Err(PruneError::Numerical {
                iteration: solved.iterations_used,
                context: format!("non-finite total error at lambda = {lambda:e}"),
            });
        }

        let accepted = e_total < e_best;
        if accepted {
            best = rounded;
            e_stop = (e_best - e_total) / e_best;
            e_best = e_total;
        } else {
            non_improving += 1;
        }
        trace.push(LambdaStep {
            lambda,
            e_total,
            e_round,
            accepted,
            fista_iterations: solved.iterations_used,
        });

        if e_total == 0.0 {
            return Ok(finish(best, e_best, trace, StopReason::Epsilon));
        }
        let ratio = (e_round / e_total).clamp(0.0, 1.0);
        let collapsed = bisect_lambda(&mut bracket, ratio, cfg.xi);

        if non_improving >= cfg.max_non_improving {
            return Ok(finish(best, e_best, trace, StopReason::NonImprovement));
        }
        if e_stop < cfg.epsilon {
            return Ok(finish(best, e_best, trace, StopReason::Epsilon));
        }
        if collapsed {
            return Ok(finish(best, e_best, trace, StopReason::IntervalCollapse));
        }
    }
}
