//! Layer-wise post-training pruning.
//!
//! Each linear operator `W` is replaced by a sparse `W*` that minimizes
//! `½‖W* X* − WX‖_F² + λ‖W*‖₁` with FISTA, followed by rounding to an
//! unstructured or n:m pattern. λ is tuned per operator by bisection, and
//! operators inside a [`PruneUnit`] are pruned in order so each one sees the
//! activations produced by its already-pruned predecessors.
//!
//! ```
//! use l1prune_core::{prune_operator, round_to_pattern, Matrix, SparsityPattern, TunerConfig};
//!
//! let w = Matrix::from_rows(&[[3.0, -2.0, 1.0, 0.5]]).unwrap();
//! let x = Matrix::identity(4);
//! let pattern: SparsityPattern = "semi:2:4".parse().unwrap();
//! let warm = round_to_pattern(&w, &pattern).unwrap();
//! let r = prune_operator(&w, &x, &x, &pattern, &warm, &TunerConfig::default()).unwrap();
//! assert_eq!(r.weights.data(), &[3.0, -2.0, 0.0, 0.0]);
//! ```

pub mod cliio;
pub mod error;
pub mod linalg;
pub mod solver;
pub mod sparsity;
pub mod tuner;
pub mod unitgraph;

pub use error::{PruneError, Result};
pub use linalg::{
    frobenius_distance, frobenius_norm, lipschitz_constant, matmul, matmul_nt, soft_shrinkage,
    LipschitzEstimate, Matrix,
};
pub use solver::{
    fista_run, kkt_residual, lasso_oracle, next_momentum, objective, FistaResult, FistaSettings,
};
pub use sparsity::{round_to_pattern, satisfies_pattern, sparsity_of, SparsityPattern};
pub use tuner::{
    bisect_lambda, compute_errors, prune_operator, LambdaBracket, LambdaStep, OperatorPruneResult,
    StopReason, TunerConfig,
};
pub use unitgraph::{
    dense_forward, prune_unit, prune_unit_uncorrected, unit_output_error, warm_start, Activation,
    InputRef, NodePruneResult, OperatorNode, PruneUnit, UnitPruneResult, WarmStartKind,
};
