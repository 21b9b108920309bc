//! File formats, manifests, synthetic problems and the unit runner.

pub mod generate;
pub mod manifest;
pub mod npy;
pub mod report;
pub mod runner;

pub use generate::{generate_problem, ActivationMix, GenerateSpec, DEFAULT_CALIBRATION_SAMPLES};
pub use manifest::{Manifest, NodeSpec, UnitSpec, MANIFEST_FILE, MANIFEST_VERSION};
pub use npy::{load_array, save_array};
pub use report::{EvalReport, NodeReport, PruneReport, SweepPoint, UnitEval, UnitReport, UnitStatus};
pub use runner::{eval_error, held_out_input, pruned_file, run_prune, run_sweep, EvalInput, RunOptions};
