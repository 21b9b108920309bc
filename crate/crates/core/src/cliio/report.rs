use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PruneError, Result};
use crate::sparsity::SparsityPattern;
use crate::tuner::{LambdaStep, StopReason, TunerConfig};
use crate::unitgraph::WarmStartKind;

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub version: u32,
    pub seed: u64,
    pub pattern: SparsityPattern,
    pub warm_start: WarmStartKind,
    pub corrected: bool,
    pub tuner: TunerConfig,
    pub success: bool,
    pub units: Vec<UnitReport>,
    pub total_time_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub name: String,
    pub status: UnitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Distance between dense and pruned unit outputs on the calibration input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_output_error: Option<f64>,
    pub nodes: Vec<NodeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: String,
    /// Pruned array, relative to the output directory.
    pub pruned_file: String,
    pub best_total_error: f64,
    pub initial_total_error: f64,
    pub achieved_sparsity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub stop_reason: StopReason,
    pub lambda_trace: Vec<LambdaStep>,
    pub wall_time_secs: f64,
}

impl PruneReport {
    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> PruneReport {
        let mut r = self.clone();
        r.total_time_secs = 0.0;
        for u in &mut r.units {
            for n in &mut u.nodes {
                n.wall_time_secs = 0.0;
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| PruneError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PruneReport> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PruneError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn mean_best_error(&self) -> f64 {
        let errs: Vec<f64> = self
            .units
            .iter()
            .flat_map(|u| u.nodes.iter().map(|n| n.best_total_error))
            .collect();
        if errs.is_empty() {
            f64::NAN
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        }
    }
}

/// Output errors recomputed from files by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    /// `"calibration"` or `"held_out"`.
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_seed: Option<u64>,
    pub units: Vec<UnitEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitEval {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// One row of a sparsity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rate: f64,
    pub report_file: String,
    pub success: bool,
    pub mean_best_total_error: f64,
    pub unit_output_errors: Vec<Option<f64>>,
}
