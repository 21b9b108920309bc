//! Runs a manifest: prunes units on a bounded worker pool, writes pruned
//! arrays and a JSON report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::cliio::generate::{gaussian, unit_rng};
use crate::cliio::manifest::{LoadedUnit, Manifest};
use crate::cliio::npy::{load_array, save_array};
use crate::cliio::report::{
    EvalReport, NodeReport, PruneReport, SweepPoint, UnitEval, UnitReport, UnitStatus,
    REPORT_FILE, REPORT_VERSION,
};
use crate::error::{PruneError, Result};
use crate::sparsity::{sparsity_of, SparsityPattern};
use crate::unitgraph::{prune_unit, prune_unit_uncorrected, unit_output_error, PruneUnit};

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads; units beyond this wait for a free worker.
    pub parallelism: usize,
    pub corrected: bool,
    /// Where pruned arrays and the report go; defaults to the manifest directory.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            corrected: true,
            out_dir: None,
        }
    }
}

/// Location of a node's pruned array relative to the output directory.
pub fn pruned_file(unit: &str, node: &str) -> PathBuf {
    Path::new(unit).join(format!("{node}.pruned.npy"))
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    if parallelism == 0 {
        return Err(PruneError::Parameter("parallelism must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| PruneError::Parameter(format!("cannot start worker pool: {e}")))
}

fn prune_one(
    manifest: &Manifest,
    loaded: &LoadedUnit,
    corrected: bool,
    out_dir: &Path,
) -> Result<UnitReport> {
    let prune = if corrected { prune_unit } else { prune_unit_uncorrected };
    let result = prune(
        &loaded.unit,
        &loaded.calibration,
        &manifest.pattern,
        manifest.warm_start,
        &manifest.tuner,
    )?;

    // only touch the filesystem once every node of the unit succeeded
    let unit_dir = out_dir.join(loaded.unit.name());
    fs::create_dir_all(&unit_dir).map_err(|e| PruneError::io(&unit_dir, e))?;
    let mut nodes = Vec::with_capacity(result.nodes.len());
    for n in &result.nodes {
        let rel = pruned_file(loaded.unit.name(), &n.id);
        save_array(out_dir.join(&rel), &n.result.weights)?;
        nodes.push(NodeReport {
            id: n.id.clone(),
            pruned_file: rel.to_string_lossy().replace('\\', "/"),
            best_total_error: n.result.best_total_error,
            initial_total_error: n.result.initial_total_error,
            achieved_sparsity: sparsity_of(&n.result.weights),
            outer_iterations: n.result.outer_iterations,
            inner_iterations: n.result.inner_iterations(),
            stop_reason: n.result.stop_reason,
            lambda_trace: n.result.lambda_trace.clone(),
            wall_time_secs: n.wall_time.as_secs_f64(),
        });
    }
    Ok(UnitReport {
        name: loaded.unit.name().to_string(),
        status: UnitStatus::Ok,
        error: None,
        unit_output_error: Some(result.unit_output_error),
        nodes,
    })
}

/// Prunes every unit of `manifest` and writes `<out>/<unit>/<node>.pruned.npy`
/// plus `<out>/report.json`.
///
/// Manifest or file validation problems are returned as errors before any
/// output is written. Failures inside a unit are recorded in the report
/// (`success == false`) and leave that unit's files unwritten.
pub fn run_prune(manifest: &Manifest, opts: &RunOptions) -> Result<PruneReport> {
    let started = Instant::now();
    let units = manifest.load_units()?;
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| manifest.base_dir.clone());
    let pool = pool(opts.parallelism)?;
    fs::create_dir_all(&out_dir).map_err(|e| PruneError::io(&out_dir, e))?;

    let unit_reports: Vec<UnitReport> = pool.install(|| {
        units
            .par_iter()
            .map(|u| {
                prune_one(manifest, u, opts.corrected, &out_dir).unwrap_or_else(|e| {
                    log::error!("unit `{}` failed: {e}", u.unit.name());
                    UnitReport {
                        name: u.unit.name().to_string(),
                        status: UnitStatus::Failed,
                        error: Some(e.to_string()),
                        unit_output_error: None,
                        nodes: Vec::new(),
                    }
                })
            })
            .collect()
    });

    let report = PruneReport {
        version: REPORT_VERSION,
        seed: manifest.seed,
        pattern: manifest.pattern,
        warm_start: manifest.warm_start,
        corrected: opts.corrected,
        tuner: manifest.tuner,
        success: unit_reports.iter().all(|u| u.status == UnitStatus::Ok),
        units: unit_reports,
        total_time_secs: started.elapsed().as_secs_f64(),
    };
    report.save(out_dir.join(REPORT_FILE))?;
    Ok(report)
}

/// Which activations [`eval_error`] feeds the units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalInput {
    Calibration,
    /// Fresh Gaussian inputs with the calibration shape, drawn from `seed`.
    HeldOut { seed: u64 },
}

/// Held-out activations for unit `index`, shaped like its calibration data.
pub fn held_out_input(seed: u64, index: usize, rows: usize, cols: usize) -> crate::linalg::Matrix {
    gaussian(rows, cols, 1.0, &mut unit_rng(seed, index, 1))
}

/// Recomputes dense-vs-pruned unit output errors from the files on disk.
/// A unit whose pruned arrays are missing or unreadable gets an error entry
/// instead of a value.
pub fn eval_error(manifest: &Manifest, pruned_dir: &Path, input: EvalInput) -> Result<EvalReport> {
    let units = manifest.load_units()?;
    let evals = units
        .iter()
        .enumerate()
        .map(|(i, loaded)| {
            let name = loaded.unit.name().to_string();
            match eval_unit(loaded, i, pruned_dir, input) {
                Ok(err) => UnitEval {
                    name,
                    output_error: Some(err),
                    error: None,
                },
                Err(e) => UnitEval {
                    name,
                    output_error: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let (label, held_out_seed) = match input {
        EvalInput::Calibration => ("calibration", None),
        EvalInput::HeldOut { seed } => ("held_out", Some(seed)),
    };
    Ok(EvalReport {
        version: REPORT_VERSION,
        input: label.to_string(),
        held_out_seed,
        units: evals,
    })
}

fn eval_unit(loaded: &LoadedUnit, index: usize, pruned_dir: &Path, input: EvalInput) -> Result<f64> {
    let unit = &loaded.unit;
    let weights = unit
        .nodes()
        .iter()
        .map(|n| load_array(pruned_dir.join(pruned_file(unit.name(), &n.id))))
        .collect::<Result<Vec<_>>>()?;
    let pruned: PruneUnit = unit.with_weights(weights)?;
    let x = match input {
        EvalInput::Calibration => loaded.calibration.clone(),
        EvalInput::HeldOut { seed } => {
            let (r, c) = loaded.calibration.shape();
            held_out_input(seed, index, r, c)
        }
    };
    unit_output_error(unit, &pruned, &x)
}

/// Runs the manifest once per unstructured rate, each into
/// `<out>/rate_<rate>/`, and writes `<out>/sweep.json`.
pub fn run_sweep(
    manifest: &Manifest,
    rates: &[f64],
    opts: &RunOptions,
) -> Result<Vec<SweepPoint>> {
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| manifest.base_dir.clone());
    let mut points = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut m = manifest.clone();
        m.pattern = SparsityPattern::unstructured(rate)?;
        let sub = format!("rate_{rate:.2}");
        let report = run_prune(
            &m,
            &RunOptions {
                out_dir: Some(out_dir.join(&sub)),
                ..opts.clone()
            },
        )?;
        points.push(SweepPoint {
            rate,
            report_file: format!("{sub}/{REPORT_FILE}"),
            success: report.success,
            mean_best_total_error: report.mean_best_error(),
            unit_output_errors: report.units.iter().map(|u| u.unit_output_error).collect(),
        });
    }
    let path = out_dir.join("sweep.json");
    fs::write(&path, serde_json::to_string_pretty(&points)? + "\n")
        .map_err(|e| PruneError::io(&path, e))?;
    Ok(points)
}
