//! Synthetic pruning problems: Gaussian weights and calibration activations.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cliio::manifest::{Manifest, NodeSpec, UnitSpec, MANIFEST_FILE, MANIFEST_VERSION, UNIT_INPUT};
use crate::cliio::npy::save_array;
use crate::error::{PruneError, Result};
use crate::linalg::Matrix;
use crate::sparsity::SparsityPattern;
use crate::tuner::TunerConfig;
use crate::unitgraph::{Activation, WarmStartKind};

/// Calibration samples per unit input by default.
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActivationMix {
    #[default]
    None,
    Relu,
    /// ReLU on every node except the last of each chain.
    Alternate,
}

impl FromStr for ActivationMix {
    type Err = PruneError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ActivationMix::None),
            "relu" => Ok(ActivationMix::Relu),
            "alternate" => Ok(ActivationMix::Alternate),
            _ => Err(PruneError::Parameter(format!("unknown activation mix `{s}`"))),
        }
    }
}

/// Shape of a generated problem. Each unit is a chain: the first node is
/// `out_dim × in_dim`, later nodes are `out_dim × out_dim`, and calibration
/// is `in_dim × samples`.
#[derive(Clone, Debug)]
pub struct GenerateSpec {
    pub seed: u64,
    pub units: usize,
    pub nodes_per_unit: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub samples: usize,
    pub activation: ActivationMix,
    pub pattern: SparsityPattern,
    pub warm_start: WarmStartKind,
    pub tuner: TunerConfig,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            units: 2,
            nodes_per_unit: 3,
            out_dim: 16,
            in_dim: 16,
            samples: DEFAULT_CALIBRATION_SAMPLES,
            activation: ActivationMix::Alternate,
            pattern: SparsityPattern::Unstructured { rate: 0.5 },
            warm_start: WarmStartKind::Wanda,
            tuner: TunerConfig::default(),
        }
    }
}

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Matrix::new(rows, cols, data).expect("gaussian samples are finite")
}

/// Per-unit RNG so units can be regenerated independently of each other.
pub(crate) fn unit_rng(seed: u64, unit: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 32) + unit as u64);
    rng
}

/// Writes weights, calibration data and `manifest.json` under `out_dir`
/// (`<unit>/<node>.npy`, `<unit>/calibration.npy`). Identical specs produce
/// byte-identical files.
pub fn generate_problem(out_dir: impl AsRef<Path>, spec: &GenerateSpec) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if spec.units == 0 || spec.nodes_per_unit == 0 || spec.out_dim == 0 || spec.in_dim == 0 || spec.samples == 0 {
        return Err(PruneError::Parameter("all generator dimensions must be positive".into()));
    }
    spec.pattern.check_shape(spec.out_dim, spec.in_dim)?;
    if spec.nodes_per_unit > 1 {
        spec.pattern.check_shape(spec.out_dim, spec.out_dim)?;
    }
    spec.tuner.validate()?;

    fs::create_dir_all(out_dir).map_err(|e| PruneError::io(out_dir, e))?;
    let mut units = Vec::with_capacity(spec.units);
    for u in 0..spec.units {
        let name = format!("unit{u}");
        let dir = out_dir.join(&name);
        fs::create_dir_all(&dir).map_err(|e| PruneError::io(&dir, e))?;
        let mut rng = unit_rng(spec.seed, u, 0);

        let calibration = gaussian(spec.in_dim, spec.samples, 1.0, &mut rng);
        save_array(dir.join("calibration.npy"), &calibration)?;

        let mut nodes = Vec::with_capacity(spec.nodes_per_unit);
        for k in 0..spec.nodes_per_unit {
            let cols = if k == 0 { spec.in_dim } else { spec.out_dim };
            let w = gaussian(spec.out_dim, cols, 1.0 / (cols as f64).sqrt(), &mut rng);
            let id = format!("fc{k}");
            save_array(dir.join(format!("{id}.npy")), &w)?;
            let last = k + 1 == spec.nodes_per_unit;
            let activation = match spec.activation {
                ActivationMix::None => Activation::None,
                ActivationMix::Relu => Activation::Relu,
                ActivationMix::Alternate if last => Activation::None,
                ActivationMix::Alternate => Activation::Relu,
            };
            nodes.push(NodeSpec {
                input: if k == 0 {
                    UNIT_INPUT.to_string()
                } else {
                    format!("fc{}", k - 1)
                },
                weight: PathBuf::from(&name).join(format!("{id}.npy")),
                id,
                activation,
            });
        }
        units.push(UnitSpec {
            calibration: PathBuf::from(&name).join("calibration.npy"),
            name,
            nodes,
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        pattern: spec.pattern,
        warm_start: spec.warm_start,
        seed: spec.seed,
        tuner: spec.tuner,
        units,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
