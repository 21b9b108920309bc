use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cliio::npy::load_array;
use crate::error::{PruneError, Result};
use crate::linalg::Matrix;
use crate::sparsity::SparsityPattern;
use crate::tuner::TunerConfig;
use crate::unitgraph::{Activation, InputRef, OperatorNode, PruneUnit, WarmStartKind};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reserved `input` value naming the unit input.
pub const UNIT_INPUT: &str = "input";

/// Describes a pruning job. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub pattern: SparsityPattern,
    #[serde(default)]
    pub warm_start: WarmStartKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tuner: TunerConfig,
    pub units: Vec<UnitSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub name: String,
    /// Calibration activations for the unit input (`input_dim × samples`).
    pub calibration: PathBuf,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub weight: PathBuf,
    /// `"input"` or the id of an earlier node.
    #[serde(default = "unit_input")]
    pub input: String,
    #[serde(default)]
    pub activation: Activation,
}

fn unit_input() -> String {
    UNIT_INPUT.to_string()
}

/// A unit with its weights and calibration data loaded and checked.
#[derive(Clone, Debug)]
pub struct LoadedUnit {
    pub unit: PruneUnit,
    pub calibration: Matrix,
}

fn check_name(kind: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if !ok {
        return Err(PruneError::Manifest(format!(
            "{kind} name `{name}` must be non-empty ASCII [A-Za-z0-9_.-] and not start with '.'"
        )));
    }
    Ok(())
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PruneError::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| PruneError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks everything that does not need the array files.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(PruneError::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        self.pattern.validate()?;
        self.tuner.validate()?;
        if self.units.is_empty() {
            return Err(PruneError::Manifest("manifest lists no units".into()));
        }
        let mut names = HashSet::new();
        for u in &self.units {
            check_name("unit", &u.name)?;
            if !names.insert(u.name.as_str()) {
                return Err(PruneError::Manifest(format!("duplicate unit name `{}`", u.name)));
            }
            for n in &u.nodes {
                check_name("node", &n.id)?;
                if n.id == UNIT_INPUT {
                    return Err(PruneError::Manifest(format!(
                        "unit `{}`: node id `{UNIT_INPUT}` is reserved",
                        u.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads and checks every unit's arrays. Fails on the first problem.
    pub fn load_units(&self) -> Result<Vec<LoadedUnit>> {
        self.validate()?;
        self.units.iter().map(|u| self.load_unit(u)).collect()
    }

    pub fn load_unit(&self, spec: &UnitSpec) -> Result<LoadedUnit> {
        let calibration = load_array(self.resolve(&spec.calibration))?;
        let mut nodes = Vec::with_capacity(spec.nodes.len());
        for n in &spec.nodes {
            let weight = load_array(self.resolve(&n.weight))?;
            let input = if n.input == UNIT_INPUT {
                InputRef::UnitInput
            } else {
                InputRef::Node(n.input.clone())
            };
            nodes.push(OperatorNode::new(n.id.clone(), weight, input, n.activation));
        }
        let unit = PruneUnit::new(spec.name.clone(), calibration.rows(), nodes)?;
        for node in unit.nodes() {
            self.pattern
                .check_shape(node.weight.rows(), node.weight.cols())
                .map_err(|e| e.in_node(&node.id))?;
        }
        Ok(LoadedUnit { unit, calibration })
    }
}
