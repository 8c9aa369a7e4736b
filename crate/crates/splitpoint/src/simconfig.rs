//! Simulation config files and the CSV traces they reference.
//!
//! ```json
//! {"arch": "emg_cnn.json",
//!  "training": {"dataset_size": 9992, "batch_size": 100, "clients": 10, "rounds": 35, "epochs": 1},
//!  "selector": "ocla",
//!  "resources": {"sampled": {"rate_cv": 0.5, "ratio_cv": 0.5}},
//!  "seed": 7}
//! ```
//!
//! Relative paths resolve against the config file's directory. `resources`
//! is one of `{"fixed": {"client_flops", "server_flops", "link_bps"}}`,
//! `{"sampled": {...}}` or `{"trace": "resources.csv"}`. A sampled source
//! without `client_flops` gets the speed calibrated to the centre of layer
//! 3's region. `training.batch_count` defaults to `"ceil"` here, since a
//! simulated epoch runs whole batches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splitpoint_core::baselines::SelectorKind;
use splitpoint_core::delaymodel::{BatchCount, ResourceState, TrainingConfig};
use splitpoint_core::montecarlo::{calibrate_client_flops, CvCell, ResourceDistribution};
use splitpoint_core::netprofile::{build_profile, ArchitectureSpec, FlopConvention, NetworkProfile};
use splitpoint_core::ocla::{offline_phase, SplitRegionTable};
use splitpoint_core::simrunner::{LossPoint, ResourceSource, SimulationConfig};

use crate::arch::load_architecture;
use crate::error::{FormatError, Result};

/// Environment variable that replaces the config's seed.
pub const SEED_ENV: &str = "SPLITPOINT_SEED";

/// Layer whose region the default client speed is calibrated to.
pub const CALIBRATION_LAYER: usize = 3;

fn default_bits() -> u32 {
    32
}

fn one() -> usize {
    1
}

fn default_batch_count() -> BatchCount {
    BatchCount::Ceil
}

fn default_link() -> f64 {
    20e6
}

fn default_ratio() -> f64 {
    0.03
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingDoc {
    pub dataset_size: u64,
    pub batch_size: u64,
    pub clients: usize,
    pub rounds: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default = "default_batch_count")]
    pub batch_count: BatchCount,
}

impl From<TrainingDoc> for TrainingConfig {
    fn from(t: TrainingDoc) -> Self {
        TrainingConfig {
            dataset_size: t.dataset_size,
            batch_size: t.batch_size,
            clients: t.clients,
            rounds: t.rounds,
            epochs: t.epochs,
            batch_count: t.batch_count,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledDoc {
    #[serde(default)]
    pub client_flops: Option<f64>,
    #[serde(default = "default_link")]
    pub mean_link_bps: f64,
    #[serde(default = "default_ratio")]
    pub mean_speed_ratio: f64,
    pub rate_cv: f64,
    pub ratio_cv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ResourcesDoc {
    Fixed(ResourceState),
    Sampled(SampledDoc),
    Trace(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDoc {
    pub arch: PathBuf,
    #[serde(default = "default_bits")]
    pub scalar_bits: u32,
    #[serde(default)]
    pub convention: FlopConvention,
    pub training: TrainingDoc,
    pub selector: SelectorKind,
    pub resources: ResourcesDoc,
    #[serde(default)]
    pub seed: u64,
}

/// Everything a simulation run needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct LoadedSimulation {
    pub arch: ArchitectureSpec,
    pub profile: NetworkProfile,
    /// Built for the effective dataset size of `config.training`.
    pub table: SplitRegionTable,
    pub config: SimulationConfig,
}

/// Seed from [`SEED_ENV`], if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| FormatError::Invalid(format!("{SEED_ENV}={v:?} is not a 64-bit seed"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(FormatError::Invalid(format!("{SEED_ENV}: {e}"))),
    }
}

impl SimulationDoc {
    /// Resolves files relative to `base` and builds the simulation.
    pub fn resolve(self, base: &Path, seed_override: Option<u64>) -> Result<LoadedSimulation> {
        let arch = load_architecture(&base.join(&self.arch))?;
        let profile = build_profile(&arch, &self.convention, self.scalar_bits)?;
        let training: TrainingConfig = self.training.into();
        training.validate()?;
        let table = offline_phase(&profile, training.effective_dataset_size())?;
        let resources = match self.resources {
            ResourcesDoc::Fixed(r) => ResourceSource::Fixed(r),
            ResourcesDoc::Sampled(s) => {
                let client_flops = match s.client_flops {
                    Some(f) => f,
                    None => calibrate_client_flops(
                        &table,
                        CALIBRATION_LAYER,
                        s.mean_link_bps,
                        s.mean_speed_ratio,
                    )?,
                };
                ResourceSource::Sampled {
                    distribution: ResourceDistribution {
                        client_flops,
                        mean_link_bps: s.mean_link_bps,
                        mean_speed_ratio: s.mean_speed_ratio,
                    },
                    cell: CvCell {
                        rate_cv: s.rate_cv,
                        ratio_cv: s.ratio_cv,
                    },
                }
            }
            ResourcesDoc::Trace(path) => ResourceSource::Trace(load_resource_trace(&base.join(path))?),
        };
        Ok(LoadedSimulation {
            arch,
            profile,
            table,
            config: SimulationConfig {
                training,
                selector: self.selector,
                resources,
                seed: seed_override.unwrap_or(self.seed),
            },
        })
    }
}

pub fn load_simulation(path: &Path, seed_override: Option<u64>) -> Result<LoadedSimulation> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let doc: SimulationDoc = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    doc.resolve(base, seed_override)
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut rows = Vec::new();
    for row in csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file).deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Reads a `client_flops,server_flops,link_bps` CSV, one row per epoch.
pub fn load_resource_trace(path: &Path) -> Result<Vec<ResourceState>> {
    let rows: Vec<ResourceState> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        r.validate()
            .map_err(|e| FormatError::Invalid(format!("{}: row {}: {e}", path.display(), i + 1)))?;
    }
    Ok(rows)
}

/// Reads an `epoch,loss,accuracy` CSV; `accuracy` may be left empty.
pub fn load_loss_trace(path: &Path) -> Result<Vec<LossPoint>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let doc: SimulationDoc = serde_json::from_str(
            r#"{"arch": "a.json",
                "training": {"dataset_size": 9992, "batch_size": 100, "clients": 10, "rounds": 35},
                "selector": "naive:3",
                "resources": {"sampled": {"rate_cv": 0.5, "ratio_cv": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(doc.scalar_bits, 32);
        assert_eq!(doc.training.epochs, 1);
        assert_eq!(doc.training.batch_count, BatchCount::Ceil);
        assert_eq!(doc.selector, SelectorKind::Naive(3));
        let ResourcesDoc::Sampled(s) = doc.resources else {
            panic!("expected sampled resources");
        };
        assert_eq!((s.client_flops, s.mean_link_bps, s.mean_speed_ratio), (None, 20e6, 0.03));
    }

    #[test]
    fn rejects_unknown_source_and_selector() {
        let base = r#""arch": "a.json", "training": {"dataset_size": 1, "batch_size": 1, "clients": 1, "rounds": 1}"#;
        let bad_source = format!(r#"{{{base}, "selector": "ocla", "resources": {{"markov": {{}}}}}}"#);
        assert!(serde_json::from_str::<SimulationDoc>(&bad_source).is_err());
        let bad_selector = format!(
            r#"{{{base}, "selector": "greedy", "resources": {{"trace": "r.csv"}}}}"#
        );
        assert!(serde_json::from_str::<SimulationDoc>(&bad_selector).is_err());
    }
}
