use std::fs;
use std::path::Path;

use overseg::eval::EvalConfig;
use overseg::nn::UNetConfig;
use overseg::synth::SynthConfig;
use overseg::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Settings file: one optional section per module. Missing fields take the
/// module defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::argument(format!("config {}: {e}", path.display())))
    }
}

/// Overwrites `slot` when the flag was given.
pub fn apply<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
