use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::MIN_MODULUS_BITS;
use crate::error::{invalid, Result};
use crate::graph::Topology;
use crate::problem::ProblemParams;
use crate::protocol::{default_state_clamp, Algorithm, CryptoMode};
use crate::quantize::weight_grid_size;
use crate::schedules::{AttenuationSchedule, StepsizeSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub agents: usize,
    /// One-based undirected edges.
    pub edges: Vec<[usize; 2]>,
}

impl TopologyConfig {
    pub fn build(&self) -> Result<Topology> {
        Topology::from_one_based(self.agents, &self.edges)
    }
}

impl From<&Topology> for TopologyConfig {
    fn from(t: &Topology) -> Self {
        Self {
            agents: t.agents(),
            edges: t.to_one_based(),
        }
    }
}

fn default_log_stride() -> usize {
    10
}

fn default_modulus_bits() -> u64 {
    crate::crypto::DEFAULT_MODULUS_BITS
}

fn default_weight_attempts() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub problem: ProblemParams,
    pub delta: f64,
    pub attenuation: AttenuationSchedule,
    pub stepsize: StepsizeSchedule,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    pub crypto_mode: CryptoMode,
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u64,
    #[serde(default = "default_log_stride")]
    pub log_stride: usize,
    /// Bound on `|Q(x)|`; defaults to `⌈10⁶/δ⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_clamp: Option<i64>,
    /// Weight draws are repeated until `I + W` is non-expansive; this caps the
    /// number of draws.
    #[serde(default = "default_weight_attempts")]
    pub weight_attempts: usize,
}

impl ExperimentConfig {
    /// Five-agent benchmark at desk scale.
    pub fn reference(algorithm: Algorithm) -> Self {
        Self {
            topology: (&Topology::default_five()).into(),
            problem: ProblemParams::reference(),
            delta: 0.1,
            attenuation: AttenuationSchedule::reference(),
            stepsize: StepsizeSchedule::reference(),
            algorithm,
            iterations: 5000,
            trials: 50,
            seed: 20240917,
            crypto_mode: CryptoMode::FastPath,
            modulus_bits: default_modulus_bits(),
            log_stride: default_log_stride(),
            state_clamp: None,
            weight_attempts: default_weight_attempts(),
        }
    }

    pub fn state_clamp(&self) -> i64 {
        self.state_clamp.unwrap_or_else(|| default_state_clamp(self.delta))
    }

    pub fn validate(&self) -> Result<()> {
        let topology = self.topology.build()?;
        if !topology.is_connected() {
            return Err(crate::error::Error::Disconnected);
        }
        self.problem.validate()?;
        weight_grid_size(self.delta)?;
        self.attenuation.validate()?;
        self.stepsize.validate()?;
        if self.trials == 0 {
            return Err(invalid("need at least one trial"));
        }
        if self.log_stride == 0 {
            return Err(invalid("log_stride must be positive"));
        }
        if self.weight_attempts == 0 {
            return Err(invalid("weight_attempts must be positive"));
        }
        if self.state_clamp() <= 0 {
            return Err(invalid("state_clamp must be positive"));
        }
        if self.crypto_mode == CryptoMode::Encrypted
            && (self.modulus_bits < MIN_MODULUS_BITS || !self.modulus_bits.is_multiple_of(2))
        {
            return Err(invalid(format!(
                "modulus_bits must be even and at least {MIN_MODULUS_BITS}"
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
