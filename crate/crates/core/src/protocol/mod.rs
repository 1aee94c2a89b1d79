//! Pairwise encrypted exchange and the three update rules.
//!
//! One iteration of the proposed algorithm at agent `i`:
//!
//! 1. draw `Q(-xᵢ)` and `Q(xᵢ)` once,
//! 2. send `E_i(Q(-xᵢ))` to every neighbour `j`,
//! 3. `j` replies with `Q(w_{j→i})·(E_i(Q(xⱼ)) ⊕ E_i(Q(-xᵢ)))`,
//! 4. `i` decrypts, multiplies by `Q(w_{i→j})` and rescales by `δ³`,
//! 5. `xᵢ ← xᵢ + γ·Σⱼ termⱼ - Λᵢ∘gᵢ`.
//!
//! The fast path runs steps 2-4 on plain integers. Both paths compute the same
//! integers, so trajectories agree bit for bit.

mod exchange;
mod network;
mod wire;

use serde::{Deserialize, Serialize};

pub use exchange::{
    consensus_value, finalize, prepare_request, respond, AgentState, ConsensusTerm, IterationQuantization,
};
pub use network::{
    baseline_mixing, default_state_clamp, quantization_error, Network, NetworkSetup, StepRecord,
};
pub use wire::{
    MessageKind, OracleIterate, Payload, PlaintextEntry, ReplyPlaintext, Transcript, TranscriptMeta, WireMessage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Encrypted exchange with attenuation `γᵏ` and heterogeneous stepsizes.
    Proposed,
    /// Same exchange with `γᵏ = 1`.
    NoAttenuation,
    /// Plaintext DSGD with a shared stepsize.
    Baseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Proposed => "proposed",
            Algorithm::NoAttenuation => "no_attenuation",
            Algorithm::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CryptoMode {
    Encrypted,
    FastPath,
}

/// A vector stored as `mantissa · e^{log_scale}`.
///
/// Stepsizes and gradients are carried in this form so that reparametrising
/// `(Λ, g)` as `(e^{-ζ}Λ, e^{ζ}g)` leaves the product bit-identical: the
/// exponents cancel exactly before anything is rounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledVector {
    pub mantissa: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledVector {
    pub fn new(mantissa: Vec<f64>) -> Self {
        Self { mantissa, log_scale: 0.0 }
    }

    pub fn rescaled(mut self, by: f64) -> Self {
        self.log_scale += by;
        self
    }

    pub fn len(&self) -> usize {
        self.mantissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissa.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.mantissa.iter().map(|m| m * s).collect()
    }

    /// Componentwise product `self ∘ other`.
    pub fn hadamard(&self, other: &ScaledVector) -> Vec<f64> {
        let s = (self.log_scale + other.log_scale).exp();
        self.mantissa
            .iter()
            .zip(&other.mantissa)
            .map(|(a, b)| a * b * s)
            .collect()
    }
}

/// Log-scale offsets applied to every `Λᵢᵏ` and `gᵢᵏ` of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Reparametrization {
    pub stepsize_log: f64,
    pub gradient_log: f64,
}

impl Reparametrization {
    /// `(e^{-ζ}Λ, e^{ζ}g)`.
    pub fn balanced(zeta: f64) -> Self {
        Self {
            stepsize_log: -zeta,
            gradient_log: zeta,
        }
    }

    /// `(e^{-ζ}Λ, g)`; changes the product.
    pub fn stepsize_only(zeta: f64) -> Self {
        Self {
            stepsize_log: -zeta,
            gradient_log: 0.0,
        }
    }
}
