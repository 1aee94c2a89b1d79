//! Privacy-preserving distributed SGD over Paillier-encrypted pairwise
//! exchanges, with a plaintext DSGD baseline, gradient-inference attacks and
//! a multi-trial experiment harness.

pub mod adversary;
pub mod crypto;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod problem;
pub mod protocol;
pub mod quantize;
pub mod rng;
pub mod schedules;

pub use adversary::{AmbiguityCertificate, BaselineAttack, EquivalenceReport, OracleGrant, ProposedAttack};
pub use crypto::{Ciphertext, KeyPair, PublicKey};
pub use error::{Error, Result};
pub use graph::{Spectrum, Topology, WeightDecomposition, WeightMatrix};
pub use harness::{ExperimentConfig, ExperimentSummary, TrialResult};
pub use linalg::Matrix;
pub use problem::{EstimationProblem, GradientSample, ProblemParams};
pub use protocol::{Algorithm, CryptoMode, Reparametrization, ScaledVector, Transcript, WireMessage};
pub use quantize::QuantizedVector;
pub use schedules::{AttenuationSchedule, ScheduleReport, StepsizeSchedule};
