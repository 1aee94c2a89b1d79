//! Eavesdropper attacks on recorded transcripts.
//!
//! The baseline leaks gradients outright: with `W` and `αᵏ` public, the
//! attacker recomputes the mixing step from broadcast states and divides
//! the residual by `αᵏ`.
//!
//! For the proposed algorithm a passive eavesdropper sees only ciphertexts.
//! Granting it the decrypted contents, the weight factors and `γᵏ` lets it
//! recover `rᵢᵏ = Λᵢᵏgᵢᵏ`, but every `(e^{-ζ}Λᵢᵏ, e^{ζ}gᵢᵏ)` explains the
//! transcript equally well. The certificate returned here is that scalar
//! family. The true set of explanations is larger (one scale per
//! coordinate). Scaling by a positive factor does not hide the sign of each
//! coordinate, so the gradient's orthant remains visible.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{Topology, WeightMatrix};
use crate::harness::{run_trial_recorded, ExperimentConfig};
use crate::protocol::{
    baseline_mixing, consensus_value, Algorithm, MessageKind, Payload, Reparametrization, ScaledVector, Transcript,
};

/// Per-iteration, per-agent vectors: `values[k][i]`.
pub type Series = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineAttack {
    /// `ĝᵢᵏ`
    pub gradients: Series,
}

impl BaselineAttack {
    /// Largest per-coordinate deviation from `truth[k][i]`.
    pub fn max_error(&self, truth: &Series) -> Result<f64> {
        max_abs_diff(&self.gradients, truth)
    }
}

pub(crate) fn max_abs_diff(a: &Series, b: &Series) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut worst = 0.0_f64;
    for (ak, bk) in a.iter().zip(b) {
        for (x, y) in ak.iter().zip(bk) {
            if x.len() != y.len() {
                return Err(Error::Shape {
                    expected: x.len(),
                    got: y.len(),
                });
            }
            for (u, v) in x.iter().zip(y) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Ok(worst)
}

fn topology_of(t: &Transcript) -> Result<Topology> {
    Topology::from_one_based(t.meta().agents, &t.meta().edges)
}

/// Broadcast states `x[k][i]` for `k = 0..=K`.
fn broadcast_states(t: &Transcript) -> Result<Series> {
    let m = t.meta();
    let mut states: Series = vec![vec![Vec::new(); m.agents]; m.iterations + 1];
    let mut seen = vec![vec![false; m.agents]; m.iterations + 1];
    for msg in t.messages().iter().filter(|m| m.kind == MessageKind::State) {
        let Payload::State(x) = &msg.payload else {
            return Err(Error::Protocol("state message without state payload".into()));
        };
        if msg.k > m.iterations || msg.from >= m.agents {
            return Err(Error::Protocol(format!("state message ({}, {}) out of range", msg.from, msg.k)));
        }
        states[msg.k][msg.from] = x.clone();
        seen[msg.k][msg.from] = true;
    }
    if let Some(k) = seen.iter().position(|row| row.iter().any(|s| !s)) {
        return Err(Error::Protocol(format!("missing state broadcast at iteration {k}")));
    }
    Ok(states)
}

/// `ĝᵢᵏ = (xᵢᵏ + Σⱼwᵢⱼ(xⱼᵏ - xᵢᵏ) - xᵢᵏ⁺¹)/αᵏ`.
pub fn attack_baseline(transcript: &Transcript, w: &WeightMatrix, alpha: &[f64]) -> Result<BaselineAttack> {
    let topology = topology_of(transcript)?;
    let states = broadcast_states(transcript)?;
    let k_max = transcript.meta().iterations;
    if alpha.len() < k_max {
        return Err(Error::Shape {
            expected: k_max,
            got: alpha.len(),
        });
    }
    let mut gradients = Vec::with_capacity(k_max);
    for k in 0..k_max {
        if !(alpha[k].is_finite() && alpha[k] != 0.0) {
            return Err(Error::DegenerateStepsize { k });
        }
        gradients.push(
            (0..topology.agents())
                .map(|i| {
                    let mixed = baseline_mixing(i, &states[k], &topology, w);
                    mixed
                        .iter()
                        .zip(&states[k + 1][i])
                        .map(|(m, next)| (m - next) / alpha[k])
                        .collect()
                })
                .collect(),
        );
    }
    Ok(BaselineAttack { gradients })
}

/// Baseline attack using the weights and stepsizes published in the
/// transcript header.
pub fn attack_baseline_public(transcript: &Transcript) -> Result<BaselineAttack> {
    let m = transcript.meta();
    let w = m
        .public_weights
        .clone()
        .ok_or_else(|| invalid("transcript does not publish W"))?;
    let alpha = m
        .public_stepsizes
        .as_ref()
        .ok_or_else(|| invalid("transcript does not publish the stepsizes"))?;
    attack_baseline(transcript, &WeightMatrix::from_matrix(w)?, alpha)
}

/// Information granted to the attacker beyond the raw transcript.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleGrant {
    /// Decrypted message contents and exact iterates.
    pub plaintexts: bool,
    /// Every weight factor `Q(w_{i→j})`.
    pub weights: bool,
    /// The attenuation sequence `γᵏ`.
    pub gamma: bool,
}

impl OracleGrant {
    pub fn all() -> Self {
        Self {
            plaintexts: true,
            weights: true,
            gamma: true,
        }
    }

    pub fn parse(list: &str) -> Result<Self> {
        let mut g = Self::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "plaintexts" => g.plaintexts = true,
                "weights" => g.weights = true,
                "gamma" => g.gamma = true,
                other => return Err(invalid(format!("unknown extra '{other}'"))),
            }
        }
        Ok(g)
    }

    fn missing(&self) -> Vec<String> {
        [(self.plaintexts, "plaintexts"), (self.weights, "weights"), (self.gamma, "gamma")]
            .iter()
            .filter(|(granted, _)| !granted)
            .map(|(_, n)| n.to_string())
            .collect()
    }
}

/// The family `{(e^{-ζ}Λ₀, e^{ζ}g₀)}` explaining one observed product, with
/// `Λ₀ = 1` and `g₀ = r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityCertificate {
    pub k: usize,
    pub agent: usize,
    pub product: Vec<f64>,
}

impl AmbiguityCertificate {
    /// A zero product is the same under every scaling, so the gradient is
    /// identified exactly.
    pub fn is_degenerate(&self) -> bool {
        self.product.iter().all(|v| *v == 0.0)
    }

    pub fn member(&self, zeta: f64) -> (ScaledVector, ScaledVector) {
        let lam = ScaledVector::new(vec![1.0; self.product.len()]).rescaled(-zeta);
        let g = ScaledVector::new(self.product.clone()).rescaled(zeta);
        (lam, g)
    }

    /// Gradient hypothesis for scale `ζ`.
    pub fn gradient(&self, zeta: f64) -> Vec<f64> {
        self.member(zeta).1.values()
    }

    /// Whether the `ζ` member reproduces the observed product bit for bit.
    pub fn reproduces(&self, zeta: f64) -> bool {
        let (lam, g) = self.member(zeta);
        lam.hadamard(&g) == self.product
    }

    /// Coordinate signs of `g`, which every member shares.
    pub fn sign_pattern(&self) -> Vec<i8> {
        self.product
            .iter()
            .map(|v| if *v > 0.0 { 1 } else if *v < 0.0 { -1 } else { 0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProposedAttack {
    /// Only ciphertexts observed; nothing is recovered.
    CiphertextOnly { messages_observed: usize },
    /// Some extras granted, but not enough to isolate `Λg`.
    Insufficient { missing: Vec<String> },
    /// `certificates[k][i]`.
    Recovered { certificates: Vec<Vec<AmbiguityCertificate>> },
}

impl ProposedAttack {
    pub fn products(&self) -> Option<Series> {
        match self {
            ProposedAttack::Recovered { certificates } => Some(
                certificates
                    .iter()
                    .map(|row| row.iter().map(|c| c.product.clone()).collect())
                    .collect(),
            ),
            _ => None,
        }
    }
}

/// Recover `rᵢᵏ = xᵢᵏ + γᵏΣⱼtermᵢⱼ - xᵢᵏ⁺¹` from granted extras.
pub fn attack_proposed(transcript: &Transcript, grant: OracleGrant) -> Result<ProposedAttack> {
    if grant == OracleGrant::default() {
        return Ok(ProposedAttack::CiphertextOnly {
            messages_observed: transcript.messages().len(),
        });
    }
    let missing = grant.missing();
    if !missing.is_empty() {
        return Ok(ProposedAttack::Insufficient { missing });
    }
    let meta = transcript.meta();
    let weights = transcript
        .oracle_weights()
        .ok_or_else(|| Error::Protocol("transcript carries no weight oracle".into()))?;
    let topology = topology_of(transcript)?;
    let oracle = transcript.oracle();
    if oracle.len() != meta.iterations + 1 {
        return Err(Error::Protocol(format!(
            "expected {} oracle records, found {}",
            meta.iterations + 1,
            oracle.len()
        )));
    }
    let d = meta.dim;
    let mut certificates = Vec::with_capacity(meta.iterations);
    for w in oracle.windows(2) {
        let (now, next) = (&w[0], &w[1]);
        let mut sums = vec![vec![0.0; d]; meta.agents];
        let mut replies: Vec<_> = now.replies.iter().collect();
        replies.sort_by_key(|r| (r.requester, r.responder));
        for r in replies {
            let steps = weights
                .steps(r.requester, r.responder)
                .ok_or(Error::IncompleteDecomposition {
                    from: r.requester,
                    to: r.responder,
                })?;
            for (s, &v) in sums[r.requester].iter_mut().zip(&r.values) {
                *s += consensus_value(meta.delta, i128::from(steps) * i128::from(v));
            }
        }
        let row = (0..topology.agents())
            .map(|i| AmbiguityCertificate {
                k: now.k,
                agent: i,
                product: (0..d)
                    .map(|l| (now.states[i][l] + now.gamma * sums[i][l]) - next.states[i][l])
                    .collect(),
            })
            .collect();
        certificates.push(row);
    }
    Ok(ProposedAttack::Recovered { certificates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// First iteration whose states differ, if any.
    pub first_divergence: Option<usize>,
    pub max_state_difference: f64,
    pub transcripts_identical: bool,
}

/// Run two trials with the same seed, the second with `reparam` applied to
/// every `(Λᵢᵏ, gᵢᵏ)`, and compare trajectories bit for bit.
pub fn reparametrization_equivalence(config: &ExperimentConfig, reparam: Reparametrization, seed: u64) -> Result<EquivalenceReport> {
    if config.algorithm == Algorithm::Baseline {
        return Err(invalid("the baseline has no heterogeneous stepsizes to rescale"));
    }
    if !(reparam.stepsize_log.is_finite() && reparam.gradient_log.is_finite()) {
        return Err(invalid("scaling exponents must be finite"));
    }
    let config = ExperimentConfig {
        seed,
        ..config.clone()
    };
    let a = run_trial_recorded(&config, 0, Reparametrization::default())?;
    let b = run_trial_recorded(&config, 0, reparam)?;
    let first_divergence = a.trajectory.iter().zip(&b.trajectory).position(|(x, y)| x != y);
    let max_state_difference = max_abs_diff(&a.trajectory, &b.trajectory)?;
    let ta = a.transcript.as_ref().expect("recorded");
    let tb = b.transcript.as_ref().expect("recorded");
    let transcripts_identical = ta.plaintext_view() == tb.plaintext_view() && ta.messages() == tb.messages();
    Ok(EquivalenceReport {
        equivalent: first_divergence.is_none() && a.trajectory.len() == b.trajectory.len() && transcripts_identical,
        first_divergence,
        max_state_difference,
        transcripts_identical,
    })
}

/// `(Λ, g) → (e^{-ζ}Λ, e^{ζ}g)`.
pub fn scaling_equivalence(config: &ExperimentConfig, zeta: f64, seed: u64) -> Result<EquivalenceReport> {
    if !(zeta.is_finite() && zeta >= 0.0) {
        return Err(invalid(format!("zeta must be finite and non-negative, got {zeta}")));
    }
    reparametrization_equivalence(config, Reparametrization::balanced(zeta), seed)
}

/// Control: `(Λ, g) → (e^{-ζ}Λ, g)`, which should change the trajectory.
pub fn scaling_control(config: &ExperimentConfig, zeta: f64, seed: u64) -> Result<EquivalenceReport> {
    reparametrization_equivalence(config, Reparametrization::stepsize_only(zeta), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::TrialRun;

    fn cfg(algorithm: Algorithm, iterations: usize) -> ExperimentConfig {
        ExperimentConfig {
            iterations,
            trials: 1,
            ..ExperimentConfig::reference(algorithm)
        }
    }

    fn truth(run: &TrialRun, f: impl Fn(&crate::protocol::StepRecord) -> Series) -> Series {
        run.steps.iter().flat_map(f).collect()
    }

    fn gradients(run: &TrialRun) -> Series {
        truth(run, |s| vec![s.gradients.iter().map(ScaledVector::values).collect()])
    }

    #[test]
    fn baseline_gradients_are_recovered() {
        let run = run_trial_recorded(&cfg(Algorithm::Baseline, 60), 0, Reparametrization::default()).unwrap();
        let t = run.transcript.as_ref().unwrap();
        let attack = attack_baseline_public(t).unwrap();
        assert!(attack.max_error(&gradients(&run)).unwrap() <= 1e-10);
    }

    #[test]
    fn baseline_attack_rejects_zero_stepsize() {
        let run = run_trial_recorded(&cfg(Algorithm::Baseline, 3), 0, Reparametrization::default()).unwrap();
        let t = run.transcript.as_ref().unwrap();
        let w = WeightMatrix::from_matrix(t.meta().public_weights.clone().unwrap()).unwrap();
        assert!(matches!(
            attack_baseline(t, &w, &[0.1, 0.0, 0.1]),
            Err(Error::DegenerateStepsize { k: 1 })
        ));
    }

    #[test]
    fn proposed_layers() {
        let run = run_trial_recorded(&cfg(Algorithm::Proposed, 40), 0, Reparametrization::default()).unwrap();
        let t = run.transcript.as_ref().unwrap();
        assert!(matches!(
            attack_proposed(t, OracleGrant::default()).unwrap(),
            ProposedAttack::CiphertextOnly { messages_observed: 960 }
        ));
        let partial = OracleGrant::parse("plaintexts,weights").unwrap();
        assert!(matches!(
            attack_proposed(t, partial).unwrap(),
            ProposedAttack::Insufficient { missing } if missing == vec!["gamma".to_string()]
        ));
        let full = attack_proposed(t, OracleGrant::all()).unwrap();
        let recovered = full.products().unwrap();
        let logged = truth(&run, |s| vec![s.products.clone()]);
        assert!(max_abs_diff(&recovered, &logged).unwrap() <= 1e-10);

        let ProposedAttack::Recovered { certificates } = full else { unreachable!() };
        let c = &certificates[7][2];
        assert!(!c.is_degenerate());
        for zeta in [0.0, 0.5, 3.0] {
            assert!(c.reproduces(zeta));
        }
        let (g1, g2) = (c.gradient(0.2), c.gradient(1.2));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b / a - 1.0f64.exp()).abs() < 1e-12);
        }
        let true_g = run.steps[7].gradients[2].values();
        let signs: Vec<i8> = true_g.iter().map(|v| v.signum() as i8).collect();
        assert_eq!(c.sign_pattern(), signs);
    }

    #[test]
    fn zero_product_is_degenerate() {
        let c = AmbiguityCertificate {
            k: 0,
            agent: 0,
            product: vec![0.0, 0.0],
        };
        assert!(c.is_degenerate() && c.reproduces(4.0));
        assert_eq!(c.gradient(4.0), vec![0.0, 0.0]);
    }

    #[test]
    fn grant_parsing() {
        assert_eq!(OracleGrant::parse("plaintexts, weights,gamma").unwrap(), OracleGrant::all());
        assert_eq!(OracleGrant::parse("").unwrap(), OracleGrant::default());
        assert!(OracleGrant::parse("keys").is_err());
    }

    #[test]
    fn scaling_is_invisible_and_control_is_not() {
        let c = cfg(Algorithm::Proposed, 60);
        for zeta in [0.0, 1.0] {
            let r = scaling_equivalence(&c, zeta, 11).unwrap();
            assert!(r.equivalent, "{r:?}");
        }
        let ctl = scaling_control(&c, 1.0, 11).unwrap();
        assert!(!ctl.equivalent);
        assert!(ctl.first_divergence.is_some() && ctl.max_state_difference > 0.0);
        assert!(scaling_equivalence(&c, f64::NAN, 0).is_err());
        assert!(scaling_equivalence(&cfg(Algorithm::Baseline, 5), 1.0, 0).is_err());
    }
}
