use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics;
use crate::crypto::{keygen, KeyPair};
use crate::error::{Error, Result};
use crate::graph::{Topology, WeightDecomposition};
use crate::linalg::norm_sq;
use crate::problem::{generate_problem, EstimationProblem};
use crate::protocol::{
    Algorithm, CryptoMode, Network, NetworkSetup, OracleIterate, Reparametrization, StepRecord, Transcript,
    TranscriptMeta,
};
use crate::rng::{experiment_stream, Purpose, Streams};

/// Per-iteration metrics of one trial, each of length `iterations + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    /// `Σᵢ‖xᵢᵏ - x*‖²`
    pub mse: Vec<f64>,
    /// `Σᵢ‖xᵢᵏ - x̄ᵏ‖²`
    pub consensus: Vec<f64>,
    /// `(1/n) Σᵢ‖ξᵢᵏ‖²`
    pub xi_sq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrialOptions {
    pub reparam: Reparametrization,
    /// Keep the transcript, step records and trajectory.
    pub record: bool,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub result: TrialResult,
    pub weights: WeightDecomposition,
    pub transcript: Option<Transcript>,
    pub steps: Vec<StepRecord>,
    /// `xᵏ` for `k = 0..=K` (recorded runs only).
    pub trajectory: Vec<Vec<Vec<f64>>>,
}

/// Problem instance and its optimum, shared by all trials and algorithms of
/// an experiment.
#[derive(Debug, Clone)]
pub struct SharedProblem {
    pub problem: EstimationProblem,
    pub optimum: Vec<f64>,
}

pub fn shared_problem(config: &ExperimentConfig) -> Result<SharedProblem> {
    let problem = generate_problem(
        config.topology.agents,
        &config.problem,
        &mut experiment_stream(config.seed, Purpose::Problem),
    )?;
    let optimum = problem.optimum()?;
    Ok(SharedProblem { problem, optimum })
}

/// Coupling-weight factors of a trial, redrawn until `I + W` is
/// non-expansive.
pub fn trial_weights(config: &ExperimentConfig, topology: &Topology, trial: u64) -> Result<WeightDecomposition> {
    let streams = Streams::new(config.seed, trial);
    WeightDecomposition::sample_admissible(
        topology,
        config.delta,
        1.0,
        config.weight_attempts,
        &mut streams.global(Purpose::Weights),
    )
}

/// `xᵢ⁰` uniform on `[-1, 1]ᵈ`.
pub fn initial_states(config: &ExperimentConfig, trial: u64) -> Vec<Vec<f64>> {
    let streams = Streams::new(config.seed, trial);
    (0..config.topology.agents)
        .map(|i| {
            let mut r = streams.agent(Purpose::InitialState, i);
            (0..config.problem.dim).map(|_| r.gen_range(-1.0..=1.0)).collect()
        })
        .collect()
}

pub fn trial_keys(config: &ExperimentConfig, trial: u64) -> Result<Vec<KeyPair>> {
    let streams = Streams::new(config.seed, trial);
    (0..config.topology.agents)
        .into_par_iter()
        .map(|i| keygen(config.modulus_bits, streams.agent_seed(Purpose::Keygen, i)))
        .collect()
}

pub fn run_trial(config: &ExperimentConfig, trial: u64) -> Result<TrialResult> {
    config.validate()?;
    let shared = shared_problem(config)?;
    Ok(run_prepared(config, &shared, trial, TrialOptions::default())?.result)
}

pub fn run_trial_recorded(config: &ExperimentConfig, trial: u64, reparam: Reparametrization) -> Result<TrialRun> {
    config.validate()?;
    let shared = shared_problem(config)?;
    run_prepared(
        config,
        &shared,
        trial,
        TrialOptions {
            reparam,
            record: true,
        },
    )
}

/// Run one trial on an already generated problem. Errors carry the trial
/// index.
pub fn run_prepared(config: &ExperimentConfig, shared: &SharedProblem, trial: u64, options: TrialOptions) -> Result<TrialRun> {
    execute(config, shared, trial, options).map_err(|e| Error::TrialAborted {
        trial,
        source: Box::new(e),
    })
}

fn mean_sq(xi: &[Vec<f64>]) -> f64 {
    xi.iter().map(|v| norm_sq(v)).sum::<f64>() / xi.len().max(1) as f64
}

fn execute(config: &ExperimentConfig, shared: &SharedProblem, trial: u64, options: TrialOptions) -> Result<TrialRun> {
    let topology = config.topology.build()?;
    let streams = Streams::new(config.seed, trial);
    let weights = trial_weights(config, &topology, trial)?;
    let keys = match config.crypto_mode {
        CryptoMode::Encrypted => Some(trial_keys(config, trial)?),
        CryptoMode::FastPath => None,
    };
    let mut net = Network::new(NetworkSetup {
        topology: topology.clone(),
        weights: weights.clone(),
        initial: initial_states(config, trial),
        state_clamp: config.state_clamp(),
        keys,
    })?;
    let problem = &shared.problem;
    let k_max = config.iterations;
    let baseline = config.algorithm == Algorithm::Baseline;
    let alpha = |k: usize| config.stepsize.moments(k).mean;
    let gamma = |k: usize| match config.algorithm {
        Algorithm::Proposed => config.attenuation.gamma_at(k),
        Algorithm::NoAttenuation | Algorithm::Baseline => 1.0,
    };

    let mut transcript = options.record.then(|| {
        let mut t = Transcript::new(TranscriptMeta {
            algorithm: config.algorithm,
            crypto_mode: config.crypto_mode,
            agents: topology.agents(),
            dim: net.dim(),
            delta: config.delta,
            edges: topology.to_one_based(),
            iterations: k_max,
            public_weights: baseline.then(|| net.weight_matrix().matrix().clone()),
            public_stepsizes: baseline.then(|| (0..k_max).map(alpha).collect()),
        });
        for m in net.key_distribution() {
            t.push(m);
        }
        t
    });
    let mut result = TrialResult {
        trial,
        mse: Vec::with_capacity(k_max + 1),
        consensus: Vec::with_capacity(k_max + 1),
        xi_sq: Vec::with_capacity(k_max + 1),
    };
    let mut steps = Vec::new();
    let mut trajectory = Vec::new();

    for k in 0..=k_max {
        let states = net.states();
        result.mse.push(metrics::mse(&states, &shared.optimum)?);
        result.consensus.push(metrics::consensus_error(&states)?);
        if k == k_max {
            result.xi_sq.push(if baseline { 0.0 } else { mean_sq(&net.probe(k, &streams)?) });
            if let Some(t) = transcript.as_mut() {
                if baseline {
                    for m in net.broadcast_states(k) {
                        t.push(m);
                    }
                }
                t.push_oracle(OracleIterate {
                    k,
                    gamma: gamma(k),
                    states: states.clone(),
                    replies: Vec::new(),
                });
            }
            if options.record {
                trajectory.push(states);
            }
            break;
        }
        let rec = if baseline {
            net.step_baseline(k, alpha(k), problem, &streams)?
        } else {
            net.step_proposed(k, gamma(k), problem, &config.stepsize, options.reparam, &streams)?
        };
        result.xi_sq.push(mean_sq(&rec.xi));
        if options.record {
            let t = transcript.as_mut().expect("recording");
            for m in &rec.messages {
                t.push(m.clone());
            }
            t.push_oracle(OracleIterate {
                k,
                gamma: rec.gamma,
                states: rec.states.clone(),
                replies: rec.replies.clone(),
            });
            trajectory.push(states);
            steps.push(rec);
        }
    }
    if let Some(t) = transcript.as_mut() {
        t.set_oracle_weights(weights.clone());
    }
    Ok(TrialRun {
        result,
        weights,
        transcript,
        steps,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm, iterations: usize) -> ExperimentConfig {
        ExperimentConfig {
            iterations,
            trials: 1,
            ..ExperimentConfig::reference(algorithm)
        }
    }

    #[test]
    fn deterministic_per_trial() {
        let c = small(Algorithm::Proposed, 30);
        let a = run_trial(&c, 3).unwrap();
        assert_eq!(a, run_trial(&c, 3).unwrap());
        assert_ne!(a.mse, run_trial(&c, 4).unwrap().mse);
        assert_eq!(a.mse.len(), 31);
        assert_eq!(a.xi_sq.len(), 31);
    }

    #[test]
    fn zero_iterations() {
        for alg in [Algorithm::Proposed, Algorithm::Baseline] {
            let r = run_trial(&small(alg, 0), 0).unwrap();
            assert_eq!((r.mse.len(), r.consensus.len(), r.xi_sq.len()), (1, 1, 1));
        }
    }

    #[test]
    fn algorithms_share_problem_and_initial_state() {
        let a = run_trial(&small(Algorithm::Proposed, 0), 1).unwrap();
        let b = run_trial(&small(Algorithm::Baseline, 0), 1).unwrap();
        assert_eq!(a.mse[0], b.mse[0]);
        assert_eq!(a.consensus[0], b.consensus[0]);
    }

    #[test]
    fn proposed_makes_progress() {
        let r = run_trial(&small(Algorithm::Proposed, 2000), 0).unwrap();
        assert!(r.mse[2000] < r.mse[100], "{} vs {}", r.mse[2000], r.mse[100]);
        assert!(r.mse.iter().chain(&r.consensus).chain(&r.xi_sq).all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn recorded_run_has_full_transcript() {
        let run = run_trial_recorded(&small(Algorithm::Proposed, 5), 0, Reparametrization::default()).unwrap();
        let t = run.transcript.unwrap();
        // 6 edges → 12 requests and 12 replies per iteration, no keys on the fast path
        assert_eq!(t.messages().len(), 5 * 24);
        assert_eq!(t.oracle().len(), 6);
        assert_eq!(run.trajectory.len(), 6);
        assert_eq!(run.steps.len(), 5);
        assert!(t.oracle_weights().is_some());
    }

    #[test]
    fn baseline_transcript_broadcasts_every_state() {
        let run = run_trial_recorded(&small(Algorithm::Baseline, 4), 0, Reparametrization::default()).unwrap();
        let t = run.transcript.unwrap();
        assert_eq!(t.messages().len(), 5 * 5);
        assert_eq!(t.meta().public_stepsizes.as_ref().unwrap().len(), 4);
        assert!(run.result.xi_sq.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn abort_reports_trial() {
        let mut c = small(Algorithm::Proposed, 3);
        c.state_clamp = Some(2);
        match run_trial(&c, 7) {
            Err(Error::TrialAborted { trial: 7, source }) => assert!(matches!(*source, Error::StateClamp { .. })),
            other => panic!("{other:?}"),
        }
    }
}
