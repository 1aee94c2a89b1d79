use std::collections::BTreeMap;

use super::exchange::{finalize, prepare_request, respond, AgentState, ConsensusTerm};
use super::wire::{MessageKind, Payload, ReplyPlaintext, WireMessage};
use super::{CryptoMode, Reparametrization, ScaledVector};
use crate::crypto::KeyPair;
use crate::error::{invalid, Error, Result};
use crate::graph::{assemble_weight_matrix, Topology, WeightDecomposition, WeightMatrix};
use crate::problem::EstimationProblem;
use crate::rng::{Purpose, StreamRng, Streams};
use crate::schedules::StepsizeSchedule;

/// `⌈10⁶/δ⌉`.
pub fn default_state_clamp(delta: f64) -> i64 {
    (1e6 / delta).ceil() as i64
}

pub struct NetworkSetup {
    pub topology: Topology,
    pub weights: WeightDecomposition,
    pub initial: Vec<Vec<f64>>,
    pub state_clamp: i64,
    /// One key pair per agent for the encrypted path, `None` for the fast path.
    pub keys: Option<Vec<KeyPair>>,
}

/// Everything observable or computed during one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub gamma: f64,
    /// `xᵏ` before the update.
    pub states: Vec<Vec<f64>>,
    pub messages: Vec<WireMessage>,
    pub replies: Vec<ReplyPlaintext>,
    /// `Σⱼ termᵢⱼ` per agent (before `γ`).
    pub consensus: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub stepsizes: Vec<ScaledVector>,
    pub gradients: Vec<ScaledVector>,
    /// `Λᵢᵏ∘gᵢᵏ`, or `αᵏgᵢᵏ` for the baseline.
    pub products: Vec<Vec<f64>>,
}

pub struct Network {
    topology: Topology,
    weights: WeightDecomposition,
    matrix: WeightMatrix,
    agents: Vec<AgentState>,
    delta: f64,
    dim: usize,
}

struct Exchange {
    messages: Vec<WireMessage>,
    replies: Vec<ReplyPlaintext>,
    terms: Vec<Vec<ConsensusTerm>>,
}

/// `ξᵢ = Σⱼ termᵢⱼ - Σⱼ wᵢⱼ(xⱼ - xᵢ)`.
pub fn quantization_error(i: usize, terms: &[ConsensusTerm], states: &[Vec<f64>], w: &WeightMatrix) -> Vec<f64> {
    let d = states[i].len();
    let mut xi = vec![0.0; d];
    for t in terms {
        let wij = w.get(i, t.neighbor);
        for l in 0..d {
            xi[l] += t.value[l] - wij * (states[t.neighbor][l] - states[i][l]);
        }
    }
    xi
}

impl Network {
    pub fn new(setup: NetworkSetup) -> Result<Self> {
        let NetworkSetup {
            topology,
            weights,
            initial,
            state_clamp,
            keys,
        } = setup;
        let n = topology.agents();
        if initial.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: initial.len(),
            });
        }
        let dim = initial.first().map_or(0, Vec::len);
        if let Some(x) = initial.iter().find(|x| x.len() != dim) {
            return Err(Error::Shape { expected: dim, got: x.len() });
        }
        let delta = weights.delta();
        let matrix = assemble_weight_matrix(&topology, &weights)?;
        if let Some(k) = &keys {
            if k.len() != n {
                return Err(invalid("need one key pair per agent"));
            }
        }
        let mut agents = Vec::with_capacity(n);
        for (i, x) in initial.into_iter().enumerate() {
            let out: BTreeMap<usize, u32> = topology
                .neighbors(i)
                .into_iter()
                .map(|j| {
                    weights
                        .steps(i, j)
                        .map(|s| (j, s))
                        .ok_or(Error::IncompleteDecomposition { from: i, to: j })
                })
                .collect::<Result<_>>()?;
            let mut a = AgentState::new(i, x, out, delta, state_clamp)?;
            if let Some(keys) = &keys {
                a = a.with_keys(keys[i].clone());
            }
            agents.push(a);
        }
        if let Some(keys) = &keys {
            for (i, key) in keys.iter().enumerate() {
                for j in topology.neighbors(i) {
                    agents[j].learn_key(i, key.public_key().clone())?;
                }
            }
        }
        Ok(Self {
            topology,
            weights,
            matrix,
            agents,
            delta,
            dim,
        })
    }

    pub fn mode(&self) -> CryptoMode {
        if self.agents.first().is_some_and(AgentState::is_encrypted) {
            CryptoMode::Encrypted
        } else {
            CryptoMode::FastPath
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn weights(&self) -> &WeightDecomposition {
        &self.weights
    }

    /// Ground-truth `W`; not available to agents.
    pub fn weight_matrix(&self) -> &WeightMatrix {
        &self.matrix
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.x().to_vec()).collect()
    }

    /// Public-key announcements to every neighbour, sent before iteration 0.
    pub fn key_distribution(&self) -> Vec<WireMessage> {
        let mut out = Vec::new();
        for a in &self.agents {
            if let Some(pk) = a.public_key() {
                for &j in a.neighbors() {
                    out.push(WireMessage {
                        kind: MessageKind::Pubkey,
                        from: a.id(),
                        to: Some(j),
                        k: 0,
                        payload: Payload::Empty,
                        pubkey: Some(pk.modulus().clone()),
                    });
                }
            }
        }
        out
    }

    /// Plaintext state broadcasts of the baseline.
    pub fn broadcast_states(&self, k: usize) -> Vec<WireMessage> {
        self.agents
            .iter()
            .map(|a| WireMessage {
                kind: MessageKind::State,
                from: a.id(),
                to: None,
                k,
                payload: Payload::State(a.x().to_vec()),
                pubkey: None,
            })
            .collect()
    }

    /// Synchronous round: every agent quantizes, then all requests, then all
    /// replies, then all decryptions.
    fn exchange(&mut self, k: usize, streams: &Streams) -> Result<Exchange> {
        for a in &mut self.agents {
            let mut r = streams.step(Purpose::Quantize, a.id(), k);
            a.quantize(k, &mut r)?;
        }
        let encrypted = self.mode() == CryptoMode::Encrypted;
        let mut nonce: Vec<Option<StreamRng>> = (0..self.agents.len())
            .map(|i| encrypted.then(|| streams.step(Purpose::Nonce, i, k)))
            .collect();
        let mut fallback = streams.step(Purpose::Nonce, usize::MAX, k);
        let mut messages = Vec::new();
        let mut requests = Vec::new();
        for a in &self.agents {
            let r = nonce[a.id()].as_mut().unwrap_or(&mut fallback);
            for &j in a.neighbors() {
                requests.push(prepare_request(a, j, k, r)?);
            }
        }
        let mut replies_wire = Vec::with_capacity(requests.len());
        for req in &requests {
            let j = req.to.expect("requests are addressed");
            let r = nonce[j].as_mut().unwrap_or(&mut fallback);
            replies_wire.push(respond(&self.agents[j], req, r)?);
        }
        let mut terms: Vec<Vec<ConsensusTerm>> = vec![Vec::new(); self.agents.len()];
        let mut replies = Vec::with_capacity(replies_wire.len());
        for rep in &replies_wire {
            let i = rep.to.expect("replies are addressed");
            let t = finalize(&self.agents[i], rep, k)?;
            replies.push(ReplyPlaintext {
                requester: i,
                responder: rep.from,
                values: t.reply.clone(),
            });
            terms[i].push(t);
        }
        messages.extend(requests);
        messages.extend(replies_wire);
        Ok(Exchange {
            messages,
            replies,
            terms,
        })
    }

    /// Run the exchange of iteration `k` without updating states; used for
    /// end-of-run diagnostics.
    pub fn probe(&mut self, k: usize, streams: &Streams) -> Result<Vec<Vec<f64>>> {
        let states = self.states();
        let ex = self.exchange(k, streams)?;
        Ok((0..self.agents.len())
            .map(|i| quantization_error(i, &ex.terms[i], &states, &self.matrix))
            .collect())
    }

    /// `xᵢᵏ⁺¹ = xᵢᵏ + γ·Σⱼ termᵢⱼ - Λᵢᵏ∘gᵢᵏ`.
    pub fn step_proposed(
        &mut self,
        k: usize,
        gamma: f64,
        problem: &EstimationProblem,
        stepsize: &StepsizeSchedule,
        reparam: Reparametrization,
        streams: &Streams,
    ) -> Result<StepRecord> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!("attenuation must be positive, got {gamma}")));
        }
        let states = self.states();
        let n = self.agents.len();
        let ex = self.exchange(k, streams)?;
        let mut rec = StepRecord {
            k,
            gamma,
            states,
            messages: ex.messages,
            replies: ex.replies,
            consensus: Vec::with_capacity(n),
            xi: Vec::with_capacity(n),
            stepsizes: Vec::with_capacity(n),
            gradients: Vec::with_capacity(n),
            products: Vec::with_capacity(n),
        };
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let x = &rec.states[i];
            let mut sum = vec![0.0; self.dim];
            for t in &ex.terms[i] {
                for (s, v) in sum.iter_mut().zip(&t.value) {
                    *s += v;
                }
            }
            let lam = stepsize.sample(k, self.dim, &mut streams.step(Purpose::Stepsize, i, k))?;
            let g = problem.stochastic_gradient(i, x, &mut streams.step(Purpose::Gradient, i, k))?;
            let lam = ScaledVector::new(lam).rescaled(reparam.stepsize_log);
            let g = ScaledVector::new(g.vector).rescaled(reparam.gradient_log);
            let prod = lam.hadamard(&g);
            next.push(
                (0..self.dim)
                    .map(|l| x[l] + gamma * sum[l] - prod[l])
                    .collect::<Vec<_>>(),
            );
            rec.xi.push(quantization_error(i, &ex.terms[i], &rec.states, &self.matrix));
            rec.consensus.push(sum);
            rec.stepsizes.push(lam);
            rec.gradients.push(g);
            rec.products.push(prod);
        }
        for (a, x) in self.agents.iter_mut().zip(next) {
            a.set_x(x);
        }
        Ok(rec)
    }

    /// `xᵢᵏ⁺¹ = xᵢᵏ + Σⱼ wᵢⱼ(xⱼᵏ - xᵢᵏ) - αᵏgᵢᵏ` on exact plaintext states.
    pub fn step_baseline(&mut self, k: usize, alpha: f64, problem: &EstimationProblem, streams: &Streams) -> Result<StepRecord> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::DegenerateStepsize { k });
        }
        for a in &self.agents {
            a.check_clamp(k)?;
        }
        let states = self.states();
        let n = self.agents.len();
        let mut rec = StepRecord {
            k,
            gamma: 1.0,
            messages: self.broadcast_states(k),
            replies: Vec::new(),
            consensus: Vec::with_capacity(n),
            xi: vec![vec![0.0; self.dim]; n],
            stepsizes: Vec::with_capacity(n),
            gradients: Vec::with_capacity(n),
            products: Vec::with_capacity(n),
            states,
        };
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let x = &rec.states[i];
            let mixed = baseline_mixing(i, &rec.states, &self.topology, &self.matrix);
            let g = problem.stochastic_gradient(i, x, &mut streams.step(Purpose::Gradient, i, k))?;
            let prod: Vec<f64> = g.vector.iter().map(|v| alpha * v).collect();
            next.push(mixed.iter().zip(&prod).map(|(m, p)| m - p).collect::<Vec<_>>());
            rec.consensus.push(mixed.iter().zip(x).map(|(m, v)| m - v).collect());
            rec.stepsizes.push(ScaledVector::new(vec![alpha; self.dim]));
            rec.gradients.push(ScaledVector::new(g.vector));
            rec.products.push(prod);
        }
        for (a, x) in self.agents.iter_mut().zip(next) {
            a.set_x(x);
        }
        Ok(rec)
    }
}

/// `xᵢ + Σⱼ wᵢⱼ(xⱼ - xᵢ)` with neighbours summed in ascending order.
pub fn baseline_mixing(i: usize, states: &[Vec<f64>], topology: &Topology, w: &WeightMatrix) -> Vec<f64> {
    let x = &states[i];
    let mut sum = vec![0.0; x.len()];
    for j in topology.neighbors(i) {
        let wij = w.get(i, j);
        for (l, s) in sum.iter_mut().enumerate() {
            *s += wij * (states[j][l] - x[l]);
        }
    }
    x.iter().zip(&sum).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use crate::linalg::{norm_sq, Matrix};
    use crate::problem::{generate_problem, ProblemParams};
    use rand::SeedableRng;

    fn zero_problem(n: usize, d: usize) -> EstimationProblem {
        EstimationProblem::from_parts(
            vec![Matrix::zeros(1, d); n],
            vec![vec![vec![0.0]]; n],
            0.0,
            vec![0.0; d],
        )
        .unwrap()
    }

    fn reference_problem() -> EstimationProblem {
        generate_problem(5, &ProblemParams::reference(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn setup(topology: Topology, initial: Vec<Vec<f64>>, keys: bool) -> NetworkSetup {
        let weights = WeightDecomposition::sample(&topology, 0.1, &mut Streams::new(1, 0).global(Purpose::Weights)).unwrap();
        let n = topology.agents();
        NetworkSetup {
            topology,
            weights,
            initial,
            state_clamp: default_state_clamp(0.1),
            keys: keys.then(|| (0..n as u64).map(|s| keygen(256, s).unwrap()).collect()),
        }
    }

    #[test]
    fn grid_consensus_fixed_point() {
        let x = vec![vec![0.3, -0.7]; 5];
        let mut net = Network::new(setup(Topology::default_five(), x.clone(), false)).unwrap();
        let s = Streams::new(3, 0);
        let sched = StepsizeSchedule::reference();
        let p = zero_problem(5, 2);
        for k in 0..5 {
            let rec = net.step_proposed(k, 0.5, &p, &sched, Reparametrization::default(), &s).unwrap();
            assert!(rec.xi.iter().flatten().all(|&v| v == 0.0));
        }
        assert_eq!(net.states(), x);
    }

    #[test]
    fn single_agent_is_plain_sgd() {
        let p = generate_problem(1, &ProblemParams::reference(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(2)).unwrap();
        let topo = Topology::new(1, &[]).unwrap();
        let mut net = Network::new(setup(topo, vec![vec![0.4, 0.2]], false)).unwrap();
        let s = Streams::new(4, 0);
        let sched = StepsizeSchedule::reference();
        let rec = net.step_proposed(0, 1.0, &p, &sched, Reparametrization::default(), &s).unwrap();
        assert!(rec.messages.is_empty());
        let lam = sched.sample(0, 2, &mut s.step(Purpose::Stepsize, 0, 0)).unwrap();
        let g = p.stochastic_gradient(0, &[0.4, 0.2], &mut s.step(Purpose::Gradient, 0, 0)).unwrap();
        let expect: Vec<f64> = (0..2).map(|l| [0.4, 0.2][l] - lam[l] * g.vector[l]).collect();
        assert_eq!(net.states()[0], expect);

        let topo = Topology::new(1, &[]).unwrap();
        let mut base = Network::new(setup(topo, vec![vec![0.4, 0.2]], false)).unwrap();
        base.step_baseline(0, 0.01, &p, &s).unwrap();
        let expect: Vec<f64> = (0..2).map(|l| [0.4, 0.2][l] - 0.01 * g.vector[l]).collect();
        assert_eq!(base.states()[0], expect);
    }

    #[test]
    fn encrypted_and_fast_paths_are_bit_identical() {
        let p = reference_problem();
        let init: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64 - 0.23, 0.377 - 0.05 * i as f64]).collect();
        let mut fast = Network::new(setup(Topology::default_five(), init.clone(), false)).unwrap();
        let mut enc = Network::new(setup(Topology::default_five(), init, true)).unwrap();
        assert_eq!(enc.mode(), CryptoMode::Encrypted);
        assert_eq!(enc.key_distribution().len(), 12);
        let s = Streams::new(5, 0);
        let sched = StepsizeSchedule::reference();
        for k in 0..10 {
            let a = fast.step_proposed(k, 0.8, &p, &sched, Reparametrization::default(), &s).unwrap();
            let b = enc.step_proposed(k, 0.8, &p, &sched, Reparametrization::default(), &s).unwrap();
            assert_eq!(a.replies, b.replies);
            assert_eq!(a.xi, b.xi);
            assert_eq!(fast.states(), enc.states());
        }
    }

    #[test]
    fn baseline_zero_gradient_contracts() {
        let p = zero_problem(5, 2);
        let init: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let sp = setup(Topology::default_five(), init, false);
        let w = assemble_weight_matrix(&sp.topology, &sp.weights).unwrap();
        let admissible = crate::graph::spectrum(&w).unwrap().gamma_max >= 1.0;
        let mut net = Network::new(sp).unwrap();
        let s = Streams::new(6, 0);
        let disagreement = |st: &[Vec<f64>]| {
            let mean: Vec<f64> = (0..2).map(|l| st.iter().map(|x| x[l]).sum::<f64>() / 5.0).collect();
            st.iter()
                .map(|x| norm_sq(&[x[0] - mean[0], x[1] - mean[1]]))
                .sum::<f64>()
        };
        let mut prev = disagreement(&net.states());
        for k in 0..50 {
            net.step_baseline(k, 1e-3, &p, &s).unwrap();
            let now = disagreement(&net.states());
            if admissible {
                assert!(now <= prev * (1.0 + 1e-12));
            }
            prev = now;
        }
    }

    #[test]
    fn baseline_two_agents_convex_combination() {
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let mut weights = WeightDecomposition::new(0.1);
        weights.set(0, 1, 5).unwrap();
        weights.set(1, 0, 6).unwrap();
        let mut net = Network::new(NetworkSetup {
            topology: topo,
            weights,
            initial: vec![vec![1.0], vec![-1.0]],
            state_clamp: 1000,
            keys: None,
        })
        .unwrap();
        let p = zero_problem(2, 1);
        net.step_baseline(0, 1e-300, &p, &Streams::new(0, 0)).unwrap();
        let w = 0.5 * 0.6;
        let expect = [1.0 + w * (-2.0), -1.0 + w * 2.0];
        let st = net.states();
        assert!((st[0][0] - expect[0]).abs() < 1e-15 && (st[1][0] - expect[1]).abs() < 1e-15);
        assert!(matches!(net.step_baseline(1, 0.0, &p, &Streams::new(0, 0)), Err(Error::DegenerateStepsize { k: 1 })));
    }

    #[test]
    fn xi_second_moment_is_small() {
        let p = reference_problem();
        let init: Vec<Vec<f64>> = (0..5).map(|i| vec![0.11 * i as f64, -0.07 * i as f64]).collect();
        let mut net = Network::new(setup(Topology::default_five(), init, false)).unwrap();
        let s = Streams::new(7, 0);
        let sched = StepsizeSchedule::reference();
        let mut acc = 0.0;
        let mut mean = [0.0; 2];
        let iters = 2000;
        for k in 0..iters {
            let rec = net.step_proposed(k, 1.0, &p, &sched, Reparametrization::default(), &s).unwrap();
            acc += norm_sq(&rec.xi[0]);
            mean[0] += rec.xi[0][0];
            mean[1] += rec.xi[0][1];
        }
        assert!(acc / iters as f64 <= 0.5 * 16.0 * 2.0 * 0.01);
        assert!(mean.iter().all(|m| (m / iters as f64).abs() < 0.01));
    }

    #[test]
    fn shape_checks() {
        let r = Network::new(setup(Topology::default_five(), vec![vec![0.0]; 4], false));
        assert!(matches!(r, Err(Error::Shape { .. })));
        let mut bad = vec![vec![0.0, 0.0]; 5];
        bad[2] = vec![0.0];
        assert!(Network::new(setup(Topology::default_five(), bad, false)).is_err());
    }

    #[test]
    fn divergence_trips_the_clamp() {
        let p = zero_problem(5, 1);
        let mut sp = setup(Topology::default_five(), vec![vec![0.0]; 5], false);
        sp.initial[0] = vec![1e7];
        let mut net = Network::new(sp).unwrap();
        let r = net.step_proposed(0, 1.0, &p, &StepsizeSchedule::reference(), Reparametrization::default(), &Streams::new(0, 0));
        assert!(matches!(r, Err(Error::StateClamp { agent: 0, k: 0, .. })));
    }
}
