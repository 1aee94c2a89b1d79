use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_traits::ToPrimitive;
use rand::Rng;

use super::wire::{MessageKind, Payload, WireMessage};
use crate::crypto::{KeyPair, PublicKey};
use crate::error::{invalid, Error, Result};
use crate::quantize::{quantize_vector, QuantizedVector};

/// Quantizations an agent draws once per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationQuantization {
    pub k: usize,
    /// `Q(-xᵢᵏ)`, sent in requests.
    pub negated: QuantizedVector,
    /// `Q(xᵢᵏ)`, used in replies.
    pub positive: QuantizedVector,
}

/// What one agent knows: its iterate, its outgoing weight factors, its own
/// key pair and the public keys of its neighbours.
#[derive(Debug, Clone)]
pub struct AgentState {
    id: usize,
    x: Vec<f64>,
    neighbors: Vec<usize>,
    out_steps: BTreeMap<usize, u32>,
    delta: f64,
    clamp: i64,
    keys: Option<KeyPair>,
    neighbor_keys: BTreeMap<usize, PublicKey>,
    quant: Option<IterationQuantization>,
}

impl AgentState {
    /// `out_steps[j]` is `Q(w_{i→j})`, the grid index of the outgoing factor.
    pub fn new(id: usize, x: Vec<f64>, out_steps: BTreeMap<usize, u32>, delta: f64, clamp: i64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid("delta must be positive"));
        }
        if clamp <= 0 {
            return Err(invalid("state clamp must be positive"));
        }
        if out_steps.contains_key(&id) {
            return Err(Error::Topology(format!("agent {id} lists itself as a neighbour")));
        }
        Ok(Self {
            id,
            x,
            neighbors: out_steps.keys().copied().collect(),
            out_steps,
            delta,
            clamp,
            keys: None,
            neighbor_keys: BTreeMap::new(),
            quant: None,
        })
    }

    pub fn with_keys(mut self, keys: KeyPair) -> Self {
        self.keys = Some(keys);
        self
    }

    pub fn learn_key(&mut self, neighbor: usize, key: PublicKey) -> Result<()> {
        if !self.out_steps.contains_key(&neighbor) {
            return Err(Error::Topology(format!("{neighbor} is not a neighbour of {}", self.id)));
        }
        self.neighbor_keys.insert(neighbor, key);
        Ok(())
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub(crate) fn set_x(&mut self, x: Vec<f64>) {
        self.x = x;
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn out_steps(&self, neighbor: usize) -> Option<u32> {
        self.out_steps.get(&neighbor).copied()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn clamp(&self) -> i64 {
        self.clamp
    }

    pub fn public_key(&self) -> Option<&PublicKey> {
        self.keys.as_ref().map(|k| k.public_key())
    }

    pub fn is_encrypted(&self) -> bool {
        self.keys.is_some()
    }

    /// Reject states whose quantization could exceed the clamp.
    pub fn check_clamp(&self, k: usize) -> Result<()> {
        let magnitude = if self.x.iter().all(|v| v.is_finite()) {
            self.x.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / self.delta + 1.0
        } else {
            f64::INFINITY
        };
        if magnitude > self.clamp as f64 {
            return Err(Error::StateClamp {
                agent: self.id,
                k,
                magnitude,
                clamp: self.clamp,
            });
        }
        Ok(())
    }

    /// Draw `Q(-xᵢᵏ)` then `Q(xᵢᵏ)` from `rng`.
    pub fn quantize<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<&IterationQuantization> {
        self.check_clamp(k)?;
        let neg: Vec<f64> = self.x.iter().map(|v| -v).collect();
        let negated = quantize_vector(&neg, self.delta, rng)?;
        let positive = quantize_vector(&self.x, self.delta, rng)?;
        Ok(self.quant.insert(IterationQuantization { k, negated, positive }))
    }

    pub fn quantized(&self, k: usize) -> Result<&IterationQuantization> {
        match &self.quant {
            Some(q) if q.k == k => Ok(q),
            _ => Err(Error::Protocol(format!("agent {} has no quantization for iteration {k}", self.id))),
        }
    }
}

/// `Q(w_{i→j})·(reply)` as a real: `δ³·integer`.
pub fn consensus_value(delta: f64, integer: i128) -> f64 {
    integer as f64 * (delta * delta * delta)
}

/// `w̃_{i→j}w̃_{j→i}(x̃ⱼ - x̃ᵢ)` as computed by agent `i` from one reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTerm {
    pub neighbor: usize,
    /// Decrypted reply `Q(w_{j→i})·(Q(xⱼ) + Q(-xᵢ))`.
    pub reply: Vec<i64>,
    /// `Q(w_{i→j})·reply`.
    pub integers: Vec<i128>,
    pub value: Vec<f64>,
}

fn to_i64(v: &BigInt) -> Result<i64> {
    v.to_i64().ok_or_else(|| Error::Protocol(format!("decrypted value {v} outside i64")))
}

/// Request from `agent` to `to`: `E_i(Q(-xᵢᵏ))`, or the bare integers on the
/// fast path.
pub fn prepare_request<R: Rng + ?Sized>(agent: &AgentState, to: usize, k: usize, rng: &mut R) -> Result<WireMessage> {
    if agent.out_steps(to).is_none() {
        return Err(Error::Topology(format!("{to} is not a neighbour of {}", agent.id)));
    }
    let q = agent.quantized(k)?;
    if q.negated.max_abs() > agent.clamp {
        return Err(Error::StateClamp {
            agent: agent.id,
            k,
            magnitude: q.negated.max_abs() as f64,
            clamp: agent.clamp,
        });
    }
    let (payload, pubkey) = match agent.public_key() {
        Some(pk) => {
            let values = q
                .negated
                .entries
                .iter()
                .map(|&v| Ok(pk.encrypt(&BigInt::from(v), rng)?.value().clone()))
                .collect::<Result<_>>()?;
            (Payload::Encrypted { key: pk.tag(), values }, Some(pk.modulus().clone()))
        }
        None => (Payload::Plain(q.negated.entries.clone()), None),
    };
    Ok(WireMessage {
        kind: MessageKind::Request,
        from: agent.id,
        to: Some(to),
        k,
        payload,
        pubkey,
    })
}

/// Reply from `agent` (the responder `j`):
/// `Q(w_{j→i}) ⊙ (request ⊕ E_i(Q(xⱼᵏ)))`. Only the requester's public key
/// is used; the responder cannot decrypt.
pub fn respond<R: Rng + ?Sized>(agent: &AgentState, request: &WireMessage, rng: &mut R) -> Result<WireMessage> {
    if request.kind != MessageKind::Request {
        return Err(Error::Protocol(format!("expected a request, got {:?}", request.kind)));
    }
    if request.to != Some(agent.id) {
        return Err(Error::Protocol(format!("request addressed to {:?}, not {}", request.to, agent.id)));
    }
    let i = request.from;
    let steps = agent
        .out_steps(i)
        .ok_or_else(|| Error::Topology(format!("{i} is not a neighbour of {}", agent.id)))?;
    let q = agent.quantized(request.k)?;
    if request.payload.len() != q.positive.len() {
        return Err(Error::Shape {
            expected: q.positive.len(),
            got: request.payload.len(),
        });
    }
    let payload = match &request.payload {
        Payload::Encrypted { key, values } => {
            let pk = agent
                .neighbor_keys
                .get(&i)
                .ok_or_else(|| Error::Protocol(format!("agent {} has no public key for {i}", agent.id)))?;
            if *key != pk.tag() {
                return Err(Error::Protocol("request not encrypted under the sender's key".into()));
            }
            let request_bound = BigUint::from(agent.clamp as u64);
            let scale = BigInt::from(steps);
            let mut out = Vec::with_capacity(values.len());
            for (v, &own) in values.iter().zip(&q.positive.entries) {
                let c = pk.ciphertext_from_wire(v.clone())?.assume_bound(request_bound.clone());
                let mine = pk.encrypt(&BigInt::from(own), rng)?;
                let scaled = pk.scale(&pk.add(&c, &mine)?, &scale)?;
                out.push(scaled.value().clone());
            }
            Payload::Encrypted { key: pk.tag(), values: out }
        }
        Payload::Plain(values) => {
            let s = i64::from(steps);
            let out = values
                .iter()
                .zip(&q.positive.entries)
                .map(|(&a, &b)| {
                    a.checked_add(b)
                        .and_then(|t| t.checked_mul(s))
                        .ok_or_else(|| Error::PlaintextOverflow { bound: format!("{s}*({a}+{b})") })
                })
                .collect::<Result<_>>()?;
            Payload::Plain(out)
        }
        other => return Err(Error::Protocol(format!("unexpected request payload {other:?}"))),
    };
    Ok(WireMessage {
        kind: MessageKind::Reply,
        from: agent.id,
        to: Some(i),
        k: request.k,
        payload,
        pubkey: None,
    })
}

/// Decrypt a reply and weight it by the requester's own factor.
pub fn finalize(agent: &AgentState, reply: &WireMessage, k: usize) -> Result<ConsensusTerm> {
    if reply.kind != MessageKind::Reply {
        return Err(Error::Protocol(format!("expected a reply, got {:?}", reply.kind)));
    }
    if reply.to != Some(agent.id) {
        return Err(Error::Protocol(format!("reply addressed to {:?}, not {}", reply.to, agent.id)));
    }
    if reply.k != k {
        return Err(Error::Protocol(format!("stale reply from iteration {} at {k}", reply.k)));
    }
    let j = reply.from;
    let steps = agent
        .out_steps(j)
        .ok_or_else(|| Error::Topology(format!("{j} is not a neighbour of {}", agent.id)))?;
    let decoded: Vec<i64> = match &reply.payload {
        Payload::Encrypted { key, values } => {
            let keys = agent
                .keys
                .as_ref()
                .ok_or_else(|| Error::Protocol("encrypted reply on the fast path".into()))?;
            let pk = keys.public_key();
            if *key != pk.tag() {
                return Err(Error::Protocol("reply encrypted under a different key".into()));
            }
            values
                .iter()
                .map(|v| to_i64(&keys.decrypt(&pk.ciphertext_from_wire(v.clone())?)?))
                .collect::<Result<_>>()?
        }
        Payload::Plain(v) => {
            if agent.is_encrypted() {
                return Err(Error::Protocol("plaintext reply to an encrypted request".into()));
            }
            v.clone()
        }
        other => return Err(Error::Protocol(format!("unexpected reply payload {other:?}"))),
    };
    let integers: Vec<i128> = decoded.iter().map(|&v| i128::from(steps) * i128::from(v)).collect();
    let value = integers.iter().map(|&v| consensus_value(agent.delta, v)).collect();
    Ok(ConsensusTerm {
        neighbor: j,
        reply: decoded,
        integers,
        value,
    })
}
