use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::{Algorithm, CryptoMode};
use crate::crypto::KeyTag;
use crate::error::{Error, Result};
use crate::graph::WeightDecomposition;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Pubkey,
    Request,
    Reply,
    /// Plaintext state broadcast of the baseline.
    State,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Raw ciphertexts under the key with the given tag.
    Encrypted { key: KeyTag, values: Vec<BigUint> },
    /// Fast-path stand-in carrying the integers a ciphertext would encrypt.
    Plain(Vec<i64>),
    State(Vec<f64>),
    Empty,
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Encrypted { values, .. } => values.len(),
            Payload::Plain(v) => v.len(),
            Payload::State(v) => v.len(),
            Payload::Empty => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub from: usize,
    /// `None` for broadcasts.
    pub to: Option<usize>,
    pub k: usize,
    pub payload: Payload,
    pub pubkey: Option<BigUint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub algorithm: Algorithm,
    pub crypto_mode: CryptoMode,
    pub agents: usize,
    pub dim: usize,
    pub delta: f64,
    /// One-based undirected edges.
    pub edges: Vec<[usize; 2]>,
    pub iterations: usize,
    /// Weights public under the baseline threat model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_weights: Option<Matrix>,
    /// Shared baseline stepsizes `α⁰, α¹, …`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_stepsizes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyPlaintext {
    pub requester: usize,
    pub responder: usize,
    pub values: Vec<i64>,
}

/// Information withheld from an eavesdropper, recorded so attacks can be
/// granted it selectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleIterate {
    pub k: usize,
    pub gamma: f64,
    /// `xᵢᵏ` for every agent.
    pub states: Vec<Vec<f64>>,
    /// Decrypted reply contents of iteration `k`.
    pub replies: Vec<ReplyPlaintext>,
}

/// Append-only log of everything that crossed the network, plus oracle
/// extras.
/// `(kind, from, to, k, integers)` as returned by [`Transcript::plaintext_view`].
pub type PlaintextEntry = (MessageKind, usize, Option<usize>, usize, Vec<i64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    meta: TranscriptMeta,
    messages: Vec<WireMessage>,
    oracle: Vec<OracleIterate>,
    oracle_weights: Option<WeightDecomposition>,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    from: usize,
    to: Option<usize>,
    k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_tag: Option<KeyTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ciphertexts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plaintext: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<Vec<f64>>,
    #[serde(rename = "pubkey_N", default, skip_serializing_if = "Option::is_none")]
    pubkey_n: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Meta(TranscriptMeta),
    Pubkey(WireRecord),
    Request(WireRecord),
    Reply(WireRecord),
    State(WireRecord),
    OracleIterate(OracleIterate),
    OracleWeights(WeightDecomposition),
}

fn parse_biguint(s: &str) -> Result<BigUint> {
    BigUint::parse_bytes(s.as_bytes(), 10).ok_or_else(|| Error::Protocol(format!("not a decimal integer: {s:.32}")))
}

impl WireRecord {
    fn from_message(m: &WireMessage) -> Self {
        let mut rec = WireRecord {
            from: m.from,
            to: m.to,
            k: m.k,
            key_tag: None,
            ciphertexts: None,
            plaintext: None,
            state: None,
            pubkey_n: m.pubkey.as_ref().map(|n| n.to_str_radix(10)),
        };
        match &m.payload {
            Payload::Encrypted { key, values } => {
                rec.key_tag = Some(*key);
                rec.ciphertexts = Some(values.iter().map(|v| v.to_str_radix(10)).collect());
            }
            Payload::Plain(v) => rec.plaintext = Some(v.clone()),
            Payload::State(v) => rec.state = Some(v.clone()),
            Payload::Empty => {}
        }
        rec
    }

    fn into_message(self, kind: MessageKind) -> Result<WireMessage> {
        let payload = match (self.ciphertexts, self.key_tag, self.plaintext, self.state) {
            (Some(c), Some(key), None, None) => Payload::Encrypted {
                key,
                values: c.iter().map(|s| parse_biguint(s)).collect::<Result<_>>()?,
            },
            (None, None, Some(p), None) => Payload::Plain(p),
            (None, None, None, Some(s)) => Payload::State(s),
            (None, None, None, None) => Payload::Empty,
            _ => return Err(Error::Protocol("message carries conflicting payloads".into())),
        };
        Ok(WireMessage {
            kind,
            from: self.from,
            to: self.to,
            k: self.k,
            payload,
            pubkey: self.pubkey_n.as_deref().map(parse_biguint).transpose()?,
        })
    }
}

impl Transcript {
    pub fn new(meta: TranscriptMeta) -> Self {
        Self {
            meta,
            messages: Vec::new(),
            oracle: Vec::new(),
            oracle_weights: None,
        }
    }

    pub fn meta(&self) -> &TranscriptMeta {
        &self.meta
    }

    pub fn messages(&self) -> &[WireMessage] {
        &self.messages
    }

    pub fn oracle(&self) -> &[OracleIterate] {
        &self.oracle
    }

    pub fn oracle_weights(&self) -> Option<&WeightDecomposition> {
        self.oracle_weights.as_ref()
    }

    pub fn push(&mut self, m: WireMessage) {
        self.messages.push(m);
    }

    pub fn push_oracle(&mut self, o: OracleIterate) {
        self.oracle.push(o);
    }

    pub(crate) fn set_oracle_weights(&mut self, w: WeightDecomposition) {
        self.oracle_weights = Some(w);
    }

    /// Messages sent at iteration `k`, in send order.
    pub fn at(&self, k: usize) -> impl Iterator<Item = &WireMessage> {
        self.messages.iter().filter(move |m| m.k == k)
    }

    /// Plaintext contents only (no ciphertext values), in send order.
    pub fn plaintext_view(&self) -> Vec<PlaintextEntry> {
        self.messages
            .iter()
            .filter_map(|m| match &m.payload {
                Payload::Plain(v) => Some((m.kind, m.from, m.to, m.k, v.clone())),
                _ => None,
            })
            .chain(self.oracle.iter().flat_map(|o| {
                o.replies
                    .iter()
                    .map(move |r| (MessageKind::Reply, r.responder, Some(r.requester), o.k, r.values.clone()))
            }))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Meta(self.meta.clone()))?;
        for m in &self.messages {
            let rec = WireRecord::from_message(m);
            line(&match m.kind {
                MessageKind::Pubkey => Line::Pubkey(rec),
                MessageKind::Request => Line::Request(rec),
                MessageKind::Reply => Line::Reply(rec),
                MessageKind::State => Line::State(rec),
            })?;
        }
        for o in &self.oracle {
            line(&Line::OracleIterate(o.clone()))?;
        }
        if let Some(wd) = &self.oracle_weights {
            line(&Line::OracleWeights(wd.clone()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut t: Option<Transcript> = None;
        for (n, raw) in r.lines().enumerate() {
            let raw = raw?;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&raw)?;
            let missing_meta = || Error::Protocol(format!("line {}: message before meta header", n + 1));
            match parsed {
                Line::Meta(meta) => {
                    if t.is_some() {
                        return Err(Error::Protocol("duplicate meta header".into()));
                    }
                    t = Some(Transcript::new(meta));
                }
                Line::Pubkey(rec) => t.as_mut().ok_or_else(missing_meta)?.push(rec.into_message(MessageKind::Pubkey)?),
                Line::Request(rec) => t.as_mut().ok_or_else(missing_meta)?.push(rec.into_message(MessageKind::Request)?),
                Line::Reply(rec) => t.as_mut().ok_or_else(missing_meta)?.push(rec.into_message(MessageKind::Reply)?),
                Line::State(rec) => t.as_mut().ok_or_else(missing_meta)?.push(rec.into_message(MessageKind::State)?),
                Line::OracleIterate(o) => t.as_mut().ok_or_else(missing_meta)?.push_oracle(o),
                Line::OracleWeights(w) => t.as_mut().ok_or_else(missing_meta)?.set_oracle_weights(w),
            }
        }
        t.ok_or_else(|| Error::Protocol("empty transcript".into()))
    }

    /// Write to `path` through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.partial");
        self.write_jsonl(fs::File::create(&tmp)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(fs::File::open(path)?))
    }
}
