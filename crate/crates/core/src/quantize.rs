//! Unbiased stochastic rounding onto the grid `δ·ℤ`.
//!
//! `Q(x)` is `⌊x/δ⌋ + 1` with probability `x/δ - ⌊x/δ⌋` and `⌊x/δ⌋`
//! otherwise, so `E[δ·Q(x)] = x` and `Var[δ·Q(x)] ≤ δ²/4`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ratios within this many ulps of an integer are treated as grid points.
/// Values such as `3 × 0.1` otherwise land a hair off the grid and would be
/// rounded up with probability ~1e-16 instead of exactly never.
const GRID_SNAP_ULPS: f64 = 4.0;

/// Quantized magnitudes beyond this cannot be represented.
pub const MAX_QUANTIZED: f64 = (1u64 << 62) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub entries: Vec<i64>,
    pub delta: f64,
}

impl QuantizedVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_abs(&self) -> i64 {
        self.entries.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid(format!("quantization precision must be positive, got {delta}")));
    }
    Ok(())
}

/// `t` snapped to the nearest integer when it is within rounding noise of it.
fn snapped(t: f64) -> Option<f64> {
    let nearest = t.round();
    ((t - nearest).abs() <= GRID_SNAP_ULPS * f64::EPSILON * t.abs().max(1.0)).then_some(nearest)
}

pub fn quantize_scalar<R: Rng + ?Sized>(x: f64, delta: f64, rng: &mut R) -> Result<i64> {
    check_delta(delta)?;
    if !x.is_finite() {
        return Err(invalid(format!("cannot quantize non-finite value {x}")));
    }
    let t = x / delta;
    if t.abs() >= MAX_QUANTIZED {
        return Err(invalid(format!("{x}/{delta} exceeds the quantized range")));
    }
    if let Some(grid) = snapped(t) {
        return Ok(grid as i64);
    }
    let floor = t.floor();
    let up = rng.gen::<f64>() < t - floor;
    Ok(floor as i64 + i64::from(up))
}

/// Componentwise quantization with independent randomness per entry.
pub fn quantize_vector<R: Rng + ?Sized>(x: &[f64], delta: f64, rng: &mut R) -> Result<QuantizedVector> {
    check_delta(delta)?;
    let entries = x
        .iter()
        .map(|&v| quantize_scalar(v, delta, rng))
        .collect::<Result<_>>()?;
    Ok(QuantizedVector { entries, delta })
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f64> {
    q.entries.iter().map(|&v| q.delta * v as f64).collect()
}

/// Number of grid points `{δ, 2δ, …, ⌊1/δ⌋δ}` in `(0, 1]`.
pub fn weight_grid_size(delta: f64) -> Result<u32> {
    check_delta(delta)?;
    if delta > 1.0 {
        return Err(invalid(format!("weight grid needs delta in (0, 1], got {delta}")));
    }
    let inv = 1.0 / delta;
    let steps = snapped(inv).unwrap_or_else(|| inv.floor());
    u32::try_from(steps as u64).map_err(|_| invalid("delta too small for the weight grid"))
}

/// Uniform grid index `k ∈ {1, …, ⌊1/δ⌋}`; the weight factor is `k·δ`.
pub fn sample_weight_steps<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> Result<u32> {
    let n = weight_grid_size(delta)?;
    Ok(rng.gen_range(1..=n))
}

/// A weight factor drawn uniformly from the δ-grid in `(0, 1]`. Quantizing it
/// at precision `δ` is deterministic.
pub fn sample_weight_factor<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> Result<f64> {
    Ok(f64::from(sample_weight_steps(delta, rng)?) * delta)
}
