//! Attenuation factors, heterogeneous random stepsizes and a symbolic check
//! of the summability conditions that guarantee almost sure convergence.
//!
//! Iteration indices are shifted by one inside power laws (`(k+1)^p` rather
//! than `k^p`) so every schedule is defined at `k = 0`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AttenuationSchedule {
    /// `γᵏ = 1 / (1 + c₁·kʳ)`.
    Rational { c1: f64, r: f64 },
    /// `γᵏ = c / (k+1)ʳ`.
    PowerLaw { c: f64, r: f64 },
}

impl AttenuationSchedule {
    /// `γᵏ = 1/(1 + 0.1·k^0.81)`.
    pub fn reference() -> Self {
        Self::Rational { c1: 0.1, r: 0.81 }
    }

    pub fn gamma_at(&self, k: usize) -> f64 {
        let k = k as f64;
        match *self {
            Self::Rational { c1, r } => {
                let kr = if k == 0.0 { 0.0 } else { k.powf(r) };
                1.0 / (1.0 + c1 * kr)
            }
            Self::PowerLaw { c, r } => c / (k + 1.0).powf(r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Rational { c1, r } => c1.is_finite() && c1 >= 0.0 && r.is_finite() && r >= 0.0,
            Self::PowerLaw { c, r } => c.is_finite() && c > 0.0 && r.is_finite() && r >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid attenuation schedule {self:?}")))
        }
    }

    /// Exponent `r` with `γᵏ ≍ k^{-r}`, or `None` for parameters the
    /// validator cannot reason about.
    fn decay_exponent(&self) -> Option<f64> {
        self.validate().ok()?;
        Some(match *self {
            Self::Rational { c1, r } if c1 > 0.0 => r,
            Self::Rational { .. } => 0.0,
            Self::PowerLaw { r, .. } => r,
        })
    }
}

pub fn gamma_at(schedule: &AttenuationSchedule, k: usize) -> f64 {
    schedule.gamma_at(k)
}

/// Diagonal stepsize entries `λᵢₗᵏ = a/(k+1)ᵖ · (1 + ζᵢₗᵏ/(k+1)ˢ)` with
/// `ζᵢₗᵏ ~ U[0, 1]` independent per coordinate. With `perturbed = false` the
/// `ζ` term is dropped and entries are deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub a: f64,
    pub p: f64,
    pub s: f64,
    #[serde(default = "default_true")]
    pub perturbed: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeMoments {
    pub mean: f64,
    pub variance: f64,
}

impl StepsizeSchedule {
    pub fn reference() -> Self {
        Self {
            a: 0.005,
            p: 0.6,
            s: 1.2,
            perturbed: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(invalid(format!("stepsize base must be positive, got {}", self.a)));
        }
        if !(self.p.is_finite() && self.s.is_finite()) {
            return Err(invalid("stepsize exponents must be finite"));
        }
        Ok(())
    }

    fn base(&self, k: usize) -> f64 {
        self.a / (k as f64 + 1.0).powf(self.p)
    }

    /// Width of the perturbation relative to the base, `(k+1)^{-s}`.
    fn spread(&self, k: usize) -> f64 {
        if self.perturbed {
            (k as f64 + 1.0).powf(-self.s)
        } else {
            0.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, d: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        let base = self.base(k);
        let spread = self.spread(k);
        Ok((0..d)
            .map(|_| {
                if self.perturbed {
                    base * (1.0 + rng.gen::<f64>() * spread)
                } else {
                    base
                }
            })
            .collect())
    }

    /// Closed-form mean and variance of one entry at iteration `k`.
    pub fn moments(&self, k: usize) -> StepsizeMoments {
        let base = self.base(k);
        let spread = self.spread(k);
        StepsizeMoments {
            mean: base * (1.0 + 0.5 * spread),
            variance: base * base * spread * spread / 12.0,
        }
    }

    /// Mean as a sum of power terms `coef·(k+1)^{-exp}`, exact for this family.
    fn mean_terms(&self) -> Vec<(f64, f64)> {
        let mut t = vec![(self.p, self.a)];
        if self.perturbed {
            t.push((self.p + self.s, 0.5 * self.a));
        }
        t
    }
}

pub fn sample_stepsize<R: Rng + ?Sized>(
    schedule: &StepsizeSchedule,
    k: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    schedule.sample(k, d, rng)
}

pub fn stepsize_moments(schedule: &StepsizeSchedule, k: usize) -> StepsizeMoments {
    schedule.moments(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `Σ λᵢᵏ = ∞`
    StepsizeNotSummable,
    /// `Σ (λᵢᵏ)² < ∞`
    StepsizeSquareSummable,
    /// `Σ Σᵢⱼ |λᵢᵏ - λⱼᵏ| < ∞`
    HeterogeneitySummable,
    /// `Σ (σᵢᵏ)² < ∞`
    VarianceSummable,
    /// `Σ γᵏ = ∞` and `Σ (γᵏ)² < ∞`
    AttenuationSchedule,
    /// `Σ (λᵢᵏ)²/γᵏ < ∞` and `Σ (σᵢᵏ)²/γᵏ < ∞`
    StepsizeOverAttenuation,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StepsizeNotSummable => "sum lambda = inf",
            Self::StepsizeSquareSummable => "sum lambda^2 < inf",
            Self::HeterogeneitySummable => "sum_ij |lambda_i - lambda_j| < inf",
            Self::VarianceSummable => "sum sigma^2 < inf",
            Self::AttenuationSchedule => "sum gamma = inf, sum gamma^2 < inf",
            Self::StepsizeOverAttenuation => "sum lambda^2/gamma < inf, sum sigma^2/gamma < inf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub verdict: Verdict,
    /// The exponent inequality that decides the condition, with values.
    pub inequality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub conditions: Vec<ConditionReport>,
}

impl ScheduleReport {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict == Verdict::Holds)
    }

    pub fn verdict(&self, condition: Condition) -> Verdict {
        self.conditions
            .iter()
            .find(|c| c.condition == condition)
            .map_or(Verdict::Indeterminate, |c| c.verdict)
    }

    pub fn violated(&self) -> impl Iterator<Item = &ConditionReport> {
        self.conditions.iter().filter(|c| c.verdict == Verdict::Violated)
    }
}

impl fmt::Display for ScheduleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conditions {
            let v = match c.verdict {
                Verdict::Holds => "holds",
                Verdict::Violated => "VIOLATED",
                Verdict::Indeterminate => "indeterminate",
            };
            writeln!(f, "{:<14} {:<48} [{}]", v, c.condition.to_string(), c.inequality)?;
        }
        Ok(())
    }
}

fn verdict(holds: bool) -> Verdict {
    if holds {
        Verdict::Holds
    } else {
        Verdict::Violated
    }
}

fn fmt_exps(xs: impl Iterator<Item = f64>) -> String {
    let v: Vec<String> = xs.map(|x| format!("{x}")).collect();
    v.join(", ")
}

/// Smallest decay exponent of `Σ|λᵢ - λⱼ|` over all agent pairs, or `None`
/// when all means coincide exactly.
fn heterogeneity_exponent(agents: &[StepsizeSchedule]) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            let mut diff: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
            for (e, c) in a.mean_terms() {
                diff.entry(e.to_bits()).or_insert((e, 0.0)).1 += c;
            }
            for (e, c) in b.mean_terms() {
                diff.entry(e.to_bits()).or_insert((e, 0.0)).1 -= c;
            }
            let lead = diff
                .values()
                .filter(|(_, c)| *c != 0.0)
                .map(|(e, _)| *e)
                .min_by(f64::total_cmp);
            if let Some(e) = lead {
                worst = Some(worst.map_or(e, |w: f64| w.min(e)));
            }
        }
    }
    worst
}

/// Decide each summability condition from the power-law exponents of the
/// schedules. Finite prefixes are never summed.
pub fn validate_schedule(agents: &[StepsizeSchedule], attenuation: &AttenuationSchedule) -> ScheduleReport {
    use Condition::*;
    let indeterminate = |condition, why: &str| ConditionReport {
        condition,
        verdict: Verdict::Indeterminate,
        inequality: why.to_string(),
    };
    let all = [
        StepsizeNotSummable,
        StepsizeSquareSummable,
        HeterogeneitySummable,
        VarianceSummable,
        AttenuationSchedule,
        StepsizeOverAttenuation,
    ];
    if agents.is_empty() || agents.iter().any(|s| s.validate().is_err()) {
        return ScheduleReport {
            conditions: all
                .iter()
                .map(|&c| indeterminate(c, "stepsize schedule outside the supported family"))
                .collect(),
        };
    }
    let ps = || agents.iter().map(|s| s.p);
    let p_max = ps().fold(f64::NEG_INFINITY, f64::max);
    let p_min = ps().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(6);

    out.push(ConditionReport {
        condition: StepsizeNotSummable,
        verdict: verdict(p_max <= 1.0),
        inequality: format!("p <= 1 (p = {})", fmt_exps(ps())),
    });
    out.push(ConditionReport {
        condition: StepsizeSquareSummable,
        verdict: verdict(2.0 * p_min > 1.0),
        inequality: format!("2p > 1 (p = {})", fmt_exps(ps())),
    });
    out.push(match heterogeneity_exponent(agents) {
        None => ConditionReport {
            condition: HeterogeneitySummable,
            verdict: Verdict::Holds,
            inequality: "identical mean stepsizes across agents".into(),
        },
        Some(e) => ConditionReport {
            condition: HeterogeneitySummable,
            verdict: verdict(e > 1.0),
            inequality: format!("leading exponent of |lambda_i - lambda_j| > 1 ({e})"),
        },
    });
    let var_exps: Vec<f64> = agents
        .iter()
        .filter(|s| s.perturbed)
        .map(|s| 2.0 * s.p + 2.0 * s.s)
        .collect();
    out.push(ConditionReport {
        condition: VarianceSummable,
        verdict: verdict(var_exps.iter().all(|&e| e > 1.0)),
        inequality: if var_exps.is_empty() {
            "no perturbation (sigma = 0)".into()
        } else {
            format!("2p + 2s > 1 ({})", fmt_exps(var_exps.iter().copied()))
        },
    });

    match attenuation.decay_exponent() {
        None => {
            out.push(indeterminate(AttenuationSchedule, "attenuation outside the supported family"));
            out.push(indeterminate(StepsizeOverAttenuation, "attenuation outside the supported family"));
        }
        Some(r) => {
            out.push(ConditionReport {
                condition: AttenuationSchedule,
                verdict: verdict(r > 0.5 && r <= 1.0),
                inequality: format!("0.5 < r <= 1 (r = {r})"),
            });
            let lam = 2.0 * p_min - r;
            let sig = var_exps.iter().map(|e| e - r).fold(f64::INFINITY, f64::min);
            out.push(ConditionReport {
                condition: StepsizeOverAttenuation,
                verdict: verdict(lam > 1.0 && sig > 1.0),
                inequality: if var_exps.is_empty() {
                    format!("2p - r > 1 ({lam})")
                } else {
                    format!("2p - r > 1 ({lam}) and 2p + 2s - r > 1 ({sig})")
                },
            });
        }
    }
    ScheduleReport { conditions: out }
}
