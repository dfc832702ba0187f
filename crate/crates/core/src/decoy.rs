//! Four-intensity decoy-state estimation of the untagged-bit count `n₁` and
//! its phase-flip error rate `e₁ᵖʰ`.
//!
//! The finite-key route bounds mode-summed observed counts with the
//! Chernoff functions of [`crate::stats`]. The asymptotic route plugs
//! counting rates in directly, mode by mode. With `ε = 2` (no confidence)
//! and expected counts the two coincide.

use std::f64::consts::PI;

use thiserror::Error;

use crate::config::{Config, ProtocolParams, WindowClass};
use crate::counts::{ObservedCounts, RateSource};
use crate::diagnostics::{Flag, Flags};
use crate::stats::{BoundBudget, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoyError {
    #[error("finite-key decoy analysis needs uniform mode probabilities")]
    NonUniformModes,
    #[error("no untagged bits: the lower bound on <n1> is {0}, key rate 0")]
    NoUntaggedBits(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// `2μ_xμ_y(μ_y − μ_x)`.
fn decoy_denominator(p: &ProtocolParams) -> f64 {
    2.0 * p.mu_x * p.mu_y * (p.mu_y - p.mu_x)
}

/// `μ_z e^{−μ_z}`: probability that a sent `z` pulse holds exactly one photon.
fn single_photon_z(p: &ProtocolParams) -> f64 {
    p.mu_z * (-p.mu_z).exp()
}

/// `N·2p_v p_z μ_z e^{−μ_z}`: windows whose code bit may be untagged, times `1/s₁`.
fn untagged_windows(p: &ProtocolParams, windows: f64) -> f64 {
    windows * 2.0 * p.p_v * p.p_z * single_photon_z(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S1Estimate {
    pub value: f64,
    /// The raw estimate (possibly negative).
    pub raw: f64,
    pub clamped: bool,
}

/// `⟨s₁(r_j)⟩` for every mode.
pub fn s1_mean(rates: &impl RateSource, p: &ProtocolParams) -> Vec<S1Estimate> {
    let den = decoy_denominator(p);
    (0..rates.modes())
        .map(|j| {
            let plus = p.mu_y * p.mu_y
                * p.mu_x.exp()
                * (rates.rate(WindowClass::VX, j) + rates.rate(WindowClass::XV, j));
            let minus = p.mu_x * p.mu_x
                * p.mu_y.exp()
                * (rates.rate(WindowClass::VY, j) + rates.rate(WindowClass::YV, j));
            let vv = 2.0 * (p.mu_y * p.mu_y - p.mu_x * p.mu_x) * rates.rate(WindowClass::VV, j);
            let raw = (plus - minus - vv) / den;
            S1Estimate { value: raw.max(0.0), raw, clamped: raw < 0.0 }
        })
        .collect()
}

/// An observed sum and its Chernoff bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounded {
    pub observed: f64,
    pub bound: f64,
}

/// Bounded sums entering the finite-key formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyAudit {
    /// `φᴸ[Σ_j (n_vx + n_xv)]`.
    pub one_sided_x: Bounded,
    /// `φᵁ[Σ_j (n_vy + n_yv)]`.
    pub one_sided_y: Bounded,
    /// `φᵁ[Σ_j n_vv]`.
    pub vacuum_upper: Bounded,
    /// `φᴸ[Σ_j n_vv]`.
    pub vacuum_lower: Bounded,
    /// `φᵁ[Σ_j W_TX]`.
    pub slice_errors: Bounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoyResult {
    /// Lower bound on the number of untagged bits.
    pub n1: f64,
    /// Upper bound on their phase-flip error rate, in `[0, 1/2]`.
    pub e1ph: f64,
    /// `⟨n₁⟩ᴸ` (asymptotic: `⟨n₁⟩`).
    pub n1_mean_lower: f64,
    /// Mode-averaged `⟨s₁⟩ᴸ`.
    pub s1_mean_lower: f64,
    /// `⟨e₁ᵖʰ⟩ᵁ` (asymptotic: `⟨e₁ᵖʰ⟩`).
    pub e1ph_mean_upper: f64,
    /// `n₁` before its floor at 0, continued below it (`⟨n₁⟩ᴸ − ln(2/ε)`)
    /// so optimizers see a slope where the key vanishes.
    pub n1_raw: f64,
    /// `e₁ᵖʰ` before clamping to `[0, 1/2]`.
    pub e1ph_raw: f64,
    pub audit: Option<DecoyAudit>,
    pub flags: Flags,
    pub budget: Option<BoundBudget>,
}

/// `⟨n₁⟩ᴸ` and `n₁ = φ̂ᴸ(⟨n₁⟩ᴸ)` from mode-summed counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct N1Bound {
    pub mean_lower: f64,
    pub n1: f64,
    pub one_sided_x: Bounded,
    pub one_sided_y: Bounded,
    pub vacuum_upper: Bounded,
}

pub fn n1_lower(
    counts: &ObservedCounts,
    p: &ProtocolParams,
    budget: &mut BoundBudget,
) -> Result<N1Bound, DecoyError> {
    if !p.has_uniform_modes() {
        return Err(DecoyError::NonUniformModes);
    }
    let n = counts.total_windows;
    let m = p.modes as f64;
    let sx = counts.accepted_sum(WindowClass::VX) + counts.accepted_sum(WindowClass::XV);
    let sy = counts.accepted_sum(WindowClass::VY) + counts.accepted_sum(WindowClass::YV);
    let svv = counts.accepted_sum(WindowClass::VV);
    let one_sided_x = Bounded { observed: sx, bound: budget.phi_lower(sx)? };
    let one_sided_y = Bounded { observed: sy, bound: budget.phi_upper(sy)? };
    let vacuum_upper = Bounded { observed: svv, bound: budget.phi_upper(svv)? };

    let braces = p.mu_x.exp() * p.mu_y * p.mu_y / (n * p.p_v * p.p_x) * one_sided_x.bound
        - p.mu_y.exp() * p.mu_x * p.mu_x / (n * p.p_v * p.p_y) * one_sided_y.bound
        - 2.0 * (p.mu_y * p.mu_y - p.mu_x * p.mu_x) / m / (n * p.p_v * p.p_v) * vacuum_upper.bound;
    let mean_lower = untagged_windows(p, n) / decoy_denominator(p) * braces;
    let n1 = if mean_lower > 0.0 { budget.varphi_lower(mean_lower)? } else { 0.0 };
    Ok(N1Bound { mean_lower, n1, one_sided_x, one_sided_y, vacuum_upper })
}

/// `⟨e₁ᵖʰ⟩ᵁ` and `e₁ᵖʰ = φ̂ᵁ(n₁⟨e₁ᵖʰ⟩ᵁ)/n₁` (unclamped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E1Bound {
    pub mean_upper: f64,
    /// `None` when `n₁ = 0` or `⟨e₁ᵖʰ⟩ᵁ < 0`, where the real-value bound is undefined.
    pub e1ph: Option<f64>,
    pub slice_errors: Bounded,
    pub vacuum_lower: Bounded,
}

pub fn e1ph_upper(
    counts: &ObservedCounts,
    p: &ProtocolParams,
    budget: &mut BoundBudget,
    n1_mean_lower: f64,
    n1: f64,
) -> Result<E1Bound, DecoyError> {
    if !p.has_uniform_modes() {
        return Err(DecoyError::NonUniformModes);
    }
    if n1_mean_lower <= 0.0 {
        return Err(DecoyError::NoUntaggedBits(n1_mean_lower));
    }
    let m = p.modes as f64;
    let w = counts.errors_sum(WindowClass::XX);
    let svv = counts.accepted_sum(WindowClass::VV);
    let slice_errors = Bounded { observed: w, bound: budget.phi_upper(w)? };
    let vacuum_lower = Bounded { observed: svv, bound: budget.phi_lower(svv)? };
    let z1 = single_photon_z(p);
    let mean_upper = p.p_v * p.p_z * z1 * PI * m
        / (p.p_x * p.p_x * p.mu_x * (-2.0 * p.mu_x).exp() * p.slice_width() * n1_mean_lower)
        * slice_errors.bound
        - p.p_z * z1 / (2.0 * p.p_v * p.mu_x * n1_mean_lower * m) * vacuum_lower.bound;
    let e1ph = if n1 > 0.0 && mean_upper >= 0.0 {
        Some(budget.varphi_upper(n1 * mean_upper)? / n1)
    } else {
        None
    };
    Ok(E1Bound { mean_upper, e1ph, slice_errors, vacuum_lower })
}

fn clamp_e1(raw: f64, flags: &mut Flags) -> f64 {
    if raw < 0.0 {
        flags.insert(Flag::E1Negative);
        0.0
    } else if raw > 0.5 {
        flags.insert(Flag::E1AboveHalf);
        0.5
    } else {
        raw
    }
}

/// Finite-key analysis of observed (or expected) counts.
pub fn finite_key(counts: &ObservedCounts, config: &Config) -> Result<DecoyResult, DecoyError> {
    let p = &config.protocol;
    let mut budget = BoundBudget::new(config.security.xi)?;
    let mut flags = Flags::default();
    let c = (2.0 / config.security.xi).ln().max(0.0);

    let nb = n1_lower(counts, p, &mut budget)?;
    let s1_mean_lower = nb.mean_lower / untagged_windows(p, counts.total_windows);
    let n1_raw = if nb.n1 > 0.0 { nb.n1 } else { nb.mean_lower.min(c) - c };
    if nb.mean_lower <= 0.0 {
        flags.insert(Flag::NoUntaggedBits);
        return Ok(DecoyResult {
            n1: 0.0,
            e1ph: 0.5,
            n1_mean_lower: nb.mean_lower,
            s1_mean_lower,
            e1ph_mean_upper: f64::INFINITY,
            n1_raw,
            e1ph_raw: 1.0,
            audit: None,
            flags,
            budget: Some(budget),
        });
    }
    if nb.n1 == 0.0 {
        flags.insert(Flag::N1Clamped);
    }

    let eb = e1ph_upper(counts, p, &mut budget, nb.mean_lower, nb.n1)?;
    let e1ph_raw = eb.e1ph.unwrap_or(eb.mean_upper);
    let e1ph = clamp_e1(e1ph_raw, &mut flags);
    Ok(DecoyResult {
        n1: nb.n1,
        e1ph,
        n1_mean_lower: nb.mean_lower,
        s1_mean_lower,
        e1ph_mean_upper: eb.mean_upper,
        n1_raw,
        e1ph_raw,
        audit: Some(DecoyAudit {
            one_sided_x: nb.one_sided_x,
            one_sided_y: nb.one_sided_y,
            vacuum_upper: nb.vacuum_upper,
            vacuum_lower: eb.vacuum_lower,
            slice_errors: eb.slice_errors,
        }),
        flags,
        budget: Some(budget),
    })
}

/// Asymptotic analysis: expectations in place of every bound, per mode.
pub fn asymptotic(rates: &impl RateSource, p: &ProtocolParams) -> DecoyResult {
    let mut flags = Flags::default();
    let s1 = s1_mean(rates, p);
    if s1.iter().any(|s| s.clamped) {
        flags.insert(Flag::S1Clamped);
    }
    let scale = untagged_windows(p, p.windows);
    let single_x = 2.0 * p.mu_x * (-2.0 * p.mu_x).exp();
    let mut n1 = 0.0;
    let mut n1_raw = 0.0;
    let mut weighted_e1 = 0.0;
    for (j, s) in s1.iter().enumerate() {
        let n1j = scale * p.mode_probs[j] * s.value;
        n1_raw += scale * p.mode_probs[j] * s.raw;
        if n1j > 0.0 {
            let t = rates.slice_error_rate(j);
            let vv = rates.rate(WindowClass::VV, j);
            let e1j = (t - 0.5 * (-2.0 * p.mu_x).exp() * vv) / (single_x * s.value);
            n1 += n1j;
            weighted_e1 += n1j * e1j;
        }
    }
    let s1_mean_lower = s1.iter().zip(&p.mode_probs).map(|(s, pj)| pj * s.value).sum();
    if n1 <= 0.0 {
        flags.insert(Flag::NoUntaggedBits);
        return DecoyResult {
            n1: 0.0,
            e1ph: 0.5,
            n1_mean_lower: 0.0,
            s1_mean_lower,
            e1ph_mean_upper: f64::INFINITY,
            n1_raw: n1_raw.min(0.0),
            e1ph_raw: 1.0,
            audit: None,
            flags,
            budget: None,
        };
    }
    let e1ph_raw = weighted_e1 / n1;
    let e1ph = clamp_e1(e1ph_raw, &mut flags);
    DecoyResult {
        n1,
        e1ph,
        n1_mean_lower: n1,
        s1_mean_lower,
        e1ph_mean_upper: e1ph_raw,
        n1_raw,
        e1ph_raw,
        audit: None,
        flags,
        budget: None,
    }
}
