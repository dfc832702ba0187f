//! Original sending-or-not-sending protocol without a redundant space: one
//! interference mode, two detectors, no mode post-selection.
//!
//! Written directly from the two-detector model rather than by specializing
//! the `m`-mode code, and used to check that the general pipeline at `m = 1`
//! reduces to it. Arithmetic is ordered so that the reduction is exact.

use std::f64::consts::PI;

use crate::config::{per_arm_transmittance, Config};
use crate::keyrate::security_overhead;
use crate::numeric::{bessel_i0_minus_one, integrate};
use crate::stats::{binary_entropy, BoundBudget, StatsError};

/// Counting rates of the two-detector setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnsRates {
    pub s_vv: f64,
    /// `S_vx = S_xv`, `S_vy = S_yv`, `S_vz = S_zv` by symmetry.
    pub s_x: f64,
    pub s_y: f64,
    pub s_z: f64,
    pub s_zz: f64,
    /// Error rate `T_Δ` of phase-sliced `xx` windows.
    pub t_slice: f64,
}

pub fn sns_rates(config: &Config) -> SnsRates {
    let p = &config.protocol;
    let eta = per_arm_transmittance(&config.channel);
    let d = config.channel.dark;
    let q = 1.0 - d;
    let vis = 1.0 - 2.0 * config.channel.misalignment;
    let click = |i: f64| d * (-i).exp() - (-i).exp_m1();
    // one pulse, split over both detectors
    let one = |mu: f64| {
        let i = eta * mu / 2.0;
        2.0 * q * (-i).exp() * click(i)
    };
    let x = eta * (p.mu_z + p.mu_z);
    let y = vis * 2.0 * eta * (p.mu_z * p.mu_z).sqrt();
    let s_zz = 2.0 * q * (-x / 2.0).exp() * (bessel_i0_minus_one(y / 2.0) + click(x / 2.0));

    let x = eta * (p.mu_x + p.mu_x);
    let y = vis * 2.0 * eta * (p.mu_x * p.mu_x).sqrt();
    let half = p.slice_width() / 2.0;
    let wrong_port = |delta: f64| {
        let c = y * delta.cos();
        (-(x + c) / 2.0).exp() * click((x - c) / 2.0)
    };
    let t_slice = q * (integrate(wrong_port, 0.0, half, crate::analytic::SLICE_QUADRATURE_TOLERANCE) / half);

    SnsRates { s_vv: 2.0 * d * q, s_x: one(p.mu_x), s_y: one(p.mu_y), s_z: one(p.mu_z), s_zz, t_slice }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnsResult {
    pub n1: f64,
    pub e1ph: f64,
    pub n_t: f64,
    pub e_t: f64,
    pub key_length: f64,
    pub rate: f64,
}

/// Finite-key rate of the original protocol with expected counts as observations.
pub fn evaluate_sns(config: &Config) -> Result<SnsResult, StatsError> {
    let p = &config.protocol;
    let s = &config.security;
    let n = p.windows;
    let r = sns_rates(config);

    // code bits and their error rate
    let n_v = n * p.p_v * p.p_v * r.s_vv;
    let n_c = n * p.p_z * p.p_v * (r.s_z + r.s_z);
    let n_d = n * p.p_z * p.p_z * r.s_zz;
    let n_t = n_v + n_c + n_d;
    let e_t = if n_t > 0.0 { (n_v + n_d) / n_t } else { 0.0 };

    // observed sums
    let sx = n * p.p_v * p.p_x * r.s_x + n * p.p_x * p.p_v * r.s_x;
    let sy = n * p.p_v * p.p_y * r.s_y + n * p.p_y * p.p_v * r.s_y;
    let svv = n * p.p_v * p.p_v * r.s_vv;
    let w = p.slice_width() / PI * p.p_x * p.p_x * n * r.t_slice;

    let mut budget = BoundBudget::new(s.xi)?;
    let lx = budget.phi_lower(sx)?;
    let uy = budget.phi_upper(sy)?;
    let uvv = budget.phi_upper(svv)?;
    let z1 = p.mu_z * (-p.mu_z).exp();
    let den = 2.0 * p.mu_x * p.mu_y * (p.mu_y - p.mu_x);
    let n1_mean = n * 2.0 * p.p_v * p.p_z * z1 / den
        * (p.mu_x.exp() * p.mu_y * p.mu_y / (n * p.p_v * p.p_x) * lx
            - p.mu_y.exp() * p.mu_x * p.mu_x / (n * p.p_v * p.p_y) * uy
            - 2.0 * (p.mu_y * p.mu_y - p.mu_x * p.mu_x) / (n * p.p_v * p.p_v) * uvv);
    if n1_mean <= 0.0 {
        return Ok(SnsResult { n1: 0.0, e1ph: 0.5, n_t, e_t, key_length: 0.0, rate: 0.0 });
    }
    let n1 = budget.varphi_lower(n1_mean)?;

    let uw = budget.phi_upper(w)?;
    let lvv = budget.phi_lower(svv)?;
    let e1_mean = p.p_v * p.p_z * z1 * PI
        / (p.p_x * p.p_x * p.mu_x * (-2.0 * p.mu_x).exp() * p.slice_width() * n1_mean)
        * uw
        - p.p_z * z1 / (2.0 * p.p_v * p.mu_x * n1_mean) * lvv;
    let e1_raw = if n1 > 0.0 && e1_mean >= 0.0 { budget.varphi_upper(n1 * e1_mean)? / n1 } else { e1_mean };
    let e1ph = e1_raw.clamp(0.0, 0.5);

    let leak = s.f_ec * n_t * binary_entropy(e_t)?;
    let untagged = if n1 > 0.0 { n1 * (1.0 - binary_entropy(e1ph)?) } else { 0.0 };
    let raw = untagged - leak - security_overhead(s);
    let key_length = if raw > 0.0 && n1 > 0.0 { raw } else { 0.0 };
    Ok(SnsResult { n1, e1ph, n_t, e_t, key_length, rate: key_length / n })
}
