//! Code-bit accounting, the key-length formula, and repeaterless bounds.

use std::f64::consts::{LN_2, SQRT_2};

use thiserror::Error;

use crate::analytic::counting_rates;
use crate::config::{ChannelParams, Config, ProtocolParams, SecurityParams, WindowClass};
use crate::counts::{ObservedCounts, RateSource};
use crate::decoy::{self, DecoyError, DecoyResult};
use crate::diagnostics::{Flag, Flags};
use crate::stats::{binary_entropy, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Code-bit tallies: vacuum (`n_V`), one-sided (`n_C`) and two-sided (`n_D`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeBits {
    pub n_v: f64,
    pub n_c: f64,
    pub n_d: f64,
    pub n_t: f64,
    /// Bit-flip error rate among code bits; 0 when there are none.
    pub e_t: f64,
}

impl CodeBits {
    fn from_parts(n_v: f64, n_c: f64, n_d: f64) -> Self {
        let n_t = n_v + n_c + n_d;
        let e_t = if n_t > 0.0 { (n_v + n_d) / n_t } else { 0.0 };
        CodeBits { n_v, n_c, n_d, n_t, e_t }
    }

    /// Direct tally of accepted events in `vv`, `vz`/`zv` and `zz` windows.
    pub fn from_counts(counts: &ObservedCounts) -> Self {
        Self::from_parts(
            counts.accepted_sum(WindowClass::VV),
            counts.accepted_sum(WindowClass::VZ) + counts.accepted_sum(WindowClass::ZV),
            counts.accepted_sum(WindowClass::ZZ),
        )
    }

    /// From per-mode counting rates and the nominal window count:
    ///
    /// ```text
    /// n_V = N p_v² Σ_j S_vv(r_j)
    /// n_C = N p_z p_v Σ_j P_j [S_vz(r_j) + S_zv(r_j)]
    /// n_D = N p_z² Σ_j P_j² S_zz(r_j)
    /// ```
    pub fn from_rates(rates: &impl RateSource, p: &ProtocolParams) -> Self {
        let n = p.windows;
        let modes = 0..rates.modes();
        let s_vv: f64 = modes.clone().map(|j| rates.rate(WindowClass::VV, j)).sum();
        let s_c: f64 = modes
            .clone()
            .map(|j| p.mode_probs[j] * (rates.rate(WindowClass::VZ, j) + rates.rate(WindowClass::ZV, j)))
            .sum();
        let s_d: f64 = modes.map(|j| p.mode_probs[j] * p.mode_probs[j] * rates.rate(WindowClass::ZZ, j)).sum();
        Self::from_parts(
            n * p.p_v * p.p_v * s_vv,
            n * p.p_z * p.p_v * s_c,
            n * p.p_z * p.p_z * s_d,
        )
    }
}

/// `E_t` for uniform modes and mode-independent rates `S̃`:
/// `(p_v² m² S̃_vv + p_z² S̃_zz) / (p_v² m² S̃_vv + p_z² S̃_zz + m p_z p_v (S̃_vz + S̃_zv))`.
pub fn qber_uniform_modes(p: &ProtocolParams, s_vv: f64, s_vz: f64, s_zv: f64, s_zz: f64) -> f64 {
    let m = p.modes as f64;
    let wrong = p.p_v * p.p_v * m * m * s_vv + p.p_z * p.p_z * s_zz;
    let total = wrong + m * p.p_z * p.p_v * (s_vz + s_zv);
    if total > 0.0 {
        wrong / total
    } else {
        0.0
    }
}

/// `E_t` without post-selection and without vacuum counts:
/// `p_z² S_zz / (p_z² S_zz + p_z p_v (S_vz + S_zv))`.
pub fn qber_without_modes(p_v: f64, p_z: f64, s_vz: f64, s_zv: f64, s_zz: f64) -> f64 {
    let wrong = p_z * p_z * s_zz;
    let total = wrong + p_z * p_v * (s_vz + s_zv);
    if total > 0.0 {
        wrong / total
    } else {
        0.0
    }
}

/// Bits consumed by error verification and privacy amplification:
/// `log₂(2/ε_cor) + 2 log₂(1/(√2 ε_PA ε̂))`.
pub fn security_overhead(security: &SecurityParams) -> f64 {
    (2.0 / security.eps_cor).log2() + 2.0 * (1.0 / (SQRT_2 * security.eps_pa * security.eps_hat)).log2()
}

/// Key length before clamping at 0.
pub fn key_length_unclamped(
    n1: f64,
    e1ph: f64,
    n_t: f64,
    e_t: f64,
    security: &SecurityParams,
) -> Result<f64, StatsError> {
    Ok(n1 * (1.0 - binary_entropy(e1ph)?)
        - security.f_ec * n_t * binary_entropy(e_t)?
        - security_overhead(security))
}

/// `N_f = n₁[1 − H(e₁ᵖʰ)] − f n_t H(E_t) − log₂(2/ε_cor) − 2 log₂(1/(√2 ε_PA ε̂))`, floored at 0.
pub fn key_length(n1: f64, e1ph: f64, n_t: f64, e_t: f64, security: &SecurityParams) -> Result<f64, StatsError> {
    if n1 <= 0.0 {
        return Ok(0.0);
    }
    Ok(key_length_unclamped(n1, e1ph, n_t, e_t, security)?.max(0.0))
}

/// Repeaterless bound `−log₂(1 − η_tot)` with `η_tot = 10^{−αL/10}`, times `η₀` if requested.
pub fn plob_bound(channel: &ChannelParams, use_detector_efficiency: bool) -> f64 {
    let mut eta = 10f64.powf(-channel.alpha_db_km * channel.distance_km / 10.0);
    if use_detector_efficiency {
        eta *= channel.eta0;
    }
    -(-eta).ln_1p() / LN_2
}

/// Which decoy analysis the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Analysis {
    #[default]
    Finite,
    /// Expectations in place of every bound; the constant security overhead is dropped.
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateResult {
    pub analysis: Analysis,
    pub distance_km: f64,
    pub protocol: ProtocolParams,
    pub n1: f64,
    pub e1ph: f64,
    pub code: CodeBits,
    /// Secret key length in bits.
    pub key_length: f64,
    /// Key bits per window.
    pub rate: f64,
    /// Equal to `rate` wherever that is positive; otherwise the continued key
    /// length per window able to carry an untagged bit, which is negative,
    /// continuous at zero, and unbounded below toward degenerate settings.
    pub objective: f64,
    /// Repeaterless bound including detector efficiency.
    pub plob1: f64,
    /// Repeaterless bound of the fiber alone.
    pub plob2: f64,
    pub decoy: DecoyResult,
    pub flags: Flags,
}

/// `H` on `[0, 1/2]`, continued linearly above 1/2 so it keeps growing.
fn entropy_continued(e: f64) -> f64 {
    let clamped = e.clamp(0.0, 0.5);
    let h = binary_entropy(clamped).unwrap_or(1.0);
    h + 2.0 * (e - 0.5).max(0.0)
}

fn assemble(
    config: &Config,
    analysis: Analysis,
    decoy: DecoyResult,
    code: CodeBits,
) -> Result<KeyRateResult, PipelineError> {
    let s = &config.security;
    let overhead = match analysis {
        Analysis::Finite => security_overhead(s),
        Analysis::Asymptotic => 0.0,
    };
    let mut flags = decoy.flags.clone();
    if code.n_t == 0.0 {
        flags.insert(Flag::NoCodeBits);
    }
    let leak = s.f_ec * code.n_t * binary_entropy(code.e_t)?;
    let untagged = if decoy.n1 > 0.0 { decoy.n1 * (1.0 - binary_entropy(decoy.e1ph)?) } else { 0.0 };
    let unclamped = untagged - leak - overhead;
    let key_length = if unclamped > 0.0 && decoy.n1 > 0.0 {
        unclamped
    } else {
        flags.insert(Flag::KeyClamped);
        0.0
    };
    let continued = if decoy.n1_raw > 0.0 {
        decoy.n1_raw * (1.0 - entropy_continued(decoy.e1ph_raw))
    } else {
        decoy.n1_raw
    };
    let raw = continued - s.f_ec * code.n_t * entropy_continued(code.e_t) - overhead;
    let n = config.protocol.windows;
    let p = &config.protocol;
    // windows that can hold an untagged bit; vanishes at every degenerate corner
    let scale = n * 2.0 * p.p_v * p.p_z * p.mu_z * (-p.mu_z).exp();
    let rate = key_length / n;
    Ok(KeyRateResult {
        analysis,
        distance_km: config.channel.distance_km,
        protocol: config.protocol.clone(),
        n1: decoy.n1,
        e1ph: decoy.e1ph,
        code,
        key_length,
        rate,
        objective: if rate > 0.0 {
            rate
        } else if scale > 0.0 {
            raw.min(0.0) / scale
        } else {
            f64::NEG_INFINITY
        },
        plob1: plob_bound(&config.channel, true),
        plob2: plob_bound(&config.channel, false),
        decoy,
        flags,
    })
}

/// Full expected-value pipeline: counting model, decoy analysis, key length.
pub fn evaluate(config: &Config, analysis: Analysis) -> Result<KeyRateResult, PipelineError> {
    let stats = counting_rates(config);
    let code = CodeBits::from_rates(&stats, &config.protocol);
    let decoy = match analysis {
        Analysis::Finite => decoy::finite_key(&stats.expected_counts(), config)?,
        Analysis::Asymptotic => decoy::asymptotic(&stats, &config.protocol),
    };
    assemble(config, analysis, decoy, code)
}

/// Finite-key pipeline on observed counts (for instance a Monte Carlo tally).
pub fn evaluate_observed(counts: &ObservedCounts, config: &Config) -> Result<KeyRateResult, PipelineError> {
    let decoy = decoy::finite_key(counts, config)?;
    assemble(config, Analysis::Finite, decoy, CodeBits::from_counts(counts))
}

impl KeyRateResult {
    pub const CSV_HEADER: &'static str =
        "distance_km,m,p_v,p_x,p_y,p_z,mu_x,mu_y,mu_z,lambda,N,n1,e1ph,n_t,E_t,N_f,rate,plob1,plob2,flags";

    pub fn csv_row(&self) -> String {
        let p = &self.protocol;
        let nums = [
            p.p_v,
            p.p_x,
            p.p_y,
            p.p_z,
            p.mu_x,
            p.mu_y,
            p.mu_z,
            p.lambda_slice,
            p.windows,
            self.n1,
            self.e1ph,
            self.code.n_t,
            self.code.e_t,
            self.key_length,
            self.rate,
            self.plob1,
            self.plob2,
        ];
        let mut row = format!("{:.9e},{}", self.distance_km, p.modes);
        for x in nums {
            row.push_str(&format!(",{x:.9e}"));
        }
        row.push(',');
        row.push_str(&self.flags.to_string());
        row
    }
}
