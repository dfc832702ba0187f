//! Event-level Monte Carlo of the protocol, used as an oracle for the
//! closed-form counting model.
//!
//! Every trial samples both senders' intensity, mode and global phase, draws
//! each of the `2m` detectors as an independent Bernoulli variable with the
//! coherent-state click probability, and applies heralding, mode rejection,
//! bit assignment, and (for `xx` windows) the phase-slice filter.
//!
//! Trials are grouped in shards of [`SHARD_TRIALS`]; shard `k` draws from
//! ChaCha8 seeded with the run seed on stream `k`, so tallies depend only on
//! `(config, n_trials, seed)`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Discrete, DiscreteCDF, Normal, Poisson};
use thiserror::Error;

use crate::analytic::{Detection, ExpectedStats};
use crate::config::{Config, Intensity, WindowClass};
use crate::counts::{ModeBin, ObservedCounts};
use crate::keyrate::CodeBits;
use crate::parallel::Execution;

pub const SHARD_TRIALS: u64 = 1 << 16;
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64(seed), stream = shard index, 65536 trials per shard";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("number of trials must be at least 1")]
    NoTrials,
    #[error("observed and expected statistics come from different configurations")]
    ConfigMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One sender's choices in one window; vacuum pulses carry no mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenderChoice {
    pub intensity: Intensity,
    pub mode: Option<usize>,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub alice: SenderChoice,
    pub bob: SenderChoice,
    /// The single clicking detector, if exactly one clicked.
    pub heralded: Option<(Side, usize)>,
    pub accepted: bool,
    /// `(Alice, Bob)` bits of an accepted code window: send = 1 for Alice, send = 0 for Bob.
    pub bit_values: Option<(u8, u8)>,
}

impl TrialRecord {
    pub fn class(&self) -> WindowClass {
        WindowClass::new(self.alice.intensity, self.bob.intensity)
    }

    /// `θ_A − θ_B`.
    pub fn phase_difference(&self) -> f64 {
        self.alice.phase - self.bob.phase
    }
}

struct Sampler<'a> {
    config: &'a Config,
    det: Detection,
    cumulative_intensity: [f64; 3],
    cumulative_modes: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(config: &'a Config) -> Self {
        let p = &config.protocol;
        let mut acc = 0.0;
        let cumulative_modes = p.mode_probs.iter().map(|q| {
            acc += q;
            acc
        });
        let cumulative_modes = cumulative_modes.collect();
        Sampler {
            config,
            det: Detection::new(config),
            cumulative_intensity: [p.p_v, p.p_v + p.p_x, p.p_v + p.p_x + p.p_y],
            cumulative_modes,
        }
    }

    fn sender(&self, rng: &mut ChaCha8Rng) -> SenderChoice {
        let u: f64 = rng.random();
        let c = &self.cumulative_intensity;
        let intensity = if u < c[0] {
            Intensity::Vacuum
        } else if u < c[1] {
            Intensity::X
        } else if u < c[2] {
            Intensity::Y
        } else {
            Intensity::Z
        };
        let mode = if intensity.is_vacuum() {
            None
        } else {
            let u: f64 = rng.random();
            let j = self.cumulative_modes.iter().position(|&c| u < c);
            Some(j.unwrap_or(self.cumulative_modes.len() - 1))
        };
        SenderChoice { intensity, mode, phase: TAU * rng.random::<f64>() }
    }

    /// `(left, right)` mean photon numbers at the detectors of mode `k`.
    fn port_intensities(&self, a: &SenderChoice, b: &SenderChoice, k: usize) -> (f64, f64) {
        let p = &self.config.protocol;
        let lit = |s: &SenderChoice| (s.mode == Some(k)).then(|| p.intensity(s.intensity));
        match (lit(a), lit(b)) {
            (Some(ma), Some(mb)) => self.det.interference_intensities(ma, mb, a.phase - b.phase),
            (Some(mu), None) | (None, Some(mu)) => {
                let i = self.det.single_pulse_intensity(mu);
                (i, i)
            }
            (None, None) => (0.0, 0.0),
        }
    }

    fn trial(&self, rng: &mut ChaCha8Rng) -> TrialRecord {
        let alice = self.sender(rng);
        let bob = self.sender(rng);
        let mut clicks = 0;
        let mut last = (Side::Left, 0);
        for k in 0..self.det.modes {
            let (il, ir) = self.port_intensities(&alice, &bob, k);
            for (side, i) in [(Side::Left, il), (Side::Right, ir)] {
                if rng.random::<f64>() < self.det.click_probability(i) {
                    clicks += 1;
                    last = (side, k);
                }
            }
        }
        let heralded = (clicks == 1).then_some(last);
        let accepted = heralded.is_some_and(|(_, k)| [alice.mode, bob.mode].iter().all(|m| m.is_none_or(|m| m == k)));
        let code = WindowClass::new(alice.intensity, bob.intensity).is_code_class();
        let bit_values = (accepted && code).then(|| {
            (u8::from(!alice.intensity.is_vacuum()), u8::from(bob.intensity.is_vacuum()))
        });
        TrialRecord { alice, bob, heralded, accepted, bit_values }
    }
}

/// Adds one trial to a tally; the phase-slice filter is applied here.
pub fn tally(record: &TrialRecord, lambda_slice: f64, counts: &mut ObservedCounts) {
    let class = record.class();
    let heralded = f64::from(u8::from(record.heralded.is_some()));
    let accepted = f64::from(u8::from(record.accepted));
    if class.is_vacuum_vacuum() {
        for j in 0..counts.modes() {
            counts.get_mut(class, ModeBin::Mode(j)).windows += 1.0;
        }
        if let Some((_, k)) = record.heralded {
            let b = counts.get_mut(class, ModeBin::Mode(k));
            b.heralded += 1.0;
            b.accepted += accepted;
            b.errors += accepted;
        }
        return;
    }
    let bin = match (record.alice.mode, record.bob.mode) {
        (Some(a), Some(b)) if a != b => ModeBin::Mixed,
        (Some(j), _) | (_, Some(j)) => ModeBin::Mode(j),
        (None, None) => unreachable!("non-vacuum window without a mode"),
    };
    let error = if class == WindowClass::XX {
        let c = record.phase_difference().cos();
        let in_slice = 1.0 - c.abs() <= lambda_slice;
        let dim = if c > 0.0 { Side::Right } else { Side::Left };
        record.accepted && in_slice && record.heralded.is_some_and(|(s, _)| s == dim)
    } else {
        record.bit_values.is_some_and(|(a, b)| a != b)
    };
    let b = counts.get_mut(class, bin);
    b.windows += 1.0;
    b.heralded += heralded;
    b.accepted += accepted;
    b.errors += f64::from(u8::from(error));
}

fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

/// Trial records of the first `n` trials of a run (the same stream as [`simulate`]).
pub fn records(config: &Config, n: u64, seed: u64) -> Vec<TrialRecord> {
    let s = Sampler::new(config);
    let mut out = Vec::with_capacity(n as usize);
    let mut shard = 0;
    while (out.len() as u64) < n {
        let mut rng = shard_rng(seed, shard);
        let take = SHARD_TRIALS.min(n - out.len() as u64);
        out.extend((0..take).map(|_| s.trial(&mut rng)));
        shard += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub config: Config,
    pub n_trials: u64,
    pub seed: u64,
    pub counts: ObservedCounts,
}

pub fn simulate(config: &Config, n_trials: u64, seed: u64, execution: Execution) -> Result<MonteCarloRun, McError> {
    if n_trials == 0 {
        return Err(McError::NoTrials);
    }
    let sampler = Sampler::new(config);
    let m = config.protocol.modes;
    let lambda = config.protocol.lambda_slice;
    let shards = n_trials.div_ceil(SHARD_TRIALS);
    let parts = execution.map_indexed(shards as usize, |k| {
        let k = k as u64;
        let mut rng = shard_rng(seed, k);
        let take = SHARD_TRIALS.min(n_trials - k * SHARD_TRIALS);
        let mut c = ObservedCounts::new(m, take as f64);
        for _ in 0..take {
            tally(&sampler.trial(&mut rng), lambda, &mut c);
        }
        c
    });
    let mut counts = ObservedCounts::new(m, 0.0);
    for p in &parts {
        counts.merge(p);
    }
    Ok(MonteCarloRun { config: config.clone(), n_trials, seed, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Windows,
    Heralded,
    Accepted,
    Errors,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Windows => "windows",
            Quantity::Heralded => "heralded",
            Quantity::Accepted => "accepted",
            Quantity::Errors => "errors",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinComparison {
    pub class: WindowClass,
    pub mode: ModeBin,
    pub quantity: Quantity,
    pub observed: f64,
    pub expected: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub threshold: f64,
    /// Every comparison made, in canonical bin order.
    pub all: Vec<BinComparison>,
    /// Comparisons with `|z| > threshold`.
    pub flagged: Vec<BinComparison>,
}

impl ComparisonReport {
    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn max_abs_z(&self) -> f64 {
        self.all.iter().map(|c| c.z.abs()).fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "class,mode,quantity,observed,expected,z";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.flagged {
            out.push_str(&format!(
                "{},{},{},{:.9e},{:.9e},{:.6e}\n",
                c.class,
                c.mode,
                c.quantity.name(),
                c.observed,
                c.expected,
                c.z
            ));
        }
        out
    }
}

/// Below this binomial variance the normal approximation is replaced by a mid-p Poisson tail.
const NORMAL_MIN_VARIANCE: f64 = 25.0;

/// Signed z-score of observing `k` events out of `n` trials of probability `p`
/// whose expected count is `mean`.
pub fn z_score(k: f64, n: f64, p: f64, mean: f64) -> f64 {
    if k == mean {
        return 0.0;
    }
    if mean <= 0.0 {
        return f64::INFINITY;
    }
    let var = n * p * (1.0 - p);
    if var >= NORMAL_MIN_VARIANCE {
        return (k - mean) / var.sqrt();
    }
    let poisson = Poisson::new(mean).expect("positive mean");
    let normal = Normal::standard();
    let k = k.round().max(0.0) as u64;
    let half = 0.5 * poisson.pmf(k);
    if (k as f64) >= mean {
        let upper = poisson.sf(k) + half;
        -normal.inverse_cdf(upper)
    } else {
        let lower = if k == 0 { 0.0 } else { poisson.cdf(k - 1) } + half;
        normal.inverse_cdf(lower)
    }
}

fn same_setup(a: &Config, b: &Config) -> bool {
    let mut a = a.clone();
    a.protocol.windows = b.protocol.windows;
    a == *b
}

/// Per-bin z-scores of a Monte Carlo tally against the closed-form model.
///
/// Window counts are tested against the multinomial class probabilities;
/// event counts are tested conditionally on the observed window count.
pub fn compare(run: &MonteCarloRun, expected: &ExpectedStats, sigma_threshold: f64) -> Result<ComparisonReport, McError> {
    if !same_setup(&run.config, &expected.config) {
        return Err(McError::ConfigMismatch);
    }
    let obs = &run.counts;
    let exp = expected.expected_counts();
    let total_obs = obs.total_windows;
    let total_exp = exp.total_windows;
    let mut all = Vec::new();
    for (class, mode, o) in obs.iter() {
        let e = exp.get(class, mode);
        let mut push = |quantity, observed: f64, n_obs: f64, expected_q: f64, n_exp: f64| {
            let p = if n_exp > 0.0 { expected_q / n_exp } else { 0.0 };
            let mean = if n_obs == n_exp { expected_q } else { p * n_obs };
            let z = z_score(observed, n_obs, p, mean);
            all.push(BinComparison { class, mode, quantity, observed, expected: mean, z });
        };
        let vv_repeat = class.is_vacuum_vacuum() && mode != ModeBin::Mode(0);
        if !vv_repeat {
            push(Quantity::Windows, o.windows, total_obs, e.windows, total_exp);
        }
        push(Quantity::Heralded, o.heralded, o.windows, e.heralded, e.windows);
        push(Quantity::Accepted, o.accepted, o.windows, e.accepted, e.windows);
        if class == WindowClass::VV || class == WindowClass::ZZ || class == WindowClass::XX {
            push(Quantity::Errors, o.errors, o.windows, e.errors, e.windows);
        }
    }
    let flagged = all.iter().copied().filter(|c| c.z.abs() > sigma_threshold).collect();
    Ok(ComparisonReport { threshold: sigma_threshold, all, flagged })
}

/// Code-bit error rate of a tally against the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberCheck {
    pub observed: f64,
    pub expected: f64,
    /// Binomial standard deviation `√(E(1−E)/n_t)` at the expected rate.
    pub sigma: f64,
    pub z: f64,
}

pub fn qber_check(run: &MonteCarloRun, expected: &ExpectedStats) -> Result<QberCheck, McError> {
    if !same_setup(&run.config, &expected.config) {
        return Err(McError::ConfigMismatch);
    }
    let observed_bits = CodeBits::from_counts(&run.counts);
    let e = CodeBits::from_rates(expected, &expected.config.protocol).e_t;
    let sigma = (e * (1.0 - e) / observed_bits.n_t).sqrt();
    let z = if observed_bits.e_t == e { 0.0 } else { (observed_bits.e_t - e) / sigma };
    Ok(QberCheck { observed: observed_bits.e_t, expected: e, sigma, z })
}
