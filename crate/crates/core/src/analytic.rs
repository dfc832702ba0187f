//! Closed-form expected counting statistics under the linear loss model.
//!
//! Charlie has `2m` threshold detectors: a left and a right port for each of
//! the `m` redundant-space modes. A detector illuminated with mean photon
//! number `I` clicks with probability `1 − (1−d)·e^{−I}`.
//!
//! When both senders use the same mode with phase difference `δ`, the ports
//! of that mode see
//!
//! ```text
//! I_left  = (x + y'·cos δ) / 2,   I_right = (x − y'·cos δ) / 2
//! x = η(μ_l + μ_r),  y' = (1 − 2E_d) · 2η√(μ_l μ_r)
//! ```
//!
//! so for `cos δ > 0` the left port is bright and a right click is a phase
//! error. Light sent in different modes does not interfere; each pulse splits
//! evenly over the two ports of its own mode. A window is heralded when
//! exactly one of the `2m` detectors clicks and accepted when, in addition,
//! the clicked mode equals the mode of every non-vacuum sender.
//!
//! Counting rates do not depend on the mode index (the channel is
//! mode-symmetric), so each class is evaluated once and replicated.

use std::f64::consts::PI;

use crate::config::{per_arm_transmittance, Config, ProtocolParams, WindowClass};
use crate::counts::{BinCounts, ModeBin, ObservedCounts, RateSource};
use crate::numeric::{bessel_i0_minus_one, integrate};

/// Relative tolerance of the phase-slice quadrature.
pub const SLICE_QUADRATURE_TOLERANCE: f64 = 1e-10;

/// Detector-side physics shared by the analytic model and the Monte Carlo oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Per-arm transmittance including detector efficiency.
    pub eta: f64,
    pub dark: f64,
    /// Interference visibility `1 − 2E_d`.
    pub visibility: f64,
    pub modes: usize,
}

impl Detection {
    pub fn new(config: &Config) -> Self {
        Self {
            eta: per_arm_transmittance(&config.channel),
            dark: config.channel.dark,
            visibility: 1.0 - 2.0 * config.channel.misalignment,
            modes: config.protocol.modes,
        }
    }

    /// `1 − (1−d)e^{−I}`, written to avoid cancellation at small `I` and `d`.
    pub fn click_probability(&self, intensity: f64) -> f64 {
        self.dark * (-intensity).exp() - (-intensity).exp_m1()
    }

    /// Intensity on each port of a mode carrying a single pulse.
    pub fn single_pulse_intensity(&self, mu: f64) -> f64 {
        self.eta * mu / 2.0
    }

    /// `(left, right)` port intensities for two same-mode pulses at phase difference `delta`.
    pub fn interference_intensities(&self, mu_a: f64, mu_b: f64, delta: f64) -> (f64, f64) {
        let x = self.eta * (mu_a + mu_b);
        let y = self.visibility * 2.0 * self.eta * (mu_a * mu_b).sqrt();
        let c = delta.cos();
        ((x + y * c) / 2.0, (x - y * c) / 2.0)
    }

    fn q(&self) -> f64 {
        1.0 - self.dark
    }

    /// Both detectors of an unlit mode stay silent.
    fn dark_mode_silent(&self) -> f64 {
        self.q() * self.q()
    }

    /// Exactly one detector of an unlit mode clicks.
    fn dark_mode_single(&self) -> f64 {
        2.0 * self.dark * self.q()
    }

    /// Silence of all `k` further unlit modes.
    fn silent_dark_modes(&self, k: usize) -> f64 {
        self.dark_mode_silent().powi(k as i32)
    }

    /// Exactly one click in a mode carrying one pulse of mean photon number `mu`.
    fn single_pulse_single(&self, mu: f64) -> f64 {
        let i = self.single_pulse_intensity(mu);
        2.0 * self.q() * (-i).exp() * self.click_probability(i)
    }

    fn single_pulse_silent(&self, mu: f64) -> f64 {
        let s = self.q() * (-self.single_pulse_intensity(mu)).exp();
        s * s
    }

    /// Exactly one click in an interfering mode, averaged over a uniform phase.
    fn interference_single(&self, mu_a: f64, mu_b: f64) -> f64 {
        let q = self.q();
        let x = self.eta * (mu_a + mu_b);
        let y = self.visibility * 2.0 * self.eta * (mu_a * mu_b).sqrt();
        // e^{-x/2}·I₀(y/2) − q·e^{-x} = e^{-x/2}·[(I₀(y/2) − 1) + click(x/2)]
        2.0 * q * (-x / 2.0).exp() * (bessel_i0_minus_one(y / 2.0) + self.click_probability(x / 2.0))
    }

    fn interference_silent(&self, mu_a: f64, mu_b: f64) -> f64 {
        let q = self.q();
        q * q * (-self.eta * (mu_a + mu_b)).exp()
    }

    /// Dim-port click with the bright port and all other modes silent,
    /// averaged over `|δ| ∈ [0, Δ/2]`.
    pub fn slice_error(&self, mu_a: f64, mu_b: f64, slice_width: f64) -> f64 {
        let q = self.q();
        let x = self.eta * (mu_a + mu_b);
        let y = self.visibility * 2.0 * self.eta * (mu_a * mu_b).sqrt();
        let half = slice_width / 2.0;
        let integrand = |d: f64| {
            let c = y * d.cos();
            (-(x + c) / 2.0).exp() * self.click_probability((x - c) / 2.0)
        };
        let mean = integrate(integrand, 0.0, half, SLICE_QUADRATURE_TOLERANCE) / half;
        q * mean * self.silent_dark_modes(self.modes - 1)
    }
}

/// Accepted and heralded probabilities per window of one bin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinRates {
    pub accepted: f64,
    pub heralded: f64,
}

impl Detection {
    /// `vv` windows, announcement in one particular mode.
    pub fn vacuum_rates(&self) -> BinRates {
        let r = self.dark_mode_single() * self.silent_dark_modes(self.modes - 1);
        BinRates { accepted: r, heralded: r }
    }

    /// One sender emits intensity `mu` in some mode, the other sends vacuum.
    pub fn one_sided_rates(&self, mu: f64) -> BinRates {
        let m = self.modes;
        let accepted = self.single_pulse_single(mu) * self.silent_dark_modes(m - 1);
        let stray = if m > 1 {
            (m - 1) as f64
                * self.dark_mode_single()
                * self.single_pulse_silent(mu)
                * self.silent_dark_modes(m - 2)
        } else {
            0.0
        };
        BinRates { accepted, heralded: accepted + stray }
    }

    /// Both senders emit, same mode, phase-randomized.
    pub fn same_mode_rates(&self, mu_a: f64, mu_b: f64) -> BinRates {
        let m = self.modes;
        let accepted = self.interference_single(mu_a, mu_b) * self.silent_dark_modes(m - 1);
        let stray = if m > 1 {
            (m - 1) as f64
                * self.dark_mode_single()
                * self.interference_silent(mu_a, mu_b)
                * self.silent_dark_modes(m - 2)
        } else {
            0.0
        };
        BinRates { accepted, heralded: accepted + stray }
    }

    /// Both senders emit in different modes. Nothing can be accepted.
    pub fn mixed_mode_rates(&self, mu_a: f64, mu_b: f64) -> BinRates {
        let m = self.modes;
        if m < 2 {
            return BinRates::default();
        }
        let (oa, sa) = (self.single_pulse_single(mu_a), self.single_pulse_silent(mu_a));
        let (ob, sb) = (self.single_pulse_single(mu_b), self.single_pulse_silent(mu_b));
        let rest = self.silent_dark_modes(m - 2);
        let mut heralded = (oa * sb + ob * sa) * rest;
        if m > 2 {
            heralded += (m - 2) as f64 * self.dark_mode_single() * sa * sb * self.silent_dark_modes(m - 3);
        }
        BinRates { accepted: 0.0, heralded }
    }

    /// Rates for a window class in a given bin shape.
    pub fn class_rates(&self, protocol: &ProtocolParams, class: WindowClass, bin: ModeBin) -> BinRates {
        let mu_a = protocol.intensity(class.alice);
        let mu_b = protocol.intensity(class.bob);
        match (class.alice.is_vacuum(), class.bob.is_vacuum(), bin) {
            (true, true, _) => self.vacuum_rates(),
            (false, true, _) => self.one_sided_rates(mu_a),
            (true, false, _) => self.one_sided_rates(mu_b),
            (false, false, ModeBin::Mode(_)) => self.same_mode_rates(mu_a, mu_b),
            (false, false, ModeBin::Mixed) => self.mixed_mode_rates(mu_a, mu_b),
        }
    }
}

/// Expected number of windows of each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCounts {
    /// `(class, bin, windows)` in canonical bin order.
    pub bins: Vec<(WindowClass, ModeBin, f64)>,
    /// `N_vv = N p_v²`.
    pub vacuum: f64,
    /// `N_Δ(r_j)` per mode.
    pub slice: Vec<f64>,
}

/// Window counts implied by the source probabilities.
pub fn window_counts(protocol: &ProtocolParams) -> WindowCounts {
    let n = protocol.windows;
    let shape = ObservedCounts::new(protocol.modes, n);
    let same_mode: f64 = protocol.mode_probs.iter().map(|p| p * p).sum();
    let bins = shape
        .keys()
        .map(|(class, bin)| {
            let pl = protocol.probability(class.alice);
            let pr = protocol.probability(class.bob);
            let w = match (class.alice.is_vacuum(), class.bob.is_vacuum(), bin) {
                (true, true, _) => n * pl * pr,
                (false, false, ModeBin::Mode(j)) => n * pl * pr * protocol.mode_probs[j].powi(2),
                (false, false, ModeBin::Mixed) => n * pl * pr * (1.0 - same_mode).max(0.0),
                (_, _, ModeBin::Mode(j)) => n * pl * pr * protocol.mode_probs[j],
                (_, _, ModeBin::Mixed) => unreachable!("one-sided classes have no mixed bin"),
            };
            (class, bin, w)
        })
        .collect();
    let slice_fraction = protocol.slice_width() / PI;
    WindowCounts {
        bins,
        vacuum: n * protocol.p_v * protocol.p_v,
        slice: protocol
            .mode_probs
            .iter()
            .map(|pj| slice_fraction * protocol.p_x * protocol.p_x * n * pj * pj)
            .collect(),
    }
}

/// Phase-slice statistics of one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceStats {
    /// `N_Δ(r_j)`.
    pub windows: f64,
    /// `T_Δ(r_j)`.
    pub error_rate: f64,
    /// Expected `W_TX(r_j)`.
    pub errors: f64,
}

/// `T_Δ(r_j)` and the expected `W_TX(r_j)` for every mode.
pub fn phase_slice_error_rate(config: &Config) -> Vec<SliceStats> {
    let det = Detection::new(config);
    let p = &config.protocol;
    let t = det.slice_error(p.mu_x, p.mu_x, p.slice_width());
    window_counts(p)
        .slice
        .into_iter()
        .map(|windows| SliceStats { windows, error_rate: t, errors: windows * t })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedBin {
    pub class: WindowClass,
    pub mode: ModeBin,
    pub windows: f64,
    /// Accepted probability per window (`S_lr(r_j)`).
    pub rate: f64,
    pub heralded_rate: f64,
    /// Expected error events (bit errors, or `W_TX` for `xx`).
    pub errors: f64,
}

/// Expected statistics of every bin for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedStats {
    pub config: Config,
    pub eta: f64,
    pub bins: Vec<ExpectedBin>,
    pub slice: Vec<SliceStats>,
}

/// Fills every bin's counting rate and window count.
pub fn counting_rates(config: &Config) -> ExpectedStats {
    let det = Detection::new(config);
    let p = &config.protocol;
    let counts = window_counts(p);
    let slice = phase_slice_error_rate(config);

    let mut cache: [[Option<BinRates>; 2]; WindowClass::COUNT] = [[None; 2]; WindowClass::COUNT];
    let bins = counts
        .bins
        .iter()
        .map(|&(class, mode, windows)| {
            let k = usize::from(mode == ModeBin::Mixed);
            let r = *cache[class.index()][k].get_or_insert_with(|| det.class_rates(p, class, mode));
            let errors = match (class, mode) {
                (WindowClass::VV, _) => windows * r.accepted,
                (WindowClass::ZZ, _) => windows * r.accepted,
                (WindowClass::XX, ModeBin::Mode(j)) => slice[j].errors,
                _ => 0.0,
            };
            ExpectedBin {
                class,
                mode,
                windows,
                rate: r.accepted,
                heralded_rate: r.heralded,
                errors,
            }
        })
        .collect();
    ExpectedStats { config: config.clone(), eta: det.eta, bins, slice }
}

impl ExpectedStats {
    pub fn bin(&self, class: WindowClass, mode: ModeBin) -> Option<&ExpectedBin> {
        self.bins.iter().find(|b| b.class == class && b.mode == mode)
    }

    /// Expected counts in the same shape as a Monte Carlo tally.
    pub fn expected_counts(&self) -> ObservedCounts {
        let mut out = ObservedCounts::new(self.config.protocol.modes, self.config.protocol.windows);
        for b in &self.bins {
            *out.get_mut(b.class, b.mode) = BinCounts {
                windows: b.windows,
                heralded: b.windows * b.heralded_rate,
                accepted: b.windows * b.rate,
                errors: b.errors,
            };
        }
        out
    }

    pub const CSV_HEADER: &'static str = "class,mode,windows,rate";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for b in &self.bins {
            out.push_str(&format!("{},{},{:.9e},{:.9e}\n", b.class, b.mode, b.windows, b.rate));
        }
        for (j, s) in self.slice.iter().enumerate() {
            out.push_str(&format!("slice,{j},{:.9e},{:.9e}\n", s.windows, s.error_rate));
        }
        out
    }
}

impl RateSource for ExpectedStats {
    fn modes(&self) -> usize {
        self.config.protocol.modes
    }

    fn rate(&self, class: WindowClass, mode: usize) -> f64 {
        self.bin(class, ModeBin::Mode(mode)).map_or(0.0, |b| b.rate)
    }

    fn slice_error_rate(&self, mode: usize) -> f64 {
        self.slice[mode].error_rate
    }
}
