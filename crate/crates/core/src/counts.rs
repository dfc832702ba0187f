//! Per-window-class, per-mode event tallies.
//!
//! Bins are keyed by window class and a [`ModeBin`]:
//!
//! * one-sided classes and two-sided classes where both senders picked the
//!   same mode `j` use `Mode(j)`;
//! * two-sided windows where the senders picked different modes share the
//!   `Mixed` bin (no event there can be accepted);
//! * `vv` windows carry no mode, so `Mode(j)` of `vv` counts events that
//!   were announced in mode `j` and its `windows` field is the total number
//!   of `vv` windows, matching `S_vv(r_j) = n_vv(r_j) / N_vv`.

use std::fmt;

use thiserror::Error;

use crate::config::{Intensity, ProtocolParams, WindowClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeBin {
    Mode(usize),
    Mixed,
}

impl fmt::Display for ModeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeBin::Mode(j) => write!(f, "{j}"),
            ModeBin::Mixed => f.write_str("mixed"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinCounts {
    pub windows: f64,
    /// Windows with exactly one click among all detectors.
    pub heralded: f64,
    /// Heralded windows surviving mode post-selection.
    pub accepted: f64,
    /// Bit errors for code classes; phase-slice errors `W_TX` for `xx`.
    pub errors: f64,
}

impl BinCounts {
    fn add(&mut self, other: &BinCounts) {
        self.windows += other.windows;
        self.heralded += other.heralded;
        self.accepted += other.accepted;
        self.errors += other.errors;
    }
}

/// Observed (or expected) counts for every bin of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCounts {
    modes: usize,
    /// Total number of time windows in the run.
    pub total_windows: f64,
    bins: Vec<BinCounts>,
}

impl ObservedCounts {
    pub fn new(modes: usize, total_windows: f64) -> Self {
        Self {
            modes,
            total_windows,
            bins: vec![BinCounts::default(); WindowClass::COUNT * (modes + 1)],
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    fn slot(&self, class: WindowClass, bin: ModeBin) -> usize {
        let s = match bin {
            ModeBin::Mode(j) => {
                assert!(j < self.modes, "mode {j} out of range for m = {}", self.modes);
                j
            }
            ModeBin::Mixed => self.modes,
        };
        class.index() * (self.modes + 1) + s
    }

    pub fn get(&self, class: WindowClass, bin: ModeBin) -> &BinCounts {
        &self.bins[self.slot(class, bin)]
    }

    pub fn get_mut(&mut self, class: WindowClass, bin: ModeBin) -> &mut BinCounts {
        let i = self.slot(class, bin);
        &mut self.bins[i]
    }

    /// Bins that exist for this mode count, in canonical order.
    pub fn keys(&self) -> impl Iterator<Item = (WindowClass, ModeBin)> + '_ {
        let modes = self.modes;
        WindowClass::all().flat_map(move |class| {
            let mixed = class.is_two_sided() && modes > 1;
            (0..modes)
                .map(ModeBin::Mode)
                .chain(mixed.then_some(ModeBin::Mixed))
                .map(move |bin| (class, bin))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (WindowClass, ModeBin, &BinCounts)> + '_ {
        self.keys().map(move |(c, b)| (c, b, self.get(c, b)))
    }

    /// Accepted events of a class summed over all bins.
    pub fn accepted_sum(&self, class: WindowClass) -> f64 {
        self.keys()
            .filter(|(c, _)| *c == class)
            .map(|(c, b)| self.get(c, b).accepted)
            .sum()
    }

    pub fn errors_sum(&self, class: WindowClass) -> f64 {
        self.keys()
            .filter(|(c, _)| *c == class)
            .map(|(c, b)| self.get(c, b).errors)
            .sum()
    }

    /// Adds another tally of the same shape (associative, commutative).
    pub fn merge(&mut self, other: &ObservedCounts) {
        assert_eq!(self.modes, other.modes, "cannot merge tallies with different mode counts");
        self.total_windows += other.total_windows;
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.add(b);
        }
    }

    pub const CSV_HEADER: &'static str = "class,mode,windows,heralded,accepted,errors";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (class, bin, c) in self.iter() {
            out.push_str(&format!(
                "{class},{bin},{},{},{},{}\n",
                fmt_count(c.windows),
                fmt_count(c.heralded),
                fmt_count(c.accepted),
                fmt_count(c.errors)
            ));
        }
        out
    }

    /// Parses [`to_csv`](Self::to_csv) output. The mode count is inferred
    /// from the `vv` rows; the total window count is the sum over classes.
    pub fn from_csv(text: &str) -> Result<Self, CountsCsvError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == Self::CSV_HEADER => {}
            other => return Err(CountsCsvError::Header(other.unwrap_or("").to_string())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(CountsCsvError::Row(i + 2, line.to_string()));
            }
            let bad = || CountsCsvError::Row(i + 2, line.to_string());
            let class: WindowClass = f[0].parse().map_err(|_| bad())?;
            let bin = if f[1] == "mixed" {
                ModeBin::Mixed
            } else {
                ModeBin::Mode(f[1].parse().map_err(|_| bad())?)
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let counts = BinCounts {
                windows: num(f[2])?,
                heralded: num(f[3])?,
                accepted: num(f[4])?,
                errors: num(f[5])?,
            };
            rows.push((class, bin, counts));
        }
        let modes = rows
            .iter()
            .filter(|(c, _, _)| *c == WindowClass::VV)
            .count();
        if modes == 0 {
            return Err(CountsCsvError::NoModes);
        }
        let mut out = ObservedCounts::new(modes, 0.0);
        for (class, bin, counts) in rows {
            if let ModeBin::Mode(j) = bin {
                if j >= modes {
                    return Err(CountsCsvError::Row(0, format!("{class},{bin}")));
                }
            }
            *out.get_mut(class, bin) = counts;
        }
        out.total_windows = WindowClass::all()
            .map(|class| {
                if class.is_vacuum_vacuum() {
                    out.get(class, ModeBin::Mode(0)).windows
                } else {
                    out.keys()
                        .filter(|(c, _)| *c == class)
                        .map(|(c, b)| out.get(c, b).windows)
                        .sum()
                }
            })
            .sum();
        Ok(out)
    }
}

fn fmt_count(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CountsCsvError {
    #[error("unexpected counts header {0:?}")]
    Header(String),
    #[error("malformed counts row {0}: {1:?}")]
    Row(usize, String),
    #[error("counts table has no vv rows")]
    NoModes,
}

/// Anything that can report per-mode accepted-event counting rates.
pub trait RateSource {
    fn modes(&self) -> usize;
    /// `S_lr(r_j)`: accepted events announced in mode `j` per window of the bin.
    fn rate(&self, class: WindowClass, mode: usize) -> f64;
    /// `T_Δ(r_j)`: slice errors per slice window.
    fn slice_error_rate(&self, mode: usize) -> f64;
}

/// Counts paired with the protocol that produced them, so slice rates can be
/// normalized by the nominal slice window count.
#[derive(Debug, Clone, Copy)]
pub struct CountRates<'a> {
    pub counts: &'a ObservedCounts,
    pub protocol: &'a ProtocolParams,
}

impl RateSource for CountRates<'_> {
    fn modes(&self) -> usize {
        self.counts.modes()
    }

    fn rate(&self, class: WindowClass, mode: usize) -> f64 {
        let b = self.counts.get(class, ModeBin::Mode(mode));
        if b.windows > 0.0 {
            b.accepted / b.windows
        } else {
            0.0
        }
    }

    fn slice_error_rate(&self, mode: usize) -> f64 {
        let p = self.protocol;
        let slice_windows = p.slice_width() / std::f64::consts::PI
            * p.probability(Intensity::X).powi(2)
            * self.counts.total_windows
            * p.mode_probs[mode].powi(2);
        let w = self.counts.get(WindowClass::XX, ModeBin::Mode(mode)).errors;
        if slice_windows > 0.0 {
            w / slice_windows
        } else {
            0.0
        }
    }
}
