//! Diagnostic flags attached to a pipeline result.
//!
//! A flagged run is still valid; flags record where a bound or estimate hit
//! its physical floor or ceiling.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    /// A per-mode single-photon yield estimate was negative and set to 0.
    S1Clamped,
    /// `⟨n₁⟩ᴸ ≤ 0`: no untagged bits, key rate 0.
    NoUntaggedBits,
    /// `φ̂ᴸ(⟨n₁⟩ᴸ)` hit its floor of 0.
    N1Clamped,
    /// The phase-error estimate was negative and set to 0.
    E1Negative,
    /// The phase-error estimate exceeded 1/2 and was set to 1/2.
    E1AboveHalf,
    /// No code bits; `E_t` defined as 0.
    NoCodeBits,
    /// The key-length formula was negative and the key set to 0.
    KeyClamped,
    /// An optimizer bound was active at the optimum and had to be widened.
    BoundWidened,
}

impl Flag {
    pub fn name(self) -> &'static str {
        match self {
            Flag::S1Clamped => "s1_clamped",
            Flag::NoUntaggedBits => "no_untagged_bits",
            Flag::N1Clamped => "n1_clamped",
            Flag::E1Negative => "e1_negative",
            Flag::E1AboveHalf => "e1_above_half",
            Flag::NoCodeBits => "no_code_bits",
            Flag::KeyClamped => "key_clamped",
            Flag::BoundWidened => "bound_widened",
        }
    }
}

/// Ordered set of flags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Flags(Vec<Flag>);

impl Flags {
    pub fn insert(&mut self, flag: Flag) {
        if let Err(i) = self.0.binary_search(&flag) {
            self.0.insert(i, flag);
        }
    }

    pub fn contains(&self, flag: Flag) -> bool {
        self.0.binary_search(&flag).is_ok()
    }

    pub fn extend(&mut self, other: &Flags) {
        for &f in &other.0 {
            self.insert(f);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Flag> + '_ {
        self.0.iter().copied()
    }
}

/// `|`-separated names, or `none`.
impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        for (i, flag) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            f.write_str(flag.name())?;
        }
        Ok(())
    }
}
