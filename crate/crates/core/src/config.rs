//! Protocol, channel and security parameters, their validation, and the
//! flat `key = value` configuration format.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Sum tolerance for the four source probabilities.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;
/// Mode probabilities within this distance of summing to one are renormalized.
pub const MODE_RENORMALIZE_TOLERANCE: f64 = 1e-9;

/// Intensity choice of one sender in one time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Intensity {
    Vacuum,
    X,
    Y,
    Z,
}

impl Intensity {
    pub const ALL: [Intensity; 4] = [Intensity::Vacuum, Intensity::X, Intensity::Y, Intensity::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_vacuum(self) -> bool {
        self == Intensity::Vacuum
    }

    pub fn letter(self) -> char {
        match self {
            Intensity::Vacuum => 'v',
            Intensity::X => 'x',
            Intensity::Y => 'y',
            Intensity::Z => 'z',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'v' => Some(Intensity::Vacuum),
            'x' => Some(Intensity::X),
            'y' => Some(Intensity::Y),
            'z' => Some(Intensity::Z),
            _ => None,
        }
    }
}

/// An `lr` time window: Alice sent intensity `l`, Bob sent intensity `r`.
///
/// The sixteen classes are ordered Alice-major; `vz` and `zv` are distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowClass {
    pub alice: Intensity,
    pub bob: Intensity,
}

impl WindowClass {
    pub const COUNT: usize = 16;

    pub const fn new(alice: Intensity, bob: Intensity) -> Self {
        Self { alice, bob }
    }

    pub fn all() -> impl Iterator<Item = WindowClass> {
        Intensity::ALL
            .into_iter()
            .flat_map(|a| Intensity::ALL.into_iter().map(move |b| WindowClass::new(a, b)))
    }

    pub fn index(self) -> usize {
        self.alice.index() * 4 + self.bob.index()
    }

    pub fn from_index(index: usize) -> Self {
        WindowClass::new(Intensity::ALL[index / 4], Intensity::ALL[index % 4])
    }

    pub fn is_vacuum_vacuum(self) -> bool {
        self.alice.is_vacuum() && self.bob.is_vacuum()
    }

    /// Exactly one sender emitted light.
    pub fn is_one_sided(self) -> bool {
        self.alice.is_vacuum() != self.bob.is_vacuum()
    }

    pub fn is_two_sided(self) -> bool {
        !self.alice.is_vacuum() && !self.bob.is_vacuum()
    }

    /// Windows whose intensities stay secret and may yield code bits.
    pub fn is_code_class(self) -> bool {
        matches!(self.alice, Intensity::Vacuum | Intensity::Z)
            && matches!(self.bob, Intensity::Vacuum | Intensity::Z)
    }

    pub const VV: WindowClass = WindowClass::new(Intensity::Vacuum, Intensity::Vacuum);
    pub const VX: WindowClass = WindowClass::new(Intensity::Vacuum, Intensity::X);
    pub const XV: WindowClass = WindowClass::new(Intensity::X, Intensity::Vacuum);
    pub const VY: WindowClass = WindowClass::new(Intensity::Vacuum, Intensity::Y);
    pub const YV: WindowClass = WindowClass::new(Intensity::Y, Intensity::Vacuum);
    pub const VZ: WindowClass = WindowClass::new(Intensity::Vacuum, Intensity::Z);
    pub const ZV: WindowClass = WindowClass::new(Intensity::Z, Intensity::Vacuum);
    pub const XX: WindowClass = WindowClass::new(Intensity::X, Intensity::X);
    pub const ZZ: WindowClass = WindowClass::new(Intensity::Z, Intensity::Z);
}

impl fmt::Display for WindowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.alice.letter(), self.bob.letter())
    }
}

impl FromStr for WindowClass {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), None) => match (Intensity::from_letter(a), Intensity::from_letter(b)) {
                (Some(a), Some(b)) => Ok(WindowClass::new(a, b)),
                _ => Err(ConfigError::BadClass(s.to_string())),
            },
            _ => Err(ConfigError::BadClass(s.to_string())),
        }
    }
}

/// Source settings shared by Alice and Bob.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub p_v: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_z: f64,
    /// Number of redundant-space modes.
    pub modes: usize,
    /// Probability of choosing each mode for a non-vacuum pulse.
    pub mode_probs: Vec<f64>,
    /// Phase-slice parameter: `xx` windows with `1 - |cos(θA-θB)| <= λ` are kept.
    pub lambda_slice: f64,
    /// Total number of time windows.
    pub windows: f64,
}

impl ProtocolParams {
    pub fn probability(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Vacuum => self.p_v,
            Intensity::X => self.p_x,
            Intensity::Y => self.p_y,
            Intensity::Z => self.p_z,
        }
    }

    pub fn intensity(&self, i: Intensity) -> f64 {
        match i {
            Intensity::Vacuum => 0.0,
            Intensity::X => self.mu_x,
            Intensity::Y => self.mu_y,
            Intensity::Z => self.mu_z,
        }
    }

    /// Angular width Δ = 2·arccos(1−λ) of one of the two phase slices.
    pub fn slice_width(&self) -> f64 {
        2.0 * (1.0 - self.lambda_slice).acos()
    }

    pub fn uniform_modes(modes: usize) -> Vec<f64> {
        vec![1.0 / modes as f64; modes]
    }

    pub fn has_uniform_modes(&self) -> bool {
        let u = 1.0 / self.modes as f64;
        self.mode_probs.iter().all(|&p| (p - u).abs() <= 1e-12)
    }

    /// Copy with `modes` uniform modes.
    pub fn with_modes(&self, modes: usize) -> Self {
        Self {
            modes,
            mode_probs: Self::uniform_modes(modes),
            ..self.clone()
        }
    }
}

/// Symmetric fiber channel with the measurement station at the midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Total Alice–Bob fiber length (km).
    pub distance_km: f64,
    /// Fiber attenuation (dB/km).
    pub alpha_db_km: f64,
    /// Detector efficiency.
    pub eta0: f64,
    /// Dark count probability per detector per window.
    pub dark: f64,
    /// Misalignment error.
    pub misalignment: f64,
}

impl ChannelParams {
    pub const FIBER_LOSS_DB_KM: f64 = 0.2;

    pub fn at_distance(&self, distance_km: f64) -> Self {
        Self {
            distance_km,
            ..self.clone()
        }
    }
}

/// Efficiency of one arm: detector efficiency times the loss of half the fiber.
pub fn per_arm_transmittance(channel: &ChannelParams) -> f64 {
    channel.eta0 * 10f64.powf(-channel.alpha_db_km * (channel.distance_km / 2.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityParams {
    /// Failure probability of each Chernoff bound.
    pub xi: f64,
    pub eps_cor: f64,
    pub eps_pa: f64,
    pub eps_hat: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            xi: 1e-10,
            eps_cor: 1e-10,
            eps_pa: 1e-10,
            eps_hat: 1e-10,
            f_ec: 1.1,
        }
    }
}

/// Device rows used throughout the numerical study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceRow {
    A,
    B,
    C,
    D,
}

impl DeviceRow {
    pub fn channel(self) -> ChannelParams {
        let dark = match self {
            DeviceRow::C => 1e-9,
            _ => 1e-8,
        };
        ChannelParams {
            distance_km: 0.0,
            alpha_db_km: ChannelParams::FIBER_LOSS_DB_KM,
            eta0: 0.5,
            dark,
            misalignment: 0.03,
        }
    }

    /// Total windows; `None` for the asymptotic row.
    pub fn windows(self) -> Option<f64> {
        match self {
            DeviceRow::A => Some(1e8),
            DeviceRow::B => None,
            DeviceRow::C => Some(1e10),
            DeviceRow::D => Some(1e12),
        }
    }
}

impl FromStr for DeviceRow {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(DeviceRow::A),
            "B" => Ok(DeviceRow::B),
            "C" => Ok(DeviceRow::C),
            "D" => Ok(DeviceRow::D),
            _ => Err(ConfigError::BadRow(s.to_string())),
        }
    }
}

/// A complete run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub protocol: ProtocolParams,
    pub channel: ChannelParams,
    pub security: SecurityParams,
}

/// Windows assumed for the asymptotic row; rates are per window so the value
/// only matters for reporting counts.
pub const ASYMPTOTIC_NOMINAL_WINDOWS: f64 = 1e12;

impl Config {
    /// Built-in configuration for a device row with starting protocol values.
    pub fn for_row(row: DeviceRow, modes: usize) -> Self {
        Config {
            protocol: ProtocolParams {
                p_v: 0.7,
                p_x: 0.26,
                p_y: 0.013,
                p_z: 0.027,
                mu_x: 0.082,
                mu_y: 0.54,
                mu_z: 0.46,
                modes,
                mode_probs: ProtocolParams::uniform_modes(modes),
                lambda_slice: 0.048,
                windows: row.windows().unwrap_or(ASYMPTOTIC_NOMINAL_WINDOWS),
            },
            channel: row.channel(),
            security: SecurityParams::default(),
        }
    }

    /// Copy of the configuration at another total distance.
    pub fn at_distance(&self, distance_km: f64) -> Config {
        Config { channel: self.channel.at_distance(distance_km), ..self.clone() }
    }

    /// Checks every invariant, returning a normalized copy or every violation.
    pub fn validate(mut self) -> Result<Config, ValidationError> {
        let mut v = Vec::new();
        let p = &mut self.protocol;

        for (name, value) in [("p_v", p.p_v), ("p_x", p.p_x), ("p_y", p.p_y), ("p_z", p.p_z)] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                v.push(format!("{name} = {value} is not a probability in [0, 1]"));
            }
        }
        let sum = p.p_v + p.p_x + p.p_y + p.p_z;
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            v.push(format!("source probabilities sum to {sum}, not 1"));
        }
        if p.p_v <= 0.0 {
            v.push("p_v = 0: vacuum windows are required by the decoy analysis".to_string());
        }
        if p.p_x <= 0.0 {
            v.push("p_x = 0: decoy intensity mu_x unused, the decoy denominators need p_x > 0".to_string());
        }
        if p.p_y <= 0.0 {
            v.push("p_y = 0: decoy intensity mu_y unused, the decoy denominators need p_y > 0".to_string());
        }
        if p.p_z <= 0.0 {
            v.push("p_z = 0: no signal windows, no code bits".to_string());
        }
        if !(p.mu_x > 0.0) {
            v.push(format!("mu_x = {} must be > 0", p.mu_x));
        }
        if !(p.mu_y > p.mu_x) {
            v.push(format!("mu_y = {} must exceed mu_x = {}", p.mu_y, p.mu_x));
        }
        if !(p.mu_z > 0.0) {
            v.push(format!("mu_z = {} must be > 0", p.mu_z));
        }
        if p.modes == 0 {
            v.push("m = 0: at least one mode is required".to_string());
        } else if p.mode_probs.len() != p.modes {
            v.push(format!(
                "mode_probs has {} entries for m = {}",
                p.mode_probs.len(),
                p.modes
            ));
        } else {
            let total: f64 = p.mode_probs.iter().sum();
            if p.mode_probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
                v.push("mode probabilities must lie in [0, 1]".to_string());
            } else if (total - 1.0).abs() <= MODE_RENORMALIZE_TOLERANCE {
                p.mode_probs.iter_mut().for_each(|q| *q /= total);
            } else {
                v.push(format!("mode probabilities sum to {total}"));
            }
        }
        if !(p.lambda_slice > 0.0 && p.lambda_slice <= 1.0) {
            v.push(format!("lambda = {} must lie in (0, 1]", p.lambda_slice));
        }
        if !(p.windows >= 1.0) || p.windows.fract() != 0.0 || !p.windows.is_finite() {
            v.push(format!("N = {} must be a positive integer", p.windows));
        }

        let c = &self.channel;
        if !(c.distance_km >= 0.0) || !c.distance_km.is_finite() {
            v.push(format!("L_km = {} must be >= 0", c.distance_km));
        }
        if !(c.alpha_db_km >= 0.0) || !c.alpha_db_km.is_finite() {
            v.push(format!("alpha_db_km = {} must be >= 0", c.alpha_db_km));
        }
        if !(c.eta0 > 0.0 && c.eta0 <= 1.0) {
            v.push(format!("eta0 = {} must lie in (0, 1]", c.eta0));
        }
        if !(c.dark >= 0.0 && c.dark < 1.0) {
            v.push(format!("dark = {} must lie in [0, 1)", c.dark));
        }
        if !(c.misalignment >= 0.0 && c.misalignment < 0.5) {
            v.push(format!("e_mis = {} must lie in [0, 0.5)", c.misalignment));
        }

        let s = &self.security;
        for (name, value) in [
            ("xi", s.xi),
            ("eps_cor", s.eps_cor),
            ("eps_pa", s.eps_pa),
            ("eps_hat", s.eps_hat),
        ] {
            if !(value > 0.0 && value < 1.0) {
                v.push(format!("{name} = {value} must lie in (0, 1)"));
            }
        }
        if !(s.f_ec >= 1.0) {
            v.push(format!("f_ec = {} must be >= 1", s.f_ec));
        }

        if v.is_empty() {
            Ok(self)
        } else {
            Err(ValidationError { violations: v })
        }
    }

    /// Serializes to the `key = value` format. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let p = &self.protocol;
        let c = &self.channel;
        let s = &self.security;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("p_v", fmt_f64(p.p_v));
        put("p_x", fmt_f64(p.p_x));
        put("p_y", fmt_f64(p.p_y));
        put("p_z", fmt_f64(p.p_z));
        put("mu_x", fmt_f64(p.mu_x));
        put("mu_y", fmt_f64(p.mu_y));
        put("mu_z", fmt_f64(p.mu_z));
        put("m", p.modes.to_string());
        put("lambda", fmt_f64(p.lambda_slice));
        put("N", fmt_f64(p.windows));
        put("L_km", fmt_f64(c.distance_km));
        put("alpha_db_km", fmt_f64(c.alpha_db_km));
        put("eta0", fmt_f64(c.eta0));
        put("dark", fmt_f64(c.dark));
        put("e_mis", fmt_f64(c.misalignment));
        put("xi", fmt_f64(s.xi));
        put("eps_cor", fmt_f64(s.eps_cor));
        put("eps_pa", fmt_f64(s.eps_pa));
        put("eps_hat", fmt_f64(s.eps_hat));
        put("f_ec", fmt_f64(s.f_ec));
        out
    }

    /// Parses the `key = value` format. Every key is required exactly once;
    /// blank lines and `#` comments are ignored. Mode probabilities are uniform.
    pub fn from_text(text: &str) -> Result<Config, ConfigError> {
        let mut values: [Option<String>; KEYS.len()] = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: lineno + 1, text: raw.to_string() })?;
            let key = key.trim();
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            if values[slot].is_some() {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
            values[slot] = Some(value.trim().to_string());
        }
        let get = |key: &'static str| -> Result<f64, ConfigError> {
            let slot = KEYS.iter().position(|k| *k == key).expect("known key");
            let text = values[slot].as_deref().ok_or(ConfigError::MissingKey(key))?;
            text.parse::<f64>().map_err(|_| ConfigError::BadValue {
                key,
                value: text.to_string(),
            })
        };
        let modes_text = values[KEYS.iter().position(|k| *k == "m").expect("m")]
            .as_deref()
            .ok_or(ConfigError::MissingKey("m"))?;
        let modes: usize = modes_text.parse().map_err(|_| ConfigError::BadValue {
            key: "m",
            value: modes_text.to_string(),
        })?;

        Ok(Config {
            protocol: ProtocolParams {
                p_v: get("p_v")?,
                p_x: get("p_x")?,
                p_y: get("p_y")?,
                p_z: get("p_z")?,
                mu_x: get("mu_x")?,
                mu_y: get("mu_y")?,
                mu_z: get("mu_z")?,
                modes,
                mode_probs: if modes > 0 { ProtocolParams::uniform_modes(modes) } else { Vec::new() },
                lambda_slice: get("lambda")?,
                windows: get("N")?,
            },
            channel: ChannelParams {
                distance_km: get("L_km")?,
                alpha_db_km: get("alpha_db_km")?,
                eta0: get("eta0")?,
                dark: get("dark")?,
                misalignment: get("e_mis")?,
            },
            security: SecurityParams {
                xi: get("xi")?,
                eps_cor: get("eps_cor")?,
                eps_pa: get("eps_pa")?,
                eps_hat: get("eps_hat")?,
                f_ec: get("f_ec")?,
            },
        })
    }
}

/// Recognized configuration keys.
pub const KEYS: [&str; 20] = [
    "p_v", "p_x", "p_y", "p_z", "mu_x", "mu_y", "mu_z", "m", "lambda", "N", "L_km",
    "alpha_db_km", "eta0", "dark", "e_mis", "xi", "eps_cor", "eps_pa", "eps_hat", "f_ec",
];

fn fmt_f64(x: f64) -> String {
    // `{:e}` without precision is the shortest round-trip form.
    format!("{x:e}")
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` given twice")]
    DuplicateKey(String),
    #[error("config key `{0}` missing")]
    MissingKey(&'static str),
    #[error("config key `{key}`: cannot parse {value:?}")]
    BadValue { key: &'static str, value: String },
    #[error("unknown window class {0:?}")]
    BadClass(String),
    #[error("unknown device row {0:?} (expected A, B, C or D)")]
    BadRow(String),
}

/// Every invariant a configuration violates.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid configuration: {}", violations.join("; "))]
pub struct ValidationError {
    pub violations: Vec<String>,
}
