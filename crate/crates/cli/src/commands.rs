use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sns_keyrate::analytic::counting_rates;
use sns_keyrate::config::{Config, DeviceRow};
use sns_keyrate::keyrate::{evaluate, plob_bound, Analysis, KeyRateResult};
use sns_keyrate::mc::{compare, qber_check, simulate, ComparisonReport};
use sns_keyrate::optimizer::{optimize, scan, OptimizationProblem, ScanPoint, ScanRequest, TraceEntry, VARIABLE_NAMES};
use sns_keyrate::parallel::Execution;

/// Everything a command needs, with the configuration resolved to its text form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Rate { config: String, asymptotic: bool, budget: usize, seed: u64 },
    Scan {
        config: String,
        distances_km: Vec<f64>,
        m: Vec<usize>,
        asymptotic: bool,
        budget: usize,
        seed: u64,
        warm_start: bool,
    },
    Validate { config: String, trials: u64, seed: u64, sigma: f64 },
    Table2 { budget: usize, seed: u64 },
    InitConfig { row: String, m: usize },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Rate { .. } => "rate",
            Invocation::Scan { .. } => "scan",
            Invocation::Validate { .. } => "validate",
            Invocation::Table2 { .. } => "table2",
            Invocation::InitConfig { .. } => "init-config",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Rate { seed, .. }
            | Invocation::Scan { seed, .. }
            | Invocation::Validate { seed, .. }
            | Invocation::Table2 { seed, .. } => Some(*seed),
            Invocation::InitConfig { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    ValidationFailed,
}

pub struct Outcome {
    pub csv: String,
    /// Optimizer improvements, when an optimizer ran.
    pub trace: Option<String>,
    /// Sum of the failure probabilities of every Chernoff bound evaluated.
    pub failure_budget_spent: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceList(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct ModeList(pub Vec<usize>);

pub fn parse_distances(s: &str) -> Result<DistanceList, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(DistanceList(Vec::new()));
    }
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad distance {t:?}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err("range must be start:stop:step".into());
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(h > 0.0) || b < a {
            return Err("range needs start <= stop and step > 0".into());
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        return Ok(DistanceList((0..=n).map(|i| a + i as f64 * h).collect()));
    }
    s.split(',').map(num).collect::<Result<_, _>>().map(DistanceList)
}

pub fn parse_modes(s: &str) -> Result<ModeList, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(ModeList(Vec::new()));
    }
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad mode count {t:?}")),
            Ok(m) => Ok(m),
        })
        .collect::<Result<_, _>>()
        .map(ModeList)
}

fn validated(config: Config) -> anyhow::Result<Config> {
    config.validate().map_err(|e| {
        let lines: Vec<String> = e.violations.iter().map(|v| format!("  {v}")).collect();
        anyhow::anyhow!("invalid configuration:\n{}", lines.join("\n"))
    })
}

/// Loads a config file or a built-in row, applies overrides, validates, and returns its text form.
pub fn resolve(path: Option<&Path>, row: &str, distance_km: Option<f64>, m: Option<usize>) -> anyhow::Result<String> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::from_text(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Config::for_row(row.parse::<DeviceRow>()?, 1),
    };
    if let Some(d) = distance_km {
        config = config.at_distance(d);
    }
    if let Some(m) = m {
        config.protocol = config.protocol.with_modes(m);
    }
    Ok(validated(config)?.to_text())
}

fn parse_config(text: &str) -> anyhow::Result<Config> {
    validated(Config::from_text(text)?)
}

fn analysis(asymptotic: bool) -> Analysis {
    if asymptotic {
        Analysis::Asymptotic
    } else {
        Analysis::Finite
    }
}

fn spent(r: &KeyRateResult) -> f64 {
    r.decoy.budget.map_or(0.0, |b| b.spent())
}

fn result_table<'a>(rows: impl IntoIterator<Item = &'a KeyRateResult>) -> String {
    let mut out = String::from(KeyRateResult::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn trace_header() -> String {
    format!("m,distance_km,evaluation,{},objective\n", VARIABLE_NAMES.join(","))
}

fn push_trace(out: &mut String, m: usize, distance: f64, trace: &[TraceEntry]) {
    for t in trace {
        let _ = writeln!(out, "{m},{distance:.9e},{t}");
    }
}

fn scan_trace(points: &[ScanPoint]) -> String {
    let mut out = trace_header();
    for p in points {
        push_trace(&mut out, p.modes, p.distance_km, &p.optimum.trace);
    }
    out
}

fn warn_widened(points: &[ScanPoint]) {
    for p in points {
        for w in &p.optimum.warnings {
            eprintln!("warning: m={} L={} km: {w}", p.modes, p.distance_km);
        }
    }
}

/// Published comparison values: `(method, m, [250, 300, 350 km])`.
pub const PUBLISHED: [(&str, Option<usize>, [f64; 3]); 6] = [
    ("PLOB-2", None, [1.44e-5, 1.44e-6, 1.44e-7]),
    ("SNS", Some(1), [4.90e-6, 1.01e-6, 1.34e-7]),
    ("AOPP", None, [8.38e-6, 1.59e-6, 1.43e-7]),
    ("RS m=2", Some(2), [8.57e-6, 1.79e-6, 2.62e-7]),
    ("RS m=6", Some(6), [1.72e-5, 3.41e-6, 4.66e-7]),
    ("RS m=20", Some(20), [2.96e-5, 4.94e-6, 5.30e-7]),
];
pub const TABLE2_DISTANCES: [f64; 3] = [250.0, 300.0, 350.0];
pub const TABLE2_HEADER: &str =
    "method,m,rate_250km,rate_300km,rate_350km,published_250km,published_300km,published_350km,status";

fn table2(budget: usize, seed: u64) -> anyhow::Result<Outcome> {
    let base = Config::for_row(DeviceRow::C, 1);
    let modes: Vec<usize> = PUBLISHED.iter().filter_map(|r| r.1).collect();
    let points = scan(&ScanRequest {
        base: &base,
        distances: &TABLE2_DISTANCES,
        modes: &modes,
        analysis: Analysis::Finite,
        budget,
        seed,
        warm_start: true,
        execution: Execution::Parallel,
    })?;
    warn_widened(&points);
    let mut csv = String::from(TABLE2_HEADER);
    csv.push('\n');
    for (method, m, published) in PUBLISHED {
        let (rates, status) = match (method, m) {
            ("AOPP", _) => (published, "\"reference, not computed\""),
            (_, None) => (TABLE2_DISTANCES.map(|d| plob_bound(&base.channel.at_distance(d), false)), "computed"),
            (_, Some(m)) => {
                let rate = |d: f64| {
                    points.iter().find(|p| p.modes == m && p.distance_km == d).map_or(f64::NAN, |p| p.result.rate)
                };
                (TABLE2_DISTANCES.map(rate), "computed")
            }
        };
        let m = m.map_or(String::new(), |m| m.to_string());
        let _ = write!(csv, "{method},{m}");
        for x in rates.iter().chain(&published) {
            let _ = write!(csv, ",{x:.9e}");
        }
        let _ = writeln!(csv, ",{status}");
    }
    Ok(Outcome {
        csv,
        trace: Some(scan_trace(&points)),
        failure_budget_spent: points.iter().map(|p| spent(&p.result)).sum(),
        status: Status::Success,
    })
}

pub fn run(inv: &Invocation) -> anyhow::Result<Outcome> {
    match inv {
        Invocation::Rate { config, asymptotic, budget, seed } => {
            let config = parse_config(config)?;
            let a = analysis(*asymptotic);
            let (config, trace) = if *budget > 0 {
                let problem = OptimizationProblem::key_rate(config, a);
                let opt = optimize(&problem, *budget, *seed, None, Execution::Parallel)?;
                for w in &opt.warnings {
                    eprintln!("warning: {w}");
                }
                let mut t = trace_header();
                push_trace(&mut t, opt.config.protocol.modes, opt.config.channel.distance_km, &opt.trace);
                (opt.config, Some(t))
            } else {
                (config, None)
            };
            let r = evaluate(&config, a)?;
            Ok(Outcome {
                csv: result_table([&r]),
                trace,
                failure_budget_spent: spent(&r),
                status: Status::Success,
            })
        }
        Invocation::Scan { config, distances_km, m, asymptotic, budget, seed, warm_start } => {
            let base = parse_config(config)?;
            let points = scan(&ScanRequest {
                base: &base,
                distances: distances_km,
                modes: m,
                analysis: analysis(*asymptotic),
                budget: *budget,
                seed: *seed,
                warm_start: *warm_start,
                execution: Execution::Parallel,
            })?;
            warn_widened(&points);
            Ok(Outcome {
                csv: result_table(points.iter().map(|p| &p.result)),
                trace: Some(scan_trace(&points)),
                failure_budget_spent: points.iter().map(|p| spent(&p.result)).sum(),
                status: Status::Success,
            })
        }
        Invocation::Validate { config, trials, seed, sigma } => {
            let config = parse_config(config)?;
            if *trials == 0 {
                bail!("--trials must be at least 1");
            }
            let run = simulate(&config, *trials, *seed, Execution::Parallel)?;
            let expected = counting_rates(&config);
            let report: ComparisonReport = compare(&run, &expected, *sigma)?;
            let q = qber_check(&run, &expected)?;
            eprintln!(
                "{} bins compared, {} beyond |z| > {}, max |z| = {:.3}; E_t observed {:.6e} expected {:.6e} (z = {:.3})",
                report.all.len(),
                report.flagged.len(),
                sigma,
                report.max_abs_z(),
                q.observed,
                q.expected,
                q.z
            );
            Ok(Outcome {
                csv: report.to_csv(),
                trace: None,
                failure_budget_spent: 0.0,
                status: if report.is_empty() { Status::Success } else { Status::ValidationFailed },
            })
        }
        Invocation::Table2 { budget, seed } => table2(*budget, *seed),
        Invocation::InitConfig { row, m } => {
            let config = Config::for_row(row.parse::<DeviceRow>()?, *m);
            Ok(Outcome {
                csv: validated(config)?.to_text(),
                trace: None,
                failure_budget_spent: 0.0,
                status: Status::Success,
            })
        }
    }
}
