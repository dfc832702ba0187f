//! Derivative-free maximization of the key rate over the free source
//! parameters `(p_v, p_x, p_y, μ_x, μ_y, μ_z, λ)`, with `p_z = 1 − p_v − p_x − p_y`.
//!
//! Each restart runs coordinate descent with a golden-section line search in
//! log coordinates; the best restart is then polished by Nelder–Mead. Restart
//! `k > 0` starts from a perturbation of the start drawn from ChaCha8 stream `k`,
//! so results depend only on `(problem, budget, seed)`, never on scheduling.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Config, ProtocolParams};
use crate::diagnostics::Flag;
use crate::keyrate::{evaluate, Analysis, KeyRateResult, PipelineError};
use crate::parallel::Execution;

pub const DEFAULT_BUDGET: usize = 20_000;
pub const RESTARTS: usize = 5;
/// Smallest admissible signal probability `p_z`.
pub const P_Z_MIN: f64 = 1e-4;
/// Minimum relative gap enforced between `μ_x` and `μ_y`.
const MU_GAP: f64 = 1e-6;
/// Share of the budget reserved for the final polish.
const POLISH_SHARE: f64 = 0.1;
const GOLDEN_LOG_TOL: f64 = 1e-7;
/// Relative distance from a box bound at which it counts as active.
const ACTIVE_BOUND_TOL: f64 = 1e-4;
const RESTART_SPREAD: f64 = 0.8;

/// Number of free variables.
pub const DIM: usize = 7;
pub const VARIABLE_NAMES: [&str; DIM] = ["p_v", "p_x", "p_y", "mu_x", "mu_y", "mu_z", "lambda"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("budget must be at least 1 evaluation")]
    ZeroBudget,
    #[error("scan distances must be sorted ascending")]
    UnsortedDistances,
    #[error("no modes requested")]
    NoModes,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Closed box `[lo, hi]` per variable; `μ_y` must additionally exceed `μ_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: [f64; DIM],
    pub hi: [f64; DIM],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lo: [0.01, 1e-4, 1e-4, 1e-4, 1e-4, 1e-3, 1e-4],
            hi: [0.99, 0.5, 0.5, 1.0, 1.5, 2.0, 1.0],
        }
    }
}

/// Physical limits a widened bound never crosses.
const HARD_LO: [f64; DIM] = [1e-6, 1e-7, 1e-7, 1e-7, 1e-7, 1e-6, 1e-7];
const HARD_HI: [f64; DIM] = [1.0 - 2.0 * P_Z_MIN, 1.0, 1.0, 5.0, 8.0, 10.0, 1.0];

impl Bounds {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        for i in 0..DIM {
            let (lo, hi) = (self.lo[i], self.hi[i]);
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(OptimizerError::InfeasibleBounds(format!(
                    "{} in [{lo}, {hi}]",
                    VARIABLE_NAMES[i]
                )));
            }
        }
        if self.lo[0] + self.lo[1] + self.lo[2] + P_Z_MIN > 1.0 {
            return Err(OptimizerError::InfeasibleBounds("probability lower bounds exceed 1".into()));
        }
        if self.hi[4] <= self.lo[3] * (1.0 + MU_GAP) {
            return Err(OptimizerError::InfeasibleBounds("mu_y cannot exceed mu_x".into()));
        }
        if self.lo[6] > 1.0 {
            return Err(OptimizerError::InfeasibleBounds("lambda must not exceed 1".into()));
        }
        Ok(())
    }

    /// Feasible interval of coordinate `i` with the others held at `x`.
    fn interval(&self, x: &[f64; DIM], i: usize) -> (f64, f64) {
        let (mut lo, mut hi) = (self.lo[i], self.hi[i]);
        match i {
            0..=2 => {
                let others: f64 = (0..3).filter(|&k| k != i).map(|k| x[k]).sum();
                hi = hi.min(1.0 - P_Z_MIN - others);
            }
            3 => hi = hi.min(x[4] / (1.0 + MU_GAP)),
            4 => lo = lo.max(x[3] * (1.0 + MU_GAP)),
            6 => hi = hi.min(1.0),
            _ => {}
        }
        (lo, hi)
    }

    pub fn contains(&self, x: &[f64; DIM]) -> bool {
        (0..DIM).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
            && x[0] + x[1] + x[2] <= 1.0 - P_Z_MIN
            && x[4] >= x[3] * (1.0 + MU_GAP)
            && x[6] <= 1.0
    }

    /// Nearest feasible point in a simple coordinatewise sense.
    fn project(&self, mut x: [f64; DIM]) -> [f64; DIM] {
        for i in 0..DIM {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
        let s = x[0] + x[1] + x[2];
        if s > 1.0 - P_Z_MIN {
            let k = (1.0 - P_Z_MIN) / s;
            for v in &mut x[0..3] {
                *v *= k;
            }
        }
        if x[4] < x[3] * (1.0 + MU_GAP) {
            x[4] = (x[3] * 1.5).min(self.hi[4]);
            x[3] = x[3].min(x[4] / 1.5);
        }
        x[6] = x[6].min(1.0);
        x
    }

    /// Uniform in log coordinates, rejecting draws outside the simplex.
    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; DIM] {
        loop {
            let mut x = [0.0; DIM];
            for i in 0..DIM {
                let (a, b) = (self.lo[i].ln(), self.hi[i].ln());
                x[i] = (a + (b - a) * rng.random::<f64>()).exp();
            }
            if x[3] > x[4] {
                x.swap(3, 4);
            }
            if self.contains(&x) {
                return x;
            }
        }
    }

    /// Log-uniform perturbation of `anchor` by at most a factor `e^RESTART_SPREAD`
    /// per coordinate; falls back to [`Bounds::sample`] if no draw is feasible.
    fn sample_near(&self, anchor: &[f64; DIM], rng: &mut ChaCha8Rng) -> [f64; DIM] {
        for _ in 0..1000 {
            let mut x = [0.0; DIM];
            for i in 0..DIM {
                let u: f64 = rng.random();
                x[i] = (anchor[i] * (RESTART_SPREAD * (2.0 * u - 1.0)).exp()).clamp(self.lo[i], self.hi[i]);
            }
            if self.contains(&x) {
                return x;
            }
        }
        self.sample(rng)
    }

    /// Variables within tolerance of a widenable box bound: `(index, at_upper)`.
    fn active(&self, x: &[f64; DIM]) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for i in 0..DIM {
            let near = |b: f64| (x[i] - b).abs() <= ACTIVE_BOUND_TOL * b;
            if near(self.lo[i]) && self.lo[i] > HARD_LO[i] {
                out.push((i, false));
            } else if near(self.hi[i]) && self.hi[i] < HARD_HI[i] {
                out.push((i, true));
            }
        }
        out
    }

    fn widened(&self, active: &[(usize, bool)]) -> Bounds {
        let mut b = *self;
        for &(i, upper) in active {
            if upper {
                b.hi[i] = (b.hi[i] * 2.0).min(HARD_HI[i]);
            } else {
                b.lo[i] = (b.lo[i] / 10.0).max(HARD_LO[i]);
            }
        }
        b
    }
}

pub fn params_to_vector(p: &ProtocolParams) -> [f64; DIM] {
    [p.p_v, p.p_x, p.p_y, p.mu_x, p.mu_y, p.mu_z, p.lambda_slice]
}

pub fn apply_vector(base: &Config, x: &[f64; DIM]) -> Config {
    let mut c = base.clone();
    let p = &mut c.protocol;
    p.p_v = x[0];
    p.p_x = x[1];
    p.p_y = x[2];
    p.p_z = 1.0 - x[0] - x[1] - x[2];
    p.mu_x = x[3];
    p.mu_y = x[4];
    p.mu_z = x[5];
    p.lambda_slice = x[6];
    c
}

type CustomObjective = Arc<dyn Fn(&Config) -> f64 + Send + Sync>;

/// What is maximized.
#[derive(Clone)]
pub enum Objective {
    /// Key rate from the full pipeline, continued below zero.
    KeyRate(Analysis),
    Custom(CustomObjective),
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::KeyRate(a) => write!(f, "KeyRate({a:?})"),
            Objective::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Objective {
    fn value(&self, config: &Config) -> f64 {
        let v = match self {
            Objective::KeyRate(a) => evaluate(config, *a).map_or(f64::NEG_INFINITY, |r| r.objective),
            Objective::Custom(f) => f(config),
        };
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    /// Channel, security, mode count and window count; its protocol values are the default start.
    pub base: Config,
    pub bounds: Bounds,
    pub objective: Objective,
}

impl OptimizationProblem {
    pub fn key_rate(base: Config, analysis: Analysis) -> Self {
        Self { base, bounds: Bounds::default(), objective: Objective::KeyRate(analysis) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// 1-based evaluation number within the run.
    pub evaluation: usize,
    pub params: [f64; DIM],
    pub objective: f64,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.evaluation)?;
        for x in self.params {
            write!(f, ",{x:.9e}")?;
        }
        write!(f, ",{:.9e}", self.objective)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub config: Config,
    pub params: [f64; DIM],
    pub objective: f64,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub bounds: Bounds,
}

impl Optimum {
    pub fn bound_widened(&self) -> bool {
        !self.warnings.is_empty()
    }
}

/// Evaluation counter with a hard cap and an improvement trace.
struct Search<'a> {
    problem: &'a OptimizationProblem,
    bounds: Bounds,
    budget: usize,
    used: usize,
    offset: usize,
    best: [f64; DIM],
    best_value: f64,
    trace: Vec<TraceEntry>,
}

impl<'a> Search<'a> {
    fn new(problem: &'a OptimizationProblem, bounds: Bounds, budget: usize, offset: usize) -> Self {
        Search {
            problem,
            bounds,
            budget,
            used: 0,
            offset,
            best: [0.0; DIM],
            best_value: f64::NEG_INFINITY,
            trace: Vec::new(),
        }
    }

    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn eval(&mut self, x: &[f64; DIM]) -> f64 {
        if !self.bounds.contains(x) {
            return f64::NEG_INFINITY;
        }
        if self.exhausted() {
            return f64::NEG_INFINITY;
        }
        self.used += 1;
        let v = self.problem.objective.value(&apply_vector(&self.problem.base, x));
        if v > self.best_value || self.trace.is_empty() {
            self.best_value = v;
            self.best = *x;
            self.trace.push(TraceEntry { evaluation: self.offset + self.used, params: *x, objective: v });
        }
        v
    }

    /// Golden-section maximization of coordinate `i` over `[lo, hi]` in log space.
    fn golden(&mut self, x: &mut [f64; DIM], i: usize, lo: f64, hi: f64, fx: f64) -> f64 {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut a, mut b) = (lo.ln(), hi.ln());
        let at = |x: &[f64; DIM], t: f64| {
            let mut y = *x;
            y[i] = t.exp().clamp(lo, hi);
            y
        };
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = self.eval(&at(x, c));
        let mut fd = self.eval(&at(x, d));
        while (b - a) > GOLDEN_LOG_TOL && !self.exhausted() {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = self.eval(&at(x, c));
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = self.eval(&at(x, d));
            }
        }
        let (t, ft) = if fc >= fd { (c, fc) } else { (d, fd) };
        if ft > fx {
            *x = at(x, t);
            ft
        } else {
            fx
        }
    }

    /// Coordinate descent from `start` until a sweep stops improving.
    fn coordinate_descent(&mut self, start: [f64; DIM]) {
        let mut x = start;
        let mut fx = self.eval(&x);
        let mut width = f64::INFINITY;
        while !self.exhausted() {
            let before = fx;
            for i in 0..DIM {
                let (lo, hi) = self.bounds.interval(&x, i);
                if hi <= lo {
                    continue;
                }
                // later sweeps search a shrinking log-window around the current value
                let (lo, hi) = if width.is_finite() {
                    (lo.max(x[i] * (-width).exp()), hi.min(x[i] * width.exp()))
                } else {
                    (lo, hi)
                };
                fx = self.golden(&mut x, i, lo, hi, fx);
                if self.exhausted() {
                    return;
                }
            }
            let gain = fx - before;
            width = if width.is_finite() { width * 0.5 } else { 1.0 };
            if gain <= 1e-12 * fx.abs() && width < 1e-3 {
                return;
            }
        }
    }

    /// Nelder–Mead in log coordinates from `start`.
    fn nelder_mead(&mut self, start: [f64; DIM]) {
        let to_x = |u: &[f64; DIM]| {
            let mut x = [0.0; DIM];
            for i in 0..DIM {
                x[i] = u[i].exp();
            }
            x
        };
        let mut simplex: Vec<([f64; DIM], f64)> = Vec::with_capacity(DIM + 1);
        let u0 = start.map(f64::ln);
        let f0 = self.eval(&start);
        simplex.push((u0, f0));
        for i in 0..DIM {
            let mut u = u0;
            u[i] += 0.05;
            if !self.bounds.contains(&to_x(&u)) {
                u[i] -= 0.1;
            }
            let f = self.eval(&to_x(&u));
            simplex.push((u, f));
        }
        while !self.exhausted() {
            simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
            let (best, worst) = (simplex[0].1, simplex[DIM].1);
            if (best - worst).abs() <= 1e-13 * best.abs().max(1e-300) {
                let spread = (0..DIM)
                    .map(|i| simplex.iter().map(|s| s.0[i]).fold(f64::NEG_INFINITY, f64::max)
                        - simplex.iter().map(|s| s.0[i]).fold(f64::INFINITY, f64::min))
                    .fold(0.0, f64::max);
                if spread < 1e-9 {
                    return;
                }
            }
            let mut centroid = [0.0; DIM];
            for s in &simplex[..DIM] {
                for i in 0..DIM {
                    centroid[i] += s.0[i] / DIM as f64;
                }
            }
            let along = |t: f64| {
                let mut u = [0.0; DIM];
                for i in 0..DIM {
                    u[i] = centroid[i] + t * (simplex[DIM].0[i] - centroid[i]);
                }
                u
            };
            let ur = along(-1.0);
            let fr = self.eval(&to_x(&ur));
            if fr > simplex[0].1 {
                let ue = along(-2.0);
                let fe = self.eval(&to_x(&ue));
                simplex[DIM] = if fe > fr { (ue, fe) } else { (ur, fr) };
            } else if fr > simplex[DIM - 1].1 {
                simplex[DIM] = (ur, fr);
            } else {
                let uc = if fr > simplex[DIM].1 { along(-0.5) } else { along(0.5) };
                let fc = self.eval(&to_x(&uc));
                if fc > simplex[DIM].1.max(fr) {
                    simplex[DIM] = (uc, fc);
                } else {
                    let u_best = simplex[0].0;
                    for s in simplex.iter_mut().skip(1) {
                        for i in 0..DIM {
                            s.0[i] = u_best[i] + 0.5 * (s.0[i] - u_best[i]);
                        }
                        s.1 = self.eval(&to_x(&s.0));
                    }
                }
            }
        }
    }
}

struct RestartOutcome {
    used: usize,
    trace: Vec<TraceEntry>,
}

fn run_restarts(
    problem: &OptimizationProblem,
    bounds: Bounds,
    start: [f64; DIM],
    fallback: Option<[f64; DIM]>,
    budget: usize,
    seed: u64,
    execution: Execution,
) -> (Optimum, usize) {
    let restarts = RESTARTS.min(budget).max(1);
    let polish = if budget > restarts { ((budget as f64) * POLISH_SHARE) as usize } else { 0 };
    let per = (budget - polish) / restarts;
    let start = bounds.project(start);
    let outcomes = execution.map_indexed(restarts, |k| {
        let x0 = match (k, fallback) {
            (0, _) => start,
            (1, Some(f)) => bounds.project(f),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                bounds.sample_near(&start, &mut rng)
            }
        };
    let mut s = Search::new(problem, bounds, per, k * per);
        s.coordinate_descent(x0);
        RestartOutcome { used: s.used, trace: s.trace }
    });

    // merge in restart order; ties keep the earlier restart
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best = start;
    let mut value = f64::NEG_INFINITY;
    let mut used = 0;
    for o in &outcomes {
        used += o.used;
        for t in &o.trace {
            if t.objective > value || trace.is_empty() {
                value = t.objective;
                best = t.params;
                trace.push(t.clone());
            }
        }
    }

    let remaining = budget.saturating_sub(used);
    if remaining > 0 {
        let mut s = Search::new(problem, bounds, remaining, restarts * per);
        s.best = best;
        s.best_value = value;
        s.trace.push(TraceEntry { evaluation: 0, params: best, objective: value });
        s.nelder_mead(best);
        used += s.used;
        for t in s.trace.into_iter().skip(1) {
            if t.objective > value {
                value = t.objective;
                best = t.params;
                trace.push(t);
            }
        }
    }
    (
        Optimum {
            config: apply_vector(&problem.base, &best),
            params: best,
            objective: value,
            evaluations: used,
            trace,
            warnings: Vec::new(),
            bounds,
        },
        used,
    )
}

/// Maximizes the objective within `budget` evaluations.
///
/// `warm` replaces the start of restart 0; the default start then seeds restart 1. If an optimum lies on a
/// box bound, that bound is widened once and the search continues from it.
pub fn optimize(
    problem: &OptimizationProblem,
    budget: usize,
    seed: u64,
    warm: Option<[f64; DIM]>,
    execution: Execution,
) -> Result<Optimum, OptimizerError> {
    if budget == 0 {
        return Err(OptimizerError::ZeroBudget);
    }
    problem.bounds.validate()?;
    let default = params_to_vector(&problem.base.protocol);
    let first_share = if budget >= 2 * RESTARTS { budget * 3 / 4 } else { budget };
    let (mut opt, used) = match warm {
        Some(w) => run_restarts(problem, problem.bounds, w, Some(default), first_share, seed, execution),
        None => run_restarts(problem, problem.bounds, default, None, first_share, seed, execution),
    };

    let active = problem.bounds.active(&opt.params);
    let remaining = budget - used;
    if !active.is_empty() && remaining > 0 {
        let widened = problem.bounds.widened(&active);
        let mut warnings = Vec::new();
        for &(i, upper) in &active {
            let (old, new) = if upper {
                (problem.bounds.hi[i], widened.hi[i])
            } else {
                (problem.bounds.lo[i], widened.lo[i])
            };
            warnings.push(format!(
                "{} reached its {} bound {old}; widened to {new}",
                VARIABLE_NAMES[i],
                if upper { "upper" } else { "lower" }
            ));
        }
        let mut s = Search::new(problem, widened, remaining, used);
        s.best = opt.params;
        s.best_value = opt.objective;
        s.trace.push(TraceEntry { evaluation: 0, params: opt.params, objective: opt.objective });
        s.coordinate_descent(opt.params);
        if !s.exhausted() {
            let from = s.best;
            s.nelder_mead(from);
        }
        for t in s.trace.iter().skip(1) {
            if t.objective > opt.objective {
                opt.objective = t.objective;
                opt.params = t.params;
                opt.trace.push(t.clone());
            }
        }
        opt.evaluations += s.used;
        opt.config = apply_vector(&problem.base, &opt.params);
        opt.warnings = warnings;
        opt.bounds = widened;
    } else if !active.is_empty() {
        let names: Vec<&str> = active.iter().map(|&(i, _)| VARIABLE_NAMES[i]).collect();
        opt.warnings.push(format!("optimum on a bound ({}) with no budget left to widen", names.join(", ")));
    }
    Ok(opt)
}

/// One optimized point of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub distance_km: f64,
    pub modes: usize,
    pub optimum: Optimum,
    pub result: KeyRateResult,
}

#[derive(Debug, Clone)]
pub struct ScanRequest<'a> {
    pub base: &'a Config,
    pub distances: &'a [f64],
    pub modes: &'a [usize],
    pub analysis: Analysis,
    pub budget: usize,
    pub seed: u64,
    pub warm_start: bool,
    pub execution: Execution,
}

/// Optimizes every `(m, distance)` point, in `m`-major order.
///
/// With `warm_start`, each distance for a given `m` starts from the previous
/// distance's optimum, so each `m` is one sequential chain.
pub fn scan(req: &ScanRequest<'_>) -> Result<Vec<ScanPoint>, OptimizerError> {
    if req.modes.is_empty() {
        return Err(OptimizerError::NoModes);
    }
    if req.distances.windows(2).any(|w| w[1] < w[0]) {
        return Err(OptimizerError::UnsortedDistances);
    }
    let point = |m: usize, d: f64, warm: Option<[f64; DIM]>| -> Result<ScanPoint, OptimizerError> {
        let base = Config { protocol: req.base.protocol.with_modes(m), ..req.base.at_distance(d) };
        let problem = OptimizationProblem::key_rate(base, req.analysis);
        // only the outer loop is parallel
        let optimum = optimize(&problem, req.budget, req.seed, warm, Execution::Sequential)?;
        let mut result = evaluate(&optimum.config, req.analysis)?;
        if optimum.bound_widened() {
            result.flags.insert(Flag::BoundWidened);
        }
        Ok(ScanPoint { distance_km: d, modes: m, optimum, result })
    };
    let chunks: Vec<Result<Vec<ScanPoint>, OptimizerError>> = if req.warm_start {
        req.execution.map_indexed(req.modes.len(), |mi| {
            let mut warm = None;
            let mut out = Vec::with_capacity(req.distances.len());
            for &d in req.distances {
                let p = point(req.modes[mi], d, warm)?;
                warm = Some(p.optimum.params);
                out.push(p);
            }
            Ok(out)
        })
    } else {
        let n = req.distances.len();
        let flat = req.execution.map_indexed(req.modes.len() * n, |k| {
            point(req.modes[k / n], req.distances[k % n], None)
        });
        vec![flat.into_iter().collect()]
    };
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
