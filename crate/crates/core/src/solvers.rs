//! DCA and boosted DCA on the penalized problem `min_{w in simplex} phi(w)`.
//!
//! Each iteration linearizes `h` at `w_k` with a random element
//! `u_k in dh(w_k)` and solves the convex subproblem for `y_k`. DCA moves to
//! `y_k`; BDCA searches along `d_k = y_k - w_k` starting from the largest
//! step that stays on the simplex, backtracking towards `lambda = 1` until
//! `phi(w_k + lambda d_k) <= phi(w_k) - rho lambda^2 |d_k|^2`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{self, ObjectiveValue, ProblemSpec};
use crate::simplex;
use crate::subproblem::{self, IpmOptions, Multipliers, SubproblemStatus};

/// Direction entries smaller than this in magnitude do not limit the step.
pub const DIRECTION_ZERO: f64 = 1e-14;
/// Slack allowed on the start vector before it is rejected.
pub const START_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Dca,
    Bdca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCriterion {
    /// `|w_{k+1} - w_k| <= eps`.
    DkAbs,
    /// `max_i |dw_i| / |w_{k,i}| <= eps`; coordinates with `|w_{k,i}| < 1e-12`
    /// use the absolute change.
    DkRel,
    FctAbs,
    FctRel,
}

macro_rules! str_enum {
    ($ty:ty, $($var:path => $s:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($var => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($var),)+
                    other => Err(Error::invalid(format!("unknown value `{other}`"))),
                }
            }
        }
    };
}

str_enum!(Algorithm, Algorithm::Dca => "dca", Algorithm::Bdca => "bdca");
str_enum!(
    StopCriterion,
    StopCriterion::DkAbs => "dk_abs",
    StopCriterion::DkRel => "dk_rel",
    StopCriterion::FctAbs => "fct_abs",
    StopCriterion::FctRel => "fct_rel"
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub max_iter: usize,
    pub time_limit_seconds: Option<f64>,
    pub stop_criterion: StopCriterion,
    pub stop_tol: f64,
    pub beta: f64,
    /// Overrides `tau`, `rho` and `beta` with the adaptive schedule.
    pub adaptive: bool,
    pub seed: u64,
    pub subproblem_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Bdca,
            max_iter: 10_000,
            time_limit_seconds: None,
            stop_criterion: StopCriterion::DkAbs,
            stop_tol: 1e-5,
            beta: 0.9,
            adaptive: false,
            seed: 0,
            subproblem_tol: subproblem::DEFAULT_TOL,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::invalid("stop tolerance must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid(format!("beta = {} must lie in (0, 1)", self.beta)));
        }
        if let Some(t) = self.time_limit_seconds {
            if !(t > 0.0) {
                return Err(Error::invalid("time limit must be positive"));
            }
        }
        if !(self.subproblem_tol > 0.0) {
            return Err(Error::invalid("subproblem tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub w: Vec<f64>,
    /// `phi(w_k)` under this row's `tau`.
    pub phi: f64,
    /// `phi(w_{k+1})` under this row's `tau`.
    pub phi_next: f64,
    pub d_norm: f64,
    pub lambda: f64,
    pub lambda_max: f64,
    pub tau: f64,
    pub rho: f64,
    pub beta: f64,
    /// `max(r_min - VaR(w_k), 0)`.
    pub penalty: f64,
    pub feasible: bool,
    pub backtracks: usize,
    /// The line search accepted `lambda = 1` although the decrease test failed.
    pub armijo_guard: bool,
    pub subproblem_status: SubproblemStatus,
    pub subproblem_iterations: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    MaxIter,
    TimeLimit,
    /// The subproblem solver broke down; the result carries the partial trace.
    NumericalFailure,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationReason::Converged => "converged",
            TerminationReason::MaxIter => "max_iter",
            TerminationReason::TimeLimit => "time_limit",
            TerminationReason::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub algorithm: Algorithm,
    pub w: Vec<f64>,
    pub phi: f64,
    pub expected_return: f64,
    pub var: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub total_seconds: f64,
    pub reason: TerminationReason,
    /// Outer KKT residual from the last subproblem's multipliers.
    pub kkt_residual: Option<f64>,
    /// Penalty parameters in force at the last iteration.
    pub tau: f64,
    pub rho: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Multipliers>,
    pub trace: Vec<IterationTrace>,
}

impl SolveResult {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Domain(e.to_string()))
    }

    pub fn read_json<R: std::io::Read>(input: R) -> Result<Self> {
        serde_json::from_reader(input).map_err(|e| Error::Parse {
            row: e.line(),
            message: e.to_string(),
        })
    }
}

pub fn write_trace_jsonl<W: Write>(trace: &[IterationTrace], mut out: W) -> Result<()> {
    for row in trace {
        let line = serde_json::to_string(row).map_err(|e| Error::Domain(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Io {
            path: "<trace>".into(),
            source: e,
        })?;
    }
    Ok(())
}

/// Largest `lambda` with `w + lambda d` on the simplex.
pub fn max_feasible_step(w: &[f64], d: &[f64]) -> Result<f64> {
    if w.len() != d.len() {
        return Err(Error::shape("w and d differ in length"));
    }
    if d.iter().all(|x| *x == 0.0) {
        return Err(Error::Domain("zero direction".into()));
    }
    let mut lam = f64::INFINITY;
    for (wi, di) in w.iter().zip(d) {
        if *di < -DIRECTION_ZERO {
            lam = lam.min(wi.max(0.0) / -di);
        }
    }
    Ok(lam)
}

/// `w + lambda d` with rounding debris removed.
fn step_point(w: &[f64], d: &[f64], lambda: f64) -> Vec<f64> {
    let mut out: Vec<f64> = w
        .iter()
        .zip(d)
        .map(|(wi, di)| {
            let v = wi + lambda * di;
            if v < DIRECTION_ZERO {
                0.0
            } else {
                v
            }
        })
        .collect();
    simplex::renormalize(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub lambda: f64,
    pub backtracks: usize,
    /// `lambda = 1` was accepted without passing the decrease test.
    pub guard: bool,
    /// `phi` at the accepted point.
    pub phi: f64,
}

/// Backtracking `lambda <- max(1, beta lambda)` from `lambda_init` until
/// `phi(w + lambda d) <= phi(w) - rho lambda^2 |d|^2`. Once `lambda = 1` has
/// been tested the search stops; a failure there is accepted and flagged.
pub fn armijo_backtrack(
    spec: &ProblemSpec,
    w: &[f64],
    d: &[f64],
    lambda_init: f64,
    beta: f64,
    rho: f64,
) -> Result<LineSearch> {
    if !(lambda_init >= 1.0) || !lambda_init.is_finite() {
        return Err(Error::invalid(format!("lambda_init = {lambda_init} must be >= 1")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("beta must lie in (0, 1)"));
    }
    let phi0 = objective::phi(spec, w)?.phi;
    Ok(backtrack(spec, w, d, phi0, lambda_init, beta, rho))
}

fn backtrack(
    spec: &ProblemSpec,
    w: &[f64],
    d: &[f64],
    phi0: f64,
    lambda_init: f64,
    beta: f64,
    rho: f64,
) -> LineSearch {
    let dd = simplex::dot(d, d);
    let mut lambda = lambda_init;
    let mut backtracks = 0;
    loop {
        let cand = step_point(w, d, lambda);
        let value = objective::phi_unchecked(spec, &cand).phi;
        if value <= phi0 - rho * lambda * lambda * dd {
            return LineSearch {
                lambda,
                backtracks,
                guard: false,
                phi: value,
            };
        }
        if lambda <= 1.0 {
            return LineSearch {
                lambda: 1.0,
                backtracks,
                guard: true,
                phi: value,
            };
        }
        lambda = (lambda * beta).max(1.0);
        backtracks += 1;
    }
}

pub fn stop_check(
    criterion: StopCriterion,
    eps: f64,
    w_k: &[f64],
    w_next: &[f64],
    phi_k: f64,
    phi_next: f64,
) -> bool {
    match criterion {
        StopCriterion::DkAbs => simplex::norm2(&simplex::sub(w_next, w_k)) <= eps,
        StopCriterion::DkRel => w_k.iter().zip(w_next).all(|(a, b)| {
            let change = (b - a).abs();
            if a.abs() < 1e-12 {
                change <= eps
            } else {
                change / a.abs() <= eps
            }
        }),
        StopCriterion::FctAbs => (phi_next - phi_k).abs() <= eps,
        StopCriterion::FctRel => {
            let change = (phi_next - phi_k).abs();
            if phi_k == 0.0 {
                change <= eps
            } else {
                change / phi_k.abs() <= eps
            }
        }
    }
}

/// Penalty parameters of the adaptive schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub tau: f64,
    pub rho: f64,
    pub beta: f64,
    /// Consecutive line searches that accepted their initial step.
    pub initial_accepts: u32,
}

pub const TAU0: f64 = 0.01;
pub const TAU_MAX: f64 = 1e6;
pub const RHO_MIN: f64 = 1e-4;

impl AdaptiveState {
    /// `tau = 0.01`, `rho = 0.01 n` (doubled for a start with a weight above
    /// 0.5), `beta = 0.9`.
    pub fn initial(w0: &[f64]) -> Self {
        let mut rho = 0.01 * w0.len() as f64;
        if w0.iter().any(|x| *x > 0.5) {
            rho *= 2.0;
        }
        Self {
            tau: TAU0,
            rho,
            beta: 0.9,
            initial_accepts: 0,
        }
    }
}

/// What the adaptive rules look at after an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub feasible: bool,
    pub penalty_before: f64,
    pub penalty_after: f64,
    /// `None` for DCA steps.
    pub line_search: Option<LineSearch>,
}

pub fn adaptive_update(state: AdaptiveState, diag: &StepDiagnostics) -> AdaptiveState {
    let mut next = state;
    if !diag.feasible {
        let improvement = if diag.penalty_before > 0.0 {
            (diag.penalty_before - diag.penalty_after) / diag.penalty_before
        } else {
            0.0
        };
        if improvement < 1e-3 {
            next.tau = (state.tau * 10.0).min(TAU_MAX);
        }
    }
    next.rho = (state.rho * 0.9).max(RHO_MIN);
    if let Some(ls) = diag.line_search {
        if ls.backtracks > 5 {
            next.beta = (state.beta * 0.9).max(0.5);
        }
        if ls.backtracks == 0 && !ls.guard {
            next.initial_accepts = state.initial_accepts + 1;
            if next.initial_accepts >= 2 {
                next.beta = (next.beta / 0.9).min(0.95);
                next.initial_accepts = 0;
            }
        } else {
            next.initial_accepts = 0;
        }
    }
    next
}

pub fn dca_solve(spec: &ProblemSpec, w0: &[f64], config: &SolverConfig) -> Result<SolveResult> {
    solve(spec, w0, &SolverConfig {
        algorithm: Algorithm::Dca,
        ..config.clone()
    })
}

pub fn bdca_solve(spec: &ProblemSpec, w0: &[f64], config: &SolverConfig) -> Result<SolveResult> {
    solve(spec, w0, &SolverConfig {
        algorithm: Algorithm::Bdca,
        ..config.clone()
    })
}

/// Runs `config.algorithm`.
pub fn solve(spec: &ProblemSpec, w0: &[f64], config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    spec.validate()?;
    if w0.len() != spec.n_assets() {
        return Err(Error::shape(format!(
            "start has length {}, problem has {} assets",
            w0.len(),
            spec.n_assets()
        )));
    }
    let mut w = simplex::accept_start(w0, START_SLACK)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut params = if config.adaptive {
        AdaptiveState::initial(&w)
    } else {
        AdaptiveState {
            tau: spec.tau,
            rho: spec.rho,
            beta: config.beta,
            initial_accepts: 0,
        }
    };
    let mut current = spec.with_penalty(params.tau, params.rho);
    let mut value = objective::phi_unchecked(&current, &w);
    let mut trace = Vec::new();
    let mut reason = TerminationReason::MaxIter;
    let mut last: Option<(Multipliers, Vec<f64>, ProblemSpec)> = None;

    for k in 0..config.max_iter {
        if let Some(limit) = config.time_limit_seconds {
            if start.elapsed().as_secs_f64() >= limit {
                reason = TerminationReason::TimeLimit;
                break;
            }
        }
        let iter_start = Instant::now();
        let u = objective::h_subgradient_unchecked(&current, &w, Some(rng.next_u64()));
        let qp = subproblem::build_epigraph_qp(&current, &u)?;
        let sol = subproblem::solve_subproblem_with(
            &qp,
            &IpmOptions {
                tol: config.subproblem_tol,
                max_iter: None,
                start: Some(w.clone()),
            },
        )?;
        if sol.status == SubproblemStatus::NumericalFailure {
            reason = TerminationReason::NumericalFailure;
            break;
        }
        let d = simplex::sub(&sol.y, &w);
        let d_norm = simplex::norm2(&d);

        let (w_next, next_value, lambda, lambda_max, line_search) =
            if config.algorithm == Algorithm::Bdca && d.iter().any(|x| *x != 0.0) {
                let lambda_max = max_feasible_step(&w, &d)?;
                // y is on the simplex, so lambda_max >= 1 up to rounding.
                let init = if lambda_max.is_finite() { lambda_max.max(1.0) } else { 1.0 };
                let ls = backtrack(&current, &w, &d, value.phi, init, params.beta, params.rho);
                let w_next = step_point(&w, &d, ls.lambda);
                let v = objective::phi_unchecked(&current, &w_next);
                (w_next, v, ls.lambda, lambda_max, Some(ls))
            } else {
                let v = objective::phi_unchecked(&current, &sol.y);
                (sol.y.clone(), v, 1.0, 1.0, None)
            };

        trace.push(IterationTrace {
            iteration: k,
            w: w.clone(),
            phi: value.phi,
            phi_next: next_value.phi,
            d_norm,
            lambda,
            lambda_max,
            tau: params.tau,
            rho: params.rho,
            beta: params.beta,
            penalty: value.penalty_term,
            feasible: value.feasible,
            backtracks: line_search.map_or(0, |l| l.backtracks),
            armijo_guard: line_search.is_some_and(|l| l.guard),
            subproblem_status: sol.status,
            subproblem_iterations: sol.iterations,
            wall_ms: iter_start.elapsed().as_secs_f64() * 1e3,
        });

        let stop = stop_check(
            config.stop_criterion,
            config.stop_tol,
            &w,
            &w_next,
            value.phi,
            next_value.phi,
        );
        last = Some((sol.multipliers, u, current.clone()));

        if config.adaptive {
            params = adaptive_update(
                params,
                &StepDiagnostics {
                    feasible: next_value.feasible,
                    penalty_before: value.penalty_term,
                    penalty_after: next_value.penalty_term,
                    line_search,
                },
            );
            current = spec.with_penalty(params.tau, params.rho);
            value = objective::phi_unchecked(&current, &w_next);
        } else {
            value = next_value;
        }
        w = w_next;
        if stop {
            reason = TerminationReason::Converged;
            break;
        }
    }

    let final_value: ObjectiveValue = objective::phi_unchecked(&current, &w);
    let (kkt_residual, multipliers) = match last {
        Some((mult, u, at)) => (
            subproblem::kkt_residual_outer(&at, &w, &mult, &u).ok(),
            Some(mult),
        ),
        None => (None, None),
    };
    Ok(SolveResult {
        algorithm: config.algorithm,
        w,
        phi: final_value.phi,
        expected_return: final_value.expected_return(),
        var: final_value.var,
        feasible: final_value.feasible,
        iterations: trace.len(),
        total_seconds: start.elapsed().as_secs_f64(),
        reason,
        kkt_residual,
        tau: params.tau,
        rho: params.rho,
        beta: params.beta,
        multipliers,
        trace,
    })
}

/// Violations of the per-iteration descent guarantees in a trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceAudit {
    pub lambda_below_one: usize,
    pub insufficient_decrease: usize,
    pub off_simplex: usize,
    pub phi_increase: usize,
    pub rows: usize,
}

impl TraceAudit {
    pub fn violations(&self) -> usize {
        self.lambda_below_one + self.insufficient_decrease + self.off_simplex + self.phi_increase
    }
}

/// Checks `lambda >= 1`, `phi_next <= phi - rho lambda^2 |d|^2 + slack`,
/// iterates on the simplex within 1e-8 and `phi` nonincreasing within
/// `slack`. With a changing penalty the comparison uses each row's own
/// parameters.
pub fn audit_trace(result: &SolveResult, slack: f64) -> TraceAudit {
    let mut audit = TraceAudit {
        rows: result.trace.len(),
        ..TraceAudit::default()
    };
    for row in &result.trace {
        if row.lambda < 1.0 {
            audit.lambda_below_one += 1;
        }
        let bound = row.phi - row.rho * row.lambda * row.lambda * row.d_norm * row.d_norm + slack;
        if row.phi_next > bound {
            audit.insufficient_decrease += 1;
        }
        if row.phi_next > row.phi + slack {
            audit.phi_increase += 1;
        }
        if !simplex::is_on_simplex(&row.w, 1e-8) {
            audit.off_simplex += 1;
        }
    }
    if !simplex::is_on_simplex(&result.w, 1e-8) {
        audit.off_simplex += 1;
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScenarioSet;
    use rand::Rng;
    use std::sync::Arc;

    fn spec_from(rows: &[Vec<f64>], alpha: f64, r_min: f64, tau: f64, rho: f64) -> ProblemSpec {
        let set = Arc::new(ScenarioSet::from_rows(rows, None, "t").unwrap());
        ProblemSpec::new(set, alpha, None, r_min, tau, rho).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, s: usize, n: usize) -> Vec<Vec<f64>> {
        (0..s)
            .map(|_| (0..n).map(|_| rng.random_range(0.85..1.15)).collect())
            .collect()
    }

    #[test]
    fn max_step_examples() {
        assert_eq!(max_feasible_step(&[0.5, 0.5], &[0.5, -0.5]).unwrap(), 1.0);
        assert!((max_feasible_step(&[0.9, 0.1], &[-0.4, 0.4]).unwrap() - 2.25).abs() < 1e-15);
        let w = simplex::uniform(3);
        let d = simplex::sub(&[1.0, 0.0, 0.0], &w);
        assert_eq!(max_feasible_step(&w, &d).unwrap(), 1.0);
        assert!(max_feasible_step(&w, &[0.0; 3]).is_err());
    }

    #[test]
    fn stop_examples() {
        let w = [0.2, 0.8];
        for c in [
            StopCriterion::DkAbs,
            StopCriterion::DkRel,
            StopCriterion::FctAbs,
            StopCriterion::FctRel,
        ] {
            assert!(stop_check(c, 1e-5, &w, &w, -1.0, -1.0));
        }
        assert!(!stop_check(StopCriterion::FctAbs, 1e-5, &w, &w, -1.0, -1.0 - 2e-5));
        // Zero coordinate: absolute change 5e-6 passes, a relative reading would not.
        assert!(stop_check(StopCriterion::DkRel, 1e-5, &[0.0, 1.0], &[5e-6, 1.0 - 5e-6], 0.0, 0.0));
        assert!(!stop_check(StopCriterion::DkRel, 1e-5, &[0.0, 1.0], &[2e-5, 1.0 - 2e-5], 0.0, 0.0));
    }

    #[test]
    fn armijo_examples() {
        // Linear decreasing objective along d: accepted at once.
        let rows = vec![vec![1.1, 0.9], vec![1.2, 0.95], vec![1.15, 0.8]];
        let spec = spec_from(&rows, 0.3, -10.0, 1.0, 1e-3);
        let w = [0.5, 0.5];
        let d = [0.25, -0.25];
        let ls = armijo_backtrack(&spec, &w, &d, 2.0, 0.5, 1e-3).unwrap();
        assert_eq!((ls.lambda, ls.backtracks, ls.guard), (2.0, 0, false));

        // Increasing direction: fails all the way down to the clamp.
        let d = [-0.25, 0.25];
        let (init, beta) = (2.0_f64, 0.7_f64);
        let ls = armijo_backtrack(&spec, &w, &d, init, beta, 1e-3).unwrap();
        let expected = ((1.0 / init).ln() / beta.ln()).ceil() as usize;
        assert_eq!(ls.lambda, 1.0);
        assert_eq!(ls.backtracks, expected);
        assert!(ls.guard);

        let ls = armijo_backtrack(&spec, &w, &d, 1.0, beta, 1e-3).unwrap();
        assert_eq!((ls.lambda, ls.backtracks), (1.0, 0));
        assert!(armijo_backtrack(&spec, &w, &d, 0.5, beta, 1e-3).is_err());
    }

    #[test]
    fn adaptive_examples() {
        let s = AdaptiveState::initial(&simplex::uniform(28));
        assert!((s.rho - 0.28).abs() < 1e-15);
        assert_eq!(AdaptiveState::initial(&[0.6, 0.2, 0.2]).rho, 0.06);

        let feasible = StepDiagnostics {
            feasible: true,
            penalty_before: 0.0,
            penalty_after: 0.0,
            line_search: None,
        };
        assert_eq!(adaptive_update(s, &feasible).tau, s.tau);

        let stuck = StepDiagnostics {
            feasible: false,
            penalty_before: 0.02,
            penalty_after: 0.02,
            line_search: None,
        };
        let twice = adaptive_update(adaptive_update(s, &stuck), &stuck);
        assert!((twice.tau - 100.0 * s.tau).abs() < 1e-15);

        let mut r = s;
        for _ in 0..20 {
            r = adaptive_update(r, &feasible);
        }
        assert!((r.rho - 0.0340).abs() < 5e-5);

        let ls = |backtracks| StepDiagnostics {
            line_search: Some(LineSearch {
                lambda: 1.5,
                backtracks,
                guard: false,
                phi: 0.0,
            }),
            ..feasible
        };
        assert!((adaptive_update(s, &ls(6)).beta - 0.81).abs() < 1e-15);
        let once = adaptive_update(s, &ls(0));
        assert_eq!(once.beta, 0.9);
        assert!((adaptive_update(once, &ls(0)).beta - 0.95).abs() < 1e-15);
    }

    #[test]
    fn single_asset_converges_immediately() {
        let spec = spec_from(&[vec![0.9], vec![1.1], vec![1.0]], 0.5, 0.95, 1.0, 1.0);
        let res = bdca_solve(&spec, &[1.0], &SolverConfig::default()).unwrap();
        assert_eq!(res.reason, TerminationReason::Converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.w, vec![1.0]);
        assert_eq!(res.trace[0].d_norm, 0.0);
    }

    #[test]
    fn fixed_point_start_converges_in_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = spec_from(&random_rows(&mut rng, 40, 3), 0.1, 0.9, 1.0, 0.5);
        let cfg = SolverConfig {
            algorithm: Algorithm::Dca,
            stop_tol: 1e-7,
            ..SolverConfig::default()
        };
        let first = dca_solve(&spec, &simplex::uniform(3), &cfg).unwrap();
        assert_eq!(first.reason, TerminationReason::Converged);
        let again = dca_solve(&spec, &first.w, &cfg).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.trace[0].d_norm <= 1e-7);
    }

    #[test]
    fn identical_assets_keep_the_start() {
        // phi is constant on the simplex here, so every start is a fixed point.
        let rows: Vec<Vec<f64>> = [0.9, 1.1, 1.0, 1.05, 0.97, 1.02]
            .iter()
            .map(|&r| vec![r; 3])
            .collect();
        let spec = spec_from(&rows, 0.2, 0.95, 1.0, 0.5);
        for alg in [Algorithm::Dca, Algorithm::Bdca] {
            let cfg = SolverConfig {
                algorithm: alg,
                ..SolverConfig::default()
            };
            for w0 in [simplex::uniform(3), vec![0.7, 0.2, 0.1]] {
                let res = solve(&spec, &w0, &cfg).unwrap();
                assert_eq!(res.reason, TerminationReason::Converged);
                for (x, x0) in res.w.iter().zip(&w0) {
                    assert!((x - x0).abs() < 1e-6, "{:?}", res.w);
                }
            }
        }
    }

    #[test]
    fn rejects_far_off_start() {
        let spec = spec_from(&[vec![0.9, 1.0], vec![1.1, 1.0]], 0.5, 0.9, 1.0, 1.0);
        assert!(bdca_solve(&spec, &[0.7, 0.7], &SolverConfig::default()).is_err());
        assert!(bdca_solve(&spec, &[0.5, 0.5 + 1e-7], &SolverConfig::default()).is_ok());
    }

    #[test]
    fn two_asset_terminal_point_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let rows = random_rows(&mut rng, 5, 2);
            let spec = spec_from(&rows, 0.4, 0.97, 2.0, 0.1);
            let cfg = SolverConfig {
                algorithm: Algorithm::Dca,
                stop_tol: 1e-9,
                ..SolverConfig::default()
            };
            let res = dca_solve(&spec, &[0.5, 0.5], &cfg).unwrap();
            let th = res.w[0];
            let phi = |t: f64| objective::phi(&spec, &[t, 1.0 - t]).unwrap().phi;
            let mut local = f64::INFINITY;
            for i in 0..=20 {
                let t = (th - 0.01 + 0.001 * i as f64).clamp(0.0, 1.0);
                local = local.min(phi(t));
            }
            assert!(res.phi <= local + 1e-6, "{} vs {local}", res.phi);
        }
    }

    #[test]
    fn runs_satisfy_descent_invariants_and_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = spec_from(&random_rows(&mut rng, 80, 4), 0.1, 0.97, 1.5, 0.3);
        for adaptive in [false, true] {
            for alg in [Algorithm::Dca, Algorithm::Bdca] {
                let cfg = SolverConfig {
                    algorithm: alg,
                    adaptive,
                    seed: 11,
                    ..SolverConfig::default()
                };
                let w0 = [0.7, 0.1, 0.1, 0.1];
                let a = solve(&spec, &w0, &cfg).unwrap();
                let audit = audit_trace(&a, 1e-7);
                assert_eq!(audit.violations(), 0, "{audit:?}");
                let b = solve(&spec, &w0, &cfg).unwrap();
                assert_eq!(a.w, b.w);
                assert_eq!(a.iterations, b.iterations);
            }
        }
    }

    #[test]
    fn trace_exports_one_line_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = spec_from(&random_rows(&mut rng, 30, 3), 0.1, 0.97, 1.5, 0.3);
        let res = bdca_solve(&spec, &[0.2, 0.3, 0.5], &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_jsonl(&res.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), res.trace.len());
        let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(row.get("d_norm").is_some());
        let mut buf = Vec::new();
        res.write_json(&mut buf).unwrap();
        let back: SolveResult = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back.w, res.w);
    }
}
