//! Penalized objective `phi = g - h` and its convex components.
//!
//! ```text
//! f(w)   = -sum_j p_j w'x_j
//! phi(w) = f(w) + tau * max(r_min - VaR_a(w), 0)
//! g(w)   = psi(w) + f(w) + tau * max(-(a/g) CVaR_a(w) + r_min, -((a-g)/g) CVaR_{a-g}(w))
//! h(w)   = psi(w) - tau * ((a-g)/g) CVaR_{a-g}(w)
//! psi(w) = (rho/2) |w|^2
//! ```

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ScenarioSet;
use crate::error::{Error, Result};
use crate::risk::{self, DcLevels, DcTail};
use crate::simplex;

/// Tolerance on the VaR constraint used when counting feasible outcomes.
pub const DEFAULT_FEAS_TOL: f64 = 1e-6;

/// One instance of the penalized VaR-constrained portfolio problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    scenarios: Arc<ScenarioSet>,
    mean: Vec<f64>,
    pub alpha: f64,
    /// Width of the gap between the two CVaR levels; must stay below the
    /// boundary mass epsilon.
    pub gamma: f64,
    pub r_min: f64,
    /// Penalty weight on VaR shortfall.
    pub tau: f64,
    /// Strong-convexity modulus of both DC components.
    pub rho: f64,
}

impl ProblemSpec {
    /// `gamma = None` picks half the boundary mass.
    pub fn new(
        scenarios: Arc<ScenarioSet>,
        alpha: f64,
        gamma: Option<f64>,
        r_min: f64,
        tau: f64,
        rho: f64,
    ) -> Result<Self> {
        risk::check_level(alpha)?;
        let gamma = match gamma {
            Some(g) => g,
            None => risk::default_gamma(scenarios.probabilities(), alpha)?,
        };
        let mean = scenarios.mean_returns();
        let spec = Self {
            scenarios,
            mean,
            alpha,
            gamma,
            r_min,
            tau,
            rho,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        risk::check_level(self.alpha)?;
        let eps = 2.0 * risk::default_gamma(self.scenarios.probabilities(), self.alpha)?;
        DcLevels::new(self.alpha, self.gamma, eps)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho = {} must be positive", self.rho)));
        }
        if !self.r_min.is_finite() {
            return Err(Error::invalid("r_min must be finite"));
        }
        Ok(())
    }

    pub fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    pub fn scenarios_arc(&self) -> &Arc<ScenarioSet> {
        &self.scenarios
    }

    /// Probability-weighted mean return per asset.
    pub fn mean_returns(&self) -> &[f64] {
        &self.mean
    }

    pub fn n_assets(&self) -> usize {
        self.scenarios.n_assets()
    }

    pub fn levels(&self) -> DcLevels {
        DcLevels {
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }

    /// `alpha / gamma`.
    pub fn kappa_upper(&self) -> f64 {
        self.alpha / self.gamma
    }

    /// `(alpha - gamma) / gamma`.
    pub fn kappa_lower(&self) -> f64 {
        (self.alpha - self.gamma) / self.gamma
    }

    pub fn with_penalty(&self, tau: f64, rho: f64) -> Self {
        Self {
            tau,
            rho,
            ..self.clone()
        }
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.n_assets() {
            return Err(Error::shape(format!(
                "weights have length {}, problem has {} assets",
                w.len(),
                self.n_assets()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// `f(w)`, the negated expected return.
    pub expected_return_term: f64,
    /// `max(r_min - VaR, 0)`.
    pub penalty_term: f64,
    pub phi: f64,
    pub var: f64,
    pub feasible: bool,
}

impl ObjectiveValue {
    pub fn expected_return(&self) -> f64 {
        -self.expected_return_term
    }
}

fn psi(spec: &ProblemSpec, w: &[f64]) -> f64 {
    0.5 * spec.rho * simplex::dot(w, w)
}

pub fn empirical_loss(spec: &ProblemSpec, w: &[f64]) -> Result<f64> {
    spec.check_weights(w)?;
    Ok(loss(spec, w))
}

fn loss(spec: &ProblemSpec, w: &[f64]) -> f64 {
    -simplex::dot(&spec.mean, w)
}

/// `phi` together with its parts; feasibility uses [`DEFAULT_FEAS_TOL`].
pub fn phi(spec: &ProblemSpec, w: &[f64]) -> Result<ObjectiveValue> {
    spec.check_weights(w)?;
    Ok(phi_unchecked(spec, w))
}

pub(crate) fn phi_unchecked(spec: &ProblemSpec, w: &[f64]) -> ObjectiveValue {
    let returns = spec.scenarios.returns_unchecked(w);
    let index = risk::tail_index_of(&returns, spec.scenarios.probabilities(), spec.alpha);
    let var = returns[index.boundary()];
    let f = loss(spec, w);
    let penalty = (spec.r_min - var).max(0.0);
    ObjectiveValue {
        expected_return_term: f,
        penalty_term: penalty,
        phi: f + spec.tau * penalty,
        var,
        feasible: var >= spec.r_min - DEFAULT_FEAS_TOL,
    }
}

pub fn g_value(spec: &ProblemSpec, w: &[f64]) -> Result<f64> {
    spec.check_weights(w)?;
    let tail = DcTail::evaluate(&spec.scenarios, w, spec.levels());
    Ok(psi(spec, w) + loss(spec, w) + spec.tau * branch_max(spec, &tail))
}

pub fn h_value(spec: &ProblemSpec, w: &[f64]) -> Result<f64> {
    spec.check_weights(w)?;
    let tail = DcTail::evaluate(&spec.scenarios, w, spec.levels());
    Ok(psi(spec, w) - spec.tau * spec.kappa_lower() * tail.cvar_lower)
}

/// The two affine pieces inside the max of `g`.
pub(crate) fn branches(spec: &ProblemSpec, tail: &DcTail) -> (f64, f64) {
    (
        -spec.kappa_upper() * tail.cvar_alpha + spec.r_min,
        -spec.kappa_lower() * tail.cvar_lower,
    )
}

fn branch_max(spec: &ProblemSpec, tail: &DcTail) -> f64 {
    let (a, b) = branches(spec, tail);
    a.max(b)
}

/// Element of `dh(w)`: `rho w - tau ((a-g)/g) s`, with `s` a supergradient of
/// `CVaR_{a-g}`.
///
/// `seed = None` uses the stable index tie-break; `Some(seed)` shuffles each
/// block of tied portfolio returns, drawing a random element of the
/// subdifferential reproducibly.
pub fn h_subgradient(spec: &ProblemSpec, w: &[f64], seed: Option<u64>) -> Result<Vec<f64>> {
    spec.check_weights(w)?;
    Ok(h_subgradient_unchecked(spec, w, seed))
}

pub(crate) fn h_subgradient_unchecked(spec: &ProblemSpec, w: &[f64], seed: Option<u64>) -> Vec<f64> {
    let set = &*spec.scenarios;
    let p = set.probabilities();
    let returns = set.returns_unchecked(w);
    let index = match seed {
        None => risk::tail_index_of(&returns, p, spec.alpha),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            risk::tail_index_shuffled(&returns, p, spec.alpha, &mut rng)
        }
    };
    let cut = risk::LowerCut::new(&index, p, spec.gamma, spec.alpha - spec.gamma);
    let s = risk::weighted_rows(set, &cut.weights(&index, p));
    let scale = spec.tau * spec.kappa_lower();
    w.iter()
        .zip(&s)
        .map(|(wi, si)| spec.rho * wi - scale * si)
        .collect()
}

/// Which piece of `g`'s max is active at `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveBranch {
    /// The upper-level CVaR piece (VaR below the threshold).
    Upper,
    /// The lower-level CVaR piece (VaR above the threshold).
    Lower,
    /// Both pieces tie (VaR exactly at the threshold).
    Both,
}

/// Element of `dg(w) = grad psi + grad f - tau dzeta(w)`.
///
/// The active piece is decided by the difference of the two pieces, which is
/// `r_min - VaR` while `gamma` is below the boundary mass at `w`. At equality
/// the midpoint of the two extreme elements is returned.
pub fn g_subgradient(spec: &ProblemSpec, w: &[f64]) -> Result<Vec<f64>> {
    spec.check_weights(w)?;
    Ok(g_subgradient_parts(spec, w).0)
}

pub(crate) fn g_subgradient_parts(spec: &ProblemSpec, w: &[f64]) -> (Vec<f64>, ActiveBranch) {
    let set = &*spec.scenarios;
    let p = set.probabilities();
    let returns = set.returns_unchecked(w);
    let index = risk::tail_index_of(&returns, p, spec.alpha);
    let var = returns[index.boundary()];
    let upper = || {
        let s = risk::weighted_rows(set, &risk::tail_weights(&index, p, index.epsilon, spec.alpha));
        s.into_iter().map(|x| spec.kappa_upper() * x).collect::<Vec<_>>()
    };
    let cut = risk::LowerCut::new(&index, p, spec.gamma, spec.alpha - spec.gamma);
    let lower = || {
        let s = risk::weighted_rows(set, &cut.weights(&index, p));
        s.into_iter().map(|x| spec.kappa_lower() * x).collect::<Vec<_>>()
    };
    // With a shared boundary the difference of the pieces is r_min - VaR.
    let gap = if cut.shared {
        spec.r_min - var
    } else {
        let c_alpha = risk::tail_mean(&index, &returns, p, index.epsilon, spec.alpha);
        let c_lower = cut.mean(&index, &returns, p);
        (-spec.kappa_upper() * c_alpha + spec.r_min) + spec.kappa_lower() * c_lower
    };
    let (zeta, branch) = if gap > 0.0 {
        (upper(), ActiveBranch::Upper)
    } else if gap < 0.0 {
        (lower(), ActiveBranch::Lower)
    } else {
        let (a, b) = (upper(), lower());
        (
            a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect(),
            ActiveBranch::Both,
        )
    };
    let grad = w
        .iter()
        .zip(&spec.mean)
        .zip(&zeta)
        .map(|((wi, mi), zi)| spec.rho * wi - mi - spec.tau * zi)
        .collect();
    (grad, branch)
}

/// `VaR(w) >= r_min - feas_tol`.
pub fn feasibility_check(spec: &ProblemSpec, w: &[f64], feas_tol: f64) -> Result<bool> {
    spec.check_weights(w)?;
    let var = risk::discrete_var(&spec.scenarios, w, spec.alpha)?;
    Ok(var >= spec.r_min - feas_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScenarioSet;
    use rand::Rng;

    fn spec_from(rows: &[Vec<f64>], alpha: f64, r_min: f64, tau: f64, rho: f64) -> ProblemSpec {
        let set = Arc::new(ScenarioSet::from_rows(rows, None, "t").unwrap());
        ProblemSpec::new(set, alpha, None, r_min, tau, rho).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, s: usize, n: usize) -> Vec<Vec<f64>> {
        (0..s)
            .map(|_| (0..n).map(|_| rng.random_range(0.85..1.15)).collect())
            .collect()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        w
    }

    #[test]
    fn loss_cases() {
        let spec = spec_from(&[vec![1.0, 1.0], vec![1.0, 1.0]], 0.1, 0.9, 1.0, 1.0);
        assert!((empirical_loss(&spec, &[0.3, 0.7]).unwrap() + 1.0).abs() < 1e-15);
        let spec = spec_from(&[vec![1.2], vec![0.9], vec![1.05]], 0.1, 0.9, 1.0, 1.0);
        assert!((empirical_loss(&spec, &[1.0]).unwrap() + 1.05).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = random_rows(&mut rng, 4, 3);
        let spec = spec_from(&rows, 0.3, 0.9, 1.0, 1.0);
        let w = random_simplex(&mut rng, 3);
        let direct: f64 = -rows
            .iter()
            .map(|r| 0.25 * (r[0] * w[0] + r[1] * w[1] + r[2] * w[2]))
            .sum::<f64>();
        assert!((empirical_loss(&spec, &w).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn phi_penalty_branches() {
        let rows = vec![vec![0.95], vec![1.0], vec![1.1]];
        // alpha = 0.1: boundary is the smallest scenario, VaR = 0.95.
        let spec = spec_from(&rows, 0.1, 0.9, 10.0, 1.0);
        let v = phi(&spec, &[1.0]).unwrap();
        assert_eq!(v.penalty_term, 0.0);
        assert_eq!(v.phi, v.expected_return_term);
        assert!(v.feasible);

        let spec = spec_from(&rows, 0.1, 0.96, 10.0, 1.0);
        let v = phi(&spec, &[1.0]).unwrap();
        assert!((v.penalty_term - 0.01).abs() < 1e-12);
        assert!((v.phi - (v.expected_return_term + 0.1)).abs() < 1e-12);
        assert!(!v.feasible);

        let mut spec = spec;
        spec.tau = 0.0;
        let v = phi(&spec, &[1.0]).unwrap();
        assert_eq!(v.phi, v.expected_return_term);
    }

    #[test]
    fn decomposition_and_rho_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_rows(&mut rng, 30, 4);
        let spec = spec_from(&rows, 0.1, 0.97, 3.0, 0.7);
        let spec10 = spec.with_penalty(3.0, 7.0);
        for _ in 0..50 {
            let w = random_simplex(&mut rng, 4);
            let p = phi(&spec, &w).unwrap().phi;
            let d = g_value(&spec, &w).unwrap() - h_value(&spec, &w).unwrap();
            let d10 = g_value(&spec10, &w).unwrap() - h_value(&spec10, &w).unwrap();
            assert!((d - p).abs() < 1e-9);
            assert!((d10 - p).abs() < 1e-9);
        }
    }

    #[test]
    fn g_and_h_strongly_convex_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_rows(&mut rng, 25, 3);
        let uniform = spec_from(&rows, 0.1, 0.98, 2.0, 0.5);
        // uneven masses move the boundary mass below gamma at some points
        let raw: Vec<f64> = (0..25).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs = raw.iter().map(|p| p / total).collect();
        let set = Arc::new(ScenarioSet::from_rows(&rows, Some(probs), "t").unwrap());
        let uneven = ProblemSpec::new(set, 0.1, None, 0.98, 2.0, 0.5).unwrap();
        for k in 0..600 {
            let spec = if k % 2 == 0 { &uniform } else { &uneven };
            let a = random_simplex(&mut rng, 3);
            let b = random_simplex(&mut rng, 3);
            let l: f64 = rng.random_range(0.0..1.0);
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| l * x + (1.0 - l) * y).collect();
            let dist2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            let slack = 0.5 * spec.rho * l * (1.0 - l) * dist2;
            for f in [g_value, h_value] {
                let lhs = f(spec, &m).unwrap();
                let rhs = l * f(spec, &a).unwrap() + (1.0 - l) * f(spec, &b).unwrap() - slack;
                assert!(lhs <= rhs + 1e-10, "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn h_subgradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = random_rows(&mut rng, 40, 3);
        let spec = spec_from(&rows, 0.1, 0.97, 2.0, 0.5);
        let w = random_simplex(&mut rng, 3);
        let u = h_subgradient(&spec, &w, None).unwrap();
        let step = 1e-7;
        for i in 0..3 {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[i] += step;
            dn[i] -= step;
            let fd = (h_value(&spec, &up).unwrap() - h_value(&spec, &dn).unwrap()) / (2.0 * step);
            assert!((fd - u[i]).abs() < 1e-6, "{fd} vs {}", u[i]);
        }
    }

    #[test]
    fn g_subgradient_matches_finite_differences_when_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = random_rows(&mut rng, 40, 3);
        let spec = spec_from(&rows, 0.1, 0.5, 2.0, 0.5);
        let w = random_simplex(&mut rng, 3);
        assert!(phi(&spec, &w).unwrap().var > spec.r_min);
        let gs = g_subgradient(&spec, &w).unwrap();
        let step = 1e-7;
        for i in 0..3 {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[i] += step;
            dn[i] -= step;
            let fd = (g_value(&spec, &up).unwrap() - g_value(&spec, &dn).unwrap()) / (2.0 * step);
            assert!((fd - gs[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_assets_give_symmetric_subgradients() {
        let rows = vec![vec![0.9, 0.9], vec![1.1, 1.1], vec![1.0, 1.0], vec![1.05, 1.05]];
        let spec = spec_from(&rows, 0.3, 0.95, 1.0, 0.5);
        let w = [0.5, 0.5];
        let u = h_subgradient(&spec, &w, None).unwrap();
        assert!((u[0] - u[1]).abs() < 1e-14);
        let g = g_subgradient(&spec, &w).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-14);
        // Tail mean column: k = 1 (0.9 with mass 0.25), boundary 1.0 with mass 0.05 - gamma.
        let gamma = spec.gamma;
        let lower = 0.3 - gamma;
        let s = (0.25 * 0.9 + (0.05 - gamma) * 1.0) / lower;
        let expect = 0.5 * 0.5 - 1.0 * spec.kappa_lower() * s;
        assert!((u[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn tied_h_subgradients_satisfy_subgradient_inequality() {
        // Duplicate scenarios force ties for every w.
        let base = vec![
            vec![0.92, 1.01, 0.99],
            vec![1.03, 0.94, 1.00],
            vec![1.10, 1.05, 0.97],
            vec![0.99, 1.08, 1.12],
            vec![1.01, 0.97, 0.95],
        ];
        let rows: Vec<Vec<f64>> = base.iter().chain(base.iter()).cloned().collect();
        let spec = spec_from(&rows, 0.25, 0.96, 1.5, 0.5);
        let w = [0.3, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h0 = h_value(&spec, &w).unwrap();
        for seed in [17u64, 99] {
            let u = h_subgradient(&spec, &w, Some(seed)).unwrap();
            assert_eq!(u, h_subgradient(&spec, &w, Some(seed)).unwrap());
            for _ in 0..200 {
                let v = random_simplex(&mut rng, 3);
                let lin: f64 = u.iter().zip(v.iter().zip(&w)).map(|(a, (b, c))| a * (b - c)).sum();
                assert!(h_value(&spec, &v).unwrap() >= h0 + lin - 1e-10);
            }
        }
    }

    #[test]
    fn equality_branch_lies_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows = random_rows(&mut rng, 20, 3);
        let set = Arc::new(ScenarioSet::from_rows(&rows, None, "eq").unwrap());
        let w = [0.2, 0.5, 0.3];
        let var = risk::discrete_var(&set, &w, 0.1).unwrap();
        let spec = ProblemSpec::new(set, 0.1, None, var, 2.0, 0.5).unwrap();
        let (gs, branch) = g_subgradient_parts(&spec, &w);
        assert_eq!(branch, ActiveBranch::Both);
        let mut above = spec.clone();
        above.r_min = var + 1.0;
        let mut below = spec.clone();
        below.r_min = var - 1.0;
        let (ga, ba) = g_subgradient_parts(&above, &w);
        let (gb, bb) = g_subgradient_parts(&below, &w);
        assert_eq!((ba, bb), (ActiveBranch::Upper, ActiveBranch::Lower));
        // gs = t ga + (1 - t) gb with one t in [0, 1] for all coordinates.
        let t = (gs[0] - gb[0]) / (ga[0] - gb[0]);
        assert!((0.0..=1.0).contains(&t));
        for i in 0..3 {
            assert!((t * ga[i] + (1.0 - t) * gb[i] - gs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn feasibility_boundaries() {
        let rows = vec![vec![0.95], vec![1.0], vec![1.1]];
        let spec = spec_from(&rows, 0.1, 0.95, 1.0, 1.0);
        assert!(feasibility_check(&spec, &[1.0], 1e-6).unwrap());
        let mut s2 = spec.clone();
        s2.r_min = 0.95 + 2e-6;
        assert!(!feasibility_check(&s2, &[1.0], 1e-6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows = random_rows(&mut rng, 15, 3);
        let spec = spec_from(&rows, 0.2, 0.97, 1.0, 1.0);
        for _ in 0..50 {
            let w = random_simplex(&mut rng, 3);
            let mut r: Vec<f64> = rows.iter().map(|x| simplex::dot(x, &w)).collect();
            r.sort_by(f64::total_cmp);
            // 15 scenarios, alpha 0.2 = 3/15: boundary is the third smallest.
            assert_eq!(feasibility_check(&spec, &w, 0.0).unwrap(), r[2] >= 0.97);
        }
    }

    #[test]
    fn surrogate_majorizes_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = random_rows(&mut rng, 30, 3);
        let spec = spec_from(&rows, 0.1, 0.97, 2.0, 0.3);
        for _ in 0..20 {
            let wk = random_simplex(&mut rng, 3);
            let u = h_subgradient(&spec, &wk, None).unwrap();
            let hk = h_value(&spec, &wk).unwrap();
            for _ in 0..50 {
                let w = random_simplex(&mut rng, 3);
                let lin: f64 = u.iter().zip(w.iter().zip(&wk)).map(|(a, (b, c))| a * (b - c)).sum();
                let surrogate = g_value(&spec, &w).unwrap() - (hk + lin);
                assert!(surrogate >= phi(&spec, &w).unwrap().phi - 1e-9);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let set = Arc::new(
            ScenarioSet::from_rows(&[vec![1.0], vec![1.1], vec![0.9], vec![1.2]], None, "v").unwrap(),
        );
        // alpha 0.1, S = 4: epsilon = 0.1.
        assert!(ProblemSpec::new(set.clone(), 0.1, Some(0.1), 0.9, 1.0, 1.0).is_err());
        assert!(ProblemSpec::new(set.clone(), 0.1, Some(0.05), 0.9, 0.0, 1.0).is_err());
        assert!(ProblemSpec::new(set.clone(), 0.1, Some(0.05), 0.9, 1.0, -1.0).is_err());
        assert!(ProblemSpec::new(set.clone(), 1.5, None, 0.9, 1.0, 1.0).is_err());
        let ok = ProblemSpec::new(set, 0.1, None, 0.9, 1.0, 1.0).unwrap();
        assert!((ok.gamma - 0.05).abs() < 1e-15);
    }
}
