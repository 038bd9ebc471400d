//! Discrete CVaR / VaR on scenario returns.
//!
//! Portfolio returns `r_j = w'x_j` are sorted ascending. The boundary scenario
//! is the `(k+1)`-th smallest return, where `k` is the largest count whose
//! cumulative probability stays strictly below the level `alpha`, and
//! `epsilon = alpha - sum_{j<=k} p_(j)` is the mass it carries inside the tail:
//!
//! ```text
//! CVaR_a(w) = (1/a) * sum_{j<=k} p_(j) r_(j) + (eps/a) * r_(k+1)
//! VaR_a(w)  = r_(k+1) = (a/g) CVaR_a(w) - ((a-g)/g) CVaR_{a-g}(w),   0 < g < eps
//! ```
//!
//! Both CVaR levels of the difference share one sort, so the lower level uses
//! the same `k` and boundary mass `eps - g`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ScenarioSet;
use crate::error::{Error, Result};

/// Cumulative probability within this distance of `alpha` counts as reaching it.
/// Keeps uniform grids like `alpha * S` integral from producing a spurious
/// boundary mass of order 1e-17.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailIndex {
    /// Scenarios strictly inside the tail.
    pub k: usize,
    /// Mass of the boundary scenario inside the tail, in `(0, alpha]`.
    pub epsilon: f64,
    /// Scenario indices sorted by ascending portfolio return.
    pub order: Vec<usize>,
}

impl TailIndex {
    /// Original index of the boundary scenario.
    pub fn boundary(&self) -> usize {
        self.order[self.k]
    }
}

/// The two CVaR levels `alpha` and `alpha - gamma` of the VaR decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcLevels {
    pub alpha: f64,
    pub gamma: f64,
}

impl DcLevels {
    pub fn new(alpha: f64, gamma: f64, epsilon: f64) -> Result<Self> {
        check_level(alpha)?;
        if !(gamma > 0.0 && gamma < epsilon) {
            return Err(Error::invalid(format!(
                "gamma = {gamma} must lie strictly inside (0, {epsilon})"
            )));
        }
        Ok(Self { alpha, gamma })
    }

    /// `gamma = epsilon / 2` for the given probabilities.
    pub fn with_default_gamma(probabilities: &[f64], alpha: f64) -> Result<Self> {
        let gamma = default_gamma(probabilities, alpha)?;
        Ok(Self { alpha, gamma })
    }

    pub fn lower(&self) -> f64 {
        self.alpha - self.gamma
    }
}

pub(crate) fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("level {alpha} must lie in (0, 1)")))
    }
}

/// Half the boundary mass of the probabilities taken in their stored order.
///
/// With uniform probabilities the boundary mass does not depend on the
/// ordering, so the result is valid for every weight vector. For non-uniform
/// probabilities it is only guaranteed for orderings with the same boundary
/// mass as the stored one.
pub fn default_gamma(probabilities: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    let order: Vec<usize> = (0..probabilities.len()).collect();
    let (_, eps) = cut(probabilities, &order, alpha);
    Ok(eps / 2.0)
}

/// Boundary mass for uniform probabilities over `s` scenarios.
pub fn uniform_epsilon(s: usize, alpha: f64) -> f64 {
    let p = vec![1.0 / s as f64; s];
    let order: Vec<usize> = (0..s).collect();
    cut(&p, &order, alpha).1
}

fn cut(probabilities: &[f64], order: &[usize], alpha: f64) -> (usize, f64) {
    let mut cum = 0.0;
    let mut k = 0;
    for &j in order {
        let next = cum + probabilities[j];
        if next < alpha - MASS_TOL {
            cum = next;
            k += 1;
        } else {
            break;
        }
    }
    // k < S always: the total mass 1 exceeds alpha.
    let k = k.min(order.len() - 1);
    (k, alpha - cum)
}

/// Stable ascending order of `returns`; ties keep original index order.
pub(crate) fn ascending_order(returns: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]));
    order
}

/// Shuffle each block of exactly tied returns in place.
pub(crate) fn shuffle_ties<R: Rng + ?Sized>(order: &mut [usize], returns: &[f64], rng: &mut R) {
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && returns[order[end]] == returns[order[start]] {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].shuffle(rng);
        }
        start = end;
    }
}

pub(crate) fn tail_index_of(returns: &[f64], probabilities: &[f64], alpha: f64) -> TailIndex {
    let order = ascending_order(returns);
    let (k, epsilon) = cut(probabilities, &order, alpha);
    TailIndex { k, epsilon, order }
}

pub(crate) fn tail_index_shuffled<R: Rng + ?Sized>(
    returns: &[f64],
    probabilities: &[f64],
    alpha: f64,
    rng: &mut R,
) -> TailIndex {
    let mut order = ascending_order(returns);
    shuffle_ties(&mut order, returns, rng);
    let (k, epsilon) = cut(probabilities, &order, alpha);
    TailIndex { k, epsilon, order }
}

/// Tail-weighted sum over the sorted returns with boundary mass `boundary_mass`,
/// divided by `level`.
pub(crate) fn tail_mean(
    index: &TailIndex,
    returns: &[f64],
    probabilities: &[f64],
    boundary_mass: f64,
    level: f64,
) -> f64 {
    tail_mean_at(&index.order, index.k, returns, probabilities, boundary_mass, level)
}

fn tail_mean_at(order: &[usize], k: usize, returns: &[f64], probabilities: &[f64], mass: f64, level: f64) -> f64 {
    let inner: f64 = order[..k].iter().map(|&j| probabilities[j] * returns[j]).sum();
    (inner + mass * returns[order[k]]) / level
}

/// Scenario weights `q` with `q' r = CVaR`: `p_j / level` inside the tail,
/// `boundary_mass / level` on the boundary scenario, zero elsewhere.
pub(crate) fn tail_weights(
    index: &TailIndex,
    probabilities: &[f64],
    boundary_mass: f64,
    level: f64,
) -> Vec<(usize, f64)> {
    tail_weights_at(&index.order, index.k, probabilities, boundary_mass, level)
}

fn tail_weights_at(order: &[usize], k: usize, probabilities: &[f64], mass: f64, level: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = order[..k].iter().map(|&j| (j, probabilities[j] / level)).collect();
    out.push((order[k], mass / level));
    out
}

/// Cut of the lower level `alpha - gamma` on the order of an `alpha` cut.
///
/// While `gamma` is below the boundary mass both levels share the boundary
/// scenario. Otherwise the lower tail ends earlier in the same order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LowerCut {
    /// Both levels end at the same boundary scenario.
    pub shared: bool,
    pub k: usize,
    pub mass: f64,
    pub level: f64,
}

impl LowerCut {
    pub(crate) fn new(index: &TailIndex, probabilities: &[f64], gamma: f64, level: f64) -> Self {
        let rest = index.epsilon - gamma;
        let shared = rest > MASS_TOL;
        let (k, mass) = if shared {
            (index.k, rest)
        } else {
            cut(probabilities, &index.order, level)
        };
        Self { shared, k, mass, level }
    }

    pub(crate) fn mean(&self, index: &TailIndex, returns: &[f64], probabilities: &[f64]) -> f64 {
        tail_mean_at(&index.order, self.k, returns, probabilities, self.mass, self.level)
    }

    pub(crate) fn weights(&self, index: &TailIndex, probabilities: &[f64]) -> Vec<(usize, f64)> {
        tail_weights_at(&index.order, self.k, probabilities, self.mass, self.level)
    }
}

pub(crate) fn weighted_rows(scenarios: &ScenarioSet, weights: &[(usize, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; scenarios.n_assets()];
    for &(j, q) in weights {
        for (o, x) in out.iter_mut().zip(scenarios.row(j)) {
            *o += q * x;
        }
    }
    out
}

/// CVaR at both decomposition levels evaluated on one sort.
#[derive(Debug, Clone)]
pub struct DcTail {
    pub index: TailIndex,
    pub returns: Vec<f64>,
    pub cvar_alpha: f64,
    pub cvar_lower: f64,
}

impl DcTail {
    pub fn evaluate(scenarios: &ScenarioSet, weights: &[f64], levels: DcLevels) -> Self {
        let returns = scenarios.returns_unchecked(weights);
        let index = tail_index_of(&returns, scenarios.probabilities(), levels.alpha);
        Self::from_index(scenarios, returns, index, levels)
    }

    pub(crate) fn from_index(
        scenarios: &ScenarioSet,
        returns: Vec<f64>,
        index: TailIndex,
        levels: DcLevels,
    ) -> Self {
        let p = scenarios.probabilities();
        let cvar_alpha = tail_mean(&index, &returns, p, index.epsilon, levels.alpha);
        let cvar_lower = LowerCut::new(&index, p, levels.gamma, levels.lower()).mean(&index, &returns, p);
        Self {
            index,
            returns,
            cvar_alpha,
            cvar_lower,
        }
    }

    pub fn var(&self) -> f64 {
        self.returns[self.index.boundary()]
    }
}

fn check_inputs(scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<()> {
    check_level(alpha)?;
    if weights.len() != scenarios.n_assets() {
        return Err(Error::shape(format!(
            "weights have length {}, scenario set has {} assets",
            weights.len(),
            scenarios.n_assets()
        )));
    }
    Ok(())
}

pub fn tail_index(scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<TailIndex> {
    check_inputs(scenarios, weights, alpha)?;
    let returns = scenarios.returns_unchecked(weights);
    Ok(tail_index_of(&returns, scenarios.probabilities(), alpha))
}

pub fn discrete_cvar(scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<f64> {
    check_inputs(scenarios, weights, alpha)?;
    let returns = scenarios.returns_unchecked(weights);
    let p = scenarios.probabilities();
    let index = tail_index_of(&returns, p, alpha);
    Ok(tail_mean(&index, &returns, p, index.epsilon, alpha))
}

/// Boundary-scenario return `r_(k+1)`.
///
/// When several scenarios tie at the boundary the value is still well defined,
/// although which scenario carries it is not.
pub fn discrete_var(scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<f64> {
    check_inputs(scenarios, weights, alpha)?;
    let returns = scenarios.returns_unchecked(weights);
    let index = tail_index_of(&returns, scenarios.probabilities(), alpha);
    Ok(returns[index.boundary()])
}

/// Element of the superdifferential of the (concave) CVaR at `weights`.
///
/// Under ties at the boundary the stable index tie-break picks the element.
pub fn cvar_supergradient(scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_inputs(scenarios, weights, alpha)?;
    let returns = scenarios.returns_unchecked(weights);
    let p = scenarios.probabilities();
    let index = tail_index_of(&returns, p, alpha);
    Ok(weighted_rows(
        scenarios,
        &tail_weights(&index, p, index.epsilon, alpha),
    ))
}

/// Rockafellar-Uryasev form of the lower-tail mean:
/// `max_a { a - (1/alpha) sum_j p_j (a - r_j)^+ }`, maximised over the
/// scenario returns. Quadratic in the scenario count; used as an oracle.
pub fn ru_cvar(scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<f64> {
    check_inputs(scenarios, weights, alpha)?;
    let returns = scenarios.returns_unchecked(weights);
    let p = scenarios.probabilities();
    let best = returns
        .iter()
        .map(|&a| {
            let shortfall: f64 = returns
                .iter()
                .zip(p)
                .map(|(&r, &pj)| pj * (a - r).max(0.0))
                .sum();
            a - shortfall / alpha
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}
