//! Convex subproblem `min_{w in simplex} g(w) - u'w` as an epigraph QP.
//!
//! Variables are laid out as `[w (n), t, a1, a2, z1 (S), z2 (S)]`:
//!
//! ```text
//! min  (rho/2)|w|^2 + (-mean - u)'w + tau t
//! s.t. 1'w = 1,  w >= 0,  z1 >= 0,  z2 >= 0
//!      z1_j >= a1 - x_j'w,  z2_j >= a2 - x_j'w
//!      t >= -(a/g) a1 + (1/g) p'z1 + r_min
//!      t >= -((a-g)/g) a2 + (1/g) p'z2
//! ```
//!
//! The solver is a Mehrotra predictor-corrector interior point method. The
//! `z` block of the Newton system is diagonal and is eliminated, leaving a
//! dense system in `(dw, dt, da1, da2, dlambda_T1, dlambda_T2, dnu)`.

use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ScenarioSet;
use crate::error::{Error, Result};
use crate::objective::ProblemSpec;
use crate::risk::DcTail;
use crate::simplex;

pub const DEFAULT_TOL: f64 = 1e-8;

/// Weights below this are set to zero in the returned solution.
const SNAP: f64 = 1e-9;
const STEP_FRACTION: f64 = 0.995;
/// Iterations without a new best residual before giving up.
const STALL_ITERS: usize = 40;
/// Iterations continue towards `tol * REFINE` once `tol` is met; a residual
/// bound of `tol` on the objective only pins `y` down to about `sqrt(tol)`.
const REFINE: f64 = 1e-2;
const REFINE_STALL_ITERS: usize = 5;

#[derive(Debug, Clone)]
pub struct EpigraphQp {
    scenarios: Arc<ScenarioSet>,
    pub rho: f64,
    pub tau: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub r_min: f64,
    /// Linear cost on `w`: `-mean - u`.
    pub linear: Vec<f64>,
}

pub fn build_epigraph_qp(spec: &ProblemSpec, u: &[f64]) -> Result<EpigraphQp> {
    if u.len() != spec.n_assets() {
        return Err(Error::shape(format!(
            "u has length {}, problem has {} assets",
            u.len(),
            spec.n_assets()
        )));
    }
    let linear = spec
        .mean_returns()
        .iter().zip(u).map(|(m, ui)| -m - ui).collect();
    Ok(EpigraphQp {
        scenarios: spec.scenarios_arc().clone(),
        rho: spec.rho,
        tau: spec.tau,
        alpha: spec.alpha,
        gamma: spec.gamma,
        r_min: spec.r_min,
        linear,
    })
}

/// `Q, c, G, h, A, b` of `min 0.5 x'Qx + c'x s.t. Gx >= h, Ax = b`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl EpigraphQp {
    pub fn n_assets(&self) -> usize {
        self.scenarios.n_assets()
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.n_scenarios()
    }

    pub fn n_vars(&self) -> usize {
        self.n_assets() + 3 + 2 * self.n_scenarios()
    }

    pub fn n_ineq(&self) -> usize {
        self.n_assets() + 4 * self.n_scenarios() + 2
    }

    pub fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    /// `a/g` for level 0, `(a-g)/g` for level 1.
    fn kappa(&self, l: usize) -> f64 {
        if l == 0 {
            self.alpha / self.gamma
        } else {
            (self.alpha - self.gamma) / self.gamma
        }
    }

    /// `g(w) - u'w` evaluated directly from the scenario returns.
    pub fn reduced_objective(&self, w: &[f64]) -> f64 {
        let levels = crate::risk::DcLevels {
            alpha: self.alpha,
            gamma: self.gamma,
        };
        let tail = DcTail::evaluate(&self.scenarios, w, levels);
        let upper = -self.kappa(0) * tail.cvar_alpha + self.r_min;
        let lower = -self.kappa(1) * tail.cvar_lower;
        0.5 * self.rho * simplex::dot(w, w)
            + simplex::dot(&self.linear, w)
            + self.tau * upper.max(lower)
    }

    pub fn dense(&self) -> DenseQp {
        let n = self.n_assets();
        let s = self.n_scenarios();
        let nv = self.n_vars();
        let m = self.n_ineq();
        let p = self.scenarios.probabilities();
        let lay = Layout { n, s };

        let mut q = DMatrix::zeros(nv, nv);
        for i in 0..n {
            q[(i, i)] = self.rho;
        }
        let mut c = DVector::zeros(nv);
        for i in 0..n {
            c[i] = self.linear[i];
        }
        c[lay.t()] = self.tau;

        let mut g = DMatrix::zeros(m, nv);
        let mut h = DVector::zeros(m);
        for i in 0..n {
            g[(i, i)] = 1.0;
        }
        for l in 0..2 {
            for j in 0..s {
                g[(lay.row_b(l, j), lay.z(l, j))] = 1.0;
                let rc = lay.row_c(l, j);
                g[(rc, lay.z(l, j))] = 1.0;
                for (i, x) in self.scenarios.row(j).iter().enumerate() {
                    g[(rc, i)] = *x;
                }
                g[(rc, lay.a(l))] = -1.0;
                g[(lay.row_t(l), lay.z(l, j))] = -p[j] / self.gamma;
            }
            g[(lay.row_t(l), lay.t())] = 1.0;
            g[(lay.row_t(l), lay.a(l))] = self.kappa(l);
        }
        h[lay.row_t(0)] = self.r_min;

        let mut a = DMatrix::zeros(1, nv);
        for i in 0..n {
            a[(0, i)] = 1.0;
        }
        DenseQp {
            q,
            c,
            g,
            h,
            a,
            b: DVector::from_element(1, 1.0),
        }
    }

    /// Plain-text listing of the dense QP: each block is a header line
    /// (`name rows cols`) followed by its rows, space separated.
    pub fn write_listing<W: Write>(&self, mut out: W) -> io::Result<()> {
        let d = self.dense();
        writeln!(out, "# min 0.5 x'Qx + c'x  s.t.  Gx >= h, Ax = b")?;
        write_block(&mut out, "Q", &d.q)?;
        write_block(&mut out, "c", &DMatrix::from_row_slice(1, d.c.len(), d.c.as_slice()))?;
        write_block(&mut out, "G", &d.g)?;
        write_block(&mut out, "h", &DMatrix::from_row_slice(1, d.h.len(), d.h.as_slice()))?;
        write_block(&mut out, "A", &d.a)?;
        write_block(&mut out, "b", &DMatrix::from_row_slice(1, 1, d.b.as_slice()))?;
        Ok(())
    }

    /// `Gx` without the constant `h`.
    fn g_apply(&self, x: &[f64]) -> Vec<f64> {
        let lay = self.layout();
        let p = self.scenarios.probabilities();
        let mut out = vec![0.0; self.n_ineq()];
        out[..lay.n].copy_from_slice(&x[..lay.n]);
        let r = self.scenarios.returns_unchecked(&x[..lay.n]);
        for l in 0..2 {
            let a = x[lay.a(l)];
            let mut pz = 0.0;
            for j in 0..lay.s {
                let z = x[lay.z(l, j)];
                out[lay.row_b(l, j)] = z;
                out[lay.row_c(l, j)] = z + r[j] - a;
                pz += p[j] * z;
            }
            out[lay.row_t(l)] = x[lay.t()] + self.kappa(l) * a - pz / self.gamma;
        }
        out
    }

    /// `G'y`.
    fn gt_apply(&self, y: &[f64]) -> Vec<f64> {
        let lay = self.layout();
        let p = self.scenarios.probabilities();
        let mut out = vec![0.0; self.n_vars()];
        out[..lay.n].copy_from_slice(&y[..lay.n]);
        for l in 0..2 {
            let yt = y[lay.row_t(l)];
            let mut sum_c = 0.0;
            for j in 0..lay.s {
                let yc = y[lay.row_c(l, j)];
                sum_c += yc;
                for (o, x) in out[..lay.n].iter_mut().zip(self.scenarios.row(j)) {
                    *o += yc * x;
                }
                out[lay.z(l, j)] = y[lay.row_b(l, j)] + yc - p[j] / self.gamma * yt;
            }
            out[lay.t()] += yt;
            out[lay.a(l)] = -sum_c + self.kappa(l) * yt;
        }
        out
    }

    fn layout(&self) -> Layout {
        Layout {
            n: self.n_assets(),
            s: self.n_scenarios(),
        }
    }
}

fn write_block<W: Write>(out: &mut W, name: &str, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    s: usize,
}

impl Layout {
    fn t(&self) -> usize {
        self.n
    }
    fn a(&self, l: usize) -> usize {
        self.n + 1 + l
    }
    fn z(&self, l: usize, j: usize) -> usize {
        self.n + 3 + l * self.s + j
    }
    fn row_b(&self, l: usize, j: usize) -> usize {
        self.n + l * self.s + j
    }
    fn row_c(&self, l: usize, j: usize) -> usize {
        self.n + 2 * self.s + l * self.s + j
    }
    fn row_t(&self, l: usize) -> usize {
        self.n + 4 * self.s + l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

/// Multipliers of the epigraph QP, signed so that at an optimum
/// `rho w - mean - sum_j (omega1_j + omega2_j) x_j - u - pi + nu 1 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    /// Bounds `w >= 0`.
    pub pi: Vec<f64>,
    /// Simplex equality.
    pub nu: f64,
    /// The two epigraph rows on `t`.
    pub lambda_t: [f64; 2],
    /// Rows `z_l,j + x_j'w - a_l >= 0`, per level.
    pub omega: [Vec<f64>; 2],
}

impl Multipliers {
    /// Element of the subdifferential of `g` certified by these multipliers.
    pub fn g_element(&self, spec: &ProblemSpec, w: &[f64]) -> Vec<f64> {
        let set = spec.scenarios();
        let mut out: Vec<f64> = w
            .iter()
            .zip(spec.mean_returns())
            .map(|(wi, m)| spec.rho * wi - m)
            .collect();
        for j in 0..set.n_scenarios() {
            let q = self.omega[0][j] + self.omega[1][j];
            if q != 0.0 {
                for (o, x) in out.iter_mut().zip(set.row(j)) {
                    *o -= q * x;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub y: Vec<f64>,
    /// QP objective at `y` with `t, a, z` at their optimal values for `y`,
    /// which equals `g(y) - u'y`.
    pub objective: f64,
    /// Epigraph variables as returned by the interior point iterations.
    pub t: f64,
    pub a: [f64; 2],
    pub multipliers: Multipliers,
    /// Max of stationarity, primal infeasibility, per-pair complementarity
    /// and total duality gap `s'lambda`; dual quantities are divided by
    /// `1 + max(|c|_inf, tau)`.
    pub kkt_residual: f64,
    pub status: SubproblemStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    pub tol: f64,
    /// Defaults to `20 (n + 2S + 3)`.
    pub max_iter: Option<usize>,
    /// Weights to center the starting point on.
    pub start: Option<Vec<f64>>,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            start: None,
        }
    }
}

pub fn solve_subproblem(qp: &EpigraphQp, tol: f64) -> Result<SubproblemSolution> {
    solve_subproblem_with(
        qp,
        &IpmOptions {
            tol,
            ..IpmOptions::default()
        },
    )
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    /// Multiplier of `1'w = 1` in the Lagrangian `... - nu (1'w - 1)`.
    nu: f64,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    re: f64,
    kkt: f64,
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dlam: Vec<f64>,
    dnu: f64,
}

pub fn solve_subproblem_with(qp: &EpigraphQp, opts: &IpmOptions) -> Result<SubproblemSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("subproblem tolerance must be positive"));
    }
    let lay = qp.layout();
    let max_iter = opts
        .max_iter
        .unwrap_or(20 * (lay.n + 2 * lay.s + 3))
        .max(1);
    // Work on the cost divided by its magnitude so the multipliers stay of
    // order one for large penalties.
    let scale = qp
        .linear
        .iter()
        .fold(qp.tau.max(1.0), |m, c| m.max(c.abs()));
    let original = qp;
    let scaled = EpigraphQp {
        rho: qp.rho / scale,
        tau: qp.tau / scale,
        linear: qp.linear.iter().map(|c| c / scale).collect(),
        ..qp.clone()
    };
    let qp = &scaled;
    let mut st = initial_state(qp, opts.start.as_deref());
    let mut best: Option<(f64, State)> = None;
    let mut best_iter = 0;
    let mut status = SubproblemStatus::MaxIter;
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        let res = residuals(qp, &st);
        if !res.kkt.is_finite() {
            status = SubproblemStatus::NumericalFailure;
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| res.kkt < *b) {
            best = Some((res.kkt, st.clone()));
            best_iter = it;
        }
        if res.kkt <= opts.tol * REFINE {
            status = SubproblemStatus::Optimal;
            break;
        }
        let met = best.as_ref().is_some_and(|(b, _)| *b <= opts.tol);
        if it - best_iter > if met { REFINE_STALL_ITERS } else { STALL_ITERS } {
            break;
        }
        let Some(sys) = NewtonSystem::factor(qp, &st) else {
            status = SubproblemStatus::NumericalFailure;
            break;
        };
        let m = st.s.len() as f64;
        let mu = simplex::dot(&st.s, &st.lam) / m;

        let rc_aff: Vec<f64> = st.s.iter().zip(&st.lam).map(|(s, l)| s * l).collect();
        let aff = sys.solve(qp, &st, &res, &rc_aff);
        let a_aff = max_step(&st, &aff).min(1.0);
        let mu_aff = st
            .s
            .iter()
            .zip(&aff.ds)
            .zip(st.lam.iter().zip(&aff.dlam))
            .map(|((s, ds), (l, dl))| (s + a_aff * ds) * (l + a_aff * dl))
            .sum::<f64>()
            / m;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let rc: Vec<f64> = (0..st.s.len())
            .map(|i| st.s[i] * st.lam[i] + aff.ds[i] * aff.dlam[i] - sigma * mu)
            .collect();
        let dir = sys.solve(qp, &st, &res, &rc);
        let step = (STEP_FRACTION * max_step(&st, &dir)).min(1.0);
        if !(step > 0.0) || !step.is_finite() {
            status = SubproblemStatus::NumericalFailure;
            break;
        }
        for (x, d) in st.x.iter_mut().zip(&dir.dx) {
            *x += step * d;
        }
        for (s, d) in st.s.iter_mut().zip(&dir.ds) {
            *s += step * d;
        }
        for (l, d) in st.lam.iter_mut().zip(&dir.dlam) {
            *l += step * d;
        }
        st.nu += step * dir.dnu;
    }

    if status == SubproblemStatus::MaxIter {
        let res = residuals(qp, &st);
        if res.kkt.is_finite() && best.as_ref().is_none_or(|(b, _)| res.kkt < *b) {
            best = Some((res.kkt, st.clone()));
        }
    }
    // Stalling or breaking down during refinement still leaves a point within `tol`.
    if best.as_ref().is_some_and(|(b, _)| *b <= opts.tol) {
        status = SubproblemStatus::Optimal;
    }
    let Some((kkt, st)) = best else {
        return Err(Error::Domain("subproblem produced no finite iterate".into()));
    };
    Ok(extract(original, &st, scale, kkt, status, iterations))
}

fn initial_state(qp: &EpigraphQp, start: Option<&[f64]>) -> State {
    let lay = qp.layout();
    let n = lay.n;
    let uni = 1.0 / n as f64;
    let w: Vec<f64> = match start {
        Some(w0) if w0.len() == n => w0.iter().map(|x| 0.5 * x.max(0.0) + 0.5 * uni).collect(),
        _ => vec![uni; n],
    };
    let mut w = w;
    simplex::renormalize(&mut w);
    let r = qp.scenarios.returns_unchecked(&w);
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    let p = qp.scenarios.probabilities();
    let q_idx = ((qp.alpha * lay.s as f64) as usize).min(lay.s - 1);
    let a0 = sorted[q_idx];

    let mut x = vec![0.0; qp.n_vars()];
    x[..n].copy_from_slice(&w);
    let mut pz = [0.0; 2];
    for l in 0..2 {
        x[lay.a(l)] = a0;
        for j in 0..lay.s {
            let z = (a0 - r[j]).max(0.0) + 0.1;
            x[lay.z(l, j)] = z;
            pz[l] += p[j] * z;
        }
    }
    let need0 = -qp.kappa(0) * a0 + pz[0] / qp.gamma + qp.r_min;
    let need1 = -qp.kappa(1) * a0 + pz[1] / qp.gamma;
    x[lay.t()] = need0.max(need1) + 1.0;

    let mut s = qp.g_apply(&x);
    s[lay.row_t(0)] -= qp.r_min;
    for v in s.iter_mut() {
        *v = v.max(1.0);
    }

    // Dual point satisfying the t, a and z stationarity rows exactly.
    let mut lam = vec![1.0; s.len()];
    let mut xi: Vec<f64> = (0..n).map(|i| qp.rho * w[i] + qp.linear[i]).collect();
    for l in 0..2 {
        let lt = 0.5 * qp.tau;
        lam[lay.row_t(l)] = lt;
        for j in 0..lay.s {
            let om = p[j] * qp.kappa(l) * lt;
            lam[lay.row_c(l, j)] = om;
            lam[lay.row_b(l, j)] = p[j] * lt / qp.gamma - om;
            for (o, x) in xi.iter_mut().zip(qp.scenarios.row(j)) {
                *o -= om * x;
            }
        }
    }
    let nu = xi.iter().fold(f64::INFINITY, |m, v| m.min(*v)) - 1.0;
    for i in 0..n {
        lam[i] = xi[i] - nu;
    }
    State { x, s, lam, nu }
}

fn residuals(qp: &EpigraphQp, st: &State) -> Residuals {
    let lay = qp.layout();
    let gt = qp.gt_apply(&st.lam);
    let mut rd: Vec<f64> = gt.iter().map(|v| -v).collect();
    for i in 0..lay.n {
        rd[i] += qp.rho * st.x[i] + qp.linear[i] - st.nu;
    }
    rd[lay.t()] += qp.tau;

    let mut rp = qp.g_apply(&st.x);
    rp[lay.row_t(0)] -= qp.r_min;
    for (r, s) in rp.iter_mut().zip(&st.s) {
        *r -= s;
    }
    let re = st.x[..lay.n].iter().sum::<f64>() - 1.0;

    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let c_scale = 1.0 + inf(&qp.linear).max(qp.tau);
    let stat = inf(&rd) / c_scale;
    let prim = inf(&rp).max(re.abs()) / (1.0 + qp.r_min.abs());
    let comp = st
        .s
        .iter()
        .zip(&st.lam)
        .fold(0.0_f64, |m, (s, l)| m.max((s * l).abs()))
        / c_scale;
    let gap = simplex::dot(&st.s, &st.lam).abs() / c_scale;
    Residuals {
        rd,
        rp,
        re,
        kkt: stat.max(prim).max(comp).max(gap),
    }
}

fn max_step(st: &State, dir: &Direction) -> f64 {
    let mut a = f64::INFINITY;
    for (v, d) in st.s.iter().zip(&dir.ds).chain(st.lam.iter().zip(&dir.dlam)) {
        if *d < 0.0 {
            a = a.min(-v / d);
        }
    }
    a
}

/// Factored reduced Newton system at one iterate.
struct NewtonSystem {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// `lambda_C / s_C` per level.
    d_c: [Vec<f64>; 2],
    /// `lambda_B / s_B + lambda_C / s_C`.
    delta: [Vec<f64>; 2],
}

impl NewtonSystem {
    fn factor(qp: &EpigraphQp, st: &State) -> Option<Self> {
        let lay = qp.layout();
        let n = lay.n;
        let p = qp.scenarios.probabilities();
        let g = qp.gamma;
        let dim = n + 6;
        let (it, ia, il, inu) = (n, [n + 1, n + 2], [n + 3, n + 4], n + 5);
        let d = |row: usize| st.lam[row] / st.s[row];

        let mut k = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            k[(i, i)] = qp.rho + d(i);
            k[(i, inu)] = -1.0;
            k[(inu, i)] = 1.0;
        }
        let mut d_c = [vec![0.0; lay.s], vec![0.0; lay.s]];
        let mut delta = [vec![0.0; lay.s], vec![0.0; lay.s]];
        for l in 0..2 {
            let mut cx = vec![0.0; n];
            let mut mpx = vec![0.0; n];
            let mut sum_c = 0.0;
            let mut sum_mp = 0.0;
            let mut sum_pp = 0.0;
            for j in 0..lay.s {
                let db = d(lay.row_b(l, j));
                let dc = d(lay.row_c(l, j));
                let dl = db + dc;
                d_c[l][j] = dc;
                delta[l][j] = dl;
                // db * dc / (db + dc) without cancellation.
                let c = db * dc / dl;
                let m = dc / dl;
                let x = qp.scenarios.row(j);
                for a in 0..n {
                    let cxa = c * x[a];
                    cx[a] += cxa;
                    mpx[a] += m * p[j] * x[a];
                    for b in 0..=a {
                        k[(a, b)] += cxa * x[b];
                    }
                }
                sum_c += c;
                sum_mp += m * p[j];
                sum_pp += p[j] * p[j] / dl;
            }
            let (ial, ill) = (ia[l], il[l]);
            let kap = qp.kappa(l);
            for a in 0..n {
                k[(a, ial)] = -cx[a];
                k[(ial, a)] = -cx[a];
                k[(a, ill)] = -mpx[a] / g;
                k[(ill, a)] = mpx[a] / g;
            }
            k[(ial, ial)] = sum_c;
            k[(it, ill)] = -1.0;
            k[(ill, it)] = 1.0;
            k[(ial, ill)] = -kap + sum_mp / g;
            k[(ill, ial)] = kap - sum_mp / g;
            let rt = lay.row_t(l);
            k[(ill, ill)] = st.s[rt] / st.lam[rt] + sum_pp / (g * g);
        }
        for a in 0..n {
            for b in 0..a {
                k[(b, a)] = k[(a, b)];
            }
        }
        if k.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { lu, d_c, delta })
    }

    fn solve(&self, qp: &EpigraphQp, st: &State, res: &Residuals, rc: &[f64]) -> Direction {
        let lay = qp.layout();
        let n = lay.n;
        let p = qp.scenarios.probabilities();
        let g = qp.gamma;
        let rows = qp.n_ineq();

        let mut v: Vec<f64> = (0..rows)
            .map(|i| (rc[i] + st.lam[i] * res.rp[i]) / st.s[i])
            .collect();
        for l in 0..2 {
            v[lay.row_t(l)] = 0.0;
        }
        let gv = qp.gt_apply(&v);
        let rhs: Vec<f64> = res.rd.iter().zip(&gv).map(|(r, x)| -r - x).collect();

        let mut b = DVector::<f64>::zeros(n + 6);
        for i in 0..n {
            b[i] = rhs[i];
        }
        b[n] = rhs[lay.t()];
        b[n + 5] = -res.re;
        for l in 0..2 {
            let rt = lay.row_t(l);
            let mut ra = rhs[lay.a(l)];
            let mut rtl = -(res.rp[rt] + rc[rt] / st.lam[rt]);
            for j in 0..lay.s {
                let rz = rhs[lay.z(l, j)];
                let dl = self.delta[l][j];
                let m = self.d_c[l][j] / dl;
                for (bi, x) in b.rows_mut(0, n).iter_mut().zip(qp.scenarios.row(j)) {
                    *bi -= m * rz * x;
                }
                ra += m * rz;
                rtl += p[j] * rz / (g * dl);
            }
            b[n + 1 + l] = ra;
            b[n + 3 + l] = rtl;
        }
        let sol = self.lu.solve(&b).unwrap_or_else(|| DVector::from_element(n + 6, f64::NAN));

        let mut dx = vec![0.0; qp.n_vars()];
        for i in 0..n {
            dx[i] = sol[i];
        }
        dx[lay.t()] = sol[n];
        let dlt = [sol[n + 3], sol[n + 4]];
        let dr = qp.scenarios.returns_unchecked(&dx[..n]);
        for l in 0..2 {
            let da = sol[n + 1 + l];
            dx[lay.a(l)] = da;
            for j in 0..lay.s {
                let zi = lay.z(l, j);
                dx[zi] = (rhs[zi] - self.d_c[l][j] * (dr[j] - da) - p[j] / g * dlt[l])
                    / self.delta[l][j];
            }
        }
        let mut ds = qp.g_apply(&dx);
        for (d, r) in ds.iter_mut().zip(&res.rp) {
            *d += r;
        }
        let mut dlam: Vec<f64> = (0..rows)
            .map(|i| -(rc[i] + st.lam[i] * ds[i]) / st.s[i])
            .collect();
        for l in 0..2 {
            let rt = lay.row_t(l);
            dlam[rt] = dlt[l];
            ds[rt] = -(rc[rt] + st.s[rt] * dlt[l]) / st.lam[rt];
        }
        Direction {
            dx,
            ds,
            dlam,
            dnu: sol[n + 5],
        }
    }
}

fn extract(
    qp: &EpigraphQp,
    st: &State,
    scale: f64,
    kkt: f64,
    status: SubproblemStatus,
    iterations: usize,
) -> SubproblemSolution {
    let lay = qp.layout();
    let mut y = st.x[..lay.n].to_vec();
    for v in y.iter_mut() {
        if *v < SNAP {
            *v = 0.0;
        }
    }
    simplex::renormalize(&mut y);
    let t = st.x[lay.t()];
    let objective = qp.reduced_objective(&y);
    let omega = [
        (0..lay.s).map(|j| scale * st.lam[lay.row_c(0, j)]).collect(),
        (0..lay.s).map(|j| scale * st.lam[lay.row_c(1, j)]).collect(),
    ];
    SubproblemSolution {
        y,
        objective,
        t,
        a: [st.x[lay.a(0)], st.x[lay.a(1)]],
        multipliers: Multipliers {
            pi: st.lam[..lay.n].iter().map(|v| scale * v).collect(),
            nu: -scale * st.nu,
            lambda_t: [scale * st.lam[lay.row_t(0)], scale * st.lam[lay.row_t(1)]],
            omega,
        },
        kkt_residual: kkt,
        status,
        iterations,
    }
}

/// Residual of the outer KKT system at `w`:
///
/// ```text
/// | xi - u - pi + nu 1 |_2,  |pi_i w_i|,  max(-pi_i, 0),  simplex violation
/// ```
///
/// `xi` is the element of `dg(w)` reconstructed from the epigraph
/// multipliers. Deviations of those multipliers from describing a valid
/// CVaR supergradient (sign, capacity and mass conditions) are included too.
pub fn kkt_residual_outer(spec: &ProblemSpec, w: &[f64], mult: &Multipliers, u: &[f64]) -> Result<f64> {
    let n = spec.n_assets();
    let s = spec.scenarios().n_scenarios();
    if w.len() != n || u.len() != n || mult.pi.len() != n {
        return Err(Error::shape("kkt_residual_outer: length mismatch"));
    }
    if mult.omega[0].len() != s || mult.omega[1].len() != s {
        return Err(Error::shape("kkt_residual_outer: omega length mismatch"));
    }
    let xi = mult.g_element(spec, w);
    let stat: f64 = (0..n)
        .map(|i| {
            let r = xi[i] - u[i] - mult.pi[i] + mult.nu;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let mut worst = stat;
    for i in 0..n {
        worst = worst
            .max((mult.pi[i] * w[i]).abs())
            .max((-mult.pi[i]).max(0.0));
    }
    worst = worst.max(simplex::simplex_violation(w));

    let p = spec.scenarios().probabilities();
    let kap = [spec.kappa_upper(), spec.kappa_lower()];
    worst = worst.max((spec.tau - mult.lambda_t[0] - mult.lambda_t[1]).abs());
    for l in 0..2 {
        let lt = mult.lambda_t[l];
        worst = worst.max((-lt).max(0.0));
        let mut mass = 0.0;
        for j in 0..s {
            let om = mult.omega[l][j];
            mass += om;
            worst = worst
                .max((-om).max(0.0))
                .max((om - p[j] * lt / spec.gamma).max(0.0));
        }
        worst = worst.max((mass - kap[l] * lt).abs());
    }
    Ok(worst)
}
