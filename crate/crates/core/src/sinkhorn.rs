//! Entropy-regularized optimal transport between weighted point clouds.
//!
//! All iterations run in the log domain. For measures `a` (atoms `x`) and `b`
//! (atoms `y`) with cost `C`, the dual potentials are updated by soft-min
//! operators
//!
//! ```text
//! f_i = -eps * log sum_j b_j exp((g_j - C_ij) / eps)
//! g_j = -eps * log sum_i a_i exp((f_i - C_ij) / eps)
//! ```
//!
//! which are exact block maximizations of the concave dual objective, so the
//! dual value never decreases from one half-step to the next. The transport
//! cost reported is the dual value `<a, f> + <b, g>` taken right after a
//! `g` update, when the column marginals hold exactly.
//!
//! A solve starts from a large regularization (the cost diameter) and halves
//! it down to the target `eps` before iterating to convergence there. The
//! fixed point at the target is unique up to the additive gauge, so this only
//! changes how fast it is reached.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;

/// Terms with log-weight further than this below the running maximum
/// contribute less than 1e-20 relative and are skipped.
const LSE_CUTOFF: f64 = 46.0;

/// Below this many cost entries rows are processed serially.
const PAR_THRESHOLD: usize = 1 << 16;

/// Scaling iterations at the target regularization before Newton steps.
const NEWTON_AFTER: usize = 300;

const NEWTON_STEPS: usize = 60;

/// Newton steps without a 10% drop in the violation before giving up.
const NEWTON_PATIENCE: usize = 4;

/// Relative ridge on the scaled Newton system.
const RIDGE: f64 = 1e-12;

/// Largest `n * m^2` for which the dense Newton system is formed.
const NEWTON_WORK: f64 = 1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// Entropic regularization, in cost units.
    pub epsilon: f64,
    /// Cost exponent `p` in `scale * |x - y|^p`.
    pub p: f64,
    /// Multiplier on the cost; 1 for estimation, 1/2 for the diagnostics.
    pub cost_scale: f64,
    /// Stop once the sup-norm of the log row-marginal violation is below this.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Warm start by halving the regularization from the cost diameter.
    pub eps_scaling: bool,
    /// Adaptive over-relaxation of the potential updates at the target
    /// regularization. Convergence is always certified on a plain step.
    pub overrelaxation: bool,
    /// Iterate on scalings of a stabilized kernel at the target
    /// regularization (matrix-vector products instead of one `exp` per cost
    /// entry); the log-domain updates take over to certify convergence.
    pub scaling_form: bool,
    /// Switch to Newton steps on the target potential when the scaling
    /// iterations stall and the dense system is small enough.
    pub newton: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            p: 2.0,
            cost_scale: 1.0,
            tolerance: 1e-9,
            max_iter: 10_000,
            eps_scaling: true,
            overrelaxation: true,
            scaling_form: true,
            newton: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    /// Quadratic cost `|u - x|^2 / 2`, as used for transport maps and potentials.
    pub fn half_quadratic(epsilon: f64) -> Self {
        Self { epsilon, p: 2.0, cost_scale: 0.5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!("cost exponent must be >= 1, got {}", self.p)));
        }
        if !(self.cost_scale > 0.0 && self.cost_scale.is_finite()) {
            return Err(Error::InvalidParameter("cost scale must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    fn cost(&self, x: ndarray::ArrayView1<'_, f64>, y: ndarray::ArrayView1<'_, f64>) -> f64 {
        let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let base = if self.p == 2.0 {
            sq
        } else if self.p == 1.0 {
            sq.sqrt()
        } else {
            sq.sqrt().powf(self.p)
        };
        self.cost_scale * base
    }
}

/// Converged (or last) state of a Sinkhorn solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Regularized transport cost OT_eps.
    pub value: f64,
    /// Source potential at the atoms of the source measure, weighted mean 0.
    pub f: Vec<f64>,
    /// Target potential at the atoms of the target measure.
    pub g: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final sup-norm log-marginal violation.
    pub violation: f64,
}

/// Dense cost matrix stored in both orientations for cache-friendly updates.
struct Cost {
    n: usize,
    m: usize,
    rows: Vec<f64>,
    cols: Vec<f64>,
    max: f64,
}

impl Cost {
    fn new(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Self {
        let (n, m) = (mu.len(), nu.len());
        let mut rows = vec![0.0; n * m];
        let fill = |(i, row): (usize, &mut [f64])| {
            let x = mu.atom(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = cfg.cost(x, nu.atom(j));
            }
        };
        if n * m >= PAR_THRESHOLD {
            rows.par_chunks_mut(m).enumerate().for_each(fill);
        } else {
            rows.chunks_mut(m).enumerate().for_each(fill);
        }
        let mut cols = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                cols[j * n + i] = rows[i * m + j];
            }
        }
        let max = rows.iter().cloned().fold(0.0, f64::max);
        Self { n, m, rows, cols, max }
    }

    fn symmetric(mu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Self {
        let n = mu.len();
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let c = cfg.cost(mu.atom(i), mu.atom(j));
                rows[i * n + j] = c;
                rows[j * n + i] = c;
            }
        }
        let max = rows.iter().cloned().fold(0.0, f64::max);
        Self { n, m: n, cols: Vec::new(), rows, max }
    }
}

/// `-eps * log sum_j exp(h_j - c_j / eps)` over one row of the cost.
#[inline]
fn softmin_row(h: &[f64], c: &[f64], inv_eps: f64, eps: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (hj, cj) in h.iter().zip(c) {
        let a = hj - cj * inv_eps;
        if a > mx {
            mx = a;
        }
    }
    let floor = mx - LSE_CUTOFF;
    let mut s = 0.0;
    for (hj, cj) in h.iter().zip(c) {
        let a = hj - cj * inv_eps;
        if a > floor {
            s += (a - mx).exp();
        }
    }
    -eps * (mx + s.ln())
}

/// Soft-min of every row of `mat` (len(out) rows of width len(h)).
fn softmin_all(mat: &[f64], h: &[f64], eps: f64, out: &mut [f64]) {
    let width = h.len();
    let inv = 1.0 / eps;
    if mat.len() >= PAR_THRESHOLD {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = softmin_row(h, &mat[i * width..(i + 1) * width], inv, eps));
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = softmin_row(h, &mat[i * width..(i + 1) * width], inv, eps);
        }
    }
}

fn shifted(logw: &[f64], pot: &[f64], eps: f64, h: &mut [f64]) {
    for ((hj, lw), p) in h.iter_mut().zip(logw).zip(pot) {
        *hj = lw + p / eps;
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Adaptive over-relaxation of the two-block iteration.
///
/// Near the fixed point the alternating updates behave like block
/// Gauss-Seidel on a two-block (consistently ordered) system, so the plain
/// contraction rate `tau` and the relaxed rate `lambda` obey Young's relation
/// `(lambda + omega - 1)^2 = lambda * omega^2 * tau`, and the best factor is
/// `2 / (1 + sqrt(1 - tau))`. The rate is re-estimated every `WINDOW`
/// iterations and omega only ever grows. A blow-up of the violation drops
/// back to plain steps for good.
struct Relaxation {
    enabled: bool,
    omega: f64,
    history: Vec<f64>,
    best: f64,
}

impl Relaxation {
    const WARMUP: usize = 10;
    const WINDOW: usize = 10;
    const MAX_OMEGA: f64 = 1.98;

    fn new(enabled: bool) -> Self {
        Self { enabled, omega: 1.0, history: Vec::new(), best: f64::INFINITY }
    }

    fn disable(&mut self) {
        self.enabled = false;
        self.omega = 1.0;
    }

    /// Record the violation of the current iterate and return the factor for
    /// the next update.
    fn observe(&mut self, violation: f64) -> f64 {
        if !self.enabled {
            return 1.0;
        }
        if violation > 1e3 * self.best || !violation.is_finite() {
            self.disable();
            return 1.0;
        }
        self.best = self.best.min(violation);
        self.history.push(violation);
        let k = self.history.len();
        if k >= Self::WARMUP + Self::WINDOW && (k - Self::WARMUP) % Self::WINDOW == 0 {
            let ratio = self.history[k - 1] / self.history[k - 1 - Self::WINDOW];
            let lambda = ratio.powf(1.0 / Self::WINDOW as f64);
            let w = self.omega;
            // at or past the optimum the observed rate sits near omega - 1
            let under_relaxed = lambda > w - 1.0 + 0.25 * (2.0 - w);
            if under_relaxed && lambda < 1.0 {
                let tau = ((lambda + w - 1.0).powi(2) / (lambda * w * w)).min(1.0);
                let candidate = 2.0 / (1.0 + (1.0 - tau).sqrt());
                if candidate > self.omega {
                    self.omega = candidate.min(Self::MAX_OMEGA);
                }
            }
        }
        self.omega
    }
}

/// Scalings larger than this (in log units) are folded into the potentials
/// and the kernel is rebuilt.
const ABSORB_LIMIT: f64 = 30.0;

/// `sum_k a_k b_k` with four independent accumulators so the loop vectorizes.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `K_ij = exp(la_i + lb_j + (f_i + g_j - C_ij) / eps)`.
fn build_kernel(cost: &Cost, la: &[f64], lb: &[f64], f: &[f64], g: &[f64], eps: f64, k: &mut [f64]) {
    let inv = 1.0 / eps;
    let hcol: Vec<f64> = lb.iter().zip(g).map(|(l, gj)| l + gj * inv).collect();
    for i in 0..cost.n {
        let hi = la[i] + f[i] * inv;
        let row = &cost.rows[i * cost.m..(i + 1) * cost.m];
        for ((kij, cij), hj) in k[i * cost.m..(i + 1) * cost.m].iter_mut().zip(row).zip(&hcol) {
            *kij = (hi + hj - cij * inv).exp();
        }
    }
}

/// Relaxed Sinkhorn on the scalings `u = exp(lu)`, `v = exp(lv)` of the
/// absorbed kernel; the coupling is `u_i K_ij v_j`. Stops once the log
/// row-marginal violation reaches `tol` or the kernel degenerates (an
/// underflowed row or column), leaving the last finite state absorbed into
/// the solver potentials. Returns the number of iterations used.
fn kernel_phase(s: &mut Solver, eps: f64, tol: f64, budget: usize, relax: &mut Relaxation) -> (usize, f64) {
    let (n, m) = (s.cost.n, s.cost.m);
    let mut k = vec![0.0; n * m];
    build_kernel(s.cost, &s.la, &s.lb, &s.f, &s.g, eps, &mut k);
    let (mut lu, mut lv) = (vec![0.0; n], vec![0.0; m]);
    let (mut u, mut v) = (vec![1.0; n], vec![1.0; m]);
    let mut ktu = vec![0.0; m];
    let mut target = vec![0.0; n];
    let mut saved = vec![0.0; n];
    let mut it = 0;
    let mut last = f64::INFINITY;
    let absorb = |s: &mut Solver, lu: &mut [f64], lv: &mut [f64]| {
        for (fi, l) in s.f.iter_mut().zip(lu.iter_mut()) {
            *fi += eps * *l;
            *l = 0.0;
        }
        for (gj, l) in s.g.iter_mut().zip(lv.iter_mut()) {
            *gj += eps * *l;
            *l = 0.0;
        }
    };
    while it < budget {
        let mut violation = 0.0f64;
        let mut degenerate = false;
        for i in 0..n {
            let kv = dot4(&k[i * m..(i + 1) * m], &v);
            if !(kv > 0.0 && kv.is_finite()) {
                degenerate = true;
                break;
            }
            target[i] = s.la[i] - kv.ln();
            violation = violation.max((target[i] - lu[i]).abs());
        }
        if degenerate {
            break;
        }
        it += 1;
        last = violation;
        if violation <= tol {
            break;
        }
        let omega = relax.observe(violation);
        saved.copy_from_slice(&lu);
        for i in 0..n {
            lu[i] += omega * (target[i] - lu[i]);
            u[i] = lu[i].exp();
        }
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let ui = u[i];
            for (acc, kij) in ktu.iter_mut().zip(&k[i * m..(i + 1) * m]) {
                *acc += ui * kij;
            }
        }
        if ktu.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            // undo the row step so the absorbed state stays finite
            lu.copy_from_slice(&saved);
            break;
        }
        let mut largest = 0.0f64;
        for j in 0..m {
            lv[j] += omega * (s.lb[j] - ktu[j].ln() - lv[j]);
            v[j] = lv[j].exp();
            largest = largest.max(lv[j].abs());
        }
        largest = lu.iter().fold(largest, |acc, x| acc.max(x.abs()));
        if largest > ABSORB_LIMIT {
            absorb(s, &mut lu, &mut lv);
            u.iter_mut().for_each(|x| *x = 1.0);
            v.iter_mut().for_each(|x| *x = 1.0);
            build_kernel(s.cost, &s.la, &s.lb, &s.f, &s.g, eps, &mut k);
        }
    }
    absorb(s, &mut lu, &mut lv);
    (it, last)
}

/// Averaged fixed-point iteration `lu <- (lu + log a - log(K u)) / 2` on
/// the symmetric kernel, coupling `u_i K_ij u_j`.
fn symmetric_kernel_phase(cost: &Cost, la: &[f64], f: &mut [f64], eps: f64, tol: f64, budget: usize) -> (usize, f64) {
    let n = cost.n;
    let mut k = vec![0.0; n * n];
    build_kernel(cost, la, la, f, f, eps, &mut k);
    let mut lu = vec![0.0; n];
    let mut u = vec![1.0; n];
    let mut target = vec![0.0; n];
    let mut it = 0;
    let mut last = f64::INFINITY;
    while it < budget {
        let mut violation = 0.0f64;
        let mut degenerate = false;
        for i in 0..n {
            let ku = dot4(&k[i * n..(i + 1) * n], &u);
            if !(ku > 0.0 && ku.is_finite()) {
                degenerate = true;
                break;
            }
            target[i] = la[i] - ku.ln();
            violation = violation.max((target[i] - lu[i]).abs());
        }
        if degenerate {
            break;
        }
        it += 1;
        last = violation;
        if violation <= tol {
            break;
        }
        let mut largest = 0.0f64;
        for i in 0..n {
            lu[i] = 0.5 * (lu[i] + target[i]);
            u[i] = lu[i].exp();
            largest = largest.max(lu[i].abs());
        }
        if largest > ABSORB_LIMIT {
            for (fi, l) in f.iter_mut().zip(lu.iter_mut()) {
                *fi += eps * *l;
                *l = 0.0;
            }
            u.iter_mut().for_each(|x| *x = 1.0);
            build_kernel(cost, la, la, f, f, eps, &mut k);
        }
    }
    for (fi, l) in f.iter_mut().zip(&lu) {
        *fi += eps * l;
    }
    (it, last)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    Ok(())
}

fn eps_schedule(cost_max: f64, cfg: &SinkhornConfig) -> Vec<f64> {
    let mut out = Vec::new();
    if cfg.eps_scaling {
        let mut e = cost_max;
        while e > cfg.epsilon {
            out.push(e);
            e *= 0.5;
        }
    }
    out
}

struct Solver<'a> {
    cost: &'a Cost,
    la: Vec<f64>,
    lb: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    h_n: Vec<f64>,
    h_m: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(cost: &'a Cost, a: &[f64], b: &[f64]) -> Self {
        Self {
            cost,
            la: a.iter().map(|w| w.ln()).collect(),
            lb: b.iter().map(|w| w.ln()).collect(),
            f: vec![0.0; cost.n],
            g: vec![0.0; cost.m],
            h_n: vec![0.0; cost.n],
            h_m: vec![0.0; cost.m],
        }
    }

    fn update_f(&mut self, eps: f64, out: &mut Vec<f64>) {
        shifted(&self.lb, &self.g, eps, &mut self.h_m);
        out.resize(self.cost.n, 0.0);
        softmin_all(&self.cost.rows, &self.h_m, eps, out);
    }

    fn update_g(&mut self, eps: f64) {
        shifted(&self.la, &self.f, eps, &mut self.h_n);
        let mut g = std::mem::take(&mut self.g);
        softmin_all(&self.cost.cols, &self.h_n, eps, &mut g);
        self.g = g;
    }
}

/// Regularized transport cost `OT_eps(mu, nu)` with its dual potentials.
///
/// Non-convergence is not an error here: the result carries
/// `converged = false` and the last dual value.
pub fn ot_eps(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    Ok(transport_solve(mu, nu, cfg)?.1)
}

/// Identical inputs go through the symmetric iteration: the alternating
/// scheme is nearly singular when the coupling is close to diagonal.
fn transport_solve(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<(Cost, SinkhornResult)> {
    cfg.validate()?;
    check_dims(mu, nu)?;
    if mu == nu {
        let cost = Cost::symmetric(mu, cfg);
        let r = solve_symmetric(&cost, mu.weights(), cfg);
        let a = mu.weights();
        let shift = dot(a, &r.f);
        let result = SinkhornResult {
            value: r.value,
            f: r.f.iter().map(|v| v - shift).collect(),
            g: r.t.iter().map(|v| v + shift).collect(),
            iterations: r.iterations,
            converged: r.converged,
            violation: r.violation,
        };
        return Ok((cost, result));
    }
    let cost = Cost::new(mu, nu, cfg);
    let result = solve(&cost, mu.weights(), nu.weights(), cfg, None);
    Ok((cost, result))
}

fn solve(
    cost: &Cost,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> SinkhornResult {
    let eps = cfg.epsilon;
    let mut s = Solver::new(cost, a, b);
    let mut fbuf = Vec::with_capacity(cost.n);
    let mut iterations = 0;
    let fast = cfg.scaling_form && trace.is_none();
    for e in eps_schedule(cost.max, cfg) {
        if !fast || kernel_phase(&mut s, e, 0.0, 1, &mut Relaxation::new(false)).0 == 0 {
            s.update_f(e, &mut fbuf);
            std::mem::swap(&mut s.f, &mut fbuf);
            s.update_g(e);
        }
        iterations += 1;
    }
    let mut violation = f64::INFINITY;
    let mut converged = false;
    let mut relax = Relaxation::new(cfg.overrelaxation && trace.is_none());
    let newton = cfg.newton && trace.is_none() && (cost.n * cost.m) as f64 * cost.m as f64 <= NEWTON_WORK;
    if fast {
        let budget = cfg.max_iter.saturating_sub(iterations);
        let first = if newton { budget.min(NEWTON_AFTER) } else { budget };
        let (used, last) = kernel_phase(&mut s, eps, cfg.tolerance, first, &mut relax);
        iterations += used;
        violation = last;
    }
    if newton && violation > cfg.tolerance {
        if !fast {
            let budget = cfg.max_iter.saturating_sub(iterations).min(NEWTON_AFTER);
            for _ in 0..budget {
                s.update_f(eps, &mut fbuf);
                violation = sup_diff(&s.f, &fbuf) / eps;
                std::mem::swap(&mut s.f, &mut fbuf);
                s.update_g(eps);
                iterations += 1;
                if violation <= cfg.tolerance {
                    break;
                }
            }
        }
        if violation > cfg.tolerance {
            for _ in 0..3 {
                s.update_f(eps, &mut fbuf);
                std::mem::swap(&mut s.f, &mut fbuf);
                s.update_g(eps);
            }
            iterations += 3;
            iterations += newton_phase(&mut s, eps, cfg.tolerance, cfg.max_iter.saturating_sub(iterations));
        }
        if fast {
            let budget = cfg.max_iter.saturating_sub(iterations);
            let (used, last) = kernel_phase(&mut s, eps, cfg.tolerance, budget, &mut relax);
            iterations += used;
            violation = last;
        }
    }
    let mut gbuf = vec![0.0; cost.m];
    // whether the current g is the exact block maximizer for the current f
    let mut exact = false;
    while iterations < cfg.max_iter {
        s.update_f(eps, &mut fbuf);
        violation = sup_diff(&s.f, &fbuf) / eps;
        iterations += 1;
        if violation <= cfg.tolerance && exact {
            converged = true;
        }
        let omega = if violation <= cfg.tolerance { 1.0 } else { relax.observe(violation) };
        if omega == 1.0 {
            std::mem::swap(&mut s.f, &mut fbuf);
            if let Some(t) = trace.as_deref_mut() {
                t.push(dual_objective(cost, a, b, &s.f, &s.g, eps));
            }
            s.update_g(eps);
            if let Some(t) = trace.as_deref_mut() {
                t.push(dual_objective(cost, a, b, &s.f, &s.g, eps));
            }
            exact = true;
            if converged {
                break;
            }
        } else {
            for (x, y) in s.f.iter_mut().zip(&fbuf) {
                *x += omega * (y - *x);
            }
            shifted(&s.la, &s.f, eps, &mut s.h_n);
            softmin_all(&cost.cols, &s.h_n, eps, &mut gbuf);
            for (x, y) in s.g.iter_mut().zip(&gbuf) {
                *x += omega * (y - *x);
            }
            exact = false;
        }
    }
    let value = dot(a, &s.f) + dot(b, &s.g);
    let shift = dot(a, &s.f);
    let f = s.f.iter().map(|v| v - shift).collect();
    let g = s.g.iter().map(|v| v + shift).collect();
    SinkhornResult { value, f, g, iterations, converged, violation }
}

/// Semi-dual value `<a, f> + <b, g>` with `f` the exact soft c-transform of
/// `g`, written into `f`. With `coupling` the plan `P_ij` is filled as well;
/// its rows then sum to `a_i`.
fn semi_dual(cost: &Cost, la: &[f64], lb: &[f64], g: &[f64], eps: f64, f: &mut [f64], coupling: Option<&mut [f64]>) -> f64 {
    let h: Vec<f64> = lb.iter().zip(g).map(|(l, gj)| l + gj / eps).collect();
    softmin_all(&cost.rows, &h, eps, f);
    if let Some(p) = coupling {
        let inv = 1.0 / eps;
        for i in 0..cost.n {
            let row = &cost.rows[i * cost.m..(i + 1) * cost.m];
            let base = la[i] + f[i] * inv;
            for ((pij, cij), hj) in p[i * cost.m..(i + 1) * cost.m].iter_mut().zip(row).zip(&h) {
                *pij = (base + hj - cij * inv).exp();
            }
        }
    }
    la.iter().zip(f.iter()).map(|(l, fi)| l.exp() * fi).sum::<f64>() + lb.iter().zip(g).map(|(l, gj)| l.exp() * gj).sum::<f64>()
}

/// Damped Newton ascent on the semi-dual in `g`.
///
/// The gradient is `b - c` with `c` the column marginal of the plan, and the
/// negative Hessian is `(diag(c) - P^T diag(1/a) P) / eps`. That matrix
/// annihilates constants (the gauge), so `1 1^T / m` is added to make it
/// definite; the gradient sums to zero, so steps are unaffected. Stops when
/// the log column violation is well below `tol`, when the system is not
/// definite, or when backtracking no longer increases the objective.
/// Returns the number of steps.
fn newton_phase(s: &mut Solver, eps: f64, tol: f64, budget: usize) -> usize {
    let (n, m) = (s.cost.n, s.cost.m);
    let b: Vec<f64> = s.lb.iter().map(|l| l.exp()).collect();
    let mut p = vec![0.0; n * m];
    let mut f = vec![0.0; n];
    let mut trial_f = vec![0.0; n];
    let mut value = semi_dual(s.cost, &s.la, &s.lb, &s.g, eps, &mut f, Some(&mut p));
    let mut steps = 0;
    let (mut previous, mut stalled) = (f64::INFINITY, 0);
    while steps < budget.min(NEWTON_STEPS) {
        let mut c = vec![0.0; m];
        for i in 0..n {
            for (cj, pij) in c.iter_mut().zip(&p[i * m..(i + 1) * m]) {
                *cj += pij;
            }
        }
        let worst = c.iter().zip(&s.lb).map(|(cj, l)| (cj.ln() - l).abs()).fold(0.0, f64::max);
        if !(worst > 1e-2 * tol) {
            break;
        }
        if worst > 0.9 * previous {
            stalled += 1;
            if stalled == NEWTON_PATIENCE {
                break;
            }
        } else {
            stalled = 0;
        }
        previous = worst;
        // scale by diag(c)^(-1/2): unit diagonal, null vector sqrt(c)
        let root: Vec<f64> = c.iter().map(|cj| cj.sqrt()).collect();
        let q = nalgebra::DMatrix::from_fn(n, m, |i, j| p[i * m + j] / ((0.5 * s.la[i]).exp() * root[j]));
        let mut hess = -(q.transpose() * &q);
        for j in 0..m {
            for k in 0..m {
                hess[(j, k)] += root[j] * root[k];
            }
            hess[(j, j)] += 1.0 + RIDGE;
        }
        let Some(chol) = hess.cholesky() else { break };
        let grad = nalgebra::DVector::from_fn(m, |j, _| b[j] - c[j]);
        let scaled = nalgebra::DVector::from_fn(m, |j, _| grad[j] / root[j]);
        let mut dir = chol.solve(&scaled) * eps;
        for j in 0..m {
            dir[j] /= root[j];
        }
        let slope = grad.dot(&dir);
        if !(slope > 0.0 && slope.is_finite()) {
            break;
        }
        // no potential moves by more than eps, so no exponent changes by more than 1
        let longest = dir.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        let mut t = (eps / longest).min(1.0);
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = s.g.iter().zip(dir.iter()).map(|(gj, dj)| gj + t * dj).collect();
            let v = semi_dual(s.cost, &s.la, &s.lb, &trial, eps, &mut trial_f, None);
            if v.is_finite() && v >= value + 1e-4 * t * slope {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(g) = accepted else { break };
        s.g = g;
        value = semi_dual(s.cost, &s.la, &s.lb, &s.g, eps, &mut f, Some(&mut p));
        steps += 1;
    }
    s.f.copy_from_slice(&f);
    steps
}

/// Full dual objective, including the mass term `-eps * (sum(pi) - 1)`.
fn dual_objective(cost: &Cost, a: &[f64], b: &[f64], f: &[f64], g: &[f64], eps: f64) -> f64 {
    let mut mass = 0.0;
    for i in 0..cost.n {
        let row = &cost.rows[i * cost.m..(i + 1) * cost.m];
        for j in 0..cost.m {
            mass += a[i] * b[j] * ((f[i] + g[j] - row[j]) / eps).exp();
        }
    }
    dot(a, f) + dot(b, g) - eps * (mass - 1.0)
}

/// `OT_eps(mu, mu)` by the symmetric averaged fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTransport {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn self_transport(mu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<SelfTransport> {
    cfg.validate()?;
    let cost = Cost::symmetric(mu, cfg);
    let r = solve_symmetric(&cost, mu.weights(), cfg);
    Ok(SelfTransport { value: r.value, iterations: r.iterations, converged: r.converged })
}

struct SymmetricSolution {
    value: f64,
    f: Vec<f64>,
    /// Exact block maximizer for `f`; equals `f` at the fixed point.
    t: Vec<f64>,
    iterations: usize,
    converged: bool,
    violation: f64,
}

fn solve_symmetric(cost: &Cost, a: &[f64], cfg: &SinkhornConfig) -> SymmetricSolution {
    let la: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let n = cost.n;
    let mut f = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut iterations = 0;
    for e in eps_schedule(cost.max, cfg) {
        if !cfg.scaling_form || symmetric_kernel_phase(cost, &la, &mut f, e, 0.0, 1).0 == 0 {
            shifted(&la, &f, e, &mut h);
            softmin_all(&cost.rows, &h, e, &mut t);
            for (fi, ti) in f.iter_mut().zip(&t) {
                *fi = 0.5 * (*fi + ti);
            }
        }
        iterations += 1;
    }
    let eps = cfg.epsilon;
    let mut converged = false;
    let mut value = f64::NAN;
    let mut violation = f64::INFINITY;
    if cfg.scaling_form {
        let (used, last) = symmetric_kernel_phase(cost, &la, &mut f, eps, cfg.tolerance, cfg.max_iter.saturating_sub(iterations));
        iterations += used;
        violation = last;
    }
    while iterations < cfg.max_iter {
        shifted(&la, &f, eps, &mut h);
        softmin_all(&cost.rows, &h, eps, &mut t);
        violation = sup_diff(&f, &t) / eps;
        // dual value at the pair (f, T(f)), where T(f) is the exact block maximizer
        value = dot(a, &f) + dot(a, &t);
        iterations += 1;
        if violation <= cfg.tolerance {
            converged = true;
            break;
        }
        for (fi, ti) in f.iter_mut().zip(&t) {
            *fi = 0.5 * (*fi + ti);
        }
    }
    SymmetricSolution { value, f, t, iterations, converged, violation }
}

/// Debiased Sinkhorn divergence together with a convergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    pub converged: bool,
}

/// `S_eps(mu, nu) = OT(mu, nu) - OT(mu, mu) / 2 - OT(nu, nu) / 2`.
pub fn sinkhorn_divergence(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<f64> {
    let d = divergence_detailed(mu, nu, cfg)?;
    if !d.converged {
        log::warn!("sinkhorn divergence evaluated from a non-converged solve");
    }
    Ok(d.value)
}

pub fn divergence_detailed(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<Divergence> {
    let mu_self = self_transport(mu, cfg)?;
    divergence_with_self(mu, &mu_self, nu, cfg)
}

/// Divergence reusing a precomputed self-term for `mu`.
pub fn divergence_with_self(
    mu: &EmpiricalMeasure,
    mu_self: &SelfTransport,
    nu: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
) -> Result<Divergence> {
    let cross = ot_eps(mu, nu, cfg)?;
    let nu_self = self_transport(nu, cfg)?;
    Ok(Divergence {
        value: cross.value - 0.5 * (mu_self.value + nu_self.value),
        converged: cross.converged && mu_self.converged && nu_self.converged,
    })
}

/// Barycentric map and source potential of the entropic coupling from
/// `mu` to `nu`.
#[derive(Debug, Clone)]
pub struct EntropicTransport {
    /// Row `i` is the conditional mean of the target given source atom `i`.
    pub map: Array2<f64>,
    /// Source potential at the atoms of `mu`, weighted mean 0.
    pub potential: Vec<f64>,
    pub result: SinkhornResult,
}

pub fn entropic_transport(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
) -> Result<EntropicTransport> {
    let (cost, result) = transport_solve(mu, nu, cfg)?;
    if !result.converged {
        // The map below is the soft c-transform of `g`, so its rows stay
        // normalized even when the marginals are only approximately met.
        log::warn!(
            "transport solve stopped after {} iterations with violation {:e}; using its last iterate",
            result.iterations,
            result.violation
        );
    }
    let eps = cfg.epsilon;
    let lb: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();
    let d = mu.dim();
    let mut map = Array2::zeros((mu.len(), d));
    let mut w = vec![0.0; nu.len()];
    for i in 0..mu.len() {
        let row = &cost.rows[i * cost.m..(i + 1) * cost.m];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..nu.len() {
            w[j] = lb[j] + (result.g[j] - row[j]) / eps;
            mx = mx.max(w[j]);
        }
        let mut total = 0.0;
        for wj in w.iter_mut() {
            *wj = (*wj - mx).exp();
            total += *wj;
        }
        let mut out = map.row_mut(i);
        for (j, &wj) in w.iter().enumerate() {
            let p = wj / total;
            for k in 0..d {
                out[k] += p * nu.atom(j)[k];
            }
        }
    }
    let potential = result.f.clone();
    Ok(EntropicTransport { map, potential, result })
}

/// One transported point per source atom: `T(x_i) = sum_j pi_ij y_j / a_i`.
pub fn barycentric_projection(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<Array2<f64>> {
    Ok(entropic_transport(mu, nu, cfg)?.map)
}

/// Source-side potential at the atoms of `mu`, centered to weighted mean 0.
pub fn source_potential(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<Vec<f64>> {
    Ok(entropic_transport(mu, nu, cfg)?.potential)
}

/// Extension of the source potential to an arbitrary point `u` via the soft
/// c-transform of the target potential `g`.
pub fn potential_at(u: &[f64], nu: &EmpiricalMeasure, g: &[f64], cfg: &SinkhornConfig) -> f64 {
    let uv = ndarray::ArrayView1::from(u);
    let eps = cfg.epsilon;
    let h: Vec<f64> = nu.weights().iter().zip(g).map(|(w, gj)| w.ln() + gj / eps).collect();
    let c: Vec<f64> = (0..nu.len()).map(|j| cfg.cost(uv, nu.atom(j))).collect();
    softmin_row(&h, &c, 1.0 / eps, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::make_measure;
    use crate::rng::{open01, RandomSource};
    use ndarray::array;

    pub(super) fn random_measure(n: usize, d: usize, src: RandomSource, weighted: bool) -> EmpiricalMeasure {
        let mut r = src.rng();
        let pts = Array2::from_shape_fn((n, d), |_| 2.0 * open01(&mut r) - 0.5);
        let w = weighted.then(|| (0..n).map(|_| 0.1 + open01(&mut r)).collect());
        make_measure(pts, w).unwrap()
    }

    #[test]
    fn single_atoms_exact() {
        let x = make_measure(array![[0.0, 1.0]], None).unwrap();
        let y = make_measure(array![[3.0, -1.0]], None).unwrap();
        let cfg = SinkhornConfig::default();
        let r = ot_eps(&x, &y, &cfg).unwrap();
        assert!((r.value - 13.0).abs() < 1e-12);
        let s = sinkhorn_divergence(&x, &y, &cfg).unwrap();
        assert!((s - 13.0).abs() < 1e-12);
        let p1 = SinkhornConfig { p: 1.0, ..cfg };
        assert!((sinkhorn_divergence(&x, &y, &p1).unwrap() - 13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sorted_matching_small_eps() {
        let a = make_measure(array![[0.0], [1.0], [2.0], [3.0]], None).unwrap();
        let b = make_measure(array![[1.0], [2.0], [3.0], [4.0]], None).unwrap();
        let cfg = SinkhornConfig::with_epsilon(1e-4);
        let r = ot_eps(&a, &b, &cfg).unwrap();
        assert!((r.value - 1.0).abs() < 1e-2, "value {}", r.value);
    }

    #[test]
    fn self_divergence_zero_and_symmetry() {
        let cfg = SinkhornConfig::default();
        for (k, d) in [1, 2, 4].into_iter().enumerate() {
            let mu = random_measure(40, d, crate::rng::RandomSource::new(k as u64).split(0), true);
            let nu = random_measure(30, d, RandomSource::new(k as u64).split(1), false);
            let s_mm = sinkhorn_divergence(&mu, &mu, &cfg).unwrap();
            assert!(s_mm.abs() <= 1e-9, "S(mu,mu) = {s_mm}");
            let s1 = sinkhorn_divergence(&mu, &nu, &cfg).unwrap();
            let s2 = sinkhorn_divergence(&nu, &mu, &cfg).unwrap();
            assert!(s1 >= -1e-9);
            assert!((s1 - s2).abs() <= 1e-9, "{s1} vs {s2}");
        }
    }

    #[test]
    fn dual_objective_monotone() {
        let mu = random_measure(25, 2, RandomSource::new(5), true);
        let nu = random_measure(35, 2, RandomSource::new(6), true);
        let cfg = SinkhornConfig {
            eps_scaling: false,
            overrelaxation: false,
            epsilon: 5e-2,
            max_iter: 200,
            ..Default::default()
        };
        let cost = Cost::new(&mu, &nu, &cfg);
        let mut trace = Vec::new();
        let r = solve(&cost, mu.weights(), nu.weights(), &cfg, Some(&mut trace));
        assert!(trace.len() > 4);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "dual decreased: {} -> {}", w[0], w[1]);
        }
        assert!((trace.last().unwrap() - r.value).abs() < 1e-9);
    }

    #[test]
    fn converged_marginals_within_tolerance() {
        let mu = random_measure(20, 2, RandomSource::new(8), true);
        let nu = random_measure(15, 2, RandomSource::new(9), true);
        let cfg = SinkhornConfig::default();
        let r = ot_eps(&mu, &nu, &cfg).unwrap();
        assert!(r.converged);
        let eps = cfg.epsilon;
        for i in 0..mu.len() {
            let mut row = 0.0;
            for j in 0..nu.len() {
                let c = cfg.cost(mu.atom(i), nu.atom(j));
                row += nu.weights()[j] * ((r.f[i] + r.g[j] - c) / eps).exp();
            }
            // row mass relative to a_i
            assert!(row.ln().abs() <= 1e-8, "row {i}: {}", row.ln());
        }
        let mean_f: f64 = mu.weights().iter().zip(&r.f).map(|(a, f)| a * f).sum();
        assert!(mean_f.abs() < 1e-12);
    }

    #[test]
    fn map_to_single_atom() {
        let mu = random_measure(10, 2, RandomSource::new(1), false);
        let nu = make_measure(array![[0.3, -0.7]], None).unwrap();
        let map = barycentric_projection(&mu, &nu, &SinkhornConfig::half_quadratic(1e-2)).unwrap();
        for row in map.rows() {
            assert!((row[0] - 0.3).abs() < 1e-12 && (row[1] + 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn map_identity_in_small_eps_limit() {
        let pts = array![[0.0, 0.0], [1.0, 0.2], [0.3, 0.9], [-0.8, 0.5], [0.4, -1.0]];
        let mu = make_measure(pts.clone(), None).unwrap();
        let map = barycentric_projection(&mu, &mu, &SinkhornConfig::half_quadratic(1e-6)).unwrap();
        let dev = (&map - &pts).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev < 1e-3, "max deviation {dev}");
    }

    #[test]
    fn map_in_convex_hull_1d() {
        let mu = random_measure(30, 1, RandomSource::new(11), false);
        let nu = random_measure(20, 1, RandomSource::new(12), true);
        let map = barycentric_projection(&mu, &nu, &SinkhornConfig::half_quadratic(1e-2)).unwrap();
        let lo = nu.atoms().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = nu.atoms().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in map.iter() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn potentials_identical_for_identical_targets() {
        let mu = random_measure(15, 2, RandomSource::new(2), false);
        let nu = random_measure(12, 2, RandomSource::new(3), false);
        let cfg = SinkhornConfig::half_quadratic(1e-2);
        let p1 = source_potential(&mu, &nu, &cfg).unwrap();
        let p2 = source_potential(&mu, &nu.clone(), &cfg).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-9);
        }
        let mean: f64 = p1.iter().sum::<f64>() / p1.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn map_matches_potential_gradient() {
        // T(u) = u - grad phi(u) for the half-quadratic cost
        let mu = random_measure(20, 2, RandomSource::new(21), false);
        let nu = random_measure(25, 2, RandomSource::new(22), false);
        let cfg = SinkhornConfig::half_quadratic(1e-2);
        let t = entropic_transport(&mu, &nu, &cfg).unwrap();
        let h = 1e-5;
        for i in 0..mu.len() {
            let u: Vec<f64> = mu.atom(i).to_vec();
            let phi0 = potential_at(&u, &nu, &t.result.g, &cfg);
            assert!((phi0 - t.potential[i]).abs() < 1e-8);
            for k in 0..2 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                let grad = (potential_at(&up, &nu, &t.result.g, &cfg) - potential_at(&dn, &nu, &t.result.g, &cfg)) / (2.0 * h);
                let predicted = u[k] - grad;
                let actual = t.map[[i, k]];
                let scale = actual.abs().max(u[k].abs()).max(1e-1);
                assert!((predicted - actual).abs() / scale < 5e-2, "atom {i} coord {k}: {predicted} vs {actual}");
            }
        }
    }

    #[test]
    fn nonconvergence_flagged_not_fatal() {
        let mu = random_measure(20, 1, RandomSource::new(30), false);
        let nu = random_measure(20, 1, RandomSource::new(31), false);
        let cfg = SinkhornConfig { max_iter: 2, eps_scaling: false, epsilon: 1e-3, ..Default::default() };
        let r = ot_eps(&mu, &nu, &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.value.is_finite());
        let t = entropic_transport(&mu, &nu, &cfg).unwrap();
        assert!(!t.result.converged);
        assert!(t.map.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_mismatch() {
        let a = make_measure(array![[0.0]], None).unwrap();
        let b = make_measure(array![[0.0, 1.0]], None).unwrap();
        assert!(ot_eps(&a, &b, &SinkhornConfig::default()).is_err());
    }

    #[test]
    fn relaxed_and_plain_schemes_agree() {
        let mu = random_measure(60, 2, RandomSource::new(11), true);
        let nu = random_measure(50, 2, RandomSource::new(12), false);
        let relaxed = SinkhornConfig::default();
        let plain = SinkhornConfig { overrelaxation: false, ..relaxed };
        let r = ot_eps(&mu, &nu, &relaxed).unwrap();
        let p = ot_eps(&mu, &nu, &plain).unwrap();
        assert!(r.converged && p.converged);
        assert!(r.iterations <= p.iterations);
        assert!((r.value - p.value).abs() < 1e-10, "{} vs {}", r.value, p.value);
        for (x, y) in r.f.iter().zip(&p.f) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_form_matches_log_domain() {
        for (d, eps) in [(1, 1e-3), (3, 1e-2)] {
            let mu = random_measure(70, d, RandomSource::new(20 + d as u64), true);
            let nu = random_measure(55, d, RandomSource::new(30 + d as u64), false);
            let fast = SinkhornConfig::with_epsilon(eps);
            let slow = SinkhornConfig { scaling_form: false, ..fast };
            let a = ot_eps(&mu, &nu, &fast).unwrap();
            let b = ot_eps(&mu, &nu, &slow).unwrap();
            assert!(a.converged && b.converged);
            assert!((a.value - b.value).abs() < 1e-10);
            let sa = self_transport(&nu, &fast).unwrap();
            let sb = self_transport(&nu, &slow).unwrap();
            assert!((sa.value - sb.value).abs() < 1e-10);
        }
    }

    #[test]
    fn newton_finishes_a_stalled_solve() {
        // ten points against five in the unit cube: the scaling iterations
        // are still far from the tolerance at the iteration cap
        let mut rng = RandomSource::new(12480256462286669247).rng();
        let mut draw = |rows: usize| Array2::from_shape_fn((rows, 3), |_| open01(&mut rng));
        let mu = make_measure(draw(10), None).unwrap();
        let nu = make_measure(draw(5), None).unwrap();
        let plain = SinkhornConfig { newton: false, ..Default::default() };
        assert!(!ot_eps(&mu, &nu, &plain).unwrap().converged);
        let cfg = SinkhornConfig::default();
        let (a, b) = (ot_eps(&mu, &nu, &cfg).unwrap(), ot_eps(&nu, &mu, &cfg).unwrap());
        assert!(a.converged && b.converged);
        assert!((a.value - b.value).abs() < 1e-12, "{} vs {}", a.value, b.value);
    }
}
