//! Entropic transport diagnostics.
//!
//! Reference points drawn uniformly on the unit ball are transported onto
//! the observed and the simulated measure under the cost `|u - x|^2 / 2`.
//! Comparing the two barycentric maps coordinate-wise gives Q-Q pairs;
//! comparing the two source potentials gives one scalar plot whatever the
//! dimension.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::Simulator;
use crate::preprocess::quantile_type7;
use crate::rng::{open01, RandomSource};
use crate::sinkhorn::{entropic_transport, EntropicTransport, SinkhornConfig};

/// Default regularization for the diagnostics.
pub const DIAGNOSTIC_EPSILON: f64 = 1e-2;

/// Uniform points on the closed unit ball: Gaussian direction, radius `U^(1/d)`.
pub fn sample_unit_ball(n: usize, d: usize, src: &RandomSource) -> Result<Array2<f64>> {
    if n == 0 || d == 0 {
        return Err(Error::Empty("unit ball sample"));
    }
    let mut rng = src.rng();
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        let norm = loop {
            for v in row.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let radius = open01(&mut rng).powf(1.0 / d as f64);
        row.mapv_inplace(|v| (v / norm * radius).clamp(-1.0, 1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSet {
    pub reference: Array2<f64>,
    pub transported_observed: Array2<f64>,
    pub transported_simulated: Array2<f64>,
    pub potential_observed: Vec<f64>,
    pub potential_simulated: Vec<f64>,
    /// `n_ref * sum_j w_j |T_obs(U_j) - T_sim(U_j)|^2`.
    pub e_stat: f64,
    /// `n_ref * sum_j w_j |phi_obs(U_j) - phi_sim(U_j)|^2`.
    pub f_stat: f64,
    /// Per reference point; uniform for continuous data, frequency-based
    /// for collapsed discrete data. Sums to 1.
    pub weights: Vec<f64>,
}

impl DiagnosticSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reference.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticConfig {
    /// Reference points; `None` uses the number of observed atoms.
    pub n_ref: Option<usize>,
    pub epsilon: f64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self { n_ref: None, epsilon: DIAGNOSTIC_EPSILON }
    }
}

fn transport(reference: &EmpiricalMeasure, target: &EmpiricalMeasure, epsilon: f64) -> Result<EntropicTransport> {
    entropic_transport(reference, target, &SinkhornConfig::half_quadratic(epsilon))
}

/// Frequency of the target atom that receives the largest share of each
/// reference point's mass, split evenly among the reference points that
/// pick the same atom.
fn atom_weights(reference: &EmpiricalMeasure, target: &EmpiricalMeasure, plan: &EntropicTransport, eps: f64) -> Vec<f64> {
    let n = reference.len();
    let mut pick = vec![0usize; n];
    for (i, p) in pick.iter_mut().enumerate() {
        let u = reference.atom(i);
        let mut best = f64::NEG_INFINITY;
        for (j, (&b, &g)) in target.weights().iter().zip(&plan.result.g).enumerate() {
            let c: f64 = 0.5 * u.iter().zip(target.atom(j).iter()).map(|(a, z)| (a - z) * (a - z)).sum::<f64>();
            let score = b.ln() + (g - c) / eps;
            if score > best {
                best = score;
                *p = j;
            }
        }
    }
    let mut counts = vec![0usize; target.len()];
    for &j in &pick {
        counts[j] += 1;
    }
    let mut w: Vec<f64> = pick.iter().map(|&j| target.weights()[j] / counts[j] as f64).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn centered(mut phi: Vec<f64>, w: &[f64]) -> Vec<f64> {
    let mean: f64 = phi.iter().zip(w).map(|(p, q)| p * q).sum();
    phi.iter_mut().for_each(|p| *p -= mean);
    phi
}

fn weighted_sq_gap(a: &Array2<f64>, b: &Array2<f64>, w: &[f64]) -> f64 {
    a.rows().into_iter().zip(b.rows()).zip(w).map(|((x, y), q)| q * x.iter().zip(y.iter()).map(|(s, t)| (s - t).powi(2)).sum::<f64>()).sum()
}

/// Diagnostics for a fixed set of reference points.
pub fn diagnostics_at(
    reference: &Array2<f64>,
    observed: &EmpiricalMeasure,
    simulated: &EmpiricalMeasure,
    epsilon: f64,
    discrete: bool,
) -> Result<DiagnosticSet> {
    if observed.dim() != simulated.dim() {
        return Err(Error::DimensionMismatch { expected: observed.dim(), got: simulated.dim() });
    }
    if reference.ncols() != observed.dim() {
        return Err(Error::DimensionMismatch { expected: observed.dim(), got: reference.ncols() });
    }
    let source = EmpiricalMeasure::uniform(reference.clone())?;
    let obs = transport(&source, observed, epsilon)?;
    let sim = transport(&source, simulated, epsilon)?;
    let n = reference.nrows();
    let weights = if discrete { atom_weights(&source, observed, &obs, epsilon) } else { vec![1.0 / n as f64; n] };
    let potential_observed = centered(obs.potential, &weights);
    let potential_simulated = centered(sim.potential, &weights);
    let e_stat = n as f64 * weighted_sq_gap(&obs.map, &sim.map, &weights);
    let f_stat = n as f64
        * potential_observed.iter().zip(&potential_simulated).zip(&weights).map(|((a, b), w)| w * (a - b).powi(2)).sum::<f64>();
    Ok(DiagnosticSet {
        reference: reference.clone(),
        transported_observed: obs.map,
        transported_simulated: sim.map,
        potential_observed,
        potential_simulated,
        e_stat,
        f_stat,
        weights,
    })
}

/// Draw reference points and compute both transports from them. Set
/// `discrete` for collapsed integer data to weight pairs by frequency.
pub fn build_diagnostics(
    observed: &EmpiricalMeasure,
    simulated: &EmpiricalMeasure,
    cfg: &DiagnosticConfig,
    discrete: bool,
    src: &RandomSource,
) -> Result<DiagnosticSet> {
    let n_ref = cfg.n_ref.unwrap_or(observed.len());
    let reference = sample_unit_ball(n_ref, observed.dim(), src)?;
    diagnostics_at(&reference, observed, simulated, cfg.epsilon, discrete)
}

/// `(observed, simulated, weight)` triple for one plotted point.
pub type WeightedPair = (f64, f64, f64);

/// Projections of both transports onto coordinate `coord` (zero-based).
pub fn qq_pairs(diag: &DiagnosticSet, coord: usize) -> Result<Vec<WeightedPair>> {
    if coord >= diag.dim() {
        return Err(Error::InvalidParameter(format!("coordinate {coord} out of range for dimension {}", diag.dim())));
    }
    Ok((0..diag.len())
        .map(|j| (diag.transported_observed[[j, coord]], diag.transported_simulated[[j, coord]], diag.weights[j]))
        .collect())
}

pub fn potential_pairs(diag: &DiagnosticSet) -> Vec<WeightedPair> {
    diag.potential_observed
        .iter()
        .zip(&diag.potential_simulated)
        .zip(&diag.weights)
        .map(|((a, b), w)| (*a, *b, *w))
        .collect()
}

/// Pointwise bootstrap bands for the simulated side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub level: f64,
    pub qq_lower: Array2<f64>,
    pub qq_upper: Array2<f64>,
    pub potential_lower: Vec<f64>,
    pub potential_upper: Vec<f64>,
    pub replicates: usize,
}

/// Resimulate `m` rows at `theta_hat` `replicates` times, recompute the
/// simulated-side transports from the reference points of `diag`, and take
/// pointwise `(1 - level) / 2` and `(1 + level) / 2` quantiles.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_bands(
    diag: &DiagnosticSet,
    observed: &EmpiricalMeasure,
    theta_hat: &[f64],
    simulator: &dyn Simulator,
    m: usize,
    replicates: usize,
    level: f64,
    epsilon: f64,
    src: &RandomSource,
) -> Result<Bands> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one bootstrap replicate".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("band level must lie in (0, 1), got {level}")));
    }
    let discrete = simulator.is_discrete();
    let sets: Vec<Result<DiagnosticSet>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let sample = simulator.sample(theta_hat, m, &src.split(b as u64))?;
            let sim = simulator.measure(sample.view())?;
            diagnostics_at(&diag.reference, observed, &sim, epsilon, discrete)
        })
        .collect();
    let mut kept = Vec::with_capacity(replicates);
    for (b, s) in sets.into_iter().enumerate() {
        match s {
            Ok(s) => kept.push(s),
            Err(e) => log::warn!("band replicate {b} dropped: {e}"),
        }
    }
    if kept.is_empty() {
        return Err(Error::Estimation("every band replicate failed".into()));
    }
    let (lo, hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let n = diag.len();
    let d = diag.dim();
    let mut qq_lower = Array2::zeros((n, d));
    let mut qq_upper = Array2::zeros((n, d));
    let mut potential_lower = vec![0.0; n];
    let mut potential_upper = vec![0.0; n];
    let mut buf = Vec::with_capacity(kept.len());
    for j in 0..n {
        for k in 0..d {
            buf.clear();
            buf.extend(kept.iter().map(|s| s.transported_simulated[[j, k]]));
            buf.sort_by(f64::total_cmp);
            qq_lower[[j, k]] = quantile_type7(&buf, lo);
            qq_upper[[j, k]] = quantile_type7(&buf, hi);
        }
        buf.clear();
        buf.extend(kept.iter().map(|s| s.potential_simulated[j]));
        buf.sort_by(f64::total_cmp);
        potential_lower[j] = quantile_type7(&buf, lo);
        potential_upper[j] = quantile_type7(&buf, hi);
    }
    Ok(Bands { level, qq_lower, qq_upper, potential_lower, potential_upper, replicates: kept.len() })
}

const CSV_HEADER: &str = "ref_index,coord,obs,sim,weight,band_lo,band_hi\n";

fn qq_rows(out: &mut String, diag: &DiagnosticSet, bands: Option<&Bands>, k: usize) {
    use crate::io::fmt_f64;
    for j in 0..diag.len() {
        let band = bands.map(|b| (fmt_f64(b.qq_lower[[j, k]]), fmt_f64(b.qq_upper[[j, k]]))).unwrap_or_default();
        let _ = writeln!(
            out,
            "{j},x{},{},{},{},{},{}",
            k + 1,
            fmt_f64(diag.transported_observed[[j, k]]),
            fmt_f64(diag.transported_simulated[[j, k]]),
            fmt_f64(diag.weights[j]),
            band.0,
            band.1
        );
    }
}

fn potential_rows(out: &mut String, diag: &DiagnosticSet, bands: Option<&Bands>) {
    use crate::io::fmt_f64;
    for j in 0..diag.len() {
        let band = bands.map(|b| (fmt_f64(b.potential_lower[j]), fmt_f64(b.potential_upper[j]))).unwrap_or_default();
        let _ = writeln!(
            out,
            "{j},potential,{},{},{},{},{}",
            fmt_f64(diag.potential_observed[j]),
            fmt_f64(diag.potential_simulated[j]),
            fmt_f64(diag.weights[j]),
            band.0,
            band.1
        );
    }
}

/// Q-Q plot data for coordinate `coord` (zero-based), with columns
/// `ref_index,coord,obs,sim,weight,band_lo,band_hi`; band columns are empty
/// without bands.
pub fn qq_csv(diag: &DiagnosticSet, bands: Option<&Bands>, coord: usize) -> Result<String> {
    if coord >= diag.dim() {
        return Err(Error::InvalidParameter(format!("coordinate {coord} out of range for dimension {}", diag.dim())));
    }
    let mut out = String::from(CSV_HEADER);
    qq_rows(&mut out, diag, bands, coord);
    Ok(out)
}

/// Potential plot data, same columns as [`qq_csv`] with `coord = potential`.
pub fn potential_csv(diag: &DiagnosticSet, bands: Option<&Bands>) -> String {
    let mut out = String::from(CSV_HEADER);
    potential_rows(&mut out, diag, bands);
    out
}

/// Every Q-Q coordinate followed by the potentials, in one table.
pub fn to_csv(diag: &DiagnosticSet, bands: Option<&Bands>) -> String {
    let mut out = String::from(CSV_HEADER);
    for k in 0..diag.dim() {
        qq_rows(&mut out, diag, bands, k);
    }
    potential_rows(&mut out, diag, bands);
    out
}

/// Self-contained scatter plot with the diagonal; marker area follows the weights.
pub fn scatter_svg(pairs: &[WeightedPair], title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b, _) in pairs {
        lo = lo.min(a).min(b);
        hi = hi.max(a).max(b);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let span = SIZE - 2.0 * PAD;
    let px = |v: f64| PAD + (v - lo) / (hi - lo) * span;
    let py = |v: f64| SIZE - PAD - (v - lo) / (hi - lo) * span;
    let wmax = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{span}\" height=\"{span}\" fill=\"none\" stroke=\"black\"/>\n\
         <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>\n",
        SIZE / 2.0,
        px(lo),
        py(lo),
        px(hi),
        py(hi)
    );
    for &(a, b, w) in pairs {
        let r = if wmax > 0.0 { 1.5 + 4.5 * (w / wmax).sqrt() } else { 2.0 };
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r:.2}\" fill=\"steelblue\" fill-opacity=\"0.6\"/>", px(a), py(b));
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">observed</text>",
        SIZE / 2.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"12\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 12 {})\">fitted</text>",
        SIZE / 2.0,
        SIZE / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}
