//! Transport-based point estimators.
//!
//! Both estimators minimize, over a parameter box, the Sinkhorn divergence
//! between the observed measure and a simulated one. The simulated sample is
//! a deterministic function of the parameters: one tape of base randomness
//! is drawn per run and mapped through every candidate (common random
//! numbers). The adaptive estimator adds a ridge penalty pulling towards a
//! neural estimate and keeps that estimate among its final candidates, so
//! its divergence can never exceed the one at the neural estimate.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{Simulator, Tape};
use crate::param::Bounds;
use crate::rng::{open01, RandomSource};
use crate::sinkhorn::{divergence_with_self, self_transport, Divergence, SelfTransport, SinkhornConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadSettings {
    /// Initial simplex edge as a fraction of the box width per coordinate.
    pub initial_step: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_evals: usize,
    /// Stop when every vertex is within this sup-distance of the best one...
    pub x_tolerance: f64,
    /// ...and the simplex values span less than this.
    pub f_tolerance: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_evals: 400,
            x_tolerance: 1e-6,
            f_tolerance: 1e-12,
        }
    }
}

impl NelderMeadSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.max_evals >= 1
            && self.x_tolerance >= 0.0
            && self.f_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid Nelder-Mead settings".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    /// Best point ever evaluated.
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// False when the evaluation budget ran out first.
    pub converged: bool,
}

/// Tracks the best evaluated point; non-finite values rank last.
struct Tracked<F> {
    f: F,
    evals: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Tracked<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        let raw = (self.f)(x)?;
        self.evals += 1;
        let v = if raw.is_nan() { f64::INFINITY } else { raw };
        if self.best.as_ref().is_none_or(|(_, b)| v < *b) {
            self.best = Some((x.to_vec(), v));
        }
        Ok(v)
    }
}

/// Derivative-free simplex minimization, with every trial point projected
/// into `bounds`.
pub fn nelder_mead<F>(f: F, x0: &[f64], bounds: &Bounds, settings: &NelderMeadSettings) -> Result<Optimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    settings.validate()?;
    let d = x0.len();
    if d == 0 || bounds.dim() != d {
        return Err(Error::DimensionMismatch { expected: bounds.dim(), got: d });
    }
    if !bounds.contains(x0) {
        return Err(Error::OutsideSupport("optimizer start lies outside the parameter box".into()));
    }
    let mut t = Tracked { f, evals: 0, best: None };
    let widths = bounds.widths();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = t.eval(x0)?;
    simplex.push((x0.to_vec(), v0));
    for k in 0..d {
        let mut x = x0.to_vec();
        let step = settings.initial_step * if widths[k] > 0.0 { widths[k] } else { 1.0 };
        x[k] = if x0[k] + step <= bounds.upper[k] { x0[k] + step } else { x0[k] - step };
        bounds.project(&mut x);
        let v = t.eval(&x)?;
        simplex.push((x, v));
    }
    let mut converged = false;
    let order = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    let point = |centroid: &[f64], worst: &[f64], coef: f64| -> Vec<f64> {
        let mut x: Vec<f64> = centroid.iter().zip(worst).map(|(c, w)| c + coef * (c - w)).collect();
        bounds.project(&mut x);
        x
    };
    while t.evals < settings.max_evals {
        simplex.sort_by(order);
        let best = &simplex[0];
        let spread_f = simplex[d].1 - best.1;
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f <= settings.f_tolerance && spread_x <= settings.x_tolerance {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let xr = point(&centroid, &worst.0, settings.reflection);
        let fr = t.eval(&xr)?;
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst.0, settings.reflection * settings.expansion);
            let fe = t.eval(&xe)?;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = point(&centroid, &worst.0, settings.reflection * settings.contraction);
            let fc = t.eval(&xc)?;
            (xc, fc)
        } else {
            let xc = point(&centroid, &worst.0, -settings.contraction);
            let fc = t.eval(&xc)?;
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, v)| a + settings.shrink * (v - a)).collect();
            bounds.project(&mut x);
            let v = t.eval(&x)?;
            *vertex = (x, v);
        }
    }
    let (x, value) = t.best.expect("at least one evaluation");
    if !converged {
        log::warn!("Nelder-Mead stopped after {} evaluations without meeting its tolerances", t.evals);
    }
    Ok(Optimum { x, value, evals: t.evals, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwConfig {
    /// Weight of the ridge penalty towards the neural estimate.
    pub lambda: f64,
    /// Simulated sample size.
    pub m: usize,
    pub sinkhorn: SinkhornConfig,
    /// Source of the shared simulation tape and of the random restarts.
    pub crn: RandomSource,
    pub optimizer: NelderMeadSettings,
    pub bounds: Bounds,
    /// Optimizer runs; the first starts at the neural estimate (adaptive
    /// estimator) or at a random point (plain transport estimator).
    pub multistart: usize,
}

impl AwConfig {
    /// Defaults for `n` observations: penalty `1/n` and `m = n`.
    pub fn for_sample_size(n: usize, bounds: Bounds, crn: RandomSource) -> Self {
        Self {
            lambda: 1.0 / n.max(1) as f64,
            m: n.max(1),
            sinkhorn: SinkhornConfig::default(),
            crn,
            optimizer: NelderMeadSettings::default(),
            bounds,
            multistart: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("penalty weight must be >= 0, got {}", self.lambda)));
        }
        if self.m == 0 || self.multistart == 0 {
            return Err(Error::InvalidParameter("simulation size and restarts must be positive".into()));
        }
        self.sinkhorn.validate()?;
        self.optimizer.validate()
    }

    pub fn tape_source(&self) -> RandomSource {
        self.crn.split(0)
    }

    pub fn start_source(&self) -> RandomSource {
        self.crn.split(1)
    }
}

/// `Q(theta) = S_eps(observed, simulated(theta)) + lambda |theta - center|^2`
/// with the observed self-transport term and the tape cached.
pub struct Criterion<'a> {
    observed: &'a EmpiricalMeasure,
    observed_self: SelfTransport,
    simulator: &'a dyn Simulator,
    tape: Tape,
    center: Option<Vec<f64>>,
    lambda: f64,
    sinkhorn: SinkhornConfig,
}

impl<'a> Criterion<'a> {
    pub fn new(
        observed: &'a EmpiricalMeasure,
        simulator: &'a dyn Simulator,
        cfg: &AwConfig,
        center: Option<&[f64]>,
    ) -> Result<Self> {
        cfg.validate()?;
        if observed.dim() != simulator.data_dim() {
            return Err(Error::DimensionMismatch { expected: simulator.data_dim(), got: observed.dim() });
        }
        if cfg.bounds.dim() != simulator.param_dim() {
            return Err(Error::DimensionMismatch { expected: simulator.param_dim(), got: cfg.bounds.dim() });
        }
        if let Some(c) = center {
            if c.len() != simulator.param_dim() {
                return Err(Error::DimensionMismatch { expected: simulator.param_dim(), got: c.len() });
            }
        }
        Ok(Self {
            observed,
            observed_self: self_transport(observed, &cfg.sinkhorn)?,
            simulator,
            tape: simulator.draw_tape(cfg.m, &cfg.tape_source())?,
            center: center.map(<[f64]>::to_vec),
            lambda: cfg.lambda,
            sinkhorn: cfg.sinkhorn,
        })
    }

    /// Simulated measure at `theta` under the shared tape.
    pub fn simulated(&self, theta: &[f64]) -> Result<EmpiricalMeasure> {
        let sample = self.simulator.simulate(theta, &self.tape)?;
        self.simulator.measure(sample.view())
    }

    pub fn discrepancy(&self, theta: &[f64]) -> Result<Divergence> {
        let nu = self.simulated(theta)?;
        let d = divergence_with_self(self.observed, &self.observed_self, &nu, &self.sinkhorn)?;
        if !d.converged {
            log::warn!("sinkhorn solve at theta = {theta:?} did not converge; using its last iterate");
        }
        Ok(d)
    }

    pub fn penalty(&self, theta: &[f64]) -> f64 {
        match &self.center {
            Some(c) if self.lambda > 0.0 => self.lambda * theta.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
            _ => 0.0,
        }
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.discrepancy(theta)?.value + self.penalty(theta))
    }
}

/// One evaluation of the adaptive criterion.
pub fn qn_objective(
    theta: &[f64],
    observed: &EmpiricalMeasure,
    nbe_init: &[f64],
    cfg: &AwConfig,
    simulator: &dyn Simulator,
) -> Result<f64> {
    if !cfg.bounds.contains(theta) {
        return Err(Error::OutsideSupport(format!("theta {theta:?} lies outside the parameter box")));
    }
    Criterion::new(observed, simulator, cfg, Some(nbe_init))?.value(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub theta: Vec<f64>,
    /// Criterion value.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub theta: Vec<f64>,
    /// Criterion value at `theta`.
    pub value: f64,
    /// Sinkhorn divergence at `theta` (criterion without the penalty).
    pub discrepancy: f64,
    /// Sinkhorn divergence at the neural estimate, when one was supplied.
    pub nbe_discrepancy: Option<f64>,
    pub evals: usize,
    /// Every optimizer run met its tolerances.
    pub converged: bool,
    /// All compared candidates, best first.
    pub candidates: Vec<Candidate>,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    a.value.total_cmp(&b.value).then_with(|| {
        a.theta.iter().zip(&b.theta).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

fn random_start(bounds: &Bounds, src: &RandomSource) -> Vec<f64> {
    let mut rng = src.rng();
    bounds.lower.iter().zip(&bounds.upper).map(|(l, u)| l + (u - l) * open01(&mut rng)).collect()
}

fn run_starts(criterion: &Criterion<'_>, starts: &[Vec<f64>], cfg: &AwConfig) -> Result<Vec<Optimum>> {
    starts
        .par_iter()
        .map(|x0| nelder_mead(|theta| criterion.value(theta), x0, &cfg.bounds, &cfg.optimizer))
        .collect()
}

fn finish(criterion: &Criterion<'_>, mut candidates: Vec<Candidate>, runs: &[Optimum], nbe: Option<f64>) -> Result<Estimate> {
    candidates.sort_by(rank);
    let best = candidates[0].clone();
    let converged = runs.iter().all(|r| r.converged);
    if !converged {
        log::warn!("not every optimizer run converged; returning the best evaluated point");
    }
    Ok(Estimate {
        discrepancy: criterion.discrepancy(&best.theta)?.value,
        theta: best.theta,
        value: best.value,
        nbe_discrepancy: nbe,
        evals: runs.iter().map(|r| r.evals).sum(),
        converged,
        candidates,
    })
}

/// Minimum Sinkhorn divergence estimate from `cfg.multistart` random starts.
/// The penalty weight is ignored.
pub fn estimate_eot(observed: &EmpiricalMeasure, cfg: &AwConfig, simulator: &dyn Simulator) -> Result<Estimate> {
    let cfg = AwConfig { lambda: 0.0, ..cfg.clone() };
    let criterion = Criterion::new(observed, simulator, &cfg, None)?;
    let src = cfg.start_source();
    let starts: Vec<Vec<f64>> = (0..cfg.multistart).map(|k| random_start(&cfg.bounds, &src.split(k as u64))).collect();
    let runs = run_starts(&criterion, &starts, &cfg)?;
    let candidates = runs.iter().map(|r| Candidate { theta: r.x.clone(), value: r.value }).collect();
    finish(&criterion, candidates, &runs, None)
}

/// Adaptive estimate: minimizes the penalized criterion from the neural
/// estimate (plus `multistart - 1` random starts) and compares the result
/// against the neural estimate itself.
pub fn estimate_awnbe(
    observed: &EmpiricalMeasure,
    nbe_init: &[f64],
    cfg: &AwConfig,
    simulator: &dyn Simulator,
) -> Result<Estimate> {
    if !cfg.bounds.contains(nbe_init) {
        return Err(Error::OutsideSupport(format!("neural estimate {nbe_init:?} lies outside the parameter box")));
    }
    let criterion = Criterion::new(observed, simulator, cfg, Some(nbe_init))?;
    let src = cfg.start_source();
    let mut starts = vec![nbe_init.to_vec()];
    starts.extend((1..cfg.multistart).map(|k| random_start(&cfg.bounds, &src.split(k as u64))));
    let runs = run_starts(&criterion, &starts, cfg)?;
    let at_nbe = criterion.discrepancy(nbe_init)?.value;
    let mut candidates: Vec<Candidate> = runs.iter().map(|r| Candidate { theta: r.x.clone(), value: r.value }).collect();
    candidates.push(Candidate { theta: nbe_init.to_vec(), value: at_nbe });
    finish(&criterion, candidates, &runs, Some(at_nbe))
}

/// Posterior median of `theta` for `Unif(0, theta)` data under a
/// `Pareto(alpha, beta)` prior: `2^(1/(alpha+n)) max(x_1, .., x_n, beta)`.
pub fn bayes_uniform_pareto(sample: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("sample"));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidParameter("alpha and beta must be positive".into()));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sample"));
    }
    let m = sample.iter().copied().fold(beta, f64::max);
    Ok(2f64.powf(1.0 / (alpha + sample.len() as f64)) * m)
}

/// Minimizer of `W2^2(Unif(0, theta0), Unif(0, theta)) + lambda (theta - bayes)^2`:
/// `theta0 / (1 + 3 lambda) + (1 - 1 / (1 + 3 lambda)) bayes`. Needs `lambda >= 0`.
pub fn oracle_aw_1d(theta0: f64, bayes_est: f64, lambda: f64) -> f64 {
    let w = 1.0 / (1.0 + 3.0 * lambda);
    w * theta0 + (1.0 - w) * bayes_est
}

/// Squared 2-Wasserstein distance between `Unif(0, theta0)` and `Unif(0, theta)`.
pub fn w2sq_uniform(theta0: f64, theta: f64) -> Result<f64> {
    if !(theta0 > 0.0 && theta > 0.0) {
        return Err(Error::InvalidParameter("uniform upper bounds must be positive".into()));
    }
    Ok((theta - theta0).powi(2) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UniformModel;

    fn boxed(d: usize, l: f64, u: f64) -> Bounds {
        Bounds::new(vec![l; d], vec![u; d]).unwrap()
    }

    fn tight() -> NelderMeadSettings {
        NelderMeadSettings { x_tolerance: 1e-9, f_tolerance: 1e-16, max_evals: 5000, ..Default::default() }
    }

    #[test]
    fn quadratic_minimum() {
        for d in 1..=4 {
            let a: Vec<f64> = (0..d).map(|k| 0.3 * k as f64 - 0.4).collect();
            let f = |x: &[f64]| Ok(x.iter().zip(&a).map(|(u, v)| (u - v).powi(2)).sum::<f64>());
            let opt = nelder_mead(f, &vec![1.0; d], &boxed(d, -3.0, 3.0), &tight()).unwrap();
            assert!(opt.converged);
            for (x, t) in opt.x.iter().zip(&a) {
                assert!((x - t).abs() < 1e-6, "d = {d}: {:?}", opt.x);
            }
        }
    }

    #[test]
    fn constant_returns_start() {
        let opt = nelder_mead(|_| Ok(2.5), &[0.3, -0.2], &boxed(2, -1.0, 1.0), &tight()).unwrap();
        assert_eq!(opt.x, vec![0.3, -0.2]);
        assert_eq!(opt.value, 2.5);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let s = NelderMeadSettings { max_evals: 2000, x_tolerance: 1e-10, f_tolerance: 1e-20, ..Default::default() };
        let opt = nelder_mead(f, &[-1.2, 1.0], &boxed(2, -5.0, 5.0), &s).unwrap();
        assert!(opt.value < 1e-6, "{opt:?}");
        assert!(opt.evals <= 2000);
    }

    #[test]
    fn box_constraint_respected() {
        let mut seen = Vec::new();
        let f = |x: &[f64]| {
            seen.push(x.to_vec());
            Ok((x[0] - 5.0).powi(2))
        };
        let opt = nelder_mead(f, &[0.0], &boxed(1, -1.0, 1.0), &tight()).unwrap();
        assert!((opt.x[0] - 1.0).abs() < 1e-9);
        assert!(seen.iter().all(|x| x[0] >= -1.0 && x[0] <= 1.0));
    }

    #[test]
    fn start_outside_box_rejected() {
        assert!(nelder_mead(|_| Ok(0.0), &[2.0], &boxed(1, -1.0, 1.0), &tight()).is_err());
    }

    fn uniform_setup(theta: f64, n: usize, seed: u64) -> (EmpiricalMeasure, AwConfig) {
        let bounds = Bounds::new(vec![0.1], vec![5.0]).unwrap();
        let cfg = AwConfig::for_sample_size(n, bounds, RandomSource::new(seed));
        let x = UniformModel.sample(&[theta], n, &RandomSource::new(seed + 1000)).unwrap();
        (EmpiricalMeasure::uniform(x).unwrap(), cfg)
    }

    #[test]
    fn crn_self_consistent_sample_has_zero_objective() {
        let bounds = Bounds::new(vec![0.1], vec![5.0]).unwrap();
        let cfg = AwConfig { lambda: 0.0, ..AwConfig::for_sample_size(60, bounds, RandomSource::new(3)) };
        let tape = UniformModel.draw_tape(60, &cfg.tape_source()).unwrap();
        let x = UniformModel.simulate(&[1.7], &tape).unwrap();
        let obs = EmpiricalMeasure::uniform(x).unwrap();
        let q = qn_objective(&[1.7], &obs, &[1.0], &cfg, &UniformModel).unwrap();
        assert!(q.abs() <= 1e-9, "{q}");
        let cfg = AwConfig { optimizer: NelderMeadSettings { x_tolerance: 1e-7, ..tight() }, ..cfg };
        let est = estimate_eot(&obs, &cfg, &UniformModel).unwrap();
        assert!((est.theta[0] - 1.7).abs() < 1e-5, "{est:?}");
    }

    #[test]
    fn objective_is_deterministic_and_penalized() {
        let (obs, cfg) = uniform_setup(1.0, 50, 4);
        let a = qn_objective(&[1.3], &obs, &[2.0], &cfg, &UniformModel).unwrap();
        let b = qn_objective(&[1.3], &obs, &[2.0], &cfg, &UniformModel).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let big = AwConfig { lambda: 1e6, ..cfg.clone() };
        let q = qn_objective(&[1.3], &obs, &[2.0], &big, &UniformModel).unwrap();
        assert!((q / (1e6 * 0.49) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn awnbe_never_worse_than_its_start() {
        for seed in 0..4 {
            let (obs, cfg) = uniform_setup(1.0, 80, 10 + seed);
            let cfg = AwConfig { optimizer: NelderMeadSettings { x_tolerance: 1e-4, ..Default::default() }, ..cfg };
            let nbe = [1.0 + 0.3 * seed as f64];
            let est = estimate_awnbe(&obs, &nbe, &cfg, &UniformModel).unwrap();
            assert!(est.discrepancy <= est.nbe_discrepancy.unwrap());
        }
    }

    #[test]
    fn huge_penalty_pins_neural_estimate() {
        let (obs, cfg) = uniform_setup(1.0, 60, 5);
        let cfg = AwConfig { lambda: 1e9, ..cfg };
        let est = estimate_awnbe(&obs, &[2.2], &cfg, &UniformModel).unwrap();
        assert!((est.theta[0] - 2.2).abs() < 1e-6, "{est:?}");
    }

    #[test]
    fn more_restarts_never_hurt() {
        let (obs, cfg) = uniform_setup(1.0, 60, 6);
        let cfg = AwConfig { optimizer: NelderMeadSettings { x_tolerance: 1e-4, ..Default::default() }, ..cfg };
        let one = estimate_eot(&obs, &AwConfig { multistart: 1, ..cfg.clone() }, &UniformModel).unwrap();
        let five = estimate_eot(&obs, &AwConfig { multistart: 5, ..cfg }, &UniformModel).unwrap();
        assert!(five.value <= one.value);
    }

    #[test]
    fn closed_forms() {
        assert!((bayes_uniform_pareto(&[0.5], 1.0, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(bayes_uniform_pareto(&[0.1, 0.2], 2.0, 1.0).unwrap(), 2f64.powf(0.25));
        assert!(bayes_uniform_pareto(&[], 1.0, 1.0).is_err());
        assert_eq!(oracle_aw_1d(1.0, 2.0, 1.0 / 3.0), 1.5);
        assert_eq!(oracle_aw_1d(1.0, 2.0, 0.0), 1.0);
        assert!((oracle_aw_1d(1.0, 2.0, 1e12) - 2.0).abs() < 1e-11);
        assert_eq!(w2sq_uniform(1.0, 2.0).unwrap(), 1.0 / 3.0);
        assert_eq!(w2sq_uniform(2.0, 2.0).unwrap(), 0.0);
        assert!(w2sq_uniform(0.0, 1.0).is_err());
    }
}
