//! Discrete multivariate generalized Pareto vectors and the bivariate
//! variable-length Markov chain generator.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgpd::{spectral, GeneratorSpec, XI_EPS};
use crate::param::ParamVector;
use crate::rng::{open01, RandomSource};

/// One leaf of the context tree. `suffix` lists joint symbols from oldest to
/// newest; a joint symbol encodes the station pair `(a, b)` as `a * alphabet + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub suffix: Vec<usize>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmcSpec {
    /// Symbols per station.
    pub alphabet: usize,
    pub max_depth: usize,
    pub contexts: Vec<Context>,
}

impl VlmcSpec {
    pub fn joint_size(&self) -> usize {
        self.alphabet * self.alphabet
    }

    /// Memoryless chain with one table over joint symbols.
    pub fn iid(alphabet: usize, probs: Vec<f64>) -> Result<Self> {
        let spec = Self { alphabet, max_depth: 0, contexts: vec![Context { suffix: vec![], probs }] };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet == 0 {
            return Err(Error::InvalidSpec("VLMC alphabet must be positive".into()));
        }
        let k = self.joint_size();
        let mut seen = HashMap::new();
        for (i, c) in self.contexts.iter().enumerate() {
            if c.suffix.len() > self.max_depth {
                return Err(Error::InvalidSpec(format!("context {i} longer than max_depth")));
            }
            if c.suffix.iter().any(|&s| s >= k) {
                return Err(Error::InvalidSpec(format!("context {i} uses a symbol outside 0..{k}")));
            }
            if c.probs.len() != k {
                return Err(Error::InvalidSpec(format!("context {i} needs {k} probabilities, got {}", c.probs.len())));
            }
            if c.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidSpec(format!("context {i} has a negative or non-finite probability")));
            }
            let total: f64 = c.probs.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidSpec(format!("context {i} probabilities sum to {total}")));
            }
            if seen.insert(c.suffix.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate context {:?}", c.suffix)));
            }
        }
        for c in &self.contexts {
            for start in 1..=c.suffix.len() {
                if seen.contains_key(&c.suffix[start..]) {
                    return Err(Error::InvalidSpec(format!(
                        "context {:?} extends context {:?}; matches would be ambiguous",
                        c.suffix,
                        &c.suffix[start..]
                    )));
                }
            }
        }
        if !self.covers(&mut Vec::new(), &seen) {
            return Err(Error::InvalidSpec("context set does not cover every history".into()));
        }
        Ok(())
    }

    /// Every history ending in `tail` (oldest first) has a matching context.
    fn covers(&self, tail: &mut Vec<usize>, set: &HashMap<Vec<usize>, usize>) -> bool {
        if set.contains_key(tail.as_slice()) {
            return true;
        }
        if tail.len() >= self.max_depth {
            return false;
        }
        for s in 0..self.joint_size() {
            tail.insert(0, s);
            let ok = self.covers(tail, set);
            tail.remove(0);
            if !ok {
                return false;
            }
        }
        true
    }
}

struct Chain<'a> {
    spec: &'a VlmcSpec,
    index: HashMap<&'a [usize], usize>,
    cdfs: Vec<Vec<f64>>,
    history: Vec<usize>,
}

impl<'a> Chain<'a> {
    fn new(spec: &'a VlmcSpec) -> Self {
        let index = spec.contexts.iter().enumerate().map(|(i, c)| (c.suffix.as_slice(), i)).collect();
        let cdfs = spec
            .contexts
            .iter()
            .map(|c| {
                c.probs
                    .iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Self { spec, index, cdfs, history: vec![0; spec.max_depth] }
    }

    fn context(&self) -> usize {
        let h = &self.history;
        for len in 0..=self.spec.max_depth.min(h.len()) {
            if let Some(&i) = self.index.get(&h[h.len() - len..]) {
                return i;
            }
        }
        unreachable!("validated context set is complete")
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let cdf = &self.cdfs[self.context()];
        let u = open01(rng);
        let x = cdf.iter().position(|&c| u <= c).unwrap_or(cdf.len() - 1);
        if self.spec.max_depth > 0 {
            self.history.remove(0);
            self.history.push(x);
        }
        x
    }

    fn burn_in<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for _ in 0..10 * self.spec.max_depth.max(1) {
            self.step(rng);
        }
    }
}

/// Bivariate trajectory, one `(station 1, station 2)` row per step.
pub fn sample_vlmc(spec: &VlmcSpec, length: usize, src: &RandomSource) -> Result<Array2<i64>> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::Empty("trajectory length"));
    }
    let mut rng = src.rng();
    let mut chain = Chain::new(spec);
    chain.burn_in(&mut rng);
    let mut out = Array2::zeros((length, 2));
    for t in 0..length {
        let x = chain.step(&mut rng);
        out[[t, 0]] = (x / spec.alphabet) as i64;
        out[[t, 1]] = (x % spec.alphabet) as i64;
    }
    Ok(out)
}

/// Final bivariate state after `window` steps past the burn-in.
pub fn vlmc_generator_draw(spec: &VlmcSpec, window: usize, src: &RandomSource) -> Result<[i64; 2]> {
    spec.validate()?;
    if window < spec.max_depth.max(1) {
        return Err(Error::InvalidParameter(format!("window {window} shorter than context depth {}", spec.max_depth)));
    }
    Ok(vlmc_generator_draw_with(spec, window, &mut src.rng()))
}

pub(crate) fn vlmc_generator_draw_with<R: Rng + ?Sized>(spec: &VlmcSpec, window: usize, rng: &mut R) -> [i64; 2] {
    let mut chain = Chain::new(spec);
    chain.burn_in(rng);
    let mut x = 0;
    for _ in 0..window.max(1) {
        x = chain.step(rng);
    }
    [(x / spec.alphabet) as i64, (x % spec.alphabet) as i64]
}

/// Law of the maximum of a standard discrete vector: `P(G >= g) = (1 - p)^g`
/// on `{0, 1, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricRadial {
    pub p: f64,
}

impl Default for GeometricRadial {
    /// `P(G >= g) = exp(-g)`, the lattice counterpart of `Exp(1)`.
    fn default() -> Self {
        Self { p: 1.0 - (-1.0f64).exp() }
    }
}

impl GeometricRadial {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("geometric probability {p} outside (0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn pmf(&self, g: u64) -> f64 {
        self.p * (1.0 - self.p).powi(g as i32)
    }

    /// Inversion of a uniform draw.
    pub fn from_uniform(&self, u: f64) -> f64 {
        (u.ln() / (-self.p).ln_1p()).floor()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.from_uniform(open01(rng))
    }
}

/// Rows `N = T - max(T) + G`.
pub fn sample_standard_mdgpd(
    gen: &GeneratorSpec,
    radial: GeometricRadial,
    n: usize,
    src: &RandomSource,
) -> Result<Array2<f64>> {
    gen.validate()?;
    if !gen.is_integer() {
        return Err(Error::InvalidSpec("discrete model needs an integer-valued generator".into()));
    }
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let d = gen.dimension;
    let mut rng = src.rng();
    let mut t = vec![0.0; d];
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        gen.draw_base(&mut rng, &mut t);
        spectral(&mut t);
        let g = radial.sample(&mut rng);
        for (o, s) in row.iter_mut().zip(&t) {
            *o = s + g;
        }
    }
    Ok(out)
}

/// `log(1 + xi * k / sigma) / xi`, the standard-scale level of data level `k`.
fn standard_level(k: f64, sigma: f64, xi: f64) -> Result<f64> {
    let arg = 1.0 + xi * k / sigma;
    if arg <= 0.0 {
        return Err(Error::OutsideSupport(format!("1 + xi * k / sigma = {arg} at k = {k}")));
    }
    Ok(if xi.abs() < XI_EPS { k / sigma } else { arg.ln() / xi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `P(M <= k)` for the non-standard discrete model,
/// averaging `1 - min(1, exp(max(S - level(k))))` over spectral draws.
pub fn mdgpd_cdf_mc(
    k: &[f64],
    theta: &ParamVector,
    gen: &GeneratorSpec,
    n_mc: usize,
    src: &RandomSource,
) -> Result<McEstimate> {
    gen.validate()?;
    let d = gen.dimension;
    if k.len() != d || theta.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.len() });
    }
    if n_mc == 0 {
        return Err(Error::Empty("Monte Carlo size"));
    }
    let levels = (0..d)
        .map(|j| standard_level(k[j], theta.sigma[j], theta.xi[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = src.rng();
    let mut base = vec![0.0; gen.base_width()];
    let mut t = vec![0.0; d];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        gen.draw_base(&mut rng, &mut base);
        gen.generator_from_base(&gen.params, &base, &mut t);
        spectral(&mut t);
        let top = t.iter().zip(&levels).map(|(s, l)| s - l).fold(f64::NEG_INFINITY, f64::max);
        let v = 1.0 - top.exp().min(1.0);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_mc as f64;
    let estimate = sum / n;
    let var = if n_mc > 1 { ((sum_sq - n * estimate * estimate) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(McEstimate { estimate, std_error: (var / n).sqrt() })
}

/// Integer draw from the non-standard discrete model: the continuous
/// marginal transform of `S + E`, rounded up. Rounding up makes
/// `P(M <= k)` at integer `k` coincide with [`mdgpd_cdf_mc`].
pub fn sample_mdgpd(theta: &ParamVector, gen: &GeneratorSpec, n: usize, src: &RandomSource) -> Result<Array2<f64>> {
    gen.validate()?;
    if theta.dim() != gen.dimension {
        return Err(Error::DimensionMismatch { expected: gen.dimension, got: theta.dim() });
    }
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let d = gen.dimension;
    let mut rng = src.rng();
    let mut base = vec![0.0; gen.base_width()];
    let mut t = vec![0.0; d];
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        gen.draw_base(&mut rng, &mut base);
        gen.generator_from_base(&gen.params, &base, &mut t);
        spectral(&mut t);
        let e: f64 = Exp1.sample(&mut rng);
        for (j, o) in row.iter_mut().enumerate() {
            *o = crate::mgpd::margin_transform(t[j] + e, theta.sigma[j], theta.xi[j]).ceil();
        }
    }
    Ok(out)
}

/// Kendall's tau-b of two integer columns.
pub fn kendall_tau(x: &[i64], y: &[i64]) -> f64 {
    let mut xs: Vec<i64> = x.to_vec();
    let mut ys: Vec<i64> = y.to_vec();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let mut table = vec![vec![0.0f64; ys.len()]; xs.len()];
    for (a, b) in x.iter().zip(y) {
        let i = xs.binary_search(a).unwrap();
        let j = ys.binary_search(b).unwrap();
        table[i][j] += 1.0;
    }
    let (r, c) = (xs.len(), ys.len());
    let (mut conc, mut disc) = (0.0, 0.0);
    for i in 0..r {
        for j in 0..c {
            let nij = table[i][j];
            if nij == 0.0 {
                continue;
            }
            for k in i + 1..r {
                for l in 0..c {
                    if l > j {
                        conc += nij * table[k][l];
                    } else if l < j {
                        disc += nij * table[k][l];
                    }
                }
            }
        }
    }
    let n = x.len() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    let ties = |counts: Vec<f64>| counts.iter().map(|t| t * (t - 1.0) / 2.0).sum::<f64>();
    let tx = ties(table.iter().map(|row| row.iter().sum()).collect());
    let ty = ties((0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect());
    let denom = ((pairs - tx) * (pairs - ty)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (conc - disc) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alternating() -> VlmcSpec {
        // joint symbols 0..4 with alphabet 2; 0 -> 1 -> 0 and 2 -> 3 -> 2
        let forced = |to: usize| {
            let mut p = vec![0.0; 4];
            p[to] = 1.0;
            p
        };
        VlmcSpec {
            alphabet: 2,
            max_depth: 1,
            contexts: vec![
                Context { suffix: vec![0], probs: forced(1) },
                Context { suffix: vec![1], probs: forced(0) },
                Context { suffix: vec![2], probs: forced(3) },
                Context { suffix: vec![3], probs: forced(2) },
            ],
        }
    }

    #[test]
    fn alternating_chain() {
        let path = sample_vlmc(&alternating(), 50, &RandomSource::new(1)).unwrap();
        for t in 1..50 {
            let prev = path[[t - 1, 0]] * 2 + path[[t - 1, 1]];
            let cur = path[[t, 0]] * 2 + path[[t, 1]];
            assert_eq!(cur, 1 - prev);
        }
    }

    #[test]
    fn iid_frequencies_match_table() {
        let probs = vec![0.1, 0.2, 0.3, 0.4];
        let spec = VlmcSpec::iid(2, probs.clone()).unwrap();
        let path = sample_vlmc(&spec, 100_000, &RandomSource::new(2)).unwrap();
        let mut counts = [0.0; 4];
        for row in path.rows() {
            counts[(row[0] * 2 + row[1]) as usize] += 1.0;
        }
        for (c, p) in counts.iter().zip(&probs) {
            assert!((c / 1e5 - p).abs() < 0.02);
        }
    }

    #[test]
    fn deterministic_table_constant() {
        let spec = VlmcSpec::iid(3, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let path = sample_vlmc(&spec, 20, &RandomSource::new(3)).unwrap();
        assert!(path.rows().into_iter().all(|r| r[0] == 1 && r[1] == 2));
        for s in 0..5 {
            assert_eq!(vlmc_generator_draw(&spec, 10, &RandomSource::new(s)).unwrap(), [1, 2]);
        }
    }

    #[test]
    fn incomplete_or_ambiguous_contexts_rejected() {
        let mut spec = alternating();
        spec.contexts.pop();
        assert!(spec.validate().is_err());
        let mut spec = alternating();
        spec.contexts.push(Context { suffix: vec![], probs: vec![0.25; 4] });
        assert!(spec.validate().is_err());
        let mut spec = alternating();
        spec.contexts[0].probs = vec![0.5, 0.6, 0.0, 0.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn variable_depth_tree_is_complete() {
        // depth 2 below symbol 0, depth 1 elsewhere
        let uniform = vec![0.25; 4];
        let mut contexts: Vec<Context> =
            (1..4).map(|s| Context { suffix: vec![s], probs: uniform.clone() }).collect();
        for s in 0..4 {
            contexts.push(Context { suffix: vec![s, 0], probs: uniform.clone() });
        }
        let spec = VlmcSpec { alphabet: 2, max_depth: 2, contexts };
        spec.validate().unwrap();
        assert_eq!(sample_vlmc(&spec, 100, &RandomSource::new(4)).unwrap().nrows(), 100);
    }

    #[test]
    fn independent_generator_has_no_dependence() {
        let pa = [0.2, 0.5, 0.3];
        let pb = [0.6, 0.1, 0.3];
        let probs = pa.iter().flat_map(|a| pb.iter().map(move |b| a * b)).collect();
        let spec = VlmcSpec::iid(3, probs).unwrap();
        let mut rng = RandomSource::new(5).rng();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let t = vlmc_generator_draw_with(&spec, 1, &mut rng);
            x.push(t[0]);
            y.push(t[1]);
        }
        assert!(kendall_tau(&x, &y).abs() < 0.03);
    }

    #[test]
    fn kendall_tau_extremes() {
        let x = [1, 2, 3, 4];
        assert!((kendall_tau(&x, &[1, 2, 3, 4]) - 1.0).abs() < 1e-12);
        assert!((kendall_tau(&x, &[4, 3, 2, 1]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn standard_draw_identities() {
        let gen = GeneratorSpec::discrete_table(&[(vec![0, 2], 0.5), (vec![1, -1], 0.3), (vec![3, 3], 0.2)]).unwrap();
        let n = sample_standard_mdgpd(&gen, GeometricRadial::default(), 1000, &RandomSource::new(6)).unwrap();
        for row in n.rows() {
            assert!(row.iter().all(|v| v.fract() == 0.0));
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(mx >= 0.0);
            assert_eq!(row.iter().map(|v| v - mx).fold(f64::NEG_INFINITY, f64::max), 0.0);
        }
        let one = GeneratorSpec::discrete_table(&[(vec![4], 0.5), (vec![-2], 0.5)]).unwrap();
        let src = RandomSource::new(7);
        let n1 = sample_standard_mdgpd(&one, GeometricRadial::default(), 500, &src).unwrap();
        // same stream: T draw then G draw per row
        let mut rng = src.rng();
        for row in n1.rows() {
            let mut t = [0.0];
            one.draw_base(&mut rng, &mut t);
            assert_eq!(row[0], GeometricRadial::default().sample(&mut rng));
        }
    }

    #[test]
    fn geometric_pmf_sums_to_one() {
        let g = GeometricRadial::default();
        let total: f64 = (0..200).map(|k| g.pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(GeometricRadial::new(1.0).is_err());
    }

    #[test]
    fn cdf_one_dimensional_exponential() {
        let gen = GeneratorSpec::discrete_table(&[(vec![0], 1.0)]).unwrap();
        let theta = ParamVector::new(vec![1.0], vec![0.0], vec![]).unwrap();
        let est = mdgpd_cdf_mc(&[1.0], &theta, &gen, 1000, &RandomSource::new(8)).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((est.estimate - exact).abs() <= 3.0 * est.std_error + 1e-12);
    }

    #[test]
    fn cdf_monotone_and_bounded() {
        let gen = GeneratorSpec::discrete_table(&[(vec![0, 2], 0.5), (vec![1, -1], 0.5)]).unwrap();
        let theta = ParamVector::new(vec![2.0, 1.0], vec![0.2, -0.1], vec![]).unwrap();
        let src = RandomSource::new(9);
        let mut prev = 0.0;
        for k in 0..6 {
            let k = k as f64;
            let e = mdgpd_cdf_mc(&[k, k], &theta, &gen, 2000, &src).unwrap();
            assert!((0.0..=1.0).contains(&e.estimate));
            assert!(e.estimate >= prev);
            prev = e.estimate;
        }
        let low = mdgpd_cdf_mc(&[-1.5, -0.9], &theta, &gen, 2000, &src).unwrap();
        assert!(low.estimate < 0.05);
        assert!(mdgpd_cdf_mc(&[0.0, 20.0], &theta, &gen, 10, &src).is_err());
    }

    #[test]
    fn sampler_matches_cdf() {
        let gen = GeneratorSpec::discrete_table(&[(vec![0, 1], 0.6), (vec![2, 0], 0.4)]).unwrap();
        let theta = ParamVector::new(vec![1.5, 2.0], vec![0.1, 0.0], vec![]).unwrap();
        let n = 40_000;
        let m = sample_mdgpd(&theta, &gen, n, &RandomSource::new(10)).unwrap();
        assert!(m.iter().all(|v| v.fract() == 0.0));
        for k in [[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]] {
            let emp = m.rows().into_iter().filter(|r| r[0] <= k[0] && r[1] <= k[1]).count() as f64 / n as f64;
            let mc = mdgpd_cdf_mc(&k, &theta, &gen, 40_000, &RandomSource::new(11)).unwrap();
            let se = (emp * (1.0 - emp) / n as f64).sqrt().hypot(mc.std_error);
            assert!((emp - mc.estimate).abs() < 4.0 * se + 1e-3, "k {k:?}: {emp} vs {}", mc.estimate);
        }
    }
}
