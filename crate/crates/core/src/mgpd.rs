//! Continuous multivariate generalized Pareto sampling.
//!
//! A standard draw is `Z = E + S` with `E ~ Exp(1)` and `S = T - max(T)`.
//! Data-scale draws apply `X = sigma * (exp(xi * Z) - 1) / xi` per margin.
//!
//! Every generator family is written as a fixed base draw plus a
//! deterministic map from its parameters, so a stored base sample can be
//! re-used across parameter values.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdgpd::VlmcSpec;
use crate::param::ParamVector;
use crate::rng::{open01, RandomSource};

/// Shape values closer to zero than this use the `sigma * z` limit.
pub const XI_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    GumbelT,
    GaussianT,
    ReverseExponentialT,
    DiscreteTable,
    #[serde(rename = "VLMC")]
    Vlmc,
}

/// Distribution of the generator vector `T`.
///
/// Parameter layouts:
/// - `GumbelT`: `d` scales, or one scale shared by all margins.
/// - `GaussianT`: `d` means, `d` standard deviations, one equicorrelation.
/// - `ReverseExponentialT`: `d` rates; `T_j = -E_j / rate_j`.
/// - `DiscreteTable`: rows of `d` integers followed by a probability.
/// - `VLMC`: `[window]` (optional, default 50) plus the chain in `vlmc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub dimension: usize,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlmc: Option<VlmcSpec>,
}

pub const DEFAULT_VLMC_WINDOW: usize = 50;

impl GeneratorSpec {
    pub fn gumbel(scales: Vec<f64>) -> Result<Self> {
        let spec = Self { family: Family::GumbelT, dimension: scales.len(), params: scales, vlmc: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gumbel_shared(dimension: usize, scale: f64) -> Result<Self> {
        let spec = Self { family: Family::GumbelT, dimension, params: vec![scale], vlmc: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(mean: &[f64], sd: &[f64], rho: f64) -> Result<Self> {
        let mut params = mean.to_vec();
        params.extend_from_slice(sd);
        params.push(rho);
        let spec = Self { family: Family::GaussianT, dimension: mean.len(), params, vlmc: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn reverse_exponential(rates: Vec<f64>) -> Result<Self> {
        let spec = Self { family: Family::ReverseExponentialT, dimension: rates.len(), params: rates, vlmc: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Finite-support generator from `(point, probability)` pairs.
    pub fn discrete_table(rows: &[(Vec<i64>, f64)]) -> Result<Self> {
        let dimension = rows.first().map_or(0, |r| r.0.len());
        let mut params = Vec::new();
        for (point, p) in rows {
            params.extend(point.iter().map(|&v| v as f64));
            params.push(*p);
        }
        let spec = Self { family: Family::DiscreteTable, dimension, params, vlmc: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn vlmc(chain: VlmcSpec, window: usize) -> Result<Self> {
        let spec = Self { family: Family::Vlmc, dimension: 2, params: vec![window as f64], vlmc: Some(chain) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::InvalidSpec("generator dimension must be positive".into()));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("generator parameters must be finite".into()));
        }
        let p = &self.params;
        match self.family {
            Family::GumbelT => {
                if p.len() != d && p.len() != 1 {
                    return Err(Error::InvalidSpec(format!("GumbelT needs {d} scales or one shared scale, got {}", p.len())));
                }
                if p.iter().any(|&s| s <= 0.0) {
                    return Err(Error::InvalidSpec("GumbelT scales must be positive".into()));
                }
            }
            Family::GaussianT => {
                if p.len() != 2 * d + 1 {
                    return Err(Error::InvalidSpec(format!("GaussianT needs {} parameters, got {}", 2 * d + 1, p.len())));
                }
                if p[d..2 * d].iter().any(|&s| s <= 0.0) {
                    return Err(Error::InvalidSpec("GaussianT standard deviations must be positive".into()));
                }
                let rho = p[2 * d];
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::InvalidSpec(format!("GaussianT equicorrelation {rho} outside [0, 1)")));
                }
            }
            Family::ReverseExponentialT => {
                if p.len() != d {
                    return Err(Error::InvalidSpec(format!("ReverseExponentialT needs {d} rates, got {}", p.len())));
                }
                if p.iter().any(|&r| r <= 0.0) {
                    return Err(Error::InvalidSpec("ReverseExponentialT rates must be positive".into()));
                }
            }
            Family::DiscreteTable => {
                if p.is_empty() || p.len() % (d + 1) != 0 {
                    return Err(Error::InvalidSpec(format!("DiscreteTable rows must have {} entries", d + 1)));
                }
                let mut total = 0.0;
                for row in p.chunks(d + 1) {
                    if row[..d].iter().any(|v| v.fract() != 0.0) {
                        return Err(Error::InvalidSpec("DiscreteTable points must be integers".into()));
                    }
                    if row[d] < 0.0 {
                        return Err(Error::InvalidSpec("DiscreteTable probabilities must be nonnegative".into()));
                    }
                    total += row[d];
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("DiscreteTable probabilities sum to {total}")));
                }
            }
            Family::Vlmc => {
                let chain = self
                    .vlmc
                    .as_ref()
                    .ok_or_else(|| Error::InvalidSpec("VLMC generator needs a `vlmc` chain".into()))?;
                chain.validate()?;
                if d != 2 {
                    return Err(Error::InvalidSpec("VLMC generator is bivariate".into()));
                }
                if p.len() > 1 || p.first().is_some_and(|&w| w < 1.0 || w.fract() != 0.0) {
                    return Err(Error::InvalidSpec("VLMC params must be [window] with a positive integer window".into()));
                }
                if self.window() < chain.max_depth {
                    return Err(Error::InvalidSpec("VLMC window shorter than the context depth".into()));
                }
            }
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.params.first().map_or(DEFAULT_VLMC_WINDOW, |&w| w as usize)
    }

    /// Generators with integer support (usable for discrete models).
    pub fn is_integer(&self) -> bool {
        matches!(self.family, Family::DiscreteTable | Family::Vlmc)
    }

    /// Whether the parameters change the law of `T` (and are estimable).
    pub fn is_parametric(&self) -> bool {
        !self.is_integer()
    }

    /// Number of base variates per draw.
    pub fn base_width(&self) -> usize {
        match self.family {
            Family::GaussianT => self.dimension + 1,
            _ => self.dimension,
        }
    }

    /// Copy of this spec with new parameter values, validated.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let spec = Self { params: params.to_vec(), ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    /// Fill one row of base variates. For integer generators the base row is
    /// the generator draw itself.
    pub fn draw_base<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.family {
            Family::GumbelT => {
                for v in out.iter_mut() {
                    *v = -(-open01(rng).ln()).ln();
                }
            }
            Family::GaussianT => {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            Family::ReverseExponentialT => {
                for v in out.iter_mut() {
                    *v = Exp1.sample(rng);
                }
            }
            Family::DiscreteTable => {
                let d = self.dimension;
                let u = open01(rng);
                let mut acc = 0.0;
                let rows: Vec<&[f64]> = self.params.chunks(d + 1).collect();
                let mut chosen = rows[rows.len() - 1];
                for row in &rows {
                    acc += row[d];
                    if u <= acc {
                        chosen = row;
                        break;
                    }
                }
                out.copy_from_slice(&chosen[..d]);
            }
            Family::Vlmc => {
                let chain = self.vlmc.as_ref().expect("validated VLMC spec");
                let t = crate::mdgpd::vlmc_generator_draw_with(chain, self.window(), rng);
                out[0] = t[0] as f64;
                out[1] = t[1] as f64;
            }
        }
    }

    /// Map base variates to a generator draw under `params`.
    pub fn generator_from_base(&self, params: &[f64], base: &[f64], out: &mut [f64]) {
        let d = self.dimension;
        match self.family {
            Family::GumbelT => {
                for j in 0..d {
                    let s = if params.len() == 1 { params[0] } else { params[j] };
                    out[j] = s * base[j];
                }
            }
            Family::GaussianT => {
                let rho = params[2 * d];
                let (common, own) = (rho.sqrt(), (1.0 - rho).sqrt());
                for j in 0..d {
                    out[j] = params[j] + params[d + j] * (common * base[d] + own * base[j]);
                }
            }
            Family::ReverseExponentialT => {
                for j in 0..d {
                    out[j] = -base[j] / params[j];
                }
            }
            Family::DiscreteTable | Family::Vlmc => out.copy_from_slice(&base[..d]),
        }
    }
}

/// One draw of `T`.
pub fn sample_generator<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut base = vec![0.0; spec.base_width()];
    spec.draw_base(rng, &mut base);
    let mut t = vec![0.0; spec.dimension];
    spec.generator_from_base(&spec.params, &base, &mut t);
    Ok(t)
}

/// In-place `t - max(t)`; the maximal component becomes exactly 0.
pub fn spectral(t: &mut [f64]) {
    let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in t.iter_mut() {
        *v -= mx;
    }
}

pub fn sample_standard_mgpd(spec: &GeneratorSpec, n: usize, src: &RandomSource) -> Result<Array2<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let d = spec.dimension;
    let mut rng = src.rng();
    let mut base = vec![0.0; spec.base_width()];
    let mut t = vec![0.0; d];
    let mut z = Array2::zeros((n, d));
    for mut row in z.rows_mut() {
        spec.draw_base(&mut rng, &mut base);
        spec.generator_from_base(&spec.params, &base, &mut t);
        spectral(&mut t);
        let e: f64 = Exp1.sample(&mut rng);
        for (zj, sj) in row.iter_mut().zip(&t) {
            *zj = e + sj;
        }
    }
    Ok(z)
}

/// `sigma * (exp(xi * z) - 1) / xi`, or `sigma * z` when `xi` is near 0.
#[inline]
pub fn margin_transform(z: f64, sigma: f64, xi: f64) -> f64 {
    if xi.abs() < XI_EPS {
        sigma * z
    } else {
        sigma * (xi * z).exp_m1() / xi
    }
}

pub fn transform_margins(z: &Array2<f64>, sigma: &[f64], xi: &[f64]) -> Result<Array2<f64>> {
    let d = z.ncols();
    if sigma.len() != d || xi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sigma.len().min(xi.len()) });
    }
    if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) || xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("scales must be positive and shapes finite".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("standard sample"));
    }
    let mut x = z.clone();
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = margin_transform(*v, sigma[j], xi[j]);
        }
    }
    Ok(x)
}

pub fn sample_mgpd(theta: &ParamVector, spec: &GeneratorSpec, n: usize, src: &RandomSource) -> Result<Array2<f64>> {
    if theta.dim() != spec.dimension {
        return Err(Error::DimensionMismatch { expected: spec.dimension, got: theta.dim() });
    }
    let spec = if spec.is_parametric() && !theta.dep.is_empty() { spec.with_params(&theta.dep)? } else { spec.clone() };
    let z = sample_standard_mgpd(&spec, n, src)?;
    transform_margins(&z, &theta.sigma, &theta.xi)
}

/// Rows with at least one component above `v`, shifted by `v`.
pub fn conditional_excess(x: &Array2<f64>, v: &[f64]) -> Result<Array2<f64>> {
    let d = x.ncols();
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: v.len() });
    }
    let keep: Vec<usize> = x
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().zip(v).any(|(a, b)| a > b))
        .map(|(i, _)| i)
        .collect();
    let mut out = Array2::zeros((keep.len(), d));
    for (k, &i) in keep.iter().enumerate() {
        for j in 0..d {
            out[[k, j]] = x[[i, j]] - v[j];
        }
    }
    Ok(out)
}
