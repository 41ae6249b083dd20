//! Goodness of fit by parametric bootstrap of the Sinkhorn discrepancy.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::Simulator;
use crate::rng::RandomSource;
use crate::sinkhorn::{sinkhorn_divergence, SinkhornConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofConfig {
    /// Bootstrap replicates.
    pub replicates: usize,
    /// Simulated sample size for every discrepancy.
    pub m: usize,
    pub sinkhorn: SinkhornConfig,
}

impl GofConfig {
    pub fn new(replicates: usize, m: usize) -> Self {
        Self { replicates, m, sinkhorn: SinkhornConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("replicates and simulation size must be positive".into()));
        }
        self.sinkhorn.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub d_obs: f64,
    /// Discrepancies of the replicates that refit successfully, in replicate order.
    pub d_boot: Vec<f64>,
    pub p_value: f64,
    /// Replicates that entered the p-value.
    pub replicates: usize,
    /// Replicates dropped after a refit or simulation failure.
    pub dropped: usize,
    pub seed: RandomSource,
}

impl GofReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `(1 + #{b : d_boot[b] >= d_obs}) / (B + 1)`.
pub fn p_value(d_obs: f64, d_boot: &[f64]) -> f64 {
    let exceed = d_boot.iter().filter(|d| **d >= d_obs).count();
    (1 + exceed) as f64 / (d_boot.len() + 1) as f64
}

fn discrepancy(
    data: &EmpiricalMeasure,
    theta: &[f64],
    simulator: &dyn Simulator,
    m: usize,
    sinkhorn: &SinkhornConfig,
    src: &RandomSource,
) -> Result<f64> {
    let simulated = simulator.sample(theta, m, src)?;
    sinkhorn_divergence(data, &simulator.measure(simulated.view())?, sinkhorn)
}

/// Sinkhorn divergence between the observed measure and an `m`-sample
/// simulated at `theta_hat` from the tape drawn by `crn`.
pub fn observed_discrepancy(
    observed: &EmpiricalMeasure,
    theta_hat: &[f64],
    simulator: &dyn Simulator,
    m: usize,
    sinkhorn: &SinkhornConfig,
    crn: &RandomSource,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Empty("simulation size"));
    }
    if observed.dim() != simulator.data_dim() {
        return Err(Error::DimensionMismatch { expected: simulator.data_dim(), got: observed.dim() });
    }
    discrepancy(observed, theta_hat, simulator, m, sinkhorn, crn)
}

/// Parametric bootstrap. Replicate `b` simulates `n` rows at `theta_hat`,
/// refits them, simulates `m` rows at the refit and records the divergence
/// between the two samples. `refit` should be the method that produced
/// `theta_hat`.
pub fn bootstrap_pvalue<F>(
    observed: &EmpiricalMeasure,
    theta_hat: &[f64],
    refit: F,
    simulator: &dyn Simulator,
    n: usize,
    cfg: &GofConfig,
    src: &RandomSource,
) -> Result<GofReport>
where
    F: Fn(&Array2<f64>) -> Result<Vec<f64>> + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Empty("bootstrap sample size"));
    }
    let d_obs = observed_discrepancy(observed, theta_hat, simulator, cfg.m, &cfg.sinkhorn, &src.split(0))?;
    let outcomes: Vec<Result<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let stream = src.split(1 + b as u64);
            let resample = simulator.sample(theta_hat, n, &stream.split(0))?;
            let theta_b = refit(&resample)?;
            let data = simulator.measure(resample.view())?;
            discrepancy(&data, &theta_b, simulator, cfg.m, &cfg.sinkhorn, &stream.split(1))
        })
        .collect();
    let mut d_boot = Vec::with_capacity(cfg.replicates);
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(d) => d_boot.push(d),
            Err(e) => log::warn!("bootstrap replicate {b} dropped: {e}"),
        }
    }
    if d_boot.is_empty() {
        return Err(Error::Estimation("every bootstrap replicate failed".into()));
    }
    let dropped = cfg.replicates - d_boot.len();
    Ok(GofReport { d_obs, p_value: p_value(d_obs, &d_boot), replicates: d_boot.len(), dropped, d_boot, seed: *src })
}
