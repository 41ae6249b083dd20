//! Raw series to standardized exceedance samples: marginal thresholds,
//! exceedance extraction, rank transform to unit-exponential margins and
//! rescaling into `{z : max z > 1}`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ThresholdMode {
    #[default]
    Continuous,
    DiscreteCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub percentile: f64,
    #[serde(default)]
    pub mode: ThresholdMode,
}

impl ThresholdConfig {
    pub fn new(percentile: f64, mode: ThresholdMode) -> Result<Self> {
        let cfg = Self { percentile, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::InvalidParameter(format!("percentile {} outside (0, 1)", self.percentile)));
        }
        Ok(())
    }

    /// The threshold on the unit-exponential scale, `-log(1 - percentile)`.
    pub fn exponential_threshold(&self) -> f64 {
        -(-self.percentile).ln_1p()
    }
}

fn sorted_column(data: ArrayView2<'_, f64>, j: usize) -> Vec<f64> {
    let mut col = data.column(j).to_vec();
    col.sort_by(f64::total_cmp);
    col
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smallest observed value whose empirical CDF reaches `p`.
pub fn quantile_left_inverse(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len() as f64;
    // the slack absorbs rounding in n * p (0.83 * 100 is not exactly 83)
    let k = (n * p - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(sorted.len()) - 1]
}

pub fn marginal_thresholds(data: ArrayView2<'_, f64>, cfg: &ThresholdConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.nrows() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 rows, got {}", data.nrows())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("data"));
    }
    let mut u = Vec::with_capacity(data.ncols());
    for j in 0..data.ncols() {
        let col = sorted_column(data, j);
        if col[0] == col[col.len() - 1] {
            log::warn!("column {} is constant; its threshold is degenerate", j + 1);
        }
        u.push(match cfg.mode {
            ThresholdMode::Continuous => quantile_type7(&col, cfg.percentile),
            ThresholdMode::DiscreteCounts => quantile_left_inverse(&col, cfg.percentile),
        });
    }
    Ok(u)
}

fn exceeding_rows(data: ArrayView2<'_, f64>, u: &[f64]) -> Vec<usize> {
    data.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().zip(u).any(|(x, t)| x > t))
        .map(|(i, _)| i)
        .collect()
}

fn select_rows(data: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (k, &i) in rows.iter().enumerate() {
        out.row_mut(k).assign(&data.row(i));
    }
    out
}

/// Rows where at least one component is strictly above its threshold.
pub fn extract_exceedances(data: ArrayView2<'_, f64>, u: &[f64]) -> Result<Array2<f64>> {
    if u.len() != data.ncols() {
        return Err(Error::DimensionMismatch { expected: data.ncols(), got: u.len() });
    }
    Ok(select_rows(data, &exceeding_rows(data, u)))
}

/// Average ranks (1-based) of one column; ties share their mean rank.
fn average_ranks(col: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut ranks = vec![0.0; col.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && col[order[end]] == col[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// `x -> -log(1 - rank / (n + 1))` per column.
pub fn pit_to_exponential(data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 rows, got {n}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("data"));
    }
    let mut out = Array2::zeros(data.raw_dim());
    let scale = 1.0 / (n as f64 + 1.0);
    for j in 0..data.ncols() {
        let ranks = average_ranks(&data.column(j).to_vec());
        for (i, r) in ranks.into_iter().enumerate() {
            out[[i, j]] = -(-r * scale).ln_1p();
        }
    }
    Ok(out)
}

/// `z = x / u_exp`, keeping only rows with `max z > 1`.
pub fn canonical_rescale(x: ArrayView2<'_, f64>, u_exp: &[f64]) -> Result<Array2<f64>> {
    if u_exp.len() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: u_exp.len() });
    }
    if u_exp.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
        return Err(Error::InvalidParameter("exponential-scale thresholds must be positive".into()));
    }
    let mut z = x.to_owned();
    for mut row in z.rows_mut() {
        for (v, u) in row.iter_mut().zip(u_exp) {
            *v /= u;
        }
    }
    let keep: Vec<usize> = z
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v > 1.0))
        .map(|(i, _)| i)
        .collect();
    let dropped = z.nrows() - keep.len();
    if dropped > 0 {
        log::debug!("{dropped} rows on the canonical boundary dropped");
    }
    Ok(select_rows(z.view(), &keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedances {
    #[serde(skip)]
    pub sample: Array2<f64>,
    pub thresholds: Vec<f64>,
    pub percentile: Option<f64>,
    pub n_exceedances: usize,
}

/// Full pipeline.
///
/// Continuous data are thresholded on the raw scale, mapped to exponential
/// margins and rescaled by the exponential-scale threshold. Counts are
/// returned as integer excesses `x - u` of the exceeding rows. With
/// `fixed` thresholds the data are taken as already standardized and only
/// selection and rescaling are applied.
pub fn standardize(data: ArrayView2<'_, f64>, cfg: &ThresholdConfig, fixed: Option<&[f64]>) -> Result<Exceedances> {
    if let Some(u) = fixed {
        let exc = extract_exceedances(data, u)?;
        let sample = match cfg.mode {
            ThresholdMode::Continuous => canonical_rescale(exc.view(), u)?,
            ThresholdMode::DiscreteCounts => shift(exc, u),
        };
        return Ok(Exceedances { n_exceedances: sample.nrows(), sample, thresholds: u.to_vec(), percentile: None });
    }
    let u = marginal_thresholds(data, cfg)?;
    let rows = exceeding_rows(data, &u);
    let sample = match cfg.mode {
        ThresholdMode::Continuous => {
            let e = pit_to_exponential(data)?;
            let u_exp = vec![cfg.exponential_threshold(); data.ncols()];
            canonical_rescale(select_rows(e.view(), &rows).view(), &u_exp)?
        }
        ThresholdMode::DiscreteCounts => shift(select_rows(data, &rows), &u),
    };
    Ok(Exceedances { n_exceedances: sample.nrows(), sample, thresholds: u, percentile: Some(cfg.percentile) })
}

fn shift(mut x: Array2<f64>, u: &[f64]) -> Array2<f64> {
    for mut row in x.rows_mut() {
        for (v, t) in row.iter_mut().zip(u) {
            *v -= t;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn type7_on_one_to_hundred() {
        let col = Array1::from_iter((1..=100).map(|v| v as f64)).insert_axis(ndarray::Axis(1));
        let cfg = ThresholdConfig::new(0.83, ThresholdMode::Continuous).unwrap();
        let u = marginal_thresholds(col.view(), &cfg).unwrap();
        assert!((u[0] - 83.17).abs() < 1e-9);
    }

    #[test]
    fn constant_column_threshold() {
        let data = array![[2.5], [2.5], [2.5]];
        let cfg = ThresholdConfig::new(0.9, ThresholdMode::Continuous).unwrap();
        assert_eq!(marginal_thresholds(data.view(), &cfg).unwrap(), vec![2.5]);
    }

    #[test]
    fn counts_left_inverse() {
        let data = array![[1.0], [1.0], [2.0], [3.0]];
        let cfg = ThresholdConfig::new(0.5, ThresholdMode::DiscreteCounts).unwrap();
        assert_eq!(marginal_thresholds(data.view(), &cfg).unwrap(), vec![1.0]);
        let col = Array1::from_iter((1..=100).map(|v| v as f64)).insert_axis(ndarray::Axis(1));
        let cfg = ThresholdConfig::new(0.83, ThresholdMode::DiscreteCounts).unwrap();
        assert_eq!(marginal_thresholds(col.view(), &cfg).unwrap(), vec![83.0]);
    }

    #[test]
    fn exceedance_edges() {
        let data = array![[1.0, 2.0], [3.0, 0.0], [0.5, 0.5]];
        assert_eq!(extract_exceedances(data.view(), &[0.0, -1.0]).unwrap().nrows(), 3);
        assert_eq!(extract_exceedances(data.view(), &[9.0, 9.0]).unwrap().nrows(), 0);
        // strict inequality
        assert_eq!(extract_exceedances(data.view(), &[3.0, 2.0]).unwrap().nrows(), 0);
    }

    #[test]
    fn pit_ranks_and_ties() {
        let data = array![[3.0], [1.0], [2.0], [2.0], [5.0]];
        let e = pit_to_exponential(data.view()).unwrap();
        let exp = |r: f64| -(1.0 - r / 6.0f64).ln();
        assert!((e[[1, 0]] - exp(1.0)).abs() < 1e-15);
        assert_eq!(e[[2, 0]], e[[3, 0]]);
        assert!((e[[2, 0]] - exp(2.5)).abs() < 1e-15);
        assert!((e[[4, 0]] - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn canonical_boundary_and_scaling() {
        let u = [0.5, 2.0];
        let x = array![[0.5, 2.0], [1.0, 4.0], [0.1, 0.1]];
        let z = canonical_rescale(x.view(), &u).unwrap();
        assert_eq!(z, array![[2.0, 2.0]]);
        assert!(canonical_rescale(x.view(), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn fixed_unit_threshold_is_idempotent() {
        let z = array![[1.5, 0.2], [0.3, 2.0], [4.0, 4.0]];
        let cfg = ThresholdConfig::new(0.9, ThresholdMode::Continuous).unwrap();
        let once = standardize(z.view(), &cfg, Some(&[1.0, 1.0])).unwrap();
        assert_eq!(once.sample, z);
        let twice = standardize(once.sample.view(), &cfg, Some(&[1.0, 1.0])).unwrap();
        assert_eq!(twice.sample, once.sample);
    }

    #[test]
    fn counts_pipeline_gives_integer_excesses() {
        let data = array![[0.0, 1.0], [4.0, 0.0], [2.0, 2.0], [1.0, 7.0], [0.0, 0.0]];
        let cfg = ThresholdConfig::new(0.6, ThresholdMode::DiscreteCounts).unwrap();
        let out = standardize(data.view(), &cfg, None).unwrap();
        assert_eq!(out.thresholds, vec![1.0, 1.0]);
        assert_eq!(out.sample, array![[3.0, -1.0], [1.0, 1.0], [0.0, 6.0]]);
    }
}
