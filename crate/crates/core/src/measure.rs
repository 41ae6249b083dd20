//! Weighted point clouds.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A discrete probability measure: atoms in d-space with weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Array2<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    /// Uniformly weighted measure over the rows of `points`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        make_measure(points, None)
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<f64>) {
        (self.atoms, self.weights)
    }
}

/// Build a measure from an n×d matrix and optional nonnegative weights.
///
/// Weights are renormalized to sum to one; with no weights each atom gets 1/n.
pub fn make_measure(points: Array2<f64>, weights: Option<Vec<f64>>) -> Result<EmpiricalMeasure> {
    let n = points.nrows();
    if n == 0 || points.ncols() == 0 {
        return Err(Error::Empty("point set"));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("measure atoms"));
    }
    let weights = match weights {
        None => vec![1.0 / n as f64; n],
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: w.len() });
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidParameter("all weights are zero".into()));
            }
            w.into_iter().map(|x| x / total).collect()
        }
    };
    debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    Ok(EmpiricalMeasure { atoms: points, weights })
}

/// Collapse an integer-valued sample onto its distinct rows, weighted by
/// empirical frequency. Atoms appear in order of first occurrence.
pub fn collapse_discrete(sample: ArrayView2<'_, f64>) -> Result<EmpiricalMeasure> {
    let n = sample.nrows();
    if n == 0 {
        return Err(Error::Empty("discrete sample"));
    }
    let d = sample.ncols();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut rows: Vec<Vec<i64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for row in sample.rows() {
        let mut key = Vec::with_capacity(d);
        for &x in row.iter() {
            if !x.is_finite() || x.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("non-integer value {x} in discrete sample")));
            }
            key.push(x as i64);
        }
        match index.get(&key) {
            Some(&k) => counts[k] += 1,
            None => {
                index.insert(key.clone(), rows.len());
                rows.push(key);
                counts.push(1);
            }
        }
    }
    let atoms = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j] as f64);
    let weights = counts.iter().map(|&c| c as f64).collect();
    make_measure(atoms, Some(weights))
}
