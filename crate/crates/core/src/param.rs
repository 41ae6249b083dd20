//! Model parameters and parameter boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marginal scales, marginal shapes and generator dependence parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    #[serde(default)]
    pub dep: Vec<f64>,
}

impl ParamVector {
    pub fn new(sigma: Vec<f64>, xi: Vec<f64>, dep: Vec<f64>) -> Result<Self> {
        if sigma.len() != xi.len() {
            return Err(Error::DimensionMismatch { expected: sigma.len(), got: xi.len() });
        }
        if sigma.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter("every sigma component must be positive".into()));
        }
        if xi.iter().chain(dep.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { sigma, xi, dep })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// Flat layout `[sigma.., xi.., dep..]` used by the optimizers.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.sigma.clone();
        v.extend_from_slice(&self.xi);
        v.extend_from_slice(&self.dep);
        v
    }

    pub fn from_flat(d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() < 2 * d {
            return Err(Error::DimensionMismatch { expected: 2 * d, got: flat.len() });
        }
        Self::new(flat[..d].to_vec(), flat[d..2 * d].to_vec(), flat[2 * d..].to_vec())
    }
}

/// Axis-aligned parameter box Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::Empty("bounds"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::InvalidParameter(format!("empty or non-finite interval [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.project(&mut y);
        y
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let p = ParamVector::new(vec![1.0, 2.0], vec![0.1, -0.2], vec![0.5]).unwrap();
        assert_eq!(ParamVector::from_flat(2, &p.to_flat()).unwrap(), p);
    }

    #[test]
    fn invariants_enforced() {
        assert!(ParamVector::new(vec![0.0], vec![0.0], vec![]).is_err());
        assert!(ParamVector::new(vec![1.0, 1.0], vec![0.0], vec![]).is_err());
    }

    #[test]
    fn projection_clamps() {
        let b = Bounds::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(b.projected(&[2.0, -3.0]), vec![1.0, -1.0]);
        assert!(b.contains(&[0.5, 0.0]));
        assert!(!b.contains(&[1.5, 0.0]));
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    }
}
