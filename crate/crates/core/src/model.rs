//! Parametric simulators driven by a fixed tape of base randomness.
//!
//! A [`Tape`] is drawn once; [`Simulator::simulate`] maps it through the
//! parameter vector deterministically. Re-using one tape across parameter
//! values (common random numbers) makes simulated-sample objectives
//! deterministic functions of the parameters.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{collapse_discrete, EmpiricalMeasure};
use crate::mgpd::{margin_transform, spectral, GeneratorSpec};
use crate::param::ParamVector;
use crate::rng::{open01, RandomSource};

/// Base randomness for `m` simulated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    /// One radial (or uniform) variate per row.
    pub radial: Vec<f64>,
    /// Per-row generator base variates; zero columns when unused.
    pub base: Array2<f64>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.radial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radial.is_empty()
    }
}

pub trait Simulator: Send + Sync {
    /// Length of the flat parameter vector.
    fn param_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    /// Integer-valued output, summarized by distinct atoms and frequencies.
    fn is_discrete(&self) -> bool {
        false
    }
    fn draw_tape(&self, m: usize, src: &RandomSource) -> Result<Tape>;
    fn simulate(&self, theta: &[f64], tape: &Tape) -> Result<Array2<f64>>;

    fn sample(&self, theta: &[f64], n: usize, src: &RandomSource) -> Result<Array2<f64>> {
        let tape = self.draw_tape(n, src)?;
        self.simulate(theta, &tape)
    }

    /// Empirical measure of a sample from this model.
    fn measure(&self, sample: ArrayView2<'_, f64>) -> Result<EmpiricalMeasure> {
        if self.is_discrete() {
            collapse_discrete(sample)
        } else {
            EmpiricalMeasure::uniform(sample.to_owned())
        }
    }
}

fn check_len(theta: &[f64], expected: usize) -> Result<()> {
    if theta.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: theta.len() });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter"));
    }
    Ok(())
}

fn nonempty(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Empty("simulation size"));
    }
    Ok(())
}

/// `X = theta * U` with `U ~ Unif(0, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UniformModel;

impl Simulator for UniformModel {
    fn param_dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn draw_tape(&self, m: usize, src: &RandomSource) -> Result<Tape> {
        nonempty(m)?;
        let mut rng = src.rng();
        let radial = (0..m).map(|_| open01(&mut rng)).collect();
        Ok(Tape { radial, base: Array2::zeros((m, 0)) })
    }

    fn simulate(&self, theta: &[f64], tape: &Tape) -> Result<Array2<f64>> {
        check_len(theta, 1)?;
        if theta[0] <= 0.0 {
            return Err(Error::InvalidParameter(format!("uniform upper bound {} must be positive", theta[0])));
        }
        let data = tape.radial.iter().map(|u| theta[0] * u).collect::<Vec<_>>();
        Ok(Array2::from_shape_vec((data.len(), 1), data).expect("column shape"))
    }
}

/// Continuous peaks-over-threshold model. The flat parameter vector is
/// `[sigma (d), xi (d), generator params]`; generator parameters are only
/// part of it when `estimate_dependence` is set, otherwise the spec values
/// stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgpdModel {
    pub generator: GeneratorSpec,
    pub estimate_dependence: bool,
}

impl MgpdModel {
    pub fn new(generator: GeneratorSpec, estimate_dependence: bool) -> Result<Self> {
        generator.validate()?;
        if estimate_dependence && !generator.is_parametric() {
            return Err(Error::InvalidSpec("only parametric generators have estimable dependence".into()));
        }
        Ok(Self { generator, estimate_dependence })
    }

    fn dep_dim(&self) -> usize {
        if self.estimate_dependence {
            self.generator.params.len()
        } else {
            0
        }
    }

    pub fn params(&self, theta: &[f64]) -> Result<ParamVector> {
        check_len(theta, self.param_dim())?;
        let d = self.generator.dimension;
        let dep = if self.estimate_dependence { theta[2 * d..].to_vec() } else { self.generator.params.clone() };
        ParamVector::new(theta[..d].to_vec(), theta[d..2 * d].to_vec(), dep)
    }
}

impl Simulator for MgpdModel {
    fn param_dim(&self) -> usize {
        2 * self.generator.dimension + self.dep_dim()
    }

    fn data_dim(&self) -> usize {
        self.generator.dimension
    }

    fn param_names(&self) -> Vec<String> {
        let d = self.generator.dimension;
        let mut names: Vec<String> = (1..=d).map(|j| format!("sigma{j}")).collect();
        names.extend((1..=d).map(|j| format!("xi{j}")));
        names.extend((1..=self.dep_dim()).map(|k| format!("dep{k}")));
        names
    }

    fn draw_tape(&self, m: usize, src: &RandomSource) -> Result<Tape> {
        nonempty(m)?;
        let mut rng = src.rng();
        let w = self.generator.base_width();
        let mut base = Array2::zeros((m, w));
        let mut radial = Vec::with_capacity(m);
        let mut row = vec![0.0; w];
        for i in 0..m {
            self.generator.draw_base(&mut rng, &mut row);
            base.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
            radial.push(Exp1.sample(&mut rng));
        }
        Ok(Tape { radial, base })
    }

    fn simulate(&self, theta: &[f64], tape: &Tape) -> Result<Array2<f64>> {
        let p = self.params(theta)?;
        if self.estimate_dependence {
            self.generator.with_params(&p.dep)?;
        }
        let d = self.generator.dimension;
        let mut t = vec![0.0; d];
        let mut out = Array2::zeros((tape.len(), d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let base = tape.base.row(i);
            self.generator.generator_from_base(&p.dep, base.as_slice().expect("row-major tape"), &mut t);
            spectral(&mut t);
            let e = tape.radial[i];
            for j in 0..d {
                row[j] = margin_transform(e + t[j], p.sigma[j], p.xi[j]);
            }
        }
        Ok(out)
    }
}

/// Non-standard discrete model: the continuous marginal transform of
/// `S + E` rounded up, with `S` from an integer generator. The flat
/// parameter vector is `[sigma (d), xi (d)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdgpdModel {
    pub generator: GeneratorSpec,
}

impl MdgpdModel {
    pub fn new(generator: GeneratorSpec) -> Result<Self> {
        generator.validate()?;
        if !generator.is_integer() {
            return Err(Error::InvalidSpec("discrete model needs an integer-valued generator".into()));
        }
        Ok(Self { generator })
    }

    pub fn params(&self, theta: &[f64]) -> Result<ParamVector> {
        check_len(theta, self.param_dim())?;
        let d = self.generator.dimension;
        ParamVector::new(theta[..d].to_vec(), theta[d..].to_vec(), vec![])
    }
}

impl Simulator for MdgpdModel {
    fn param_dim(&self) -> usize {
        2 * self.generator.dimension
    }

    fn data_dim(&self) -> usize {
        self.generator.dimension
    }

    fn param_names(&self) -> Vec<String> {
        let d = self.generator.dimension;
        (1..=d).map(|j| format!("sigma{j}")).chain((1..=d).map(|j| format!("xi{j}"))).collect()
    }

    fn is_discrete(&self) -> bool {
        true
    }

    fn draw_tape(&self, m: usize, src: &RandomSource) -> Result<Tape> {
        nonempty(m)?;
        let mut rng = src.rng();
        let d = self.generator.dimension;
        let mut base = Array2::zeros((m, d));
        let mut radial = Vec::with_capacity(m);
        let mut row = vec![0.0; d];
        for i in 0..m {
            self.generator.draw_base(&mut rng, &mut row);
            spectral(&mut row);
            base.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
            radial.push(Exp1.sample(&mut rng));
        }
        Ok(Tape { radial, base })
    }

    fn simulate(&self, theta: &[f64], tape: &Tape) -> Result<Array2<f64>> {
        let p = self.params(theta)?;
        let d = self.generator.dimension;
        let mut out = Array2::zeros((tape.len(), d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let e = tape.radial[i];
            for j in 0..d {
                row[j] = margin_transform(e + tape.base[[i, j]], p.sigma[j], p.xi[j]).ceil();
            }
        }
        Ok(out)
    }
}

/// Serializable choice of simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Unif1d,
    Mgpd {
        generator: GeneratorSpec,
        #[serde(default)]
        estimate_dependence: bool,
    },
    Mdgpd {
        generator: GeneratorSpec,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn Simulator>> {
        Ok(match self {
            ModelSpec::Unif1d => Box::new(UniformModel),
            ModelSpec::Mgpd { generator, estimate_dependence } => {
                Box::new(MgpdModel::new(generator.clone(), *estimate_dependence)?)
            }
            ModelSpec::Mdgpd { generator } => Box::new(MdgpdModel::new(generator.clone())?),
        })
    }
}
