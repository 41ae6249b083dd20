pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod gof;
pub mod io;
pub mod mdgpd;
pub mod measure;
pub mod mgpd;
pub mod model;
pub mod nbe;
pub mod param;
pub mod preprocess;
pub mod rng;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use mdgpd::{GeometricRadial, VlmcSpec};
pub use measure::{collapse_discrete, make_measure, EmpiricalMeasure};
pub use mgpd::{Family, GeneratorSpec};
pub use model::{MdgpdModel, MgpdModel, ModelSpec, Simulator, Tape, UniformModel};
pub use param::{Bounds, ParamVector};
pub use rng::RandomSource;
