//! Semiparametric inference for two zero-inflated samples linked by a
//! density ratio model.

pub mod asymptotics;
pub mod error;
pub mod functionals;
pub mod inference;
pub mod likelihood;
pub mod model;
pub mod numdiff;
pub mod numeric;
pub mod simulation;
pub mod solver;

pub use asymptotics::CovarianceReport;
pub use error::{Error, Result};
pub use functionals::{builtin_g, builtin_u, BuiltinG, BuiltinU, SmoothMap, TwoSampleFunctional, UFunctional};
pub use inference::{BootstrapKind, BootstrapOptions, CiMethod, IntervalResult, TestResult};
pub use likelihood::LikelihoodEval;
pub use model::{load_two_sample, make_basis, BasisFunction, BasisKind, ParamBundle, TwoSampleData};
pub use simulation::{run_study, McReport, MixtureScenario, StudyOptions};
pub use solver::{fit, DrmFit, SolverOptions};
