//! Numerical laboratory for the statistical properties of chaotic maps:
//! reproducible orbit ensembles, ergodic statistics, limit laws, deviation
//! estimates and concentration experiments.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynsys;
pub mod ergostat;
pub mod concentration;
pub mod deviation;
pub mod error;
pub mod limitlaw;
pub mod numeric;
pub mod observables;
pub mod rng;

pub use dynsys::{
    generate_ensemble, iterate, sample_initial, Domain, EnsembleSpec, Orbit, OrbitEnsemble, Point, SystemDescriptor,
    SystemKind, TailClass,
};
pub use ergostat::{Cdf, CovarianceSeries, EmpiricalDistribution};
pub use error::{Error, Result};
pub use observables::{Calibration, Functional, Observable};
