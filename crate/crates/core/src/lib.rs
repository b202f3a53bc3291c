//! k-nearest-neighbor empirical measures.
//!
//! The k-NN measure at a query point `x` puts mass `1/k` on each of the `k`
//! sample points closest to `x` and is used to estimate conditional laws
//! `mu_x` of a response given a covariate. The crate provides the measure
//! and its integrals, plug-in estimators, finite-sample bound evaluators,
//! synthetic models with analytic ground truth, and a Monte Carlo harness.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod functional;
pub mod geometry;
pub mod harness;
pub mod measure;
pub mod special;
pub mod synthetic;

pub use bounds::{BoundInputs, ErrorBound, KWindow};
pub use error::{Error, Result};
pub use estimators::{ConfidenceInterval, LocalDegree, LocalLinearFit};
pub use functional::{CustomFunctional, Envelope, Functional};
pub use harness::{run_experiment, ExperimentKind, ExperimentResult, ExperimentSpec, KRule};
pub use geometry::{BallVolume, NeighborQuery, Norm, NormKind, PointCloud};
pub use measure::{KnnMeasure, LocalMeasure, NwMeasure, SampleSet};
pub use synthetic::{GroundTruth, ModelId, NoiseLaw, RngSpec, SupportConstants};
