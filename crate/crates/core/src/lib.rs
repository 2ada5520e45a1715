//! Coherent-structure detection through the ergodic quotient.
//!
//! Trajectories of a flow are mapped to vectors of time-averaged Fourier
//! observables, compared with a negative-order Sobolev distance, embedded in
//! diffusion coordinates and finally clustered with k-means.
//!
//! The modules follow the pipeline order:
//!
//! * [`dynamics`] – vector fields and their metadata,
//! * [`observables`] – the truncated Fourier basis,
//! * [`integrator`] – adaptive integration and online averaging,
//! * [`metric`] – `H^{-s}` distances,
//! * [`diffmaps`] – diffusion coordinates,
//! * [`clustering`] – k-means,
//! * [`store`] – configuration, archives, orchestration and export.

// `!(x > 0.0)` is used on purpose so NaN is rejected too; index loops read
// better than iterator chains in the dense linear algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clustering;
pub mod diffmaps;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod metric;
pub mod observables;
pub mod store;

pub use clustering::{kmeans, kmeans_oracle, ClusterResult, KMeansParams};
pub use diffmaps::{DiffusionEmbedding, SymMatrix};
pub use dynamics::{extend_periodic, ExtendedSystem, FlowSystem, Interval};
pub use error::{Error, Result};
pub use integrator::{AveragingConfig, OdeTolerances, QuotientSample};
pub use metric::{DistanceMatrix, SobolevParams};
pub use num_complex::Complex64;
pub use observables::{ObservableBasis, WaveLattice};
pub use store::{Archive, RunConfig};
