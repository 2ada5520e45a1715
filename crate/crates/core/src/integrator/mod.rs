//! Adaptive integration with online accumulation of trajectory averages.

mod averaging;
mod ode;

pub use averaging::{
    adiff, convergence_probe, run_ensemble, run_until_converged, Accumulator, AveragingConfig, QuotientSample,
};
pub use ode::{integrate_adaptive, OdeTolerances, Stepper};
