//! Configuration, initial-condition sampling, the on-disk archive, staged
//! orchestration, export and verification.

pub mod archive;
pub mod config;
pub mod export;
pub mod pipeline;
pub mod sampling;
pub mod verify;

pub use archive::{Archive, ArrayEntry, LatticeInfo, Manifest};
pub use config::RunConfig;
pub use export::{export_pointcloud, ExportRequest, Slice};
pub use pipeline::{fingerprint, load_distances, run_pipeline, run_stage, stage_is_current, Stage};
pub use sampling::IcSpec;
pub use verify::{verify_archive, VerifyReport};
