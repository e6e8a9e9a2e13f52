//! End-to-end pipelines: estimator benchmark, plot series and run manifests.

mod bench;
mod config;
mod manifest;
mod plotdata;

pub use bench::{
    cmd_bench, depth_of, idler_photocounts, joint_photocounts, reconstruction_cutoff, BenchConfig, BenchReport, BenchRow, DeltaEntry, Estimate, Method,
    MethodSummary,
};
pub use config::{BenchSection, FamilySection, PipelineConfig, SimulateSection, TrainingSection};
pub use manifest::{sha256_file, sha256_hex, RunManifest};
pub use plotdata::{delta_series, depth_series, sweep_series, training_series, Series};
