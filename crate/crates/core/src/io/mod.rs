//! Data sets, checkpoints, experiment configuration and report files.

mod checkpoint;
mod config;
mod dataset;
mod idx;
mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest, FORMAT_VERSION};
pub use config::{EvalConfig, ExperimentConfig};
pub use dataset::{load_dataset, synth_dataset, synth_labeled, DatasetSpec, Family, LabeledData, SynthParams};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use report::{emit_report, read_history_csv, write_history_csv, OutputLock, HISTORY_HEADER};
