//! Desk-scale training and evaluation.

mod checkpoint;
mod config;
mod data;
mod metrics;
mod run;
mod sgd;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use data::{
    augmented, decode_pnm, fit_image, ingest_folder, random_augment, synth_dataset, Augment, Dataset, Normalization,
    Sample, SizePolicy, CROP_PAD,
};
pub use metrics::{write_metrics_csv, Accuracy, EpochMetrics, METRICS_HEADER};
pub use run::{evaluate, refine_bn, topk_hits, train};
pub use sgd::{sgd_step, SgdState};
pub use crate::ops::mean_max_pool;

use crate::arch::Network;
use crate::error::Result;
use crate::tensor::Real;

/// Checkpoint holding a network's parameters and BN running statistics.
pub fn checkpoint_of<T: Real>(net: &Network<T>) -> Checkpoint<T> {
    Checkpoint::new(net.named_tensors())
}

pub fn load_checkpoint<T: Real>(net: &mut Network<T>, ck: &Checkpoint<T>) -> Result<()> {
    net.load_named(&ck.tensors)
}
