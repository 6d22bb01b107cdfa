// SPDX-License-Identifier: MIT OR Apache-2.0

//! TopK sparse autoencoders over activation vectors, JumpReLU feature
//! extraction, and feature-coverage data selection.
//!
//! The pipeline is:
//!
//! 1. [`store`]: read/write activation shards, chunk token streams.
//! 2. [`train`]: fit a TopK SAE ([`sae`]) with tied init, unit-norm decoder
//!    columns, a dead-latent auxiliary loss and warmup.
//! 3. [`extract`]: per-sample activated-feature sets.
//! 4. [`selection`]: greedy-coverage or similarity-ratio subset selection.
//! 5. [`metrics`]: length/feature correlation and coverage curves.
//!
//! [`synth`] provides ground-truth data and a reference selection routine.

pub mod checkpoint;
pub mod error;
pub mod extract;
pub mod metrics;
pub mod optim;
pub mod sae;
pub mod selection;
pub mod store;
pub mod synth;
pub mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{Error, FormatError, Result};
pub use extract::{activation_count, extract_features, FeatureSet, Scope};
pub use metrics::{coverage_curve, length_activation_report, pearson, CorrelationReport};
pub use sae::{
    decode, encode_relu, encode_topk, jump_relu, recon_loss, topk_mask, SaeParams, SparseLatents,
    Variant,
};
pub use selection::{
    select, selection_report, sort_records, DataRecord, LengthMetric, Mode, SelectConfig,
    SelectionReport, SelectionState,
};
pub use store::{
    chunk_tokens, normalize_rows, read_shard, write_shard, ActivationShard, TokenSequenceBatch,
};
pub use train::{init_params, lr_at, train, train_step, DeadLatentTracker, OptState, TrainConfig};
