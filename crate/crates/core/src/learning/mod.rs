//! Training loops, optimizer and metrics.

mod adamw;
mod checkpoint;
pub mod bp;
mod metrics;
mod pc;

pub use adamw::{adamw_step, AdamW, AdamWConfig, AdamWState};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use bp::{baseline_gradient, baseline_loss, train_bp, BaselineKind, BpLoss, BpTrainer};
pub use metrics::{MetricsLog, MetricsRow};
pub use pc::{batch_clamps, epoch_order, train_pc, PcTrainer, TrainConfig, TrainHooks, TrainMode};
