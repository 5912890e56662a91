//! Desk-scale training: execution, masked fine-tuning, evaluation and data.

mod data;
mod eval;
mod finetune;
mod graph;
mod optim;

pub use data::{load_idx, synth_blobs, Dataset, Split, SYNTH_NOISE};
pub use eval::{evaluate, true_class_rank, EvalResult};
pub(crate) use eval::evaluate_weights;
pub use finetune::{finetune, EpochRecord, History, StopReason};
pub use graph::{backward, forward, loss, loss_and_gradients, softmax_cross_entropy, ForwardCache, Gradients, Network};
pub use optim::{masked_step, MaskedSgd, TrainConfig, LR_GRID};
