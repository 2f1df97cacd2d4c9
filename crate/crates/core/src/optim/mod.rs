//! Initialization, AdaDelta, dropout and the training loop.

mod adadelta;
mod dropout;
mod init;
mod train;

pub use adadelta::{adadelta_step, AdaDeltaConfig, AdaDeltaState};
pub use dropout::{dropout, dropout_mask};
pub use init::{apply_embeddings, init_params};
pub use train::{check_corpus_labels, sized_config, train, EpochRecord, TrainConfig, TrainOutcome, Trainer};
