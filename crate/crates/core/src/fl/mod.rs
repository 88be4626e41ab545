//! Federated-learning mechanics: data, local training, aggregation and the
//! publisher-side defenses.

pub mod data;
pub mod defense;
pub mod model;

use thiserror::Error;

pub use data::{
    emd, gen_synthetic, label_distribution, load_idx, partition, poison, Behavior, Dataset,
    WorkerProfile,
};
pub use defense::{elapsed_check, roni_decision, roni_filter, ElapsedVerdict, RoniVerdict};
pub use model::{
    aggregate, evaluate, local_sgd, loss_and_grad, LocalUpdate, ModelState, SgdParams,
};

#[derive(Debug, Error)]
pub enum FlError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("IDX file truncated: {0}")]
    TruncatedFile(String),
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("distributions have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("worker shard is empty")]
    EmptyShard,
    #[error("no update was accepted this round")]
    EmptyAccepted,
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
