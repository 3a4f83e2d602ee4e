//! Patch/center embedding, the Mamba-block encoder, classification head and
//! training, all with hand-derived gradients on 64-bit floats.

pub mod block;
pub mod checkpoint;
pub mod encoders;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod train;

pub use block::MambaBlock;
pub use encoders::{CenterEncoder, PatchEncoder};
pub use layers::{Linear, Params};
pub use model::{
    cross_entropy, prepare, prepare_dataset, prepare_patches, sequence_batch, Model, ModelConfig, PreparedSample,
};
pub use optim::{AdamW, CosineSchedule};
pub use train::{evaluate, train, EpochRecord, Evaluation, TrainConfig, TrainReport};
