//! Training: L1 loss, Adam, the step-halving schedule, patch sampling,
//! binary checkpoints, and the deterministic training loop that ties them
//! together.

mod checkpoint;
mod data;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{
    checkpoint_scalar_count, load_checkpoint, save_checkpoint, LoadedCheckpoint, TrainState,
};
pub use data::{DatasetImage, PatchPlan, SrDataset};
pub use loss::l1_loss;
pub use optim::{Adam, GradMap};
pub use schedule::LrSchedule;
pub use trainer::{IterStat, TrainConfig, Trainer};

#[cfg(test)]
mod tests;
