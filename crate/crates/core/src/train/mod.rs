//! Unpaired training: configuration, optimisation, sampling, the per-iteration
//! update, checkpointed runs and inference.

mod config;
mod data;
mod optim;
mod replay;
mod run;
mod state;

pub use config::{lr_at, DiscKind, PriorWeighting, Schedule, TrainConfig};
pub use data::{derived_rng, Side, UnpairedData};
pub use optim::Adam;
pub use replay::ReplayBuffer;
pub use run::{checkpoint_name, infer, planned_iterations, run_training, Defogger, FINAL_CHECKPOINT, LOSS_LOG};
pub use state::{
    build_extractor, disc_x_spec, disc_y_spec, generator_spec, stack_images, translate, TrainState,
};
