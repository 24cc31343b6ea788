//! The refinement model: configuration, parameters, batches, forward pass
//! and checkpoints.

mod batch;
pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use batch::{BehavioralBatch, PairQuery, SideHistory};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{Pooling, PrismConfig};
pub use forward::{decode_link, euler_update, ForwardPass, PosteriorTrajectory, PrismModel};
pub use params::{init_params, DenseIdx, EncoderIdx, FfnIdx, Layout, ModelVars, ParamStore, StepIdx, StepVars};
