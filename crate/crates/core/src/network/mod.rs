//! Dual-branch segmentation network, its parameters and checkpoints.

mod checkpoint;
mod model;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{predict_mask, BranchSpec, ForwardOutput, Model, Network, NetworkSpec, Tape};
pub use params::{Gradients, Init, ModelParams, ParamId, ParamInfo};
