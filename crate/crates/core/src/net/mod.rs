//! Tensor engine, PHNN model, optimizer and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod phnn;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState, WeightDecay};
pub use phnn::{phnn_forward, PhnnDescriptor, PhnnForward, PhnnParams, SideInit};
pub use tensor::{Real, Tensor};
