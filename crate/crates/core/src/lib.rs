//! Spatial-context encoded target-volume delineation.
//!
//! Signed distance transforms of the tumor, lymph nodes and organs at risk are
//! stacked with the CT as input channels of a small 3D progressive
//! holistically-nested network (PHNN). The crate also carries the synthetic
//! phantom cohort, the augmentation and sampling pipeline, sliding-window
//! inference and the segmentation metrics used to evaluate it.

pub mod cli;
pub mod config;
pub mod error;
pub mod evalx;
pub mod experiment;
pub mod net;
pub mod phantom;
pub mod pipeline;
pub mod sdt;
pub mod svox;
pub mod train;
pub mod voxgrid;

pub use error::{Error, Result};
