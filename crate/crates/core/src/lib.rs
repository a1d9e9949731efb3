//! Event-based optical flow with temporally-dense correlation volumes.
//!
//! The pipeline splits an event window into segments plus a reference
//! segment, voxelizes each, correlates the reference features against every
//! segment, samples those volumes along linearly scaled lookup coordinates,
//! and fuses the resulting motion features with cross-attention before a
//! recurrent refinement of the flow estimate.

pub mod error;
pub mod par;
pub mod tensor;

pub use error::{Error, Result};
pub mod events;
pub mod flow;
pub mod synth;
pub mod correlation;
pub mod model;
pub mod metrics;
pub mod pipeline;
pub mod train;
pub mod io;

pub use flow::FlowField;
