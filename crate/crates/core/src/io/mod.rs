//! File formats: events, flow, checkpoints, run configuration, flow images
//! and dataset directories. Binary formats are little-endian.

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod events;
pub mod flow;
pub mod image;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, OptimizerState};
pub use config::RunConfig;
pub use dataset::{load_split, read_index, write_dataset, DatasetEntry, Split};
pub use events::{decode_events, encode_events, read_events, write_events};
pub use flow::{decode_flow, encode_flow, read_flow, write_flow};
pub use image::render_flow_image;
