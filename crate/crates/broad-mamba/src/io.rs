//! File formats and run configuration: the binary tensor format, datasets on
//! disk, checkpoints, and the plain-text `key = value` config.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use dataset::{load_dataset, save_dataset};
pub use tensor::{read_tensor, write_tensor};
