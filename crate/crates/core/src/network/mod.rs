//! Transformer layers and blocks, the full super-resolution model and its
//! checkpoint format.

mod checkpoint;
mod config;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, CONFIG_KEYS, MAX_WINDOW};
pub use model::{SrModel, CONV_KERNEL};
pub use params::ParamStore;
