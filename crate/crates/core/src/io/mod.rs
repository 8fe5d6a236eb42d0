//! File formats: images, checkpoints, tensor sidecars and configuration.

pub mod checkpoint;
pub mod config;
pub mod image;

pub use self::checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_tensor, save_checkpoint, save_tensor,
    CheckpointMeta,
};
pub use self::config::{parse_config, read_config};
pub use self::image::{list_images, load_image, save_image};
