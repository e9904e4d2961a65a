//! File formats: datasets on disk, ASCII PLY clouds and checkpoints, TUM
//! trajectories.

mod dataset;
pub mod ply;
pub mod tum;

pub use dataset::{
    load_dataset, load_image, read_intrinsics, write_dataset, write_png, Dataset, EXPOSURE_FILE, IMAGES_DIR, INTRINSICS_FILE,
    TRAJECTORY_FILE,
};
