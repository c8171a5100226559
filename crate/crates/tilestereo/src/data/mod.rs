//! Synthetic stereo data with exact ground truth, training augmentations,
//! and the on-disk formats (PFM disparity maps, binary netpbm images).

pub mod augment;
pub mod netpbm;
pub mod pfm;
pub mod scene;

pub use augment::{augment, AugmentOptions};
pub use netpbm::{read_image, write_image};
pub use pfm::{read_pfm, write_pfm};
pub use scene::{gen_scene, render_scene, Plane, Rect, SceneConfig, SceneStream, StereoSample};
