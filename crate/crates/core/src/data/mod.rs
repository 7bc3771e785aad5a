//! Scene I/O, gamma preprocessing, patch extraction and synthetic scenes.

mod gamma;
mod image;
mod patches;
pub mod pfm;
pub mod pnm;
mod scene;
mod synth;

pub use gamma::{gamma_correct, gamma_correct_tensor, sample_gamma, PreprocessConfig};
pub use image::Image;
pub use patches::{crop_patches, grid_positions};
pub use scene::{
    gt_tensor, load_scene, save_scene, scene_tensors, SceneSample, SceneTensors, EXPOSURES_FILE,
    GT_FILE, LDR_FILES,
};
pub use synth::{make_synthetic_scene, Motion, SYNTH_EXPOSURES, SYNTH_GAMMA};
