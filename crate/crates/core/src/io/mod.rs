//! Ray-set files, synthetic scenes and map exports.

pub mod export;
pub mod rayfile;
pub mod scene;

pub use export::{export, ExportFormat};
pub use rayfile::{load_rays, read_rays, save_rays, write_rays};
pub use scene::{generate_scene, SceneKind, SceneSpec};
