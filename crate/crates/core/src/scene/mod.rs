//! Scene datasets on disk and analytic scenes that generate them.

mod analytic;
mod dataset;
mod generate;

pub use analytic::{AnalyticScene, Primitive, SceneKind, Shape};
pub use dataset::{
    manifest_path, normalize_time, read_correspondences, write_correspondences, Bounds, Frame,
    SceneDataset, Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use generate::{
    degrade, gen_preset, gen_scene, sample_correspondences, Degrade, GenOptions, ScenePreset,
    CAMERA_DISTANCE, FIELD_OF_VIEW,
};
