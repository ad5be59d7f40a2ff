//! Synthetic robot scenes: a parametric capsule-robot catalog, forward
//! kinematics, collision-aware configuration sampling, pinhole projection
//! and a ray-cast renderer that emits a colour image together with its
//! exact robot mask.

mod camera;
mod dataset;
mod geometry;
mod render;
mod robot;

use std::path::PathBuf;

pub use camera::{look_at, CameraModel};
pub use dataset::{
    assign_splits, generate_sample, make_dataset, map_samples, read_mask, read_rgb, CameraRecord, Dataset, GeneratorConfig,
    Sample, SampleRecord, Split, DATASET_VERSION, MANIFEST_NAME,
};
pub use geometry::{capsule_normal, ray_capsule, segment_distance_sq, Transform, Vec3};
pub use render::{
    render, render_background, render_capsules, render_mask, robot_in_camera, BackgroundConfig, BackgroundSpec, Mask,
    Shape,
};
pub use robot::{
    catalog, select_models, Capsule, Collision, Joint, LinkFrame, PlacedCapsule, Rgb, RobotModel, CATALOG_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("unknown robot `{name}`; catalog has: {}", catalog.join(", "))]
    UnknownRobot { name: String, catalog: Vec<String> },
    #[error("expected {expected} joint angles, got {got}")]
    AngleCount { expected: usize, got: usize },
    #[error("joint {joint}: angle {angle} outside limits {limits:?}")]
    JointLimit { joint: usize, angle: f64, limits: [f64; 2] },
    #[error("{robot}: no collision-free configuration after {attempts} attempts")]
    SamplingExhausted { robot: String, attempts: usize },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}
