use serde::{Deserialize, Serialize};

use super::geometry::{Transform, Vec3};
use super::SceneError;

/// Pinhole camera. Camera frame: `z` forward, `x` right, `y` down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world pose.
    pub pose: Transform,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose: Transform::identity(),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Default sensor: 480×360 with a ~50° horizontal field of view.
    pub fn default_sensor() -> Self {
        Self::new(520.0, 520.0, 240.0, 180.0, 480, 360).expect("valid intrinsics")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidCamera(format!(
                "fx={} fy={} cx={} cy={} size={}x{}",
                self.fx, self.fy, self.cx, self.cy, self.width, self.height
            )))
        }
    }

    pub fn with_pose(mut self, pose: Transform) -> Self {
        self.pose = pose;
        self
    }

    /// Same optics on a grid scaled by `factor` (used for cheap previews).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: ((self.width as f64) * factor).round() as usize,
            height: ((self.height as f64) * factor).round() as usize,
            pose: self.pose,
        }
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.pose.inverse().apply(p)
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project(&self, p: &Vec3) -> Result<(f64, f64), SceneError> {
        if p.z <= 0.0 {
            return Err(SceneError::BehindCamera { z: p.z });
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame ray direction through the centre of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> Vec3 {
        Vec3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            (row as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Pixel whose area contains the projected point.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        self.contains(u, v).then(|| (u.floor() as usize, v.floor() as usize))
    }
}

/// Camera-to-world pose at `eye` looking at `target`, world `z` up, rolled
/// by `roll` radians about the optical axis.
pub fn look_at(eye: &Vec3, target: &Vec3, roll: f64) -> Transform {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-9 {
        right = Vec3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let (s, c) = roll.sin_cos();
    let x = right * c + down * s;
    let y = down * c - right * s;
    Transform {
        rotation: nalgebra::Matrix3::from_columns(&[x, y, forward]),
        translation: *eye,
    }
}
