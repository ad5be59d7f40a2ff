//! WebAssembly bindings for the demo page in `www/`. The plain functions
//! hold the logic and are tested natively; the `#[wasm_bindgen]` items only
//! convert errors for JavaScript.

use armsight::objectives::{mask_loss, ClassWeights};
use armsight::scene::{catalog, look_at, render, BackgroundConfig, BackgroundSpec, CameraModel, RobotModel, Vec3};
use armsight::stagewise::{lr_schedule, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// A rendered frame ready for a canvas.
#[wasm_bindgen]
#[derive(Debug)]
pub struct SceneView {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    fg_fraction: f64,
    joints_px: Vec<f64>,
}

#[wasm_bindgen]
impl SceneView {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major RGBA bytes.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.fg_fraction
    }

    /// `u, v` pixel pairs of the base and every joint, in chain order.
    pub fn joint_pixels(&self) -> Vec<f64> {
        self.joints_px.clone()
    }
}

fn model(robot: &str) -> Result<RobotModel, String> {
    let all = catalog();
    let names: Vec<&str> = all.iter().map(|m| m.name.as_str()).collect();
    let msg = format!("unknown robot `{robot}`; choose one of {}", names.join(", "));
    all.iter().find(|m| m.name == robot).cloned().ok_or(msg)
}

pub fn robots() -> Vec<String> {
    catalog().into_iter().map(|m| m.name).collect()
}

/// `[min, max]` of every joint in degrees, flattened.
pub fn limits_deg(robot: &str) -> Result<Vec<f64>, String> {
    Ok(model(robot)?
        .joints
        .iter()
        .flat_map(|j| j.limits.map(f64::to_degrees))
        .collect())
}

/// Renders `robot` with joint angles in degrees (clamped to the limits),
/// seen from `distance` meters at the given azimuth and elevation. A
/// non-zero `clutter` seeds a random background; `overlay` tints the mask.
pub fn render_view(
    robot: &str,
    angles_deg: &[f64],
    distance: f64,
    azimuth_deg: f64,
    elevation_deg: f64,
    clutter: u32,
    overlay: bool,
) -> Result<SceneView, String> {
    let m = model(robot)?;
    if angles_deg.len() != m.dof() {
        return Err(format!("{robot} has {} joints, got {} angles", m.dof(), angles_deg.len()));
    }
    let angles: Vec<f64> = angles_deg
        .iter()
        .zip(&m.joints)
        .map(|(a, j)| a.to_radians().clamp(j.limits[0], j.limits[1]))
        .collect();
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * distance;
    let target = Vec3::new(0.0, 0.0, 0.35 * m.reach);
    let cam = CameraModel::default_sensor().with_pose(look_at(&eye, &target, 0.0));
    let bg = if clutter == 0 {
        BackgroundSpec::plain()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(clutter));
        BackgroundSpec::random(&mut rng, &BackgroundConfig::default(), distance + m.reach, &cam.pose.inverse())
    };
    let (img, mask) = render(&m, &angles, &cam, &bg).map_err(|e| e.to_string())?;

    let mut rgba = Vec::with_capacity(img.as_raw().len() / 3 * 4);
    for (px, &on) in img.as_raw().chunks_exact(3).zip(&mask.data) {
        if overlay && on == 1 {
            rgba.extend_from_slice(&[px[0] / 2 + 127, px[1] / 2, px[2] / 2, 255]);
        } else {
            rgba.extend_from_slice(&[px[0], px[1], px[2], 255]);
        }
    }
    let frames = m.forward_kinematics(&angles).map_err(|e| e.to_string())?;
    let mut points = vec![Vec3::zeros()];
    points.extend(m.joint_positions(&frames));
    let joints_px = points
        .iter()
        .filter_map(|p| cam.project(&cam.world_to_camera(p)).ok())
        .flat_map(|(u, v)| [u, v])
        .collect();
    Ok(SceneView {
        width: mask.width,
        height: mask.height,
        rgba,
        fg_fraction: mask.fraction(),
        joints_px,
    })
}

/// Mask loss of a constant prediction `q` on an image whose foreground
/// covers `fg` of the pixels, for `points` values of `q` spread over
/// `(0, 1)`. With `weighted` false both classes weigh 1, which shows the
/// pull towards predicting background everywhere.
pub fn constant_mask_loss(fg: f64, points: usize, weighted: bool) -> Result<Vec<f64>, String> {
    let n = 1000;
    let on = (fg * n as f64).round() as usize;
    if on == 0 || on == n {
        return Err(format!("foreground fraction {fg} leaves one class empty"));
    }
    let gt: Vec<u8> = (0..n).map(|i| u8::from(i < on)).collect();
    let w = if weighted {
        ClassWeights::from_masks([gt.as_slice()]).map_err(|e| e.to_string())?
    } else {
        ClassWeights { w_fg: 1.0, w_bg: 1.0, p_fg: fg }
    };
    (0..points)
        .map(|k| {
            let q = (k as f64 + 0.5) / points as f64;
            mask_loss(&vec![q; n], &gt, &w).map_err(|e| e.to_string())
        })
        .collect()
}

/// Learning rate at `points` evenly spaced iterations of a run.
pub fn lr_curve(total_iters: usize, lr_start: f64, lr_end: f64, points: usize) -> Result<Vec<f64>, String> {
    let cfg = TrainConfig {
        total_iters,
        lr_start,
        lr_end,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let last = points.max(2) - 1;
    Ok((0..=last).map(|k| lr_schedule(k * total_iters / last, &cfg)).collect())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = robotNames)]
pub fn robot_names() -> String {
    robots().join(",")
}

#[wasm_bindgen(js_name = jointLimits)]
pub fn joint_limits(robot: &str) -> Result<Vec<f64>, JsError> {
    limits_deg(robot).map_err(js)
}

#[wasm_bindgen(js_name = renderScene)]
pub fn render_scene(
    robot: &str,
    angles_deg: &[f64],
    distance: f64,
    azimuth_deg: f64,
    elevation_deg: f64,
    clutter: u32,
    overlay: bool,
) -> Result<SceneView, JsError> {
    render_view(robot, angles_deg, distance, azimuth_deg, elevation_deg, clutter, overlay).map_err(js)
}

#[wasm_bindgen(js_name = maskLossCurve)]
pub fn mask_loss_curve(fg: f64, points: usize, weighted: bool) -> Result<Vec<f64>, JsError> {
    constant_mask_loss(fg, points, weighted).map_err(js)
}

#[wasm_bindgen(js_name = learningRateCurve)]
pub fn learning_rate_curve(total_iters: usize, lr_start: f64, lr_end: f64, points: usize) -> Result<Vec<f64>, JsError> {
    lr_curve(total_iters, lr_start, lr_end, points).map_err(js)
}
