use image::{Rgb as Px, RgbImage};
use rand::Rng;

use super::camera::CameraModel;
use super::geometry::{capsule_normal, ray_capsule, Transform, Vec3};
use super::robot::{PlacedCapsule, Rgb, RobotModel};
use super::SceneError;

/// Binary robot mask, one byte per pixel (0 or 1), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Corners in normalised image coordinates.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, color: Rgb },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> Option<Rgb> {
        match *self {
            Shape::Rect { x0, y0, x1, y1, color } => {
                (x >= x0 && x <= x1 && y >= y0 && y <= y1).then_some(color)
            }
            Shape::Ellipse { cx, cy, rx, ry, color } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                (dx * dx + dy * dy <= 1.0).then_some(color)
            }
        }
    }
}

/// Everything that decides a scene's appearance apart from the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    pub top: Rgb,
    pub bottom: Rgb,
    pub shapes: Vec<Shape>,
    /// Clutter capsules in the camera frame, drawn but never masked.
    pub distractors: Vec<PlacedCapsule>,
    /// Unit vector towards the light, camera frame.
    pub light: Vec3,
    pub ambient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundConfig {
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Probability that a scene carries distractor capsules.
    pub distractor_prob: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            min_shapes: 3,
            max_shapes: 10,
            distractor_prob: 0.3,
        }
    }
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> Rgb {
    [rng.gen(), rng.gen(), rng.gen()]
}

impl BackgroundSpec {
    /// Plain mid-grey backdrop with a frontal light.
    pub fn plain() -> Self {
        Self {
            top: [120, 120, 120],
            bottom: [120, 120, 120],
            shapes: vec![],
            distractors: vec![],
            light: Vec3::new(0.3, -0.5, -1.0).normalize(),
            ambient: 0.35,
        }
    }

    /// Random clutter. Distractors are placed at camera depth beyond `depth_floor`
    /// so they can never occlude the subject.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &BackgroundConfig, depth_floor: f64, world_to_cam: &Transform) -> Self {
        let n = rng.gen_range(cfg.min_shapes..=cfg.max_shapes.max(cfg.min_shapes));
        let shapes = (0..n)
            .map(|_| {
                let color = random_color(rng);
                if rng.gen_bool(0.5) {
                    let (x0, y0) = (rng.gen_range(-0.1..1.0), rng.gen_range(-0.1..1.0));
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.gen_range(0.05..0.5),
                        y1: y0 + rng.gen_range(0.05..0.5),
                        color,
                    }
                } else {
                    Shape::Ellipse {
                        cx: rng.gen_range(0.0..1.0),
                        cy: rng.gen_range(0.0..1.0),
                        rx: rng.gen_range(0.03..0.25),
                        ry: rng.gen_range(0.03..0.25),
                        color,
                    }
                }
            })
            .collect();
        let mut distractors = Vec::new();
        if rng.gen_bool(cfg.distractor_prob) {
            for _ in 0..rng.gen_range(1..=3) {
                let depth = depth_floor + rng.gen_range(0.3..2.0);
                let centre = Vec3::new(
                    rng.gen_range(-0.6..0.6) * depth,
                    rng.gen_range(-0.4..0.4) * depth,
                    depth,
                );
                let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3));
                let half = dir.normalize() * rng.gen_range(0.1..0.4);
                distractors.push(PlacedCapsule {
                    a: centre - half,
                    b: centre + half,
                    radius: rng.gen_range(0.03..0.09),
                    color: random_color(rng),
                });
            }
        }
        // light from above the table, expressed in the camera frame
        let az = rng.gen_range(0.0..std::f64::consts::TAU);
        let el = rng.gen_range(0.3..1.3f64);
        let world_light = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        Self {
            top: random_color(rng),
            bottom: random_color(rng),
            shapes,
            distractors,
            light: world_to_cam.apply_vector(&world_light).normalize(),
            ambient: rng.gen_range(0.25..0.5),
        }
    }
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn shade(color: Rgb, normal: &Vec3, bg: &BackgroundSpec) -> Px<u8> {
    let lambert = normal.dot(&bg.light).max(0.0);
    let k = bg.ambient + (1.0 - bg.ambient) * lambert;
    Px(color.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8))
}

/// Conservative pixel box containing a capsule's projection.
fn pixel_bounds(c: &PlacedCapsule, cam: &CameraModel) -> (usize, usize, usize, usize) {
    let full = (0, 0, cam.width, cam.height);
    let lo = c.a.inf(&c.b).add_scalar(-c.radius);
    let hi = c.a.sup(&c.b).add_scalar(c.radius);
    if lo.z <= 1e-6 {
        return full;
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &x in &[lo.x, hi.x] {
        for &y in &[lo.y, hi.y] {
            for &z in &[lo.z, hi.z] {
                let u = cam.fx * x / z + cam.cx;
                let v = cam.fy * y / z + cam.cy;
                u0 = u0.min(u);
                v0 = v0.min(v);
                u1 = u1.max(u);
                v1 = v1.max(v);
            }
        }
    }
    let clampi = |x: f64, hi: usize| x.max(0.0).min(hi as f64) as usize;
    (
        clampi(u0.floor() - 1.0, cam.width),
        clampi(v0.floor() - 1.0, cam.height),
        clampi(u1.ceil() + 2.0, cam.width),
        clampi(v1.ceil() + 2.0, cam.height),
    )
}

/// Nearest hit per pixel: `(distance, capsule index)`.
fn depth_pass(capsules: &[PlacedCapsule], cam: &CameraModel) -> Vec<Option<(f64, usize)>> {
    let mut zbuf: Vec<Option<(f64, usize)>> = vec![None; cam.width * cam.height];
    let origin = Vec3::zeros();
    for (k, c) in capsules.iter().enumerate() {
        let (u0, v0, u1, v1) = pixel_bounds(c, cam);
        for row in v0..v1 {
            for col in u0..u1 {
                let dir = cam.pixel_ray(col, row);
                if let Some(t) = ray_capsule(&origin, &dir, &c.a, &c.b, c.radius) {
                    let slot = &mut zbuf[row * cam.width + col];
                    if slot.map_or(true, |(best, _)| t < best) {
                        *slot = Some((t, k));
                    }
                }
            }
        }
    }
    zbuf
}

fn paint(image: &mut RgbImage, capsules: &[PlacedCapsule], zbuf: &[Option<(f64, usize)>], cam: &CameraModel, bg: &BackgroundSpec) {
    for (i, hit) in zbuf.iter().enumerate() {
        if let Some((t, k)) = *hit {
            let (col, row) = (i % cam.width, i / cam.width);
            let p = cam.pixel_ray(col, row) * t;
            let c = &capsules[k];
            let n = capsule_normal(&p, &c.a, &c.b);
            image.put_pixel(col as u32, row as u32, shade(c.color, &n, bg));
        }
    }
}

/// Background only: gradient, flat shapes, then distractor capsules.
pub fn render_background(cam: &CameraModel, bg: &BackgroundSpec) -> RgbImage {
    let (w, h) = (cam.width, cam.height);
    let mut img = RgbImage::from_fn(w as u32, h as u32, |col, row| {
        let (x, y) = ((col as f64 + 0.5) / w as f64, (row as f64 + 0.5) / h as f64);
        let color = bg
            .shapes
            .iter()
            .rev()
            .find_map(|s| s.contains(x, y))
            .unwrap_or_else(|| {
                let mut c = [0u8; 3];
                for (ch, out) in c.iter_mut().enumerate() {
                    *out = lerp(bg.top[ch], bg.bottom[ch], y);
                }
                c
            });
        Px(color)
    });
    let zbuf = depth_pass(&bg.distractors, cam);
    paint(&mut img, &bg.distractors, &zbuf, cam, bg);
    img
}

/// Renders camera-frame capsules over the background. The mask is exactly
/// the set of pixels whose centre ray hits any subject capsule.
pub fn render_capsules(subject: &[PlacedCapsule], cam: &CameraModel, bg: &BackgroundSpec) -> (RgbImage, Mask) {
    let mut img = render_background(cam, bg);
    let zbuf = depth_pass(subject, cam);
    paint(&mut img, subject, &zbuf, cam, bg);
    let mask = Mask {
        width: cam.width,
        height: cam.height,
        data: zbuf.iter().map(|h| h.is_some() as u8).collect(),
    };
    (img, mask)
}

/// Mask only; skips shading and background.
pub fn render_mask(subject: &[PlacedCapsule], cam: &CameraModel) -> Mask {
    let zbuf = depth_pass(subject, cam);
    Mask {
        width: cam.width,
        height: cam.height,
        data: zbuf.iter().map(|h| h.is_some() as u8).collect(),
    }
}

/// Robot capsules in the camera frame. `base_pose` places the robot base in the world.
pub fn robot_in_camera(model: &RobotModel, angles: &[f64], cam: &CameraModel, base_pose: &Transform) -> Result<Vec<PlacedCapsule>, SceneError> {
    let frames = model.forward_kinematics(angles)?;
    let to_cam = cam.pose.inverse().compose(base_pose);
    Ok(model
        .place(&frames)
        .into_iter()
        .map(|c| PlacedCapsule {
            a: to_cam.apply(&c.a),
            b: to_cam.apply(&c.b),
            ..c
        })
        .collect())
}

/// Renders one robot configuration. Fails when no robot pixel lands in the frame.
pub fn render(model: &RobotModel, angles: &[f64], cam: &CameraModel, bg: &BackgroundSpec) -> Result<(RgbImage, Mask), SceneError> {
    let capsules = robot_in_camera(model, angles, cam, &Transform::identity())?;
    let (img, mask) = render_capsules(&capsules, cam, bg);
    if mask.count() == 0 {
        return Err(SceneError::Degenerate("robot is entirely outside the view".into()));
    }
    Ok((img, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cam64() -> CameraModel {
        CameraModel::new(60.0, 60.0, 32.0, 32.0, 64, 64).unwrap()
    }

    #[test]
    fn empty_scene_has_empty_mask() {
        let (_, mask) = render_capsules(&[], &cam64(), &BackgroundSpec::plain());
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn sphere_area_matches_disc() {
        let cam = CameraModel::new(400.0, 400.0, 240.0, 180.0, 480, 360).unwrap();
        let (r, z) = (0.1, 1.5);
        let c = Vec3::new(0.0, 0.0, z);
        let sphere = PlacedCapsule {
            a: c,
            b: c,
            radius: r,
            color: [255, 0, 0],
        };
        let mask = render_mask(&[sphere], &cam);
        let expected = PI * (cam.fx * r / z).powi(2);
        let rel = (mask.count() as f64 - expected).abs() / expected;
        assert!(rel < 0.02, "area {} vs {expected}", mask.count());
    }

    #[test]
    fn bounds_are_conservative() {
        let cam = cam64();
        let caps = [
            PlacedCapsule {
                a: Vec3::new(-0.3, -0.2, 1.0),
                b: Vec3::new(0.4, 0.3, 2.0),
                radius: 0.05,
                color: [1, 2, 3],
            },
            PlacedCapsule {
                a: Vec3::new(0.5, 0.1, 0.6),
                b: Vec3::new(0.5, 0.1, 0.6),
                radius: 0.2,
                color: [1, 2, 3],
            },
        ];
        let mask = render_mask(&caps, &cam);
        for row in 0..64 {
            for col in 0..64 {
                let d = cam.pixel_ray(col, row);
                let hit = caps.iter().any(|c| ray_capsule(&Vec3::zeros(), &d, &c.a, &c.b, c.radius).is_some());
                assert_eq!(mask.get(col, row), hit, "pixel {col},{row}");
            }
        }
    }
}
