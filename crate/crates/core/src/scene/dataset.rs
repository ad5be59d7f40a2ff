use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{look_at, CameraModel};
use super::geometry::{Transform, Vec3};
use super::render::{render_capsules, render_mask, robot_in_camera, BackgroundConfig, BackgroundSpec, Mask};
use super::robot::{RobotModel, CATALOG_VERSION};
use super::SceneError;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Intrinsics and image size; the pose is drawn per sample.
    pub camera: CameraModel,
    /// Camera-to-base distance range in meters.
    pub distance_range: [f64; 2],
    /// Camera elevation above the table, radians.
    pub elevation_range: [f64; 2],
    /// Accepted robot-pixel fraction.
    pub foreground_band: [f64; 2],
    pub background: BackgroundConfig,
    pub max_config_attempts: usize,
    pub max_camera_attempts: usize,
    pub max_scene_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::default_sensor(),
            distance_range: [1.2, 2.5],
            elevation_range: [0.05, 0.7],
            foreground_band: [0.05, 0.22],
            background: BackgroundConfig::default(),
            max_config_attempts: 10_000,
            max_camera_attempts: 60,
            max_scene_attempts: 200,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.camera.validate()?;
        let [d0, d1] = self.distance_range;
        let [f0, f1] = self.foreground_band;
        if !(d0 > 0.0 && d0 <= d1) {
            return Err(SceneError::InvalidConfig(format!("distance range {:?}", self.distance_range)));
        }
        if !(0.0..1.0).contains(&f0) || !(f0 < f1 && f1 <= 1.0) {
            return Err(SceneError::InvalidConfig(format!("foreground band {:?}", self.foreground_band)));
        }
        Ok(())
    }
}

/// One rendered training record.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub image: RgbImage,
    pub mask: Mask,
    /// Camera-frame joint positions, meters.
    pub joint_coords_cam: Vec<Vec3>,
    pub base_coords_cam: Vec3,
    /// Index into the dataset's class list.
    pub robot_type: usize,
    pub joint_angles: Vec<f64>,
    pub camera: CameraModel,
    pub camera_distance: f64,
    pub background: BackgroundSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Transform,
}

/// Manifest entry for one sample; paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub image: String,
    pub mask: String,
    pub robot_type: usize,
    pub joint_angles: Vec<f64>,
    pub joints_cam: Vec<[f64; 3]>,
    pub base_cam: [f64; 3],
    pub camera: CameraRecord,
    pub distance: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub catalog_version: String,
    /// `[width, height]` of the stored images.
    pub image_size: [usize; 2],
    pub seed: u64,
    pub distance_range: [f64; 2],
    /// The distance range is a generator choice, not a measured quantity.
    pub distance_range_note: String,
    pub classes: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

fn to_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Sample {
    pub fn record(&self, split: Split) -> SampleRecord {
        SampleRecord {
            id: self.id,
            image: format!("images/{:06}.ppm", self.id),
            mask: format!("masks/{:06}.pgm", self.id),
            robot_type: self.robot_type,
            joint_angles: self.joint_angles.clone(),
            joints_cam: self.joint_coords_cam.iter().map(to_arr).collect(),
            base_cam: to_arr(&self.base_coords_cam),
            camera: CameraRecord {
                fx: self.camera.fx,
                fy: self.camera.fy,
                cx: self.camera.cx,
                cy: self.camera.cy,
                pose: self.camera.pose,
            },
            distance: self.camera_distance,
            split,
        }
    }
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, SceneError> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|source| SceneError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| SceneError::Json { path, source })
    }

    pub fn save_manifest(&self, dir: &Path) -> Result<(), SceneError> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|source| SceneError::Io { path, source })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Samples per class in the given split, indexed like `classes`.
    pub fn class_counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            if split.map_or(true, |sp| s.split == sp) {
                counts[s.robot_type] += 1;
            }
        }
        counts
    }
}

/// Per-class 80/20 split by seeded shuffle.
pub fn assign_splits(types: &[usize], n_classes: usize, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5711_u64);
    let mut splits = vec![Split::Test; types.len()];
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..types.len()).filter(|&i| types[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * 0.8).round() as usize;
        for &i in &idx[..n_train] {
            splits[i] = Split::Train;
        }
    }
    splits
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Renders sample `index` of class `class` with its own RNG stream, so the
/// result does not depend on generation order or thread count.
pub fn generate_sample(
    model: &RobotModel,
    class: usize,
    index: usize,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Sample, SceneError> {
    let mut rng = sample_rng(seed, index);
    let preview_scale = 0.25;
    let [band_lo, band_hi] = cfg.foreground_band;
    for _ in 0..cfg.max_scene_attempts {
        let angles = model.sample_configuration(&mut rng, cfg.max_config_attempts)?;
        let frames = model.forward_kinematics(&angles)?;
        let joints = model.joint_positions(&frames);
        let centroid = joints.iter().fold(Vec3::zeros(), |acc, p| acc + p) / joints.len() as f64;

        for _ in 0..cfg.max_camera_attempts {
            let distance = rng.gen_range(cfg.distance_range[0]..=cfg.distance_range[1]);
            let az = rng.gen_range(0.0..std::f64::consts::TAU);
            let el = rng.gen_range(cfg.elevation_range[0]..=cfg.elevation_range[1]);
            let eye = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * distance;
            let jitter = Vec3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            ) * model.reach;
            let roll = rng.gen_range(-0.1..0.1);
            let cam = cfg.camera.with_pose(look_at(&eye, &(centroid + jitter), roll));

            let base_cam = cam.world_to_camera(&Vec3::zeros());
            let base_visible = cam
                .project(&base_cam)
                .map(|(u, v)| cam.contains(u, v))
                .unwrap_or(false);
            if !base_visible {
                continue;
            }
            let capsules = robot_in_camera(model, &angles, &cam, &Transform::identity())?;
            if capsules.iter().any(|c| c.a.z - c.radius <= 0.05 || c.b.z - c.radius <= 0.05) {
                continue;
            }
            let preview = render_mask(&capsules, &cam.scaled(preview_scale)).fraction();
            if preview < band_lo * 0.8 || preview > band_hi * 1.2 {
                continue;
            }
            let depth_floor = capsules
                .iter()
                .map(|c| c.a.z.max(c.b.z) + c.radius)
                .fold(0.0, f64::max)
                + 0.3;
            let background = BackgroundSpec::random(&mut rng, &cfg.background, depth_floor, &cam.pose.inverse());
            let (image, mask) = render_capsules(&capsules, &cam, &background);
            let fraction = mask.fraction();
            if fraction < band_lo || fraction > band_hi {
                continue;
            }
            let world_to_cam = cam.pose.inverse();
            return Ok(Sample {
                id: index,
                image,
                mask,
                joint_coords_cam: joints.iter().map(|p| world_to_cam.apply(p)).collect(),
                base_coords_cam: base_cam,
                robot_type: class,
                joint_angles: angles,
                camera: cam,
                camera_distance: eye.norm(),
                background,
            });
        }
    }
    Err(SceneError::Degenerate(format!(
        "{}: no view inside the foreground band {:?} after {} scenes",
        model.name, cfg.foreground_band, cfg.max_scene_attempts
    )))
}

fn for_each_index<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Generates `n_per_type` samples for every model and hands each to `f`
/// (which may, for example, downscale it and drop the full-size image).
/// Sample `i` belongs to class `i / n_per_type`.
pub fn map_samples<U: Send>(
    models: &[RobotModel],
    n_per_type: usize,
    cfg: &GeneratorConfig,
    seed: u64,
    f: impl Fn(Sample) -> U + Sync + Send,
) -> Result<Vec<U>, SceneError> {
    cfg.validate()?;
    for_each_index(models.len() * n_per_type, |i| {
        let class = i / n_per_type;
        generate_sample(&models[class], class, i, seed, cfg).map(&f)
    })
    .into_iter()
    .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> SceneError + '_ {
    move |source| SceneError::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn write_pnm(path: &Path, data: &[u8], w: usize, h: usize, color: bool) -> Result<(), SceneError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let subtype = if color {
        PnmSubtype::Pixmap(SampleEncoding::Binary)
    } else {
        PnmSubtype::Graymap(SampleEncoding::Binary)
    };
    let kind = if color {
        ExtendedColorType::Rgb8
    } else {
        ExtendedColorType::L8
    };
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(data, w as u32, h as u32, kind)
        .map_err(img_err(path))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, SceneError> {
    Ok(image::open(path).map_err(img_err(path))?.to_rgb8())
}

/// Reads a 0/255 PGM mask into a 0/1 [`Mask`].
pub fn read_mask(path: &Path) -> Result<Mask, SceneError> {
    let gray: GrayImage = image::open(path).map_err(img_err(path))?.to_luma8();
    Ok(Mask {
        width: gray.width() as usize,
        height: gray.height() as usize,
        data: gray.as_raw().iter().map(|&v| (v >= 128) as u8).collect(),
    })
}

/// Generates a dataset directory: `images/*.ppm`, `masks/*.pgm` and `dataset.json`.
pub fn make_dataset(
    models: &[RobotModel],
    n_per_type: usize,
    cfg: &GeneratorConfig,
    seed: u64,
    out: &Path,
) -> Result<Dataset, SceneError> {
    if n_per_type < 5 {
        return Err(SceneError::InvalidConfig(format!(
            "n_per_type must be at least 5, got {n_per_type}"
        )));
    }
    for sub in ["images", "masks"] {
        let p: PathBuf = out.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let records = map_samples(models, n_per_type, cfg, seed, |s| -> Result<Sample, SceneError> {
        let rec = s.record(Split::Train);
        let (w, h) = (s.image.width() as usize, s.image.height() as usize);
        write_pnm(&out.join(&rec.image), s.image.as_raw(), w, h, true)?;
        let mask_bytes: Vec<u8> = s.mask.data.iter().map(|&v| v * 255).collect();
        write_pnm(&out.join(&rec.mask), &mask_bytes, w, h, false)?;
        // keep only metadata in memory
        Ok(Sample {
            image: RgbImage::new(0, 0),
            mask: Mask::empty(0, 0),
            ..s
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let types: Vec<usize> = records.iter().map(|s| s.robot_type).collect();
    let splits = assign_splits(&types, models.len(), seed);
    let dataset = Dataset {
        version: DATASET_VERSION,
        catalog_version: CATALOG_VERSION.into(),
        image_size: [cfg.camera.width, cfg.camera.height],
        seed,
        distance_range: cfg.distance_range,
        distance_range_note: "generator choice; not measured from recordings".into(),
        classes: models.iter().map(|m| m.name.clone()).collect(),
        samples: records.iter().zip(splits).map(|(s, sp)| s.record(sp)).collect(),
    };
    dataset.save_manifest(out)?;
    Ok(dataset)
}
