use std::f64::consts::PI;

use rand::Rng;

use super::geometry::{segment_distance_sq, Transform, Vec3};
use super::SceneError;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    /// Rotation axis in the joint's own frame, unit length.
    pub axis: Vec3,
    /// Pose of this joint relative to the previous joint frame (or the base).
    pub origin: Transform,
    /// `[min, max]` in radians.
    pub limits: [f64; 2],
}

/// Frame a capsule is rigidly attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkFrame {
    Base,
    Joint(usize),
}

impl LinkFrame {
    /// Position along the chain: base is 0, joint `i` is `i + 1`.
    pub fn chain_index(self) -> usize {
        match self {
            LinkFrame::Base => 0,
            LinkFrame::Joint(i) => i + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub frame: LinkFrame,
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
    pub color: Rgb,
    /// Structural links take part in self-collision checks; joint covers only render.
    pub structural: bool,
}

/// A capsule resolved into a common frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedCapsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    /// Reporting group; several catalog models may share one (the UR variants).
    pub family: String,
    pub type_id: usize,
    /// Nominal reach in meters, used to normalise position errors.
    pub reach: f64,
    pub joints: Vec<Joint>,
    pub links: Vec<Capsule>,
    pub base_color_scheme: [Rgb; 2],
}

const SILVER: Rgb = [186, 188, 194];
const UR_BLUE: Rgb = [38, 96, 196];
const KUKA_ORANGE: Rgb = [238, 118, 24];
const PANDA_WHITE: Rgb = [236, 236, 232];
const PANDA_BLACK: Rgb = [34, 34, 38];

struct ChainBuilder {
    joints: Vec<Joint>,
    links: Vec<Capsule>,
    link_color: Rgb,
    cover_color: Rgb,
}

impl ChainBuilder {
    fn new(link_color: Rgb, cover_color: Rgb) -> Self {
        Self {
            joints: Vec::new(),
            links: Vec::new(),
            link_color,
            cover_color,
        }
    }

    /// Adds a joint at `offset` from the previous frame, with a structural
    /// link along the offset and a colored cover around the joint axis.
    fn joint(mut self, offset: [f64; 3], axis: Vec3, limits: [f64; 2], link_r: f64, cover_r: f64) -> Self {
        let offset = Vec3::from(offset);
        let parent = match self.joints.len() {
            0 => LinkFrame::Base,
            n => LinkFrame::Joint(n - 1),
        };
        self.links.push(Capsule {
            frame: parent,
            a: Vec3::zeros(),
            b: offset,
            radius: link_r,
            color: self.link_color,
            structural: true,
        });
        let idx = self.joints.len();
        self.joints.push(Joint {
            axis: axis.normalize(),
            origin: Transform::from_translation(offset.x, offset.y, offset.z),
            limits,
        });
        let half = axis.normalize() * (cover_r * 0.9);
        self.links.push(Capsule {
            frame: LinkFrame::Joint(idx),
            a: -half,
            b: half,
            radius: cover_r,
            color: self.cover_color,
            structural: false,
        });
        self
    }

    fn flange(mut self, offset: [f64; 3], radius: f64) -> Self {
        let last = self.joints.len() - 1;
        self.links.push(Capsule {
            frame: LinkFrame::Joint(last),
            a: Vec3::zeros(),
            b: Vec3::from(offset),
            radius,
            color: self.link_color,
            structural: true,
        });
        self
    }
}

struct UrDims {
    d1: f64,
    shoulder: f64,
    elbow: f64,
    upper: f64,
    fore: f64,
    d4: f64,
    d5: f64,
    d6: f64,
    r: f64,
}

fn ur_like(name: &str, type_id: usize, reach: f64, d: UrDims) -> RobotModel {
    let y = Vec3::y();
    let z = Vec3::z();
    let full = [-PI, PI];
    let b = ChainBuilder::new(SILVER, UR_BLUE)
        .joint([0.0, 0.0, d.d1], z, full, d.r * 1.1, d.r * 1.2)
        .joint([0.0, d.shoulder, 0.0], y, [-2.2, 2.2], d.r, d.r * 1.2)
        .joint([0.0, -d.elbow, d.upper], y, [-2.6, 2.6], d.r, d.r * 1.15)
        .joint([0.0, 0.0, d.fore], y, full, d.r * 0.8, d.r * 0.95)
        .joint([0.0, d.d4, 0.0], z, full, d.r * 0.8, d.r * 0.95)
        .joint([0.0, 0.0, d.d5], y, full, d.r * 0.8, d.r * 0.95)
        .flange([0.0, d.d6, 0.0], d.r * 0.7);
    RobotModel {
        name: name.into(),
        family: "ur".into(),
        type_id,
        reach,
        joints: b.joints,
        links: b.links,
        base_color_scheme: [SILVER, UR_BLUE],
    }
}

fn kuka_like(type_id: usize) -> RobotModel {
    let y = Vec3::y();
    let z = Vec3::z();
    let r = 0.06;
    let b = ChainBuilder::new(SILVER, KUKA_ORANGE)
        .joint([0.0, 0.0, 0.17], z, [-2.96, 2.96], r * 1.1, r * 1.1)
        .joint([0.0, 0.0, 0.19], y, [-2.09, 2.09], r, r * 1.2)
        .joint([0.0, 0.0, 0.21], z, [-2.96, 2.96], r, r * 1.05)
        .joint([0.0, 0.0, 0.19], y, [-2.09, 2.09], r, r * 1.2)
        .joint([0.0, 0.0, 0.21], z, [-2.96, 2.96], r * 0.9, r)
        .joint([0.0, 0.0, 0.19], y, [-2.09, 2.09], r * 0.9, r * 1.1)
        .joint([0.0, 0.0, 0.126], z, [-3.05, 3.05], r * 0.75, r * 0.8)
        .flange([0.0, 0.0, 0.07], r * 0.6);
    RobotModel {
        name: "kuka_iiwa".into(),
        family: "kuka".into(),
        type_id,
        reach: 0.8,
        joints: b.joints,
        links: b.links,
        base_color_scheme: [SILVER, KUKA_ORANGE],
    }
}

fn panda_like(type_id: usize) -> RobotModel {
    let y = Vec3::y();
    let z = Vec3::z();
    let r = 0.055;
    let b = ChainBuilder::new(PANDA_WHITE, PANDA_BLACK)
        .joint([0.0, 0.0, 0.19], z, [-2.9, 2.9], r * 1.2, r * 1.15)
        .joint([0.0, 0.0, 0.14], y, [-1.76, 1.76], r, r * 1.15)
        .joint([0.0, 0.0, 0.17], z, [-2.9, 2.9], r, r * 1.05)
        .joint([0.0825, 0.0, 0.15], -y, [0.07, 3.0], r, r * 1.15)
        .joint([-0.0825, 0.0, 0.2], z, [-2.9, 2.9], r * 0.9, r * 1.05)
        .joint([0.0, 0.0, 0.18], -y, [-0.01, 3.75], r * 0.9, r)
        .joint([0.088, 0.0, 0.0], z, [-2.9, 2.9], r * 0.75, r * 0.85)
        .flange([0.0, 0.0, -0.09], r * 0.6);
    RobotModel {
        name: "panda".into(),
        family: "panda".into(),
        type_id,
        reach: 0.855,
        joints: b.joints,
        links: b.links,
        base_color_scheme: [PANDA_WHITE, PANDA_BLACK],
    }
}

/// Version tag written into dataset manifests.
pub const CATALOG_VERSION: &str = "capsule-catalog-1";

/// The five catalog robots: three UR-like scale variants, a Kuka-like and a Panda-like arm.
pub fn catalog() -> Vec<RobotModel> {
    vec![
        ur_like(
            "ur3",
            0,
            0.5,
            UrDims {
                d1: 0.152,
                shoulder: 0.12,
                elbow: 0.093,
                upper: 0.244,
                fore: 0.213,
                d4: 0.112,
                d5: 0.085,
                d6: 0.082,
                r: 0.045,
            },
        ),
        ur_like(
            "ur5",
            1,
            0.85,
            UrDims {
                d1: 0.089,
                shoulder: 0.136,
                elbow: 0.12,
                upper: 0.425,
                fore: 0.392,
                d4: 0.109,
                d5: 0.095,
                d6: 0.082,
                r: 0.055,
            },
        ),
        ur_like(
            "ur10",
            2,
            1.3,
            UrDims {
                d1: 0.128,
                shoulder: 0.176,
                elbow: 0.128,
                upper: 0.612,
                fore: 0.572,
                d4: 0.164,
                d5: 0.116,
                d6: 0.092,
                r: 0.07,
            },
        ),
        kuka_like(3),
        panda_like(4),
    ]
}

/// Looks up catalog models by name, reporting the valid names on failure.
pub fn select_models(names: &[String]) -> Result<Vec<RobotModel>, SceneError> {
    let all = catalog();
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|m| &m.name == n)
                .cloned()
                .ok_or_else(|| SceneError::UnknownRobot {
                    name: n.clone(),
                    catalog: all.iter().map(|m| m.name.clone()).collect(),
                })
        })
        .collect()
}

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Per-joint frames in the base frame, in chain order.
    pub fn forward_kinematics(&self, angles: &[f64]) -> Result<Vec<Transform>, SceneError> {
        if angles.len() != self.joints.len() {
            return Err(SceneError::AngleCount {
                expected: self.joints.len(),
                got: angles.len(),
            });
        }
        let mut frames = Vec::with_capacity(self.joints.len());
        let mut current = Transform::identity();
        for (i, (joint, &q)) in self.joints.iter().zip(angles).enumerate() {
            let [lo, hi] = joint.limits;
            if !(lo..=hi).contains(&q) {
                return Err(SceneError::JointLimit {
                    joint: i,
                    angle: q,
                    limits: joint.limits,
                });
            }
            current = current
                .compose(&joint.origin)
                .compose(&Transform::from_axis_angle(&joint.axis, q));
            frames.push(current);
        }
        Ok(frames)
    }

    pub fn joint_positions(&self, frames: &[Transform]) -> Vec<Vec3> {
        frames.iter().map(|f| f.translation).collect()
    }

    /// Fixed distance between consecutive joints, independent of configuration.
    pub fn joint_offsets(&self) -> Vec<f64> {
        self.joints[1..].iter().map(|j| j.origin.translation.norm()).collect()
    }

    /// All capsules placed into the base frame for the given joint frames.
    pub fn place(&self, frames: &[Transform]) -> Vec<PlacedCapsule> {
        self.links
            .iter()
            .map(|c| {
                let t = match c.frame {
                    LinkFrame::Base => Transform::identity(),
                    LinkFrame::Joint(i) => frames[i],
                };
                PlacedCapsule {
                    a: t.apply(&c.a),
                    b: t.apply(&c.b),
                    radius: c.radius,
                    color: c.color,
                }
            })
            .collect()
    }

    /// First violated constraint for a configuration, if any: a pair of
    /// structural links at least two frames apart that intersect, or a
    /// moving capsule that dips below the table plane `z = 0`.
    pub fn collision(&self, frames: &[Transform]) -> Option<Collision> {
        let placed = self.place(frames);
        for (i, (ci, pi)) in self.links.iter().zip(&placed).enumerate() {
            if ci.frame.chain_index() >= 2 {
                let lowest = pi.a.z.min(pi.b.z) - pi.radius;
                if lowest < 0.0 {
                    return Some(Collision::Table { link: i });
                }
            }
            if !ci.structural {
                continue;
            }
            for (j, (cj, pj)) in self.links.iter().zip(&placed).enumerate().skip(i + 1) {
                if !cj.structural || ci.frame.chain_index().abs_diff(cj.frame.chain_index()) < 2 {
                    continue;
                }
                let reach = pi.radius + pj.radius;
                if segment_distance_sq(&pi.a, &pi.b, &pj.a, &pj.b) < reach * reach {
                    return Some(Collision::SelfContact { a: i, b: j });
                }
            }
        }
        None
    }

    /// Rejection-samples a collision-free configuration within joint limits.
    pub fn sample_configuration<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Vec<f64>, SceneError> {
        for _ in 0..max_attempts {
            let angles: Vec<f64> = self
                .joints
                .iter()
                .map(|j| rng.gen_range(j.limits[0]..=j.limits[1]))
                .collect();
            let frames = self.forward_kinematics(&angles)?;
            if self.collision(&frames).is_none() {
                return Ok(angles);
            }
        }
        Err(SceneError::SamplingExhausted {
            robot: self.name.clone(),
            attempts: max_attempts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collision {
    Table { link: usize },
    SelfContact { a: usize, b: usize },
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar_chain() -> RobotModel {
        let z = Vec3::z();
        RobotModel {
            name: "planar".into(),
            family: "test".into(),
            type_id: 0,
            reach: 0.8,
            joints: vec![
                Joint {
                    axis: z,
                    origin: Transform::identity(),
                    limits: [-PI, PI],
                },
                Joint {
                    axis: z,
                    origin: Transform::from_translation(0.5, 0.0, 0.0),
                    limits: [-PI, PI],
                },
                Joint {
                    axis: z,
                    origin: Transform::from_translation(0.3, 0.0, 0.0),
                    limits: [-PI, PI],
                },
            ],
            links: vec![],
            base_color_scheme: [SILVER, SILVER],
        }
    }

    /// Positions of the two joints after the root pivot.
    fn tip_positions(angles: [f64; 2]) -> Vec<Vec3> {
        let m = planar_chain();
        let frames = m.forward_kinematics(&[angles[0], angles[1], 0.0]).unwrap();
        m.joint_positions(&frames)[1..].to_vec()
    }

    #[test]
    fn planar_home_pose() {
        let p = tip_positions([0.0, 0.0]);
        assert!((p[0] - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((p[1] - Vec3::new(0.8, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn planar_quarter_turn() {
        let p = tip_positions([FRAC_PI_2, 0.0]);
        assert!((p[0] - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
        assert!((p[1] - Vec3::new(0.0, 0.8, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn out_of_limit_names_joint() {
        let m = &catalog()[1];
        let mut q = vec![0.0; 6];
        q[2] = 3.0;
        match m.forward_kinematics(&q) {
            Err(SceneError::JointLimit { joint, .. }) => assert_eq!(joint, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn catalog_shapes() {
        let cat = catalog();
        assert_eq!(cat.len(), 5);
        let dofs: Vec<usize> = cat.iter().map(RobotModel::dof).collect();
        assert_eq!(dofs, vec![6, 6, 6, 7, 7]);
        for (i, m) in cat.iter().enumerate() {
            assert_eq!(m.type_id, i);
            for j in &m.joints {
                assert!((j.axis.norm() - 1.0).abs() < 1e-12);
                assert!(j.limits[0] < j.limits[1]);
            }
        }
    }

    #[test]
    fn every_catalog_model_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in catalog() {
            for _ in 0..20 {
                let q = m.sample_configuration(&mut rng, 5000).unwrap();
                let frames = m.forward_kinematics(&q).unwrap();
                assert!(m.collision(&frames).is_none());
            }
        }
    }

    #[test]
    fn impossible_limits_exhaust_budget() {
        let mut m = catalog()[1].clone();
        // forces the upper arm flat into the table
        m.joints[1].limits = [2.19, 2.2];
        m.joints[2].limits = [-0.01, 0.01];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.sample_configuration(&mut rng, 50),
            Err(SceneError::SamplingExhausted { attempts: 50, .. })
        ));
    }
}
