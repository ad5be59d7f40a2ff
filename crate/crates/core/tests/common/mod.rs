//! Tiny architecture and synthetic samples shared by the training tests.

use armsight::multinet::*;
use armsight::scene::Split;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny() -> ArchitectureDescriptor {
    use LayerGroup::*;
    let conv = |c, tag| ConvLayer {
        out_channels: c,
        kernel: 3,
        tag,
    };
    ArchitectureDescriptor {
        input: InputSize { width: 32, height: 24 },
        trunk: vec![conv(4, TrunkFrozen), conv(8, Stage2Unlockable)],
        mask_convs: vec![conv(8, Stage2Unlockable)],
        mask_up: vec![conv(4, Stage2Unlockable)],
        mask_head: conv(1, Stage1Trainable),
        head_hidden: DenseLayer {
            width: 16,
            tag: Stage2Unlockable,
        },
        head_tag: Stage1Trainable,
        max_joints: 7,
        coord_offset: [0.0, 0.0, 1.5],
    }
}

/// Samples whose mask is the bright red region of the input and whose
/// targets are simple functions of the image.
pub fn synthetic(robot: &str, family: &str, joints: usize, n: usize, seed: u64) -> Vec<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (32, 24);
    (0..n)
        .map(|i| {
            let (cx, cy, r) = (rng.gen_range(6.0..26.0), rng.gen_range(6.0..18.0), rng.gen_range(3.0..6.0));
            let mut input = vec![0f32; 3 * w * h];
            let mut mask = vec![0u8; w * h];
            for y in 0..h {
                for x in 0..w {
                    let inside = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r;
                    let p = y * w + x;
                    mask[p] = u8::from(inside);
                    input[p] = if inside { 0.9 } else { rng.gen_range(0.0..0.4) };
                    input[w * h + p] = rng.gen_range(0.0..0.5);
                    input[2 * w * h + p] = if family == "b" { 0.8 } else { 0.2 };
                }
            }
            let z = 1.2 + r / 10.0;
            PreparedSample {
                id: i,
                robot: robot.into(),
                family: family.into(),
                reach: 1.0,
                split: Split::Train,
                input,
                mask,
                joints: (0..joints).map(|k| [cx / 32.0 - 0.5, cy / 24.0 - 0.5, z + k as f64 * 0.05]).collect(),
                base: [cx / 32.0 - 0.5, cy / 24.0 - 0.4, z],
                distance: z,
            }
        })
        .collect()
}
