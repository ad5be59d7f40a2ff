//! Central finite-difference checks of every graph op and every loss head
//! in 64-bit arithmetic, shared by the gradient tests and the acceptance
//! suite.

#![allow(dead_code)]

use armsight::multinet::{ArchitectureDescriptor, ConvLayer, DenseLayer, InputSize, LayerGroup, Network};
use armsight::objectives::{
    base_loss_node, joint_loss_node, loss_nodes, mask_loss_node, type_loss_node, BatchTargets, ClassWeights,
    LossWeights,
};
use armsight::tensor::{Conv2dSpec, Graph, NodeId, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-6;
pub const POINTS: usize = 12;

type Build = dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId;

/// Result of checking one op: the worst relative error over `points`
/// coordinates and the first coordinate that exceeded the tolerance.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    pub points: usize,
    pub worst: f64,
    pub failure: Option<String>,
}

impl Outcome {
    pub fn assert_ok(&self) {
        if let Some(f) = &self.failure {
            panic!("{f}");
        }
        eprintln!("{}: worst relative error {:e} over {} points", self.name, self.worst, self.points);
    }
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn eval(vars: &[(Vec<usize>, Vec<f64>)], build: &Build) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = vars.iter().map(|(s, v)| g.input(s, v.clone()).unwrap()).collect();
    let out = build(&mut g, &ids);
    g.value(out)[0]
}

/// Checks `POINTS` random coordinates spread over all variables.
fn check(name: &str, vars: Vec<(Vec<usize>, Vec<f64>)>, build: &Build, seed: u64) -> Outcome {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = vars.iter().map(|(s, v)| g.input(s, v.clone()).unwrap()).collect();
    let out = build(&mut g, &ids);
    assert_eq!(g.shape(out), &[1], "{name}: builder must return a scalar");
    let mut store = ParamStore::new();
    g.backward(out, &mut store).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(&vars)
        .map(|(id, (_, v))| g.grad(*id).map_or(vec![0.0; v.len()], <[f64]>::to_vec))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = Outcome {
        name: name.to_owned(),
        points: POINTS,
        worst: 0.0,
        failure: None,
    };
    for p in 0..POINTS {
        let vi = p % vars.len();
        let k = rng.gen_range(0..vars[vi].1.len());
        let mut plus = vars.clone();
        plus[vi].1[k] += STEP;
        let mut minus = vars.clone();
        minus[vi].1[k] -= STEP;
        let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * STEP);
        let e = rel_err(analytic[vi][k], numeric);
        outcome.worst = outcome.worst.max(e);
        if !(e < TOL) && outcome.failure.is_none() {
            outcome.failure = Some(format!(
                "{name}: var {vi} index {k}: analytic {} numeric {numeric} rel err {e:e}",
                analytic[vi][k]
            ));
        }
    }
    outcome
}

/// Values in `[lo, hi]` with magnitude at least `gap`, away from kinks at zero.
fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(lo..hi);
            if v.abs() >= gap {
                break v;
            }
        })
        .collect()
}

/// Reduces an arbitrary node to a scalar through a fixed random weighting.
fn weighted_sum(g: &mut Graph<f64>, x: NodeId, seed: u64) -> NodeId {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.input(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let m = g.mul(x, r).unwrap();
    g.sum(m).unwrap()
}

fn unary(name: &str, lo: f64, hi: f64, gap: f64, op: fn(&mut Graph<f64>, NodeId) -> NodeId) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let x = rand_vec(&mut rng, 24, lo, hi, gap);
    check(
        name,
        vec![(vec![2, 3, 4], x)],
        &move |g, v| {
            let y = op(g, v[0]);
            weighted_sum(g, y, 99)
        },
        7,
    )
}

pub fn elementwise_ops() -> Vec<Outcome> {
    vec![
        unary("relu", -2.0, 2.0, 0.01, |g, x| g.relu(x).unwrap()),
        unary("sigmoid", -4.0, 4.0, 0.0, |g, x| g.sigmoid(x).unwrap()),
        unary("ln", 0.2, 3.0, 0.0, |g, x| g.ln(x).unwrap()),
        unary("affine", -2.0, 2.0, 0.0, |g, x| g.affine(x, -1.7, 0.3).unwrap()),
        unary("scale", -2.0, 2.0, 0.0, |g, x| g.scale(x, 2.5).unwrap()),
        // inside and outside the clamp interval, away from its edges
        unary("clamp", -2.0, 2.0, 0.0, |g, x| g.clamp(x, -5.0, 5.0).unwrap()),
        unary("clamp_saturated", 0.5, 2.0, 0.0, |g, x| g.clamp(x, -1.0, 0.1).unwrap()),
        unary("softmax", -3.0, 3.0, 0.0, |g, x| g.softmax(x).unwrap()),
        unary("reshape", -1.0, 1.0, 0.0, |g, x| g.reshape(x, &[6, 4]).unwrap()),
        unary("flatten", -1.0, 1.0, 0.0, |g, x| g.flatten(x).unwrap()),
        unary("sum", -1.0, 1.0, 0.0, |g, x| g.sum(x).unwrap()),
        unary("mean", -1.0, 1.0, 0.0, |g, x| g.mean(x).unwrap()),
        unary("row_norm", -1.0, 1.0, 0.05, |g, x| {
            let r = g.reshape(x, &[8, 3]).unwrap();
            g.row_norm(r).unwrap()
        }),
    ]
}

pub fn binary_ops() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_vec(&mut rng, 12, -2.0, 2.0, 0.0);
    let b = rand_vec(&mut rng, 12, -2.0, 2.0, 0.0);
    let mut out = Vec::new();
    for (name, op) in [
        ("add", Graph::add as fn(&mut Graph<f64>, NodeId, NodeId) -> _),
        ("sub", Graph::sub),
        ("mul", Graph::mul),
    ] {
        out.push(check(
            name,
            vec![(vec![3, 4], a.clone()), (vec![3, 4], b.clone())],
            &move |g, v| {
                let y = op(g, v[0], v[1]).unwrap();
                weighted_sum(g, y, 5)
            },
            11,
        ));
    }
    out.push(check(
        "concat",
        vec![(vec![2, 3, 2], a.clone()), (vec![2, 1, 2], b[..4].to_vec())],
        &|g, v| {
            let y = g.concat(&[v[0], v[1]], 1).unwrap();
            weighted_sum(g, y, 6)
        },
        12,
    ));
    out
}

pub fn spatial_ops() -> Vec<Outcome> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // distinct values with gaps keep pooling winners stable under the step
    let mut x: Vec<f64> = (0..2 * 2 * 6 * 6).map(|i| i as f64 * 0.01).collect();
    x.shuffle(&mut rng);
    vec![
        check(
            "max_pool2x2",
            vec![(vec![2, 2, 6, 6], x.clone())],
            &|g, v| {
                let y = g.max_pool2x2(v[0]).unwrap();
                weighted_sum(g, y, 8)
            },
            13,
        ),
        check(
            "nearest_upsample2x",
            vec![(vec![1, 2, 3, 3], x[..18].to_vec())],
            &|g, v| {
                let y = g.nearest_upsample2x(v[0]).unwrap();
                weighted_sum(g, y, 9)
            },
            14,
        ),
        check(
            "resize_nearest",
            vec![(vec![1, 2, 3, 4], x[..24].to_vec())],
            &|g, v| {
                let y = g.resize_nearest(v[0], 7, 9).unwrap();
                weighted_sum(g, y, 10)
            },
            15,
        ),
        check(
            "resize_bilinear",
            vec![(vec![1, 2, 3, 4], x[..24].to_vec())],
            &|g, v| {
                let y = g.resize_bilinear(v[0], 7, 9).unwrap();
                weighted_sum(g, y, 11)
            },
            16,
        ),
    ]
}

pub fn conv2d_all_arguments() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (stride, padding) in [(1, 1), (1, 0), (2, 1), (2, 0)] {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + stride as u64 * 3 + padding as u64);
        let x = rand_vec(&mut rng, 2 * 3 * 7 * 6, -1.0, 1.0, 0.0);
        let w = rand_vec(&mut rng, 4 * 3 * 3 * 3, -0.5, 0.5, 0.0);
        let b = rand_vec(&mut rng, 4, -0.5, 0.5, 0.0);
        out.push(check(
            &format!("conv2d stride {stride} pad {padding}"),
            vec![(vec![2, 3, 7, 6], x), (vec![4, 3, 3, 3], w), (vec![4], b)],
            &move |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], Conv2dSpec { stride, padding }).unwrap();
                weighted_sum(g, y, 16)
            },
            17,
        ));
    }
    out
}

pub fn dense_all_arguments() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let x = rand_vec(&mut rng, 3 * 5, -1.0, 1.0, 0.0);
    let w = rand_vec(&mut rng, 4 * 5, -1.0, 1.0, 0.0);
    let b = rand_vec(&mut rng, 4, -1.0, 1.0, 0.0);
    vec![check(
        "dense",
        vec![(vec![3, 5], x), (vec![4, 5], w), (vec![4], b)],
        &|g, v| {
            let y = g.dense(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, 18)
        },
        19,
    )]
}

pub fn targets(batch: usize, h: usize, w: usize, classes: usize, seed: u64) -> BatchTargets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BatchTargets {
        batch,
        mask: (0..batch * h * w).map(|_| u8::from(rng.gen_bool(0.3))).collect(),
        mask_hw: (h, w),
        class_weights: vec![ClassWeights::from_fraction(0.3).unwrap(); batch],
        joints: (0..batch * 21).map(|_| rng.gen_range(-1.0..2.0)).collect(),
        joint_slots: 7,
        joint_counts: (0..batch).map(|i| if i % 2 == 0 { 6 } else { 7 }).collect(),
        base: (0..batch * 3).map(|_| rng.gen_range(-1.0..2.0)).collect(),
        classes: (0..batch).map(|i| i % classes).collect(),
        num_classes: classes,
    }
}

pub fn loss_heads() -> Vec<Outcome> {
    let t = targets(3, 4, 5, 5, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let probs = rand_vec(&mut rng, 3 * 20, 0.05, 0.95, 0.0);
    let joints = rand_vec(&mut rng, 3 * 21, -1.0, 2.0, 0.0);
    let base = rand_vec(&mut rng, 9, -1.0, 2.0, 0.0);
    let logits = rand_vec(&mut rng, 15, -2.0, 2.0, 0.0);
    let (tm, tj, tb, tt) = (t.clone(), t.clone(), t.clone(), t);
    vec![
        check(
            "mask loss",
            vec![(vec![3, 1, 4, 5], probs)],
            &move |g, v| mask_loss_node(g, v[0], &tm).unwrap(),
            42,
        ),
        check(
            "joint loss",
            vec![(vec![3, 21], joints)],
            &move |g, v| joint_loss_node(g, v[0], &tj).unwrap(),
            43,
        ),
        check(
            "base loss",
            vec![(vec![3, 3], base)],
            &move |g, v| base_loss_node(g, v[0], &tb).unwrap(),
            44,
        ),
        // cross-entropy checked through the softmax that feeds it in the network
        check(
            "type loss",
            vec![(vec![3, 5], logits)],
            &move |g, v| {
                let p = g.softmax(v[0]).unwrap();
                type_loss_node(g, p, &tt).unwrap()
            },
            45,
        ),
    ]
}

pub fn tiny_descriptor() -> ArchitectureDescriptor {
    use LayerGroup::*;
    let conv = |c, tag| ConvLayer {
        out_channels: c,
        kernel: 3,
        tag,
    };
    ArchitectureDescriptor {
        input: InputSize { width: 10, height: 8 },
        trunk: vec![conv(3, TrunkFrozen), conv(4, Stage2Unlockable)],
        mask_convs: vec![conv(4, Stage2Unlockable)],
        mask_up: vec![conv(3, Stage2Unlockable)],
        mask_head: conv(1, Stage1Trainable),
        head_hidden: DenseLayer {
            width: 6,
            tag: Stage2Unlockable,
        },
        head_tag: Stage1Trainable,
        max_joints: 7,
        coord_offset: [0.0, 0.0, 1.5],
    }
}

/// Final weighted loss of a whole network against its parameters: three
/// coordinates (first, middle, last) of every parameter tensor.
pub fn network_parameters() -> Outcome {
    let mut net = Network::<f64>::build(tiny_descriptor(), vec!["a".into(), "b".into(), "c".into()], 5).unwrap();
    let t = targets(2, 8, 10, 3, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    // Zero biases put pre-activations exactly on the relu kink; move off it.
    let ids: Vec<_> = net.params().ids().collect();
    for id in ids {
        for v in net.params_mut().get_mut(id).values_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let x: Vec<f64> = (0..2 * 3 * 80).map(|_| rng.gen_range(0.0..1.0)).collect();
    let weights = LossWeights::default();

    let loss_of = |n: &Network<f64>| -> f64 {
        let mut g = Graph::new();
        let xi = g.input(&[2, 3, 8, 10], x.clone()).unwrap();
        let h = n.forward_graph(&mut g, xi).unwrap();
        let l = loss_nodes(&mut g, h.mask_probs, h.joints, h.base, h.type_probs, &t, &weights).unwrap();
        g.value(l.final_)[0]
    };

    let mut work = net.clone();
    let mut g = Graph::new();
    let xi = g.input(&[2, 3, 8, 10], x.clone()).unwrap();
    let h = work.forward_graph(&mut g, xi).unwrap();
    let l = loss_nodes(&mut g, h.mask_probs, h.joints, h.base, h.type_probs, &t, &weights).unwrap();
    work.params_mut().zero_grad();
    g.backward(l.final_, work.params_mut()).unwrap();

    let mut outcome = Outcome {
        name: "network parameters through the final loss".into(),
        points: 0,
        worst: 0.0,
        failure: None,
    };
    let ids: Vec<_> = work.params().ids().collect();
    for (p, id) in ids.iter().enumerate() {
        let grad = work.params().get(*id).grad().unwrap().to_vec();
        let len = grad.len();
        for k in [0, len / 2, len - 1] {
            let mut plus = net.clone();
            plus.params_mut().get_mut(*id).values_mut()[k] += STEP;
            let mut minus = net.clone();
            minus.params_mut().get_mut(*id).values_mut()[k] -= STEP;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
            let e = rel_err(grad[k], numeric);
            outcome.worst = outcome.worst.max(e);
            outcome.points += 1;
            if !(e < TOL) && outcome.failure.is_none() {
                outcome.failure = Some(format!(
                    "param {p} `{}`[{k}]: analytic {} numeric {numeric} rel err {e:e}",
                    work.params().name(*id),
                    grad[k]
                ));
            }
        }
    }
    outcome
}

/// Every case above, in a fixed order.
pub fn all() -> Vec<Outcome> {
    let mut out = elementwise_ops();
    out.extend(binary_ops());
    out.extend(spatial_ops());
    out.extend(conv2d_all_arguments());
    out.extend(dense_all_arguments());
    out.extend(loss_heads());
    out.push(network_parameters());
    out
}
