use std::collections::BTreeMap;

use armsight::metrics::*;
use armsight::multinet::*;
use armsight::scene::Split;
use armsight::stagewise::{pretrain, OptimizerConfig, TrainConfig};
use proptest::prelude::*;

mod common;
use common::{synthetic, tiny};

#[test]
fn mask_accuracy_examples() {
    let gt = [1u8, 0, 0, 1];
    let exact: Vec<f64> = gt.iter().map(|&g| f64::from(g)).collect();
    assert_eq!(mask_accuracy(&exact, &gt, 0.5).unwrap(), 1.0);
    assert_eq!(mask_accuracy(&[0.9, 0.1, 0.7, 0.8], &gt, 0.5).unwrap(), 0.75);
    let gt10: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
    assert!((mask_accuracy(&[0.0; 100], &gt10, 0.5).unwrap() - 0.90).abs() < 1e-12);
    assert!(mask_accuracy(&[0.5; 3], &gt, 0.5).is_err());
}

proptest! {
    #[test]
    fn accuracy_and_mismatch_sum_to_one(
        pairs in prop::collection::vec((0.0..1.0f64, 0u8..=1), 1..200),
        t in 0.05..0.95f64,
    ) {
        let (est, gt): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        let acc = mask_accuracy(&est, &gt, t).unwrap();
        let miss = est.iter().zip(&gt).filter(|(e, g)| (**e >= t) != (**g == 1)).count() as f64 / est.len() as f64;
        prop_assert_eq!(acc + miss, 1.0);
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn median_matches_selection(values in prop::collection::vec(-100.0..100.0f64, 1..101)) {
        let m = median(&values);
        let below = values.iter().filter(|v| **v < m).count();
        let above = values.iter().filter(|v| **v > m).count();
        prop_assert!(below <= values.len() / 2 && above <= values.len() / 2);
    }
}

fn sample(joints: usize) -> PreparedSample {
    let mut s = synthetic("a1", "a", joints, 1, 0).remove(0);
    s.split = Split::Test;
    s
}

fn outputs_for(s: &PreparedSample, joint_shift: [f64; 3], base_shift: [f64; 3]) -> NetworkOutputs {
    let mut joints: Vec<[f64; 3]> = s
        .joints
        .iter()
        .map(|j| [j[0] + joint_shift[0], j[1] + joint_shift[1], j[2] + joint_shift[2]])
        .collect();
    // the unused seventh slot must not count
    joints.resize(7, [99.0, 99.0, 99.0]);
    NetworkOutputs {
        mask_prob: s.mask.iter().map(|&m| f64::from(m)).collect(),
        joints_est: joints,
        base_est: [s.base[0] + base_shift[0], s.base[1] + base_shift[1], s.base[2] + base_shift[2]],
        type_dist: vec![1.0],
    }
}

#[test]
fn position_error_examples() {
    let s = sample(6);
    assert_eq!(position_errors(&outputs_for(&s, [0.0; 3], [0.0; 3]), &s), (0.0, 0.0));
    let (j, b) = position_errors(&outputs_for(&s, [0.0, 0.05, 0.0], [0.03, 0.04, 0.0]), &s);
    assert!((j - 5.0).abs() < 1e-9, "{j}");
    assert!((b - 5.0).abs() < 1e-9, "{b}");
    let s7 = sample(7);
    let o = outputs_for(&s7, [0.0, 0.0, 0.02], [0.0; 3]);
    assert_eq!(joint_errors_cm(&o, &s7).len(), 7);
}

/// Three families, five classes and a test split, at tiny scale.
fn five_class_data() -> Vec<PreparedSample> {
    let mut data = Vec::new();
    for (k, (robot, family, dof)) in [("ur3", "ur", 6), ("ur5", "ur", 6), ("ur10", "ur", 6), ("kuka_iiwa", "kuka", 7), ("panda", "panda", 7)]
        .into_iter()
        .enumerate()
    {
        let mut s = synthetic(robot, family, dof, 10, k as u64);
        for (i, x) in s.iter_mut().enumerate() {
            x.id = k * 10 + i;
            x.split = if i < 8 { Split::Train } else { Split::Test };
            x.distance = 1.2 + (i % 5) as f64 * 0.3;
        }
        data.extend(s);
    }
    data
}

fn classes() -> Vec<String> {
    ["ur3", "ur5", "ur10", "kuka_iiwa", "panda"].map(String::from).to_vec()
}

#[test]
fn oracle_stub_scores_perfectly() {
    let data = five_class_data();
    let test: Vec<&PreparedSample> = data.iter().filter(|s| s.split == Split::Test).collect();
    let outs = oracle_outputs(&test, &classes(), 7);
    let (report, breakdown, rows) = evaluate_outputs(&outs, &data, &classes(), 0.5, [1.2, 2.5]).unwrap();
    assert_eq!(report.samples, 10);
    assert_eq!(rows.len(), 10);
    for g in report.groups.iter().chain(&report.raw).chain([&report.overall]) {
        assert_eq!(g.mask_accuracy, 1.0, "{}", g.name);
        assert_eq!(g.type_accuracy, 1.0, "{}", g.name);
        assert_eq!(g.joint_error_median, 0.0);
        assert_eq!(g.base_error_median, 0.0);
    }
    let names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, ["kuka", "panda", "ur"]);
    let counts: BTreeMap<&str, usize> = report.raw.iter().map(|g| (g.name.as_str(), g.n)).collect();
    for c in classes() {
        assert_eq!(counts[c.as_str()], 2, "{c}");
    }
    assert_eq!(report.groups.iter().find(|g| g.name == "ur").unwrap().n, 6);
    assert_eq!(breakdown.bins.iter().map(|b| b.n).sum::<usize>(), 10);
}

#[test]
fn grouped_type_accuracy_forgives_variant_confusion() {
    let data = five_class_data();
    let test: Vec<&PreparedSample> = data.iter().filter(|s| s.split == Split::Test).collect();
    let mut outs = oracle_outputs(&test, &classes(), 7);
    // call every ur3 a ur10
    for (o, s) in outs.iter_mut().zip(&test) {
        if s.robot == "ur3" {
            o.type_dist = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        }
    }
    let (report, _, _) = evaluate_outputs(&outs, &data, &classes(), 0.5, [1.2, 2.5]).unwrap();
    assert_eq!(report.groups.iter().find(|g| g.name == "ur").unwrap().type_accuracy, 1.0);
    assert_eq!(report.raw.iter().find(|g| g.name == "ur3").unwrap().type_accuracy, 0.0);
    assert!((report.overall.type_accuracy - 1.0).abs() < 1e-12);
}

#[test]
fn evaluation_ignores_the_train_split() {
    let mut data = five_class_data();
    let net = Network::<f32>::build(tiny(), classes(), 1).unwrap();
    let (a, _, rows) = evaluate(&net, &data, 0.5, [1.2, 2.5]).unwrap();
    assert!(rows.iter().all(|r| data.iter().any(|s| s.id == r.id && s.split == Split::Test)));
    for s in data.iter_mut().filter(|s| s.split == Split::Train) {
        s.input.iter_mut().for_each(|v| *v = 1.0 - *v);
        s.joints.iter_mut().for_each(|j| j[2] += 1.0);
    }
    let (b, _, _) = evaluate(&net, &data, 0.5, [1.2, 2.5]).unwrap();
    assert_eq!(a, b);
    for s in &mut data {
        s.split = Split::Train;
    }
    assert!(matches!(evaluate(&net, &data, 0.5, [1.2, 2.5]), Err(MetricsError::EmptySplit)));
}

/// Medians recomputed from the CSV dump by an independent sort.
#[test]
fn report_recomputes_from_dump() {
    let data = five_class_data();
    let net = Network::<f32>::build(tiny(), classes(), 2).unwrap();
    let (report, breakdown, rows) = evaluate(&net, &data, 0.5, [1.2, 2.5]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    write_csv(&path, &rows).unwrap();
    let header = std::fs::read_to_string(&path).unwrap();
    let first = header.lines().next().unwrap();
    for col in ["id", "type", "distance", "mask_acc", "joint_err_cm", "base_err_cm", "type_correct"] {
        assert!(first.split(',').any(|c| c == col), "{col} missing from {first}");
    }
    let back: Vec<SampleResult> = read_csv(&path).unwrap();
    assert_eq!(back, rows);
    assert_eq!(summarize(&back, 0.5), report);

    let sorted_median = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
    };
    for g in &report.groups {
        let mine: Vec<&SampleResult> = back.iter().filter(|r| r.family == g.name).collect();
        assert_eq!(g.joint_error_median, sorted_median(mine.iter().map(|r| r.joint_err_cm).collect()));
        assert_eq!(g.base_error_median, sorted_median(mine.iter().map(|r| r.base_err_cm).collect()));
        let pooled: Vec<f64> = mine
            .iter()
            .flat_map(|r| r.joint_errs_cm.split(';').map(|v| v.parse::<f64>().unwrap()))
            .collect();
        assert_eq!(g.joint_error_pooled_median, sorted_median(pooled));
        let acc = mine.iter().map(|r| r.mask_acc).sum::<f64>() / mine.len() as f64;
        assert_eq!(g.mask_accuracy, acc);
    }

    let bins_path = dir.path().join("bins.csv");
    write_csv(&bins_path, &breakdown.bins).unwrap();
    let first = std::fs::read_to_string(&bins_path).unwrap().lines().next().unwrap().to_owned();
    assert_eq!(first, "bin_low,bin_high,type,median_err_cm,n");
}

#[test]
fn distance_bins_partition_the_range() {
    let data = five_class_data();
    let test: Vec<&PreparedSample> = data.iter().filter(|s| s.split == Split::Test).collect();
    let outs = oracle_outputs(&test, &classes(), 7);
    let (_, b, rows) = evaluate_outputs(&outs, &data, &classes(), 0.5, [1.2, 2.5]).unwrap();
    assert_eq!(b.bin_width, 0.25);
    for fam in ["ur", "kuka", "panda"] {
        let mine: Vec<&DistanceBin> = b.bins.iter().filter(|x| x.family == fam).collect();
        assert_eq!(mine.len(), 6);
        assert!((mine[0].bin_low - 1.2).abs() < 1e-12);
        assert!((mine.last().unwrap().bin_high - 2.5).abs() < 1e-12);
        for w in mine.windows(2) {
            assert!((w[0].bin_high - w[1].bin_low).abs() < 1e-12);
        }
        let n: usize = mine.iter().map(|x| x.n).sum();
        assert_eq!(n, rows.iter().filter(|r| r.family == fam).count());
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        total_iters: 20,
        batch_size: 4,
        plateau_window: 100,
        stage1_max_iters: 10,
        stage2_extra_iters: 10,
        optimizer: OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn size_rows_reproduce_from_their_seed() {
    let base = synthetic("a1", "a", 6, 16, 1);
    let net = Network::<f32>::build(tiny(), vec!["a1".into()], 3).unwrap();
    let (ckpt, _) = pretrain(net, &base, &quick(), &mut |_| {}).unwrap();
    let mut mixed = synthetic("a1", "a", 6, 20, 2);
    mixed.extend(synthetic("b1", "b", 7, 20, 3));
    let val = [synthetic("a1", "a", 6, 6, 4), synthetic("b1", "b", 7, 6, 5)].concat();

    let rows = loss_vs_dataset_size(&ckpt, &mixed, &val, &[8, 16, 32], &quick(), None, 5).unwrap();
    assert_eq!(rows.iter().map(|r| r.size).collect::<Vec<_>>(), [8, 16, 32]);
    let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 3);
    let again = size_row(&ckpt, &mixed, &val, 16, &quick(), None, rows[1].seed).unwrap();
    assert_eq!(again.val_loss.to_bits(), rows[1].val_loss.to_bits());
    assert!(rows.iter().all(|r| r.val_loss.is_finite() && r.seconds > 0.0));

    assert!(matches!(loss_vs_dataset_size(&ckpt, &mixed, &val, &[16, 8], &quick(), None, 5), Err(MetricsError::Sizes(_))));
    assert!(matches!(
        loss_vs_dataset_size(&ckpt, &mixed, &val, &[41], &quick(), None, 5),
        Err(MetricsError::SizeTooLarge { .. })
    ));
}

#[test]
fn subsample_is_balanced_and_seeded() {
    let mut data = synthetic("a1", "a", 6, 30, 1);
    data.extend(synthetic("b1", "b", 7, 30, 2));
    let a = stratified_subsample(&data, 10, 3).unwrap();
    let b = stratified_subsample(&data, 10, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|s| s.robot == "a1").count(), 5);
    assert_ne!(stratified_subsample(&data, 10, 4).unwrap(), a);
}

#[test]
fn timing_statistics() {
    let net = Network::<f32>::build(ArchitectureDescriptor::default(), vec!["a".into()], 0).unwrap();
    let x = vec![0.5f32; net.input_len()];
    let t = timing(&net, &x, 10).unwrap();
    assert!(t.min_ms <= t.mean_ms && t.mean_ms <= t.max_ms);
    assert_eq!(t.n_frames, 10);
    assert_eq!(t.input, [128, 106]);
    assert!(t.hardware.contains("hardware threads"));
    assert!(matches!(timing(&net, &x, 9), Err(MetricsError::TooFewFrames(9))));

    // twice the pixels costs more per frame
    let wide = ArchitectureDescriptor::desk(InputSize { width: 256, height: 106 });
    let big = Network::<f32>::build(wide, vec!["a".into()], 0).unwrap();
    let xb = vec![0.5f32; big.input_len()];
    let tb = timing(&big, &xb, 10).unwrap();
    assert!(tb.mean_ms > t.mean_ms, "{} vs {}", tb.mean_ms, t.mean_ms);
}
