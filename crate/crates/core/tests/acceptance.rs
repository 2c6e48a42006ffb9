//! The acceptance gate: eight criteria, one verdict line each on stdout.
//! Every tolerance, sample count, and schedule is pinned in this file.
//!
//! Run with:
//! `cargo test -p cellstn --test acceptance -- --test-threads 1 --nocapture`
//!
//! The two training criteria (4 and 5) and the determinism criterion (8)
//! train real models and together take on the order of an hour on one core.

use std::time::Instant;

use rand::Rng;

use cellstn::data::{balance_classes, kfold_split, Dataset};
use cellstn::gradsuite;
use cellstn::img::Image;
use cellstn::losses::{localization_loss, ClassLabel};
use cellstn::metrics::MetricsReport;
use cellstn::pipeline::{
    build_train_set, cross_validate, init_models, predict_thetas, stage2_train_localizer,
    test_samples, write_metrics_csv, TrainConfig,
};
use cellstn::seeding;
use cellstn::stn::{
    affine_grid, bilinear_sample, crop_at_offset, make_ground_truth_theta, AffineTheta,
    CropGeometry,
};
use cellstn::{GraphT, Scalar};

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

fn geometry(dx: i32, dy: i32) -> CropGeometry<Scalar> {
    CropGeometry {
        d_i: 128,
        d_c: 64,
        theta_s: 0.5,
        dx,
        dy,
    }
}

/// Criterion 1 — every differentiable op passes finite-difference checking
/// at relative tolerance 1e-4 (eps 1e-5, f64) on ≥ 5 instances, in < 2 min.
#[test]
fn c1_gradient_suite() {
    let start = Instant::now();
    let reports = gradsuite::full_suite().unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let (text, all_pass) = gradsuite::render_suite(&reports);
    let enough = reports.iter().all(|r| r.instances >= 5);
    let max_err = reports
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let pass = all_pass && enough && elapsed < 120.0;
    verdict(
        "1/8 gradient-suite",
        pass,
        &format!(
            "{} ops, max rel err {max_err:.2e} vs tol {:.0e}, {elapsed:.1} s\n{text}",
            reports.len(),
            gradsuite::TOL,
        ),
    );
}

/// Criterion 2 — localization-loss invariants: exact zero on the ground
/// truth, < 1e-12 for rotated transforms with correct scale/translation,
/// and hand-derived single-term perturbation values within 1e-12.
#[test]
fn c2_localization_loss_invariants() {
    let loss_of = |theta: [Scalar; 6], target: AffineTheta<Scalar>| -> Scalar {
        let mut g = GraphT::new();
        let leaf = g.leaf(&[6], theta.to_vec()).unwrap();
        let loss = localization_loss(&mut g, leaf, &[target]).unwrap();
        g.scalar_value(loss)
    };

    // exact zero on ground-truth transforms across the offset range
    let mut worst_gt: Scalar = 0.0;
    for &(dx, dy) in &[(0, 0), (32, -32), (-17, 5), (31, 31), (-32, -1)] {
        let gt = make_ground_truth_theta(&geometry(dx, dy)).unwrap();
        worst_gt = worst_gt.max(loss_of(gt.0, gt));
    }
    let gt_exact = worst_gt == 0.0;

    // rotations at the correct scale and translation stay < 1e-12
    let mut rng = seeding::stream(0xacce97, "rotations", 0);
    let mut worst_rot: Scalar = 0.0;
    for _ in 0..100 {
        let phi: Scalar = rng.random_range(0.0..std::f64::consts::TAU);
        let dx = rng.random_range(-32..=32);
        let dy = rng.random_range(-32..=32);
        let gt = make_ground_truth_theta(&geometry(dx, dy)).unwrap();
        let s = 0.5;
        let rotated = [
            s * phi.cos(),
            -s * phi.sin(),
            gt.0[2],
            s * phi.sin(),
            s * phi.cos(),
            gt.0[5],
        ];
        worst_rot = worst_rot.max(loss_of(rotated, gt));
    }

    // single-term perturbations match hand-derived values
    let gt = make_ground_truth_theta(&geometry(7, -12)).unwrap();
    let mut tx = gt.0;
    tx[2] += 0.1; // translation term alone: 0.1^2
    let mut ty = gt.0;
    ty[5] -= 0.1;
    let mut s1 = gt.0;
    s1[0] += 0.1; // scale term + symmetry term: 2 * 0.1^2
    let worst_hand = [
        (loss_of(tx, gt) - 0.01).abs(),
        (loss_of(ty, gt) - 0.01).abs(),
        (loss_of(s1, gt) - 0.02).abs(),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);

    let pass = gt_exact && worst_rot < 1e-12 && worst_hand < 1e-12;
    verdict(
        "2/8 localization-loss-invariants",
        pass,
        &format!(
            "gt loss {worst_gt:.1e} (want exact 0), rot max {worst_rot:.1e}, hand max dev {worst_hand:.1e}"
        ),
    );
}

/// Criterion 3 — STN round trip: over an 8×8 integer sub-grid of
/// [−32,32]², sampling the offset patch with its ground-truth transform
/// matches the canonical centered focus crop within 1e-9 on interior
/// pixels.
#[test]
fn c3_stn_round_trip() {
    // a real textured synthetic canvas, not a toy ramp
    let ds = Dataset::synthetic(1, &geometry(0, 0), 0xacce97);
    let rec = &ds.records[1]; // the bar class: anisotropic content
    let src: Image<Scalar> = rec.canvas.to_planar();
    let center = (rec.cx, rec.cy);

    let t0 = make_ground_truth_theta(&geometry(0, 0)).unwrap();
    let g0 = affine_grid(&t0, 64, 64).unwrap();
    let p0 = crop_at_offset(&src, center, 128, 0, 0).unwrap();
    let want = bilinear_sample(&p0, &g0);

    let steps = [-32, -23, -14, -5, 5, 14, 23, 32];
    let mut worst: Scalar = 0.0;
    for &dx in &steps {
        for &dy in &steps {
            let t = make_ground_truth_theta(&geometry(dx, dy)).unwrap();
            let grid = affine_grid(&t, 64, 64).unwrap();
            let patch = crop_at_offset(&src, center, 128, dx, dy).unwrap();
            let got = bilinear_sample(&patch, &grid);
            for c in 0..3 {
                for i in 1..63 {
                    for j in 1..63 {
                        worst = worst.max((got.at(c, i, j) - want.at(c, i, j)).abs());
                    }
                }
            }
        }
    }
    verdict(
        "3/8 stn-round-trip",
        worst < 1e-9,
        &format!("64 offsets, interior max err {worst:.2e} vs 1e-9"),
    );
}

/// Criterion 4 — scaled stage-2 localization: training the localizer on
/// ~2,000 samples for 20 epochs brings the median held-out translation
/// error under 0.0625 (4 px of 128) in < 15 minutes.
#[test]
fn c4_synthetic_localization() {
    const TRAIN_PER_CLASS: usize = 334; // 1,002 records -> 2,004 entries
    const HELDOUT_PER_CLASS: usize = 167; // 501 held-out records
    const MEDIAN_BOUND: f64 = 0.0625;
    const TIME_BOUND_S: f64 = 900.0;

    let start = Instant::now();
    let mut cfg = TrainConfig::default().desk_scaled(); // stage 2: 200 -> 20 epochs
    cfg.batch_size = 8;
    let geom = cfg.geometry();

    let ds = Dataset::synthetic(TRAIN_PER_CLASS, &geom, 0xc4_0001);
    let indices: Vec<usize> = (0..ds.len()).collect();
    let set = build_train_set(&ds, &indices, 0xc4_0002).unwrap();
    let mut models = init_models(&cfg, 0xc4_0003).unwrap();
    let report = stage2_train_localizer(&cfg, &set, &mut models, 0xc4_0004).unwrap();

    let heldout = Dataset::synthetic(HELDOUT_PER_CLASS, &geom, 0xc4_0005);
    let held_indices: Vec<usize> = (0..heldout.len()).collect();
    let (off, _) = test_samples(&heldout.records, &held_indices, &geom, 0xc4_0006).unwrap();
    let thetas = predict_thetas(models.group("localizer").unwrap(), &off, 32).unwrap();
    let mut errs: Vec<f64> = Vec::with_capacity(2 * off.len());
    for (s, th) in off.iter().zip(&thetas) {
        let gt = make_ground_truth_theta(&CropGeometry {
            dx: s.dx,
            dy: s.dy,
            ..geom
        })
        .unwrap()
        .0;
        errs.push((th[2] - gt[2]).abs());
        errs.push((th[5] - gt[5]).abs());
    }
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    let elapsed = start.elapsed().as_secs_f64();

    let pass = median < MEDIAN_BOUND && elapsed < TIME_BOUND_S;
    verdict(
        "4/8 synthetic-localization",
        pass,
        &format!(
            "{} train entries, {} epochs, loss {:.4} -> {:.4}; median |theta err| {median:.4} vs {MEDIAN_BOUND} on {} held-out; {elapsed:.0} s vs {TIME_BOUND_S:.0}",
            set.entries.len(),
            cfg.stage2_epochs,
            report.first(),
            report.last(),
            off.len(),
        ),
    );
}

/// Criterion 5 — scaled end-to-end ordering: 5-fold cross-validation on
/// 3,000 synthetic records must give the transformer pipeline an ensemble
/// accuracy ≥ 0.95 on off-center patches and ≥ the baseline CNN, with
/// per-fold accuracies in a < 0.1 spread, in < 1 hour.
#[test]
fn c5_synthetic_end_to_end_ordering() {
    const PER_CLASS: usize = 1000; // 3,000 records
    const ACCURACY_FLOOR: f64 = 0.95;
    const SPREAD_BOUND: f64 = 0.1;
    const TIME_BOUND_S: f64 = 3600.0;

    let start = Instant::now();
    let mut cfg = TrainConfig::default();
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 5;
    // The reference stage-2 rate (1e-4) is sized for a 40x longer schedule.
    // At this step budget the localizer never leaves its initial plateau,
    // while hotter rates at small batches destroy the trunk's features
    // before any localization signal forms. Batch 16 smooths the gradient
    // enough for 5e-4, which converges within the epoch budget.
    cfg.stage2_lr = 5e-4;
    cfg.stage3_epochs = 2;
    cfg.baseline_epochs = 2;
    cfg.batch_size = 16;
    cfg.k = 5;
    cfg.seed = 0xc5_0001;

    let ds = Dataset::synthetic(PER_CLASS, &cfg.geometry(), 0xc5_0002);
    let outcome = cross_validate(&cfg, &ds).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let stn_acc = outcome.stn.accuracy();
    let base_acc = outcome.baseline.accuracy();
    let fold_accs: Vec<f64> = outcome.folds.iter().map(|f| f.stn.accuracy()).collect();
    let spread = fold_accs.iter().fold(f64::MIN, |a, &b| a.max(b))
        - fold_accs.iter().fold(f64::MAX, |a, &b| a.min(b));
    let covers = outcome.stn.total() == ds.len() && outcome.baseline.total() == ds.len();

    let pass = stn_acc >= ACCURACY_FLOOR
        && stn_acc >= base_acc
        && spread < SPREAD_BOUND
        && covers
        && elapsed < TIME_BOUND_S;
    verdict(
        "5/8 synthetic-end-to-end-ordering",
        pass,
        &format!(
            "stn {stn_acc:.3} (floor {ACCURACY_FLOOR}) vs baseline {base_acc:.3}; fold accs {:?} spread {spread:.3} (bound {SPREAD_BOUND}); ensemble {}/{} records; {elapsed:.0} s vs {TIME_BOUND_S:.0}",
            fold_accs
                .iter()
                .map(|a| (a * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            outcome.stn.total(),
            ds.len(),
        ),
    );
}

/// Criterion 6 — metrics oracle: `evaluate`'s numbers equal an independent
/// brute-force recount on 50 randomized configurations (≤ 1e-12), and the
/// hand case [[8,2,0],[1,9,0],[0,0,10]] yields accuracy 0.9.
#[test]
fn c6_metrics_oracle() {
    fn recount(pairs: &[(usize, usize)]) -> ([f64; 3], [f64; 3], [f64; 3], f64) {
        let mut conf = [[0usize; 3]; 3];
        for &(t, p) in pairs {
            conf[t][p] += 1;
        }
        let mut precision = [0.0; 3];
        let mut recall = [0.0; 3];
        let mut f1 = [0.0; 3];
        for c in 0..3 {
            let tp = conf[c][c] as f64;
            let predicted: usize = (0..3).map(|t| conf[t][c]).sum();
            let truth: usize = conf[c].iter().sum();
            precision[c] = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            recall[c] = if truth == 0 { 0.0 } else { tp / truth as f64 };
            f1[c] = if precision[c] + recall[c] == 0.0 {
                0.0
            } else {
                2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
            };
        }
        let correct: usize = (0..3).map(|c| conf[c][c]).sum();
        let total: usize = conf.iter().flatten().sum();
        (precision, recall, f1, correct as f64 / total as f64)
    }

    let mut rng = seeding::stream(0xacce97, "metrics", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        // random class skews, including configurations where some class is
        // never predicted or never true
        let truth_limit = rng.random_range(1..=3usize);
        let pred_limit = rng.random_range(1..=3usize);
        let n = rng.random_range(1..=400usize);
        let pairs: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0..truth_limit),
                    rng.random_range(0..pred_limit),
                )
            })
            .collect();
        let labeled: Vec<(ClassLabel, ClassLabel)> = pairs
            .iter()
            .map(|&(t, p)| (ClassLabel::new(t).unwrap(), ClassLabel::new(p).unwrap()))
            .collect();
        let report = MetricsReport::from_pairs(&labeled).unwrap();
        let (precision, recall, f1, accuracy) = recount(&pairs);
        for c in 0..3 {
            worst = worst.max((report.precision(c) - precision[c]).abs());
            worst = worst.max((report.recall(c) - recall[c]).abs());
            worst = worst.max((report.f1(c) - f1[c]).abs());
        }
        worst = worst.max((report.accuracy() - accuracy).abs());
    }

    let hand = MetricsReport::from_confusion([[8, 2, 0], [1, 9, 0], [0, 0, 10]]).unwrap();
    let hand_ok = hand.accuracy() == 0.9
        && (hand.precision(0) - 8.0 / 9.0).abs() < 1e-15
        && hand.recall(0) == 0.8;

    let pass = worst <= 1e-12 && hand_ok;
    verdict(
        "6/8 metrics-oracle",
        pass,
        &format!(
            "50 randomized configs, max |report - recount| {worst:.1e} vs 1e-12; hand-case accuracy {}",
            hand.accuracy(),
        ),
    );
}

/// Criterion 7 — balancing yields exactly uniform histograms on 50 random
/// multisets; k-fold partitions are disjoint, covering, and balanced to
/// ±1 for every n in [5,200] at k=5.
#[test]
fn c7_balancing_and_folds() {
    let mut rng = seeding::stream(0xacce97, "balance", 0);
    let mut balance_ok = true;
    for _ in 0..50 {
        let counts: Vec<usize> = (0..3).map(|_| rng.random_range(1..=60usize)).collect();
        let mut labels: Vec<ClassLabel> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(ClassLabel::new(c).unwrap(), n))
            .collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut rng);
        let want = *counts.iter().min().unwrap();
        let kept = balance_classes(labels, &mut rng).unwrap();
        let mut hist = [0usize; 3];
        for l in &kept {
            hist[l.index()] += 1;
        }
        balance_ok &= hist == [want; 3];
    }

    let mut fold_ok = true;
    let mut checked = 0usize;
    for n in 5..=200usize {
        let plan = kfold_split(n, 5, 0x70_1d5).unwrap();
        let mut seen: Vec<usize> = Vec::with_capacity(n);
        let mut sizes = Vec::with_capacity(5);
        for f in 0..5 {
            let test = plan.test_indices(f);
            sizes.push(test.len());
            seen.extend_from_slice(test);
        }
        let disjoint_covering = {
            let mut sorted = seen.clone();
            sorted.sort_unstable();
            sorted == (0..n).collect::<Vec<_>>()
        };
        let balanced = sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1;
        fold_ok &= disjoint_covering && balanced;
        checked += 1;
    }

    verdict(
        "7/8 balancing-and-folds",
        balance_ok && fold_ok,
        &format!("50 multisets uniform: {balance_ok}; {checked} fold plans disjoint/covering/±1: {fold_ok}"),
    );
}

/// Criterion 8 — determinism: two complete cross-validation runs with the
/// same seed and config write byte-identical metrics.csv files.
#[test]
fn c8_cv_determinism() {
    const PER_CLASS: usize = 30; // 90 records, all five folds, full pipeline

    let start = Instant::now();
    let mut cfg = TrainConfig::default();
    cfg.stage1_epochs = 1;
    cfg.stage2_epochs = 2;
    cfg.stage3_epochs = 1;
    cfg.baseline_epochs = 1;
    cfg.batch_size = 8;
    cfg.k = 5;
    cfg.seed = 0xc8_0001;
    let ds = Dataset::synthetic(PER_CLASS, &cfg.geometry(), 0xc8_0002);

    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for run in 0..2 {
        let outcome = cross_validate(&cfg, &ds).unwrap();
        let path = dir.path().join(format!("metrics-{run}.csv"));
        write_metrics_csv(
            &path,
            &[
                ("stn", &outcome.stn),
                ("baseline", &outcome.baseline),
                ("baseline-centered", &outcome.baseline_centered),
            ],
        )
        .unwrap();
        paths.push(path);
    }
    let bytes_a = std::fs::read(&paths[0]).unwrap();
    let bytes_b = std::fs::read(&paths[1]).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    verdict(
        "8/8 cv-determinism",
        bytes_a == bytes_b,
        &format!(
            "two k=5 runs on {} records, metrics.csv {} bytes each, byte-identical: {}; {elapsed:.0} s",
            ds.len(),
            bytes_a.len(),
            bytes_a == bytes_b,
        ),
    );
}
