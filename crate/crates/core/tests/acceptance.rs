//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line. Run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use fewseg::data::{generate_phantoms, preprocess_mr, PhantomSpec};
use fewseg::episodic::{train, EpisodeSampler, GuardedDataset, TrainOptions};
use fewseg::eval::{cross_validate, dice_coefficient, CvOptions, MetricsReport, TrainerFactory};
use fewseg::oracle::suite::{self, CheckResult};
use fewseg::types::ORGANS;
use fewseg::{Arm, BinaryMask, ClassSets, RunConfig};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(n: u32, checks: &[CheckResult], started: Instant) -> bool {
    let passed = checks.iter().all(|c| c.passed);
    println!(
        "criterion {n}: {} ({:.1}s)",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    for c in checks {
        println!("    {c}");
    }
    passed
}

#[test]
fn criterion_01_spatial_correlation_oracle() {
    let t = Instant::now();
    let checks = [suite::check_spatial_correlation_oracle(101, 500)];
    assert!(report(1, &checks, t));
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn criterion_02_gradient_suite() {
    let t = Instant::now();
    let checks = suite::check_gradients(202);
    assert!(report(2, &checks, t));
    assert!(t.elapsed().as_secs_f64() < 300.0);
}

#[test]
fn criterion_03_reachability() {
    let t = Instant::now();
    let checks = suite::check_reachability(303);
    assert!(report(3, &checks, t));
    assert!(t.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn criterion_04_row_stochastic() {
    let t = Instant::now();
    assert!(report(4, &[suite::check_row_stochastic(404)], t));
}

#[test]
fn criterion_05_efficiency() {
    let t = Instant::now();
    let checks = [suite::check_flops(), suite::check_gc_speedup(3, 505)];
    assert!(report(5, &checks, t));
}

#[test]
fn criterion_06_metric_oracle() {
    let t = Instant::now();
    let checks = suite::check_dice_metric(606, 1000);
    assert!(report(6, &checks, t));
}

/// Settings for the 250-step phantom runs. Plain SGD at the default rate
/// leaves every arm predicting background after 250 steps; without the
/// norm clip, single runs of every arm collapse to empty masks.
fn experiment_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        learning_rate: 0.05,
        momentum: 0.9,
        grad_clip: 1.0,
        ..RunConfig::default()
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

struct Experiment {
    /// Per arm, one report per seed.
    reports: BTreeMap<&'static str, Vec<MetricsReport>>,
    seconds: f64,
}

/// Leave-one-organ-out on the MR-like phantom (20 volumes, 64×64), all
/// three arms, three seeds; seed `s` uses phantom seed `1000 + s` and
/// cross-validation fold `s`.
fn experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let mut reports: BTreeMap<&'static str, Vec<MetricsReport>> = BTreeMap::new();
        for seed in SEEDS {
            let vols = generate_phantoms(&PhantomSpec::mr_like(20, 1000 + seed)).unwrap();
            let opts = CvOptions {
                folds: Some(vec![seed as usize % 5]),
                ..CvOptions::default()
            };
            for arm in Arm::ALL {
                let r = cross_validate(&vols, &experiment_config(seed), arm, &TrainerFactory::default(), &opts)
                    .unwrap();
                print!("{}", r.to_table());
                reports.entry(arm.name()).or_default().push(r);
            }
        }
        Experiment {
            reports,
            seconds: t.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_07_arm_ordering() {
    let t = Instant::now();
    let e = experiment();
    let mean = |arm: &str| {
        let rs = &e.reports[arm];
        rs.iter().map(|r| r.mean).sum::<f64>() / rs.len() as f64
    };
    let (b, g, d) = (mean("baseline"), mean("gcn"), mean("gcn-de"));
    let checks = [
        CheckResult {
            name: "gcn - baseline".into(),
            value: g - b,
            bound: 2.0,
            passed: g - b >= 2.0,
            detail: format!("baseline {b:.2}, gcn {g:.2}"),
        },
        CheckResult {
            name: "gcn-de - gcn".into(),
            value: d - g,
            bound: 2.0,
            passed: d - g >= 2.0,
            detail: format!("gcn {g:.2}, gcn-de {d:.2}"),
        },
        CheckResult::below("runtime minutes", e.seconds / 60.0, 45.0, "3 arms x 3 seeds x 4 organs"),
    ];
    assert!(report(7, &checks, t));
}

#[test]
fn criterion_08_no_heldout_reads() {
    let t = Instant::now();
    let e = experiment();
    let mut total = 0;
    let mut runs = 0;
    for r in e.reports.values().flatten() {
        for o in &r.organs {
            runs += o.folds.len();
        }
        total += r.heldout_reads().values().sum::<u64>();
    }
    let checks = [CheckResult::flag(
        "held-out label reads",
        total == 0 && runs == 3 * 3 * ORGANS.len(),
        format!("{total} reads over {runs} training runs"),
    )];
    assert!(report(8, &checks, t));
}

#[test]
fn criterion_09_determinism() {
    let t = Instant::now();
    let spec = PhantomSpec::mr_like(20, 99);
    let (a, b) = (generate_phantoms(&spec).unwrap(), generate_phantoms(&spec).unwrap());
    let same_data = a == b;

    let cfg = RunConfig { seed: 5, ..RunConfig::default() }.with_arm(Arm::GcnDe);
    let classes = ClassSets::leave_one_out(2);
    let losses = || {
        let g = GuardedDataset::new(&a, classes.train_classes.clone()).unwrap();
        let opts = TrainOptions { out_dir: None, max_iterations: Some(10) };
        train(&g, &cfg, &classes, &opts).unwrap().history
    };
    let (l1, l2) = (losses(), losses());
    let diff = l1
        .iter()
        .zip(&l2)
        .map(|(x, y)| (x.comb - y.comb).abs().max((x.de - y.de).abs()).max((x.overall - y.overall).abs()))
        .fold(0.0, f64::max);
    let checks = [
        CheckResult::flag("phantom datasets identical", same_data, "20 volumes, seed 99"),
        CheckResult::flag("10 iterations recorded", l1.len() == 10 && l2.len() == 10, format!("{} / {}", l1.len(), l2.len())),
        CheckResult {
            name: "first-10 loss divergence".into(),
            value: diff,
            bound: 1e-12,
            passed: diff <= 1e-12,
            detail: "gcn-de, seed 5".into(),
        },
    ];
    assert!(report(9, &checks, t));
}

#[test]
fn criterion_10_degenerate_inputs() {
    let t = Instant::now();
    let vols = generate_phantoms(&PhantomSpec::mr_like(4, 7)).unwrap();
    let classes = ClassSets::leave_one_out(4);
    let g = GuardedDataset::new(&vols, classes.train_classes.clone()).unwrap();
    let empty_slices = vols
        .iter()
        .map(|v| (0..v.depth()).filter(|&z| classes.train_classes.iter().all(|&c| !v.slice_contains(z, c))).count())
        .sum::<usize>();
    let sampler = EpisodeSampler::new(&g, &classes.train_classes).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut bad = 0;
    for _ in 0..500 {
        let ep = sampler.sample(&mut rng).unwrap();
        let fg = |s: &fewseg::SliceSample| s.foreground_classes();
        if ep.class_set.is_empty() || fg(&ep.support) != ep.class_set || fg(&ep.query) != ep.class_set {
            bad += 1;
        }
    }
    let indexed_empty = g.index().iter().filter(|r| r.classes.is_empty()).count();

    let empty = BinaryMask::new(Array2::zeros((5, 5)), 1).unwrap();
    let dc = dice_coefficient(&empty, &empty).unwrap();

    let flat = preprocess_mr(&Array3::from_elem((3, 8, 8), 42.0f32));
    let zeros = flat.iter().all(|&v| v == 0.0);

    let checks = [
        CheckResult::flag(
            "sampler skips empty slices",
            bad == 0 && indexed_empty == 0 && empty_slices > 0,
            format!("{empty_slices} empty slices in data, {bad} bad episodes of 500"),
        ),
        CheckResult::flag("empty-empty DC", dc == 1.0, format!("DC {dc}")),
        CheckResult::flag("constant MR volume", zeros, "normalized to zeros, no NaN"),
    ];
    assert!(report(10, &checks, t));
}
