//! Runnable checks shared by the acceptance tests and `fewseg oracle-check`.
//!
//! Each check returns a [`CheckResult`] with the measured quantity and the
//! bound it was held to, so callers can print numbers instead of just a flag.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bce_loop, central_difference, de_loss_loop, dice_loss_loop, dice_sets, jacobian_pixel_pattern,
    max_relative_error, spatial_correlation_loop, sse_loop,
};
use crate::correlation::flops::{balanced_factor, efficient_gc_macs, naive_gc_macs};
use crate::correlation::gc::{gc_backward, gc_forward};
use crate::correlation::spatial::{sc_backward, sc_forward, softmax_rows};
use crate::correlation::sse::{sse_backward, sse_forward};
use crate::correlation::{
    spatial_correlation, FeatureMap, GcParams, GcStages, PartitionSpec, SpatialCorrelationGrads,
    SpatialCorrelationParams, SqueezeWeights,
};
use crate::eval::dice_coefficient;
use crate::losses::{bce_loss_grad, de_loss_grad, dice_loss_grad, EmbeddingSet, DICE_EPS};
use crate::network::{Gradients, ModelParams, Network, NetworkSpec};
use crate::tensor::{as_matrix, to_map};
use crate::types::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Measured quantity (an error, a ratio, a count...).
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `value < bound`.
    pub fn below(name: &str, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            bound,
            passed: value < bound,
            detail: detail.into(),
        }
    }

    pub fn flag(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            value: f64::from(u8::from(passed)),
            bound: 1.0,
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} value={:.3e} bound={:.1e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.bound,
            self.detail
        )
    }
}

fn rand3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
}

fn rand2(rng: &mut ChaCha8Rng, d: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(d, |_| rng.random_range(lo..hi))
}

fn rand_mask(rng: &mut ChaCha8Rng, d: (usize, usize), p: f64) -> BinaryMask {
    BinaryMask::new(Array2::from_shape_fn(d, |_| u8::from(rng.random_bool(p))), 1).expect("0/1 mask")
}

/// Vectorized spatial correlation against the pair-loop reference on
/// `cases` random maps of size up to 5×5×4.
pub fn check_spatial_correlation_oracle(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let h = rng.random_range(1..=5);
        let w = rng.random_range(1..=5);
        let c = if rng.random_bool(0.5) { 2 } else { 4 };
        let f = rand3(&mut rng, (h, w, c));
        let p = SpatialCorrelationParams::<f64>::random(c, 1.5, &mut rng).expect("even channels");
        let fast = spatial_correlation(&FeatureMap::new(f.clone(), 0).expect("finite"), &p)
            .expect("matching channels");
        let slow = spatial_correlation_loop(&f, &p);
        for (a, b) in fast.data.iter().zip(slow.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::below(
        "spatial_correlation oracle",
        worst,
        1e-10,
        format!("max abs diff over {cases} maps up to 5x5x4"),
    )
}

fn grad_result(name: &str, analytic: &[f64], numeric: &[f64], bound: f64, what: &str) -> CheckResult {
    let err = max_relative_error(analytic, numeric, 1e-6);
    CheckResult::below(name, err, bound, format!("max rel err, {what}"))
}

fn flat3(v: &[f64], d: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_vec(d, v.to_vec()).expect("same length")
}

fn check_sc_grad(rng: &mut ChaCha8Rng, h: usize, w: usize) -> CheckResult {
    let c = 4;
    let x = rand3(rng, (h, w, c));
    let p = SpatialCorrelationParams::<f64>::random(c, 1.5, rng).expect("even channels");
    let proj = rand2(rng, (h * w, c), -1.0, 1.0);
    let loss = |x: &Array3<f64>, p: &SpatialCorrelationParams<f64>| (&sc_forward(as_matrix(x), p).0 * &proj).sum();
    let (_, cache) = sc_forward(as_matrix(&x), &p);
    let mut g = SpatialCorrelationGrads::zeros_like(&p);
    let dx = sc_backward(&cache, &p, proj.view(), &mut g);

    let mut analytic: Vec<f64> = dx.iter().copied().collect();
    let mut numeric = central_difference(|v| loss(&flat3(v, x.dim()), &p), x.as_slice().expect("standard"), 1e-5);
    let fields: [fn(&mut SpatialCorrelationParams<f64>) -> &mut Array2<f64>; 4] =
        [|p| &mut p.theta, |p| &mut p.phi, |p| &mut p.g, |p| &mut p.omega];
    let gfields = [&g.theta, &g.phi, &g.g, &g.omega];
    for (field, gf) in fields.iter().zip(gfields) {
        let mut base = p.clone();
        let x0 = field(&mut base).as_slice().expect("standard").to_vec();
        numeric.extend(central_difference(
            |v| {
                let mut q = p.clone();
                field(&mut q).as_slice_mut().expect("standard").copy_from_slice(v);
                loss(&x, &q)
            },
            &x0,
            1e-5,
        ));
        analytic.extend(gf.iter().copied());
    }
    grad_result("grad spatial_correlation", &analytic, &numeric, 1e-4, &format!("{h}x{w}x{c}, input + all weights"))
}

fn check_gc_grad(rng: &mut ChaCha8Rng, h: usize, w: usize, ph: usize, pw: usize) -> CheckResult {
    let (cq, cs) = (4, 2);
    let f_q = rand3(rng, (h, w, cq));
    let f_s = rand3(rng, (h, w, cs));
    let spec = PartitionSpec::new(h, w, ph, pw).expect("positive factors");
    let p = GcParams::<f64>::random(cq, cs, 1.5, rng).expect("even channels");
    let proj = rand3(rng, (h, w, cq));
    let loss = |fq: &Array3<f64>, fs: &Array3<f64>, p: &GcParams<f64>| {
        (&gc_forward(fq, fs, &spec, p, GcStages::Full).expect("valid shapes").0 * &proj).sum()
    };
    let (_, cache) = gc_forward(&f_q, &f_s, &spec, &p, GcStages::Full).expect("valid shapes");
    let (dq, ds, g) = gc_backward(&cache, &p, &proj);

    let mut analytic: Vec<f64> = dq.iter().chain(ds.iter()).copied().collect();
    let mut numeric = central_difference(|v| loss(&flat3(v, f_q.dim()), &f_s, &p), f_q.as_slice().expect("standard"), 1e-5);
    numeric.extend(central_difference(|v| loss(&f_q, &flat3(v, f_s.dim()), &p), f_s.as_slice().expect("standard"), 1e-5));
    let fields: [fn(&mut GcParams<f64>) -> &mut Array2<f64>; 9] = [
        |p| &mut p.long.theta,
        |p| &mut p.long.phi,
        |p| &mut p.long.g,
        |p| &mut p.long.omega,
        |p| &mut p.alpha,
        |p| &mut p.short.theta,
        |p| &mut p.short.phi,
        |p| &mut p.short.g,
        |p| &mut p.short.omega,
    ];
    let gfields = [
        &g.long.theta,
        &g.long.phi,
        &g.long.g,
        &g.long.omega,
        &g.alpha,
        &g.short.theta,
        &g.short.phi,
        &g.short.g,
        &g.short.omega,
    ];
    for (field, gf) in fields.iter().zip(gfields) {
        let mut base = p.clone();
        let x0 = field(&mut base).as_slice().expect("standard").to_vec();
        numeric.extend(central_difference(
            |v| {
                let mut q = p.clone();
                field(&mut q).as_slice_mut().expect("standard").copy_from_slice(v);
                loss(&f_q, &f_s, &q)
            },
            &x0,
            1e-5,
        ));
        analytic.extend(gf.iter().copied());
    }
    grad_result(
        "grad efficient_gc",
        &analytic,
        &numeric,
        1e-4,
        &format!("{h}x{w}, P=({ph},{pw}), inputs + all weights"),
    )
}

fn check_sse_grad(rng: &mut ChaCha8Rng, h: usize) -> CheckResult {
    let (cq, cs) = (3, 5);
    let f_q = rand3(rng, (h, h, cq));
    let f_s = rand3(rng, (h, h, cs));
    let sq = SqueezeWeights {
        weight: Array1::from_shape_fn(cs, |_| rng.random_range(-1.0..1.0)),
        bias: 0.1,
    };
    let proj = rand3(rng, (h, h, cq));
    let loss = |fq: &Array3<f64>, fs: &Array3<f64>, sq: &SqueezeWeights<f64>| {
        (&sse_forward(fq, fs, sq).expect("valid shapes").0 * &proj).sum()
    };
    let (_, score) = sse_forward(&f_q, &f_s, &sq).expect("valid shapes");
    let (dq, ds, g) = sse_backward(&f_q, &f_s, &score, &sq, &proj);
    let mut analytic: Vec<f64> = dq.iter().chain(ds.iter()).chain(g.weight.iter()).copied().collect();
    analytic.push(g.bias);
    let mut numeric = central_difference(|v| loss(&flat3(v, f_q.dim()), &f_s, &sq), f_q.as_slice().expect("standard"), 1e-5);
    numeric.extend(central_difference(|v| loss(&f_q, &flat3(v, f_s.dim()), &sq), f_s.as_slice().expect("standard"), 1e-5));
    numeric.extend(central_difference(
        |v| {
            let mut s = sq.clone();
            s.weight.as_slice_mut().expect("standard").copy_from_slice(&v[..cs]);
            s.bias = v[cs];
            loss(&f_q, &f_s, &s)
        },
        &sq.weight.iter().copied().chain([sq.bias]).collect::<Vec<_>>(),
        1e-5,
    ));
    grad_result("grad sse_attention", &analytic, &numeric, 1e-4, &format!("{h}x{h}, inputs + weights"))
}

fn check_pixel_loss_grad(
    rng: &mut ChaCha8Rng,
    name: &str,
    h: usize,
    f: fn(&Array2<f64>, &BinaryMask) -> crate::Result<(f64, Array2<f64>)>,
) -> CheckResult {
    let p = rand2(rng, (h, h), 0.05, 0.95);
    let y = rand_mask(rng, (h, h), 0.3);
    let (_, g) = f(&p, &y).expect("matching shapes");
    let numeric = central_difference(
        |v| f(&Array2::from_shape_vec((h, h), v.to_vec()).expect("same length"), &y).expect("matching shapes").0,
        p.as_slice().expect("standard"),
        1e-6,
    );
    grad_result(name, g.as_slice().expect("standard"), &numeric, 1e-4, &format!("{h}x{h}"))
}

fn check_de_grad(rng: &mut ChaCha8Rng) -> CheckResult {
    let dim = 6;
    let mut v = |scale: f64| Array1::from_shape_fn(dim, |_| rng.random_range(-scale..scale));
    let (q1, q2) = (v(1.0), v(1.0));
    // Each support sits near the other class's query so both hinges are active.
    let s1 = &q2 + &v(0.05);
    let s2 = &q1 + &v(0.05);
    let flat: Vec<f64> = q1.iter().chain(&q2).chain(&s1).chain(&s2).copied().collect();
    let build = |x: &[f64]| {
        let part = |k: usize| Array1::from(x[k * dim..(k + 1) * dim].to_vec());
        let q = BTreeMap::from([(1, part(0)), (2, part(1))]);
        let s = BTreeMap::from([(1, part(2)), (2, part(3))]);
        (q, s)
    };
    let (q, s) = build(&flat);
    let (loss, gq, gs) = de_loss_grad(&EmbeddingSet::new(q.clone(), s.clone()).expect("same classes"));
    let analytic: Vec<f64> = gq[&1].iter().chain(&gq[&2]).chain(&gs[&1]).chain(&gs[&2]).copied().collect();
    let numeric = central_difference(
        |x| {
            let (q, s) = build(x);
            de_loss_loop(&q, &s)
        },
        &flat,
        1e-6,
    );
    let mut r = grad_result("grad de_loss", &analytic, &numeric, 1e-4, "2 classes, both hinges active");
    if !(loss > 0.0) {
        r.passed = false;
        r.detail.push_str(" (hinge inactive)");
    }
    r
}

/// End-to-end network gradient on a random 1% of parameters.
pub fn check_network_grad(seed: u64, size: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(NetworkSpec {
        channel_widths: vec![4, 6, 8],
        gc_scales: [1, 2].into_iter().collect(),
        partition_factors: (4, 4),
    })
    .expect("valid spec");
    let mut p: ModelParams<f64> = net.init_params(&mut rng);
    // Non-zero biases keep ReLUs away from exact ties.
    for id in p.ids().collect::<Vec<_>>() {
        if p.name(id).ends_with(".bias") {
            p.values_mut(id).iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        }
    }
    let si = rand2(&mut rng, (size, size), 0.0, 1.0);
    let qi = rand2(&mut rng, (size, size), 0.0, 1.0);
    let sm = BinaryMask::new(
        Array2::from_shape_fn((size, size), |(y, x)| u8::from(y > size / 4 && x < size / 2)),
        1,
    )
    .expect("0/1 mask");
    let w0 = net.spec().channel_widths[0];
    let r_l = rand2(&mut rng, (size, size), -1.0, 1.0);
    let r_q = rand3(&mut rng, (size, size, w0));
    let r_s = rand3(&mut rng, (size, size, w0));
    let loss = |p: &ModelParams<f64>| {
        let o = net.forward(p, &si, &sm, &qi).expect("valid inputs");
        (&o.logits * &r_l).sum() + (&o.backend_query.data * &r_q).sum() + (&o.backend_support.data * &r_s).sum()
    };
    let (_, tape) = net.forward_with_tape(&p, &si, &sm, &qi).expect("valid inputs");
    let mut grads = Gradients::zeros_like(&p);
    net.backward(&p, &tape, &r_l, Some(&r_q), Some(&r_s), &mut grads);

    let mut slots = Vec::new();
    for id in p.ids() {
        for k in 0..p.values(id).len() {
            slots.push((id, k));
        }
    }
    let picks = sample(&mut rng, slots.len(), slots.len().div_ceil(100)).into_vec();
    let x0: Vec<f64> = picks.iter().map(|&i| p.values(slots[i].0)[slots[i].1]).collect();
    let fd = |h: f64| {
        central_difference(
            |x| {
                let mut q = p.clone();
                for (&i, &v) in picks.iter().zip(x) {
                    q.values_mut(slots[i].0)[slots[i].1] = v;
                }
                loss(&q)
            },
            &x0,
            h,
        )
    };
    let (coarse, fine) = (fd(1e-6), fd(1e-7));
    let analytic: Vec<f64> = picks.iter().map(|&i| grads.values(slots[i].0)[slots[i].1]).collect();
    // A max-pool or ReLU switch inside the stencil makes the two step sizes
    // disagree; such entries sit next to a kink and are left out.
    let mut kept = (Vec::new(), Vec::new());
    for ((&a, &c), &f) in analytic.iter().zip(&coarse).zip(&fine) {
        if (c - f).abs() <= 1e-4 * c.abs().max(f.abs()).max(1e-3) {
            kept.0.push(a);
            kept.1.push(c);
        }
    }
    let excluded = picks.len() - kept.0.len();
    // Entries below the floor are dominated by round-off in the loss sum.
    let err = max_relative_error(&kept.0, &kept.1, 1e-5);
    let mut r = CheckResult::below(
        "grad network end-to-end",
        err,
        1e-3,
        format!(
            "{size}x{size}, {} of {} parameters, {excluded} near a kink",
            picks.len(),
            slots.len()
        ),
    );
    r.passed &= excluded * 2 <= picks.len();
    r
}

/// Analytic gradients of every differentiable component against central
/// differences in double precision.
pub fn check_gradients(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check_sc_grad(&mut rng, 4, 4),
        check_sc_grad(&mut rng, 6, 5),
        check_gc_grad(&mut rng, 4, 4, 2, 2),
        check_gc_grad(&mut rng, 5, 7, 2, 3),
        check_gc_grad(&mut rng, 8, 8, 4, 4),
        check_sse_grad(&mut rng, 16),
        check_pixel_loss_grad(&mut rng, "grad dice_loss", 32, dice_loss_grad),
        check_pixel_loss_grad(&mut rng, "grad bce_loss", 32, bce_loss_grad),
        check_de_grad(&mut rng),
        check_network_grad(seed.wrapping_add(1), 32),
    ]
}

/// Pixel incidence of the Jacobian `∂out/∂f_q` of GC on a 4×4 map with
/// `P = (2, 2)`: dense for the two-stage module and exactly the long-range
/// group incidence for the long-only stage.
pub fn check_reachability(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, cq, cs) = (4, 4, 4, 2);
    let spec = PartitionSpec::new(h, w, 2, 2).expect("positive factors");
    // Small weights keep the softmax rows soft; a saturated row pushes
    // genuine dependencies below finite-difference resolution.
    let p = GcParams::<f64>::random(cq, cs, 0.5, &mut rng).expect("even channels");
    let f_q = rand3(&mut rng, (h, w, cq));
    let f_s = rand3(&mut rng, (h, w, cs));
    let pattern = |stages: GcStages| {
        jacobian_pixel_pattern(
            |x| gc_forward(x, &f_s, &spec, &p, stages).expect("valid shapes").0,
            &f_q,
            1e-5,
            1e-9,
        )
    };
    let full = pattern(GcStages::Full);
    let dense = full.iter().flatten().filter(|&&b| b).count();
    let n = h * w;

    let mut group_of = vec![0; n];
    for (gi, g) in spec.long_groups().iter().enumerate() {
        for &pix in g {
            let (y, x) = (pix / spec.padded_width(), pix % spec.padded_width());
            group_of[y * w + x] = gi;
        }
    }
    let long = pattern(GcStages::LongOnly);
    let mismatches = (0..n)
        .flat_map(|o| (0..n).map(move |i| (o, i)))
        .filter(|&(o, i)| long[o][i] != (group_of[o] == group_of[i]))
        .count();
    vec![
        CheckResult::flag(
            "reachability two-stage dense",
            dense == n * n,
            format!("{dense}/{} nonzero pixel pairs", n * n),
        ),
        CheckResult::flag(
            "reachability long-only groups",
            mismatches == 0,
            format!("{mismatches} entries differ from group incidence"),
        ),
    ]
}

/// Worst `|Σ_j A(i,j) − 1|` over 100 random score matrices.
pub fn check_row_stochastic(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let m = rng.random_range(1..40);
        let scale = rng.random_range(0.1..50.0);
        let mut a = rand2(&mut rng, (n, m), -scale, scale);
        softmax_rows(&mut a);
        for row in a.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
        }
    }
    CheckResult::below("softmax rows sum to 1", worst, 1e-6, "100 random inputs")
}

/// Decomposed GC must count strictly fewer multiply-adds than the full map
/// for every `H = W ≥ 32` with `P = ⌈√H⌉`.
pub fn check_flops() -> CheckResult {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for h in [32, 48, 64, 96, 128, 256] {
        let p = balanced_factor(h);
        let naive = naive_gc_macs(h, h, 16, 16);
        let eff = efficient_gc_macs(h, h, 16, 16, p, p);
        worst = worst.max(eff as f64 / naive as f64);
        detail.push(format!("{h}:{:.3}", eff as f64 / naive as f64));
    }
    CheckResult::below("GC flops below naive", worst, 1.0, format!("efficient/naive {}", detail.join(" ")))
}

/// Best-of-`reps` forward time in seconds of the full-map GC and the
/// decomposed GC on an `h×h` map with `c` query and `c` support channels.
pub fn time_gc(h: usize, c: usize, reps: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_f = balanced_factor(h);
    let spec = PartitionSpec::new(h, h, p_f, p_f).expect("positive factors");
    let p = GcParams::<f32>::random(c, c, 1.0, &mut rng).expect("even channels");
    let f_q = rand3(&mut rng, (h, h, c)).mapv(|v| v as f32);
    let f_s = rand3(&mut rng, (h, h, c)).mapv(|v| v as f32);
    let best = |f: &dyn Fn()| {
        (0..reps.max(1))
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let naive = best(&|| {
        let fc = crate::layers::concat_channels(&f_s, &f_q);
        let (out, _) = sc_forward(as_matrix(&fc), &p.long);
        let upd = to_map(out.dot(&p.alpha), h, h);
        std::hint::black_box(&upd + &f_q);
    });
    let eff = best(&|| {
        std::hint::black_box(gc_forward(&f_q, &f_s, &spec, &p, GcStages::Full).expect("valid shapes"));
    });
    (naive, eff)
}

/// Measured speed-up of decomposed over naive GC at 64×64.
pub fn check_gc_speedup(reps: usize, seed: u64) -> CheckResult {
    let (naive, eff) = time_gc(64, 16, reps, seed);
    let speedup = naive / eff;
    CheckResult {
        name: "GC wall time 64x64".into(),
        value: speedup,
        bound: 2.0,
        passed: speedup >= 2.0,
        detail: format!("naive {:.2} ms, efficient {:.2} ms, speed-up {speedup:.1}x", naive * 1e3, eff * 1e3),
    }
}

/// Dice coefficient against voxel-set brute force, plus hand cases.
pub fn check_dice_metric(seed: u64, pairs: usize) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..pairs {
        let d = (rng.random_range(1..16), rng.random_range(1..16));
        let p = rng.random_range(0.0..1.0);
        let a = rand_mask(&mut rng, d, p);
        let b = rand_mask(&mut rng, d, p);
        let fast = dice_coefficient(&a, &b).expect("same shape");
        if fast != dice_sets(a.mask(), b.mask()) {
            mismatches += 1;
        }
    }
    let m = |v: Vec<u8>| BinaryMask::new(Array2::from_shape_vec((1, v.len()), v).expect("row"), 1).expect("0/1");
    let same = dice_coefficient(&m(vec![1, 0, 1]), &m(vec![1, 0, 1])).expect("same shape");
    let disjoint = dice_coefficient(&m(vec![1, 0]), &m(vec![0, 1])).expect("same shape");
    let partial = dice_coefficient(&m(vec![1, 1, 0, 0]), &m(vec![1, 1, 1, 1])).expect("same shape");
    let empty = dice_coefficient(&m(vec![0, 0]), &m(vec![0, 0])).expect("same shape");
    let hand_ok = same == 1.0 && disjoint == 0.0 && (partial - 4.0 / 6.0).abs() < 1e-15 && empty == 1.0;
    vec![
        CheckResult::flag(
            "dice vs voxel sets",
            mismatches == 0,
            format!("{mismatches} mismatches over {pairs} pairs"),
        ),
        CheckResult::flag(
            "dice hand cases",
            hand_ok,
            format!("identical {same}, disjoint {disjoint}, half {partial:.6}, empty {empty}"),
        ),
    ]
}

/// Loss implementations against their loop references at random points.
pub fn check_loss_oracles(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = (rng.random_range(1..12), rng.random_range(1..12));
        let p = rand2(&mut rng, d, 0.0, 1.0);
        let y = rand_mask(&mut rng, d, 0.4);
        let (dl, _) = dice_loss_grad(&p, &y).expect("same shape");
        let (bl, _) = bce_loss_grad(&p, &y).expect("same shape");
        worst = worst
            .max((dl - dice_loss_loop(&p, y.mask(), DICE_EPS)).abs())
            .max((bl - bce_loop(&p, y.mask())).abs());
    }
    CheckResult::below("dice/bce vs loops", worst, 1e-12, "50 random maps")
}

/// sSE against its per-pixel loop.
pub fn check_sse_oracle(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let f_q = rand3(&mut rng, (h, w, 3));
        let f_s = rand3(&mut rng, (h, w, 4));
        let wt = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let sq = SqueezeWeights { weight: wt.clone(), bias: -0.2 };
        let (fast, _) = sse_forward(&f_q, &f_s, &sq).expect("valid shapes");
        let slow = sse_loop(&f_q, &f_s, &wt, -0.2);
        for (a, b) in fast.iter().zip(slow.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::below("sse vs loop", worst, 1e-12, "20 random maps")
}

/// Every fast check; the timing check is included when `timing` is set.
pub fn run_all(seed: u64, timing: bool) -> Vec<CheckResult> {
    let mut out = vec![check_spatial_correlation_oracle(seed, 200)];
    out.extend(check_gradients(seed));
    out.extend(check_reachability(seed));
    out.push(check_row_stochastic(seed));
    out.push(check_flops());
    if timing {
        out.push(check_gc_speedup(3, seed));
    }
    out.extend(check_dice_metric(seed, 1000));
    out.push(check_loss_oracles(seed));
    out.push(check_sse_oracle(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        for r in [check_spatial_correlation_oracle(1, 50), check_row_stochastic(1), check_flops(), check_sse_oracle(1)] {
            assert!(r.passed, "{r}");
        }
        for r in check_reachability(2).into_iter().chain(check_dice_metric(3, 200)) {
            assert!(r.passed, "{r}");
        }
        assert!(check_loss_oracles(4).passed);
    }

    #[test]
    fn component_gradients_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for r in [
            check_sc_grad(&mut rng, 3, 4),
            check_gc_grad(&mut rng, 4, 4, 2, 2),
            check_sse_grad(&mut rng, 4),
            check_de_grad(&mut rng),
        ] {
            assert!(r.passed, "{r}");
        }
    }
}
