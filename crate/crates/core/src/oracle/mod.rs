//! Slow, loop-based reference implementations and a finite-difference
//! harness. Nothing here calls into the optimized code paths it is used to
//! check; tests and the `oracle-check` command compare against these.

pub mod suite;

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array1, Array2, Array3};

use crate::correlation::SpatialCorrelationParams;
use crate::types::ClassId;

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = buf[i];
            buf[i] = orig + h;
            let plus = f(&buf);
            buf[i] = orig - h;
            let minus = f(&buf);
            buf[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Spatial correlation by explicit loops over every position pair:
/// `M(i,j) = Σ_k θ(i,k)·φ(j,k)`, row softmax, `y(i) = Σ_j A(i,j)·g(j)`,
/// `out(i) = ω·y(i) + f(i)`.
pub fn spatial_correlation_loop(
    f: &Array3<f64>,
    p: &SpatialCorrelationParams<f64>,
) -> Array3<f64> {
    let (h, w, c) = f.dim();
    let cp = c / 2;
    let n = h * w;
    let px = |i: usize| (i / w, i % w);
    let embed = |i: usize, m: &Array2<f64>, k: usize| {
        let (y, x) = px(i);
        (0..c).map(|ch| f[[y, x, ch]] * m[[ch, k]]).sum::<f64>()
    };
    let mut out = Array3::zeros((h, w, c));
    for i in 0..n {
        let mut m = vec![0.0; n];
        for (j, mj) in m.iter_mut().enumerate() {
            *mj = (0..cp)
                .map(|k| embed(i, &p.theta, k) * embed(j, &p.phi, k))
                .sum();
        }
        let max = m.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = m.iter().map(|v| (v - max).exp()).sum();
        let a: Vec<f64> = m.iter().map(|v| (v - max).exp() / z).collect();
        let mut y = vec![0.0; cp];
        for (j, aj) in a.iter().enumerate() {
            for (k, yk) in y.iter_mut().enumerate() {
                *yk += aj * embed(j, &p.g, k);
            }
        }
        let (yy, xx) = px(i);
        for ch in 0..c {
            let proj: f64 = (0..cp).map(|k| y[k] * p.omega[[k, ch]]).sum();
            out[[yy, xx, ch]] = proj + f[[yy, xx, ch]];
        }
    }
    out
}

pub fn sse_loop(f_q: &Array3<f64>, f_s: &Array3<f64>, w: &Array1<f64>, b: f64) -> Array3<f64> {
    let (h, wd, cq) = f_q.dim();
    let cs = f_s.dim().2;
    let mut out = Array3::zeros((h, wd, cq));
    for y in 0..h {
        for x in 0..wd {
            let mut z = b;
            for k in 0..cs {
                z += f_s[[y, x, k]] * w[k];
            }
            let s = 1.0 / (1.0 + (-z).exp());
            for c in 0..cq {
                out[[y, x, c]] = f_q[[y, x, c]] * s;
            }
        }
    }
    out
}

/// Dice coefficient from explicit voxel-coordinate sets.
pub fn dice_sets(pred: &Array2<u8>, truth: &Array2<u8>) -> f64 {
    let set = |m: &Array2<u8>| -> HashSet<(usize, usize)> {
        m.indexed_iter()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect()
    };
    let (x, y) = (set(pred), set(truth));
    if x.is_empty() && y.is_empty() {
        return 1.0;
    }
    2.0 * x.intersection(&y).count() as f64 / (x.len() + y.len()) as f64
}

pub fn bce_loop(p: &Array2<f64>, y: &Array2<u8>) -> f64 {
    let n = p.len() as f64;
    let mut acc = 0.0;
    for (&pi, &yi) in p.iter().zip(y.iter()) {
        let pc = pi.clamp(1e-7, 1.0 - 1e-7);
        acc += if yi == 1 { pc.ln() } else { (1.0 - pc).ln() };
    }
    -acc / n
}

pub fn dice_loss_loop(p: &Array2<f64>, y: &Array2<u8>, eps: f64) -> f64 {
    let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (&pi, &yi) in p.iter().zip(y.iter()) {
        let yf = yi as f64;
        inter += pi * yf;
        sp += pi;
        sy += yf;
    }
    1.0 - (2.0 * inter + eps) / (sp + sy + eps)
}

fn l2(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Embedding hinge loss by an explicit double loop over class pairs.
pub fn de_loss_loop(
    query: &BTreeMap<ClassId, Array1<f64>>,
    support: &BTreeMap<ClassId, Array1<f64>>,
) -> f64 {
    let mut total = 0.0;
    for (i, fq) in query {
        let mut intra = 0.0;
        let mut inter = 0.0;
        for (j, fs) in support {
            if i == j {
                intra = l2(fq, fs);
            } else {
                inter += l2(fq, fs);
            }
        }
        total += (intra - inter).max(0.0);
    }
    total
}

/// Per-channel spatial mean, L2-normalized (zero stays zero).
pub fn pool_loop(f: &Array3<f64>) -> Array1<f64> {
    let (h, w, c) = f.dim();
    let mut v = Array1::zeros(c);
    for ch in 0..c {
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += f[[y, x, ch]];
            }
        }
        v[ch] = s / (h * w) as f64;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.mapv_inplace(|x| x / norm);
    }
    v
}

pub fn predict_mask_loop(logits: &Array2<f64>, threshold: f64) -> Array2<u8> {
    let mut m = Array2::zeros(logits.dim());
    for (idx, &l) in logits.indexed_iter() {
        let p = 1.0 / (1.0 + (-l).exp());
        m[idx] = u8::from(p > threshold);
    }
    m
}

/// Pixel-level Jacobian incidence of a map-to-map function:
/// `pattern[out_pixel][in_pixel]` is true when perturbing any channel of the
/// input pixel moves any channel of the output pixel by more than `tol`.
pub fn jacobian_pixel_pattern<F>(f: F, x: &Array3<f64>, h: f64, tol: f64) -> Vec<Vec<bool>>
where
    F: Fn(&Array3<f64>) -> Array3<f64>,
{
    let (hh, ww, c) = x.dim();
    let n_in = hh * ww;
    let base_out = f(x);
    let (oh, ow, oc) = base_out.dim();
    let n_out = oh * ow;
    let mut pattern = vec![vec![false; n_in]; n_out];
    let mut xp = x.clone();
    for pin in 0..n_in {
        let (y, xx) = (pin / ww, pin % ww);
        for ch in 0..c {
            let orig = xp[[y, xx, ch]];
            xp[[y, xx, ch]] = orig + h;
            let plus = f(&xp);
            xp[[y, xx, ch]] = orig - h;
            let minus = f(&xp);
            xp[[y, xx, ch]] = orig;
            for (pout, row) in pattern.iter_mut().enumerate() {
                let (oy, ox) = (pout / ow, pout % ow);
                for k in 0..oc {
                    let d = (plus[[oy, ox, k]] - minus[[oy, ox, k]]) / (2.0 * h);
                    if d.abs() > tol {
                        row[pin] = true;
                    }
                }
            }
        }
    }
    pattern
}
