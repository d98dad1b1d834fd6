//! Segmentation and embedding losses with their gradients.
//!
//! Segmentation losses are evaluated on probabilities; the `*_grad`
//! variants used by training return gradients with respect to the
//! pre-sigmoid logits.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3, Axis};

use crate::config::EmbeddingMode;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, FeatureMap, Real};
use crate::types::{BinaryMask, ClassId};

pub const DICE_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

fn check_dims<T>(pred: &Array2<T>, target: &BinaryMask) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.dim(),
            target.dim()
        )));
    }
    Ok(())
}

fn dice_parts<T: Real>(pred: &Array2<T>, target: &BinaryMask) -> (T, T, T) {
    let mut inter = T::zero();
    let mut sp = T::zero();
    let mut sy = T::zero();
    for (&p, &y) in pred.iter().zip(target.mask().iter()) {
        sp += p;
        if y == 1 {
            inter += p;
            sy += T::one();
        }
    }
    (inter, sp, sy)
}

/// `1 − (2·Σ P·Y + ε) / (Σ P + Σ Y + ε)`.
pub fn dice_loss<T: Real>(pred: &Array2<T>, target: &BinaryMask) -> Result<T> {
    check_dims(pred, target)?;
    let (inter, sp, sy) = dice_parts(pred, target);
    let eps = T::of(DICE_EPS);
    Ok(T::one() - (T::of(2.0) * inter + eps) / (sp + sy + eps))
}

/// Dice loss and its gradient with respect to `pred`.
pub fn dice_loss_grad<T: Real>(pred: &Array2<T>, target: &BinaryMask) -> Result<(T, Array2<T>)> {
    check_dims(pred, target)?;
    let (inter, sp, sy) = dice_parts(pred, target);
    let eps = T::of(DICE_EPS);
    let num = T::of(2.0) * inter + eps;
    let den = sp + sy + eps;
    let mut g = Array2::zeros(pred.dim());
    for (gv, &y) in g.iter_mut().zip(target.mask().iter()) {
        let dnum = if y == 1 { T::of(2.0) } else { T::zero() };
        *gv = -(dnum * den - num) / (den * den);
    }
    Ok((T::one() - num / den, g))
}

/// Mean two-term binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Real>(pred: &Array2<T>, target: &BinaryMask) -> Result<T> {
    check_dims(pred, target)?;
    let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
    let mut acc = T::zero();
    for (&p, &y) in pred.iter().zip(target.mask().iter()) {
        let pc = p.max(lo).min(hi);
        acc += if y == 1 { pc.ln() } else { (T::one() - pc).ln() };
    }
    Ok(-acc / T::of(pred.len() as f64))
}

/// BCE and its gradient with respect to `pred` (zero where clamped).
pub fn bce_loss_grad<T: Real>(pred: &Array2<T>, target: &BinaryMask) -> Result<(T, Array2<T>)> {
    let loss = bce_loss(pred, target)?;
    let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
    let n = T::of(pred.len() as f64);
    let mut g = Array2::zeros(pred.dim());
    for ((gv, &p), &y) in g.iter_mut().zip(pred.iter()).zip(target.mask().iter()) {
        if p > lo && p < hi {
            *gv = if y == 1 { -T::one() / (p * n) } else { T::one() / ((T::one() - p) * n) };
        }
    }
    Ok((loss, g))
}

fn check_classes<A>(preds: &[A], targets: &[BinaryMask]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::config("combined loss needs at least one foreground class"));
    }
    if preds.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Mean over foreground classes of `dice + bce`.
pub fn combined_loss<T: Real>(preds: &[Array2<T>], targets: &[BinaryMask]) -> Result<T> {
    check_classes(preds, targets)?;
    let mut total = T::zero();
    for (p, t) in preds.iter().zip(targets) {
        total += dice_loss(p, t)? + bce_loss(p, t)?;
    }
    Ok(total / T::of(preds.len() as f64))
}

/// Mean BCE of `sigmoid(logits)` computed in logit space, with gradient
/// `(σ(z) − y) / N`. Matches [`bce_loss`] while `σ(z)` stays inside the
/// clamp; beyond it the value keeps growing and the gradient stays
/// non-zero, so saturated wrong pixels are still pulled back.
pub fn bce_with_logits_grad<T: Real>(logits: &Array2<T>, target: &BinaryMask) -> Result<(T, Array2<T>)> {
    check_dims(logits, target)?;
    let n = T::of(logits.len() as f64);
    let mut acc = T::zero();
    let mut g = Array2::zeros(logits.dim());
    for ((gv, &z), &y) in g.iter_mut().zip(logits.iter()).zip(target.mask().iter()) {
        let yt = if y == 1 { T::one() } else { T::zero() };
        acc += z.max(T::zero()) - z * yt + (-z.abs()).exp().ln_1p();
        *gv = (sigmoid(z) - yt) / n;
    }
    Ok((acc / n, g))
}

/// Combined loss evaluated from logits, with gradients with respect to
/// each class's logits. The BCE term goes through
/// [`bce_with_logits_grad`].
pub fn combined_loss_from_logits<T: Real>(
    logits: &[Array2<T>],
    targets: &[BinaryMask],
) -> Result<(T, Vec<Array2<T>>)> {
    check_classes(logits, targets)?;
    let scale = T::one() / T::of(logits.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (l, t) in logits.iter().zip(targets) {
        let p = l.mapv(sigmoid);
        let (dl, mut g) = dice_loss_grad(&p, t)?;
        let (bl, bg) = bce_with_logits_grad(l, t)?;
        total += dl + bl;
        g.zip_mut_with(&p, |gv, &pv| *gv = *gv * pv * (T::one() - pv));
        g += &bg;
        g.mapv_inplace(|v| v * scale);
        grads.push(g);
    }
    Ok((total * scale, grads))
}

/// Per-class query and support embeddings over the same class set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    query: BTreeMap<ClassId, Array1<T>>,
    support: BTreeMap<ClassId, Array1<T>>,
}

impl<T: Real> EmbeddingSet<T> {
    pub fn new(
        query: BTreeMap<ClassId, Array1<T>>,
        support: BTreeMap<ClassId, Array1<T>>,
    ) -> Result<Self> {
        if query.is_empty() {
            return Err(Error::config("embedding set needs at least one class"));
        }
        if !query.keys().eq(support.keys()) {
            return Err(Error::shape(format!(
                "query classes {:?} differ from support classes {:?}",
                query.keys().collect::<Vec<_>>(),
                support.keys().collect::<Vec<_>>()
            )));
        }
        let len = query.values().next().map(Array1::len).unwrap_or(0);
        if query.values().chain(support.values()).any(|v| v.len() != len) {
            return Err(Error::shape("embedding vectors differ in length"));
        }
        if query.values().chain(support.values()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::shape("embedding contains non-finite values"));
        }
        Ok(EmbeddingSet { query, support })
    }

    pub fn query(&self) -> &BTreeMap<ClassId, Array1<T>> {
        &self.query
    }

    pub fn support(&self) -> &BTreeMap<ClassId, Array1<T>> {
        &self.support
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.query.keys().copied()
    }
}

fn distance<T: Real>(a: &Array1<T>, b: &Array1<T>) -> (T, Array1<T>) {
    let diff = a - b;
    let d = diff.dot(&diff).sqrt();
    (d, diff)
}

/// Per-class hinge `max(d_intra − Σ_{j≠i} d_inter, 0)`, summed.
pub fn de_loss<T: Real>(emb: &EmbeddingSet<T>) -> T {
    de_loss_grad(emb).0
}

/// DE loss with gradients `(d/d query, d/d support)` keyed by class. The
/// hinge and zero distances contribute a zero subgradient.
#[allow(clippy::type_complexity)]
pub fn de_loss_grad<T: Real>(
    emb: &EmbeddingSet<T>,
) -> (T, BTreeMap<ClassId, Array1<T>>, BTreeMap<ClassId, Array1<T>>) {
    let zeros = |m: &BTreeMap<ClassId, Array1<T>>| {
        m.iter()
            .map(|(&k, v)| (k, Array1::zeros(v.len())))
            .collect::<BTreeMap<_, _>>()
    };
    let mut gq = zeros(&emb.query);
    let mut gs = zeros(&emb.support);
    let mut total = T::zero();
    for (&i, fq) in &emb.query {
        let (intra, intra_diff) = distance(fq, &emb.support[&i]);
        let inter_terms: Vec<(ClassId, T, Array1<T>)> = emb
            .support
            .iter()
            .filter(|(&j, _)| j != i)
            .map(|(&j, fs)| {
                let (d, diff) = distance(fq, fs);
                (j, d, diff)
            })
            .collect();
        let inter = inter_terms.iter().fold(T::zero(), |a, t| a + t.1);
        let d = intra - inter;
        if d <= T::zero() {
            continue;
        }
        total += d;
        if intra > T::zero() {
            let u = intra_diff / intra;
            *gq.get_mut(&i).expect("class present") += &u;
            *gs.get_mut(&i).expect("class present") -= &u;
        }
        for (j, dj, diff) in inter_terms {
            if dj > T::zero() {
                let u = diff / dj;
                *gq.get_mut(&i).expect("class present") -= &u;
                *gs.get_mut(&j).expect("class present") += &u;
            }
        }
    }
    (total, gq, gs)
}

/// `combined + weight · de`.
pub fn overall_loss<T: Real>(combined: T, de: T, weight: T) -> T {
    combined + weight * de
}

/// Per-channel spatial mean, scaled to unit L2 norm (zero stays zero).
pub fn pool_backend_features<T: Real>(f: &FeatureMap<T>) -> Array1<T> {
    let m = f.as_matrix().sum_axis(Axis(0)) / T::of((f.height() * f.width()) as f64);
    let norm = m.dot(&m).sqrt();
    if norm > T::zero() {
        m / norm
    } else {
        m
    }
}

fn pool_backward<T: Real>(f: &FeatureMap<T>, dv: &Array1<T>) -> Array3<T> {
    let (h, w, c) = f.dim();
    let m = f.as_matrix().sum_axis(Axis(0)) / T::of((f.height() * f.width()) as f64);
    let norm = m.dot(&m).sqrt();
    if norm <= T::zero() {
        return Array3::zeros((h, w, c));
    }
    let v = &m / norm;
    let dm = (dv - &(&v * v.dot(dv))) / (norm * T::of((h * w) as f64));
    let mut out = Array3::zeros((h, w, c));
    for mut px in out.lanes_mut(Axis(2)) {
        px.assign(&dm);
    }
    out
}

/// Embedding vector of a backend feature under the configured mode.
pub fn embed<T: Real>(f: &FeatureMap<T>, mode: EmbeddingMode) -> Array1<T> {
    match mode {
        EmbeddingMode::Pooled => pool_backend_features(f),
        EmbeddingMode::Raw => f.data.iter().copied().collect(),
    }
}

/// Gradient of [`embed`] pulled back to the feature map.
pub fn embed_backward<T: Real>(f: &FeatureMap<T>, mode: EmbeddingMode, dv: &Array1<T>) -> Array3<T> {
    match mode {
        EmbeddingMode::Pooled => pool_backward(f, dv),
        EmbeddingMode::Raw => Array3::from_shape_vec(f.dim(), dv.to_vec()).expect("same length"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{
        bce_loop, central_difference, de_loss_loop, dice_loss_loop, max_relative_error, pool_loop,
    };
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(m: Array2<u8>) -> BinaryMask {
        BinaryMask::new(m, 1).unwrap()
    }

    fn random_case(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Array2<f64>, BinaryMask) {
        let p = Array2::from_shape_fn((h, w), |_| rng.random_range(0.01..0.99));
        let y = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(0.3)));
        (p, mask(y))
    }

    fn random_set(rng: &mut ChaCha8Rng, classes: &[ClassId], len: usize) -> EmbeddingSet<f64> {
        let mut v = || Array1::from_shape_fn(len, |_| rng.random_range(-1.0..1.0));
        let q = classes.iter().map(|&c| (c, v())).collect();
        let s = classes.iter().map(|&c| (c, v())).collect();
        EmbeddingSet::new(q, s).unwrap()
    }

    #[test]
    fn dice_examples() {
        let y = Array2::from_shape_fn((10, 10), |_| 1u8);
        let p = y.mapv(f64::from);
        assert!(dice_loss(&p, &mask(y.clone())).unwrap() < 1e-4);
        let z = Array2::<f64>::zeros((10, 10));
        assert!((dice_loss(&z, &mask(y)).unwrap() - 1.0).abs() < 1e-6);
        let p: Array2<f64> = array![[1.0, 1.0, 0.0, 0.0]];
        let y = array![[1u8, 1, 1, 1]];
        let l = dice_loss(&p, &mask(y)).unwrap();
        assert!((l - 1.0 / 3.0).abs() < 1e-5);
        assert!(dice_loss(&Array2::<f64>::zeros((2, 2)), &mask(Array2::zeros((3, 2)))).is_err());
    }

    #[test]
    fn bce_examples() {
        let y = array![[1u8, 0], [0, 1]];
        let p = y.mapv(f64::from);
        assert!(bce_loss(&p, &mask(y.clone())).unwrap() <= 1e-6);
        let half = Array2::from_elem((2, 2), 0.5);
        assert!((bce_loss(&half, &mask(y)).unwrap() - 2f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, y) = random_case(&mut rng, 7, 9);
        assert!((bce_loss(&p, &y).unwrap() - bce_loop(&p, y.mask())).abs() < 1e-12);
        assert!((dice_loss(&p, &y).unwrap() - dice_loss_loop(&p, y.mask(), DICE_EPS)).abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        assert!(combined_loss::<f64>(&[], &[]).is_err());
        let y = Array2::from_shape_fn((10, 10), |(r, _)| u8::from(r < 5));
        let p = y.mapv(f64::from);
        assert!(combined_loss(&[p], &[mask(y)]).unwrap() < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cases: Vec<_> = (0..3).map(|_| random_case(&mut rng, 6, 6)).collect();
        let preds: Vec<_> = cases.iter().map(|c| c.0.clone()).collect();
        let targets: Vec<_> = cases.iter().map(|c| c.1.clone()).collect();
        let expect = cases
            .iter()
            .map(|(p, y)| dice_loss_loop(p, y.mask(), DICE_EPS) + bce_loop(p, y.mask()))
            .sum::<f64>()
            / 3.0;
        assert!((combined_loss(&preds, &targets).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn combined_logit_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((4, 5), |_| rng.random_range(-2.0..2.0)))
            .collect();
        let targets: Vec<BinaryMask> = (0..2).map(|_| random_case(&mut rng, 4, 5).1).collect();
        let (loss, grads) = combined_loss_from_logits(&logits, &targets).unwrap();
        let probs: Vec<_> = logits.iter().map(|l| l.mapv(sigmoid)).collect();
        assert!((loss - combined_loss(&probs, &targets).unwrap()).abs() < 1e-12);
        let x0: Vec<f64> = logits.iter().flatten().copied().collect();
        let numeric = central_difference(
            |x| {
                let ls: Vec<Array2<f64>> = x
                    .chunks(20)
                    .map(|c| Array2::from_shape_vec((4, 5), c.to_vec()).unwrap().mapv(sigmoid))
                    .collect();
                combined_loss(&ls, &targets).unwrap()
            },
            &x0,
            1e-6,
        );
        let analytic: Vec<f64> = grads.iter().flatten().copied().collect();
        assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);
    }

    #[test]
    fn bce_with_logits_matches_clamped_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Array2<f64> = Array2::from_shape_fn((6, 7), |_| rng.random_range(-8.0..8.0));
        let y = random_case(&mut rng, 6, 7).1;
        let (l, g) = bce_with_logits_grad(&z, &y).unwrap();
        assert!((l - bce_loss(&z.mapv(sigmoid), &y).unwrap()).abs() < 1e-9);
        let numeric = central_difference(
            |x| bce_with_logits_grad(&Array2::from_shape_vec((6, 7), x.to_vec()).unwrap(), &y).unwrap().0,
            z.as_slice().unwrap(),
            1e-6,
        );
        assert!(max_relative_error(g.as_slice().unwrap(), &numeric, 1e-8) < 1e-4);
    }

    #[test]
    fn saturated_wrong_logits_keep_a_gradient() {
        let y = mask(array![[1u8, 0]]);
        let z = array![[-300.0f64, 300.0]];
        let (l, g) = bce_with_logits_grad(&z, &y).unwrap();
        assert!((l - 300.0).abs() < 1e-9);
        assert!((g[[0, 0]] + 0.5).abs() < 1e-12 && (g[[0, 1]] - 0.5).abs() < 1e-12);
        let (_, gc) = combined_loss_from_logits(&[z], std::slice::from_ref(&y)).unwrap();
        assert!(gc[0][[0, 0]] < -0.4 && gc[0][[0, 1]] > 0.4);
    }

    #[test]
    fn de_examples() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        let same: BTreeMap<ClassId, Array1<f64>> = [(1, a.clone()), (2, b.clone())].into();
        assert_eq!(de_loss(&EmbeddingSet::new(same.clone(), same).unwrap()), 0.0);
        let single = EmbeddingSet::new([(1, a)].into(), [(1, b)].into()).unwrap();
        assert!((de_loss(&single) - 2f64.sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = random_set(&mut rng, &[1, 2, 4], 6);
        assert!((de_loss(&set) - de_loss_loop(set.query(), set.support())).abs() < 1e-12);
        let bad = EmbeddingSet::new([(1, array![0.0])].into(), [(2, array![0.0])].into());
        assert!(bad.is_err());
    }

    #[test]
    fn de_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes = [1u8, 2];
        let mut checked = 0;
        for _ in 0..40 {
            let set = random_set(&mut rng, &classes, 3);
            let (_, gq, gs) = de_loss_grad(&set);
            let rebuild = |x: &[f64]| {
                let q = classes.iter().enumerate().map(|(k, &c)| (c, Array1::from(x[3 * k..3 * k + 3].to_vec()))).collect();
                let s = classes.iter().enumerate().map(|(k, &c)| (c, Array1::from(x[6 + 3 * k..9 + 3 * k].to_vec()))).collect();
                EmbeddingSet::new(q, s).unwrap()
            };
            let x0: Vec<f64> = set.query().values().chain(set.support().values()).flatten().copied().collect();
            // Skip points near the hinge.
            let margin = set
                .query()
                .iter()
                .map(|(i, fq)| {
                    let intra = distance(fq, &set.support()[i]).0;
                    let inter: f64 = set.support().iter().filter(|(j, _)| *j != i).map(|(_, fs)| distance(fq, fs).0).sum();
                    (intra - inter).abs()
                })
                .fold(f64::MAX, f64::min);
            if margin < 1e-3 {
                continue;
            }
            let numeric = central_difference(|x| de_loss(&rebuild(x)), &x0, 1e-6);
            let analytic: Vec<f64> = gq.values().chain(gs.values()).flatten().copied().collect();
            assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn overall_examples() {
        assert_eq!(overall_loss(0.7, 0.3, 0.0), 0.7);
        assert!((overall_loss(0.4, 0.1, 1.0) - 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn overall_gradient_reaches_both_terms() {
        // Toy composite: one class, logits and embeddings shared through a scalar t.
        let y = mask(array![[1u8, 0], [0, 1]]);
        let f = |t: f64| {
            let logits = array![[t, -t], [0.5 * t, 2.0 * t]];
            let comb = combined_loss(&[logits.mapv(sigmoid)], std::slice::from_ref(&y)).unwrap();
            let emb = EmbeddingSet::new([(1, array![t, 1.0])].into(), [(1, array![0.0, t * t])].into()).unwrap();
            overall_loss(comb, de_loss(&emb), 0.5)
        };
        let t = 0.3;
        let logits = array![[t, -t], [0.5 * t, 2.0 * t]];
        let (_, g) = combined_loss_from_logits(&[logits], std::slice::from_ref(&y)).unwrap();
        let dcomb: f64 = g[0][[0, 0]] - g[0][[0, 1]] + 0.5 * g[0][[1, 0]] + 2.0 * g[0][[1, 1]];
        let emb = EmbeddingSet::new([(1, array![t, 1.0])].into(), [(1, array![0.0, t * t])].into()).unwrap();
        let (_, gq, gs) = de_loss_grad(&emb);
        let dde: f64 = gq[&1][0] + gs[&1][1] * 2.0 * t;
        assert!(dde.abs() > 1e-3 && dcomb.abs() > 1e-3);
        let numeric = central_difference(|x| f(x[0]), &[t], 1e-6)[0];
        assert!((numeric - (dcomb + 0.5 * dde)).abs() < 1e-7);
    }

    #[test]
    fn pool_examples() {
        let f = FeatureMap::new(Array3::from_shape_fn((3, 4, 2), |(_, _, c)| [3.0, 4.0][c]), 0).unwrap();
        let v = pool_backend_features(&f);
        assert!((v[0] - 0.6f64).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        let z = FeatureMap::<f64>::zeros(2, 2, 3);
        assert_eq!(pool_backend_features(&z), Array1::<f64>::zeros(3));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = Array3::from_shape_fn((5, 3, 4), |_| rng.random_range(-1.0..1.0));
        let fm = FeatureMap::new(r.clone(), 0).unwrap();
        let diff = &pool_backend_features(&fm) - &pool_loop(&r);
        assert!(diff.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn embed_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = Array3::from_shape_fn((3, 2, 4), |_| rng.random_range(-1.0..1.0));
        let dv = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        for mode in [EmbeddingMode::Pooled, EmbeddingMode::Raw] {
            let dv = if mode == EmbeddingMode::Raw {
                Array1::from_shape_fn(24, |_| rng.random_range(-1.0..1.0))
            } else {
                dv.clone()
            };
            let fm = FeatureMap::new(r.clone(), 0).unwrap();
            let analytic = embed_backward(&fm, mode, &dv);
            let numeric = central_difference(
                |x| {
                    let f = FeatureMap::new(Array3::from_shape_vec((3, 2, 4), x.to_vec()).unwrap(), 0).unwrap();
                    embed(&f, mode).dot(&dv)
                },
                &r.iter().copied().collect::<Vec<_>>(),
                1e-6,
            );
            let a: Vec<f64> = analytic.iter().copied().collect();
            assert!(max_relative_error(&a, &numeric, 1e-8) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn de_is_permutation_invariant(seed in 0u64..1000, perm in Just([3u8, 1, 4, 2]).prop_shuffle()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, &[1, 2, 3, 4], 5);
            let relabel = |m: &BTreeMap<ClassId, Array1<f64>>| {
                m.iter().map(|(&k, v)| (perm[(k - 1) as usize], v.clone())).collect()
            };
            let moved = EmbeddingSet::new(relabel(set.query()), relabel(set.support())).unwrap();
            prop_assert!((de_loss(&set) - de_loss(&moved)).abs() < 1e-12);
            prop_assert!(de_loss(&set) >= 0.0);
        }

        #[test]
        fn segmentation_losses_are_bounded(seed in 0u64..1000, h in 1usize..8, w in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..=1.0));
            let y = mask(Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(0.5))));
            let d = dice_loss(&p, &y).unwrap();
            prop_assert!((0.0..1.0 + 1e-9).contains(&d));
            prop_assert!(bce_loss(&p, &y).unwrap() >= 0.0);
        }

        #[test]
        fn single_class_de_is_swap_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, &[2], 4);
            let swapped = EmbeddingSet::new(set.support().clone(), set.query().clone()).unwrap();
            prop_assert!((de_loss(&set) - de_loss(&swapped)).abs() < 1e-12);
        }
    }
}
