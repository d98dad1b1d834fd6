//! Spatial squeeze-and-excitation: the support feature is squeezed to one
//! channel, passed through a sigmoid, and the resulting per-pixel score
//! rescales every channel of the query feature.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::tensor::{as_matrix, check_same_hw, FeatureMap, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeWeights<T> {
    /// One weight per support channel.
    pub weight: Array1<T>,
    pub bias: T,
}

impl<T: Real> SqueezeWeights<T> {
    pub fn zeros(c_s: usize) -> Self {
        SqueezeWeights {
            weight: Array1::zeros(c_s),
            bias: T::zero(),
        }
    }
}

/// Returns the gated map and the `H×W` score.
pub fn sse_forward<T: Real>(
    f_q: &Array3<T>,
    f_s: &Array3<T>,
    sq: &SqueezeWeights<T>,
) -> Result<(Array3<T>, Array2<T>)> {
    check_same_hw(f_q, f_s, "sSE")?;
    let (h, w, _) = f_q.dim();
    if f_s.dim().2 != sq.weight.len() {
        return Err(Error::shape(format!(
            "squeeze expects {} support channels, got {}",
            sq.weight.len(),
            f_s.dim().2
        )));
    }
    let fs_m = as_matrix(f_s);
    let score: Array1<T> = fs_m
        .axis_iter(Axis(0))
        .map(|px| {
            let mut z = sq.bias;
            for (&v, &wt) in px.iter().zip(sq.weight.iter()) {
                z += v * wt;
            }
            T::one() / (T::one() + (-z).exp())
        })
        .collect();
    let mut out = f_q.clone();
    for (mut px, &s) in out
        .view_mut()
        .into_shape_with_order((h * w, f_q.dim().2))
        .expect("standard layout")
        .axis_iter_mut(Axis(0))
        .zip(score.iter())
    {
        px.mapv_inplace(|v| v * s);
    }
    let score = score.into_shape_with_order((h, w)).expect("h*w scores");
    Ok((out, score))
}

pub struct SseGrads<T> {
    pub weight: Array1<T>,
    pub bias: T,
}

/// Returns `(df_q, df_s, grads)`.
pub fn sse_backward<T: Real>(
    f_q: &Array3<T>,
    f_s: &Array3<T>,
    score: &Array2<T>,
    sq: &SqueezeWeights<T>,
    dout: &Array3<T>,
) -> (Array3<T>, Array3<T>, SseGrads<T>) {
    let (h, w, c_q) = f_q.dim();
    let n = h * w;
    let score = score.view().into_shape_with_order(n).expect("h*w scores");
    let dq_m = as_matrix(dout);
    let fq_m = as_matrix(f_q);
    let mut df_q = Array2::zeros((n, c_q));
    let mut dz = Array1::zeros(n);
    for i in 0..n {
        let s = score[i];
        let mut ds = T::zero();
        for c in 0..c_q {
            df_q[[i, c]] = dq_m[[i, c]] * s;
            ds += dq_m[[i, c]] * fq_m[[i, c]];
        }
        dz[i] = ds * s * (T::one() - s);
    }
    let dweight = as_matrix(f_s).t().dot(&dz);
    let dbias = dz.sum();
    let df_s = dz
        .insert_axis(Axis(1))
        .dot(&sq.weight.view().insert_axis(Axis(0)));
    (
        crate::tensor::to_map(df_q, h, w),
        crate::tensor::to_map(df_s, h, w),
        SseGrads {
            weight: dweight,
            bias: dbias,
        },
    )
}

/// `out(i,j,c) = f_q(i,j,c) · sigmoid(w·f_s(i,j,:) + b)`.
pub fn sse_attention<T: Real>(
    f_q: &FeatureMap<T>,
    f_s: &FeatureMap<T>,
    squeeze: &SqueezeWeights<T>,
) -> Result<FeatureMap<T>> {
    let (out, _) = sse_forward(&f_q.data, &f_s.data, squeeze)?;
    FeatureMap::new(out, f_q.scale_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_difference, max_relative_error, sse_loop};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_squeeze_halves_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let f_q = FeatureMap::new(rand3(&mut rng, (3, 4, 5)), 0).unwrap();
        let f_s = FeatureMap::new(rand3(&mut rng, (3, 4, 2)), 0).unwrap();
        let out = sse_attention(&f_q, &f_s, &SqueezeWeights::zeros(2)).unwrap();
        assert_eq!(out.data, f_q.data.mapv(|v| 0.5 * v));
    }

    #[test]
    fn saturated_bias_passes_query_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f_q = FeatureMap::new(rand3(&mut rng, (3, 3, 2)), 0).unwrap();
        let f_s = FeatureMap::new(rand3(&mut rng, (3, 3, 2)), 0).unwrap();
        let sq = SqueezeWeights {
            weight: Array1::zeros(2),
            bias: 60.0,
        };
        let out = sse_attention(&f_q, &f_s, &sq).unwrap();
        assert!((&out.data - &f_q.data).iter().all(|d| d.abs() < 1e-20));
    }

    #[test]
    fn matches_loop_oracle_and_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let f_q = rand3(&mut rng, (4, 3, 3));
        let f_s = rand3(&mut rng, (4, 3, 5));
        let sq = SqueezeWeights {
            weight: Array1::from_shape_fn(5, |_| rng.random_range(-2.0..2.0)),
            bias: 0.3,
        };
        let (out, _) = sse_forward(&f_q, &f_s, &sq).unwrap();
        assert_eq!(out, sse_loop(&f_q, &f_s, &sq.weight, sq.bias));
        assert!(out.iter().zip(f_q.iter()).all(|(o, q)| o.abs() <= q.abs()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f_q = rand3(&mut rng, (4, 4, 3));
        let f_s = rand3(&mut rng, (4, 4, 2));
        let sq = SqueezeWeights {
            weight: Array1::from_shape_fn(2, |_| rng.random_range(-1.0..1.0)),
            bias: -0.2,
        };
        let proj = rand3(&mut rng, (4, 4, 3));
        let loss = |fq: &Array3<f64>, fs: &Array3<f64>, sq: &SqueezeWeights<f64>| {
            (&sse_forward(fq, fs, sq).unwrap().0 * &proj).sum()
        };
        let (_, score) = sse_forward(&f_q, &f_s, &sq).unwrap();
        let (dq, ds, g) = sse_backward(&f_q, &f_s, &score, &sq, &proj);
        let num = central_difference(
            |v| loss(&Array3::from_shape_vec(f_q.dim(), v.to_vec()).unwrap(), &f_s, &sq),
            f_q.as_slice().unwrap(),
            1e-5,
        );
        assert!(max_relative_error(dq.as_slice().unwrap(), &num, 1e-8) < 1e-4);
        let num = central_difference(
            |v| loss(&f_q, &Array3::from_shape_vec(f_s.dim(), v.to_vec()).unwrap(), &sq),
            f_s.as_slice().unwrap(),
            1e-5,
        );
        assert!(max_relative_error(ds.as_slice().unwrap(), &num, 1e-8) < 1e-4);
        let mut flat = sq.weight.to_vec();
        flat.push(sq.bias);
        let num = central_difference(
            |v| {
                let s = SqueezeWeights {
                    weight: Array1::from(v[..2].to_vec()),
                    bias: v[2],
                };
                loss(&f_q, &f_s, &s)
            },
            &flat,
            1e-5,
        );
        let mut analytic = g.weight.to_vec();
        analytic.push(g.bias);
        assert!(max_relative_error(&analytic, &num, 1e-8) < 1e-4);
    }
}
