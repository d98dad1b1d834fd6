//! Hand-differentiated building blocks of the encoder–decoder backbone.
//!
//! Every forward returns whatever the matching backward needs; backwards
//! return the input gradient and the parameter gradients separately so the
//! caller decides where to accumulate them.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::tensor::{as_matrix, to_map, Real};

/// Unrolls the 3×3 zero-padded neighbourhood of every pixel into a row.
/// Column order is `(ky * 3 + kx) * C + c`, matching a `[3, 3, C, Cout]`
/// weight tensor flattened row-major.
pub fn im2col3x3<T: Real>(x: ArrayView3<'_, T>) -> Array2<T> {
    let (h, w, c) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let row_len = 9 * c;
    let mut cols = vec![T::zero(); h * w * row_len];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * row_len..(y * w + xx + 1) * row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let off = (sy as usize * w + sx as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&src[off..off + c]);
                }
            }
        }
    }
    Array2::from_shape_vec((h * w, row_len), cols).expect("sized above")
}

/// Adjoint of [`im2col3x3`]: scatters row gradients back onto the image.
pub fn col2im3x3<T: Real>(cols: ArrayView2<'_, T>, h: usize, w: usize, c: usize) -> Array3<T> {
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let row_len = 9 * c;
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let row = &src[(y * w + xx) * row_len..(y * w + xx + 1) * row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let off = (sy as usize * w + sx as usize) * c;
                    let k = (ky * 3 + kx) * c;
                    for (o, &g) in out[off..off + c].iter_mut().zip(&row[k..k + c]) {
                        *o += g;
                    }
                }
            }
        }
    }
    Array3::from_shape_vec((h, w, c), out).expect("sized above")
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    in_dim: (usize, usize, usize),
}

/// Same-padded 3×3 convolution. `weight` is `(9·Cin)×Cout`.
pub fn conv3x3_forward<T: Real>(
    x: ArrayView3<'_, T>,
    weight: ArrayView2<'_, T>,
    bias: ArrayView1<'_, T>,
) -> (Array3<T>, ConvCache<T>) {
    let (h, w, c) = x.dim();
    debug_assert_eq!(weight.nrows(), 9 * c);
    let cols = im2col3x3(x);
    let mut y = cols.dot(&weight);
    y += &bias;
    (
        to_map(y, h, w),
        ConvCache {
            cols,
            in_dim: (h, w, c),
        },
    )
}

pub struct ParamGrads<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

pub fn conv3x3_backward<T: Real>(
    cache: &ConvCache<T>,
    weight: ArrayView2<'_, T>,
    dy: &Array3<T>,
) -> (Array3<T>, ParamGrads<T>) {
    let (h, w, c) = cache.in_dim;
    let dym = as_matrix(dy);
    let dw = cache.cols.t().dot(&dym);
    let db = dym.sum_axis(Axis(0));
    let dcols = dym.dot(&weight.t());
    let dx = col2im3x3(dcols.view(), h, w, c);
    (dx, ParamGrads { weight: dw, bias: db })
}

/// Pointwise (1×1) projection with bias: `x·W + b` over every pixel.
pub fn pointwise_forward<T: Real>(
    x: &Array3<T>,
    weight: ArrayView2<'_, T>,
    bias: Option<ArrayView1<'_, T>>,
) -> Array3<T> {
    let (h, w, _) = x.dim();
    let mut y = as_matrix(x).dot(&weight);
    if let Some(b) = bias {
        y += &b;
    }
    to_map(y, h, w)
}

/// Returns `(dx, dW, db)`; `db` is the column sum of `dy`.
pub fn pointwise_backward<T: Real>(
    x: &Array3<T>,
    weight: ArrayView2<'_, T>,
    dy: &Array3<T>,
) -> (Array3<T>, ParamGrads<T>) {
    let (h, w, _) = x.dim();
    let dym = as_matrix(dy);
    let dw = as_matrix(x).t().dot(&dym);
    let db = dym.sum_axis(Axis(0));
    let dx = to_map(dym.dot(&weight.t()), h, w);
    (dx, ParamGrads { weight: dw, bias: db })
}

pub fn relu_inplace<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(out: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// 2×2 max pooling with stride 2. Returns the pooled map and, per output
/// element, the winning offset `dy * 2 + dx` inside its window.
pub fn maxpool2_forward<T: Real>(x: &Array3<T>) -> (Array3<T>, Array3<u8>) {
    let (h, w, c) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array3::zeros((ho, wo, c));
    let mut arg = Array3::zeros((ho, wo, c));
    for y in 0..ho {
        for xx in 0..wo {
            for ch in 0..c {
                let mut best = x[[2 * y, 2 * xx, ch]];
                let mut k = 0u8;
                for (i, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x[[2 * y + dy, 2 * xx + dx, ch]];
                    if v > best {
                        best = v;
                        k = i as u8 + 1;
                    }
                }
                out[[y, xx, ch]] = best;
                arg[[y, xx, ch]] = k;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(
    arg: &Array3<u8>,
    dy: &Array3<T>,
    in_dim: (usize, usize, usize),
) -> Array3<T> {
    let mut dx = Array3::zeros(in_dim);
    for ((y, xx, ch), &k) in arg.indexed_iter() {
        let (oy, ox) = ((k / 2) as usize, (k % 2) as usize);
        dx[[2 * y + oy, 2 * xx + ox, ch]] += dy[[y, xx, ch]];
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2_forward<T: Real>(x: &Array3<T>) -> Array3<T> {
    let (h, w, c) = x.dim();
    Array3::from_shape_fn((2 * h, 2 * w, c), |(y, xx, ch)| x[[y / 2, xx / 2, ch]])
}

pub fn upsample2_backward<T: Real>(dy: &Array3<T>) -> Array3<T> {
    let (h, w, c) = dy.dim();
    let mut dx = Array3::zeros((h / 2, w / 2, c));
    for ((y, xx, ch), &g) in dy.indexed_iter() {
        dx[[y / 2, xx / 2, ch]] += g;
    }
    dx
}

/// Channel concatenation `[a; b]`.
pub fn concat_channels<T: Real>(a: &Array3<T>, b: &Array3<T>) -> Array3<T> {
    let out = ndarray::concatenate(Axis(2), &[a.view(), b.view()]).expect("same spatial dims");
    crate::tensor::standard(out)
}

/// Splits a gradient of `[a; b]` back into its two parts.
pub fn split_channels<T: Real>(d: &Array3<T>, ca: usize) -> (Array3<T>, Array3<T>) {
    (
        d.slice(s![.., .., ..ca]).to_owned(),
        d.slice(s![.., .., ca..]).to_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct 3×3 convolution by nested loops.
    fn conv_loop(x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array3<f64> {
        let (h, wd, c) = x.dim();
        let co = w.ncols();
        let mut y = Array3::zeros((h, wd, co));
        for i in 0..h {
            for j in 0..wd {
                for o in 0..co {
                    let mut acc = b[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (si, sj) = (i as isize + ky - 1, j as isize + kx - 1);
                            if si < 0 || sj < 0 || si >= h as isize || sj >= wd as isize {
                                continue;
                            }
                            for ci in 0..c {
                                acc += x[[si as usize, sj as usize, ci]]
                                    * w[[((ky * 3 + kx) as usize) * c + ci, o]];
                            }
                        }
                    }
                    y[[i, j, o]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand3(&mut rng, (5, 4, 3));
        let w = Array2::from_shape_fn((27, 2), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(2, |_| rng.random_range(-1.0..1.0));
        let (y, _) = conv3x3_forward(x.view(), w.view(), b.view());
        let r = conv_loop(&x, &w, &b);
        assert!((&y - &r).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand3(&mut rng, (4, 4, 2));
        let w = Array2::from_shape_fn((18, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let proj = rand3(&mut rng, (4, 4, 3));
        let loss = |x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>| {
            let (y, _) = conv3x3_forward(x.view(), w.view(), b.view());
            (&y * &proj).sum()
        };
        let (_, cache) = conv3x3_forward(x.view(), w.view(), b.view());
        let (dx, g) = conv3x3_backward(&cache, w.view(), &proj);

        let xs: Vec<f64> = x.iter().copied().collect();
        let num = central_difference(
            |v| loss(&Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap(), &w, &b),
            &xs,
            1e-5,
        );
        assert!(max_relative_error(dx.as_slice().unwrap(), &num, 1e-8) < 1e-6);

        let ws: Vec<f64> = w.iter().copied().collect();
        let num = central_difference(
            |v| loss(&x, &Array2::from_shape_vec(w.dim(), v.to_vec()).unwrap(), &b),
            &ws,
            1e-5,
        );
        assert!(max_relative_error(g.weight.as_slice().unwrap(), &num, 1e-8) < 1e-6);
        let bs: Vec<f64> = b.to_vec();
        let num = central_difference(|v| loss(&x, &w, &Array1::from(v.to_vec())), &bs, 1e-5);
        assert!(max_relative_error(g.bias.as_slice().unwrap(), &num, 1e-8) < 1e-6);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand3(&mut rng, (4, 6, 2));
        let (p, arg) = maxpool2_forward(&x);
        assert_eq!(p.dim(), (2, 3, 2));
        for ((y, xx, c), &v) in p.indexed_iter() {
            let m = x
                .slice(s![2 * y..2 * y + 2, 2 * xx..2 * xx + 2, c])
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max);
            assert_eq!(v, m);
        }
        // <pool_backward(g), x-direction> consistency via upsample adjoint identity.
        let g = rand3(&mut rng, (2, 3, 2));
        let u = upsample2_forward(&g);
        let back = upsample2_backward(&u);
        assert!((&back - &(&g * 4.0)).iter().all(|d| d.abs() < 1e-12));
        let dx = maxpool2_backward(&arg, &g, x.dim());
        assert!((dx.sum() - g.sum()).abs() < 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand3(&mut rng, (3, 3, 2));
        let b = rand3(&mut rng, (3, 3, 5));
        let c = concat_channels(&a, &b);
        assert_eq!(c.dim(), (3, 3, 7));
        let (a2, b2) = split_channels(&c, 2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
