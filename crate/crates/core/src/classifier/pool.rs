use ndarray::{s, Array1, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::numcore::Scalar;

/// `[h_T, max_t h_t, mean_t h_t]` for one document's hidden states `[T, d]`.
pub fn concat_pool<T: Scalar>(h: ArrayView2<T>) -> Result<Array1<T>> {
    let (steps, d) = h.dim();
    if steps == 0 {
        return Err(Error::Shape("cannot pool an empty sequence".into()));
    }
    let mut out = Array1::zeros(3 * d);
    out.slice_mut(s![..d]).assign(&h.row(steps - 1));
    for j in 0..d {
        let col = h.column(j);
        out[d + j] = col.iter().copied().fold(col[0], T::max);
        out[2 * d + j] = col.sum() / T::from_usize(steps).unwrap();
    }
    Ok(out)
}

/// Batched pooling over left-padded encoder output `[T, B, d]`; row `b`
/// has its `lens[b]` real steps at the end. Also returns, per `(b, j)`, the
/// step holding the maximum (first on ties).
pub(crate) fn pool_batch<T: Scalar>(out: &Array3<T>, lens: &[usize]) -> (Array2<T>, Array2<usize>) {
    let (steps, batch, d) = out.dim();
    let mut feat = Array2::zeros((batch, 3 * d));
    let mut arg = Array2::zeros((batch, d));
    for (b, &len) in lens.iter().enumerate() {
        let start = steps - len;
        let n = T::from_usize(len).unwrap();
        for j in 0..d {
            let mut best = start;
            let mut sum = T::zero();
            for t in start..steps {
                let v = out[(t, b, j)];
                if v > out[(best, b, j)] {
                    best = t;
                }
                sum += v;
            }
            feat[(b, j)] = out[(steps - 1, b, j)];
            feat[(b, d + j)] = out[(best, b, j)];
            feat[(b, 2 * d + j)] = sum / n;
            arg[(b, j)] = best;
        }
    }
    (feat, arg)
}

pub(crate) fn pool_batch_bwd<T: Scalar>(
    d_feat: &Array2<T>,
    lens: &[usize],
    arg: &Array2<usize>,
    steps: usize,
) -> Array3<T> {
    let (batch, d3) = d_feat.dim();
    let d = d3 / 3;
    let mut d_out = Array3::zeros((steps, batch, d));
    for (b, &len) in lens.iter().enumerate() {
        let n = T::from_usize(len).unwrap();
        for j in 0..d {
            d_out[(steps - 1, b, j)] += d_feat[(b, j)];
            d_out[(arg[(b, j)], b, j)] += d_feat[(b, d + j)];
            let share = d_feat[(b, 2 * d + j)] / n;
            for t in steps - len..steps {
                d_out[(t, b, j)] += share;
            }
        }
    }
    d_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_example() {
        let h = array![[1.0, -1.0], [3.0, 0.0]];
        assert_eq!(concat_pool(h.view()).unwrap(), array![3.0, 0.0, 3.0, 0.0, 2.0, -0.5]);
    }

    #[test]
    fn single_step_repeats() {
        let h = array![[0.5, -2.0, 7.0]];
        let p = concat_pool(h.view()).unwrap();
        for k in 0..3 {
            assert_eq!(p.slice(s![3 * k..3 * k + 3]), h.row(0));
        }
    }

    #[test]
    fn constant_sequence() {
        let h = Array2::from_shape_fn((5, 2), |(_, j)| j as f64 - 0.25);
        let p = concat_pool(h.view()).unwrap();
        assert_eq!(p.slice(s![2..4]), p.slice(s![..2]));
        assert_eq!(p.slice(s![4..]), p.slice(s![..2]));
    }

    #[test]
    fn empty_is_error() {
        assert!(concat_pool(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn batched_matches_single_with_padding() {
        let out = Array3::from_shape_fn((4, 2, 3), |(t, b, j)| ((t * 7 + b * 3 + j * 5) % 11) as f64 - 5.0);
        let lens = [4, 2];
        let (feat, _) = pool_batch(&out, &lens);
        for (b, &len) in lens.iter().enumerate() {
            let h = out.slice(s![4 - len.., b, ..]);
            assert_eq!(feat.row(b), concat_pool(h).unwrap());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let out = Array3::from_shape_fn((3, 2, 2), |(t, b, j)| {
            (t as f64 * 0.37 + b as f64 * 1.1 - j as f64 * 0.6).sin()
        });
        let lens = [3, 2];
        let w = Array2::from_shape_fn((2, 6), |(b, k)| (b * 6 + k) as f64 * 0.1 - 0.3);
        let loss = |o: &Array3<f64>| (&pool_batch(o, &lens).0 * &w).sum();
        let (_, arg) = pool_batch(&out, &lens);
        let d = pool_batch_bwd(&w, &lens, &arg, 3);
        let eps = 1e-6;
        for idx in ndarray::indices(out.dim()) {
            let mut p = out.clone();
            p[idx] += eps;
            let mut m = out.clone();
            m[idx] -= eps;
            let num = (loss(&p) - loss(&m)) / (2.0 * eps);
            assert!((num - d[idx]).abs() < 1e-8, "{idx:?}: {num} vs {}", d[idx]);
        }
    }
}
