use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::Scalar;
use crate::error::{Error, Result};

/// Gathers rows of `table` for each id.
pub fn embedding_fwd<T: Scalar>(ids: &[usize], table: &Array2<T>) -> Result<Array2<T>> {
    let vocab = table.nrows();
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::Index(format!(
            "token id {bad} outside embedding of {vocab} rows"
        )));
    }
    Ok(table.select(Axis(0), ids))
}

/// Adds each row of `d_out` into the gradient row of its id.
pub fn embedding_bwd<T: Scalar>(ids: &[usize], d_out: ArrayView2<T>, grad: &mut Array2<T>) {
    for (&id, row) in ids.iter().zip(d_out.outer_iter()) {
        let mut g = grad.row_mut(id);
        g += &row;
    }
}

/// `y = x w^T + b` with `w` of shape [out, in] and `b` of shape [1, out].
pub fn linear_fwd<T: Scalar>(x: ArrayView2<T>, w: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
    if x.ncols() != w.ncols() || b.ncols() != w.nrows() || b.nrows() != 1 {
        return Err(Error::Shape(format!(
            "linear: x {:?}, w {:?}, b {:?}",
            x.dim(),
            w.dim(),
            b.dim()
        )));
    }
    Ok(x.dot(&w.t()) + b)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Array2<T>,
    pub dw: Array2<T>,
    pub db: Array2<T>,
}

pub fn linear_bwd<T: Scalar>(x: ArrayView2<T>, w: &Array2<T>, dy: ArrayView2<T>) -> LinearGrads<T> {
    let dx = dy.dot(w);
    let mut dw = Array2::zeros(w.raw_dim());
    general_mat_mul(T::one(), &dy.t(), &x, T::zero(), &mut dw);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    LinearGrads { dx, dw, db }
}

pub fn relu_fwd<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu given its input; the subgradient at 0 is 0.
pub fn relu_bwd<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

pub fn log_softmax_row<T: Scalar>(logits: ArrayView1<T>) -> Array1<T> {
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    logits.mapv(|v| v - lse)
}

pub fn softmax_row<T: Scalar>(logits: ArrayView1<T>) -> Array1<T> {
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e.mapv_inplace(|v| v / z);
    e
}

/// Cross-entropy of a single logit vector against `target`, with the
/// gradient `softmax - onehot`.
pub fn softmax_xent<T: Scalar>(logits: ArrayView1<T>, target: usize) -> Result<(T, Array1<T>)> {
    if target >= logits.len() {
        return Err(Error::Index(format!(
            "target {target} outside {} classes",
            logits.len()
        )));
    }
    let logp = log_softmax_row(logits);
    let mut d = logp.mapv(|v| v.exp());
    d[target] -= T::one();
    Ok((-logp[target], d))
}

/// Mean cross-entropy over rows and the gradient of that mean.
pub fn softmax_xent_batch<T: Scalar>(logits: ArrayView2<T>, targets: &[usize]) -> Result<(T, Array2<T>)> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let n = T::from_usize(targets.len().max(1)).unwrap();
    let mut total = T::zero();
    let mut d = Array2::zeros(logits.raw_dim());
    for ((row, &t), mut drow) in logits.outer_iter().zip(targets).zip(d.outer_iter_mut()) {
        let (loss, g) = softmax_xent(row, t)?;
        total += loss;
        drow.assign(&(g / n));
    }
    Ok((total / n, d))
}
