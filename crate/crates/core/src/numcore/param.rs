use ndarray::Array2;

use super::Scalar;

/// A named trainable matrix with its gradient buffer. Vectors are stored
/// as single-row matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub frozen: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Parameter {
            name: name.into(),
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Array2::zeros((rows, cols)))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            grad: self.grad.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            frozen: self.frozen,
        }
    }
}

/// Anything that owns an ordered list of parameters.
pub trait ParamSet<T: Scalar> {
    fn params(&self) -> Vec<&Parameter<T>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl<T: Scalar> ParamSet<T> for Vec<Parameter<T>> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.iter_mut().collect()
    }
}

pub fn zero_grads<T: Scalar>(params: &mut [&mut Parameter<T>]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

/// L2 norm over the gradients of all non-frozen parameters, in f64.
pub fn global_grad_norm<T: Scalar>(params: &[&mut Parameter<T>]) -> f64 {
    params
        .iter()
        .filter(|p| !p.frozen)
        .flat_map(|p| p.grad.iter())
        .map(|g| {
            let g = g.to_f64_lossy();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all trainable gradients so their global norm is at most
/// `max_norm`. Returns the factor applied (1 when untouched).
pub fn clip_gradients<T: Scalar>(params: &mut [&mut Parameter<T>], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = T::from_f64_lossy(scale);
    for p in params.iter_mut().filter(|p| !p.frozen) {
        p.grad.mapv_inplace(|g| g * s);
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn with_grad(g: Array2<f64>) -> Parameter<f64> {
        let mut p = Parameter::zeros("p", g.nrows(), g.ncols());
        p.grad = g;
        p
    }

    #[test]
    fn clip_leaves_small_norm() {
        let mut p = with_grad(array![[0.6, 0.8]]);
        let scale = clip_gradients(&mut [&mut p], 10.0);
        assert_eq!(scale, 1.0);
        assert_eq!(p.grad, array![[0.6, 0.8]]);
    }

    #[test]
    fn clip_scales_large_norm() {
        let mut a = with_grad(array![[12.0, 0.0]]);
        let mut b = with_grad(array![[0.0], [16.0]]);
        let mut ps = [&mut a, &mut b];
        clip_gradients(&mut ps, 10.0);
        assert!((global_grad_norm(&ps) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn clip_zero_grads_unchanged() {
        let mut p = with_grad(array![[0.0, 0.0]]);
        assert_eq!(clip_gradients(&mut [&mut p], 0.25), 1.0);
        assert_eq!(p.grad, array![[0.0, 0.0]]);
    }

    #[test]
    fn zero_grads_clears() {
        let mut p = with_grad(array![[1.0, 2.0]]);
        zero_grads(&mut [&mut p]);
        assert!(p.grad.iter().all(|&g| g == 0.0));
    }
}
