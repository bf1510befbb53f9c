use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Parameter, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD with heavy-ball momentum: `v = m v + g; x -= lr v`.
/// Buffers are indexed by parameter position.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub momentum: f64,
    buffers: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum {
            momentum,
            buffers: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Parameter<T>], lrs: &[f64]) {
        assert_eq!(params.len(), lrs.len(), "one learning rate per parameter");
        if self.buffers.len() < params.len() {
            self.buffers.resize(params.len(), None);
        }
        let mu = T::from_f64_lossy(self.momentum);
        for ((p, &lr), buf) in params.iter_mut().zip(lrs).zip(&mut self.buffers) {
            if p.frozen {
                continue;
            }
            let lr = T::from_f64_lossy(lr);
            let v = buf.get_or_insert_with(|| Array2::zeros(p.value.raw_dim()));
            Zip::from(&mut p.value).and(v).and(&p.grad).for_each(|x, v, &g| {
                *v = mu * *v + g;
                *x -= lr * *v;
            });
        }
    }
}

/// First and second moment estimates and the step count.
type Moments<T> = (Array2<T>, Array2<T>, i32);

/// Adam with bias correction; `beta1` plays the role of momentum.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Parameter<T>], lrs: &[f64]) {
        assert_eq!(params.len(), lrs.len(), "one learning rate per parameter");
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let one = T::one();
        for ((p, &lr), st) in params.iter_mut().zip(lrs).zip(&mut self.state) {
            if p.frozen {
                continue;
            }
            let (m, v, t) =
                st.get_or_insert_with(|| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim()), 0));
            *t += 1;
            let c1 = 1.0 - self.beta1.powi(*t);
            let c2 = 1.0 - self.beta2.powi(*t);
            let step = T::from_f64_lossy(lr / c1);
            let c2s = T::from_f64_lossy(c2.sqrt());
            let eps = T::from_f64_lossy(self.eps);
            Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(&p.grad)
                .for_each(|x, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *x -= step * *m / (v.sqrt() / c2s + eps);
                });
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd(SgdMomentum<T>),
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(SgdMomentum::new(momentum)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(momentum, 0.99, 1e-8)),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Parameter<T>], lrs: &[f64]) {
        match self {
            Optimizer::Sgd(o) => o.step(params, lrs),
            Optimizer::Adam(o) => o.step(params, lrs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_param(value: f64, grad: f64) -> Parameter<f64> {
        let mut p = Parameter::new("x", array![[value]]);
        p.grad = array![[grad]];
        p
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = scalar_param(0.0, 1.0);
        SgdMomentum::new(0.0).step(&mut [&mut p], &[0.1]);
        assert!((p.value[(0, 0)] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = scalar_param(0.0, 1.0);
        let mut opt = SgdMomentum::new(0.8);
        opt.step(&mut [&mut p], &[1.0]);
        assert_eq!(p.value[(0, 0)], -1.0);
        opt.step(&mut [&mut p], &[1.0]);
        assert!((p.value[(0, 0)] + 2.8).abs() < 1e-12);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut p = scalar_param(0.123456789, 5.0);
        p.frozen = true;
        let before = p.value.clone();
        SgdMomentum::new(0.8).step(&mut [&mut p], &[1.0]);
        Adam::new(0.8, 0.99, 1e-8).step(&mut [&mut p], &[1.0]);
        assert_eq!(p.value.as_slice().unwrap()[0].to_bits(), before[(0, 0)].to_bits());
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = scalar_param(1.0, 0.003);
        Adam::new(0.8, 0.99, 1e-12).step(&mut [&mut p], &[0.01]);
        assert!((p.value[(0, 0)] - 0.99).abs() < 1e-8);
    }
}
