use ndarray::{Array1, Array2, Array3, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RngState, Scalar};
use crate::error::{Error, Result};

/// Drop probabilities for the five AWD-LSTM sites plus the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSpec {
    /// Whole embedding rows (word-level drop).
    pub encoder: f64,
    /// Variational mask on the embedding output.
    pub input: f64,
    /// DropConnect on recurrent weight matrices.
    pub weight: f64,
    /// Variational mask between LSTM layers.
    pub hidden: f64,
    /// Variational mask on the final LSTM output.
    pub output: f64,
    /// Dropout on the classifier hidden layer.
    pub classifier: f64,
}

impl DropoutSpec {
    pub const NONE: DropoutSpec = DropoutSpec {
        encoder: 0.0,
        input: 0.0,
        weight: 0.0,
        hidden: 0.0,
        output: 0.0,
        classifier: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let sites = [
            ("encoder", self.encoder),
            ("input", self.input),
            ("weight", self.weight),
            ("hidden", self.hidden),
            ("output", self.output),
            ("classifier", self.classifier),
        ];
        for (name, p) in sites {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} dropout must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`. With `p = 0` the mask is all ones and no draws are made.
pub fn dropout_mask<T: Scalar>(shape: (usize, usize), p: f64, rng: &mut RngState) -> Result<Array2<T>> {
    check_p(p)?;
    if p == 0.0 {
        return Ok(Array2::ones(shape));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let r = rng.rng();
    Ok(Array2::from_shape_simple_fn(shape, || {
        if r.gen::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    }))
}

/// Per-row mask for word-level embedding dropout.
pub fn row_drop_mask<T: Scalar>(rows: usize, p: f64, rng: &mut RngState) -> Result<Array1<T>> {
    Ok(dropout_mask::<T>((1, rows), p, rng)?.index_axis_move(Axis(0), 0))
}

/// Multiplies every timestep of `x` ([T, B, d]) by the same [B, d] mask.
pub fn apply_step_mask<T: Scalar>(x: &mut Array3<T>, mask: &Array2<T>) {
    for mut step in x.outer_iter_mut() {
        Zip::from(&mut step).and(mask).for_each(|v, &m| *v *= m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::stream;

    #[test]
    fn zero_p_is_all_ones() {
        let mut rng = RngState::new(1, stream::DROPOUT);
        let m: Array2<f64> = dropout_mask((3, 4), 0.0, &mut rng).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        assert_eq!(rng.word_pos(), 0);
    }

    #[test]
    fn p_one_is_refused() {
        let mut rng = RngState::new(1, stream::DROPOUT);
        assert!(dropout_mask::<f32>((2, 2), 1.0, &mut rng).is_err());
        assert!(dropout_mask::<f32>((2, 2), -0.1, &mut rng).is_err());
    }

    #[test]
    fn empirical_drop_rate() {
        let mut rng = RngState::new(42, stream::DROPOUT);
        let m: Array2<f64> = dropout_mask((1, 100_000), 0.3, &mut rng).unwrap();
        let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.3).abs() < 0.01, "zero fraction {zeros}");
        let kept = 1.0 / 0.7;
        assert!(m.iter().all(|&v| v == 0.0 || v == kept));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = RngState::new(3, stream::DROPOUT);
        let act = Array2::from_shape_fn((1, 16), |(_, j)| 0.5 + j as f64);
        let mut sum = Array2::<f64>::zeros((1, 16));
        let n = 10_000;
        for _ in 0..n {
            sum = sum + &act * &dropout_mask::<f64>((1, 16), 0.4, &mut rng).unwrap();
        }
        let mean_masked = sum.sum() / n as f64;
        let mean = act.sum();
        assert!((mean_masked - mean).abs() / mean < 0.01);
    }

    #[test]
    fn step_mask_broadcasts_over_time() {
        let mut x = Array3::<f64>::ones((3, 2, 2));
        let mask = ndarray::array![[0.0, 2.0], [2.0, 0.0]];
        apply_step_mask(&mut x, &mask);
        for t in 0..3 {
            assert_eq!(x.index_axis(Axis(0), t), mask);
        }
    }

    #[test]
    fn dropout_rates_validated() {
        assert!(DropoutSpec::NONE.validate().is_ok());
        let bad = DropoutSpec {
            hidden: 1.0,
            ..DropoutSpec::NONE
        };
        assert!(bad.validate().is_err());
    }
}
