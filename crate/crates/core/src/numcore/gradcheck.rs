use ndarray::Array2;
use rand::seq::index::sample;

use super::{stream, ParamSet, RngState};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter; smaller arrays are checked fully.
    pub max_coords: usize,
    /// Lower bound on the relative-error denominator, so near-zero
    /// gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-6,
            max_coords: 64,
            floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients (one array per parameter, in `params()`
/// order) with central differences of `loss` evaluated on `model`.
/// Frozen parameters are skipped.
pub fn grad_check<M, L>(model: &mut M, analytic: &[Array2<f64>], mut loss: L, opts: GradCheckOptions) -> GradCheckReport
where
    M: ParamSet<f64>,
    L: FnMut(&M) -> f64,
{
    let mut rng = RngState::new(opts.seed, stream::GRADCHECK);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        tolerance: opts.tolerance,
    };
    let n_params = model.params().len();
    assert_eq!(n_params, analytic.len(), "one analytic gradient per parameter");
    for (pi, grad) in analytic.iter().enumerate() {
        let (len, frozen, name) = {
            let p = model.params()[pi];
            (p.len(), p.frozen, p.name.clone())
        };
        if frozen || len == 0 {
            continue;
        }
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            sample(rng.rng(), len, opts.max_coords).into_vec()
        };
        for k in coords {
            let original = flat(model, pi, k, None);
            flat(model, pi, k, Some(original + opts.epsilon));
            let plus = loss(model);
            flat(model, pi, k, Some(original - opts.epsilon));
            let minus = loss(model);
            flat(model, pi, k, Some(original));
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = grad.as_slice().expect("standard layout")[k];
            let err = relative_error(a, numeric, opts.floor);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    report
}

fn flat<M: ParamSet<f64>>(model: &mut M, pi: usize, k: usize, set: Option<f64>) -> f64 {
    let mut params = model.params_mut();
    let slot = &mut params[pi].value.as_slice_mut().expect("standard layout")[k];
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}
