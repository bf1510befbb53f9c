use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn check(scores: ArrayView2<f64>, truths: &[usize], c: usize) -> Result<()> {
    if scores.nrows() != truths.len() {
        return Err(Error::Shape(format!(
            "{} score rows for {} truths",
            scores.nrows(),
            truths.len()
        )));
    }
    if c >= scores.ncols() {
        return Err(Error::Index(format!(
            "class {c} outside {} score columns",
            scores.ncols()
        )));
    }
    Ok(())
}

/// One-vs-rest ROC for class `c`, sweeping every distinct score as a
/// threshold from high to low; AUC by the trapezoid rule. `None` when the
/// class has no positives or no negatives.
pub fn roc_ovr(scores: ArrayView2<f64>, truths: &[usize], c: usize) -> Result<Option<RocCurve>> {
    check(scores, truths, c)?;
    let col = scores.column(c);
    let pos = truths.iter().filter(|&&t| t == c).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..truths.len()).collect();
    order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = col[order[i]];
        while i < order.len() && col[order[i]] == s {
            if truths[order[i]] == c {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(Some(RocCurve { class: c, points, auc }))
}

/// Rank-sum form of the pairwise AUC with tied scores given average ranks,
/// i.e. each tied positive/negative pair counts 1/2.
pub fn mann_whitney_auc(scores: ArrayView2<f64>, truths: &[usize], c: usize) -> Result<Option<f64>> {
    check(scores, truths, c)?;
    let col = scores.column(c);
    let n = truths.len();
    let pos = truths.iter().filter(|&&t| t == c).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && col[order[j]] == col[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&e| truths[e] == c).count() as f64;
        i = j;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    /// Mean of the defined per-class AUCs; `None` if none is defined.
    pub value: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub undefined: usize,
    pub curves: Vec<RocCurve>,
}

pub fn macro_auc(scores: ArrayView2<f64>, truths: &[usize], k: usize) -> Result<MacroAuc> {
    if scores.ncols() != k {
        return Err(Error::Shape(format!(
            "{} score columns for {k} classes",
            scores.ncols()
        )));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut curves = Vec::new();
    for c in 0..k {
        match roc_ovr(scores, truths, c)? {
            Some(curve) => {
                per_class.push(Some(curve.auc));
                curves.push(curve);
            }
            None => per_class.push(None),
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let value = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MacroAuc {
        value,
        undefined: k - defined.len(),
        per_class,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn col(scores: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn(
            (scores.len(), 2),
            |(i, j)| if j == 0 { scores[i] } else { 1.0 - scores[i] },
        )
    }

    #[test]
    fn perfect_separation() {
        let s = col(&[0.9, 0.8, 0.3, 0.1]);
        let curve = roc_ovr(s.view(), &[0, 0, 1, 1], 0).unwrap().unwrap();
        assert_eq!(curve.auc, 1.0);
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn pairwise_hand_example() {
        let s = col(&[0.9, 0.2, 0.8, 0.1]);
        let t = [0, 1, 1, 0];
        assert_eq!(roc_ovr(s.view(), &t, 0).unwrap().unwrap().auc, 0.5);
        assert_eq!(mann_whitney_auc(s.view(), &t, 0).unwrap(), Some(0.5));
    }

    #[test]
    fn all_ties_give_half() {
        let s = col(&[0.4; 5]);
        let t = [0, 1, 0, 1, 1];
        let curve = roc_ovr(s.view(), &t, 0).unwrap().unwrap();
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(curve.auc, 0.5);
        assert_eq!(mann_whitney_auc(s.view(), &t, 0).unwrap(), Some(0.5));
    }

    #[test]
    fn undefined_without_both_sides() {
        let s = col(&[0.1, 0.2]);
        assert!(roc_ovr(s.view(), &[1, 1], 0).unwrap().is_none());
        let m = macro_auc(s.view(), &[1, 1], 2).unwrap();
        assert_eq!(m.undefined, 2);
        assert_eq!(m.value, None);
    }

    #[test]
    fn macro_mean_of_defined() {
        let s = Array2::from_shape_vec(
            (4, 3),
            vec![
                0.9, 0.05, 0.05, //
                0.1, 0.8, 0.1, //
                0.6, 0.3, 0.1, //
                0.2, 0.7, 0.1,
            ],
        )
        .unwrap();
        let t = [0, 1, 0, 1];
        let m = macro_auc(s.view(), &t, 3).unwrap();
        assert_eq!(m.per_class, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(m.value, Some(1.0));
        assert_eq!(m.undefined, 1);
    }
}
