use ndarray::Array2;
use notecoder::evalmetrics::{
    confusion, export_report, macro_auc, mann_whitney_auc, read_confusion_csv, read_loss_csv, read_metrics_json,
    read_roc_csv, roc_ovr, summary, LossRecord,
};
use proptest::prelude::*;

fn brute_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn instance() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>, Vec<f64>)> {
    (2usize..=5, 1usize..=50).prop_flat_map(|(k, n)| {
        (
            Just(k),
            prop::collection::vec(0..k, n),
            prop::collection::vec(0..k, n),
            // coarse grid so ties are common
            prop::collection::vec((0u32..8).prop_map(|v| v as f64 / 8.0), n * k),
        )
    })
}

proptest! {
    #[test]
    fn auc_matches_pairwise_oracle((k, _p, truths, flat) in instance()) {
        let n = truths.len();
        let scores = Array2::from_shape_vec((n, k), flat).unwrap();
        let m = macro_auc(scores.view(), &truths, k).unwrap();
        let mut defined = Vec::new();
        for c in 0..k {
            let col: Vec<f64> = scores.column(c).to_vec();
            let pos: Vec<bool> = truths.iter().map(|&t| t == c).collect();
            let oracle = brute_auc(&col, &pos);
            let trap = roc_ovr(scores.view(), &truths, c).unwrap().map(|r| r.auc);
            let mw = mann_whitney_auc(scores.view(), &truths, c).unwrap();
            match oracle {
                Some(o) => {
                    prop_assert!((trap.unwrap() - o).abs() < 1e-12);
                    prop_assert!((mw.unwrap() - o).abs() < 1e-12);
                    defined.push(o);
                }
                None => prop_assert!(trap.is_none() && mw.is_none()),
            }
            prop_assert_eq!(m.per_class[c], trap);
        }
        prop_assert_eq!(m.undefined, k - defined.len());
        if let Some(v) = m.value {
            let mean = defined.iter().sum::<f64>() / defined.len() as f64;
            prop_assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_matches_definitions((k, preds, truths, _s) in instance()) {
        let cm = confusion(&preds, &truths, k).unwrap();
        let r = summary(&cm);
        let n = preds.len();
        prop_assert_eq!(cm.total(), n as u64);
        let correct = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
        prop_assert_eq!(r.accuracy, correct as f64 / n as f64);
        let mut micro_tp = 0;
        for c in 0..k {
            let tp = preds.iter().zip(&truths).filter(|(&p, &t)| p == c && t == c).count();
            let fp = preds.iter().zip(&truths).filter(|(&p, &t)| p == c && t != c).count();
            let fneg = preds.iter().zip(&truths).filter(|(&p, &t)| p != c && t == c).count();
            micro_tp += tp;
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let rc = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
            let m = &r.per_class[c];
            prop_assert!((m.precision - p).abs() < 1e-9);
            prop_assert!((m.recall - rc).abs() < 1e-9);
            prop_assert!((m.f1 * (m.precision + m.recall) - 2.0 * m.precision * m.recall).abs() < 1e-12);
        }
        // micro recall equals accuracy for single-label data
        prop_assert_eq!(micro_tp as f64 / n as f64, r.accuracy);
    }

    #[test]
    fn example_order_does_not_matter((k, preds, truths, flat) in instance(), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let n = preds.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let scores = Array2::from_shape_vec((n, k), flat).unwrap();
        let p2: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
        let t2: Vec<usize> = order.iter().map(|&i| truths[i]).collect();
        let s2 = scores.select(ndarray::Axis(0), &order);
        prop_assert_eq!(summary(&confusion(&preds, &truths, k).unwrap()), summary(&confusion(&p2, &t2, k).unwrap()));
        let a = macro_auc(scores.view(), &truths, k).unwrap();
        let b = macro_auc(s2.view(), &t2, k).unwrap();
        prop_assert_eq!(a.per_class, b.per_class);
    }
}

#[test]
fn export_round_trip_and_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let truths = [0, 1, 2, 1, 0, 2, 2];
    let preds = [0, 1, 1, 1, 2, 2, 0];
    let scores = Array2::from_shape_fn((7, 3), |(i, c)| ((i * 5 + c * 3) % 7) as f64 / 7.0);
    let cm = confusion(&preds, &truths, 3).unwrap();
    let auc = macro_auc(scores.view(), &truths, 3).unwrap();
    let report = summary(&cm)
        .with_auc(&auc)
        .with_labels(vec!["a".into(), "b".into(), "c".into()]);
    let loss = [
        LossRecord {
            epoch: 1,
            train_loss: 1.25,
            valid_loss: 1.5,
        },
        LossRecord {
            epoch: 2,
            train_loss: 0.75,
            valid_loss: 1.0 / 3.0,
        },
    ];
    let prefix = dir.path().join("out/");
    let files = export_report(&report, &cm, &auc.curves, &loss, &prefix).unwrap();

    let back = read_metrics_json(&files.metrics).unwrap();
    assert_eq!(back.n_examples, 7);
    assert_eq!(back.per_class.len(), 3);
    assert_eq!(back.labels, report.labels);
    assert!((back.macro_f1 - report.macro_f1).abs() <= 5e-7);
    assert!((back.macro_auc.unwrap() - report.macro_auc.unwrap()).abs() <= 5e-7);

    let cm_back = read_confusion_csv(&files.confusion).unwrap();
    assert_eq!(cm_back, cm);
    assert_eq!(cm_back.total(), 7);

    assert_eq!(files.roc.len(), 3);
    for (path, curve) in files.roc.iter().zip(&auc.curves) {
        let pts = read_roc_csv(path).unwrap();
        assert_eq!(pts.len(), curve.points.len());
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
    }

    let loss_back = read_loss_csv(&files.loss).unwrap();
    assert_eq!(loss_back.len(), 2);
    assert_eq!(loss_back[1].valid_loss, 0.333333);

    let text = std::fs::read_to_string(&files.loss).unwrap();
    assert_eq!(
        text,
        "epoch,train_loss,valid_loss\n1,1.250000,1.500000\n2,0.750000,0.333333\n"
    );
    let json = std::fs::read_to_string(&files.metrics).unwrap();
    assert!(json.contains("\"accuracy\": 0.571429"));
    assert!(!json.contains('\r'));

    // identical inputs, identical bytes
    let again = export_report(&report, &cm, &auc.curves, &loss, dir.path().join("again_")).unwrap();
    for (a, b) in [
        (&files.metrics, &again.metrics),
        (&files.confusion, &again.confusion),
        (&files.loss, &again.loss),
    ] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
