use ndarray::Array2;
use notecoder::classifier::{
    evaluate, load_classifier, predict, predict_proba, train_classifier, ClassifierConfig, ClassifierModel, LabeledDoc,
};
use notecoder::langmodel::{Encoder, LmConfig, Mode};
use notecoder::numcore::{grad_check, DropoutSpec, GradCheckOptions, ParamSet, RngState, Scalar};
use notecoder::textprep::Vocabulary;
use rand::Rng;

fn lm_cfg(v: usize) -> LmConfig {
    LmConfig {
        vocab_size: v,
        embed_dim: 4,
        hidden_dim: 6,
        num_layers: 2,
        dropout: DropoutSpec::NONE,
        ..LmConfig::default()
    }
}

fn model<T: Scalar>(v: usize, k: usize, dropout: DropoutSpec) -> ClassifierModel<T> {
    let lm = lm_cfg(v);
    let enc = Encoder::init(&lm, &mut RngState::new(3, 1));
    let cfg = ClassifierConfig {
        num_classes: k,
        head_hidden: 5,
        dropout,
        batch_size: 4,
        epochs: 3,
        seed: 11,
        ..Default::default()
    };
    ClassifierModel::new(enc, lm, cfg).unwrap()
}

/// Class `c` documents mix background tokens with the marker token `2 + c`.
fn corpus(n: usize, k: usize, v: usize, seed: u64) -> Vec<LabeledDoc> {
    let mut rng = RngState::new(seed, 50);
    (0..n)
        .map(|i| {
            let label = i % k;
            let len = rng.rng().gen_range(3..9);
            let ids = (0..len)
                .map(|_| {
                    if rng.rng().gen_bool(0.4) {
                        2 + label
                    } else {
                        rng.rng().gen_range(2 + k..v)
                    }
                })
                .collect();
            LabeledDoc { ids, label }
        })
        .collect()
}

fn grads_of<T: Scalar>(m: &mut ClassifierModel<T>, docs: &[LabeledDoc]) -> Vec<Array2<f64>> {
    let refs: Vec<&[usize]> = docs.iter().map(|d| d.ids.as_slice()).collect();
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    m.zero_grads();
    m.loss_and_grad(&refs, &labels, Mode::Eval, &mut RngState::new(0, 0))
        .unwrap();
    m.params().iter().map(|p| p.grad.mapv(|g| g.to_f64_lossy())).collect()
}

fn loss_of(m: &ClassifierModel<f64>, docs: &[LabeledDoc]) -> f64 {
    evaluate(m, docs).unwrap().loss
}

#[test]
fn full_gradient_check_f64() {
    let mut m: ClassifierModel<f64> = model(12, 3, DropoutSpec::NONE);
    let docs = corpus(5, 3, 12, 1);
    let grads = grads_of(&mut m, &docs);
    let report = grad_check(&mut m, &grads, |mm| loss_of(mm, &docs), GradCheckOptions::default());
    assert!(report.passed(), "{report:?}");
}

#[test]
fn head_gradient_check_with_frozen_encoder() {
    let mut m: ClassifierModel<f64> = model(12, 4, DropoutSpec::NONE);
    m.set_trainable_groups(1);
    let docs = corpus(6, 4, 12, 2);
    let grads = grads_of(&mut m, &docs);
    assert!(m.encoder.params().iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    let report = grad_check(&mut m, &grads, |mm| loss_of(mm, &docs), GradCheckOptions::default());
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.coords_checked, 5 * 3 * 4 + 5 + 4 * 5 + 4);
}

#[test]
fn full_gradient_check_f32() {
    let mut m32: ClassifierModel<f32> = model(10, 3, DropoutSpec::NONE);
    let docs = corpus(4, 3, 10, 3);
    let grads = grads_of(&mut m32, &docs);
    let mut m64: ClassifierModel<f64> = m32.cast();
    let report = grad_check(
        &mut m64,
        &grads,
        |mm| loss_of(mm, &docs),
        GradCheckOptions {
            tolerance: 1e-4,
            ..Default::default()
        },
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn probabilities_are_a_distribution() {
    let m: ClassifierModel<f32> = model(12, 5, ClassifierConfig::default().dropout);
    let mut rng = RngState::new(0, 0);
    for d in corpus(10, 5, 12, 4) {
        for mode in [Mode::Eval, Mode::Train] {
            let p = m.classify_forward(&d.ids, mode, &mut rng).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }
}

#[test]
fn zeroed_head_is_uniform_and_ties_pick_zero() {
    let mut m: ClassifierModel<f64> = model(12, 10, DropoutSpec::NONE);
    m.w2.value.fill(0.0);
    let (label, probs) = predict(&m, &[3, 4, 5]).unwrap();
    assert!(probs.iter().all(|&p| (p - 0.1).abs() < 1e-12));
    assert_eq!(label, 0);
}

#[test]
fn shifting_logits_keeps_the_label() {
    let mut m: ClassifierModel<f64> = model(12, 4, DropoutSpec::NONE);
    let doc = [5, 6, 7, 2];
    let (a, pa) = predict(&m, &doc).unwrap();
    m.b2.value += 3.5;
    let (b, pb) = predict(&m, &doc).unwrap();
    assert_eq!(a, b);
    for (x, y) in pa.iter().zip(pb.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(predict(&m, &doc).unwrap(), predict(&m, &doc).unwrap());
}

#[test]
fn long_documents_keep_their_tail() {
    let mut m: ClassifierModel<f32> = model(12, 3, DropoutSpec::NONE);
    m.config.max_doc_len = 1000;
    let mut rng = RngState::new(1, 1);
    let doc: Vec<usize> = (0..2000).map(|_| rng.rng().gen_range(2..12)).collect();
    let full = predict(&m, &doc).unwrap().1;
    let tail = predict(&m, &doc[1000..]).unwrap().1;
    assert_eq!(full, tail);
    assert_ne!(full, predict(&m, &doc[1001..]).unwrap().1);
}

#[test]
fn batched_prediction_matches_single_documents() {
    let m: ClassifierModel<f64> = model(12, 3, DropoutSpec::NONE);
    let docs = corpus(9, 3, 12, 5);
    let mut with_empty: Vec<&[usize]> = docs.iter().map(|d| d.ids.as_slice()).collect();
    with_empty.push(&[]);
    let batched = predict_proba(&m, &with_empty).unwrap();
    for (i, d) in with_empty.iter().enumerate() {
        let single = predict(&m, d).unwrap().1;
        for (x, y) in batched.row(i).iter().zip(single.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert_eq!(predict(&m, &[]).unwrap(), predict(&m, &[Vocabulary::UNK]).unwrap());
}

#[test]
fn first_epoch_leaves_encoder_untouched() {
    let mut m: ClassifierModel<f32> = model(12, 3, ClassifierConfig::default().dropout);
    m.config.epochs = 1;
    let before = m.clone();
    let train = corpus(20, 3, 12, 6);
    let hist = train_classifier(&mut m, &train, &train[..6]).unwrap();
    assert_eq!(hist.len(), 1);
    assert_eq!(hist[0].groups, 1);
    assert_eq!(m.encoder, before.encoder);
    assert_ne!(m.w1, before.w1);
}

#[test]
fn schedule_unfreezes_top_down() {
    let mut m: ClassifierModel<f32> = model(12, 3, DropoutSpec::NONE);
    m.config.epochs = 2;
    let before = m.clone();
    let train = corpus(20, 3, 12, 7);
    let hist = train_classifier(&mut m, &train, &[]).unwrap();
    assert_eq!(hist.iter().map(|h| h.groups).collect::<Vec<_>>(), [1, 2]);
    assert_ne!(m.encoder.layers[1], before.encoder.layers[1]);
    assert_eq!(m.encoder.layers[0], before.encoder.layers[0]);
    assert_eq!(m.encoder.embedding, before.encoder.embedding);
}

#[test]
fn learns_a_separable_corpus() {
    let lm = LmConfig {
        embed_dim: 16,
        hidden_dim: 32,
        ..lm_cfg(20)
    };
    let enc: Encoder<f32> = Encoder::init(&lm, &mut RngState::new(3, 1));
    let cfg = ClassifierConfig {
        num_classes: 4,
        batch_size: 4,
        epochs: 8,
        seed: 11,
        ..Default::default()
    };
    let mut m = ClassifierModel::new(enc, lm, cfg).unwrap();
    m.config.optim.lr_other = 0.01;
    let train = corpus(200, 4, 20, 8);
    let valid = corpus(60, 4, 20, 9);
    let hist = train_classifier(&mut m, &train, &valid).unwrap();
    assert_eq!(hist.len(), 8);
    let last = hist.last().unwrap();
    assert!(last.valid_accuracy >= 0.85, "{hist:?}");
    assert!(last.train_loss < hist[0].train_loss);
    assert_eq!(evaluate(&m, &valid).unwrap().accuracy, last.valid_accuracy);
}

#[test]
fn out_of_range_labels_are_rejected() {
    let mut m: ClassifierModel<f32> = model(12, 3, DropoutSpec::NONE);
    let bad = vec![LabeledDoc {
        ids: vec![2, 3],
        label: 3,
    }];
    assert!(train_classifier(&mut m, &bad, &[]).is_err());
    assert!(evaluate(&m, &bad).is_err());
}

#[test]
fn label_permutation_is_equivariant() {
    let k = 3;
    let perm = [2usize, 0, 1];
    let train = corpus(60, k, 14, 10);
    let valid = corpus(30, k, 14, 11);
    let permute = |docs: &[LabeledDoc]| -> Vec<LabeledDoc> {
        docs.iter()
            .map(|d| LabeledDoc {
                ids: d.ids.clone(),
                label: perm[d.label],
            })
            .collect()
    };
    let mut a: ClassifierModel<f64> = model(14, k, DropoutSpec::NONE);
    a.config.epochs = 4;
    let mut b = a.clone();
    for (c, &pc) in perm.iter().enumerate() {
        b.w2.value.row_mut(pc).assign(&a.w2.value.row(c));
    }
    train_classifier(&mut a, &train, &[]).unwrap();
    train_classifier(&mut b, &permute(&train), &[]).unwrap();
    let ea = evaluate(&a, &valid).unwrap();
    let eb = evaluate(&b, &permute(&valid)).unwrap();
    let mut cm_a = [[0usize; 3]; 3];
    let mut cm_b = [[0usize; 3]; 3];
    for (d, (&pa, &pb)) in valid.iter().zip(ea.preds.iter().zip(&eb.preds)) {
        cm_a[d.label][pa] += 1;
        cm_b[perm[d.label]][pb] += 1;
    }
    for t in 0..k {
        for p in 0..k {
            assert_eq!(cm_b[perm[t]][perm[p]], cm_a[t][p]);
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.ckpt");
    let itos: Vec<String> = (0..12)
        .map(|i| match i {
            0 => "xxunk".to_string(),
            1 => "xxpad".to_string(),
            i => format!("w{i}"),
        })
        .collect();
    let vocab = Vocabulary::from_itos(itos).unwrap();
    let m: ClassifierModel<f32> = model(12, 3, DropoutSpec::NONE);
    let meta = serde_json::json!({"labels": ["a", "b", "c"]});
    notecoder::classifier::save_classifier(&m, &vocab, meta.clone(), &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let (back, back_meta) = load_classifier(&path, &vocab).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.config, m.config);
    assert_eq!(back_meta, meta);
    notecoder::classifier::save_classifier(&back, &vocab, meta, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}
