//! File-to-file implementations of the pipeline stages.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::PipelineConfig;
use super::synth::{generate, write_synthetic, SynthFiles, SyntheticSpec};
use crate::classifier::{
    load_classifier, predict_proba, save_classifier, train_classifier, ClassifierConfig, ClassifierModel, ClfEpoch,
    LabeledDoc,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    confusion, export_report, macro_auc, read_loss_csv, summary, to_json_6dp, write_loss_csv, LossRecord,
    MetricsReport, ReportFiles,
};
use crate::ingest::{
    filter_primary, join_and_filter, load_codes, load_notes_partitioned, read_corpus, read_label_map, split, test_size,
    top_k_codes, write_corpus, write_label_map, CodeKind, LabeledCorpus,
};
use crate::langmodel::{
    evaluate_stream, load_lm, save_encoder, save_lm, train_lm, transfer_remap, EpochLoss, LanguageModel, LmConfig,
    LmEval,
};
use crate::textprep::{build_vocab, prepare_tokens, tfidf, write_tfidf_csv, Fixup, TokenCounts, Vocabulary};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const LABEL_MAP_FILE: &str = "label_map.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LM_FILE: &str = "lm.ckpt";
pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn fixup(cfg: &PipelineConfig) -> Fixup {
    if cfg.vocab.remove_stop_words {
        Fixup::with_default_stop_words()
    } else {
        Fixup::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub examples: usize,
    pub per_label: Vec<usize>,
}

impl SplitCounts {
    fn of(corpus: &LabeledCorpus) -> Self {
        SplitCounts {
            examples: corpus.len(),
            per_label: corpus.label_counts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub kind: CodeKind,
    pub top_k: usize,
    pub labels: Vec<String>,
    pub notes_read: usize,
    pub notes_dropped: usize,
    pub codes_read: usize,
    pub codes_dropped: usize,
    pub primary_codes: usize,
    pub empty_text_dropped: usize,
    pub without_primary: usize,
    pub outside_top_codes: usize,
    pub train: SplitCounts,
    pub test: SplitCounts,
}

/// Joins notes with primary codes, keeps the top-K codes and writes the
/// seeded train/test split, label map and a count summary into `out`.
pub fn prepare(cfg: &PipelineConfig, notes: &[PathBuf], codes: &Path, out: &Path) -> Result<PrepareSummary> {
    cfg.validate()?;
    let kind = cfg.prepare.kind;
    let notes = load_notes_partitioned(notes)?;
    let codes = load_codes(codes, kind)?;
    let primaries = filter_primary(&codes.rows);
    let top = top_k_codes(&primaries.rows, cfg.prepare.top_k);
    let (corpus, stats) = join_and_filter(&notes.rows, &primaries.rows, &top, kind)?;
    let (train, test) = split(&corpus, cfg.prepare.test_fraction, cfg.seed)?;

    create_dir(out)?;
    write_corpus(out.join(TRAIN_FILE), &train)?;
    write_corpus(out.join(TEST_FILE), &test)?;
    write_label_map(out.join(LABEL_MAP_FILE), &corpus.label_map)?;
    let summary = PrepareSummary {
        kind,
        top_k: cfg.prepare.top_k,
        labels: corpus.label_map.codes().to_vec(),
        notes_read: notes.rows.len(),
        notes_dropped: notes.dropped,
        codes_read: codes.rows.len(),
        codes_dropped: codes.dropped,
        primary_codes: primaries.rows.len(),
        empty_text_dropped: stats.empty_text_dropped,
        without_primary: stats.without_primary,
        outside_top_codes: stats.outside_top_codes,
        train: SplitCounts::of(&train),
        test: SplitCounts::of(&test),
    };
    write_file(
        &out.join(SUMMARY_FILE),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    info!(
        "train: {} examples, per label {:?}",
        summary.train.examples, summary.train.per_label
    );
    info!(
        "test: {} examples, per label {:?}",
        summary.test.examples, summary.test.per_label
    );
    Ok(summary)
}

/// Reads a corpus written by [`prepare`], taking the label map and code
/// kind from the files beside it.
pub fn read_prepared(path: &Path) -> Result<LabeledCorpus> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let label_map = read_label_map(dir.join(LABEL_MAP_FILE))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let kind = match std::fs::read_to_string(&summary_path) {
        Ok(text) => serde_json::from_value(serde_json::from_str::<serde_json::Value>(&text)?["kind"].clone())?,
        Err(_) => CodeKind::Diagnosis,
    };
    read_corpus(path, &label_map, kind)
}

/// Tokenized documents of a text source: each example of a `.jsonl`
/// corpus, or each non-empty line of any other file.
pub fn read_token_docs(fix: &Fixup, path: &Path) -> Result<Vec<Vec<String>>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let corpus = read_prepared(path)?;
        return Ok(corpus.examples.iter().map(|ex| prepare_tokens(fix, &ex.text)).collect());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| prepare_tokens(fix, l))
        .filter(|t| !t.is_empty())
        .collect())
}

fn read_all_docs(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<Vec<Vec<String>>> {
    if inputs.is_empty() {
        return Err(Error::Config("no input files given".into()));
    }
    let fix = fixup(cfg);
    let mut docs = Vec::new();
    for path in inputs {
        docs.extend(read_token_docs(&fix, path)?);
    }
    Ok(docs)
}

fn vocab_from_docs(cfg: &PipelineConfig, docs: &[Vec<String>]) -> Result<Vocabulary> {
    let mut counts = TokenCounts::new();
    for d in docs {
        counts.add(d);
    }
    build_vocab(&counts, cfg.vocab.max_size, cfg.vocab.min_freq)
}

/// Builds a vocabulary over every input and writes it to `out`.
pub fn vocab(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<Vocabulary> {
    cfg.validate()?;
    let v = vocab_from_docs(cfg, &read_all_docs(cfg, inputs)?)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    v.save(out)?;
    info!("vocabulary: {} entries", v.len());
    Ok(v)
}

fn load_or_build_vocab(cfg: &PipelineConfig, docs: &[Vec<String>], path: Option<&Path>) -> Result<Vocabulary> {
    match path {
        Some(p) => Vocabulary::load(p),
        None => vocab_from_docs(cfg, docs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmScore {
    pub loss: f64,
    pub perplexity: f64,
    pub accuracy: f64,
}

impl From<LmEval> for LmScore {
    fn from(e: LmEval) -> Self {
        LmScore {
            loss: e.loss,
            perplexity: e.perplexity(),
            accuracy: e.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub vocab_size: usize,
    pub train_tokens: usize,
    pub valid_tokens: usize,
    /// Validation scores before any training step.
    pub initial: LmScore,
    #[serde(rename = "final")]
    pub final_: LmScore,
    pub history: Vec<EpochLoss>,
}

fn fit_lm(
    cfg: &PipelineConfig,
    mut model: LanguageModel<f32>,
    vocab: &Vocabulary,
    docs: &[Vec<String>],
    out: &Path,
) -> Result<LmReport> {
    let stream: Vec<usize> = docs.iter().flat_map(|d| vocab.numericalize(d)).collect();
    if stream.len() < 4 {
        return Err(Error::Data(format!(
            "language model stream has only {} tokens",
            stream.len()
        )));
    }
    let cut = stream.len() - test_size(stream.len(), cfg.lm_valid_fraction);
    let (train, valid) = stream.split_at(cut);
    let initial = evaluate_stream(&model, valid, 1)?;
    let history = train_lm(&mut model, train, valid, &cfg.lm_train)?;
    let last = evaluate_stream(&model, valid, 1)?;
    info!(
        "lm validation perplexity {:.2} -> {:.2}",
        initial.perplexity(),
        last.perplexity()
    );

    create_dir(out)?;
    vocab.save(out.join(VOCAB_FILE))?;
    save_lm(&model, vocab, out.join(LM_FILE))?;
    save_encoder(&model, vocab, out.join(ENCODER_FILE))?;
    let records: Vec<LossRecord> = history.iter().map(LossRecord::from).collect();
    write_loss_csv(out.join(LOSS_FILE), &records)?;
    let report = LmReport {
        vocab_size: vocab.len(),
        train_tokens: train.len(),
        valid_tokens: valid.len(),
        initial: initial.into(),
        final_: last.into(),
        history,
    };
    write_file(&out.join("lm_report.json"), &to_json_6dp(&report)?)?;
    Ok(report)
}

/// Trains a language model from scratch on the inputs and writes the model,
/// its encoder, vocabulary and loss history into `out`.
pub fn pretrain_lm(cfg: &PipelineConfig, inputs: &[PathBuf], vocab: Option<&Path>, out: &Path) -> Result<LmReport> {
    cfg.validate()?;
    let docs = read_all_docs(cfg, inputs)?;
    let vocab = load_or_build_vocab(cfg, &docs, vocab)?;
    let model = LanguageModel::init(LmConfig {
        vocab_size: vocab.len(),
        ..cfg.lm.clone()
    })?;
    fit_lm(cfg, model, &vocab, &docs, out)
}

/// Re-indexes the model in `pretrained` onto the target vocabulary and
/// continues training on the inputs. Architecture comes from the
/// pretrained model; dropout, batching and seed from `cfg`.
pub fn finetune_lm(
    cfg: &PipelineConfig,
    pretrained: &Path,
    inputs: &[PathBuf],
    vocab: Option<&Path>,
    out: &Path,
) -> Result<LmReport> {
    cfg.validate()?;
    let old_vocab = Vocabulary::load(pretrained.join(VOCAB_FILE))?;
    let source = load_lm(pretrained.join(LM_FILE), &old_vocab)?;
    let docs = read_all_docs(cfg, inputs)?;
    let new_vocab = load_or_build_vocab(cfg, &docs, vocab)?;
    let src = &source.config;
    let target = LmConfig {
        vocab_size: new_vocab.len(),
        embed_dim: src.embed_dim,
        hidden_dim: src.hidden_dim,
        num_layers: src.num_layers,
        tie_weights: src.tie_weights,
        ..cfg.lm.clone()
    };
    let shared = new_vocab.itos().iter().filter(|t| old_vocab.get(t).is_some()).count();
    info!(
        "transfer: {shared} of {} target tokens known to the pretrained model",
        new_vocab.len()
    );
    let model = transfer_remap(&source, &old_vocab, &new_vocab, &target)?;
    fit_lm(cfg, model, &new_vocab, &docs, out)
}

fn labeled_docs(fix: &Fixup, vocab: &Vocabulary, corpus: &LabeledCorpus) -> Vec<LabeledDoc> {
    corpus
        .examples
        .iter()
        .map(|ex| LabeledDoc {
            ids: vocab.numericalize(&prepare_tokens(fix, &ex.text)),
            label: ex.label,
        })
        .collect()
}

fn write_history_csv(path: &Path, history: &[ClfEpoch]) -> Result<()> {
    let mut s = String::from("epoch,groups,train_loss,train_accuracy,valid_loss,valid_accuracy\n");
    for e in history {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            e.epoch, e.groups, e.train_loss, e.train_accuracy, e.valid_loss, e.valid_accuracy
        );
    }
    write_file(path, &s)
}

/// Trains the classifier on top of the encoder in `encoder_dir`. Without a
/// validation corpus, a seeded share of the training corpus is held out.
pub fn train_clf(
    cfg: &PipelineConfig,
    encoder_dir: &Path,
    corpus: &Path,
    valid: Option<&Path>,
    out: &Path,
) -> Result<Vec<ClfEpoch>> {
    cfg.validate()?;
    let vocab = Vocabulary::load(encoder_dir.join(VOCAB_FILE))?;
    let snap = crate::langmodel::load_encoder(encoder_dir.join(ENCODER_FILE), &vocab)?;
    let full = read_prepared(corpus)?;
    let (train, valid) = match valid {
        Some(p) => {
            let v = read_prepared(p)?;
            if v.label_map != full.label_map {
                return Err(Error::Data("validation corpus uses a different label map".into()));
            }
            (full, v)
        }
        None => split(&full, cfg.classifier_valid_fraction, cfg.seed)?,
    };
    let fix = fixup(cfg);
    let train_docs = labeled_docs(&fix, &vocab, &train);
    let valid_docs = labeled_docs(&fix, &vocab, &valid);
    let clf_cfg = ClassifierConfig {
        num_classes: train.num_classes(),
        ..cfg.classifier.clone()
    };
    let mut model = ClassifierModel::new(snap.encoder, snap.config, clf_cfg)?;
    let history = train_classifier(&mut model, &train_docs, &valid_docs)?;

    create_dir(out)?;
    vocab.save(out.join(VOCAB_FILE))?;
    write_label_map(out.join(LABEL_MAP_FILE), &train.label_map)?;
    let meta = json!({ "labels": train.label_map.codes(), "kind": train.kind });
    save_classifier(&model, &vocab, meta, out.join(CLASSIFIER_FILE))?;
    let records: Vec<LossRecord> = history.iter().map(LossRecord::from).collect();
    write_loss_csv(out.join(LOSS_FILE), &records)?;
    write_history_csv(&out.join("history.csv"), &history)?;
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub files: ReportFiles,
    pub predictions: PathBuf,
}

fn with_suffix(prefix: &Path, name: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(name);
    PathBuf::from(s)
}

/// Scores the classifier in `model_dir` on a prepared corpus and writes the
/// metrics file set plus `predictions.jsonl` under `prefix`.
pub fn eval(cfg: &PipelineConfig, model_dir: &Path, corpus: &Path, prefix: &Path) -> Result<EvalOutput> {
    let vocab = Vocabulary::load(model_dir.join(VOCAB_FILE))?;
    let (model, meta) = load_classifier(model_dir.join(CLASSIFIER_FILE), &vocab)?;
    let corpus = read_prepared(corpus)?;
    let labels: Vec<String> = serde_json::from_value(meta["labels"].clone())?;
    if labels != corpus.label_map.codes() {
        return Err(Error::Data(
            "corpus label map differs from the one the model was trained on".into(),
        ));
    }
    let docs = labeled_docs(&fixup(cfg), &vocab, &corpus);
    let refs: Vec<&[usize]> = docs.iter().map(|d| d.ids.as_slice()).collect();
    let probs = predict_proba(&model, &refs)?;
    let preds: Vec<usize> = probs.outer_iter().map(crate::langmodel::argmax).collect();
    let truths: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let k = model.num_classes();
    let cm = confusion(&preds, &truths, k)?;
    let auc = macro_auc(probs.view(), &truths, k)?;
    let report = summary(&cm).with_auc(&auc).with_labels(labels);

    let loss_path = model_dir.join(LOSS_FILE);
    let loss = if loss_path.exists() {
        read_loss_csv(&loss_path)?
    } else {
        Vec::new()
    };
    let files = export_report(&report, &cm, &auc.curves, &loss, prefix)?;

    let predictions = with_suffix(prefix, "predictions.jsonl");
    let mut s = String::new();
    for ((ex, &pred), row) in corpus.examples.iter().zip(&preds).zip(probs.outer_iter()) {
        let p: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(
            s,
            "{{\"hadm_id\":{},\"label\":{},\"pred\":{},\"probs\":[{}]}}",
            ex.hadm_id,
            ex.label,
            pred,
            p.join(",")
        );
    }
    write_file(&predictions, &s)?;
    info!("accuracy {:.4}, macro F1 {:.4}", report.accuracy, report.macro_f1);
    Ok(EvalOutput {
        report,
        files,
        predictions,
    })
}

/// TF-IDF over the documents of the inputs against a saved vocabulary.
pub fn tfidf_features(cfg: &PipelineConfig, inputs: &[PathBuf], vocab: &Path, out: &Path) -> Result<usize> {
    let vocab = Vocabulary::load(vocab)?;
    let docs = read_all_docs(cfg, inputs)?;
    let m = tfidf(&docs, &vocab);
    write_tfidf_csv(out, &m, &vocab)?;
    Ok(m.entries.len())
}

pub fn synth(spec: &SyntheticSpec, out: &Path) -> Result<SynthFiles> {
    let corpus = generate(spec)?;
    write_synthetic(spec, &corpus, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub general: LmReport,
    pub target: LmReport,
    pub history: Vec<ClfEpoch>,
    pub eval: EvalOutput,
}

/// The whole pipeline under `work`: prepare, pretrain on `general`,
/// fine-tune on the training notes, train the classifier and evaluate on
/// the held-out split.
pub fn run_all(
    cfg: &PipelineConfig,
    notes: &[PathBuf],
    codes: &Path,
    general: &[PathBuf],
    work: &Path,
) -> Result<RunOutput> {
    let data = work.join("data");
    prepare(cfg, notes, codes, &data)?;
    let train = data.join(TRAIN_FILE);
    let general = pretrain_lm(cfg, general, None, &work.join("general_lm"))?;
    let target = finetune_lm(
        cfg,
        &work.join("general_lm"),
        std::slice::from_ref(&train),
        None,
        &work.join("target_lm"),
    )?;
    let history = train_clf(cfg, &work.join("target_lm"), &train, None, &work.join("classifier"))?;
    let eval = eval(
        cfg,
        &work.join("classifier"),
        &data.join(TEST_FILE),
        &work.join("eval/"),
    )?;
    Ok(RunOutput {
        general,
        target,
        history,
        eval,
    })
}

/// [`run_all`] on a freshly generated synthetic corpus (`cfg.synth`).
pub fn run_synthetic(cfg: &PipelineConfig, work: &Path) -> Result<RunOutput> {
    let files = synth(&cfg.synth, &work.join("synth"))?;
    let cfg = PipelineConfig {
        prepare: super::config::PrepareConfig {
            top_k: cfg.synth.num_classes,
            ..cfg.prepare.clone()
        },
        ..cfg.clone()
    };
    run_all(&cfg, &[files.notes], &files.codes, &[files.general], work)
}
