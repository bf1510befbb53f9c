use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use notecoder::ingest::CodeKind;
use notecoder::pipeline::commands;
use notecoder::pipeline::{PipelineConfig, TopKPreset};
use notecoder::{Error, Result};

/// Clinical note classification into top-K diagnosis or procedure codes.
#[derive(Debug, Parser)]
#[command(name = "notecoder", version)]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splits, initialization, dropout and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus and general-domain text.
    Synth(SynthArgs),
    /// Join notes with primary codes, keep the top-K codes and split.
    Prepare(PrepareArgs),
    /// Build a vocabulary from text or corpus files.
    Vocab(VocabArgs),
    /// Train a language model from scratch.
    PretrainLm(PretrainArgs),
    /// Transfer a pretrained language model to a new corpus and train it.
    FinetuneLm(FinetuneArgs),
    /// Train the classifier on top of a saved encoder.
    TrainClf(TrainClfArgs),
    /// Evaluate a classifier and export the metrics files.
    Eval(EvalArgs),
    /// Export TF-IDF features.
    Tfidf(TfidfArgs),
    /// Print or write the effective configuration.
    Config(ConfigArgs),
    /// Run every stage on given notes, codes and general text.
    Run(RunArgs),
    /// Run every stage on a freshly generated synthetic corpus.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    class_vocab: Option<usize>,
    #[arg(long)]
    tokens_per_doc: Option<usize>,
    #[arg(long)]
    docs_per_class: Option<usize>,
    /// Probability that a token is drawn from its class distribution.
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    general_tokens: Option<usize>,
}

#[derive(Debug, Args)]
struct PrepareOpts {
    /// diagnosis or procedure
    #[arg(long)]
    kind: Option<CodeKind>,
    /// Number of codes kept.
    #[arg(long, conflicts_with = "preset")]
    top_k: Option<usize>,
    /// top10 or top50
    #[arg(long)]
    preset: Option<TopKPreset>,
    /// Held-out fraction of the labeled corpus.
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Note tables; several files are read as partitions of one table.
    #[arg(long, required = true, num_args = 1..)]
    notes: Vec<PathBuf>,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: PrepareOpts,
}

#[derive(Debug, Args)]
struct VocabOpts {
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
}

#[derive(Debug, Args)]
struct VocabArgs {
    /// Plain text (one document per line) or prepared `.jsonl` corpora.
    #[arg(long = "input", alias = "corpus", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: VocabOpts,
}

#[derive(Debug, Args)]
struct LmOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_last: Option<f64>,
    #[arg(long)]
    lr_other: Option<f64>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Existing vocabulary; built from the inputs when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    vocab_opts: VocabOpts,
    #[command(flatten)]
    lm: LmOpts,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Output directory of `pretrain-lm`.
    #[arg(long)]
    pretrained: PathBuf,
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    vocab_opts: VocabOpts,
    #[command(flatten)]
    lm: LmOpts,
}

#[derive(Debug, Args)]
struct ClfOpts {
    #[arg(long)]
    epochs: Option<usize>,
    /// Dropout before the output layer of the head.
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr_last: Option<f64>,
    #[arg(long)]
    lr_other: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainClfArgs {
    /// Output directory of `pretrain-lm` or `finetune-lm`.
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus; a share of `--corpus` is held out when absent.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    clf: ClfOpts,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Output directory of `train-clf`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Prepended to every output file name; a trailing `/` names a directory.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Args)]
struct TfidfArgs {
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, required = true, num_args = 1..)]
    notes: Vec<PathBuf>,
    #[arg(long)]
    codes: PathBuf,
    /// General-domain text for pretraining.
    #[arg(long, required = true, num_args = 1..)]
    general: Vec<PathBuf>,
    #[arg(long)]
    work: PathBuf,
    #[command(flatten)]
    prepare: PrepareOpts,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long)]
    work: PathBuf,
    #[arg(long)]
    signal: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl PrepareOpts {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.prepare.kind, self.kind);
        set(&mut cfg.prepare.top_k, self.top_k.or(self.preset.map(TopKPreset::k)));
        set(&mut cfg.prepare.test_fraction, self.split);
    }
}

impl VocabOpts {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.vocab.max_size, self.max_size);
        set(&mut cfg.vocab.min_freq, self.min_freq);
    }
}

impl LmOpts {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.lm_train.epochs, self.epochs);
        set(&mut cfg.lm_train.optim.lr_last, self.lr_last);
        set(&mut cfg.lm_train.optim.lr_other, self.lr_other);
    }
}

impl ClfOpts {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.classifier.epochs, self.epochs);
        set(&mut cfg.classifier.dropout.classifier, self.dropout);
        set(&mut cfg.classifier.optim.lr_last, self.lr_last);
        set(&mut cfg.classifier.optim.lr_other, self.lr_other);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match &cli.command {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.num_classes, a.classes);
            set(&mut s.vocab_size, a.vocab_size);
            set(&mut s.class_vocab, a.class_vocab);
            set(&mut s.tokens_per_doc, a.tokens_per_doc);
            set(&mut s.docs_per_class, a.docs_per_class);
            set(&mut s.signal, a.signal);
            set(&mut s.general_tokens, a.general_tokens);
        }
        Command::Prepare(a) => a.opts.apply(&mut cfg),
        Command::Vocab(a) => a.opts.apply(&mut cfg),
        Command::PretrainLm(a) => {
            a.vocab_opts.apply(&mut cfg);
            a.lm.apply(&mut cfg);
        }
        Command::FinetuneLm(a) => {
            a.vocab_opts.apply(&mut cfg);
            a.lm.apply(&mut cfg);
        }
        Command::TrainClf(a) => a.clf.apply(&mut cfg),
        Command::Run(a) => a.prepare.apply(&mut cfg),
        Command::Demo(a) => set(&mut cfg.synth.signal, a.signal),
        Command::Eval(_) | Command::Tfidf(_) | Command::Config(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_lm(report: &commands::LmReport) {
    println!(
        "vocabulary {}, {} train / {} valid tokens",
        report.vocab_size, report.train_tokens, report.valid_tokens
    );
    for e in &report.history {
        println!(
            "epoch {}: train loss {:.4}, valid loss {:.4}",
            e.epoch, e.train_loss, e.valid_loss
        );
    }
    println!(
        "valid perplexity {:.2} -> {:.2}, next-token accuracy {:.4}",
        report.initial.perplexity, report.final_.perplexity, report.final_.accuracy
    );
}

fn print_eval(out: &commands::EvalOutput) {
    let r = &out.report;
    println!("examples   {}", r.n_examples);
    println!("accuracy   {:.4}", r.accuracy);
    println!("precision  {:.4} (macro)", r.macro_precision);
    println!("recall     {:.4} (macro)", r.macro_recall);
    println!("f1         {:.4} (macro)", r.macro_f1);
    match r.macro_auc {
        Some(a) => println!(
            "auc        {a:.4} (macro, {} classes undefined)",
            r.auc_undefined_classes
        ),
        None => println!("auc        undefined"),
    }
    println!("metrics written to {}", out.files.metrics.display());
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth(a) => {
            let files = commands::synth(&cfg.synth, &a.out)?;
            println!("notes   {}", files.notes.display());
            println!("codes   {}", files.codes.display());
            println!("general {}", files.general.display());
        }
        Command::Prepare(a) => {
            let s = commands::prepare(&cfg, &a.notes, &a.codes, &a.out)?;
            println!("labels: {}", s.labels.join(" "));
            println!("split  examples  per label");
            println!("train  {:8}  {:?}", s.train.examples, s.train.per_label);
            println!("test   {:8}  {:?}", s.test.examples, s.test.per_label);
        }
        Command::Vocab(a) => {
            let v = commands::vocab(&cfg, &a.inputs, &a.out)?;
            println!("{} entries written to {}", v.len(), a.out.display());
        }
        Command::PretrainLm(a) => {
            print_lm(&commands::pretrain_lm(&cfg, &a.inputs, a.vocab.as_deref(), &a.out)?);
        }
        Command::FinetuneLm(a) => {
            let r = commands::finetune_lm(&cfg, &a.pretrained, &a.inputs, a.vocab.as_deref(), &a.out)?;
            print_lm(&r);
        }
        Command::TrainClf(a) => {
            let history = commands::train_clf(&cfg, &a.encoder, &a.corpus, a.valid.as_deref(), &a.out)?;
            for e in history {
                println!(
                    "epoch {} ({} groups): train loss {:.4} acc {:.4}, valid loss {:.4} acc {:.4}",
                    e.epoch, e.groups, e.train_loss, e.train_accuracy, e.valid_loss, e.valid_accuracy
                );
            }
        }
        Command::Eval(a) => print_eval(&commands::eval(&cfg, &a.model, &a.corpus, &a.out_prefix)?),
        Command::Tfidf(a) => {
            let n = commands::tfidf_features(&cfg, &a.inputs, &a.vocab, &a.out)?;
            println!("{n} non-zero entries written to {}", a.out.display());
        }
        Command::Config(a) => write_or_print(a.out.as_deref(), &cfg.to_json()?)?,
        Command::Run(a) => {
            let out = commands::run_all(&cfg, &a.notes, &a.codes, &a.general, &a.work)?;
            print_eval(&out.eval);
        }
        Command::Demo(a) => print_eval(&commands::run_synthetic(&cfg, &a.work)?.eval),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
