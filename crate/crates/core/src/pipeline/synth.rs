//! Seeded synthetic corpus: labeled notes whose tokens mix a shared
//! background distribution with class-specific ones, plus an unlabeled
//! general-domain text drawn from the background alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CodeAssignment, CodeKind, NoteRecord};
use crate::numcore::{stream, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Background word types.
    pub vocab_size: usize,
    /// Word types owned by each class.
    pub class_vocab: usize,
    pub tokens_per_doc: usize,
    pub docs_per_class: usize,
    /// Probability that a token comes from the document's class distribution.
    pub signal: f64,
    /// Length of the unlabeled general text.
    pub general_tokens: usize,
    /// Zipf exponent of every distribution.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            vocab_size: 200,
            class_vocab: 8,
            tokens_per_doc: 60,
            docs_per_class: 200,
            signal: 0.5,
            general_tokens: 50_000,
            zipf_exponent: 1.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synth.num_classes must be >= 2".into()));
        }
        if self.vocab_size == 0 || self.class_vocab == 0 || self.tokens_per_doc == 0 || self.docs_per_class == 0 {
            return Err(Error::Config(
                "synth vocab sizes, tokens_per_doc and docs_per_class must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::Config(format!(
                "synth.signal must lie in [0, 1], got {}",
                self.signal
            )));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config("synth.zipf_exponent must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn background_word(i: usize) -> String {
        format!("w{i}")
    }

    pub fn class_word(c: usize, j: usize) -> String {
        format!("c{c}k{j}")
    }

    /// ICD-9-shaped code for class `c`; codes sort in class order.
    pub fn class_code(c: usize) -> String {
        format!("{:03}.{}", 400 + c, c % 10)
    }

    /// Probability of rank `r` (0-based) among `n` under the configured Zipf law.
    pub fn zipf_prob(&self, n: usize, r: usize) -> f64 {
        let z: f64 = (1..=n).map(|k| (k as f64).powf(-self.zipf_exponent)).sum();
        ((r + 1) as f64).powf(-self.zipf_exponent) / z
    }

    /// Probability of `token` at any position of a class-`c` document.
    pub fn token_prob(&self, c: usize, token: &str) -> f64 {
        let bg = (0..self.vocab_size)
            .find(|&i| Self::background_word(i) == token)
            .map_or(0.0, |i| self.zipf_prob(self.vocab_size, i));
        let cls = (0..self.class_vocab)
            .find(|&j| Self::class_word(c, j) == token)
            .map_or(0.0, |j| self.zipf_prob(self.class_vocab, j));
        self.signal * cls + (1.0 - self.signal) * bg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDoc {
    pub class: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<SyntheticDoc>,
    pub general: Vec<String>,
}

fn zipf_index(spec: &SyntheticSpec, n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| spec.zipf_prob(n, r))).expect("positive weights")
}

/// Documents cycle through the classes (doc `i` has class `i mod K`).
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed, stream::SYNTH);
    let background = zipf_index(spec, spec.vocab_size);
    let per_class = zipf_index(spec, spec.class_vocab);

    let n_docs = spec.num_classes * spec.docs_per_class;
    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let class = i % spec.num_classes;
        let tokens = (0..spec.tokens_per_doc)
            .map(|_| {
                let r = rng.rng();
                if r.gen::<f64>() < spec.signal {
                    SyntheticSpec::class_word(class, per_class.sample(r))
                } else {
                    SyntheticSpec::background_word(background.sample(r))
                }
            })
            .collect();
        docs.push(SyntheticDoc { class, tokens });
    }
    let general = (0..spec.general_tokens)
        .map(|_| SyntheticSpec::background_word(background.sample(rng.rng())))
        .collect();
    Ok(SyntheticCorpus { docs, general })
}

impl SyntheticCorpus {
    pub fn notes(&self) -> Vec<NoteRecord> {
        self.docs
            .iter()
            .enumerate()
            .map(|(i, d)| NoteRecord {
                subject_id: 1000 + i as u64,
                hadm_id: 100_000 + i as u64,
                category: "Discharge summary".into(),
                text: d.tokens.join(" "),
            })
            .collect()
    }

    /// One primary code per admission carrying the class, plus a secondary
    /// code of another class that a correct pipeline must ignore.
    pub fn codes(&self, num_classes: usize) -> Vec<CodeAssignment> {
        let mut out = Vec::with_capacity(2 * self.docs.len());
        for (i, d) in self.docs.iter().enumerate() {
            let (subject_id, hadm_id) = (1000 + i as u64, 100_000 + i as u64);
            for (seq_num, class) in [(1, d.class), (2, (d.class + 1) % num_classes)] {
                out.push(CodeAssignment {
                    subject_id,
                    hadm_id,
                    seq_num,
                    code: SyntheticSpec::class_code(class),
                    kind: CodeKind::Diagnosis,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub notes: PathBuf,
    pub codes: PathBuf,
    pub general: PathBuf,
    pub spec: PathBuf,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })
}

/// Writes `notes.csv`, `diagnoses.csv`, `general.txt` (20 words per line)
/// and `synth_spec.json` into `dir`.
pub fn write_synthetic(spec: &SyntheticSpec, corpus: &SyntheticCorpus, dir: impl AsRef<Path>) -> Result<SynthFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| Error::Csv {
            path: path.clone(),
            source: e,
        }
    };

    let notes = dir.join("notes.csv");
    let mut w = csv_writer(&notes)?;
    w.write_record(["SUBJECT_ID", "HADM_ID", "CATEGORY", "TEXT"])
        .map_err(csv_err(&notes))?;
    for n in corpus.notes() {
        w.write_record([n.subject_id.to_string(), n.hadm_id.to_string(), n.category, n.text])
            .map_err(csv_err(&notes))?;
    }
    w.flush().map_err(|e| Error::io(&notes, e))?;

    let codes = dir.join("diagnoses.csv");
    let mut w = csv_writer(&codes)?;
    w.write_record(["SUBJECT_ID", "HADM_ID", "SEQ_NUM", "ICD9_CODE"])
        .map_err(csv_err(&codes))?;
    for c in corpus.codes(spec.num_classes) {
        w.write_record([
            c.subject_id.to_string(),
            c.hadm_id.to_string(),
            c.seq_num.to_string(),
            c.code,
        ])
        .map_err(csv_err(&codes))?;
    }
    w.flush().map_err(|e| Error::io(&codes, e))?;

    let general = dir.join("general.txt");
    let mut text = String::with_capacity(corpus.general.len() * 5);
    for line in corpus.general.chunks(20) {
        let _ = writeln!(text, "{}", line.join(" "));
    }
    std::fs::write(&general, text).map_err(|e| Error::io(&general, e))?;

    let spec_path = dir.join("synth_spec.json");
    let json = serde_json::to_string_pretty(spec)? + "\n";
    std::fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;

    Ok(SynthFiles {
        notes,
        codes,
        general,
        spec: spec_path,
    })
}
