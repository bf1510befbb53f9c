//! Note and code table ingestion: primary-code filtering, top-K label
//! selection, the note/code join and seeded train/test splits.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteRecord {
    pub subject_id: u64,
    pub hadm_id: u64,
    pub category: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
}

impl std::str::FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diagnosis" | "diagnoses" | "dx" => Ok(CodeKind::Diagnosis),
            "procedure" | "procedures" | "px" => Ok(CodeKind::Procedure),
            other => Err(Error::Config(format!("unknown code kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeAssignment {
    pub subject_id: u64,
    pub hadm_id: u64,
    pub seq_num: u32,
    pub code: String,
    pub kind: CodeKind,
}

/// Rows parsed from a table plus the number of rows skipped because a
/// nullable key cell was empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    pub dropped: usize,
}

/// Bijective code <-> label index map. Index order is the order of `codes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    codes: Vec<String>,
    index_of: HashMap<String, usize>,
}

impl LabelMap {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index_of = HashMap::with_capacity(codes.len());
        for (i, code) in codes.iter().enumerate() {
            if index_of.insert(code.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate code {code:?} in label map")));
            }
        }
        Ok(LabelMap { codes, index_of })
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index_of.get(code).copied()
    }

    pub fn code(&self, index: usize) -> Option<&str> {
        self.codes.get(index).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub hadm_id: u64,
    pub label: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub examples: Vec<Example>,
    pub label_map: LabelMap,
    pub kind: CodeKind,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    fn with_examples(&self, examples: Vec<Example>) -> LabeledCorpus {
        LabeledCorpus {
            examples,
            label_map: self.label_map.clone(),
            kind: self.kind,
        }
    }
}

struct Columns {
    indices: Vec<Option<usize>>,
}

fn resolve_columns(path: &Path, headers: &csv::StringRecord, required: &[&str], optional: &[&str]) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let mut indices = Vec::with_capacity(required.len() + optional.len());
    for name in required {
        match find(name) {
            Some(i) => indices.push(Some(i)),
            None => {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
            }
        }
    }
    indices.extend(optional.iter().map(|name| find(name)));
    Ok(Columns { indices })
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_id(path: &Path, row: usize, column: &str, cell: &str) -> Result<Option<u64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<u64>() {
        Ok(0) | Err(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("{column} must be a positive integer, got {cell:?}"),
        }),
        Ok(v) => Ok(Some(v)),
    }
}

fn record_line(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Reads a notes table (SUBJECT_ID, HADM_ID, TEXT; CATEGORY optional).
/// Rows whose HADM_ID cell is empty are skipped and counted.
pub fn load_notes(path: impl AsRef<Path>) -> Result<Loaded<NoteRecord>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = resolve_columns(path, &headers, &["SUBJECT_ID", "HADM_ID", "TEXT"], &["CATEGORY"])?;
    let [subj, hadm, text, cat] = [0, 1, 2, 3].map(|i| cols.indices[i]);
    let (subj, hadm, text) = (subj.unwrap(), hadm.unwrap(), text.unwrap());

    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record_line(&record, i + 2);
        let Some(hadm_id) = parse_id(path, line, "HADM_ID", &record[hadm])? else {
            dropped += 1;
            continue;
        };
        let subject_id = parse_id(path, line, "SUBJECT_ID", &record[subj])?.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            message: "SUBJECT_ID is empty".into(),
        })?;
        rows.push(NoteRecord {
            subject_id,
            hadm_id,
            category: cat.map(|c| record[c].to_string()).unwrap_or_default(),
            text: record[text].to_string(),
        });
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} note rows with empty HADM_ID", path.display());
    }
    Ok(Loaded { rows, dropped })
}

/// Reads a diagnosis or procedure code table (SUBJECT_ID, HADM_ID, SEQ_NUM,
/// ICD9_CODE). Rows with an empty HADM_ID, SEQ_NUM or code are skipped and
/// counted; malformed numbers are errors.
pub fn load_codes(path: impl AsRef<Path>, kind: CodeKind) -> Result<Loaded<CodeAssignment>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = resolve_columns(path, &headers, &["SUBJECT_ID", "HADM_ID", "SEQ_NUM", "ICD9_CODE"], &[])?;
    let [subj, hadm, seq, code] = [0, 1, 2, 3].map(|i| cols.indices[i].unwrap());

    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record_line(&record, i + 2);
        let Some(hadm_id) = parse_id(path, line, "HADM_ID", &record[hadm])? else {
            dropped += 1;
            continue;
        };
        let code_cell = record[code].trim();
        let seq_cell = record[seq].trim();
        if code_cell.is_empty() || seq_cell.is_empty() {
            dropped += 1;
            continue;
        }
        let seq_num = match seq_cell.parse::<u32>() {
            Ok(v) if v >= 1 => v,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: line,
                    message: format!("SEQ_NUM must be an integer >= 1, got {seq_cell:?}"),
                })
            }
        };
        let subject_id = parse_id(path, line, "SUBJECT_ID", &record[subj])?.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            message: "SUBJECT_ID is empty".into(),
        })?;
        rows.push(CodeAssignment {
            subject_id,
            hadm_id,
            seq_num,
            code: code_cell.to_string(),
            kind,
        });
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} code rows with empty cells", path.display());
    }
    Ok(Loaded { rows, dropped })
}

/// Loads several pre-partitioned notes files on worker threads and
/// concatenates them in argument order.
pub fn load_notes_partitioned(paths: &[PathBuf]) -> Result<Loaded<NoteRecord>> {
    let results: Vec<Result<Loaded<NoteRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = paths.iter().map(|p| s.spawn(move || load_notes(p))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("notes loader thread panicked"))
            .collect()
    });
    let mut merged = Loaded {
        rows: Vec::new(),
        dropped: 0,
    };
    for part in results {
        let part = part?;
        merged.rows.extend(part.rows);
        merged.dropped += part.dropped;
    }
    Ok(merged)
}

/// Keeps the sequence-1 (primary) assignment of each admission. A repeated
/// primary for the same (subject, admission, kind) keeps the first row.
pub fn filter_primary(codes: &[CodeAssignment]) -> Loaded<CodeAssignment> {
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut dropped = 0;
    for c in codes.iter().filter(|c| c.seq_num == 1) {
        if seen.insert((c.subject_id, c.hadm_id, c.kind)) {
            rows.push(c.clone());
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        warn!("dropped {dropped} duplicate primary code rows");
    }
    Loaded { rows, dropped }
}

/// The `k` most frequent primary codes, by descending admission count with
/// ties broken by ascending code.
pub fn top_k_codes(primaries: &[CodeAssignment], k: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in primaries {
        *counts.entry(c.code.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if ranked.len() < k {
        warn!("requested top-{k} codes but only {} distinct codes exist", ranked.len());
    }
    ranked.into_iter().take(k).map(|(c, _)| c.to_string()).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub empty_text_dropped: usize,
    pub without_primary: usize,
    pub outside_top_codes: usize,
}

/// Inner join of notes with primary codes on (subject, admission). Every
/// surviving note becomes one example labelled by its admission's code.
pub fn join_and_filter(
    notes: &[NoteRecord],
    primaries: &[CodeAssignment],
    top_codes: &[String],
    kind: CodeKind,
) -> Result<(LabeledCorpus, JoinStats)> {
    if top_codes.is_empty() {
        return Err(Error::Config("top_codes must not be empty".into()));
    }
    let label_map = LabelMap::new(top_codes.to_vec())?;
    let mut code_of: HashMap<(u64, u64), &str> = HashMap::new();
    for p in primaries.iter().filter(|p| p.kind == kind) {
        code_of.entry((p.subject_id, p.hadm_id)).or_insert(&p.code);
    }

    let mut stats = JoinStats::default();
    let mut examples = Vec::new();
    for note in notes {
        let Some(code) = code_of.get(&(note.subject_id, note.hadm_id)) else {
            stats.without_primary += 1;
            continue;
        };
        let Some(label) = label_map.index_of(code) else {
            stats.outside_top_codes += 1;
            continue;
        };
        if note.text.trim().is_empty() {
            stats.empty_text_dropped += 1;
            continue;
        }
        examples.push(Example {
            hadm_id: note.hadm_id,
            label,
            text: note.text.clone(),
        });
    }
    if stats.empty_text_dropped > 0 {
        warn!("dropped {} notes with empty text", stats.empty_text_dropped);
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((
        LabeledCorpus {
            examples,
            label_map,
            kind,
        },
        stats,
    ))
}

/// Number of held-out examples for a corpus of size `n`.
pub fn test_size(n: usize, test_fraction: f64) -> usize {
    let raw = (n as f64 * test_fraction).round() as usize;
    raw.clamp(1, n - 1)
}

/// Seeded shuffle followed by a prefix (train) / suffix (test) cut.
pub fn split(corpus: &LabeledCorpus, test_fraction: f64, seed: u64) -> Result<(LabeledCorpus, LabeledCorpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Data(format!("cannot split a corpus of {n} examples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = n - test_size(n, test_fraction);
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.examples[i].clone()).collect();
    Ok((
        corpus.with_examples(pick(&order[..cut])),
        corpus.with_examples(pick(&order[cut..])),
    ))
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &LabeledCorpus) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ex in &corpus.examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines corpus and checks every label against `label_map`.
pub fn read_corpus(path: impl AsRef<Path>, label_map: &LabelMap, kind: CodeKind) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?;
        if ex.label >= label_map.len() {
            return Err(Error::Data(format!(
                "{}: line {}: label {} outside [0, {})",
                path.display(),
                i + 1,
                ex.label,
                label_map.len()
            )));
        }
        examples.push(ex);
    }
    Ok(LabeledCorpus {
        examples,
        label_map: label_map.clone(),
        kind,
    })
}

pub fn write_label_map(path: impl AsRef<Path>, label_map: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(label_map.codes())?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let codes: Vec<String> = serde_json::from_str(&text)?;
    LabelMap::new(codes)
}
