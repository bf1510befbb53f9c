use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfidfEntry {
    pub doc: usize,
    pub term: usize,
    pub value: f64,
}

/// Sparse document x term matrix over the real (non-special) vocabulary
/// terms. Entries are sorted by document, then term index; zeros are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfMatrix {
    pub n_docs: usize,
    pub entries: Vec<TfidfEntry>,
}

impl TfidfMatrix {
    pub fn get(&self, doc: usize, term: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.doc, e.term).cmp(&(doc, term)))
            .map(|i| self.entries[i].value)
            .unwrap_or(0.0)
    }
}

/// Smoothed inverse document frequency `ln((1 + n) / (1 + df)) + 1`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Raw-count TF times smoothed IDF. Out-of-vocabulary tokens and the
/// special tokens are ignored.
pub fn tfidf<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary) -> TfidfMatrix {
    let per_doc: Vec<BTreeMap<usize, usize>> = docs
        .iter()
        .map(|doc| {
            let mut tf = BTreeMap::new();
            for t in doc {
                if let Some(id) = vocab.get(t.as_ref()).filter(|&id| id >= 2) {
                    *tf.entry(id).or_insert(0) += 1;
                }
            }
            tf
        })
        .collect();
    let mut df = vec![0usize; vocab.len()];
    for tf in &per_doc {
        for &term in tf.keys() {
            df[term] += 1;
        }
    }
    let n = docs.len();
    let entries = per_doc
        .iter()
        .enumerate()
        .flat_map(|(doc, tf)| {
            let df = &df;
            tf.iter().map(move |(&term, &count)| TfidfEntry {
                doc,
                term,
                value: count as f64 * idf(n, df[term]),
            })
        })
        .collect();
    TfidfMatrix { n_docs: n, entries }
}

/// Writes `doc_index,term,value` triples with a header row.
pub fn write_tfidf_csv(path: impl AsRef<Path>, m: &TfidfMatrix, vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "doc_index,term,value").map_err(io)?;
    for e in &m.entries {
        let term = vocab.token(e.term).unwrap_or_default();
        writeln!(out, "{},{},{:.6}", e.doc, term, e.value).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::super::{build_vocab, TokenCounts};
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    fn vocab_for(d: &[Vec<String>]) -> Vocabulary {
        let mut c = TokenCounts::new();
        d.iter().for_each(|doc| c.add(doc));
        build_vocab(&c, 100, 1).unwrap()
    }

    #[test]
    fn hand_computed_value() {
        let d = docs(&["a b a", "b c"]);
        let v = vocab_for(&d);
        let m = tfidf(&d, &v);
        let a = v.stoi("a");
        let expected = 2.0 * ((3.0f64 / 2.0).ln() + 1.0);
        assert!((m.get(0, a) - expected).abs() < 1e-12);
        assert!((m.get(0, a) - 2.810930).abs() < 1e-6);
        assert_eq!(m.get(1, a), 0.0);
        assert!(m.entries.iter().all(|e| e.value > 0.0));
    }

    #[test]
    fn single_document_identity() {
        let d = docs(&["x"]);
        let v = vocab_for(&d);
        let m = tfidf(&d, &v);
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].value, 1.0);
    }

    #[test]
    fn idf_non_increasing_in_df() {
        for n in 1..20 {
            for df in 0..n {
                assert!(idf(n, df + 1) <= idf(n, df));
            }
        }
    }

    #[test]
    fn csv_export() {
        let d = docs(&["a b a", "b c"]);
        let v = vocab_for(&d);
        let m = tfidf(&d, &v);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tfidf.csv");
        write_tfidf_csv(&p, &m, &v).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "doc_index,term,value");
        assert_eq!(lines.len(), 1 + m.entries.len());
        assert!(lines.contains(&"0,a,2.810930"));
    }
}
