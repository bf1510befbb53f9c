use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::{ConfusionMatrix, MetricsReport, RocCurve};
use crate::classifier::ClfEpoch;
use crate::error::{Error, Result};
use crate::langmodel::EpochLoss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

impl From<&EpochLoss> for LossRecord {
    fn from(e: &EpochLoss) -> Self {
        LossRecord {
            epoch: e.epoch,
            train_loss: e.train_loss,
            valid_loss: e.valid_loss,
        }
    }
}

impl From<&ClfEpoch> for LossRecord {
    fn from(e: &ClfEpoch) -> Self {
        LossRecord {
            epoch: e.epoch,
            train_loss: e.train_loss,
            valid_loss: e.valid_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub confusion: PathBuf,
    pub roc: Vec<PathBuf>,
    pub loss: PathBuf,
}

/// Pretty JSON with every float written to six decimal places.
struct SixDecimals(PrettyFormatter<'static>);

impl Formatter for SixDecimals {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.6}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON, floats at six decimals, trailing newline.
pub fn to_json_6dp<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SixDecimals(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

fn with_suffix(prefix: &Path, name: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(name);
    PathBuf::from(s)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.json`, `confusion.csv`, one `roc_<c>.csv` per curve and
/// `loss.csv`, each named `prefix` + file name (a prefix ending in a path
/// separator names a directory, which is created).
pub fn export_report(
    report: &MetricsReport,
    cm: &ConfusionMatrix,
    curves: &[RocCurve],
    loss: &[LossRecord],
    prefix: impl AsRef<Path>,
) -> Result<ReportFiles> {
    let prefix = prefix.as_ref();
    let dir = with_suffix(prefix, "x");
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }

    let metrics = with_suffix(prefix, "metrics.json");
    write(&metrics, &to_json_6dp(report)?)?;

    let confusion = with_suffix(prefix, "confusion.csv");
    let k = cm.num_classes();
    let mut s = String::from("true_class");
    for c in 0..k {
        let _ = write!(s, ",pred_{c}");
    }
    s.push('\n');
    for (t, row) in cm.counts.iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write(&confusion, &s)?;

    let mut roc = Vec::with_capacity(curves.len());
    for curve in curves {
        let path = with_suffix(prefix, &format!("roc_{}.csv", curve.class));
        let mut s = String::from("fpr,tpr\n");
        for (x, y) in &curve.points {
            let _ = writeln!(s, "{x:.6},{y:.6}");
        }
        write(&path, &s)?;
        roc.push(path);
    }

    let loss_path = with_suffix(prefix, "loss.csv");
    write_loss_csv(&loss_path, loss)?;

    Ok(ReportFiles {
        metrics,
        confusion,
        roc,
        loss: loss_path,
    })
}

/// `epoch,train_loss,valid_loss`, losses to six decimals.
pub fn write_loss_csv(path: impl AsRef<Path>, loss: &[LossRecord]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,valid_loss\n");
    for r in loss {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.valid_loss);
    }
    write(path.as_ref(), &s)
}

pub fn read_metrics_json(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, cell: &str) -> Result<T> {
    cell.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        message: format!("bad value {cell:?}"),
    })
}

pub fn read_confusion_csv(path: impl AsRef<Path>) -> Result<ConfusionMatrix> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    let k = header.len().saturating_sub(1);
    let mut counts = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: i + 1,
                message: format!("expected {} cells", k + 1),
            });
        }
        counts.push(
            row[1..]
                .iter()
                .map(|c| parse(path, i + 1, c))
                .collect::<Result<Vec<u64>>>()?,
        );
    }
    Ok(ConfusionMatrix { counts })
}

pub fn read_roc_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let (_, rows) = read_rows(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| Ok((parse(path, i + 1, &r[0])?, parse(path, i + 1, &r[1])?)))
        .collect()
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let (_, rows) = read_rows(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(LossRecord {
                epoch: parse(path, i + 1, &r[0])?,
                train_loss: parse(path, i + 1, &r[1])?,
                valid_loss: parse(path, i + 1, &r[2])?,
            })
        })
        .collect()
}
