//! Tab-separated dataset manifests (columns aligned below for reading).
//!
//! ```text
//! image_path              sketch_path               label_id  label_name  split
//! images/circle/0000.png  sketches/circle/0000.png  0         circle      train
//! ```
//!
//! Paths are stored relative to the manifest's directory. `sketch_path` may
//! be empty for corpora without sketches. The class table lives next to the
//! manifest as `<stem>.classes.tsv` with columns `label_id` and `label_name`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["image_path", "sketch_path", "label_id", "label_name", "split"];
pub const CLASS_HEADER: [&str; 2] = ["label_id", "label_name"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train|val|test)")),
        }
    }
}

/// One manifest row; paths are absolute (or as given) once loaded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub image_path: PathBuf,
    pub sketch_path: Option<PathBuf>,
    pub label_id: usize,
    pub label_name: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub records: Vec<PairRecord>,
}

impl Manifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for r in &self.records {
            counts[r.label_id] += 1;
        }
        counts
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            match self.classes.get(r.label_id) {
                Some(name) if *name == r.label_name => {}
                Some(name) => {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        line: i + 2,
                        reason: format!(
                            "label {} is {name:?} in the class table, row says {:?}",
                            r.label_id, r.label_name
                        ),
                    })
                }
                None => {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        line: i + 2,
                        reason: format!("label {} not in class table of {}", r.label_id, self.classes.len()),
                    })
                }
            }
        }
        Ok(())
    }
}

pub fn class_table_path(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    manifest.with_file_name(format!("{stem}.classes.tsv"))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// Joins `rel` onto `base` and folds `.`/`..` components lexically.
fn join_clean(base: &Path, rel: &str) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in base.join(rel).components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn relative_to(target: &Path, base: &Path) -> Result<String> {
    let t = absolute(target)?;
    let rel = pathdiff::diff_paths(&t, base).unwrap_or(t);
    rel.to_str()
        .map(|s| s.to_string())
        .ok_or_else(|| Error::Data(format!("path {} is not valid UTF-8", rel.display())))
}

fn tsv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

/// Writes the manifest and its class table atomically.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.validate(path)?;
    let base = absolute(path.parent().unwrap_or(Path::new(".")))?;
    let mut w = tsv_writer();
    w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
    for r in &manifest.records {
        let sketch = match &r.sketch_path {
            Some(p) => relative_to(p, &base)?,
            None => String::new(),
        };
        w.write_record([
            relative_to(&r.image_path, &base)?,
            sketch,
            r.label_id.to_string(),
            r.label_name.clone(),
            r.split.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let body = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;

    let table_path = class_table_path(path);
    let mut t = tsv_writer();
    t.write_record(CLASS_HEADER).map_err(|e| csv_err(&table_path, e))?;
    for (i, name) in manifest.classes.iter().enumerate() {
        t.write_record([i.to_string(), name.clone()])
            .map_err(|e| csv_err(&table_path, e))?;
    }
    let table = t.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    atomic_write(&table_path, &table)?;
    atomic_write(path, &body)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().delimiter(b'\t').from_reader(f))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("header must be {:?}", expected.join("\t")),
        });
    }
    Ok(())
}

pub fn read_class_table(path: &Path) -> Result<Vec<String>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &CLASS_HEADER)?;
    let mut classes = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 2,
            reason,
        };
        let id: usize = row[0].parse().map_err(|_| bad(format!("bad label id {:?}", &row[0])))?;
        if id != classes.len() {
            return Err(bad(format!("label ids must be 0..n in order, found {id}")));
        }
        classes.push(row[1].to_string());
    }
    Ok(classes)
}

/// Reads a manifest and its class table; paths come back joined onto the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let classes = read_class_table(&class_table_path(path))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &HEADER)?;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 2,
            reason,
        };
        let label_id: usize = row[2].parse().map_err(|_| bad(format!("bad label id {:?}", &row[2])))?;
        let split: Split = row[4].parse().map_err(bad)?;
        records.push(PairRecord {
            image_path: join_clean(&base, &row[0]),
            sketch_path: (!row[1].is_empty()).then(|| join_clean(&base, &row[1])),
            label_id,
            label_name: row[3].to_string(),
            split,
        });
    }
    let m = Manifest { classes, records };
    m.validate(path)?;
    Ok(m)
}

/// Fractions for the train/val/test split; the default is 90/5/5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.9, val: 0.05 }
    }
}

/// Seeded assignment of `n` items to splits. Counts are rounded, with the
/// remainder going to test.
pub fn assign_splits(n: usize, fractions: SplitFractions, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * fractions.train).round() as usize).min(n);
    let n_val = ((n as f64 * fractions.val).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            out[i] = Split::Train;
        } else if rank < n_train + n_val {
            out[i] = Split::Val;
        }
    }
    out
}
