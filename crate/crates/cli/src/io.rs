//! CSV ingestion and atomic output files.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use latent_ensemble::{LabelVector, PredictionMatrix};

/// Error caused by the user's input rather than by this program (exit 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Layout of a predictions file.
#[derive(Debug, Clone, Copy, Default, clap::Args)]
pub struct CsvLayout {
    /// Entries are 0/1 instead of -1/1.
    #[arg(long)]
    pub zero_one: bool,
    /// The first row holds instance ids.
    #[arg(long)]
    pub header: bool,
    /// The first column holds classifier ids.
    #[arg(long)]
    pub row_ids: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub z: PredictionMatrix,
    pub instance_ids: Vec<String>,
    pub classifier_ids: Vec<String>,
}

fn parse_entry(raw: &str, zero_one: bool) -> Option<i8> {
    match (raw.trim(), zero_one) {
        ("0", true) => Some(-1),
        ("1", true) => Some(1),
        ("-1", false) => Some(-1),
        ("1" | "+1", false) => Some(1),
        _ => None,
    }
}

/// Reads a predictions matrix: one row per classifier, one column per
/// instance.
pub fn read_predictions(path: &Path, layout: CsvLayout) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut instance_ids = None;
    let mut classifier_ids = Vec::new();
    let mut rows: Vec<Vec<i8>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let skip = usize::from(layout.row_ids);
        if layout.header && line == 0 {
            instance_ids = Some(record.iter().skip(skip).map(str::to_string).collect::<Vec<_>>());
            continue;
        }
        if layout.row_ids {
            classifier_ids.push(record.get(0).unwrap_or_default().to_string());
        }
        let row = record
            .iter()
            .skip(skip)
            .enumerate()
            .map(|(col, raw)| {
                parse_entry(raw, layout.zero_one).ok_or_else(|| {
                    let alphabet = if layout.zero_one { "0 or 1" } else { "-1 or 1" };
                    input_error(format!(
                        "{}: line {}, field {}: invalid entry {raw:?} (expected {alphabet})",
                        path.display(),
                        line + 1,
                        col + skip + 1
                    ))
                })
            })
            .collect::<Result<Vec<i8>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(input_error(format!("{}: no predictions found", path.display())));
    }
    let z = PredictionMatrix::from_rows(&rows)?;
    let instance_ids = match instance_ids {
        Some(ids) => ids,
        None => (0..z.n()).map(|j| j.to_string()).collect(),
    };
    if instance_ids.len() != z.n() {
        return Err(input_error(format!(
            "{}: header has {} ids for {} instances",
            path.display(),
            instance_ids.len(),
            z.n()
        )));
    }
    if classifier_ids.is_empty() {
        classifier_ids = (0..z.m()).map(|i| i.to_string()).collect();
    }
    Ok(Dataset {
        z,
        instance_ids,
        classifier_ids,
    })
}

/// Reads the `label` column of a headed CSV file (labels or predictions
/// output), together with the `id` column when present.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, LabelVector)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| input_error(format!("{}: no `label` column", path.display())))?;
    let id_col = headers.iter().position(|h| h.trim() == "id");
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let raw = record.get(label_col).unwrap_or_default();
        let label = parse_entry(raw, false).ok_or_else(|| {
            input_error(format!("{}: line {}: invalid label {raw:?} (expected -1 or 1)", path.display(), line + 2))
        })?;
        labels.push(label);
        ids.push(match id_col {
            Some(c) => record.get(c).unwrap_or_default().to_string(),
            None => line.to_string(),
        });
    }
    if labels.is_empty() {
        return Err(input_error(format!("{}: no labels found", path.display())));
    }
    Ok((ids, LabelVector::new(labels)?))
}

/// Writes to `path` through a temporary file in the same directory that is
/// renamed into place once complete; `None` writes to stdout.
pub fn write_output(path: Option<&PathBuf>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let tmp = tempfile::NamedTempFile::new_in(dir)
                .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
            {
                let mut w = BufWriter::new(tmp.as_file());
                body(&mut w)?;
                w.flush()?;
            }
            tmp.as_file().sync_all()?;
            tmp.persist(path)
                .map_err(|e| e.error)
                .with_context(|| format!("cannot write {}", path.display()))?;
            Ok(())
        }
    }
}

/// Writes a prediction matrix in the native -1/1 layout.
pub fn write_predictions(w: &mut dyn Write, z: &PredictionMatrix) -> io::Result<()> {
    for row in z.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn open_for_read(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn native_alphabet() {
        let f = temp_csv("1,-1,1\n-1,-1,+1\n");
        let d = read_predictions(f.path(), CsvLayout::default()).unwrap();
        assert_eq!(d.z.row(1), &[-1, -1, 1]);
        assert_eq!(d.instance_ids, vec!["0", "1", "2"]);
    }

    #[test]
    fn zero_one_with_ids() {
        let f = temp_csv("clf,a,b\nx,0,1\ny,1,1\n");
        let layout = CsvLayout {
            zero_one: true,
            header: true,
            row_ids: true,
        };
        let d = read_predictions(f.path(), layout).unwrap();
        assert_eq!(d.z.row(0), &[-1, 1]);
        assert_eq!(d.instance_ids, vec!["a", "b"]);
        assert_eq!(d.classifier_ids, vec!["x", "y"]);
    }

    #[test]
    fn bad_entries_are_input_errors() {
        for contents in ["1,0\n1,1\n", "1,2\n", "1,1\n1\n", ""] {
            let f = temp_csv(contents);
            let err = read_predictions(f.path(), CsvLayout::default()).unwrap_err();
            assert!(err.chain().any(|c| c.is::<InputError>()), "{contents:?}: {err}");
        }
    }

    #[test]
    fn labels_from_headed_file() {
        let f = temp_csv("id,label,posterior\na,1,0.9\nb,-1,0.2\n");
        let (ids, y) = read_labels(f.path()).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(y.as_slice(), &[1, -1]);
    }
}
