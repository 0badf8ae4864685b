//! Dataset manifests: UTF-8 text, one record per line, tab-separated
//! `id label tensor_path class_id [mask_path]`; `#` starts a comment line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn name(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            other => Err(Error::data(format!(
                "line {line}: label must be normal or anomalous, got {other}"
            ))),
        }
    }
}

/// One dataset entry; paths are stored as written in the manifest.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub label: Label,
    pub tensor_path: PathBuf,
    pub class_id: usize,
    pub mask_path: Option<PathBuf>,
}

/// An ordered list of sample records with the directory they resolve
/// against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            records,
            base_dir: base_dir.into(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Resolves a relative path in a record against the manifest directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read manifest {}: {e}", path.display())))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 && fields.len() != 5 {
                return Err(Error::data(format!(
                    "line {line_no}: expected 4 or 5 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let class_id: usize = fields[3].parse().map_err(|_| {
                Error::data(format!("line {line_no}: class_id {} is not an integer", fields[3]))
            })?;
            records.push(SampleRecord {
                id: fields[0].to_string(),
                label: Label::parse(fields[1], line_no)?,
                tensor_path: PathBuf::from(fields[2]),
                class_id,
                mask_path: fields.get(4).map(PathBuf::from),
            });
        }
        Ok(Self { records, base_dir })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}",
                r.id,
                r.label.name(),
                r.tensor_path.display(),
                r.class_id
            );
            if let Some(m) = &r.mask_path {
                let _ = write!(out, "\t{}", m.display());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text())?;
        Ok(())
    }

    /// Training manifests may only contain normal samples.
    pub fn validate_training(&self) -> Result<()> {
        for r in &self.records {
            if r.label != Label::Normal {
                return Err(Error::data(format!(
                    "training manifest contains anomalous sample {}",
                    r.id
                )));
            }
        }
        Ok(())
    }

    /// When localization metrics are requested, every anomalous record needs
    /// a ground-truth mask.
    pub fn validate_localization(&self) -> Result<()> {
        for r in &self.records {
            if r.label == Label::Anomalous && r.mask_path.is_none() {
                return Err(Error::data(format!(
                    "anomalous sample {} has no mask_path",
                    r.id
                )));
            }
        }
        Ok(())
    }
}
