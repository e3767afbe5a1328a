use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::DataError;
use crate::catalog::{Label, Location};

pub const DATASET_HEADER: &str = "#MLOC-DS v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Conventional endoscopy.
    Ce,
    /// Wireless capsule endoscopy.
    Wce,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Ce => "CE",
            Modality::Wce => "WCE",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CE" => Ok(Modality::Ce),
            "WCE" => Ok(Modality::Wce),
            other => Err(format!("unknown modality {other:?} (expected CE or WCE)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Support,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Support => "support",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "support" => Ok(Split::Support),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split {other:?} (expected support or eval)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    /// As written in the manifest; relative paths resolve against the manifest's directory.
    pub path: String,
    /// Index 0 marks an item from outside the catalog (ground truth `Other`).
    pub label: Label,
    pub modality: Modality,
    pub split: Split,
}

/// Dataset listing: `id,path,anatomical_index,modality,split` per line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self, DataError> {
        let err = |line: usize, message: String| DataError::Manifest { line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == DATASET_HEADER => {}
            _ => return Err(err(1, format!("expected header {DATASET_HEADER:?}"))),
        }
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in lines {
            let n = i + 1;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(n, format!("expected 5 fields, found {}", f.len())));
            }
            if f[0].is_empty() || f[1].is_empty() {
                return Err(err(n, "empty id or path".into()));
            }
            let index: u32 = f[2]
                .parse()
                .map_err(|_| err(n, format!("bad anatomical index {:?}", f[2])))?;
            let label = Label::from_index(index).map_err(|e| err(n, e.to_string()))?;
            let modality = f[3].parse().map_err(|e| err(n, e))?;
            let split: Split = f[4].parse().map_err(|e| err(n, e))?;
            if split == Split::Support && label.is_other() {
                return Err(err(n, "support items need an anatomical index 1..=10".into()));
            }
            if !ids.insert(f[0].to_string()) {
                return Err(err(n, format!("duplicate id {:?}", f[0])));
            }
            records.push(Record {
                id: f[0].to_string(),
                path: f[1].to_string(),
                label,
                modality,
                split,
            });
        }
        Ok(Self {
            records,
            root: root.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{DATASET_HEADER}\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id,
                r.path,
                r.label.index(),
                r.modality,
                r.split
            ));
        }
        s
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Support records, optionally restricted to one modality.
    pub fn support(&self, modality: Option<Modality>) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| r.split == Split::Support && modality.is_none_or(|m| r.modality == m))
            .collect()
    }

    /// Distinct support locations for `modality`, in index order.
    pub fn support_classes(&self, modality: Option<Modality>) -> Vec<Location> {
        let mut v: Vec<Location> = self
            .support(modality)
            .iter()
            .filter_map(|r| r.label.location())
            .collect();
        v.sort();
        v.dedup();
        v
    }
}
