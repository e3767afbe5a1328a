//! Single-frame open-set classification against a support index.
//!
//! A query is compared with every support embedding; each class is scored by
//! the median of its mapped distances and the smallest median wins, unless
//! every median exceeds the threshold, in which case the frame is `Other`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::catalog::{Label, Location};
use crate::embedder::EmbeddingVector;
use crate::siamese::mapped_distance;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("support index is empty")]
    EmptyIndex,
    #[error("support class {0} has no members")]
    EmptyClass(Location),
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
}

/// Support embeddings grouped by location, iterated in index order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupportIndex {
    classes: BTreeMap<Location, Vec<EmbeddingVector>>,
}

impl SupportIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: Location, embedding: EmbeddingVector) {
        self.classes.entry(class).or_default().push(embedding);
    }

    pub fn from_members<I: IntoIterator<Item = (Location, EmbeddingVector)>>(members: I) -> Self {
        let mut index = Self::new();
        for (c, e) in members {
            index.insert(c, e);
        }
        index
    }

    pub fn classes(&self) -> impl Iterator<Item = (Location, &[EmbeddingVector])> {
        self.classes.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    pub fn locations(&self) -> Vec<Location> {
        self.classes.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.classes.is_empty() {
            return Err(InferenceError::EmptyIndex);
        }
        match self.classes.iter().find(|(_, v)| v.is_empty()) {
            Some((c, _)) => Err(InferenceError::EmptyClass(*c)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub label: Label,
    /// Median mapped distance per support class, in index order.
    pub per_class_median: Vec<(Location, f64)>,
    /// Smallest per-class median.
    pub winning_median: f64,
}

impl FramePrediction {
    pub fn median_for(&self, class: Location) -> Option<f64> {
        self.per_class_median
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, m)| *m)
    }
}

/// Median of `values`; even counts average the two central order statistics.
/// Returns `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn classify_frame(
    query: &EmbeddingVector,
    index: &SupportIndex,
    threshold: f64,
) -> Result<FramePrediction, InferenceError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(InferenceError::Threshold(threshold));
    }
    index.validate()?;
    let per_class_median: Vec<(Location, f64)> = index
        .classes()
        .map(|(c, members)| {
            let d: Vec<f64> = members.iter().map(|m| mapped_distance(query, m)).collect();
            (c, median(&d).expect("validated nonempty"))
        })
        .collect();
    // strict `<` keeps the smaller location index on ties
    let (best, winning_median) = per_class_median
        .iter()
        .skip(1)
        .fold(per_class_median[0], |acc, &cur| if cur.1 < acc.1 { cur } else { acc });
    let label = if winning_median <= threshold {
        Label::Location(best)
    } else {
        Label::Other
    };
    Ok(FramePrediction {
        label,
        per_class_median,
        winning_median,
    })
}

/// Largest median distance of a support member to the rest of its own
/// class. A threshold at this value accepts every support item when it is
/// held out; `None` if no class has two members.
pub fn leave_one_out_threshold(index: &SupportIndex) -> Option<f64> {
    index
        .classes()
        .filter(|(_, m)| m.len() >= 2)
        .flat_map(|(_, members)| {
            (0..members.len()).map(move |i| {
                let d: Vec<f64> = members
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, m)| mapped_distance(&members[i], m))
                    .collect();
                median(&d).expect("at least one other member")
            })
        })
        .max_by(f64::total_cmp)
}

pub fn batch_classify(
    queries: &[EmbeddingVector],
    index: &SupportIndex,
    threshold: f64,
) -> Result<Vec<FramePrediction>, InferenceError> {
    queries
        .iter()
        .map(|q| classify_frame(q, index, threshold))
        .collect()
}

/// Writes `frame_id,label,winning_median,<median per class>` lines preceded by
/// a `#` header naming the class columns (support classes in index order).
pub fn write_frame_dump<W: Write>(
    mut out: W,
    locations: &[Location],
    rows: &[(String, FramePrediction)],
) -> std::io::Result<()> {
    write!(out, "#frame_id,label,winning_median")?;
    for l in locations {
        write!(out, ",{}", l.name())?;
    }
    writeln!(out)?;
    for (id, p) in rows {
        write!(out, "{id},{},{}", p.label.name(), p.winning_median)?;
        for &l in locations {
            match p.median_for(l) {
                Some(m) => write!(out, ",{m}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// A parsed frame-dump row.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub frame_id: String,
    pub label: Label,
    pub winning_median: f64,
    pub medians: Vec<(Location, f64)>,
}

/// Parses the output of [`write_frame_dump`].
pub fn read_frame_dump(text: &str) -> Result<Vec<DumpRow>, String> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix('#'))
        .ok_or("missing frame dump header")?;
    let columns: Vec<Location> = header
        .split(',')
        .skip(3)
        .map(|name| {
            name.parse::<Label>()
                .ok()
                .and_then(Label::location)
                .ok_or(format!("bad class column {name:?}"))
        })
        .collect::<Result<_, _>>()?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 + columns.len() {
                return Err(format!("line {}: expected {} fields", i + 2, 3 + columns.len()));
            }
            let label = f[1].parse::<Label>().map_err(|e| format!("line {}: {e}", i + 2))?;
            let winning_median = f[2].parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))?;
            let medians = columns
                .iter()
                .zip(&f[3..])
                .filter(|(_, v)| !v.is_empty())
                .map(|(&c, v)| v.parse::<f64>().map(|m| (c, m)))
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 2))?;
            Ok(DumpRow {
                frame_id: f[0].to_string(),
                label,
                winning_median,
                medians,
            })
        })
        .collect()
}
