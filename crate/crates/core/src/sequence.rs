//! Video-level localization: sliding windows, per-window label mode, and
//! repair of anatomically impossible orderings.

use std::io::Write;

use rayon::prelude::*;

use crate::catalog::{AnatomicalCatalog, Label};
use crate::embedder::EmbeddingVector;
use crate::inference::{classify_frame, FramePrediction, InferenceError, SupportIndex};

pub const VIDEO_HEADER_PREFIX: &str = "#MLOC-VID v1 fps=";
/// Frame rate of conventional endoscopy video.
pub const CE_FPS: usize = 25;
/// Frame rate of capsule endoscopy video.
pub const WCE_FPS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error("video manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("frame {id:?} could not be resolved: {reason}")]
    Unresolved { id: String, reason: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Ordered frames of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoManifest {
    pub fps: usize,
    /// `(frame_id, image path or embedding id)` in temporal order.
    pub frames: Vec<(String, String)>,
}

impl VideoManifest {
    pub fn parse(text: &str) -> Result<Self, SequenceError> {
        let err = |line, message: &str| SequenceError::Manifest {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines();
        let fps = lines
            .next()
            .and_then(|h| h.trim_end().strip_prefix(VIDEO_HEADER_PREFIX))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| err(1, "expected header `#MLOC-VID v1 fps=<n>` with n >= 1"))?;
        let mut frames = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (id, reference) = line
                .split_once(',')
                .ok_or_else(|| err(i + 2, "expected `frame_id,path_or_embedding_id`"))?;
            if id.is_empty() || reference.is_empty() || reference.contains(',') {
                return Err(err(i + 2, "malformed frame record"));
            }
            if !seen.insert(id.to_string()) {
                return Err(err(i + 2, "duplicate frame id"));
            }
            frames.push((id.to_string(), reference.to_string()));
        }
        if frames.is_empty() {
            return Err(err(2, "video has no frames"));
        }
        Ok(Self { fps, frames })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{VIDEO_HEADER_PREFIX}{}\n", self.fps);
        for (id, r) in &self.frames {
            s.push_str(&format!("{id},{r}\n"));
        }
        s
    }
}

/// Frames advanced between consecutive windows: half a second, at least one.
pub fn hop(fps: usize) -> usize {
    (fps / 2).max(1)
}

/// Inclusive `(start, end)` frame ranges of one-second windows with a
/// half-second hop. The last window is truncated at the final frame.
pub fn window_frames(n_frames: usize, fps: usize) -> Vec<(usize, usize)> {
    let len = fps.max(1);
    let step = hop(fps);
    let mut out = Vec::new();
    if n_frames == 0 {
        return out;
    }
    let mut start = 0;
    loop {
        let end = (start + len).min(n_frames) - 1;
        out.push((start, end));
        if end == n_frames - 1 {
            return out;
        }
        start += step;
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Most frequent label in a window, `Other` included. Ties prefer a
/// location over `Other`, then the location whose frames have the smallest
/// mean winning median, then the smaller location index.
pub fn window_mode(frames: &[FramePrediction]) -> Label {
    let mut counts: Vec<(Label, usize)> = Vec::new();
    for f in frames {
        match counts.iter_mut().find(|(l, _)| *l == f.label) {
            Some((_, n)) => *n += 1,
            None => counts.push((f.label, 1)),
        }
    }
    let top = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    let mut tied: Vec<(Label, f64)> = counts
        .iter()
        .filter(|(l, n)| *n == top && !l.is_other())
        .map(|(l, _)| {
            let m = mean(frames.iter().filter(|f| f.label == *l).map(|f| f.winning_median));
            (*l, m)
        })
        .collect();
    if tied.is_empty() {
        return Label::Other;
    }
    tied.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.index().cmp(&b.0.index())));
    tied[0].0
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub start: usize,
    pub end: usize,
    pub label: Label,
    /// Mean over the window's frames of their median distance to `label`'s
    /// support class (the winning median for `Other` windows).
    pub group_avg_distance: f64,
}

fn group_avg_distance(frames: &[FramePrediction], label: Label) -> f64 {
    mean(frames.iter().map(|f| match label.location().and_then(|l| f.median_for(l)) {
        Some(m) => m,
        None => f.winning_median,
    }))
}

/// Windows the frame predictions and labels each window by its mode.
pub fn label_windows(frames: &[FramePrediction], fps: usize) -> Vec<WindowPrediction> {
    window_frames(frames.len(), fps)
        .into_iter()
        .map(|(start, end)| {
            let slice = &frames[start..=end];
            let label = window_mode(slice);
            WindowPrediction {
                start,
                end,
                label,
                group_avg_distance: group_avg_distance(slice, label),
            }
        })
        .collect()
}

/// Relabels windows to `Other` until the non-`Other` labels are
/// non-decreasing in anatomical order.
///
/// Each pass finds the first adjacent inversion among non-`Other` windows and
/// demotes whichever of the two has the larger group distance (the later one
/// on a tie). Every pass removes one non-`Other` label, so the loop ends.
pub fn enforce_anatomical_order(
    windows: &[WindowPrediction],
    catalog: &AnatomicalCatalog,
) -> Vec<WindowPrediction> {
    let mut out = windows.to_vec();
    let rank = |w: &WindowPrediction| w.label.location().and_then(|l| catalog.rank(l));
    loop {
        let ranked: Vec<(usize, usize)> = out
            .iter()
            .enumerate()
            .filter_map(|(i, w)| rank(w).map(|r| (i, r)))
            .collect();
        let Some(pair) = ranked.windows(2).find(|p| p[0].1 > p[1].1) else {
            return out;
        };
        let (early, late) = (pair[0].0, pair[1].0);
        let victim = if out[early].group_avg_distance > out[late].group_avg_distance {
            early
        } else {
            late
        };
        out[victim].label = Label::Other;
    }
}

/// Per-frame predictions plus raw and repaired window labels for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub frames: Vec<(String, FramePrediction)>,
    pub raw_windows: Vec<WindowPrediction>,
    pub windows: Vec<WindowPrediction>,
}

/// Full video pipeline: resolve each frame to an embedding, classify frames,
/// window, take modes, repair order.
///
/// `resolve` receives `(frame_id, reference)` and may run concurrently.
pub fn classify_video<F>(
    manifest: &VideoManifest,
    index: &SupportIndex,
    threshold: f64,
    catalog: &AnatomicalCatalog,
    resolve: F,
) -> Result<VideoPrediction, SequenceError>
where
    F: Fn(&str, &str) -> Result<EmbeddingVector, String> + Sync,
{
    index.validate()?;
    let frames = manifest
        .frames
        .par_iter()
        .map(|(id, reference)| {
            let e = resolve(id, reference).map_err(|reason| SequenceError::Unresolved {
                id: id.clone(),
                reason,
            })?;
            Ok((id.clone(), classify_frame(&e, index, threshold)?))
        })
        .collect::<Result<Vec<_>, SequenceError>>()?;
    let preds: Vec<FramePrediction> = frames.iter().map(|(_, p)| p.clone()).collect();
    let raw_windows = label_windows(&preds, manifest.fps);
    let windows = enforce_anatomical_order(&raw_windows, catalog);
    Ok(VideoPrediction {
        frames,
        raw_windows,
        windows,
    })
}

/// `window_start,window_end,label,group_avg_distance` lines under a `#` header.
pub fn write_windows<W: Write>(mut out: W, windows: &[WindowPrediction]) -> std::io::Result<()> {
    writeln!(out, "#window_start,window_end,label,group_avg_distance")?;
    for w in windows {
        writeln!(out, "{},{},{},{}", w.start, w.end, w.label.name(), w.group_avg_distance)?;
    }
    Ok(())
}

pub fn read_windows(text: &str) -> Result<Vec<WindowPrediction>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| format!("line {}: {what}", i + 1);
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            Ok(WindowPrediction {
                start: f[0].parse().map_err(|_| bad("bad start"))?,
                end: f[1].parse().map_err(|_| bad("bad end"))?,
                label: f[2].parse().map_err(|_| bad("bad label"))?,
                group_avg_distance: f[3].parse().map_err(|_| bad("bad distance"))?,
            })
        })
        .collect()
}
