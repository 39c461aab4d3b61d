//! Fixed-interval keyframe selection and batch export.
//!
//! The k-th keyframe is source frame `k · n_interval` and there are
//! `m = ⌊n_total / n_interval⌋` of them, so the first keyframe is frame `n_interval`,
//! not frame 1 (frame 1 is selected only when `n_interval == 1`).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio;
use crate::ingest::{Frame, FrameSource, IngestError};

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("frame interval must be at least 1")]
    InvalidInterval,
    #[error("no keyframes: interval {n_interval} exceeds frame count {n_total}")]
    EmptySelection { n_total: usize, n_interval: usize },
    #[error("plan index {index} exceeds source frame count {n_total}")]
    PlanMismatch { index: usize, n_total: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("failed to write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframePlan {
    n_total: usize,
    n_interval: usize,
    indices: Vec<usize>,
}

impl KeyframePlan {
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_interval(&self) -> usize {
        self.n_interval
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// 1-based source indices, strictly increasing.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

pub fn plan_keyframes(n_total: usize, n_interval: usize) -> Result<KeyframePlan, KeyframeError> {
    if n_interval < 1 {
        return Err(KeyframeError::InvalidInterval);
    }
    let m = n_total / n_interval;
    if m == 0 {
        return Err(KeyframeError::EmptySelection {
            n_total,
            n_interval,
        });
    }
    Ok(KeyframePlan {
        n_total,
        n_interval,
        indices: (1..=m).map(|k| k * n_interval).collect(),
    })
}

/// File name for a keyframe, keyed by its source index.
pub fn keyframe_file_name(index: usize) -> String {
    format!("kf_{index:06}.png")
}

pub(crate) fn write_keyframe(frame: &Frame, dir: &Path) -> Result<PathBuf, KeyframeError> {
    let path = dir.join(keyframe_file_name(frame.index()));
    imageio::write_rgb_png(&path, &frame.to_rgb_image()).map_err(|e| KeyframeError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(path)
}

/// Decodes every planned keyframe and writes it to `dir` as `kf_<index>.png`.
/// Returns the number of files written.
pub fn save_keyframes(
    src: &dyn FrameSource,
    plan: &KeyframePlan,
    dir: &Path,
) -> Result<usize, KeyframeError> {
    let n_total = src.n_total();
    if let Some(&index) = plan.indices().iter().find(|&&i| i > n_total) {
        return Err(KeyframeError::PlanMismatch { index, n_total });
    }
    std::fs::create_dir_all(dir).map_err(|e| KeyframeError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    plan.indices()
        .par_iter()
        .map(|&i| write_keyframe(&src.read_frame(i)?, dir).map(|_| ()))
        .collect::<Result<Vec<()>, _>>()?;
    Ok(plan.m())
}
