//! End-to-end run: ingest → keyframes → unwrap → registration → compose → output.
//!
//! Artifacts written to `output_dir`:
//!
//! | file | content |
//! |------|---------|
//! | `panorama.png` | composite, pipe axis along the width |
//! | `coverage.png` | contributing strips per pixel × 64 |
//! | `keyframes/kf_NNNNNN.png` | decoded keyframes (when `save_keyframes`) |
//! | `alignments.csv` | per-pair offsets, inliers, residual, status |
//! | `report.json` | [`RunReport`] |
//! | `debug/matches_NNN.png` | match overlays (when `debug`) |

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{accumulate_panorama_with, blenders, Panorama};
use crate::config::{ConfigError, PipelineConfig};
use crate::imageio;
use crate::ingest::{open_source_with, source_backends, Frame, SourceInfo};
use crate::keyframe::{plan_keyframes, write_keyframe, KeyframeError};
use crate::registration::{
    chain_alignments, detectors, motion_models, register_pair, resolve_fallbacks, Alignment,
    AlignmentStatus, Features, Keypoint, MatchPair, Offset,
};
use crate::unwrap::{build_grid, unwrap_frame, AnnulusGeometry, UnwrapError, UnwrapSpec, UnwrappedFrame};

/// Pairs on either side consulted when replacing a failed registration.
const FALLBACK_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Keyframes,
    Unwrap,
    Registration,
    Compose,
    Output,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Keyframes,
        Stage::Unwrap,
        Stage::Registration,
        Stage::Compose,
        Stage::Output,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Keyframes => "keyframes",
            Stage::Unwrap => "unwrap",
            Stage::Registration => "registration",
            Stage::Compose => "compose",
            Stage::Output => "output",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no keyframes: interval {n_interval} exceeds frame count {n_total}")]
    EmptySelection { n_total: usize, n_interval: usize },
    #[error("{stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("cancelled during {stage}")]
    Cancelled { stage: Stage },
}

impl PipelineError {
    fn at(stage: Stage, err: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: err.to_string(),
        }
    }

    /// Stage the failure is attributed to; `None` for configuration errors.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Config(_) => None,
            PipelineError::EmptySelection { .. } => Some(Stage::Keyframes),
            PipelineError::Stage { stage, .. } | PipelineError::Cancelled { stage } => Some(*stage),
        }
    }

    pub fn is_cancelled(&self) -> bool {
        matches!(self, PipelineError::Cancelled { .. })
    }
}

/// Receives progress from a running pipeline and may request cancellation.
pub trait PipelineObserver: Send + Sync {
    fn stage_started(&self, _stage: Stage) {}

    /// Fraction of `stage` completed, in `[0, 1]` and non-decreasing within a stage.
    fn progress(&self, _stage: Stage, _fraction: f64) {}

    fn is_cancelled(&self) -> bool {
        false
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl PipelineObserver for Silent {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub pair: usize,
    /// Source frame index of strip `k`.
    pub from_frame: usize,
    /// Source frame index of strip `k+1`.
    pub to_frame: usize,
    pub dx: f64,
    pub dy: f64,
    pub inliers: usize,
    pub matches: usize,
    pub residual: f64,
    pub status: AlignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub source: SourceInfo,
    pub n_total: usize,
    pub n_interval: usize,
    pub m: usize,
    pub keyframe_indices: Vec<usize>,
    pub stage_seconds: Vec<StageTiming>,
    pub total_seconds: f64,
    pub alignments: Vec<AlignmentRow>,
    /// Cumulative strip offsets relative to the first strip.
    pub offsets: Vec<Offset>,
    /// Saved panorama size (axial × angular).
    pub panorama_width: u32,
    pub panorama_height: u32,
    pub warnings: Vec<String>,
    pub output_dir: PathBuf,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn stage_time(&self, stage: Stage) -> f64 {
        self.stage_seconds
            .iter()
            .filter(|t| t.stage == stage)
            .map(|t| t.seconds)
            .sum()
    }

    pub fn alignments_csv(&self) -> String {
        let mut out = String::from("pair,from_frame,to_frame,dx,dy,inliers,matches,residual,status\n");
        for r in &self.alignments {
            let status = match r.status {
                AlignmentStatus::Estimated => "estimated",
                AlignmentStatus::Fallback => "fallback",
            };
            out.push_str(&format!(
                "{},{},{},{:.3},{:.3},{},{},{:.4},{}\n",
                r.pair, r.from_frame, r.to_frame, r.dx, r.dy, r.inliers, r.matches, r.residual, status
            ));
        }
        out
    }
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn add(&mut self, stage: Stage, since: Instant) {
        let seconds = since.elapsed().as_secs_f64();
        match self.timings.iter_mut().find(|t| t.stage == stage) {
            Some(t) => t.seconds += seconds,
            None => self.timings.push(StageTiming { stage, seconds }),
        }
    }
}

fn check_cancel(observer: &dyn PipelineObserver, stage: Stage) -> Result<(), PipelineError> {
    if observer.is_cancelled() {
        Err(PipelineError::Cancelled { stage })
    } else {
        Ok(())
    }
}

/// Single-frame unwrap for interactive preview.
pub fn preview_unwrap(
    frame: &Frame,
    geometry: &AnnulusGeometry,
    spec: &UnwrapSpec,
) -> Result<UnwrappedFrame, UnwrapError> {
    let grid = build_grid(geometry, spec, frame.width(), frame.height())?;
    unwrap_frame(frame, &grid)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<(Panorama, RunReport), PipelineError> {
    run_pipeline_observed(config, &Silent)
}

pub fn run_pipeline_observed(
    config: &PipelineConfig,
    observer: &dyn PipelineObserver,
) -> Result<(Panorama, RunReport), PipelineError> {
    let started = Instant::now();
    let warnings = config.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut clock = Clock { timings: Vec::new() };
    let out_dir = config.output_dir.clone();

    // Ingest
    observer.stage_started(Stage::Ingest);
    let t = Instant::now();
    let source = open_source_with(&source_backends(), &config.source, config.source_backend.as_deref())
        .map_err(|e| PipelineError::at(Stage::Ingest, e))?;
    let info = source.info().clone();
    log::info!(
        "source {} ({} frames, {}x{}, {})",
        info.uri, info.n_total, info.width, info.height, info.backend
    );
    clock.add(Stage::Ingest, t);
    observer.progress(Stage::Ingest, 1.0);
    check_cancel(observer, Stage::Ingest)?;

    // Keyframes and unwrap, streamed in small batches so only a few decoded frames are live.
    let plan = plan_keyframes(info.n_total, config.n_interval).map_err(|e| match e {
        KeyframeError::EmptySelection { n_total, n_interval } => {
            PipelineError::EmptySelection { n_total, n_interval }
        }
        other => PipelineError::at(Stage::Keyframes, other),
    })?;
    let m = plan.m();
    let grid = build_grid(&config.geometry, &config.unwrap, info.width, info.height)
        .map_err(|e| PipelineError::at(Stage::Unwrap, e))?;
    let kf_dir = out_dir.join("keyframes");
    if config.save_keyframes {
        std::fs::create_dir_all(&kf_dir).map_err(|e| PipelineError::at(Stage::Keyframes, e))?;
    }

    observer.stage_started(Stage::Keyframes);
    let batch = rayon::current_num_threads().max(1);
    let mut strips: Vec<UnwrappedFrame> = Vec::with_capacity(m);
    for (done, chunk) in plan.indices().chunks(batch).enumerate() {
        check_cancel(observer, Stage::Keyframes)?;
        let t = Instant::now();
        let frames = chunk
            .par_iter()
            .map(|&i| {
                let f = source.read_frame(i).map_err(|e| PipelineError::at(Stage::Keyframes, e))?;
                if config.save_keyframes {
                    write_keyframe(&f, &kf_dir).map_err(|e| PipelineError::at(Stage::Keyframes, e))?;
                }
                Ok(f)
            })
            .collect::<Result<Vec<Frame>, PipelineError>>()?;
        clock.add(Stage::Keyframes, t);

        let t = Instant::now();
        let unwrapped = frames
            .par_iter()
            .map(|f| unwrap_frame(f, &grid).map_err(|e| PipelineError::at(Stage::Unwrap, e)))
            .collect::<Result<Vec<_>, _>>()?;
        clock.add(Stage::Unwrap, t);
        strips.extend(unwrapped);

        let fraction = ((done + 1) * batch).min(m) as f64 / m as f64;
        observer.progress(Stage::Keyframes, fraction);
        observer.progress(Stage::Unwrap, fraction);
    }
    drop(source);

    // Registration
    observer.stage_started(Stage::Registration);
    check_cancel(observer, Stage::Registration)?;
    let t = Instant::now();
    let params = &config.registration;
    let detector = detectors()
        .create(&params.detector, params)
        .map_err(|e| PipelineError::at(Stage::Registration, e))?;
    let estimator = motion_models()
        .create(&params.model, params)
        .map_err(|e| PipelineError::at(Stage::Registration, e))?;
    let units = (2 * m - 1) as f64;
    let completed = AtomicUsize::new(0);
    let tick = || {
        let n = completed.fetch_add(1, Ordering::Relaxed) + 1;
        observer.progress(Stage::Registration, n as f64 / units);
    };
    let features = strips
        .par_iter()
        .map(|s| {
            if observer.is_cancelled() {
                return Err(PipelineError::Cancelled {
                    stage: Stage::Registration,
                });
            }
            let f = detector
                .detect(s)
                .map_err(|e| PipelineError::at(Stage::Registration, e));
            tick();
            f
        })
        .collect::<Result<Vec<Features>, _>>()?;
    check_cancel(observer, Stage::Registration)?;
    let nominal = Offset {
        dx: 0.0,
        dy: config.nominal_advance,
    };
    let pairs: Vec<_> = (0..m - 1)
        .into_par_iter()
        .map(|k| {
            let r = register_pair(&features[k], &features[k + 1], params.ratio, estimator.as_ref(), k, nominal);
            tick();
            r
        })
        .collect();
    let mut pairwise: Vec<Alignment> = pairs.iter().map(|p| p.alignment).collect();
    for (k, a) in pairwise.iter().enumerate() {
        if a.status == AlignmentStatus::Fallback {
            log::warn!(
                "pair {k} ({} -> {}): {} matches, {} inliers; using fallback offset",
                strips[k].source_index(),
                strips[k + 1].source_index(),
                a.match_count,
                a.inlier_count
            );
        }
    }
    resolve_fallbacks(&mut pairwise, FALLBACK_WINDOW);
    let offsets =
        chain_alignments(&pairwise, m).map_err(|e| PipelineError::at(Stage::Registration, e))?;
    clock.add(Stage::Registration, t);
    observer.progress(Stage::Registration, 1.0);

    // Compose
    observer.stage_started(Stage::Compose);
    check_cancel(observer, Stage::Compose)?;
    let t = Instant::now();
    let blender = blenders()
        .create(&config.blend.method, &())
        .map_err(|e| PipelineError::at(Stage::Compose, e))?;
    let panorama = accumulate_panorama_with(blender.as_ref(), &strips, &offsets, &config.blend.spec())
        .map_err(|e| PipelineError::at(Stage::Compose, e))?;
    clock.add(Stage::Compose, t);
    observer.progress(Stage::Compose, 1.0);

    // Output
    observer.stage_started(Stage::Output);
    check_cancel(observer, Stage::Output)?;
    let t = Instant::now();
    let io = |e: &dyn fmt::Display| PipelineError::at(Stage::Output, e);
    std::fs::create_dir_all(&out_dir).map_err(|e| io(&e))?;
    let mut artifacts = Vec::new();
    imageio::write_rgb_png(&out_dir.join("panorama.png"), &panorama.to_output_image())
        .map_err(|e| io(&e))?;
    artifacts.push("panorama.png".to_owned());
    imageio::write_gray_png(&out_dir.join("coverage.png"), &panorama.coverage_image())
        .map_err(|e| io(&e))?;
    artifacts.push("coverage.png".to_owned());
    if config.save_keyframes {
        artifacts.extend(
            plan.indices()
                .iter()
                .map(|&i| format!("keyframes/{}", crate::keyframe::keyframe_file_name(i))),
        );
    }
    if config.debug {
        let dbg = out_dir.join("debug");
        std::fs::create_dir_all(&dbg).map_err(|e| io(&e))?;
        for (k, p) in pairs.iter().enumerate() {
            let img = match_overlay(
                &strips[k],
                &strips[k + 1],
                &features[k].keypoints,
                &features[k + 1].keypoints,
                &p.matches,
            );
            let name = format!("debug/matches_{k:03}.png");
            imageio::write_rgb_png(&out_dir.join(&name), &img).map_err(|e| io(&e))?;
            artifacts.push(name);
        }
    }
    artifacts.push("alignments.csv".to_owned());
    artifacts.push("report.json".to_owned());

    let alignments = pairwise
        .iter()
        .enumerate()
        .map(|(k, a)| AlignmentRow {
            pair: k,
            from_frame: strips[k].source_index(),
            to_frame: strips[k + 1].source_index(),
            dx: a.dx,
            dy: a.dy,
            inliers: a.inlier_count,
            matches: a.match_count,
            residual: a.rms_residual,
            status: a.status,
        })
        .collect();
    let (panorama_width, panorama_height) = panorama.output_dimensions();
    let mut report = RunReport {
        source: info,
        n_total: plan.n_total(),
        n_interval: plan.n_interval(),
        m,
        keyframe_indices: plan.indices().to_vec(),
        stage_seconds: Vec::new(),
        total_seconds: 0.0,
        alignments,
        offsets,
        panorama_width,
        panorama_height,
        warnings,
        output_dir: out_dir.clone(),
        artifacts,
    };
    std::fs::write(out_dir.join("alignments.csv"), report.alignments_csv()).map_err(|e| io(&e))?;
    clock.add(Stage::Output, t);
    report.stage_seconds = Stage::ALL
        .iter()
        .map(|&stage| StageTiming {
            stage,
            seconds: clock
                .timings
                .iter()
                .find(|x| x.stage == stage)
                .map_or(0.0, |x| x.seconds),
        })
        .collect();
    report.total_seconds = started.elapsed().as_secs_f64();
    write_report(&out_dir.join("report.json"), &report).map_err(|e| io(&e))?;
    observer.progress(Stage::Output, 1.0);
    Ok((panorama, report))
}

fn write_report(path: &Path, report: &RunReport) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    std::fs::write(path, json)
}

/// Strip `a` above strip `b` with a line per match.
pub fn match_overlay(
    a: &UnwrappedFrame,
    b: &UnwrappedFrame,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    matches: &[MatchPair],
) -> RgbImage {
    let w = a.width().max(b.width());
    let mut img = RgbImage::new(w, a.height() + b.height());
    image::imageops::replace(&mut img, &a.to_rgb_image(), 0, 0);
    image::imageops::replace(&mut img, &b.to_rgb_image(), 0, a.height() as i64);
    for mt in matches {
        let pa = &kps_a[mt.index_a];
        let pb = &kps_b[mt.index_b];
        draw_line(
            &mut img,
            (pa.x as f64, pa.y as f64),
            (pb.x as f64, pb.y as f64 + a.height() as f64),
            Rgb([255, 220, 0]),
        );
    }
    img
}

fn draw_line(img: &mut RgbImage, p: (f64, f64), q: (f64, f64), color: Rgb<u8>) {
    let steps = (q.0 - p.0).abs().max((q.1 - p.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (p.0 + t * (q.0 - p.0)).round();
        let y = (p.1 + t * (q.1 - p.1)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}
