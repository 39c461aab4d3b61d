//! Reconstruction of pipe inner walls from annular endoscope footage.
//!
//! The pipeline turns a sequence of annular frames into one planar panorama:
//!
//! 1. **Ingest** – uniform, 1-based random access over image directories and video files.
//! 2. **Keyframe** – fixed-interval selection (`F'_k = F_{k·N}`, `M = ⌊N_total / N⌋`).
//! 3. **Unwrap** – inverse polar mapping of the annulus into a `W×H` strip with bilinear sampling.
//! 4. **Registration** – scale-invariant features, ratio-tested nearest-neighbour matching and
//!    RANSAC translation estimation between adjacent strips.
//! 5. **Compose** – placement at chained offsets with distance-weighted linear seam blending.
//!
//! Interchangeable pieces (frame-source backends, feature detectors, motion models and blend
//! rules) live behind traits and are selected by name through [`registry::Registry`].

pub mod compose;
pub mod config;
pub mod imageio;
pub mod ingest;
pub mod keyframe;
pub mod pipeline;
pub mod registration;
pub mod registry;
pub mod synth;
pub mod unwrap;

pub use compose::{BlendSpec, Panorama};
pub use config::PipelineConfig;
pub use ingest::{open_source, Frame, FrameSource, SourceInfo};
pub use keyframe::{plan_keyframes, KeyframePlan};
pub use pipeline::{preview_unwrap, run_pipeline, PipelineError, RunReport, Stage};
pub use registration::{Alignment, AlignmentStatus};
pub use unwrap::{AnnulusGeometry, SampleGrid, UnwrapSpec, UnwrappedFrame};
