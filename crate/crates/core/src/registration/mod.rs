//! Feature-based registration of adjacent unwrapped strips.
//!
//! Detection and motion estimation are strategies selected by name (see [`detectors`] and
//! [`motion_models`]); the built-ins are `sift` and `translation`.

pub mod estimate;
pub mod matching;
pub mod sift;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;
use crate::unwrap::UnwrappedFrame;

pub use estimate::{chain_alignments, estimate_alignment, resolve_fallbacks, RansacParams};
pub use matching::{match_features, MatchPair};
pub use sift::{Sift, SiftParams};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("strip {width}x{height} with {valid} valid pixels is too small for detection")]
    TooSmall { width: u32, height: u32, valid: usize },
    #[error("{pairs} pairwise alignments cannot chain {strips} strips")]
    LengthMismatch { pairs: usize, strips: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    /// Dominant gradient direction in radians, `[0, 2π)`, measured from +x towards +y.
    pub orientation: f32,
    pub response: f32,
}

/// Unit-length 128-bin gradient histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; sift::DESCRIPTOR_LEN]);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Translation between strips, in pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    Estimated,
    Fallback,
}

/// Offset mapping strip `k+1` into strip `k` coordinates: `p_k = p_{k+1} + (dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub dx: f64,
    pub dy: f64,
    pub inlier_count: usize,
    pub match_count: usize,
    pub rms_residual: f64,
    pub status: AlignmentStatus,
}

pub trait FeatureDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, strip: &UnwrappedFrame) -> Result<Features, RegistrationError>;
}

pub trait MotionEstimator: Send + Sync {
    fn name(&self) -> &str;

    /// Estimates the alignment of pair number `pair` (0-based), falling back to `nominal`.
    fn estimate(
        &self,
        matches: &[MatchPair],
        kps_a: &[Keypoint],
        kps_b: &[Keypoint],
        pair: usize,
        nominal: Offset,
    ) -> Alignment;
}

/// Registration settings shared by every detector and motion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    pub detector: String,
    pub model: String,
    pub ratio: f32,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub iterations: usize,
    pub seed: u64,
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma: f32,
    pub contrast_threshold: f32,
    pub edge_threshold: f32,
    pub max_features: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        let sift = SiftParams::default();
        let ransac = RansacParams::default();
        Self {
            detector: "sift".into(),
            model: "translation".into(),
            ratio: 0.75,
            inlier_threshold: ransac.inlier_threshold,
            min_inliers: ransac.min_inliers,
            iterations: ransac.iterations,
            seed: ransac.seed,
            octaves: sift.octaves,
            scales_per_octave: sift.scales_per_octave,
            sigma: sift.sigma,
            contrast_threshold: sift.contrast_threshold,
            edge_threshold: sift.edge_threshold,
            max_features: 2000,
        }
    }
}

impl RegistrationParams {
    pub fn ransac(&self) -> RansacParams {
        RansacParams {
            inlier_threshold: self.inlier_threshold,
            min_inliers: self.min_inliers,
            iterations: self.iterations,
            seed: self.seed,
        }
    }
}

/// RANSAC over a pure 2-D translation.
#[derive(Debug, Clone)]
pub struct TranslationRansac {
    params: RansacParams,
}

impl TranslationRansac {
    pub fn new(params: RansacParams) -> Self {
        Self { params }
    }
}

impl MotionEstimator for TranslationRansac {
    fn name(&self) -> &str {
        "translation"
    }

    fn estimate(
        &self,
        matches: &[MatchPair],
        kps_a: &[Keypoint],
        kps_b: &[Keypoint],
        pair: usize,
        nominal: Offset,
    ) -> Alignment {
        let params = RansacParams {
            seed: self
                .params
                .seed
                .wrapping_add((pair as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            ..self.params
        };
        estimate_alignment(matches, kps_a, kps_b, &params, nominal)
    }
}

pub fn detectors() -> Registry<dyn FeatureDetector, RegistrationParams> {
    let mut reg: Registry<dyn FeatureDetector, RegistrationParams> = Registry::new("feature detector");
    reg.register("sift", |p: &RegistrationParams| Box::new(Sift::new(p.into())));
    reg
}

pub fn motion_models() -> Registry<dyn MotionEstimator, RegistrationParams> {
    let mut reg: Registry<dyn MotionEstimator, RegistrationParams> = Registry::new("motion model");
    reg.register("translation", |p: &RegistrationParams| {
        Box::new(TranslationRansac::new(p.ransac()))
    });
    reg
}

/// Result of registering strip `k+1` against strip `k`.
#[derive(Debug, Clone)]
pub struct PairRegistration {
    pub matches: Vec<MatchPair>,
    pub alignment: Alignment,
}

pub fn register_pair(
    a: &Features,
    b: &Features,
    ratio: f32,
    estimator: &dyn MotionEstimator,
    pair: usize,
    nominal: Offset,
) -> PairRegistration {
    let matches = match_features(&a.descriptors, &b.descriptors, ratio);
    let alignment = estimator.estimate(&matches, &a.keypoints, &b.keypoints, pair, nominal);
    PairRegistration { matches, alignment }
}
