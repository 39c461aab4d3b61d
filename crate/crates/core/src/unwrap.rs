//! Polar unwrapping of annular frames into rectangular strips.
//!
//! Output pixel `(u, v)` of a `w×h` strip samples the source at
//!
//! ```text
//! θ = u / w · 2π
//! r = r_min + v / h · (r_max − r_min)
//! x = r·cos θ + cx,   y = r·sin θ + cy
//! ```
//!
//! with `x` the column (rightward) and `y` the row (downward), so θ grows clockwise on
//! screen. The formulas are applied at integer `(u, v)` without a half-pixel shift.
//! A [`SampleGrid`] caches the source coordinates for one geometry and frame size so the
//! trigonometry runs once per configuration rather than once per keyframe.

use std::f64::consts::TAU;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Frame;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnwrapError {
    #[error("invalid annulus geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid unwrap size {w}x{h}: both sides must be at least 2")]
    InvalidSpec { w: u32, h: u32 },
    #[error("annulus lies entirely outside the {frame_w}x{frame_h} frame")]
    GeometryOutOfFrame { frame_w: u32, frame_h: u32 },
    #[error("grid built for {grid_w}x{grid_h} frames, got {frame_w}x{frame_h}")]
    DimensionMismatch {
        grid_w: u32,
        grid_h: u32,
        frame_w: u32,
        frame_h: u32,
    },
    #[error("invalid strip raster: {0}")]
    InvalidStrip(String),
}

/// Annulus center (`cx` column, `cy` row) and radial band in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusGeometry {
    pub cx: f64,
    pub cy: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for AnnulusGeometry {
    fn default() -> Self {
        Self {
            cx: 960.0,
            cy: 540.0,
            r_min: 150.0,
            r_max: 500.0,
        }
    }
}

impl AnnulusGeometry {
    pub fn validate(&self) -> Result<(), UnwrapError> {
        let finite = [self.cx, self.cy, self.r_min, self.r_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(UnwrapError::InvalidGeometry("non-finite value".into()));
        }
        if self.r_min <= 0.0 {
            return Err(UnwrapError::InvalidGeometry(format!(
                "r_min must be positive, got {}",
                self.r_min
            )));
        }
        if self.r_min >= self.r_max {
            return Err(UnwrapError::InvalidGeometry(format!(
                "r_min ({}) must be less than r_max ({})",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }
}

/// Strip size: `w` columns along the angle, `h` rows along the radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnwrapSpec {
    pub w: u32,
    pub h: u32,
}

impl Default for UnwrapSpec {
    fn default() -> Self {
        Self { w: 500, h: 250 }
    }
}

impl UnwrapSpec {
    pub fn validate(&self) -> Result<(), UnwrapError> {
        if self.w < 2 || self.h < 2 {
            return Err(UnwrapError::InvalidSpec {
                w: self.w,
                h: self.h,
            });
        }
        Ok(())
    }
}

/// Polar angle sampled by strip column `u`.
#[inline]
pub fn column_angle(u: f64, spec: &UnwrapSpec) -> f64 {
    u / spec.w as f64 * TAU
}

/// Radius sampled by strip row `v`.
#[inline]
pub fn row_radius(v: f64, geom: &AnnulusGeometry, spec: &UnwrapSpec) -> f64 {
    geom.r_min + v / spec.h as f64 * (geom.r_max - geom.r_min)
}

/// Source coordinate `(x, y)` sampled by strip pixel `(u, v)`.
///
/// Accepts values outside `[0, w) × [0, h)`; the formulas extend naturally.
#[inline]
pub fn forward_map(u: f64, v: f64, geom: &AnnulusGeometry, spec: &UnwrapSpec) -> (f64, f64) {
    let theta = column_angle(u, spec);
    let r = row_radius(v, geom, spec);
    (r * theta.cos() + geom.cx, r * theta.sin() + geom.cy)
}

/// Precomputed source coordinates for every strip pixel, row-major over `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    geometry: AnnulusGeometry,
    spec: UnwrapSpec,
    frame_w: u32,
    frame_h: u32,
    coords: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl SampleGrid {
    pub fn geometry(&self) -> &AnnulusGeometry {
        &self.geometry
    }

    pub fn spec(&self) -> &UnwrapSpec {
        &self.spec
    }

    pub fn frame_size(&self) -> (u32, u32) {
        (self.frame_w, self.frame_h)
    }

    pub fn coord(&self, u: u32, v: u32) -> [f64; 2] {
        self.coords[(v * self.spec.w + u) as usize]
    }

    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.valid[(v * self.spec.w + u) as usize]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

pub fn build_grid(
    geom: &AnnulusGeometry,
    spec: &UnwrapSpec,
    frame_w: u32,
    frame_h: u32,
) -> Result<SampleGrid, UnwrapError> {
    geom.validate()?;
    spec.validate()?;
    let (w, h) = (spec.w as usize, spec.h as usize);
    let max_x = frame_w as f64 - 1.0;
    let max_y = frame_h as f64 - 1.0;

    let trig: Vec<(f64, f64)> = (0..w)
        .map(|u| {
            let t = column_angle(u as f64, spec);
            (t.cos(), t.sin())
        })
        .collect();
    let mut coords = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for v in 0..h {
        let r = row_radius(v as f64, geom, spec);
        for &(c, s) in &trig {
            let x = r * c + geom.cx;
            let y = r * s + geom.cy;
            coords.push([x, y]);
            valid.push((0.0..=max_x).contains(&x) && (0.0..=max_y).contains(&y));
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(UnwrapError::GeometryOutOfFrame { frame_w, frame_h });
    }
    Ok(SampleGrid {
        geometry: *geom,
        spec: *spec,
        frame_w,
        frame_h,
        coords,
        valid,
    })
}

/// Bilinear interpolation at `(x, y)`, which must lie in `[0, w−1] × [0, h−1]`.
/// Single-channel frames yield the same value in all three outputs.
#[inline]
pub fn bilinear_sample(frame: &Frame, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let c = frame.channels() as usize;
    let px = frame.pixels();
    let at = |xx: usize, yy: usize, ch: usize| px[(yy * w + xx) * c + ch] as f64;
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let ch = k.min(c - 1);
        let top = at(x0, y0, ch) * (1.0 - fx) + at(x1, y0, ch) * fx;
        let bottom = at(x0, y1, ch) * (1.0 - fx) + at(x1, y1, ch) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Rounds half up and saturates to the 8-bit range.
#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// A `w×h` RGB strip with a per-pixel validity mask.
#[derive(Clone, PartialEq, Eq)]
pub struct UnwrappedFrame {
    source_index: usize,
    w: u32,
    h: u32,
    pixels: Vec<u8>,
    valid: Vec<bool>,
}

impl std::fmt::Debug for UnwrappedFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnwrappedFrame")
            .field("source_index", &self.source_index)
            .field("w", &self.w)
            .field("h", &self.h)
            .finish_non_exhaustive()
    }
}

impl UnwrappedFrame {
    pub fn new(
        source_index: usize,
        w: u32,
        h: u32,
        pixels: Vec<u8>,
        valid: Vec<bool>,
    ) -> Result<Self, UnwrapError> {
        let n = w as usize * h as usize;
        if w == 0 || h == 0 || pixels.len() != n * 3 || valid.len() != n {
            return Err(UnwrapError::InvalidStrip(format!(
                "{w}x{h} strip with {} bytes and {} mask entries",
                pixels.len(),
                valid.len()
            )));
        }
        Ok(Self {
            source_index,
            w,
            h,
            pixels,
            valid,
        })
    }

    /// Fully valid strip from an RGB image.
    pub fn from_rgb(source_index: usize, img: &RgbImage) -> Self {
        let n = (img.width() * img.height()) as usize;
        Self {
            source_index,
            w: img.width(),
            h: img.height(),
            pixels: img.as_raw().clone(),
            valid: vec![true; n],
        }
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }

    pub fn width(&self) -> u32 {
        self.w
    }

    pub fn height(&self) -> u32 {
        self.h
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = (v as usize * self.w as usize + u as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.valid[v as usize * self.w as usize + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.w, self.h, self.pixels.clone()).expect("length checked")
    }

    /// Rec. 601 luma in `[0, 1]`, zero where invalid.
    pub fn luma(&self) -> Vec<f32> {
        self.pixels
            .chunks_exact(3)
            .zip(&self.valid)
            .map(|(p, &ok)| {
                if ok {
                    (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Resamples `frame` through `grid`. Invalid grid cells produce zero pixels.
pub fn unwrap_frame(frame: &Frame, grid: &SampleGrid) -> Result<UnwrappedFrame, UnwrapError> {
    if (frame.width(), frame.height()) != (grid.frame_w, grid.frame_h) {
        return Err(UnwrapError::DimensionMismatch {
            grid_w: grid.frame_w,
            grid_h: grid.frame_h,
            frame_w: frame.width(),
            frame_h: frame.height(),
        });
    }
    let mut pixels = vec![0u8; grid.coords.len() * 3];
    for ((out, &[x, y]), &ok) in pixels
        .chunks_exact_mut(3)
        .zip(&grid.coords)
        .zip(&grid.valid)
    {
        if ok {
            let s = bilinear_sample(frame, x, y);
            out[0] = quantize(s[0]);
            out[1] = quantize(s[1]);
            out[2] = quantize(s[2]);
        }
    }
    Ok(UnwrappedFrame {
        source_index: frame.index(),
        w: grid.spec.w,
        h: grid.spec.h,
        pixels,
        valid: grid.valid.clone(),
    })
}
