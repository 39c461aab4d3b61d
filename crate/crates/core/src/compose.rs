//! Placement of unwrapped strips on a shared canvas with linear seam blending.
//!
//! Inside the blend band around a seam a pixel takes `α·F_k + (1 − α)·F_{k+1}`, where
//! `α = clamp(0.5 + d / band, 0, 1)` and `d` is the signed distance to the seam, positive on
//! strip `k`'s side. Outside the band each side is an exact copy of its own strip.
//!
//! Compositing happens in strip coordinates (`u` = angle across the width, `v` = axial
//! position down the rows). The saved panorama is rotated a quarter turn counter-clockwise
//! so the pipe axis runs left to right along the image width.

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registration::Offset;
use crate::registry::Registry;
use crate::unwrap::{quantize, UnwrappedFrame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error("no strips to compose")]
    EmptyInput,
    #[error("{strips} strips but {offsets} offsets")]
    LengthMismatch { strips: usize, offsets: usize },
    #[error("regions do not overlap")]
    NoOverlap,
    #[error("region sizes differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("invalid blend band width {0}; must be at least 1")]
    InvalidBand(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub band_width: f64,
}

impl Default for BlendSpec {
    fn default() -> Self {
        Self { band_width: 20.0 }
    }
}

impl BlendSpec {
    pub fn validate(&self) -> Result<(), ComposeError> {
        if !self.band_width.is_finite() || self.band_width < 1.0 {
            return Err(ComposeError::InvalidBand(self.band_width));
        }
        Ok(())
    }
}

/// Weight given to the strip on the positive side of a seam.
pub fn blend_weight(signed_distance: f64, spec: &BlendSpec) -> f64 {
    (0.5 + signed_distance / spec.band_width).clamp(0.0, 1.0)
}

pub trait Blender: Send + Sync {
    fn name(&self) -> &str;
    /// Weight in `[0, 1]` of the strip on the positive side of the seam.
    fn weight(&self, signed_distance: f64, spec: &BlendSpec) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinearBlend;

impl Blender for LinearBlend {
    fn name(&self) -> &str {
        "linear"
    }

    fn weight(&self, signed_distance: f64, spec: &BlendSpec) -> f64 {
        blend_weight(signed_distance, spec)
    }
}

pub fn blenders() -> Registry<dyn Blender> {
    let mut reg: Registry<dyn Blender> = Registry::new("blend method");
    reg.register("linear", |_| Box::new(LinearBlend));
    reg
}

/// A straight seam: a point on it and the unit normal pointing into the first strip's side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seam {
    pub point: [f64; 2],
    pub normal: [f64; 2],
}

impl Seam {
    /// Horizontal seam at `row`, first strip above it.
    pub fn horizontal(row: f64) -> Self {
        Self {
            point: [0.0, row],
            normal: [0.0, -1.0],
        }
    }

    /// Vertical seam at `column`, first strip to its left.
    pub fn vertical(column: f64) -> Self {
        Self {
            point: [column, 0.0],
            normal: [-1.0, 0.0],
        }
    }

    #[inline]
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.point[0]) * self.normal[0] + (y - self.point[1]) * self.normal[1]
    }
}

/// Float RGB raster with validity, in a coordinate frame shared by the regions being blended.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 3]>,
    pub valid: Vec<bool>,
}

impl Region {
    pub fn uniform(width: u32, height: u32, value: f32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            pixels: vec![[value; 3]; n],
            valid: vec![true; n],
        }
    }

    pub fn at(&self, x: u32, y: u32) -> [f32; 3] {
        self.pixels[(y * self.width + x) as usize]
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(o.x0),
            y0: self.y0.max(o.y0),
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
        };
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    fn center(&self) -> [f64; 2] {
        [
            (self.x0 + self.x1 - 1) as f64 * 0.5,
            (self.y0 + self.y1 - 1) as f64 * 0.5,
        ]
    }

    /// Extent of the rectangle measured along unit direction `n`.
    fn extent_along(&self, n: [f64; 2]) -> f64 {
        (self.x1 - self.x0) as f64 * n[0].abs() + (self.y1 - self.y0) as f64 * n[1].abs()
    }
}

fn clipped(spec: &BlendSpec, overlap: &Rect, normal: [f64; 2]) -> BlendSpec {
    BlendSpec {
        band_width: spec.band_width.min(overlap.extent_along(normal)).max(1.0),
    }
}

#[inline]
fn mix(a: [f32; 3], b: [f32; 3], alpha: f64) -> [f32; 3] {
    // Written as b + α(a − b) so equal inputs come back unchanged.
    let al = alpha as f32;
    [
        b[0] + al * (a[0] - b[0]),
        b[1] + al * (a[1] - b[1]),
        b[2] + al * (a[2] - b[2]),
    ]
}

/// Blends two co-registered regions across `seam` (`a` on the positive side).
///
/// Pixels valid in only one region copy it; the band is clipped to the extent of the
/// overlap along the seam normal.
pub fn blend_pair(a: &Region, b: &Region, seam: &Seam, spec: &BlendSpec) -> Result<Region, ComposeError> {
    blend_pair_with(&LinearBlend, a, b, seam, spec)
}

pub fn blend_pair_with(
    blender: &dyn Blender,
    a: &Region,
    b: &Region,
    seam: &Seam,
    spec: &BlendSpec,
) -> Result<Region, ComposeError> {
    spec.validate()?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(ComposeError::DimensionMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    let w = a.width as i64;
    let mut overlap: Option<Rect> = None;
    for (i, (&va, &vb)) in a.valid.iter().zip(&b.valid).enumerate() {
        if va && vb {
            let (x, y) = (i as i64 % w, i as i64 / w);
            let r = overlap.get_or_insert(Rect { x0: x, y0: y, x1: x + 1, y1: y + 1 });
            r.x0 = r.x0.min(x);
            r.y0 = r.y0.min(y);
            r.x1 = r.x1.max(x + 1);
            r.y1 = r.y1.max(y + 1);
        }
    }
    let overlap = overlap.ok_or(ComposeError::NoOverlap)?;
    let band = clipped(spec, &overlap, seam.normal);

    let mut out = Region {
        width: a.width,
        height: a.height,
        pixels: vec![[0.0; 3]; a.pixels.len()],
        valid: vec![false; a.pixels.len()],
    };
    for i in 0..a.pixels.len() {
        let (x, y) = ((i as i64 % w) as f64, (i as i64 / w) as f64);
        out.pixels[i] = match (a.valid[i], b.valid[i]) {
            (true, true) => {
                let alpha = blender.weight(seam.signed_distance(x, y), &band);
                mix(a.pixels[i], b.pixels[i], alpha)
            }
            (true, false) => a.pixels[i],
            (false, true) => b.pixels[i],
            (false, false) => continue,
        };
        out.valid[i] = true;
    }
    Ok(out)
}

/// Final composite in strip coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    coverage: Vec<u16>,
    placements: Vec<(i64, i64)>,
}

impl Panorama {
    /// Angular extent (equals the strip width).
    pub fn width(&self) -> u32 {
        self.width
    }

    /// Axial extent.
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Number of strips with a valid sample at each pixel.
    pub fn coverage(&self) -> &[u16] {
        &self.coverage
    }

    /// Integer top-left position of each strip on the canvas.
    pub fn placements(&self) -> &[(i64, i64)] {
        &self.placements
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone()).expect("length checked")
    }

    /// Saved orientation: pipe axis along the width, angle along the height.
    pub fn to_output_image(&self) -> RgbImage {
        image::imageops::rotate270(&self.to_rgb_image())
    }

    /// Contributor count × 64, saturating, in the saved orientation.
    pub fn coverage_image(&self) -> GrayImage {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            let c = self.coverage[(y * self.width + x) as usize] as u32;
            Luma([(c * 64).min(255) as u8])
        });
        image::imageops::rotate270(&img)
    }

    /// `(width, height)` of the saved image.
    pub fn output_dimensions(&self) -> (u32, u32) {
        (self.height, self.width)
    }
}

pub fn accumulate_panorama(
    strips: &[UnwrappedFrame],
    offsets: &[Offset],
    spec: &BlendSpec,
) -> Result<Panorama, ComposeError> {
    accumulate_panorama_with(&LinearBlend, strips, offsets, spec)
}

/// Composites `strips` in order at `offsets` (rounded to whole pixels), placing each seam
/// at the midline of the overlap between consecutive strips.
pub fn accumulate_panorama_with(
    blender: &dyn Blender,
    strips: &[UnwrappedFrame],
    offsets: &[Offset],
    spec: &BlendSpec,
) -> Result<Panorama, ComposeError> {
    spec.validate()?;
    if strips.is_empty() {
        return Err(ComposeError::EmptyInput);
    }
    if strips.len() != offsets.len() {
        return Err(ComposeError::LengthMismatch {
            strips: strips.len(),
            offsets: offsets.len(),
        });
    }
    let rects: Vec<Rect> = strips
        .iter()
        .zip(offsets)
        .map(|(s, o)| {
            let (x0, y0) = (o.dx.round() as i64, o.dy.round() as i64);
            Rect {
                x0,
                y0,
                x1: x0 + s.width() as i64,
                y1: y0 + s.height() as i64,
            }
        })
        .collect();
    let min_x = rects.iter().map(|r| r.x0).min().unwrap();
    let min_y = rects.iter().map(|r| r.y0).min().unwrap();
    let max_x = rects.iter().map(|r| r.x1).max().unwrap();
    let max_y = rects.iter().map(|r| r.y1).max().unwrap();
    let (cw, ch) = ((max_x - min_x) as usize, (max_y - min_y) as usize);

    let mut canvas = vec![[0.0f32; 3]; cw * ch];
    let mut coverage = vec![0u16; cw * ch];
    let mut placements = Vec::with_capacity(strips.len());

    for (k, (strip, rect)) in strips.iter().zip(&rects).enumerate() {
        let (px, py) = (rect.x0 - min_x, rect.y0 - min_y);
        placements.push((px, py));
        let seam = if k == 0 {
            None
        } else {
            rects[k - 1].intersect(rect).map(|overlap| {
                let prev = rects[k - 1].center();
                let cur = rect.center();
                let (nx, ny) = (prev[0] - cur[0], prev[1] - cur[1]);
                let len = nx.hypot(ny);
                let normal = if len > 0.0 { [nx / len, ny / len] } else { [0.0, -1.0] };
                let c = overlap.center();
                let seam = Seam {
                    point: [c[0] - min_x as f64, c[1] - min_y as f64],
                    normal,
                };
                (seam, clipped(spec, &overlap, normal))
            })
        };
        for v in 0..strip.height() {
            for u in 0..strip.width() {
                if !strip.is_valid(u, v) {
                    continue;
                }
                let (x, y) = (px as usize + u as usize, py as usize + v as usize);
                let i = y * cw + x;
                let p = strip.pixel(u, v).map(|c| c as f32);
                if coverage[i] == 0 {
                    canvas[i] = p;
                } else {
                    // No seam with the previous strip: earlier content wins.
                    let alpha = seam
                        .as_ref()
                        .map(|(s, band)| blender.weight(s.signed_distance(x as f64, y as f64), band))
                        .unwrap_or(1.0);
                    canvas[i] = mix(canvas[i], p, alpha);
                }
                coverage[i] = coverage[i].saturating_add(1);
            }
        }
    }

    let pixels = canvas
        .iter()
        .flat_map(|p| p.map(|c| quantize(c as f64)))
        .collect();
    Ok(Panorama {
        width: cw as u32,
        height: ch as u32,
        pixels,
        coverage,
        placements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn uniform_strip(w: u32, h: u32, v: u8) -> UnwrappedFrame {
        UnwrappedFrame::from_rgb(1, &RgbImage::from_pixel(w, h, Rgb([v, v, v])))
    }

    fn off(dx: f64, dy: f64) -> Offset {
        Offset { dx, dy }
    }

    #[test]
    fn weight_profile() {
        let s = BlendSpec { band_width: 20.0 };
        assert_eq!(blend_weight(0.0, &s), 0.5);
        assert_eq!(blend_weight(10.0, &s), 1.0);
        assert_eq!(blend_weight(35.0, &s), 1.0);
        assert_eq!(blend_weight(-10.0, &s), 0.0);
        assert_eq!(blend_weight(-50.0, &s), 0.0);
        assert_eq!(blend_weight(5.0, &s), 0.75);
    }

    #[test]
    fn pair_ramp_between_constants() {
        let a = Region::uniform(8, 60, 100.0);
        let b = Region::uniform(8, 60, 200.0);
        let seam = Seam::horizontal(30.0);
        let out = blend_pair(&a, &b, &seam, &BlendSpec { band_width: 20.0 }).unwrap();
        let col: Vec<f32> = (0..60).map(|y| out.at(3, y)[0]).collect();
        assert_eq!(col[30], 150.0);
        assert!(col.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(col[0..=20], [100.0; 21]);
        assert_eq!(col[40..], [200.0; 20]);
    }

    #[test]
    fn pair_identity_and_masking() {
        let a = Region::uniform(10, 10, 77.0);
        let out = blend_pair(&a, &a, &Seam::vertical(5.0), &BlendSpec::default()).unwrap();
        assert_eq!(out, a);

        let mut b = Region::uniform(10, 10, 200.0);
        for y in 3..8 {
            for x in 0..10 {
                b.valid[(y * 10 + x) as usize] = false;
            }
        }
        let out = blend_pair(&a, &b, &Seam::horizontal(5.0), &BlendSpec::default()).unwrap();
        for y in 3..8 {
            for x in 0..10 {
                assert_eq!(out.at(x, y), [77.0; 3]);
            }
        }

        let none = Region {
            valid: vec![false; 100],
            ..b
        };
        assert_eq!(
            blend_pair(&a, &none, &Seam::horizontal(5.0), &BlendSpec::default()),
            Err(ComposeError::NoOverlap)
        );
    }

    #[test]
    fn single_strip_is_copied() {
        let img = RgbImage::from_fn(20, 10, |x, y| Rgb([x as u8, y as u8, 9]));
        let s = UnwrappedFrame::from_rgb(1, &img);
        let p = accumulate_panorama(&[s], &[off(0.0, 0.0)], &BlendSpec::default()).unwrap();
        assert_eq!(p.to_rgb_image(), img);
        assert!(p.coverage().iter().all(|&c| c == 1));
    }

    #[test]
    fn two_strip_bounding_box() {
        let strips = [uniform_strip(500, 250, 100), uniform_strip(500, 250, 200)];
        let p = accumulate_panorama(&strips, &[off(0.0, 0.0), off(0.0, 175.0)], &BlendSpec::default())
            .unwrap();
        assert_eq!((p.width(), p.height()), (500, 425));
        assert_eq!(p.output_dimensions(), (425, 500));
        assert_eq!(p.coverage()[(200 * 500) as usize], 2);
        assert_eq!(p.coverage()[(100 * 500) as usize], 1);
        // Overlap rows 175..250, seam at row 212.
        assert_eq!(p.pixel(10, 212), [150; 3]);
        assert_eq!(p.pixel(10, 201), [100; 3]);
        assert_eq!(p.pixel(10, 223), [200; 3]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert_eq!(
            accumulate_panorama(&[], &[], &BlendSpec::default()),
            Err(ComposeError::EmptyInput)
        );
        assert!(matches!(
            accumulate_panorama(&[uniform_strip(4, 4, 0)], &[], &BlendSpec::default()),
            Err(ComposeError::LengthMismatch { .. })
        ));
        assert!(matches!(
            accumulate_panorama(
                &[uniform_strip(4, 4, 0)],
                &[off(0.0, 0.0)],
                &BlendSpec { band_width: 0.5 }
            ),
            Err(ComposeError::InvalidBand(_))
        ));
    }

    #[test]
    fn length_grows_with_strip_count() {
        let mut last = 0;
        for m in 1..6 {
            let strips: Vec<_> = (0..m).map(|_| uniform_strip(50, 40, 90)).collect();
            let offsets: Vec<_> = (0..m).map(|k| off(0.0, 15.0 * k as f64)).collect();
            let p = accumulate_panorama(&strips, &offsets, &BlendSpec::default()).unwrap();
            assert_eq!(p.width(), 50);
            assert!(p.height() > last);
            last = p.height();
        }
    }

    #[test]
    fn output_rotation_puts_axis_along_width() {
        let img = RgbImage::from_fn(3, 5, |x, y| Rgb([x as u8, y as u8, 0]));
        let s = UnwrappedFrame::from_rgb(1, &img);
        let p = accumulate_panorama(&[s], &[off(0.0, 0.0)], &BlendSpec::default()).unwrap();
        let out = p.to_output_image();
        assert_eq!(out.dimensions(), (5, 3));
        // Axial row v maps to output column v; angle u runs upward.
        assert_eq!(out.get_pixel(4, 2), &Rgb([0, 4, 0]));
        assert_eq!(out.get_pixel(0, 0), &Rgb([2, 0, 0]));
    }
}
