//! Synthetic scenes with known geometry, for tests, demos and acceptance runs.
//!
//! Everything here renders forward (scene → annular frame) using `atan2`/`hypot` per pixel,
//! independently of the inverse sampling grid used by [`crate::unwrap`].

use std::f64::consts::TAU;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imageio;
use crate::ingest::Frame;
use crate::unwrap::{AnnulusGeometry, UnwrapSpec, UnwrappedFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobTextureParams {
    /// Blobs per pixel of texture area.
    pub density: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub base: f32,
    pub amplitude: f32,
    /// Texture repeats horizontally (the angular axis of a pipe wall).
    pub wrap_x: bool,
}

impl Default for BlobTextureParams {
    fn default() -> Self {
        Self {
            density: 1.0 / 90.0,
            sigma_min: 2.0,
            sigma_max: 5.0,
            base: 128.0,
            amplitude: 110.0,
            wrap_x: true,
        }
    }
}

/// Smooth RGB texture made of random Gaussian blobs, stored as `f32` per channel.
#[derive(Debug, Clone)]
pub struct BlobTexture {
    width: usize,
    height: usize,
    wrap_x: bool,
    data: Vec<[f32; 3]>,
}

impl BlobTexture {
    pub fn generate(width: usize, height: usize, seed: u64, params: BlobTextureParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = vec![[0.0f32; 3]; width * height];
        let n = (width as f64 * height as f64 * params.density).round() as usize;
        for _ in 0..n {
            let bx = rng.gen_range(0.0..width as f64);
            let by = rng.gen_range(0.0..height as f64);
            let sigma = rng.gen_range(params.sigma_min..=params.sigma_max);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let strength = sign * rng.gen_range(0.4..1.0f32) * params.amplitude;
            let tint = [
                rng.gen_range(0.6..1.0f32),
                rng.gen_range(0.6..1.0f32),
                rng.gen_range(0.6..1.0f32),
            ];
            let r = (3.5 * sigma).ceil() as i64;
            let denom = -1.0 / (2.0 * sigma * sigma);
            for yy in (by as i64 - r)..=(by as i64 + r) {
                if yy < 0 || yy >= height as i64 {
                    continue;
                }
                for xx in (bx as i64 - r)..=(bx as i64 + r) {
                    let x = if params.wrap_x {
                        xx.rem_euclid(width as i64)
                    } else if xx < 0 || xx >= width as i64 {
                        continue;
                    } else {
                        xx
                    };
                    let d2 = (xx as f64 - bx).powi(2) + (yy as f64 - by).powi(2);
                    let g = (d2 * denom).exp() as f32 * strength;
                    let px = &mut acc[yy as usize * width + x as usize];
                    for c in 0..3 {
                        px[c] += g * tint[c];
                    }
                }
            }
        }
        // Soft saturation keeps overlapping blobs in range without hard clipping edges.
        let half = 127.0f32;
        let data = acc
            .into_iter()
            .map(|p| p.map(|v| params.base + half * (v / half).tanh()))
            .collect();
        Self {
            width,
            height,
            wrap_x: params.wrap_x,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    /// Bilinear sample; wraps in x when periodic, clamps otherwise.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let (w, h) = (self.width as i64, self.height as i64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = if self.wrap_x {
            x.rem_euclid(w as f64)
        } else {
            x.clamp(0.0, (w - 1) as f64)
        };
        let (x0, y0) = (x.floor() as i64, y.floor() as i64);
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let x1 = if self.wrap_x { (x0 + 1) % w } else { (x0 + 1).min(w - 1) };
        let y1 = (y0 + 1).min(h - 1);
        let (a, b) = (self.texel(x0 as usize, y0 as usize), self.texel(x1 as usize, y0 as usize));
        let (c, d) = (self.texel(x0 as usize, y1 as usize), self.texel(x1 as usize, y1 as usize));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        out
    }

    /// Integer crop `w×h` starting at `(x0, y0)` as a fully valid strip.
    pub fn strip(&self, x0: u32, y0: u32, w: u32, h: u32) -> UnwrappedFrame {
        let img = RgbImage::from_fn(w, h, |x, y| {
            let xx = (x0 + x) as usize % self.width;
            let yy = (y0 + y) as usize;
            Rgb(self.texel(xx, yy).map(to_u8))
        });
        UnwrappedFrame::from_rgb(1, &img)
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Distinct sector colours, in order of increasing on-screen angle (clockwise from +x).
pub const SECTOR_COLORS: [[u8; 3]; 8] = [
    [200, 30, 30],
    [30, 170, 30],
    [30, 30, 200],
    [190, 190, 30],
    [30, 180, 180],
    [180, 30, 180],
    [120, 70, 20],
    [60, 60, 60],
];

pub const RING_COLOR: [u8; 3] = [255, 255, 255];

/// Annulus with 8 equal angular sectors between `r_inner` and `r_outer`, plus thin white
/// rings (Gaussian radial profile, σ = `ring_sigma`) at `rings`, all centred on `center`.
#[derive(Debug, Clone)]
pub struct SectorAnnulus {
    pub frame_w: u32,
    pub frame_h: u32,
    pub center: (f64, f64),
    pub r_inner: f64,
    pub r_outer: f64,
    pub rings: Vec<f64>,
    pub ring_sigma: f64,
}

impl SectorAnnulus {
    /// 1920×1080 frame centred at (960, 540), sectors over radii 100..560, rings at 200 and 400.
    pub fn hd_default() -> Self {
        Self {
            frame_w: 1920,
            frame_h: 1080,
            center: (960.0, 540.0),
            r_inner: 100.0,
            r_outer: 560.0,
            rings: vec![200.0, 400.0],
            ring_sigma: 1.5,
        }
    }

    pub fn render(&self) -> Frame {
        let (cx, cy) = self.center;
        let img = RgbImage::from_fn(self.frame_w, self.frame_h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let r = dx.hypot(dy);
            if r < self.r_inner || r > self.r_outer {
                return Rgb([0, 0, 0]);
            }
            let theta = dy.atan2(dx).rem_euclid(TAU);
            let sector = ((theta / TAU * 8.0).floor() as usize).min(7);
            let base = SECTOR_COLORS[sector];
            let ring = self
                .rings
                .iter()
                .map(|&rr| (-(r - rr).powi(2) / (2.0 * self.ring_sigma.powi(2))).exp())
                .fold(0.0, f64::max);
            let mix = |c: u8, ring_c: u8| {
                let v = c as f64 * (1.0 - ring) + ring_c as f64 * ring;
                (v + 0.5).floor() as u8
            };
            Rgb([
                mix(base[0], RING_COLOR[0]),
                mix(base[1], RING_COLOR[1]),
                mix(base[2], RING_COLOR[2]),
            ])
        });
        Frame::from_rgb(1, img)
    }
}

/// A straight pipe whose wall carries a periodic [`BlobTexture`], viewed by a probe moving
/// at constant speed.
///
/// The radial image coordinate is linear in axial position: wall point `(a, z)` appears at
/// angle `a / w · 2π` and radius `r_min + (z − z_k) / h · (r_max − r_min)`, where `z_k` is
/// the probe position in frame `k`. Under this model probe motion is an exact translation
/// of the unwrapped strip by `advance_per_frame` rows per frame.
#[derive(Debug, Clone)]
pub struct CylinderScene {
    pub geometry: AnnulusGeometry,
    pub spec: UnwrapSpec,
    pub frame_w: u32,
    pub frame_h: u32,
    pub advance_per_frame: f64,
    pub n_frames: usize,
    texture: BlobTexture,
    pad: f64,
    lookup: Vec<(u32, f32, f32)>,
}

impl CylinderScene {
    pub fn new(
        geometry: AnnulusGeometry,
        spec: UnwrapSpec,
        frame_w: u32,
        frame_h: u32,
        advance_per_frame: f64,
        n_frames: usize,
        seed: u64,
    ) -> Self {
        let pad = 8.0;
        let length = (advance_per_frame * n_frames as f64 + spec.h as f64 + 2.0 * pad).ceil();
        let texture = BlobTexture::generate(
            spec.w as usize,
            length as usize,
            seed,
            BlobTextureParams::default(),
        );
        // Polar lookup for every frame pixel in (or just around) the annulus band.
        let margin = 3.0;
        let radial_scale = spec.h as f64 / (geometry.r_max - geometry.r_min);
        let mut lookup = Vec::new();
        for y in 0..frame_h {
            for x in 0..frame_w {
                let (dx, dy) = (x as f64 - geometry.cx, y as f64 - geometry.cy);
                let r = dx.hypot(dy);
                if r < geometry.r_min - margin || r > geometry.r_max + margin {
                    continue;
                }
                let a = dy.atan2(dx).rem_euclid(TAU) / TAU * spec.w as f64;
                let z = (r - geometry.r_min) * radial_scale;
                lookup.push((y * frame_w + x, a as f32, z as f32));
            }
        }
        Self {
            geometry,
            spec,
            frame_w,
            frame_h,
            advance_per_frame,
            n_frames,
            texture,
            pad,
            lookup,
        }
    }

    /// HD frames with the default geometry and strip size.
    pub fn hd_default(advance_per_frame: f64, n_frames: usize, seed: u64) -> Self {
        Self::new(
            AnnulusGeometry::default(),
            UnwrapSpec::default(),
            1920,
            1080,
            advance_per_frame,
            n_frames,
            seed,
        )
    }

    pub fn texture(&self) -> &BlobTexture {
        &self.texture
    }

    /// Axial probe position of 1-based frame `index`.
    pub fn probe_position(&self, index: usize) -> f64 {
        (index as f64 - 1.0) * self.advance_per_frame
    }

    fn wall(&self, a: f64, z: f64) -> [f32; 3] {
        self.texture.sample(a, z + self.pad)
    }

    pub fn render_frame(&self, index: usize) -> Frame {
        let z0 = self.probe_position(index);
        let mut img = RgbImage::from_pixel(self.frame_w, self.frame_h, Rgb([12, 12, 12]));
        let buf: &mut [u8] = &mut img;
        for &(pix, a, z) in &self.lookup {
            let v = self.wall(a as f64, z as f64 + z0);
            let i = pix as usize * 3;
            buf[i] = to_u8(v[0]);
            buf[i + 1] = to_u8(v[1]);
            buf[i + 2] = to_u8(v[2]);
        }
        Frame::from_rgb(index, img)
    }

    /// Writes frames `1..=n_frames` as `NNNN.png` into `dir`.
    pub fn write_sequence(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for i in 1..=self.n_frames {
            let frame = self.render_frame(i);
            imageio::write_rgb_png(&dir.join(format!("{i:04}.png")), &frame.to_rgb_image())
                .map_err(std::io::Error::other)?;
        }
        Ok(())
    }

    /// Directly rendered unrolled wall as float RGB, `w` columns by `rows` rows, with row 0
    /// at the axial position seen at strip row 0 of frame `first_index`.
    pub fn ground_truth(&self, first_index: usize, rows: usize) -> Vec<[f32; 3]> {
        let z0 = self.probe_position(first_index);
        let w = self.spec.w as usize;
        let mut out = Vec::with_capacity(w * rows);
        for v in 0..rows {
            for u in 0..w {
                out.push(self.wall(u as f64, v as f64 + z0));
            }
        }
        out
    }
}
