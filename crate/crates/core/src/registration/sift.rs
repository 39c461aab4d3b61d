//! Scale-invariant feature detection and 128-dimensional gradient-histogram descriptors.
//!
//! Follows Lowe's construction: a Gaussian pyramid with `s` scales per octave, extrema of
//! the difference-of-Gaussian stack located to sub-pixel accuracy by a quadratic fit,
//! low-contrast and edge-like responses rejected, one keypoint per dominant gradient
//! orientation, and a 4×4×8 histogram descriptor normalized, clipped at 0.2 and
//! renormalized. The input is not upsampled before the first octave.

use std::f32::consts::TAU;

use super::{Descriptor, FeatureDetector, Features, Keypoint, RegistrationError, RegistrationParams};
use crate::unwrap::UnwrappedFrame;

/// Blur already present in the input image.
const INPUT_SIGMA: f32 = 0.5;
const IMAGE_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;

const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_RADIUS_FACTOR: f32 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_PEAK_RATIO: f32 = 0.8;

const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCALE_FACTOR: f32 = 3.0;
const DESCR_MAG_CLIP: f32 = 0.2;
pub const DESCRIPTOR_LEN: usize = DESCR_WIDTH * DESCR_WIDTH * DESCR_BINS;

/// Smallest strip side and valid area accepted by the detector.
pub const MIN_STRIP_SIDE: u32 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SiftParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma: f32,
    pub contrast_threshold: f32,
    pub edge_threshold: f32,
    /// Keep only the strongest responses when non-zero.
    pub max_features: usize,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            sigma: 1.6,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            max_features: 0,
        }
    }
}

impl From<&RegistrationParams> for SiftParams {
    fn from(p: &RegistrationParams) -> Self {
        Self {
            octaves: p.octaves,
            scales_per_octave: p.scales_per_octave,
            sigma: p.sigma,
            contrast_threshold: p.contrast_threshold,
            edge_threshold: p.edge_threshold,
            max_features: p.max_features,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sift {
    params: SiftParams,
}

impl Sift {
    pub fn new(params: SiftParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &SiftParams {
        &self.params
    }

    /// Runs detection on a `[0, 1]` intensity image. `valid`, when given, restricts keypoints
    /// to neighbourhoods that are entirely valid.
    pub fn detect_luma(
        &self,
        width: usize,
        height: usize,
        luma: &[f32],
        valid: Option<&[bool]>,
    ) -> Features {
        let p = &self.params;
        let base = Plane {
            w: width,
            h: height,
            data: luma.to_vec(),
        };
        let pyramid = Pyramid::build(base, p);
        let mask = valid.map(|v| MaskIntegral::new(width, height, v));

        let mut candidates = Vec::new();
        for (o, octave) in pyramid.octaves.iter().enumerate() {
            for layer in 1..=p.scales_per_octave {
                find_extrema(octave, o, layer, p, &mut candidates);
            }
        }
        if let Some(mask) = &mask {
            candidates.retain(|c| mask.window_valid(c.kp.x, c.kp.y, 3.0 * c.kp.scale + 1.0));
        }
        if p.max_features > 0 && candidates.len() > p.max_features {
            candidates.sort_by(|a, b| b.kp.response.total_cmp(&a.kp.response));
            candidates.truncate(p.max_features);
        }

        let mut features = Features::default();
        for c in candidates {
            let octave = &pyramid.octaves[c.octave];
            if let Some(d) = descriptor(&octave.gauss[c.layer], &c) {
                features.keypoints.push(c.kp);
                features.descriptors.push(d);
            }
        }
        features
    }
}

impl FeatureDetector for Sift {
    fn name(&self) -> &str {
        "sift"
    }

    fn detect(&self, strip: &UnwrappedFrame) -> Result<Features, RegistrationError> {
        let (w, h) = (strip.width(), strip.height());
        let min_area = (MIN_STRIP_SIDE * MIN_STRIP_SIDE) as usize;
        if w < MIN_STRIP_SIDE || h < MIN_STRIP_SIDE || strip.valid_count() < min_area {
            return Err(RegistrationError::TooSmall {
                width: w,
                height: h,
                valid: strip.valid_count(),
            });
        }
        let luma = strip.luma();
        let all_valid = strip.validity().iter().all(|&v| v);
        let mask = (!all_valid).then_some(strip.validity());
        Ok(self.detect_luma(w as usize, h as usize, &luma, mask))
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    fn blur(&self, sigma: f32) -> Plane {
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);

        let (w, h) = (self.w as isize, self.h as isize);
        let mut tmp = vec![0.0f32; self.data.len()];
        for y in 0..h {
            let row = &self.data[(y * w) as usize..((y + 1) * w) as usize];
            let out = &mut tmp[(y * w) as usize..((y + 1) * w) as usize];
            for x in 0..w {
                let mut acc = 0.0;
                if x >= radius && x + radius < w {
                    let src = &row[(x - radius) as usize..=(x + radius) as usize];
                    for (k, s) in kernel.iter().zip(src) {
                        acc += k * s;
                    }
                } else {
                    for (i, k) in kernel.iter().enumerate() {
                        let xx = (x + i as isize - radius).clamp(0, w - 1);
                        acc += k * row[xx as usize];
                    }
                }
                out[x as usize] = acc;
            }
        }
        let mut data = vec![0.0f32; self.data.len()];
        for y in 0..h {
            let out = &mut data[(y * w) as usize..((y + 1) * w) as usize];
            for (i, k) in kernel.iter().enumerate() {
                let yy = (y + i as isize - radius).clamp(0, h - 1);
                let src = &tmp[(yy * w) as usize..((yy + 1) * w) as usize];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += k * s;
                }
            }
        }
        Plane {
            w: self.w,
            h: self.h,
            data,
        }
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, data }
    }

    fn sub(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

struct Pyramid {
    octaves: Vec<Octave>,
}

impl Pyramid {
    fn build(input: Plane, p: &SiftParams) -> Pyramid {
        let s = p.scales_per_octave;
        let k = 2f32.powf(1.0 / s as f32);
        let min_side = input.w.min(input.h) as f32;
        let max_octaves = ((min_side.log2() - 3.0).floor() as usize).max(1);
        let n_octaves = p.octaves.clamp(1, max_octaves);

        // Incremental blur from level i-1 to level i within an octave.
        let increments: Vec<f32> = (1..s + 3)
            .map(|i| {
                let prev = p.sigma * k.powi(i as i32 - 1);
                let total = prev * k;
                (total * total - prev * prev).sqrt()
            })
            .collect();

        let initial = (p.sigma * p.sigma - INPUT_SIGMA * INPUT_SIGMA).max(0.01).sqrt();
        let mut base = input.blur(initial);
        let mut octaves = Vec::with_capacity(n_octaves);
        for o in 0..n_octaves {
            let mut gauss = Vec::with_capacity(s + 3);
            gauss.push(base);
            for inc in &increments {
                let next = gauss.last().unwrap().blur(*inc);
                gauss.push(next);
            }
            let dog = gauss.windows(2).map(|g| g[1].sub(&g[0])).collect();
            if o + 1 < n_octaves {
                base = gauss[s].downsample();
            } else {
                base = Plane {
                    w: 0,
                    h: 0,
                    data: Vec::new(),
                };
            }
            octaves.push(Octave { gauss, dog });
        }
        Pyramid { octaves }
    }
}

struct Candidate {
    kp: Keypoint,
    octave: usize,
    layer: usize,
    /// Integer position in octave coordinates.
    ox: usize,
    oy: usize,
    /// Scale in octave coordinates.
    octave_sigma: f32,
}

fn is_extremum(dog: &[Plane], layer: usize, x: usize, y: usize) -> bool {
    let val = dog[layer].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for (li, plane) in dog[layer - 1..=layer + 1].iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if li == 1 && xx == x && yy == y {
                    continue;
                }
                let n = plane.at(xx, yy);
                is_max &= val >= n;
                is_min &= val <= n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    (is_max && val > 0.0) || (is_min && val < 0.0)
}

struct Fit {
    x: usize,
    y: usize,
    layer: usize,
    offset: [f32; 3],
    contrast: f32,
}

/// Quadratic refinement of a discrete extremum. Offsets are `(x, y, scale)`.
fn refine(dog: &[Plane], s: usize, mut x: usize, mut y: usize, mut layer: usize) -> Option<Fit> {
    let (w, h) = (dog[0].w, dog[0].h);
    for _ in 0..MAX_INTERP_STEPS {
        let (prev, cur, next) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        let g = [
            (cur.at(x + 1, y) - cur.at(x - 1, y)) * 0.5,
            (cur.at(x, y + 1) - cur.at(x, y - 1)) * 0.5,
            (next.at(x, y) - prev.at(x, y)) * 0.5,
        ];
        let v2 = cur.at(x, y) * 2.0;
        let dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
        let dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
        let dss = next.at(x, y) + prev.at(x, y) - v2;
        let dxy = (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1)
            + cur.at(x - 1, y - 1))
            * 0.25;
        let dxs = (next.at(x + 1, y) - next.at(x - 1, y) - prev.at(x + 1, y) + prev.at(x - 1, y))
            * 0.25;
        let dys = (next.at(x, y + 1) - next.at(x, y - 1) - prev.at(x, y + 1) + prev.at(x, y - 1))
            * 0.25;
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let offset = solve3(hess, g).map(|o| o.map(|v| -v))?;

        if offset.iter().all(|o| o.abs() < 0.5) {
            let dot = g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2];
            return Some(Fit {
                x,
                y,
                layer,
                offset,
                contrast: cur.at(x, y) + 0.5 * dot,
            });
        }
        if offset.iter().any(|o| o.abs() > (i32::MAX / 3) as f32) {
            return None;
        }
        let nx = x as i64 + offset[0].round() as i64;
        let ny = y as i64 + offset[1].round() as i64;
        let nl = layer as i64 + offset[2].round() as i64;
        let b = IMAGE_BORDER as i64;
        if nl < 1 || nl > s as i64 || nx < b || nx >= w as i64 - b || ny < b || ny >= h as i64 - b
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    None
}

fn solve3(a: [[f32; 3]; 3], b: [f32; 3]) -> Option<[f32; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-12 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let col = |c: usize| -> f32 {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    Some([col(0) * inv_det, col(1) * inv_det, col(2) * inv_det])
}

fn on_edge(cur: &Plane, x: usize, y: usize, edge_threshold: f32) -> bool {
    let v2 = cur.at(x, y) * 2.0;
    let dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
    let dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
    let dxy = (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1)
        + cur.at(x - 1, y - 1))
        * 0.25;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det <= 0.0 || tr * tr * edge_threshold >= (edge_threshold + 1.0).powi(2) * det
}

fn find_extrema(
    octave: &Octave,
    o: usize,
    layer: usize,
    p: &SiftParams,
    out: &mut Vec<Candidate>,
) {
    let s = p.scales_per_octave;
    let dog = &octave.dog;
    let (w, h) = (dog[0].w, dog[0].h);
    if w <= 2 * IMAGE_BORDER || h <= 2 * IMAGE_BORDER {
        return;
    }
    let prefilter = 0.5 * p.contrast_threshold;
    let octave_scale = 2f32.powi(o as i32);
    for y in IMAGE_BORDER..h - IMAGE_BORDER {
        for x in IMAGE_BORDER..w - IMAGE_BORDER {
            if dog[layer].at(x, y).abs() <= prefilter || !is_extremum(dog, layer, x, y) {
                continue;
            }
            let Some(fit) = refine(dog, s, x, y, layer) else {
                continue;
            };
            if fit.contrast.abs() < p.contrast_threshold
                || on_edge(&dog[fit.layer], fit.x, fit.y, p.edge_threshold)
            {
                continue;
            }
            let octave_sigma =
                p.sigma * 2f32.powf((fit.layer as f32 + fit.offset[2]) / s as f32);
            let gauss = &octave.gauss[fit.layer];
            let hist = orientation_histogram(gauss, fit.x, fit.y, octave_sigma);
            let peak = hist.iter().copied().fold(0.0f32, f32::max);
            if peak <= 0.0 {
                continue;
            }
            for k in 0..ORI_BINS {
                let l = hist[(k + ORI_BINS - 1) % ORI_BINS];
                let r = hist[(k + 1) % ORI_BINS];
                if hist[k] > l && hist[k] > r && hist[k] >= ORI_PEAK_RATIO * peak {
                    let bin = k as f32 + 0.5 * (l - r) / (l - 2.0 * hist[k] + r);
                    let bin = bin.rem_euclid(ORI_BINS as f32);
                    let orientation = (bin / ORI_BINS as f32 * TAU).rem_euclid(TAU);
                    out.push(Candidate {
                        kp: Keypoint {
                            x: (fit.x as f32 + fit.offset[0]) * octave_scale,
                            y: (fit.y as f32 + fit.offset[1]) * octave_scale,
                            scale: octave_sigma * octave_scale,
                            orientation,
                            response: fit.contrast.abs(),
                        },
                        octave: o,
                        layer: fit.layer,
                        ox: fit.x,
                        oy: fit.y,
                        octave_sigma,
                    });
                }
            }
        }
    }
}

#[inline]
fn gradient(img: &Plane, x: usize, y: usize) -> (f32, f32) {
    (
        img.at(x + 1, y) - img.at(x - 1, y),
        img.at(x, y + 1) - img.at(x, y - 1),
    )
}

fn orientation_histogram(img: &Plane, x: usize, y: usize, sigma: f32) -> [f32; ORI_BINS] {
    let radius = (ORI_RADIUS_FACTOR * sigma).round() as i64;
    let weight_sigma = ORI_SIGMA_FACTOR * sigma;
    let denom = -1.0 / (2.0 * weight_sigma * weight_sigma);
    let mut raw = [0.0f32; ORI_BINS];
    for i in -radius..=radius {
        let yy = y as i64 + i;
        if yy <= 0 || yy >= img.h as i64 - 1 {
            continue;
        }
        for j in -radius..=radius {
            let xx = x as i64 + j;
            if xx <= 0 || xx >= img.w as i64 - 1 {
                continue;
            }
            let (dx, dy) = gradient(img, xx as usize, yy as usize);
            let mag = (dx * dx + dy * dy).sqrt();
            let ori = dy.atan2(dx).rem_euclid(TAU);
            let weight = (((i * i + j * j) as f32) * denom).exp();
            let bin = ((ori / TAU * ORI_BINS as f32).round() as usize) % ORI_BINS;
            raw[bin] += weight * mag;
        }
    }
    let mut hist = [0.0f32; ORI_BINS];
    for k in 0..ORI_BINS {
        let at = |d: isize| raw[(k as isize + d).rem_euclid(ORI_BINS as isize) as usize];
        hist[k] = (at(-2) + at(2)) * (1.0 / 16.0) + (at(-1) + at(1)) * (4.0 / 16.0) + at(0) * (6.0 / 16.0);
    }
    hist
}

fn descriptor(img: &Plane, c: &Candidate) -> Option<Descriptor> {
    let d = DESCR_WIDTH as f32;
    let hist_width = DESCR_SCALE_FACTOR * c.octave_sigma;
    let diag = ((img.w * img.w + img.h * img.h) as f32).sqrt();
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) * 0.5)
        .round()
        .min(diag) as i64;
    let angle = c.kp.orientation;
    let (sin_t, cos_t) = (angle.sin() / hist_width, angle.cos() / hist_width);
    let exp_scale = -1.0 / (d * d * 0.5);
    let bins_per_rad = DESCR_BINS as f32 / TAU;

    let mut hist = [0.0f32; DESCRIPTOR_LEN];
    for i in -radius..=radius {
        let yy = c.oy as i64 + i;
        if yy <= 0 || yy >= img.h as i64 - 1 {
            continue;
        }
        for j in -radius..=radius {
            let xx = c.ox as i64 + j;
            if xx <= 0 || xx >= img.w as i64 - 1 {
                continue;
            }
            // Offset expressed in the keypoint's rotated frame, in histogram-cell units.
            let c_rot = j as f32 * cos_t + i as f32 * sin_t;
            let r_rot = -(j as f32) * sin_t + i as f32 * cos_t;
            let rbin = r_rot + d / 2.0 - 0.5;
            let cbin = c_rot + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (dx, dy) = gradient(img, xx as usize, yy as usize);
            let mag = (dx * dx + dy * dy).sqrt()
                * ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let obin = (dy.atan2(dx) - angle).rem_euclid(TAU) * bins_per_rad;
            accumulate_trilinear(&mut hist, rbin, cbin, obin, mag);
        }
    }

    let norm = hist.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm.is_nan() || norm <= 0.0 {
        return None;
    }
    let clip = DESCR_MAG_CLIP * norm;
    hist.iter_mut().for_each(|v| *v = v.min(clip));
    let norm = hist.iter().map(|v| v * v).sum::<f32>().sqrt();
    hist.iter_mut().for_each(|v| *v /= norm);
    Some(Descriptor(hist))
}

fn accumulate_trilinear(hist: &mut [f32; DESCRIPTOR_LEN], rbin: f32, cbin: f32, obin: f32, mag: f32) {
    let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
    let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
    let (r0, c0, o0) = (r0 as i64, c0 as i64, o0 as i64);
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        let r = r0 + dr;
        if !(0..DESCR_WIDTH as i64).contains(&r) {
            continue;
        }
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let cc = c0 + dc;
            if !(0..DESCR_WIDTH as i64).contains(&cc) {
                continue;
            }
            for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                let ob = (o0 + dob).rem_euclid(DESCR_BINS as i64);
                let idx = ((r * DESCR_WIDTH as i64 + cc) * DESCR_BINS as i64 + ob) as usize;
                hist[idx] += mag * wr * wc * wo;
            }
        }
    }
}

/// Summed-area table of invalid pixels for constant-time window checks.
struct MaskIntegral {
    w: usize,
    h: usize,
    sums: Vec<u32>,
}

impl MaskIntegral {
    fn new(w: usize, h: usize, valid: &[bool]) -> Self {
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += (!valid[y * w + x]) as u32;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, sums }
    }

    fn window_valid(&self, x: f32, y: f32, radius: f32) -> bool {
        let r = radius.ceil() as i64;
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        let x0 = (cx - r).clamp(0, self.w as i64) as usize;
        let x1 = (cx + r + 1).clamp(0, self.w as i64) as usize;
        let y0 = (cy - r).clamp(0, self.h as i64) as usize;
        let y1 = (cy + r + 1).clamp(0, self.h as i64) as usize;
        let s = |xx: usize, yy: usize| self.sums[yy * (self.w + 1) + xx] as i64;
        s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0) == 0
    }
}
