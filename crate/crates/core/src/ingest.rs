//! Frame sources over image-sequence directories and video files.
//!
//! External indices are 1-based: a source with `n_total` frames accepts `1..=n_total`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported source format: {0}")]
    UnsupportedFormat(String),
    #[error("source contains no images: {0}")]
    EmptySource(PathBuf),
    #[error("frame index {index} out of range 1..={n_total}")]
    IndexOutOfRange { index: usize, n_total: usize },
    #[error("failed to decode {path}: {message}")]
    DecodeError { path: PathBuf, message: String },
    #[error("invalid frame raster: {0}")]
    InvalidFrame(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A decoded raster with its 1-based source index. Row-major, 8 bits per channel.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    index: usize,
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        index: usize,
        width: u32,
        height: u32,
        channels: u8,
        pixels: Vec<u8>,
    ) -> Result<Self, IngestError> {
        if width == 0 || height == 0 {
            return Err(IngestError::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(IngestError::InvalidFrame(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(IngestError::InvalidFrame(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            index,
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_rgb(index: usize, img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            index,
            width,
            height,
            channels: 3,
            pixels: img.into_raw(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Channel values of pixel `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.pixels[i..i + c]
    }

    /// Replicates a single-channel frame into three channels; no-op for RGB frames.
    pub fn into_rgb(self) -> Frame {
        if self.channels == 3 {
            return self;
        }
        let pixels = self.pixels.iter().flat_map(|&g| [g, g, g]).collect();
        Frame {
            channels: 3,
            pixels,
            ..self
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let rgb = self.clone().into_rgb();
        RgbImage::from_raw(rgb.width, rgb.height, rgb.pixels).expect("buffer length checked")
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("index", &self.index)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub uri: String,
    pub n_total: usize,
    pub width: u32,
    pub height: u32,
    pub fps: Option<f64>,
    pub backend: String,
}

/// Random-access frame provider. Reads of distinct indices may happen concurrently.
pub trait FrameSource: Send + Sync {
    fn info(&self) -> &SourceInfo;

    /// Decodes frame `index` (1-based). Grayscale data is promoted to RGB.
    fn read_frame(&self, index: usize) -> Result<Frame, IngestError>;

    fn n_total(&self) -> usize {
        self.info().n_total
    }
}

/// A way of opening some kind of URI as a [`FrameSource`].
pub trait SourceBackend: Send + Sync {
    fn name(&self) -> &str;
    fn accepts(&self, path: &Path) -> bool;
    fn open(&self, path: &Path) -> Result<Box<dyn FrameSource>, IngestError>;
}

pub type SourceRegistry = Registry<dyn SourceBackend>;

/// Backends tried in order by [`open_source`]: `directory`, then `video`.
pub fn source_backends() -> SourceRegistry {
    let mut reg: SourceRegistry = Registry::new("source backend");
    reg.register("directory", |_| Box::new(DirectoryBackend));
    reg.register("video", |_| Box::new(VideoBackend));
    reg
}

/// Opens `uri` with the first registered backend that accepts it.
pub fn open_source(uri: &str) -> Result<Box<dyn FrameSource>, IngestError> {
    open_source_with(&source_backends(), uri, None)
}

/// Opens `uri`, either with the named backend or by probing `registry` in order.
pub fn open_source_with(
    registry: &SourceRegistry,
    uri: &str,
    backend: Option<&str>,
) -> Result<Box<dyn FrameSource>, IngestError> {
    let path = Path::new(uri);
    if !path.exists() {
        return Err(IngestError::NotFound(path.to_path_buf()));
    }
    if let Some(name) = backend {
        let b = registry
            .create(name, &())
            .map_err(|e| IngestError::UnsupportedFormat(e.to_string()))?;
        return b.open(path);
    }
    for name in registry.names() {
        let b = registry.create(&name, &()).expect("name from registry");
        if b.accepts(path) {
            return b.open(path);
        }
    }
    Err(IngestError::UnsupportedFormat(uri.to_owned()))
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
const VIDEO_EXTENSIONS: &[&str] = &[
    "mp4", "m4v", "mov", "avi", "mkv", "webm", "wmv", "mpg", "mpeg", "ts",
];

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

pub struct DirectoryBackend;

impl SourceBackend for DirectoryBackend {
    fn name(&self) -> &str {
        "directory"
    }

    fn accepts(&self, path: &Path) -> bool {
        path.is_dir()
    }

    fn open(&self, path: &Path) -> Result<Box<dyn FrameSource>, IngestError> {
        Ok(Box::new(DirectorySource::open(path)?))
    }
}

/// Image files in a directory, ordered lexicographically by file name.
#[derive(Debug)]
pub struct DirectorySource {
    files: Vec<PathBuf>,
    info: SourceInfo,
}

impl DirectorySource {
    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        if !dir.exists() {
            return Err(IngestError::NotFound(dir.to_path_buf()));
        }
        if !dir.is_dir() {
            return Err(IngestError::UnsupportedFormat(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_file() && has_extension(&path, IMAGE_EXTENSIONS) {
                files.push(path);
            }
        }
        if files.is_empty() {
            return Err(IngestError::EmptySource(dir.to_path_buf()));
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        let (width, height) =
            image::image_dimensions(&files[0]).map_err(|e| IngestError::DecodeError {
                path: files[0].clone(),
                message: e.to_string(),
            })?;
        let info = SourceInfo {
            uri: dir.display().to_string(),
            n_total: files.len(),
            width,
            height,
            fps: None,
            backend: "directory".into(),
        };
        Ok(Self { files, info })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl FrameSource for DirectorySource {
    fn info(&self) -> &SourceInfo {
        &self.info
    }

    fn read_frame(&self, index: usize) -> Result<Frame, IngestError> {
        if index == 0 || index > self.files.len() {
            return Err(IngestError::IndexOutOfRange {
                index,
                n_total: self.files.len(),
            });
        }
        let path = &self.files[index - 1];
        let decode_err = |message: String| IngestError::DecodeError {
            path: path.clone(),
            message,
        };
        let img = image::open(path).map_err(|e| decode_err(e.to_string()))?;
        let rgb = img.into_rgb8();
        if rgb.dimensions() != (self.info.width, self.info.height) {
            let (w, h) = rgb.dimensions();
            return Err(decode_err(format!(
                "frame is {w}x{h}, source is {}x{}",
                self.info.width, self.info.height
            )));
        }
        Ok(Frame::from_rgb(index, rgb))
    }
}

/// Video containers, decoded up front into a temporary image sequence by an external
/// `ffmpeg` executable. Reports `UnsupportedFormat` when no decoder is installed.
pub struct VideoBackend;

fn tool_available(tool: &str) -> bool {
    Command::new(tool)
        .arg("-version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

impl SourceBackend for VideoBackend {
    fn name(&self) -> &str {
        "video"
    }

    fn accepts(&self, path: &Path) -> bool {
        path.is_file() && has_extension(path, VIDEO_EXTENSIONS)
    }

    fn open(&self, path: &Path) -> Result<Box<dyn FrameSource>, IngestError> {
        Ok(Box::new(VideoSource::open(path)?))
    }
}

pub struct VideoSource {
    frames: DirectorySource,
    info: SourceInfo,
    _scratch: tempfile::TempDir,
}

impl VideoSource {
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        if !path.is_file() {
            return Err(IngestError::NotFound(path.to_path_buf()));
        }
        if !tool_available("ffmpeg") {
            return Err(IngestError::UnsupportedFormat(format!(
                "{}: no video decoder available (ffmpeg not found on PATH)",
                path.display()
            )));
        }
        let scratch = tempfile::Builder::new().prefix("pipescope-video").tempdir()?;
        let pattern = scratch.path().join("%08d.png");
        let out = Command::new("ffmpeg")
            .args(["-v", "error", "-nostdin", "-i"])
            .arg(path)
            .args(["-vsync", "0", "-f", "image2"])
            .arg(&pattern)
            .output()?;
        if !out.status.success() {
            return Err(IngestError::DecodeError {
                path: path.to_path_buf(),
                message: String::from_utf8_lossy(&out.stderr).trim().to_owned(),
            });
        }
        let frames = DirectorySource::open(scratch.path()).map_err(|e| match e {
            IngestError::EmptySource(_) => IngestError::EmptySource(path.to_path_buf()),
            other => other,
        })?;
        let info = SourceInfo {
            uri: path.display().to_string(),
            fps: probe_fps(path),
            backend: "video".into(),
            ..frames.info().clone()
        };
        Ok(Self {
            frames,
            info,
            _scratch: scratch,
        })
    }
}

fn probe_fps(path: &Path) -> Option<f64> {
    let out = Command::new("ffprobe")
        .args([
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-show_entries",
            "stream=r_frame_rate",
            "-of",
            "default=nw=1:nk=1",
        ])
        .arg(path)
        .output()
        .ok()?;
    let text = String::from_utf8_lossy(&out.stdout);
    let (num, den) = text.trim().split_once('/')?;
    let (num, den): (f64, f64) = (num.parse().ok()?, den.parse().ok()?);
    (den > 0.0).then(|| num / den)
}

impl FrameSource for VideoSource {
    fn info(&self) -> &SourceInfo {
        &self.info
    }

    fn read_frame(&self, index: usize) -> Result<Frame, IngestError> {
        self.frames.read_frame(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    fn write_rgb(dir: &Path, name: &str, w: u32, h: u32, seed: u8) {
        let img = RgbImage::from_fn(w, h, |x, y| {
            Rgb([seed.wrapping_add(x as u8), y as u8, seed.wrapping_mul(3)])
        });
        img.save(dir.join(name)).unwrap();
    }

    #[test]
    fn directory_counts_images_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["0003.png", "0001.png", "0002.png"].iter().enumerate() {
            write_rgb(dir.path(), name, 8, 6, i as u8 * 10);
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let src = open_source(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(src.n_total(), 3);
        assert_eq!((src.info().width, src.info().height), (8, 6));
        assert_eq!(src.info().backend, "directory");
        // 0001.png was written second (seed 10).
        let f = src.read_frame(1).unwrap();
        assert_eq!(f.pixel(0, 0), &[10, 0, 30]);
        assert_eq!(f.index(), 1);
    }

    #[test]
    fn single_hd_image() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::new(1920, 1080).save(dir.path().join("a.png")).unwrap();
        let src = open_source(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(src.n_total(), 1);
        assert_eq!((src.info().width, src.info().height), (1920, 1080));
        let f = src.read_frame(1).unwrap();
        assert_eq!((f.width(), f.height()), (1920, 1080));
    }

    #[test]
    fn missing_path_is_not_found() {
        let err = open_source("/definitely/not/here").err().unwrap();
        assert!(matches!(err, IngestError::NotFound(_)));
    }

    #[test]
    fn empty_directory_is_empty_source() {
        let dir = tempfile::tempdir().unwrap();
        let err = open_source(dir.path().to_str().unwrap()).err().unwrap();
        assert!(matches!(err, IngestError::EmptySource(_)));
    }

    #[test]
    fn unknown_file_type_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.bin");
        std::fs::write(&p, [0u8; 16]).unwrap();
        let err = open_source(p.to_str().unwrap()).err().unwrap();
        assert!(matches!(err, IngestError::UnsupportedFormat(_)));
    }

    #[test]
    fn video_without_decoder_is_unsupported() {
        if tool_available("ffmpeg") {
            return;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.mp4");
        std::fs::write(&p, [0u8; 64]).unwrap();
        let err = open_source(p.to_str().unwrap()).err().unwrap();
        assert!(matches!(err, IngestError::UnsupportedFormat(_)), "{err}");
    }

    #[test]
    fn index_bounds_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5u8 {
            write_rgb(dir.path(), &format!("{i:04}.png"), 16, 16, i * 40);
        }
        let src = open_source(dir.path().to_str().unwrap()).unwrap();
        assert!(matches!(
            src.read_frame(0),
            Err(IngestError::IndexOutOfRange { index: 0, n_total: 5 })
        ));
        assert!(matches!(
            src.read_frame(6),
            Err(IngestError::IndexOutOfRange { index: 6, n_total: 5 })
        ));
        let a = src.read_frame(5).unwrap();
        let b = src.read_frame(5).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        for i in 1..=src.n_total() {
            src.read_frame(i).unwrap();
        }
    }

    #[test]
    fn grayscale_is_promoted_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::from_pixel(4, 3, Luma([77]))
            .save(dir.path().join("g.png"))
            .unwrap();
        let src = open_source(dir.path().to_str().unwrap()).unwrap();
        let f = src.read_frame(1).unwrap();
        assert_eq!(f.channels(), 3);
        assert_eq!(f.pixel(3, 2), &[77, 77, 77]);
    }

    #[test]
    fn mismatched_frame_size_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb(dir.path(), "0001.png", 8, 8, 0);
        write_rgb(dir.path(), "0002.png", 9, 8, 0);
        let src = open_source(dir.path().to_str().unwrap()).unwrap();
        assert!(matches!(
            src.read_frame(2),
            Err(IngestError::DecodeError { .. })
        ));
    }

    #[test]
    fn frame_constructor_checks_buffer() {
        assert!(Frame::new(1, 2, 2, 3, vec![0; 12]).is_ok());
        assert!(Frame::new(1, 2, 2, 3, vec![0; 11]).is_err());
        assert!(Frame::new(1, 0, 2, 1, vec![]).is_err());
        assert!(Frame::new(1, 2, 2, 2, vec![0; 8]).is_err());
        let g = Frame::new(1, 2, 1, 1, vec![5, 9]).unwrap().into_rgb();
        assert_eq!(g.pixels(), &[5, 5, 5, 9, 9, 9]);
    }

    #[test]
    fn forced_backend_by_name() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb(dir.path(), "a.png", 4, 4, 0);
        let reg = source_backends();
        let uri = dir.path().to_str().unwrap();
        assert!(open_source_with(&reg, uri, Some("directory")).is_ok());
        assert!(matches!(
            open_source_with(&reg, uri, Some("camera")),
            Err(IngestError::UnsupportedFormat(_))
        ));
    }
}
