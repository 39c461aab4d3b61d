//! Command-line arguments and their mapping onto [`PipelineConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pipescope_core::config::ConfigError;
use pipescope_core::PipelineConfig;

/// Exit code for invalid configuration or arguments.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for a failed run.
pub const EXIT_PIPELINE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pipescope", version, about = "Pipe inner-wall panoramas from annular endoscope footage")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline and write the panorama, keyframes and report.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Write match overlays for every registered pair.
        #[arg(long)]
        debug: bool,
    },
    /// Unwrap a single frame with the current geometry.
    Preview {
        #[command(flatten)]
        overrides: Overrides,
        /// 1-based frame index.
        #[arg(long)]
        frame: usize,
        /// Output PNG path (default: <out>/preview_<frame>.png).
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Render a synthetic pipe sequence (HD frames, default geometry) for trying the tools.
    Synth {
        /// Output directory for NNNN.png frames.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        /// Axial advance per frame, in strip rows.
        #[arg(long, default_value_t = 7.5)]
        advance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Start the local HTTP service.
    Serve {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with the static UI build.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image directory or video file.
    #[arg(long)]
    pub source: Option<String>,
    /// Frame interval between keyframes.
    #[arg(long)]
    pub interval: Option<usize>,
    /// Annulus centre as CX,CY (column, row).
    #[arg(long, value_parser = parse_pair, value_name = "CX,CY")]
    pub center: Option<(f64, f64)>,
    /// Radial band as RMIN,RMAX.
    #[arg(long, value_parser = parse_pair, value_name = "RMIN,RMAX")]
    pub radii: Option<(f64, f64)>,
    /// Strip size as WxH.
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub size: Option<(u32, u32)>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Registration random seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated numbers, got '{s}'"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    Ok((p(a)?, p(b)?))
}

pub fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let p = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("'{t}': {e}"));
    Ok((p(a)?, p(b)?))
}

impl Overrides {
    /// Loads the config file (or defaults) and applies the flags on top.
    pub fn resolve(&self) -> Result<PipelineConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        self.apply(&mut c);
        Ok(c)
    }

    pub fn apply(&self, c: &mut PipelineConfig) {
        if let Some(s) = &self.source {
            c.source = s.clone();
        }
        if let Some(n) = self.interval {
            c.n_interval = n;
        }
        if let Some((cx, cy)) = self.center {
            c.geometry.cx = cx;
            c.geometry.cy = cy;
        }
        if let Some((r_min, r_max)) = self.radii {
            c.geometry.r_min = r_min;
            c.geometry.r_max = r_max;
        }
        if let Some((w, h)) = self.size {
            c.unwrap.w = w;
            c.unwrap.h = h;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(seed) = self.seed {
            c.registration.seed = seed;
        }
    }
}
