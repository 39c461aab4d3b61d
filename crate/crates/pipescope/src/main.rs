use std::net::SocketAddr;
use std::process::ExitCode;

use clap::Parser;
use pipescope::cli::{Cli, Command, EXIT_CONFIG, EXIT_PIPELINE};
use pipescope::jobs::JobManager;
use pipescope::server::{serve, AppState};
use pipescope_core::imageio::write_rgb_png;
use pipescope_core::ingest::{open_source_with, source_backends};
use pipescope_core::synth::CylinderScene;
use pipescope_core::unwrap::UnwrapError;
use pipescope_core::{preview_unwrap, run_pipeline, PipelineError};

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { overrides, debug } => {
            let mut config = match overrides.resolve() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            config.debug |= debug;
            match run_pipeline(&config) {
                Ok((_, report)) => {
                    println!(
                        "{} keyframes -> {}x{} panorama in {:.2} s, written to {}",
                        report.m,
                        report.panorama_width,
                        report.panorama_height,
                        report.total_seconds,
                        report.output_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e @ PipelineError::Config(_)) => fail(EXIT_CONFIG, e),
                Err(e) => fail(EXIT_PIPELINE, e),
            }
        }
        Command::Preview { overrides, frame, png } => {
            let config = match overrides.resolve() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            if config.source.is_empty() {
                return fail(EXIT_CONFIG, "no source given");
            }
            let src = match open_source_with(&source_backends(), &config.source, config.source_backend.as_deref()) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_PIPELINE, e),
            };
            let f = match src.read_frame(frame) {
                Ok(f) => f,
                Err(e) => return fail(EXIT_PIPELINE, e),
            };
            let strip = match preview_unwrap(&f, &config.geometry, &config.unwrap) {
                Ok(s) => s,
                Err(e @ (UnwrapError::InvalidGeometry(_) | UnwrapError::InvalidSpec { .. })) => {
                    return fail(EXIT_CONFIG, e)
                }
                Err(e) => return fail(EXIT_PIPELINE, e),
            };
            let path = png.unwrap_or_else(|| config.output_dir.join(format!("preview_{frame}.png")));
            if let Some(parent) = path.parent() {
                let _ = std::fs::create_dir_all(parent);
            }
            if let Err(e) = write_rgb_png(&path, &strip.to_rgb_image()) {
                return fail(EXIT_PIPELINE, e);
            }
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Command::Synth {
            out,
            frames,
            advance,
            seed,
        } => {
            if frames == 0 || !advance.is_finite() || advance < 0.0 {
                return fail(EXIT_CONFIG, "frames must be positive and advance non-negative");
            }
            let scene = CylinderScene::hd_default(advance, frames, seed);
            match scene.write_sequence(&out) {
                Ok(()) => {
                    println!("{frames} frames written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_PIPELINE, e),
            }
        }
        Command::Serve { overrides, port, host, ui } => {
            let config = match overrides.resolve() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let addr: SocketAddr = match format!("{host}:{port}").parse() {
                Ok(a) => a,
                Err(e) => return fail(EXIT_CONFIG, format!("bad listen address: {e}")),
            };
            let jobs = JobManager::new(config.output_dir.clone());
            let default_source = (!config.source.is_empty()).then(|| config.source.clone());
            let state = AppState::new(jobs, default_source);
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => return fail(EXIT_PIPELINE, e),
            };
            match rt.block_on(serve(addr, state, ui)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_PIPELINE, format!("cannot serve on {addr}: {e}")),
            }
        }
    }
}
