use std::process::Command;

use pipescope_core::synth::CylinderScene;
use pipescope_core::{AnnulusGeometry, UnwrapSpec};

fn pipescope() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pipescope"));
    c.env("RUST_LOG", "warn");
    c
}

fn fixture(dir: &std::path::Path) -> String {
    let scene = CylinderScene::new(
        AnnulusGeometry {
            cx: 160.0,
            cy: 120.0,
            r_min: 30.0,
            r_max: 110.0,
        },
        UnwrapSpec { w: 200, h: 80 },
        320,
        240,
        3.0,
        30,
        3,
    );
    let src = dir.join("frames");
    scene.write_sequence(&src).unwrap();
    src.to_string_lossy().into_owned()
}

const GEOMETRY_FLAGS: [&str; 6] = ["--center", "160,120", "--radii", "30,110", "--size", "200x80"];

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let source = fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("source = \"{source}\"\nn_interval = 5\nnominal_advance = 15.0\n")).unwrap();
    let out = dir.path().join("out");
    let status = pipescope()
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(GEOMETRY_FLAGS)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["panorama.png", "coverage.png", "report.json", "alignments.csv", "keyframes/kf_000030.png"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let source = fixture(dir.path());
    let status = pipescope()
        .args(["run", "--source", &source, "--radii", "110,30"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_interval = \"x\"").unwrap();
    let status = pipescope().args(["run", "--config", bad.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let status = pipescope().args(["run", "--center", "oops"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn pipeline_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let status = pipescope()
        .args(["run", "--source", "/no/such/footage", "--out"])
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn preview_writes_strip() {
    let dir = tempfile::tempdir().unwrap();
    let source = fixture(dir.path());
    let png = dir.path().join("p.png");
    let status = pipescope()
        .args(["preview", "--source", &source, "--frame", "4", "--png", png.to_str().unwrap()])
        .args(GEOMETRY_FLAGS)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
}

#[test]
fn sample_config_is_valid() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/pipescope.toml");
    let cfg = pipescope_core::PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg, pipescope_core::PipelineConfig { source: "frames".into(), ..Default::default() });
    assert!(cfg.validate().unwrap().is_empty());
}

#[test]
fn synth_renders_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let status = pipescope()
        .args(["synth", "--out", out.to_str().unwrap(), "--frames", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let src = pipescope_core::open_source(out.to_str().unwrap()).unwrap();
    assert_eq!((src.n_total(), src.info().width, src.info().height), (2, 1920, 1080));
}
