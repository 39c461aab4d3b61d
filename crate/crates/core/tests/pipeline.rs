use std::path::Path;

use pipescope_core::pipeline::run_pipeline;
use pipescope_core::synth::CylinderScene;
use pipescope_core::{AlignmentStatus, AnnulusGeometry, PipelineConfig, Stage, UnwrapSpec};

fn scene(frames: usize, spec: UnwrapSpec, advance: f64) -> CylinderScene {
    CylinderScene::new(
        AnnulusGeometry {
            cx: 160.0,
            cy: 120.0,
            r_min: 30.0,
            r_max: 110.0,
        },
        spec,
        320,
        240,
        advance,
        frames,
        42,
    )
}

fn config(scene: &CylinderScene, src: &Path, out: &Path, n_interval: usize) -> PipelineConfig {
    PipelineConfig {
        source: src.to_string_lossy().into_owned(),
        n_interval,
        output_dir: out.to_path_buf(),
        nominal_advance: scene.advance_per_frame * n_interval as f64,
        geometry: scene.geometry,
        unwrap: scene.spec,
        ..Default::default()
    }
}

#[test]
fn sixty_frames_interval_ten() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(60, UnwrapSpec { w: 200, h: 80 }, 2.0);
    let src = dir.path().join("frames");
    sc.write_sequence(&src).unwrap();
    let out = dir.path().join("out");
    let (pano, report) = run_pipeline(&config(&sc, &src, &out, 10)).unwrap();

    assert_eq!(report.m, 6);
    assert_eq!(report.alignments.len(), 5);
    assert!(report
        .alignments
        .iter()
        .all(|a| a.status == AlignmentStatus::Estimated && (a.dy - 20.0).abs() < 0.5 && a.dx.abs() < 0.5));
    let pngs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("panorama"))
        .collect();
    assert_eq!(pngs.len(), 1);
    assert_eq!((pano.width(), pano.height()), (200, 80 + 5 * 20));
    assert!(report.stage_seconds.iter().all(|t| t.seconds >= 0.0));
    assert_eq!(report.stage_seconds.len(), Stage::ALL.len());
}

#[test]
fn six_hundred_frames_keep_angular_extent() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(600, UnwrapSpec { w: 500, h: 80 }, 0.5);
    let src = dir.path().join("frames");
    sc.write_sequence(&src).unwrap();
    let mut cfg = config(&sc, &src, &dir.path().join("out"), 10);
    cfg.save_keyframes = false;
    let (pano, report) = run_pipeline(&cfg).unwrap();
    assert_eq!(report.m, 60);
    assert_eq!(pano.width(), 500);
    assert_eq!(report.panorama_height, 500);
    let fallbacks = report
        .alignments
        .iter()
        .filter(|a| a.status == AlignmentStatus::Fallback)
        .count();
    assert_eq!(fallbacks, 0);
}

#[test]
fn grayscale_and_rgb_sources_agree() {
    // A grey source must unwrap to the same strip as its RGB promotion.
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(1, UnwrapSpec { w: 200, h: 80 }, 1.0);
    let rgb = sc.render_frame(1).to_rgb_image();
    let gray = image::DynamicImage::ImageRgb8(rgb).into_luma8();
    std::fs::create_dir_all(dir.path().join("g")).unwrap();
    gray.save(dir.path().join("g/0001.png")).unwrap();
    image::DynamicImage::ImageLuma8(gray)
        .into_rgb8()
        .save(dir.path().join("c.png"))
        .unwrap();
    std::fs::create_dir_all(dir.path().join("c")).unwrap();
    std::fs::rename(dir.path().join("c.png"), dir.path().join("c/0001.png")).unwrap();

    let read = |sub: &str| {
        let src = pipescope_core::open_source(dir.path().join(sub).to_str().unwrap()).unwrap();
        let f = src.read_frame(1).unwrap();
        pipescope_core::preview_unwrap(&f, &sc.geometry, &sc.spec).unwrap()
    };
    assert_eq!(read("g"), read("c"));
}
