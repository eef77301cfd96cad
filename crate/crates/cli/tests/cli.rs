//! End-to-end runs of the `phasereg` binary against generated fixtures.

use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::Array2;
use phasereg::grid::GridSpec;
use phasereg::Grid;
use phasereg_cli::imageio::save_field_png;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_phasereg")
}

fn disc_image(grid: &GridSpec, centers: &[(f64, f64)], radius: f64) -> Grid {
    Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
        let inside = centers.iter().any(|&(cx, cy)| {
            let dx = grid.coord(i) - cx;
            let dy = grid.coord(j) - cy;
            dx * dx + dy * dy <= radius * radius
        });
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

fn write_fixture(path: &Path, grid: &GridSpec, centers: &[(f64, f64)], radius: f64) {
    save_field_png(&disc_image(grid, centers, radius), path).unwrap();
}

fn manifest_value(manifest: &str, key: &str) -> Option<String> {
    manifest.lines().find_map(|line| {
        let (k, v) = line.split_once(" = ")?;
        (k == key).then(|| v.to_string())
    })
}

#[test]
fn identical_shapes_converge_with_zero_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::with_coercion(33, 1.0, 6, 0.1).unwrap();
    let img = dir.path().join("a.png");
    write_fixture(&img, &grid, &[(0.0, 0.0)], 0.35);
    let out = dir.path().join("out");

    let status = Command::new(binary())
        .args(["--initial", img.to_str().unwrap()])
        .args(["--target", img.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(["--N", "33", "--T", "6"])
        .arg("--discrepancy")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    let d_sigma: f64 = manifest_value(&manifest, "result.d_sigma")
        .expect("d_sigma in manifest")
        .parse()
        .unwrap();
    assert!(d_sigma.abs() <= 1e-3, "d_sigma = {d_sigma}");
    assert_eq!(
        manifest_value(&manifest, "result.forward.termination").as_deref(),
        Some("converged")
    );
    assert!(out.join("metrics_forward.csv").is_file());
    assert!(out.join("metrics_backward.csv").is_file());
}

#[test]
fn disc_splitting_run_exits_zero_with_two_components() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::with_coercion(64, 1.0, 10, 0.1).unwrap();
    let initial = dir.path().join("one_disc.png");
    let target = dir.path().join("two_discs.png");
    write_fixture(&initial, &grid, &[(0.0, 0.0)], 0.3);
    write_fixture(&target, &grid, &[(-0.4, 0.0), (0.4, 0.0)], 0.2);
    let out = dir.path().join("out");

    let output = Command::new(binary())
        .args(["--initial", initial.to_str().unwrap()])
        .args(["--target", target.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(["--N", "64", "--T", "10"])
        .args(["--u-block-scale", "1e4"])
        .args(["--grad-tol", "0.15", "--max-iters", "400"])
        .arg("--frames")
        .arg("--decompose")
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    // Even N is coerced with a warning.
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("N = 64 is even"));

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("iteration,E,grad_norm,component_count"));
    let last = lines.last().expect("at least one metrics row");
    let comps: usize = last.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(comps, 2, "last metrics row: {last}");

    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert_eq!(
        manifest_value(&manifest, "result.termination").as_deref(),
        Some("converged")
    );
    let counts = manifest_value(&manifest, "result.forward.component_counts_per_frame").unwrap();
    assert!(counts.ends_with(",2"), "per-frame counts: {counts}");

    // Exported artifacts exist.
    assert!(out.join("controls_forward.bin").is_file());
    assert!(out.join("frames_forward").join("frame_000.png").is_file());
    assert!(out.join("frames_forward").join("frame_009.bin").is_file());
    assert!(out.join("decomposition").join("v_only_endpoint.png").is_file());
    assert!(out.join("decomposition").join("u_only_endpoint.png").is_file());
    assert!(out.join("decomposition").join("flow.png").is_file());

    // The diffeomorphic part alone never splits the shape.
    assert_eq!(
        manifest_value(&manifest, "result.decomposition.advected_components").as_deref(),
        Some("1")
    );
}

#[test]
fn missing_target_is_an_io_error_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::with_coercion(17, 1.0, 4, 0.1).unwrap();
    let initial = dir.path().join("a.png");
    write_fixture(&initial, &grid, &[(0.0, 0.0)], 0.3);
    let out = dir.path().join("out");

    let status = Command::new(binary())
        .args(["--initial", initial.to_str().unwrap()])
        .args(["--target", dir.path().join("missing.png").to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(["--N", "17", "--T", "4"])
        .arg("--frames")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists(), "no partial output may be created");
}

#[test]
fn reruns_produce_identical_manifests_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::with_coercion(33, 1.0, 6, 0.1).unwrap();
    let initial = dir.path().join("a.png");
    let target = dir.path().join("b.png");
    write_fixture(&initial, &grid, &[(-0.1, 0.0)], 0.3);
    write_fixture(&target, &grid, &[(0.15, 0.05)], 0.25);
    let out = dir.path().join("out");

    let run = || {
        let status = Command::new(binary())
            .args(["--initial", initial.to_str().unwrap()])
            .args(["--target", target.to_str().unwrap()])
            .args(["--out", out.to_str().unwrap()])
            .args(["--N", "33", "--T", "6", "--max-iters", "20"])
            .args(["--grad-tol", "1e-8", "--checkpoint-every", "8"])
            .arg("--frames")
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(3)); // max-iters on purpose
        (
            std::fs::read(out.join("manifest.txt")).unwrap(),
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("frames_forward").join("frame_005.png")).unwrap(),
        )
    };
    let (m1, c1, f1) = run();
    let (m2, c2, f2) = run();
    assert_eq!(m1, m2, "manifest bytes differ between reruns");
    assert_eq!(c1, c2, "metrics bytes differ between reruns");
    assert_eq!(f1, f2, "frame bytes differ between reruns");

    // Checkpoints were written and read back.
    let ckpt = out.join("checkpoints").join("forward_iter_000016.ckpt");
    assert!(ckpt.is_file());
    let mut file = std::fs::File::open(&ckpt).unwrap();
    let (header, state) = phasereg::optim::read_checkpoint(&mut file).unwrap();
    assert_eq!(header.n, 33);
    assert_eq!(state.iter, 16);
}

#[test]
fn config_file_drives_a_run_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::with_coercion(21, 1.0, 4, 0.1).unwrap();
    let img = dir.path().join("a.png");
    write_fixture(&img, &grid, &[(0.0, 0.0)], 0.3);
    let out: PathBuf = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "initial = {}\ntarget = {}\nout = {}\nN = 21\nT = 4\nmax-iters = 5\n",
            img.display(),
            img.display(),
            out.display()
        ),
    )
    .unwrap();

    let status = Command::new(binary())
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--T", "5"]) // overrides the file
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert_eq!(manifest_value(&manifest, "grid.t_steps").as_deref(), Some("5"));
    assert_eq!(manifest_value(&manifest, "result.rho").as_deref(), Some("0"));
}
