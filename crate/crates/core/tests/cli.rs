use std::path::Path;
use std::process::{Command, Output};

use edgereg::imaging::{read_pnm, PnmImage};
use edgereg::io::{read_frames, read_intrinsics, read_pose};
use edgereg::pose_optimizer::SolveReport;
use edgereg::synthetic_bench::rotation_error_deg;

fn edgereg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgereg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "builtin:corridor", path(dir)];
    args.extend_from_slice(extra);
    let out = edgereg(&args);
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn register_recovers_a_synthetic_case() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--seed", "4"]);
    let out = edgereg(&["register", path(&tmp.path().join("register.ini"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tmp.path().join("out");
    let truth = read_pose(&tmp.path().join("pose_true.txt")).unwrap();
    let refined = read_pose(&dir.join("pose_refined.txt")).unwrap();
    assert!(rotation_error_deg(&refined, &truth) < 0.2);
    assert!(refined.center_distance(&truth) < 0.01);

    let report = SolveReport::from_kv(&std::fs::read_to_string(dir.join("report.txt")).unwrap()).unwrap();
    assert!(report.converged);
    assert_eq!(report.pose, refined);
    assert_eq!(SolveReport::from_kv(&report.to_kv()).unwrap(), report);

    let intr = read_intrinsics(&tmp.path().join("intrinsics.txt")).unwrap();
    for name in ["overlay_initial.ppm", "overlay_refined.ppm"] {
        match read_pnm(&dir.join(name)).unwrap() {
            PnmImage::Rgb(img) => assert_eq!((img.width, img.height), (intr.width, intr.height)),
            other => panic!("{name} is not RGB: {other:?}"),
        }
    }
    for (name, maxval) in [("costmap.pgm", 255), ("depth.pgm", 65535)] {
        match read_pnm(&dir.join(name)).unwrap() {
            PnmImage::Gray { width, height, maxval: m, .. } => {
                assert_eq!((width, height, m), (intr.width, intr.height, maxval))
            }
            other => panic!("{name} is not gray: {other:?}"),
        }
    }
}

#[test]
fn synth_outputs_parse_back() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--seed", "1", "--rot-deg", "1.5", "--trans-m", "0.02"]);
    let truth = read_pose(&tmp.path().join("pose_true.txt")).unwrap();
    let init = read_pose(&tmp.path().join("pose_initial.txt")).unwrap();
    assert!((rotation_error_deg(&init, &truth) - 1.5).abs() < 1e-9);
    assert!((init.center_distance(&truth) - 0.02).abs() < 1e-9);
    assert!(!read_frames(&tmp.path().join("frames.txt")).unwrap().is_empty());
    let scene = edgereg::synthetic_bench::SceneSpec::load(&tmp.path().join("scene.ini")).unwrap();
    assert_eq!(scene, edgereg::synthetic_bench::SceneSpec::corridor(0));
}

#[test]
fn dimension_mismatch_exits_1_naming_both_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    std::fs::write(tmp.path().join("intrinsics.txt"), "500 500 159.5 119.5 320 240\n").unwrap();
    let out = edgereg(&["register", path(&tmp.path().join("register.ini"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("640x480") && err.contains("320x240"), "{err}");
}

#[test]
fn five_features_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let features = "# frame_id index x y z\n\
                    0 0 -1.5 1.4 6.0\n\
                    0 1 1.5 1.4 7.0\n\
                    0 2 -1.5 -1.3 8.0\n\
                    0 3 1.5 -1.3 9.0\n\
                    0 4 0.35 0.7 12.0\n";
    std::fs::write(tmp.path().join("features.txt"), features).unwrap();
    let config = "input.image = image.pgm\n\
                  input.intrinsics = intrinsics.txt\n\
                  input.pose = pose_true.txt\n\
                  input.features = features.txt\n\
                  output.dir = out\n";
    std::fs::write(tmp.path().join("few.ini"), config).unwrap();
    let out = edgereg(&["register", path(&tmp.path().join("few.ini"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn parse_errors_exit_1_with_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    std::fs::write(tmp.path().join("pose_initial.txt"), "# pose\n1 0 0 zero 0 0 0\n").unwrap();
    let out = edgereg(&["register", path(&tmp.path().join("register.ini"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pose_initial.txt:2"), "{err}");

    std::fs::write(tmp.path().join("bad.ini"), "output.dir = out\ncanny.sigma = 2\n").unwrap();
    let out = edgereg(&["register", path(&tmp.path().join("bad.ini"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.ini:2"));
}

#[test]
fn register_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--seed", "2", "--range-noise", "0.005", "--image-noise", "2"]);
    let config = tmp.path().join("register.ini");
    let read_all = || -> Vec<Vec<u8>> {
        edgereg::pipeline::REGISTER_OUTPUTS
            .iter()
            .map(|f| std::fs::read(tmp.path().join("out").join(f)).unwrap())
            .collect()
    };
    assert!(edgereg(&["register", path(&config)]).status.success());
    let first = read_all();
    assert!(edgereg(&["register", path(&config)]).status.success());
    assert_eq!(first, read_all());
}

fn bench_rows(dir: &Path, config: &str) -> Vec<Vec<String>> {
    std::fs::write(dir.join("bench.ini"), config).unwrap();
    let out = edgereg(&["bench", path(&dir.join("bench.ini"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("out").join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,rot_err_init_deg,trans_err_init_m,rot_err_final_deg,trans_err_final_m,iterations,converged,status"
    );
    lines.map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn bench_writes_one_row_per_case() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = bench_rows(
        tmp.path(),
        "bench.seeds = 3\nbench.first_seed = 5\nbench.rotation_deg = 1, 2\nbench.translation_m = 0.05\noutput.dir = out\n",
    );
    assert_eq!(rows.len(), 6);
    for row in &rows {
        assert_eq!(row.len(), 8);
        let init: f64 = row[1].parse().unwrap();
        assert!((init - 1.0).abs() < 1e-9 || (init - 2.0).abs() < 1e-9);
    }
}

#[test]
fn zero_perturbation_sweep_stays_at_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = bench_rows(
        tmp.path(),
        "bench.seeds = 4\nbench.rotation_deg = 0\nbench.translation_m = 0\noutput.dir = out\n",
    );
    assert_eq!(rows.len(), 4);
    for row in rows {
        let rot: f64 = row[3].parse().unwrap();
        let trans: f64 = row[4].parse().unwrap();
        assert!(rot <= 0.05 && trans <= 0.002, "seed {}: {rot} deg, {trans} m", row[0]);
    }
}

#[test]
fn canny_verb_writes_an_edge_image() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let edges = tmp.path().join("edges.pgm");
    let out = edgereg(&["canny", path(&tmp.path().join("image.pgm")), path(&edges), "--low", "60"]);
    assert!(out.status.success());
    match read_pnm(&edges).unwrap() {
        PnmImage::Gray { width, height, samples, .. } => {
            assert_eq!((width, height), (640, 480));
            assert!(samples.iter().any(|s| *s == 255));
        }
        other => panic!("not gray: {other:?}"),
    }
}

#[test]
fn unknown_builtin_scene_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = edgereg(&["synth", "builtin:atrium", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}
