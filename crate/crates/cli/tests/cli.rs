use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use dynrf_core::image::Image;
use dynrf_core::metrics::mse;
use dynrf_core::scene::SceneDataset;
use tempfile::TempDir;

const TINY_CONFIG: &str = "\
seed = 3
warmup_steps = 150
total_steps = 400
rays_per_batch = 64
samples_per_ray = 32
eval_samples_per_ray = 32
consistency_points_per_batch = 16
correspondences_per_batch = 16
radiance_depth = 2
radiance_width = 32
radiance_skip_layer = none
radiance_specular_width = 16
flow_depth = 2
flow_width = 16
checkpoint_interval = 100
log_interval = 10
";

fn dynrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynrf")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dynrf(args);
    assert!(
        out.status.success(),
        "dynrf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Trained {
    _dir: TempDir,
    scene: PathBuf,
    config: PathBuf,
    run: PathBuf,
}

/// One scene and one short training run shared by every test.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("scene");
        let config = dir.path().join("tiny.cfg");
        let run = dir.path().join("run");
        fs::write(&config, TINY_CONFIG).unwrap();
        ok(&[
            "gen-scene", "--preset", "sphere", "--out", s(&scene), "--views", "6", "--times", "3",
            "--size", "12x12", "--correspondences", "64",
        ]);
        ok(&["train", "--scene", s(&scene), "--config", s(&config), "--out", s(&run)]);
        Trained {
            _dir: dir,
            scene,
            config,
            run,
        }
    })
}

#[test]
fn gen_scene_writes_a_loadable_dataset() {
    let t = trained();
    let ds = SceneDataset::load(&t.scene).unwrap();
    assert_eq!(ds.frames.len(), 18);
    assert_eq!((ds.width, ds.height), (12, 12));
    assert_eq!(ds.correspondences.len(), 64);
    assert!(t.run.join("checkpoint.ckpt").is_file());
    let log = fs::read_to_string(t.run.join("loss.csv")).unwrap();
    assert!(log.starts_with("step,"));
}

#[test]
fn render_at_a_training_pose_reproduces_the_frame() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("train.csv");
    let ckpt = t.run.join("checkpoint.ckpt");
    ok(&["eval", "--ckpt", s(&ckpt), "--scene", s(&t.scene), "--split", "train", "--report", s(&report)]);
    let csv = fs::read_to_string(&report).unwrap();
    let all = csv.lines().last().unwrap();
    let train_mse: f64 = all.split(',').nth(1).unwrap().parse().unwrap();

    let ds = SceneDataset::load(&t.scene).unwrap();
    let (index, frame) = ds.frames.iter().enumerate().find(|(_, f)| f.split == dynrf_core::scene::Split::Train).unwrap();
    let png = dir.path().join("frame.png");
    let depth = dir.path().join("frame.depth");
    ok(&[
        "render", "--ckpt", s(&ckpt), "--pose", &index.to_string(), "--time", &frame.time.to_string(),
        "--scene", s(&t.scene), "--out", s(&png), "--depth-out", s(&depth),
    ]);
    let img = Image::read_png(&png).unwrap();
    let err = mse(&img, &frame.image).unwrap();
    assert!(err <= 2.0 * train_mse, "frame mse {err} vs train mse {train_mse}");
    assert_eq!(fs::metadata(&depth).unwrap().len(), 12 * 12 * 4);

    let pose: Vec<String> = frame.camera.camera_to_world.iter().map(|v| v.to_string()).collect();
    let explicit = dir.path().join("explicit.png");
    let mut args = vec!["render", "--ckpt", s(&ckpt), "--time", "0.0", "--size", "10x10", "--out", s(&explicit), "--pose"];
    args.extend(pose.iter().map(String::as_str));
    ok(&args);
    assert_eq!(Image::read_png(&explicit).unwrap().width, 10);
}

#[test]
fn sweep_writes_one_frame_per_time() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&[
        "sweep", "--ckpt", s(&t.run.join("checkpoint.ckpt")), "--trajectory", "orbit", "--times", "-1:1:5",
        "--out", s(&out), "--size", "8x8", "--samples", "16",
    ]);
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, (0..5).map(|i| format!("frame_{i:04}.png")).collect::<Vec<_>>());
}

#[test]
fn eval_reports_every_test_image() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("test.csv");
    ok(&[
        "eval", "--ckpt", s(&t.run.join("checkpoint.ckpt")), "--scene", s(&t.scene), "--split", "test",
        "--report", s(&report), "--samples", "32",
    ]);
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,mse,psnr_db,ssim");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("ALL,"));
}

#[test]
fn restore_demo_produces_reports() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("denoise");
    let stdout = ok(&[
        "restore-demo", "--mode", "denoise", "--scene", s(&t.scene), "--config", s(&t.config), "--out", s(&out),
    ]);
    assert!(stdout.contains("ratio"), "{stdout}");
    for f in ["checkpoint.ckpt", "report.csv", "input_report.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(out.join("renders")).unwrap().count(), 15);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dynrf(&["render", "--bogus"]).status.code(), Some(2));
    assert_eq!(dynrf(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dynrf(&["gen-scene", "--preset", "sphere", "--out", "x", "--size", "0x4"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    let r = dynrf(&["gen-scene", "--preset", "cube", "--out", s(&out)]);
    assert_ne!(r.status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn data_errors_exit_with_three_and_leave_nothing_behind() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");

    let report = dir.path().join("r.csv");
    let r = dynrf(&["eval", "--ckpt", s(&missing), "--scene", s(&t.scene), "--split", "test", "--report", s(&report)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());
    assert!(!report.exists());

    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "total_steps = 0\n").unwrap();
    let run = dir.path().join("run");
    let r = dynrf(&["train", "--scene", s(&t.scene), "--config", s(&bad_cfg), "--out", s(&run)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!run.exists());

    let truncated = dir.path().join("short.ckpt");
    let bytes = fs::read(t.run.join("checkpoint.ckpt")).unwrap();
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let png = dir.path().join("x.png");
    let r = dynrf(&["render", "--ckpt", s(&truncated), "--pose", "0", "--time", "0", "--scene", s(&t.scene), "--out", s(&png)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!png.exists());

    let occupied = dir.path().join("occupied");
    fs::create_dir(&occupied).unwrap();
    fs::write(occupied.join("keep.txt"), "x").unwrap();
    let r = dynrf(&["gen-scene", "--preset", "sphere", "--out", s(&occupied), "--size", "8x8"]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(fs::read_dir(&occupied).unwrap().count(), 1);
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.contains("partial"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn out_of_range_time_is_rejected() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("x.png");
    let r = dynrf(&[
        "render", "--ckpt", s(&t.run.join("checkpoint.ckpt")), "--pose", "0", "--time", "1.5", "--scene",
        s(&t.scene), "--out", s(&png),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!png.exists());
}
