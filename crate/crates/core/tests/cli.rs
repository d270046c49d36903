use std::path::Path;
use std::process::{Command, Output};

fn beliefsweep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beliefsweep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn profile() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs/synthetic.toml")
        .display()
        .to_string()
}

#[test]
fn synth_depth_fuse_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let s = scene.to_str().unwrap();
    let cfg = profile();

    let out = beliefsweep(&["synth", "--out", s, "--seed", "1"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for f in [
        "images/00000002.png",
        "cams/00000000_cam.txt",
        "depth_gt/00000001.pfm",
        "scene.toml",
    ] {
        assert!(scene.join(f).exists(), "{f}");
    }

    let out = beliefsweep(&["depth", s, "--config", &cfg, "--threads", "2"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().filter(|l| l.starts_with("view ")).count(), 3);
    assert!(scene.join("depth/00000000.png").exists());

    let ply_a = dir.path().join("a.ply");
    let ply_b = dir.path().join("b.ply");
    let out = beliefsweep(&["fuse", s, "--config", &cfg, "--out", ply_a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out = beliefsweep(&[
        "fuse",
        s,
        "--config",
        &cfg,
        "--threads",
        "1",
        "--out",
        ply_b.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&ply_a).unwrap(), std::fs::read(&ply_b).unwrap());

    let est = scene.join("depth/00000000.pfm");
    let gt = scene.join("depth_gt/00000000.pfm");
    let out = beliefsweep(&["metrics", est.to_str().unwrap(), gt.to_str().unwrap()]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["fraction_within"].as_f64().unwrap() >= 0.95);
    assert_eq!(report["thresholds"].as_array().unwrap().len(), 4);

    // strict threshold: empty cloud, warning, success
    let out = beliefsweep(&[
        "fuse",
        s,
        "--config",
        &cfg,
        "--tau",
        "0",
        "--out",
        ply_a.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(text(&out.stderr).contains("warning"));
    assert!(text(&out.stdout).starts_with("0 points"));
}

#[test]
fn malformed_camera_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let s = scene.to_str().unwrap();
    let spec = dir.path().join("small.toml");
    std::fs::write(
        &spec,
        r#"
width = 32
height = 24
focal = 30.0
depth_range = [2.0, 8.0]
texture_reference_depth = 4.0
cameras = [{ center = [0.0, 0.0, 0.0] }, { center = [0.3, 0.0, 0.0] }]
primitives = [{ kind = "plane", origin = [0.0, 0.0, 4.0], u = [1.0, 0.0, 0.0], v = [0.0, 1.0, 0.0] }]
"#,
    )
    .unwrap();
    let out = beliefsweep(&["synth", "--spec", spec.to_str().unwrap(), "--out", s]);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let cam = scene.join("cams/00000001_cam.txt");
    let lines: Vec<String> = std::fs::read_to_string(&cam)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let broken: Vec<String> = lines
        .iter()
        .enumerate()
        .map(|(k, l)| {
            if k == 5 {
                "1 0 0 0 1 zero 0 0 1".to_string()
            } else {
                l.clone()
            }
        })
        .collect();
    std::fs::write(&cam, broken.join("\n")).unwrap();
    let out = beliefsweep(&["depth", s]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("00000001_cam.txt:6"), "{err}");

    std::fs::remove_file(&cam).unwrap();
    let out = beliefsweep(&["depth", s]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fuse_without_depth_maps_fails() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("scene");
    let s = s.to_str().unwrap();
    assert!(beliefsweep(&["synth", "--out", s]).status.success());
    let out = beliefsweep(&["fuse", s, "--min-views", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("missing depth map"));
}

#[test]
fn verify_and_gradcheck_exit_codes() {
    let out = beliefsweep(&["verify", "--quick"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let out = beliefsweep(&["verify", "--quick", "--mutate", "swap-alpha"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("failed: gradient"));

    let dir = tempfile::tempdir().unwrap();
    let out = beliefsweep(&["gradcheck", "--seeds", "2", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(saved["reports"].as_array().unwrap().len(), 2);
}

#[test]
fn thread_override_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_beliefsweep"))
        .args(["gradcheck", "--seeds", "1"])
        .env("BELIEFSWEEP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("BELIEFSWEEP_THREADS"));
}
