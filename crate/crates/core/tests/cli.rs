mod common;

use std::fs;

use common::{cli, gen_small, path, read_json, stderr, stdout};
use metric_recon::pipeline::{scene_dir_name, LABELS_FILE, MANIFEST_FILE, POINTS_FILE, REPORT_JSON, REPORT_TEXT};
use metric_recon::scene::format::{load_bundle, read_raster};

#[test]
fn gen_scenes_writes_manifest_and_bundles() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 3, 4);
    let manifest = read_json(&dir.path().join(MANIFEST_FILE));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 4);
    assert!(manifest.get("workers").is_none());
    for i in 0..4 {
        let b = load_bundle(&dir.path().join(scene_dir_name(i))).unwrap();
        assert_eq!(b.image_size(), (48, 64));
    }
}

#[test]
fn eval_pointmap_zero_noise_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 1, 3);
    let out = dir.path().join("eval");
    let run = cli(&["eval-pointmap", "--bundles", path(dir.path()), "--out", path(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report = read_json(&out.join(REPORT_JSON));
    let metrics = &report["summary"]["metrics"];
    assert_eq!(metrics["point_err"], 0.0);
    assert_eq!(metrics["normal_err"], 0.0);
    assert_eq!(fs::read_to_string(out.join(REPORT_TEXT)).unwrap(), stdout(&run));
}

#[test]
fn eval_pose_reports_noise() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 2, 3);
    let out = dir.path().join("pose");
    let run = cli(&[
        "eval-pose",
        "--bundles",
        path(dir.path()),
        "--noise-translation",
        "0.5",
        "--out",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report = read_json(&out.join(REPORT_JSON));
    assert_eq!(report["summary"]["relative"]["rta"], 0.0);
    assert!(report["summary"]["relative"]["rte"].as_f64().unwrap() > 0.03);
    assert_eq!(report["config"]["noise"]["translation"], 0.5);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 4, 2);
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"noise": {"depth": 0.003}, "relative_thresholds": {"translation": 0.05}}"#,
    )
    .unwrap();
    let out = dir.path().join("eval");
    let run = cli(&[
        "eval-pointmap",
        "--bundles",
        path(dir.path()),
        "--noise-depth",
        "0.5",
        "--noise-coords",
        "0.001",
        "--config",
        path(&config),
        "--out",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report = read_json(&out.join(REPORT_JSON));
    assert_eq!(report["config"]["noise"]["depth"], 0.003);
    assert_eq!(report["config"]["noise"]["coords"], 0.001);
    assert_eq!(report["config"]["relative_thresholds"]["translation"], 0.05);
    assert_eq!(report["config"]["relative_thresholds"]["rotation"], 0.03);
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"noise": {"depht": 0.1}}"#).unwrap();
    let run = cli(&[
        "check-grads",
        "--config",
        path(&config),
        "--out",
        path(&dir.path().join("g")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("depht"), "{}", stderr(&run));
}

#[test]
fn invalid_flag_values_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    for args in [
        vec!["gen-scenes", "--cameras", "3", "--out", out],
        vec!["gen-scenes", "--width", "0", "--out", out],
        vec!["check-grads", "--noise-depth", "-1", "--out", out],
        vec!["check-grads", "--grad-tolerance", "0", "--out", out],
    ] {
        let run = cli(&args);
        assert_eq!(run.status.code(), Some(2), "{args:?}: {}", stderr(&run));
        assert!(stderr(&run).starts_with("error: "), "{args:?}: {}", stderr(&run));
    }
}

#[test]
fn missing_bundles_fail_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let run = cli(&[
        "eval-pose",
        "--bundles",
        path(&missing),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("nowhere"), "{}", stderr(&run));
}

#[test]
fn deleted_bundle_is_a_scene_failure() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 5, 3);
    fs::remove_dir_all(dir.path().join(scene_dir_name(1))).unwrap();
    let out = dir.path().join("eval");
    let run = cli(&["eval-pointmap", "--bundles", path(dir.path()), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(1));
    let report = read_json(&out.join(REPORT_JSON));
    let failures = report["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["index"], 1);
    assert_eq!(report["scenes"].as_array().unwrap().len(), 2);
}

#[test]
fn solve_pnp_recovers_the_stored_pose() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 6, 1);
    let bundle = dir.path().join(scene_dir_name(0));
    let out = dir.path().join("pnp");
    let run = cli(&[
        "solve-pnp",
        "--bundle",
        path(&bundle),
        "--view",
        "1",
        "--out",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report = read_json(&out.join(REPORT_JSON));
    assert!(report["translation_error"].as_f64().unwrap() < 1e-6);
    assert!(report["rotation_error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn solve_pnp_with_explicit_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 7, 1);
    let bundle = dir.path().join(scene_dir_name(0));
    let b = load_bundle(&bundle).unwrap();
    let pixels: Vec<[f64; 2]> = b.views[0].keypoints_2d.0.iter().map(|p| [p.x, p.y]).collect();
    let kp = dir.path().join("kp.json");
    fs::write(&kp, serde_json::to_string(&pixels).unwrap()).unwrap();
    let out = dir.path().join("pnp");
    let run = cli(&[
        "solve-pnp",
        "--bundle",
        path(&bundle),
        "--keypoints",
        path(&kp),
        "--out",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report = read_json(&out.join(REPORT_JSON));
    assert!(report["translation_error"].as_f64().unwrap() < 1e-9);

    fs::write(&kp, "[[1.0, 2.0]]").unwrap();
    let run = cli(&[
        "solve-pnp",
        "--bundle",
        path(&bundle),
        "--keypoints",
        path(&kp),
        "--out",
        path(&out),
    ]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn compose_points_writes_rasters() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), 8, 1);
    let bundle = dir.path().join(scene_dir_name(0));
    let out = dir.path().join("points");
    let run = cli(&["compose-points", "--bundle", path(&bundle), "--out", path(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let points = read_raster(&out.join(POINTS_FILE)).unwrap();
    let labels = read_raster(&out.join(LABELS_FILE)).unwrap();
    assert_eq!((points.height, points.width, points.channels), (48, 64, 3));
    assert_eq!((labels.height, labels.width, labels.channels), (48, 64, 1));
    for (i, code) in labels.data.iter().enumerate() {
        let x = points.data[3 * i];
        assert_eq!(*code == 0.0, x.is_nan(), "pixel {i}");
    }
    assert!(out.join(REPORT_JSON).exists());
}

#[test]
fn check_grads_passes() {
    let dir = tempfile::tempdir().unwrap();
    let run = cli(&["check-grads", "--seed", "11", "--out", path(dir.path())]);
    assert!(run.status.success(), "{}", stderr(&run));
    let report = read_json(&dir.path().join(REPORT_JSON));
    assert!(report["failures"].as_array().unwrap().is_empty());
}

#[test]
fn help_lists_every_subcommand() {
    let run = cli(&["--help"]);
    let text = stdout(&run);
    for cmd in [
        "gen-scenes",
        "eval-pointmap",
        "eval-pose",
        "solve-pnp",
        "compose-points",
        "check-grads",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
