use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "z_dim=8",
    "--set", "mapping_width=16",
    "--set", "mapping_layers=1",
    "--set", "field_width=16",
    "--set", "field_layers=2",
    "--set", "disc_widths=8,8",
    "--set", "enc_widths=8,8",
    "--set", "perceptual_widths=4,4",
    "--set", "batch_size=2",
    "--set", "stages=0:16:6:1e-4:4e-4:4e-4",
];

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pix2nerf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PIX2NERF_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&[], dir.path())), 2);
    assert_eq!(code(&run(&["fly"], dir.path())), 2);
    assert_eq!(code(&run(&["sample", "--n", "x"], dir.path())), 2);
    assert_eq!(code(&run(&["train", "--ablation", "Q"], dir.path())), 2);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("make-dataset"));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sample", "--checkpoint", "/nonexistent/ckpt"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    assert_eq!(code(&run(&["make-dataset", "--set", "no_such_key=1"], dir.path())), 1);
    assert_eq!(code(&run(&["make-dataset", "--set", "z_dim=-3"], dir.path())), 1);
    let frozen = with_tiny(&["train", "--ablation", "A", "--iters", "1"]);
    assert_eq!(code(&run(&frozen, dir.path())), 1);
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("run_manifest.json")).expect("manifest written");
    serde_json::from_str(&text).unwrap()
}

#[test]
fn end_to_end_commands() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let out = run(&["make-dataset", "--scenes", "6", "--resolution", "16", "--seed", "4"], &data);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("ground_truth.json").exists());
    assert_eq!(manifest(&data)["command"], "make-dataset");

    let train_dir = root.path().join("train");
    let data_arg = data.to_str().unwrap();
    let out = run(&with_tiny(&["train", "--iters", "3", "--dataset", data_arg]), &train_dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(train_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(train_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 3);
    assert_eq!(manifest(&train_dir)["seed"], 0);

    let replay_dir = root.path().join("replay");
    let manifest_path = train_dir.join("run_manifest.json");
    let replay = run(&["train", "--dataset", data_arg, "--config", manifest_path.to_str().unwrap()], &replay_dir);
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(
        std::fs::read(train_dir.join("train_log.csv")).unwrap(),
        std::fs::read(replay_dir.join("train_log.csv")).unwrap()
    );

    let resumed = run(
        &["train", "--iters", "4", "--dataset", data_arg, "--resume", train_dir.join("checkpoint").to_str().unwrap()],
        &train_dir,
    );
    assert_eq!(code(&resumed), 0, "{}", String::from_utf8_lossy(&resumed.stderr));
    let log = std::fs::read_to_string(train_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    let ckpt = train_dir.join("checkpoint");
    let ckpt = ckpt.to_str().unwrap();
    let img = data.join("view_00000.png");
    let img = img.to_str().unwrap();
    let img_b = data.join("view_00001.png");
    let img_b = img_b.to_str().unwrap();
    let cases: Vec<(&str, Vec<&str>, &str)> = vec![
        ("render", vec!["render", "--checkpoint", ckpt, "--input", img, "--poses", "turntable:3"], "view_002.png"),
        ("sample", vec!["sample", "--checkpoint", ckpt, "--n", "2"], "sample_001.png"),
        (
            "interpolate",
            vec!["interpolate", "--checkpoint", ckpt, "--a", img, "--b", img_b, "--steps", "3"],
            "frame_002.png",
        ),
        ("refine", vec!["refine", "--checkpoint", ckpt, "--input", img, "--iterations", "2"], "refine.json"),
        (
            "evaluate",
            vec!["evaluate", "--checkpoint", ckpt, "--dataset", data_arg, "--n-samples", "4"],
            "metrics.json",
        ),
    ];
    for (name, args, expected) in cases {
        let dir = root.path().join(name);
        let out = run(&args, &dir);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.join(expected).exists(), "{name} wrote {expected}");
        assert_eq!(manifest(&dir)["command"], name);
    }
    let metrics = std::fs::read_to_string(root.path().join("evaluate/metrics.csv")).unwrap();
    for m in ["fid", "kid", "psnr", "ssim"] {
        assert!(metrics.contains(&format!(",{m},")), "metrics.csv has {m}");
    }
}
