use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use texsplat_cli::config::KEYS;

fn texsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texsplat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = texsplat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 10] = [
    "--set",
    "stage1_iters=20",
    "--set",
    "stage2_iters=20",
    "--set",
    "num_splats=12",
    "--set",
    "sh_degree=0",
    "--set",
    "eval_every=10",
];

fn synth(dir: &Path, scene: &str) {
    ok(&[
        "synth",
        "--scene",
        scene,
        "--views",
        "9",
        "--res",
        "24",
        "--seed",
        "7",
        "--out",
        p(dir),
    ]);
}

fn train_tiny(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--out",
        p(out),
        "--threads",
        "1",
    ];
    args.extend(TINY);
    args.extend(extra);
    ok(&args);
}

#[test]
fn synth_writes_a_dataset_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "synth",
        "--scene",
        "checker",
        "--views",
        "12",
        "--res",
        "32",
        "--seed",
        "7",
        "--out",
        p(&a),
    ]);
    ok(&[
        "synth",
        "--scene",
        "checker",
        "--views",
        "12",
        "--res",
        "32",
        "--seed",
        "7",
        "--out",
        p(&b),
    ]);
    let ppms = fs::read_dir(&a)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "ppm")
        })
        .count();
    assert_eq!(ppms, 12);
    for name in [
        "cameras.json",
        "view_000.ppm",
        "view_011.ppm",
        "ground_truth.a2tg",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(!a.join(texsplat_cli::LOCK_FILE).exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(
        code(&texsplat(&[
            "synth",
            "--scene",
            "checker",
            "--views",
            "1",
            "--out",
            p(&out)
        ])),
        2
    );
    assert_eq!(
        code(&texsplat(&["synth", "--scene", "plaid", "--out", p(&out)])),
        2
    );
    assert_eq!(
        code(&texsplat(&[
            "train",
            "--data",
            p(&tmp.path().join("missing")),
            "--out",
            p(&out)
        ])),
        1
    );
    assert_eq!(
        code(&texsplat(&[
            "train",
            "--data",
            p(tmp.path()),
            "--out",
            p(&out),
            "--set",
            "no_such_key=1"
        ])),
        2
    );
    assert_eq!(code(&texsplat(&["frobnicate"])), 2);
    assert_eq!(code(&texsplat(&["--help"])), 0);

    // a held lock is a runtime failure
    let data = tmp.path().join("d");
    synth(&data, "flat");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(texsplat_cli::LOCK_FILE), "").unwrap();
    let mut args = vec!["train", "--data", p(&data), "--out", p(&out)];
    args.extend(TINY);
    assert_eq!(code(&texsplat(&args)), 1);
}

#[test]
fn help_lists_every_config_key() {
    for sub in ["train", "render", "eval", "stats", "synth"] {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for k in KEYS {
            assert!(text.contains(k.name), "{sub} --help lacks {}", k.name);
        }
    }
}

#[test]
fn train_outputs_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "checker");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train_tiny(&data, &a, &[]);
    train_tiny(&data, &b, &[]);
    for name in [
        "metrics.csv",
        "checkpoint.a2tg",
        "events.log",
        "run.log",
        "config.txt",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4, "{metrics}");
    let log = fs::read_to_string(a.join("run.log")).unwrap();
    assert!(log.contains("# iter psnr ssim l1 mem_bytes n_upscaled"));
    assert!(log.contains("# stage1_iters = 20"));
    let data_rows: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data_rows.len(), 4);
    assert!(data_rows.iter().all(|l| l.split_whitespace().count() == 6));
    assert!(fs::read_to_string(a.join("events.log"))
        .unwrap()
        .starts_with("# selection:"));

    // the effective config file reproduces the run
    let c = tmp.path().join("c");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&c),
        "--threads",
        "1",
        "--config",
        p(&a.join("config.txt")),
    ]);
    assert_eq!(
        fs::read(a.join("checkpoint.a2tg")).unwrap(),
        fs::read(c.join("checkpoint.a2tg")).unwrap()
    );
}

#[test]
fn no_texture_render_matches_full_on_neutral_textures() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "stripes");
    let run = tmp.path().join("r");
    train_tiny(&data, &run, &["--set", "stage2_iters=0"]);
    let ckpt = run.join("checkpoint.a2tg");
    let out = tmp.path().join("img");
    for mode in ["full", "no-texture", "alpha-only"] {
        ok(&[
            "render",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&data),
            "--camera",
            "2",
            "--mode",
            mode,
            "--out",
            p(&out),
        ]);
    }
    let full = fs::read(out.join("render_002_full.ppm")).unwrap();
    assert_eq!(
        full,
        fs::read(out.join("render_002_no-texture.ppm")).unwrap()
    );
    assert_ne!(
        full,
        fs::read(out.join("render_002_alpha-only.ppm")).unwrap()
    );
    let bad = texsplat(&[
        "render",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--mode",
        "sepia",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn eval_and_stats_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "checker");
    let run = tmp.path().join("r");
    train_tiny(&data, &run, &["--set", "texture_policy=uniform:2"]);
    let ckpt = run.join("checkpoint.a2tg");

    let out = tmp.path().join("e");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "test");
    assert_eq!(row[1], "2");
    assert_eq!(row[2], "12");
    // 12 splats * 13 scalars * 4 bytes, 12 * 4 texels * 4 channels * 4 bytes
    assert_eq!((row[6], row[7], row[8]), ("624", "768", "1392"));
    assert_eq!(row[11], "0.001 (+123.1%)");

    let stats = tmp.path().join("s");
    ok(&[
        "stats",
        "--checkpoint",
        p(&ckpt),
        "--frames",
        "2",
        "--out",
        p(&stats),
    ]);
    let hist = fs::read_to_string(stats.join("histogram.csv")).unwrap();
    assert!(hist.contains("2,2,12"), "{hist}");
    assert!(stats.join("timing.csv").exists());
    assert!(stats.join("highlight.ppm").exists());
}
