use std::path::Path;
use std::process::{Command, Output};

fn kan_sam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kan-sam")).args(args).env_remove("KAN_SAM_THREADS").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, n_train: usize, n_test: usize, size: usize) -> Output {
    kan_sam(&[
        "gen-data",
        "--out",
        p(dir),
        "--regime",
        "thermal-informative",
        "--n-train",
        &n_train.to_string(),
        "--n-test",
        &n_test.to_string(),
        "--image-size",
        &size.to_string(),
        "--seed",
        "3",
    ])
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_triples_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    let o = gen(&dir, 16, 8, 32);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("train"));
    let files = dir_bytes(&dir);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".manifest")).count(), 2);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with("_rgb.ppm")).count(), 24);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with("_thermal.pgm")).count(), 24);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with("_gt.pgm")).count(), 24);

    assert_eq!(code(&gen(&dir, 16, 8, 32)), 0);
    assert_eq!(dir_bytes(&dir), files);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kan_sam(&["gen-data", "--out", p(tmp.path()), "--regime", "bogus"]);
    assert_eq!(code(&o), 2);

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = kan_sam(&["count-params", "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    std::fs::write(&cfg, "[model]\ninput_size = 60\n").unwrap();
    assert_eq!(code(&kan_sam(&["count-params", "--config", p(&cfg)])), 2);

    assert_eq!(code(&kan_sam(&["gradcheck", "--scale", "huge"])), 2);
    assert_eq!(code(&kan_sam(&["frobnicate"])), 2);
}

#[test]
fn missing_inputs_exit_four() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.manifest");
    let o = kan_sam(&["train", "--data", p(&missing), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 4);
    let o = kan_sam(&["count-params", "--config", p(&tmp.path().join("nope.toml"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn zero_threads_from_environment_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_kan-sam"))
        .args(["eval", "--checkpoint", "x", "--data", "y"])
        .env("KAN_SAM_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn help_names_a_config_key_for_every_flag() {
    for sub in ["gen-data", "train", "eval", "predict", "gradcheck", "count-params", "mask-preview", "ablate"] {
        let help = stdout(&kan_sam(&[sub, "--help"]));
        let mut flags = 0;
        let mut entry = String::new();
        let check = |entry: &str| {
            if entry.is_empty() || entry.starts_with("-h, --help") || entry.starts_with("-V, --version") {
                return;
            }
            assert!(
                entry.contains("[config:") || entry.contains("[command line only]"),
                "{sub}: flag without config counterpart: {entry}"
            );
        };
        for line in help.lines() {
            let t = line.trim_start();
            if t.starts_with("--") || t.starts_with("-h,") || t.starts_with("-V,") {
                check(&entry);
                entry = t.to_string();
                flags += 1;
            } else if !entry.is_empty() && !t.is_empty() {
                entry.push(' ');
                entry.push_str(t);
            } else {
                check(&entry);
                entry.clear();
            }
        }
        check(&entry);
        assert!(flags > 2, "{sub}: {help}");
        assert!(help.contains("--threads"), "{sub}");
    }
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 4, 2, 16)), 0);
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "[model]\ninput_size = 16\npatch_size = 4\ndecoder_channels = [32]\n\n[train]\nbatch_size = 2\nlr = 1e-3\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    let train = |out: &Path, variant: &str| {
        kan_sam(&[
            "train",
            "--config",
            p(&cfg),
            "--data",
            p(&data.join("train.manifest")),
            "--eval-data",
            p(&data.join("test.manifest")),
            "--out",
            p(out),
            "--variant",
            variant,
            "--epochs",
            "1",
            "--seed",
            "5",
        ])
    };
    let o = train(&out, "full");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.ckpt", "best.ckpt", "train.log", "report.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    let rows: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2 + 1);
    assert_eq!(rows.iter().filter(|r| r["kind"] == "epoch").count(), 1);

    let base = tmp.path().join("base");
    assert_eq!(code(&train(&base, "base")), 0);
    let resolved = std::fs::read_to_string(base.join("config.toml")).unwrap();
    assert!(resolved.contains("use_adapters = false"), "{resolved}");
    let mask = resolved.split("[train.mask]").nth(1).unwrap();
    assert!(mask.contains("enabled = false"), "{resolved}");

    let eval = |json: &Path| {
        kan_sam(&[
            "eval",
            "--checkpoint",
            p(&out.join("model.ckpt")),
            "--data",
            p(&data.join("test.manifest")),
            "--out",
            p(json),
        ])
    };
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    let o = eval(&a);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("mean"));
    assert_eq!(code(&eval(&b)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(report["per_sample"].as_array().unwrap().len(), 2);
    assert!(report["mean"]["mae"].as_f64().unwrap() >= 0.0);

    let map = tmp.path().join("map.pgm");
    let img = |s: &str| data.join("images").join(format!("s00004_{s}"));
    let o = kan_sam(&[
        "predict",
        "--checkpoint",
        p(&out.join("model.ckpt")),
        "--rgb",
        p(&img("rgb.ppm")),
        "--thermal",
        p(&img("thermal.pgm")),
        "--out",
        p(&map),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&map).unwrap();
    let header = b"P5\n16 16 255\n";
    assert!(bytes.starts_with(header), "{:?}", &bytes[..16]);
    assert_eq!(bytes.len(), header.len() + 256);

    let o = kan_sam(&[
        "predict",
        "--checkpoint",
        p(&out.join("model.ckpt")),
        "--rgb",
        p(&img("rgb.ppm")),
        "--thermal",
        p(&img("rgb.ppm")),
        "--out",
        p(&map),
    ]);
    assert_eq!(code(&o), 4);

    let other = tmp.path().join("other");
    assert_eq!(code(&gen(&other, 1, 1, 32)), 0);
    let o = kan_sam(&["eval", "--checkpoint", p(&out.join("model.ckpt")), "--data", p(&other.join("test.manifest"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn numerical_abort_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, 2, 1, 16)), 0);
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[model]\ninput_size = 16\npatch_size = 4\ndecoder_channels = [32]\n").unwrap();
    let o = kan_sam(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data.join("train.manifest")),
        "--out",
        p(&tmp.path().join("run")),
        "--lr",
        "1e300",
        "--epochs",
        "3",
        "--batch-size",
        "1",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("s0000"));
}

#[test]
fn gradcheck_primitive_and_layer_pass() {
    for scale in ["primitive", "layer"] {
        let o = kan_sam(&["gradcheck", "--scale", scale]);
        assert_eq!(code(&o), 0, "{}", stdout(&o));
        let out = stdout(&o);
        let worst: f64 =
            out.lines().last().and_then(|l| l.split_whitespace().nth(3)).and_then(|v| v.parse().ok()).unwrap();
        assert!(worst < 1e-5, "{out}");
    }
}

#[test]
fn count_params_partition_adds_up() {
    let o = kan_sam(&["count-params", "--json"]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let n = |k: &str| r[k].as_u64().unwrap();
    assert_eq!(n("total"), n("frozen") + n("tunable"));
    let groups: u64 = r["groups"].as_array().unwrap().iter().map(|g| g["params"].as_u64().unwrap()).sum();
    assert_eq!(groups, n("total"));

    let text = stdout(&kan_sam(&["count-params"]));
    assert!(text.contains("ratio") && text.contains("out of scope"), "{text}");
}

#[test]
fn mask_preview_is_three_coloured_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.ppm"), tmp.path().join("b.ppm"));
    for f in [&a, &b] {
        let o = kan_sam(&["mask-preview", "--seed", "9", "--size", "40", "--p-mask", "0.5", "--out", p(f)]);
        assert_eq!(code(&o), 0);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let header = b"P6\n40 40 255\n";
    assert!(bytes.starts_with(header));
    let mut seen = [0usize; 3];
    for px in bytes[header.len()..].chunks(3) {
        match px {
            [128, 128, 128] => seen[0] += 1,
            [255, 0, 0] => seen[1] += 1,
            [0, 0, 255] => seen[2] += 1,
            other => panic!("unexpected colour {other:?}"),
        }
    }
    assert_eq!(seen.iter().sum::<usize>(), 1600);
    assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
}
