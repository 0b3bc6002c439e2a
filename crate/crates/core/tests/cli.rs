use std::path::Path;
use std::process::{Command, Output};

fn vtln(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtln"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synthgen(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synthgen", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    vtln(&args)
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn synthgen_counts_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let flags = [
        "--actions",
        "4",
        "--seqs-per-action",
        "8",
        "--frames",
        "256",
        "--channels",
        "54",
        "--seed",
        "42",
    ];
    let out = synthgen(&a, &flags);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("32 sequences"));
    let csvs = read_dir_bytes(&a)
        .into_iter()
        .filter(|(n, _)| n.ends_with(".csv"))
        .count();
    assert_eq!(csvs, 32);
    assert_eq!(code(&synthgen(&b, &flags)), 0);
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(n, _)| n != "synthgen_config.json").collect()
    };
    assert_eq!(strip(read_dir_bytes(&a)), strip(read_dir_bytes(&b)));
}

#[test]
fn usage_errors_exit_2() {
    let out = vtln(&["synthgen", "--actions", "4"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&vtln(&["train", "--data", "x.json"])), 2);
    assert_eq!(code(&vtln(&["eval", "mse", "--pred", "a", "--truth", "b", "--slices", "30"])), 2);
    assert_eq!(code(&vtln(&["gradcheck", "--hidden", "16"])), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let ok = vtln(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert_eq!(code(&vtln(&["gradcheck", "--tolerance", "1e-12"])), 1);
    let bad = vtln(&["gradcheck", "--corrupt-grad", "body.v_r"]);
    assert_eq!(code(&bad), 1);
    let last = String::from_utf8_lossy(&bad.stdout).lines().last().unwrap().to_string();
    assert!(last.starts_with("FAIL") && last.contains("body.v_r"), "{last}");
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl Pipeline {
    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_string()
    }
}

/// Small dataset plus a short training run.
fn pipeline(iters: &str, lambda: Option<&str>) -> Pipeline {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let p = Pipeline { _tmp: tmp, root };
    let out = synthgen(
        &p.root.join("data"),
        &["--actions", "2", "--seqs-per-action", "4", "--frames", "170", "--channels", "6", "--seed", "3"],
    );
    assert_eq!(code(&out), 0);
    let manifest = p.path("data/manifest.json");
    let run = p.path("run");
    let mut args = vec![
        "train",
        "--data",
        &manifest,
        "--out",
        &run,
        "--preset",
        "long-term",
        "--hidden",
        "8",
        "--batch-size",
        "4",
        "--iters",
        iters,
        "--seed",
        "11",
    ];
    if let Some(l) = lambda {
        args.extend_from_slice(&["--lambda-schedule", l]);
    }
    let out = vtln(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains(&format!("trained {iters} iterations")), "{stdout}");
    p
}

#[test]
fn train_log_rows_and_config_echo() {
    let p = pipeline("20", Some("0:0,10:0.5,15:1.0"));
    let log = std::fs::read_to_string(p.root.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 21);
    let lambdas: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(lambdas[9], "0");
    assert_eq!(lambdas[10], "0.5");
    assert_eq!(lambdas[19], "1");
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.root.join("run/run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["lambda"]["steps"][1]["iteration"], 10);
    assert_eq!(cfg["train"]["lambda"]["steps"][2]["value"], 1.0);
    assert_eq!(cfg["train"]["iterations"], 20);
}

#[test]
fn train_is_deterministic() {
    let a = pipeline("5", None);
    let b = pipeline("5", None);
    let ca = std::fs::read(a.root.join("run/checkpoint.json")).unwrap();
    let cb = std::fs::read(b.root.join("run/checkpoint.json")).unwrap();
    assert!(ca == cb, "checkpoints differ");
}

#[test]
fn synthesize_and_evaluate() {
    let p = pipeline("5", None);
    let seq = std::fs::read_to_string(p.root.join("data/action0_03.csv")).unwrap();
    let lines: Vec<&str> = seq.lines().collect();
    std::fs::write(p.root.join("seed.csv"), lines[..50].join("\n") + "\n").unwrap();
    std::fs::create_dir_all(p.root.join("truth")).unwrap();
    std::fs::write(p.root.join("truth/seed.csv"), lines[50..150].join("\n") + "\n").unwrap();

    let ckpt = p.path("run/checkpoint.json");
    let seed = p.path("seed.csv");
    let pred = p.path("pred");
    let synth = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "synthesize",
            "--checkpoint",
            &ckpt,
            "--seed-frames",
            &seed,
            "--action",
            "action0",
            "--horizon",
            "100",
            "--out",
            out,
        ];
        args.extend_from_slice(extra);
        vtln(&args)
    };
    let out = synth(&pred, &["--trials", "30", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for k in 0..30 {
        let f = std::fs::read_to_string(p.root.join(format!("pred/trial_{k:02}/seed.csv"))).unwrap();
        assert_eq!(f.lines().count(), 100);
    }
    assert!(!p.root.join("pred/trial_30").exists());

    // same flags, same bytes
    let again = p.path("again");
    assert_eq!(code(&synth(&again, &["--trials", "30", "--seed", "5"])), 0);
    for k in [0, 17, 29] {
        let rel = format!("trial_{k:02}/seed.csv");
        assert_eq!(
            std::fs::read(p.root.join("pred").join(&rel)).unwrap(),
            std::fs::read(p.root.join("again").join(&rel)).unwrap()
        );
    }

    let mean_dir = p.path("mean");
    assert_eq!(code(&synth(&mean_dir, &["--trials", "1", "--eps", "zero"])), 0);
    let mean_again = p.path("mean2");
    assert_eq!(code(&synth(&mean_again, &["--trials", "1", "--eps", "zero", "--seed", "99"])), 0);
    assert_eq!(
        std::fs::read(p.root.join("mean/trial_00/seed.csv")).unwrap(),
        std::fs::read(p.root.join("mean2/trial_00/seed.csv")).unwrap()
    );

    // 30-trial MSE report has mean and std columns and documents the frame rule
    let truth = p.path("truth");
    let report = vtln(&[
        "eval", "mse", "--pred", &pred, "--truth", &truth, "--slices", "80,160,320,400,560,1000", "--fps", "25",
    ]);
    assert_eq!(code(&report), 0, "{}", String::from_utf8_lossy(&report.stderr));
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.lines().any(|l| l.starts_with('#') && l.contains("frame")));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "ms,frame,mean,std,trials");
    let row80 = text.lines().find(|l| l.starts_with("80,")).unwrap();
    assert!(row80.starts_with("80,2,") && row80.ends_with(",30"), "{row80}");

    let npss_out = p.path("npss.json");
    let n = vtln(&["eval", "npss", "--pred", &pred, "--truth", &truth, "--windows", "0-1,1-2,2-4", "--out", &npss_out]);
    assert_eq!(code(&n), 0, "{}", String::from_utf8_lossy(&n.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&npss_out).unwrap()).unwrap();
    let windows = json["windows"].as_array().unwrap();
    assert_eq!(windows.len(), 3);
    assert_eq!(windows[2]["start_frame"], 50);
    assert_eq!(windows[2]["trials"].as_array().unwrap().len(), 30);

    // prediction equal to truth scores zero on both metrics
    let exact = vtln(&["eval", "mse", "--pred", &truth, "--truth", &truth]);
    let text = String::from_utf8_lossy(&exact.stdout);
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert_eq!(line.split(',').nth(2), Some("0"), "{line}");
    }
    let exact = vtln(&["eval", "npss", "--pred", &truth, "--truth", &truth]);
    let json: serde_json::Value = serde_json::from_slice(&exact.stdout).unwrap();
    for w in json["windows"].as_array().unwrap() {
        assert_eq!(w["mean"], 0.0);
    }

    // unpaired and mismatched files are runtime errors
    std::fs::write(p.root.join("pred/trial_03/extra.csv"), "0,0,0,0,0,0\n").unwrap();
    assert_eq!(code(&vtln(&["eval", "mse", "--pred", &pred, "--truth", &truth])), 1);
    std::fs::remove_file(p.root.join("pred/trial_03/extra.csv")).unwrap();
    std::fs::write(p.root.join("pred/trial_03/seed.csv"), "0,0,0,0,0,0\n").unwrap();
    assert_eq!(code(&vtln(&["eval", "npss", "--pred", &pred, "--truth", &truth])), 1);
}

#[test]
fn synthesize_rejects_wrong_width_seed() {
    let p = pipeline("2", None);
    std::fs::write(p.root.join("seed.csv"), "0,0,0\n".repeat(60)).unwrap();
    let out = vtln(&[
        "synthesize",
        "--checkpoint",
        &p.path("run/checkpoint.json"),
        "--seed-frames",
        &p.path("seed.csv"),
        "--action",
        "action1",
        "--out",
        &p.path("pred"),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn zero_decoder_checkpoint_repeats_last_seed_frame() {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use vtln::model::{Vtln, VtlnConfig};
    use vtln::motion::NormStats;
    use vtln::training::{save_checkpoint, Checkpoint, OptimizerState, RngState, TrainConfig};

    let tmp = tempfile::tempdir().unwrap();
    let mut config = TrainConfig::long_term(VtlnConfig::new(4, 3, 1));
    config.model.seed_frames = 5;
    let identity = Vtln::identity(config.model.clone()).unwrap();
    let ckpt = Checkpoint {
        optimizer: OptimizerState::new(&identity.params),
        params: identity.params,
        config,
        norm: NormStats::identity(3),
        actions: vec!["walk".into()],
        iteration: 0,
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
    };
    let path = tmp.path().join("ckpt.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let seed = tmp.path().join("seed.csv");
    std::fs::write(&seed, "0.1,0.2,0.3\n0.4,0.5,0.6\n".repeat(3)).unwrap();
    let out_dir = tmp.path().join("out");
    let out = vtln(&[
        "synthesize",
        "--checkpoint",
        path.to_str().unwrap(),
        "--seed-frames",
        seed.to_str().unwrap(),
        "--horizon",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("trial_00/seed.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    for r in rows {
        assert_eq!(r, vec![0.4, 0.5, 0.6]);
    }
}
