use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn moece(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moece"))
        .args(args)
        .env("MOECE_OUT_ROOT", root)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn smoke() -> String {
    configs().join("mixed_snr_smoke.toml").display().to_string()
}

#[test]
fn validate_accepts_every_bundled_config() {
    let tmp = tempfile::tempdir().unwrap();
    for e in fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        let o = moece(&["validate", "--config", p.to_str().unwrap()], tmp.path());
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
    }
}

#[test]
fn bad_config_exits_with_the_config_code_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(
        &bad,
        fs::read_to_string(configs().join("mixed_snr_smoke.toml"))
            .unwrap()
            .replace("k = 1", "k = 9"),
    )
    .unwrap();
    let o = moece(&["validate", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.k"), "{}", stderr(&o));

    let o = moece(&["run", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = moece(&["validate", "--config", "/nonexistent/x.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn smoke_run_then_refusal_then_force() {
    let tmp = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let o = moece(&["run", "--config", &smoke(), "--threads", "1"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(t.elapsed().as_secs() < 60, "{:?}", t.elapsed());
    let out = tmp.path().join("mixed_snr_smoke");
    for f in [
        "train.mcds",
        "test.mcds",
        "model.ckpt",
        "history.csv",
        "eval.csv",
        "usage.csv",
        "routing_trace.csv",
        "complexity.csv",
        "config.toml",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let eval = fs::read(out.join("eval.csv")).unwrap();

    let o = moece(&["run", "--config", &smoke()], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));

    let o = moece(&["run", "--config", &smoke(), "--force"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("eval.csv")).unwrap(), eval);
}

#[test]
fn subcommands_compose_into_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("varying_rb_smoke.toml");
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("steps");
    let out_s = out.to_str().unwrap();
    for cmd in ["generate", "train", "eval", "zeroshot", "complexity"] {
        let o = moece(&[cmd, "--config", cfg, "--out", out_s, "--seed", "3"], tmp.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let o = moece(&["train", "--config", cfg, "--out", out_s, "--seed", "3"], tmp.path());
    assert!(!o.status.success(), "retraining over a checkpoint needs --force");

    let o = moece(
        &[
            "run",
            "--config",
            cfg,
            "--out",
            tmp.path().join("whole").to_str().unwrap(),
            "--seed",
            "3",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["eval.csv", "zeroshot_eval.csv", "usage.csv", "complexity.csv"] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(tmp.path().join("whole").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn complexity_prints_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("mixed_snr_full.toml");
    let o = moece(&["complexity", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("single"), "{text}");
    assert!(text.contains("top-1"), "{text}");
    let csv = fs::read_to_string(tmp.path().join("mixed_snr_full").join("complexity.csv")).unwrap();
    assert!(csv.starts_with("model,macs,flops,params,model_size_bytes"), "{csv}");
}

#[test]
fn seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, dir: &str| {
        let o = moece(
            &[
                "run",
                "--config",
                &smoke(),
                "--seed",
                seed,
                "--out",
                tmp.path().join(dir).to_str().unwrap(),
            ],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(tmp.path().join(dir).join("eval.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
}
