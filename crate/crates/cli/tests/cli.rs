use std::fs;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_gtlvm");

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().expect("spawn gtlvm");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, _, _) = run(&["simulate", "--no-such-flag"]);
    assert_eq!(code, 2);
}

#[test]
fn bad_config_reports_line_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"seed\": 1,\n  \"seed\": oops\n}\n").unwrap();
    let out = dir.path().join("c.jsonl");
    let (code, _, err) = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(&[
        "export-latent",
        "--checkpoint",
        "/nonexistent/m.ckpt",
        "--cohort",
        "/nonexistent/c.jsonl",
        "--out",
        dir.path().join("z.csv").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn simulate_writes_header_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/two_organ.json");
    let mut bytes = Vec::new();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = dir.path().join(name);
        let truth = dir.path().join(format!("{name}.truth.csv"));
        let (code, _, err) = run(&[
            "simulate",
            "--config",
            cfg,
            "--patients",
            "30",
            "--out",
            out.to_str().unwrap(),
            "--truth",
            truth.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        let t = fs::read_to_string(&truth).unwrap();
        assert!(t.starts_with("# config_sha256="), "{t}");
        bytes.push(fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
