use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mfst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfst"))
        .args(args)
        .output()
        .expect("spawn mfst")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(mfst(&[]).status.code(), Some(1));
    assert_eq!(mfst(&["track", "--sequence", "x"]).status.code(), Some(1));
    assert_eq!(mfst(&["--help"]).status.code(), Some(0));
    assert_eq!(mfst(&["eval", "--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_3_and_bad_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.bin");
    let out = mfst(&["inspect", "--weights", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.bin"));

    let junk = tmp.path().join("junk.bin");
    fs::write(&junk, b"NOTAWEIGHTFILE").unwrap();
    assert_eq!(
        mfst(&["inspect", "--weights", s(&junk)]).status.code(),
        Some(2)
    );

    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    let out = tmp.path().join("out");
    let code = mfst(&[
        "eval",
        "--dataset",
        s(&data),
        "--window-influence",
        "1.5",
        "--out",
        s(&out),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}

#[test]
fn synth_weights_are_deterministic_and_inspectable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.bin"), tmp.path().join("b.bin"));
    assert!(mfst(&["synth-weights", "--seed", "4", "--out", s(&a)])
        .status
        .success());
    assert!(mfst(&["synth-weights", "--seed", "4", "--out", s(&b)])
        .status
        .success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let out = mfst(&["inspect", "--weights", s(&a)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("format_version: 1\n"), "{text}");
    let entries: Vec<&str> = text.lines().filter(|l| l.contains("\tsha256:")).collect();
    assert_eq!(entries.len(), 32);
    for line in entries {
        let digest = line.rsplit("sha256:").next().unwrap();
        assert_eq!(digest.len(), 64);
        assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
    }
}

#[test]
fn track_writes_results_and_boxes() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = tmp.path().join("w.bin");
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    assert!(
        mfst(&["synth-weights", "--seed", "0", "--out", s(&weights)])
            .status
            .success()
    );
    assert!(mfst(&[
        "synth-dataset",
        "--sequences",
        "1",
        "--frames",
        "3",
        "--out",
        s(&data)
    ])
    .status
    .success());
    let seq = data.join("synth-01");
    let run = mfst(&[
        "track",
        "--sequence",
        s(&seq),
        "--weights",
        s(&weights),
        "--fusion",
        "sm",
        "--out",
        s(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let boxes = fs::read_to_string(out.join("boxes.txt")).unwrap();
    assert_eq!(boxes.lines().count(), 3);
    assert!(boxes.lines().all(|l| l.split(',').count() == 4));
    for f in [
        "results.json",
        "precision.csv",
        "success.csv",
        "throughput.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["settings"]["cross_model"], "SM");
}
