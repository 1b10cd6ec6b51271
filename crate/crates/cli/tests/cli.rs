use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn l4sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l4sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn no_arguments_prints_usage() {
    let out = l4sim(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("Usage"));
}

#[test]
fn unknown_flag_is_rejected_with_usage() {
    let out = l4sim(&["--scenario", "scenario1", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_cleanly() {
    let out = l4sim(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("--scheduler"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(
        &path,
        "name = bad\n[topology]\nrate_mbps = 10\nbandwidth = 3\n",
    )
    .unwrap();
    let out = l4sim(&[
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("bandwidth"), "{err}");
}

#[test]
fn unknown_preset_or_missing_file_is_a_config_error() {
    let out = l4sim(&["--scenario", "/nonexistent/scenario.conf"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn same_seed_gives_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = l4sim(&[
            "--scenario",
            "scenario2",
            "--runs",
            "1",
            "--seed",
            "7",
            "--duration",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        outputs.push(csv_files(&out_dir));
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["--scenario", "scenario2", "--runs", "3", "--duration", "2"];
        args.extend_from_slice(extra);
        let out_str = out_dir.to_str().unwrap().to_string();
        args.extend_from_slice(&["--out", &out_str]);
        let out = l4sim(&args);
        assert!(out.status.success(), "{}", text(&out.stderr));
        csv_files(&out_dir)
    };
    assert_eq!(run("seq", &[]), run("par", &["--parallel", "3"]));
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let args = [
        "--scenario",
        "scenario2",
        "--runs",
        "1",
        "--duration",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    assert!(l4sim(&args).status.success());
    let again = l4sim(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(
        text(&again.stderr).contains("--force"),
        "{}",
        text(&again.stderr)
    );
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(l4sim(&forced).status.success());
}

#[test]
fn timeshift_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = l4sim(&[
        "--scenario",
        "scenario2",
        "--runs",
        "2",
        "--duration",
        "2",
        "--scheduler",
        "timeshift",
        "--emit-plots",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("jain_index"));
    assert!(out_dir.join("prague_cwnd.gp").exists());
    assert!(out_dir.join("summary.csv").exists());
    let conf = fs::read_to_string(out_dir.join("scenario.conf")).unwrap();
    assert!(conf.contains("scheduler = timeshift"), "{conf}");
}
