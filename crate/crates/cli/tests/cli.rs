use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use riseg_core::simulator::random_scene;

fn riseg(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_riseg"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "riseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scene(dir: &Path, seed: u64, n: usize) -> String {
    let path = dir.join("scene.txt");
    fs::write(&path, random_scene(seed, n).to_text()).unwrap();
    path.to_string_lossy().into_owned()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
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
fn run_is_deterministic_and_report_parses() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), 41, 3);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |out: &Path| {
        vec![
            "run".to_string(),
            "--scene".into(),
            scene.clone(),
            "--out".into(),
            out.to_string_lossy().into_owned(),
            "--seed".into(),
            "5".into(),
            "--interactions".into(),
            "2".into(),
        ]
    };
    let ra = riseg(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    let rb = riseg(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(ra.stdout, rb.stdout);
    assert!(!ra.stdout.is_empty());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn simulate_then_segment_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), 42, 2);
    let ep = dir.path().join("ep");
    let seg = dir.path().join("seg");
    let (ep_s, seg_s) = (ep.to_str().unwrap(), seg.to_str().unwrap());
    riseg(&[
        "simulate",
        "--scene",
        &scene,
        "--out",
        ep_s,
        "--seed",
        "1",
        "--set",
        "interactions=1",
    ]);
    assert!(ep.join("intrinsics.txt").exists());
    riseg(&["segment", "--episode", ep_s, "--out", seg_s, "--flow", "gt"]);
    let report = riseg(&["eval", "--pred", seg_s, "--gt", ep_s]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(!text.trim().is_empty());
    assert_eq!(fs::read_to_string(seg.join("eval.txt")).unwrap(), text);
}

#[test]
fn act_prints_a_push_for_a_fresh_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), 43, 3);
    let ep = dir.path().join("ep");
    let ep_s = ep.to_str().unwrap();
    riseg(&[
        "simulate",
        "--scene",
        &scene,
        "--out",
        ep_s,
        "--set",
        "interactions=1",
    ]);
    let empty = dir.path().join("empty.pgm");
    let gt = riseg_core::io::read_pgm16(&ep.join("gtmask_0000.pgm")).unwrap();
    let blank = riseg_core::segmenter::LabelMask::from_grid(gt.labels.map(|_| 0));
    riseg_core::io::write_pgm16(&empty, &blank).unwrap();
    let out = riseg(&[
        "act",
        "--mask",
        empty.to_str().unwrap(),
        "--frame",
        ep.join("depth_0000.pfm").to_str().unwrap(),
    ]);
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("push "), "{line}");
}

#[test]
fn bad_override_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_riseg"))
        .args(["--set", "no_such_key=1", "eval", "--pred", ".", "--gt", "."])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
