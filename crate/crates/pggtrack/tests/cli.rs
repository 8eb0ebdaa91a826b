use std::path::Path;
use std::process::{Command, Output};

use pggtrack::report::MetricsTable;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pggtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, preset: &str, seed: &str, frames: &str) {
    let o = run(&["simulate", "--preset", preset, "--seed", seed, "--frames", frames, "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_presets() {
    assert_eq!(code(&run(&["--help"])), 0);
    let o = run(&["presets"]);
    assert_eq!(code(&o), 0);
    let names = String::from_utf8(o.stdout).unwrap();
    assert!(names.lines().any(|l| l == "zoom"));
}

#[test]
fn invalid_input_exits_one() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("x");
    assert_eq!(code(&run(&["simulate", "--preset", "nope", "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["grad-check", "--loss", "nope"])), 1);
    assert_eq!(code(&run(&["bench-pgg", "--shape", "12by12", "--skip-full"])), 1);
    assert_eq!(code(&run(&["bench-pgg", "--occupancy", "1.5", "--skip-full"])), 1);
    assert_eq!(code(&run(&["track", "--in", s(&t.path().join("missing")), "--out", s(&out)])), 1);
}

#[test]
fn malformed_files_exit_two_and_bad_values_exit_one() {
    let t = tempfile::tempdir().unwrap();
    let seq = t.path().join("seq");
    simulate(&seq, "basic", "1", "2");
    let out = t.path().join("tracks.json");

    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, "{\"pgg\": {\"delta\": 5,").unwrap();
    assert_eq!(code(&run(&["track", "--in", s(&seq), "--config", s(&cfg), "--out", s(&out)])), 2);
    std::fs::write(&cfg, "{\"pgg\": {\"bandwidth\": 5}}").unwrap();
    assert_eq!(code(&run(&["track", "--in", s(&seq), "--config", s(&cfg), "--out", s(&out)])), 1);
    std::fs::write(&cfg, "{\"mask\": {\"tau\": 2.0}}").unwrap();
    assert_eq!(code(&run(&["track", "--in", s(&seq), "--config", s(&cfg), "--out", s(&out)])), 1);

    let frame = seq.join("frame_00001.pggt");
    let mut bytes = std::fs::read(&frame).unwrap();
    bytes[0] = b'X';
    std::fs::write(&frame, &bytes).unwrap();
    let o = run(&["track", "--in", s(&seq), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at byte 0"));
    assert!(!out.exists());
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    simulate(&a, "zoom", "7", "6");
    let o = run(&["--threads", "3", "simulate", "--preset", "zoom", "--seed", "7", "--frames", "6", "--out", s(&b)]);
    assert_eq!(code(&o), 0);
    assert_eq!(dir_contents(&a), dir_contents(&b));

    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let tracks = t.path().join(format!("tracks{threads}.json"));
        let poses = t.path().join(format!("poses{threads}.json"));
        assert_eq!(code(&run(&["--threads", threads, "track", "--in", s(&a), "--out", s(&tracks)])), 0);
        assert_eq!(code(&run(&["--threads", threads, "decode", "--in", s(&a), "--out", s(&poses)])), 0);
        outputs.push((std::fs::read(&tracks).unwrap(), std::fs::read(&poses).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn eval_table_matches_stdout_and_covers_every_group() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path().join("data");
    simulate(&root.join("s1"), "basic", "2", "4");
    simulate(&root.join("s2"), "basic", "3", "4");
    let tracks = t.path().join("tracks.json");
    let csv = t.path().join("metrics.csv");
    let plots = t.path().join("plots");
    assert_eq!(code(&run(&["track", "--in", s(&root), "--out", s(&tracks)])), 0);
    let o = run(&["eval", "--pred", s(&tracks), "--gt", s(&root), "--out", s(&csv), "--plot", s(&plots)]);
    assert_eq!(code(&o), 0);
    let table = MetricsTable::parse(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(table.columns, ["Head", "Shou", "Elb", "Wri", "Hip", "Knee", "Ankl", "Total"]);
    assert_eq!(table.get("AP", "Total"), Some(1.0));
    assert_eq!(table.get("MOTA", "Total"), Some(1.0));

    let stdout = String::from_utf8(o.stdout).unwrap();
    let mut lines = stdout.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header[1..], table.columns.iter().map(String::as_str).collect::<Vec<_>>()[..]);
    for ((name, vals), line) in table.rows.iter().zip(lines) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells[0], name);
        let printed: Vec<f64> = cells[1..].iter().map(|c| c.parse().unwrap()).collect();
        let stored: Vec<f64> = vals.iter().map(|v| v.unwrap()).collect();
        assert_eq!(printed, stored);
    }
    assert!(plots.join("metrics.svg").is_file());
}

#[test]
fn eval_rejects_tracks_for_another_sequence() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    simulate(&a, "basic", "0", "2");
    simulate(&b, "basic", "1", "2");
    let tracks = t.path().join("tracks.json");
    assert_eq!(code(&run(&["track", "--in", s(&a), "--out", s(&tracks)])), 0);
    let csv = t.path().join("m.csv");
    assert_eq!(code(&run(&["eval", "--pred", s(&tracks), "--gt", s(&b), "--out", s(&csv)])), 1);
}

#[test]
fn bench_reports_the_element_ratio() {
    let o = run(&["bench-pgg", "--occupancy", "0.25", "--shape", "24x20"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    // 120 of 480 pixels
    assert!(out.contains("affinity element ratio 0.062500"), "{out}");
    assert!(out.contains("peak memory ratio"));
}

#[test]
fn single_loss_grad_check() {
    let o = run(&["grad-check", "--loss", "push", "--instances", "3"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("push"));
}
