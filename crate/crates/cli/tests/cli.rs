use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtgnn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_dataset(dir: &Path) -> String {
    let data = dir.join("d.csv");
    let o = mtgnn(&["gen", "--out", data.to_str().unwrap(), "--nodes", "120", "--events", "800", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data.to_str().unwrap().to_string()
}

const SMALL: [&str; 10] =
    ["--set", "d_mem=8", "--set", "d_time=4", "--set", "d_static=4", "--set", "local_batch=50", "--set", "epochs=2"];

fn train(data: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", data, "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    mtgnn(&args)
}

fn strip_timing(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn train_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--seed", "9", "--set", "k=2", "--set", "q=2", "--oplog", "--dump-schedule", "--staleness"];
    let o = train(&data, &a, &extra);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(train(&data, &b, &extra).status.success());
    for f in ["metrics.csv", "model.ckpt", "best.ckpt", "config.txt", "assignment.txt", "oplog_g0.txt", "oplog_g1.txt", "staleness.csv"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let ma = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mb = fs::read_to_string(b.join("metrics.csv")).unwrap();
    assert!(ma.starts_with("iter,traversed,loss,val_mrr,elapsed_s\n"));
    assert_eq!(strip_timing(&ma), strip_timing(&mb));
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert!(fs::read(a.join("model.ckpt")).unwrap().starts_with(b"mtgnn-checkpoint v1"));

    let log = a.join("oplog_g1.txt");
    let v = mtgnn(&["validate-oplog", log.to_str().unwrap(), "--i", "1", "--j", "1"]);
    assert!(v.status.success());
    assert!(stdout(&v).starts_with("ok"));
}

#[test]
fn corrupted_oplog_fails_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.txt");
    fs::write(&log, "0,0,R,0,0,0\n0,0,R,1,0,0\n0,0,W,0,0,3\n0,0,W,1,0,3\n0,1,W,0,0,2\n").unwrap();
    let o = mtgnn(&["validate-oplog", log.to_str().unwrap(), "--i", "2", "--j", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("line 5"), "{}", stdout(&o));
    fs::write(&log, "").unwrap();
    assert!(mtgnn(&["validate-oplog", log.to_str().unwrap(), "--i", "2", "--j", "2"]).status.success());
    fs::write(&log, "0,0,X,0,0,0\n").unwrap();
    assert_eq!(mtgnn(&["validate-oplog", log.to_str().unwrap(), "--i", "1", "--j", "1"]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let o = train(&data, &dir.path().join("x"), &["--set", "i=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("p*q"));
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs=2\nwhat=1\n").unwrap();
    let o = mtgnn(&["train", "--data", &data, "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = mtgnn(&["plan", "--p", "4", "--q", "8", "--max-safe-batch", "100", "--saturation-batch", "100", "--mem-copies", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let o = mtgnn(&["train", "--data", "/nonexistent/d.csv", "--plan-only"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plan_and_plan_only() {
    let o = mtgnn(&["plan", "--p", "4", "--q", "8", "--max-safe-batch", "3200", "--saturation-batch", "1600", "--mem-copies", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "i=2 j=2 k=8");

    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let cfg = dir.path().join("plan.cfg");
    fs::write(&cfg, "p=4\nq=8\nmax_safe_batch=3200\nsaturation_batch=1600\nmem_copies=2\nlocal_batch=10\n").unwrap();
    let out = dir.path().join("never");
    let o = mtgnn(&["train", "--data", &data, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--plan-only"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("(i, j, k) = (2, 2, 8)"));
    assert!(!out.exists());
}

#[test]
fn analyze_sorts_by_degree_and_reports_totals() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let per_node = dir.path().join("nodes.csv");
    let o = mtgnn(&["analyze", "--data", &data, "--batch-sizes", "1,10,100,600", "--out", per_node.to_str().unwrap()]);
    assert!(o.status.success());
    let totals: Vec<usize> =
        stdout(&o).lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(totals.len(), 4);
    assert_eq!(totals[0], 1600);
    assert!(totals.windows(2).all(|w| w[1] <= w[0]));
    let csv = fs::read_to_string(per_node).unwrap();
    let rows: Vec<Vec<usize>> =
        csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert!(rows.windows(2).all(|w| w[0][1] >= w[1][1]));
    assert!(rows.iter().all(|r| r[2] == r[1]));
}
