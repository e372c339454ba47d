//! End-to-end tests of the `tablekb` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tablekb");

fn tablekb(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn tablekb")
}

fn ok(args: &[&str]) -> String {
    let out = tablekb(args);
    assert!(
        out.status.success(),
        "tablekb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    ok(&["gen-fixture", "-o", fx.to_str().unwrap()]);
    (dir, fx)
}

fn conf(fx: &Path) -> String {
    fx.join("pipeline.conf").display().to_string()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(d: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, base, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out.remove("manifest.json");
    out
}

#[test]
fn staged_run_equals_single_run() {
    let (tmp, fx) = fixture();
    let c = conf(&fx);
    let staged = tmp.path().join("staged");
    let whole = tmp.path().join("whole");
    for stage in ["ingest", "build-index", "link", "match-headings", "discover", "resolve"] {
        ok(&["-c", &c, "--out", staged.to_str().unwrap(), stage]);
    }
    let text = ok(&["-c", &c, "--out", whole.to_str().unwrap(), "run"]);
    assert!(text.contains("resolve:"));
    let (a, b) = (snapshot(&staged), snapshot(&whole));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs between staged and single run");
    }
    assert!(whole.join("manifest.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (tmp, fx) = fixture();
    let c = conf(&fx);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["-c", &c, "--out", a.to_str().unwrap(), "run"]);
    ok(&["-c", &c, "--out", b.to_str().unwrap(), "run"]);
    assert_eq!(snapshot(&a), snapshot(&b));
}

#[test]
fn exit_codes() {
    assert_eq!(tablekb(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tablekb(&["--help"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let missing = tablekb(&["--corpus", "/nonexistent/c.jsonl", "--kb", "/nonexistent/kb", "--out", out.to_str().unwrap(), "run"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = tablekb(&["--set", "resolve.theta=7", "run"]);
    assert_eq!(bad.status.code(), Some(1));
    let malformed = tablekb(&["--set", "nonsense", "run"]);
    assert_eq!(malformed.status.code(), Some(1));
}

#[test]
fn eval_reports_link_metrics() {
    let (_tmp, fx) = fixture();
    let c = conf(&fx);
    ok(&["-c", &c, "run"]);
    let gold = fx.join("gold/links_test.csv");
    let text = ok(&["-c", &c, "eval", "link", "--gold", gold.to_str().unwrap()]);
    assert!(text.contains("macro_f1"), "{text}");
    let json = ok(&["-c", &c, "eval", "link", "--gold", gold.to_str().unwrap(), "--json"]);
    assert!(json.trim_start().starts_with('{'), "{json}");
    let verdicts = fx.join("gold/verdicts_test.csv");
    let text = ok(&["-c", &c, "eval", "discover", "--gold", verdicts.to_str().unwrap()]);
    assert!(text.contains("accuracy"), "{text}");
}

#[test]
fn train_and_predict_from_exported_dataset() {
    let (tmp, fx) = fixture();
    let c = conf(&fx);
    let data = tmp.path().join("discover.tsv");
    let model = tmp.path().join("discover.json");
    ok(&["-c", &c, "run"]);
    ok(&["-c", &c, "export-dataset", "discover", "-o", data.to_str().unwrap()]);
    ok(&["-c", &c, "train", "discover", "--data", data.to_str().unwrap(), "-o", model.to_str().unwrap()]);
    assert!(model.exists());
    let scored = ok(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    let lines: Vec<&str> = scored.lines().collect();
    assert_eq!(lines[0], "id\tpredicted\tscore");
    assert!(lines.len() > 10);
    let cv = ok(&["-c", &c, "cv", "discover", "--data", data.to_str().unwrap(), "--folds", "3"]);
    assert!(cv.contains("accuracy"), "{cv}");
}

#[test]
fn t2d_gold_is_accepted() {
    let (_tmp, fx) = fixture();
    let c = conf(&fx);
    ok(&["-c", &c, "run"]);
    let links = std::fs::read_to_string(fx.join("out/links.tsv")).unwrap();
    let dir = fx.join("t2d");
    std::fs::create_dir_all(&dir).unwrap();
    let mut per_table: BTreeMap<String, String> = BTreeMap::new();
    for line in links.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let (table, row, entity) = (cols[0], cols[1], cols[3]);
        if entity.is_empty() {
            continue;
        }
        let row: usize = row.parse().unwrap();
        per_table
            .entry(table.to_string())
            .or_default()
            .push_str(&format!("\"http://dbpedia.org/resource/{entity}\",\"x\",\"{}\"\n", row + 1));
    }
    assert!(!per_table.is_empty());
    for (t, body) in &per_table {
        std::fs::write(dir.join(format!("{t}.csv")), body).unwrap();
    }
    let text = ok(&["-c", &c, "eval", "link", "--gold", dir.to_str().unwrap(), "--format", "t2d", "--json"]);
    assert!(text.contains("\"macro_f1\": 1.0") || text.contains("\"macro_f1\":1.0"), "{text}");
}
