use std::path::Path;
use std::process::{Command, Output};

fn plam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plam"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const CONFIG: &str = "corpus = data/corpus.jsonl
catalog = data/catalog.tsv
out = out
l_r = 16
d_e = 6
d_c = 6
d_t = 6
m = 3
max_epochs = 2
emb_epochs = 1
";

fn small_corpus(dir: &Path) {
    let out = plam(
        &["synth", "--out", "data", "--n-labels", "8", "--depth", "2", "--n-docs", "40", "--doc-len", "20", "--vocab-size", "80"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(dir.join("run.cfg"), CONFIG).unwrap();
}

#[test]
fn cost_prints_the_reference_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = plam(&["cost"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "l_r,n,m,d_c,labelwise_mults,pseudo_mults,labelwise_elems,pseudo_elems"
    );
    assert_eq!(
        lines.next().unwrap(),
        "2500,10000,128,128,3200000000,204800000,25000000,1600000"
    );
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&plam(&["cost", "--bogus"], dir.path())), 2);
    assert_eq!(code(&plam(&["cost", "--n", "0"], dir.path())), 2);
    std::fs::write(dir.path().join("bad.cfg"), "l_r = many\n").unwrap();
    let out = plam(&["preprocess", "--config", "bad.cfg"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn missing_input_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
    assert_eq!(code(&plam(&["preprocess", "--config", "run.cfg"], dir.path())), 3);
    assert_eq!(code(&plam(&["preprocess", "--config", "absent.cfg"], dir.path())), 3);
}

#[test]
fn oracle_scores_reach_perfect_micro_f1() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let out = plam(&["eval", "--config", "run.cfg", "--debug-oracle-scores"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["micro_f1"], 1.0);
    assert_eq!(json["split"], "test");
}

#[test]
fn train_then_explain_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    for cmd in ["preprocess", "train"] {
        let out = plam(&[cmd, "--config", "run.cfg"], dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let log = std::fs::read_to_string(dir.path().join("out/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let out = plam(&["explain", "--config", "run.cfg", "--docs", "doc00000", "--labels", "A00"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("out/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    let out = plam(&["explain", "--config", "run.cfg", "--docs", "nobody"], dir.path());
    assert_eq!(code(&out), 3);
    let out = plam(
        &["match-modes", "--config", "run.cfg", "--pseudo", "out/checkpoint.bin", "--labelwise", "out/checkpoint.bin"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}
