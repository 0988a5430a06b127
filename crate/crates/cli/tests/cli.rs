use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cachenlg");

const SAMPLE_BLOCK: &str = "the center will formally open in 2009 .
(o / open-01 :ARG1 (c / center) :time (d / date-entity :year (y2 / 2009)) :manner (f / formal))
ALIGN 0 3 1
ALIGN 3 4 4
ALIGN 4 6 0
ALIGN 6 8 3
";

const SMALL: [&str; 10] = ["--hidden", "16", "--embed-dim", "16", "--edge-dim", "4", "--enc-steps", "2", "--k", "3"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn single_example_is_memorized() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "one.txt");
    let model = path(dir.path(), "m.bin");
    let input = path(dir.path(), "g.txt");
    fs::write(&corpus, SAMPLE_BLOCK).unwrap();
    fs::write(&input, SAMPLE_BLOCK.lines().nth(1).unwrap()).unwrap();
    for decoder in ["conditioned", "joint"] {
        let train = run(&[&["train", "--decoder", decoder, "--epochs", "150", "--lr", "0.01", "--corpus", &corpus, "--model", &model][..], &SMALL].concat());
        assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
        assert!(String::from_utf8_lossy(&train.stdout).starts_with("epoch 1 loss"));
        let out = run(&["generate", "--model", &model, "--input", &input]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(String::from_utf8_lossy(&out.stdout), "the center will formally open in 2009 .\n", "{decoder}");
    }
}

#[test]
fn oracle_reports_cache_too_small() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "sample.txt");
    fs::write(&corpus, SAMPLE_BLOCK).unwrap();
    let out = run(&["oracle", "--k", "1", "--corpus", &corpus]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cache size 1"));

    let out = run(&["oracle", "--k", "3", "--corpus", &corpus]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("actions Push(1) Push(1) Push(1) Push(1) Push(1) Pop Pop Pop Pop Pop"));
    assert!(text.contains("order 1:center 4:formal 0:open 2:date-entity 3:2009"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["train", "--k", "many"]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["oracle", "--corpus", "/nonexistent/corpus.txt"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.txt");
    fs::write(&bad, "a b\n(x / y\n").unwrap();
    assert_eq!(run(&["oracle", "--corpus", &bad]).status.code(), Some(2));
}

#[test]
fn config_file_and_data_root() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sample.txt"), SAMPLE_BLOCK).unwrap();
    let config = path(dir.path(), "run.cfg");
    // The file asks for k = 1, the flag overrides it.
    fs::write(&config, "corpus = sample.txt\nk = 1\n").unwrap();
    let with = |extra: &[&str]| {
        Command::new(BIN)
            .args([&["oracle", "--config", &config][..], extra].concat())
            .env("CACHENLG_DATA", dir.path())
            .output()
            .unwrap()
    };
    assert_eq!(with(&[]).status.code(), Some(3));
    assert!(with(&["--k", "3"]).status.success());
}

#[test]
fn eval_writes_report_and_bins() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "sample.txt");
    let cands = path(dir.path(), "cands.txt");
    let report = path(dir.path(), "report.txt");
    fs::write(&corpus, SAMPLE_BLOCK).unwrap();
    fs::write(&cands, "the center will formally open in 2009 .\n").unwrap();
    let out = run(&["eval", "--corpus", &corpus, "--candidates", &cands, "--out", &report]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("BLEU = 100.00\n"), "{text}");
    assert_eq!(fs::read_to_string(format!("{report}.csv")).unwrap(), "bin,count,bleu\n0-9,1,1.000000\n");

    let refs = path(dir.path(), "refs.txt");
    fs::write(&refs, "a b\nc d\n").unwrap();
    assert_eq!(run(&["eval", "--candidates", &cands, "--references", &refs]).status.code(), Some(2));
}

#[test]
fn synth_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "s.txt");
    let out = run(&["synth", "--pairs", "4", "--k", "3", "--seed", "3", "--out", &corpus]);
    assert!(out.status.success());
    let out = run(&["inspect", "--k", "3", "--corpus", &corpus, "--index", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("# 2 "));
    assert!(text.lines().nth(1).unwrap().starts_with("stack"));
    assert_eq!(run(&["inspect", "--corpus", &corpus, "--index", "9"]).status.code(), Some(1));
}
