use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pnlp::RunConfig;

fn pnlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnlp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pnlp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_lines(s: &str) -> Vec<serde_json::Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_run(dir: &Path) -> std::path::PathBuf {
    ok(&["--quiet", "--seed", "4", "--out", p(dir), "synth", "--examples", "300", "--vocab-size", "80", "--max-len", "12"]);
    let config = dir.join("run.toml");
    fs::write(
        &config,
        "preset = \"x-small\"\n[projection]\nmax_seq_len = 16\nn_hashes = 32\nfeature_size = 256\n[model]\nbottleneck = 16\nhidden = 16\n\
         [train]\nepochs = 3\nbatch_size = 16\nlearning_rate = 0.003\n\
         [data]\nvocab = \"vocab.txt\"\ntrain = \"train.jsonl\"\nval = \"val.jsonl\"\n",
    )
    .unwrap();
    config
}

#[test]
fn build_cache_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--quiet", "--out", p(dir.path()), "synth", "--examples", "20"]);
    let vocab = dir.path().join("vocab.txt");
    ok(&["--quiet", "--out", p(dir.path()), "build-cache", "--vocab", p(&vocab), "--hashes", "16", "-o", "a.bin"]);
    ok(&["--quiet", "--out", p(dir.path()), "build-cache", "--vocab", p(&vocab), "--hashes", "16", "-o", "b.bin"]);
    let a = fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.bin")).unwrap());
    ok(&["--quiet", "--out", p(dir.path()), "build-cache", "--vocab", p(&vocab), "--hashes", "16", "--width", "32", "-o", "c.bin"]);
    assert_eq!(fs::read(dir.path().join("c.bin")).unwrap().len() - 25, (a.len() - 25) / 2);
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["--quiet", "--seed", "9", "--out", p(a.path()), "synth", "--examples", "50"]);
    // output directories are created on demand
    let nested = b.path().join("x/y");
    ok(&["--quiet", "--seed", "9", "--out", p(&nested), "synth", "--examples", "50"]);
    for f in ["train.jsonl", "val.jsonl", "vocab.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(nested.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_eval_quantize_predict() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path());
    let run = dir.path().join("run");
    let logs = json_lines(&ok(&["--out", p(&run), "train", "--config", p(&config)]));
    let epochs: Vec<_> = logs.iter().filter(|l| l.get("epoch").is_some()).collect();
    assert_eq!(epochs.len(), 3);
    for key in ["epoch", "train_loss", "val_metric", "wallclock_seconds"] {
        assert!(epochs[0].get(key).is_some(), "{key}");
    }
    let summary = logs.last().unwrap();
    let best = summary["best_metric"].as_f64().unwrap();
    assert_eq!(fs::read_to_string(run.join("log.jsonl")).unwrap().lines().count(), 3);

    let model = run.join("model.bin");
    let val = dir.path().join("val.jsonl");
    let eval = json_lines(&ok(&["eval", "--model", p(&model), "--data", p(&val)]))[0].clone();
    assert_eq!(eval["value"].as_f64().unwrap(), best);
    assert_eq!(eval["metric"], "exact_match");

    ok(&["--quiet", "--out", p(&run), "quantize", "--model", p(&model), "-o", "model.q.bin"]);
    let qeval = json_lines(&ok(&["eval", "--model", p(&run.join("model.q.bin")), "--data", p(&val)]))[0].clone();
    assert_eq!(qeval["quantized"], true);
    assert!((qeval["value"].as_f64().unwrap() - best).abs() <= 0.05);

    let pred = json_lines(&ok(&["predict", "--model", p(&model), "--text", "zzz, qqq"]))[0].clone();
    assert_eq!(pred["tokens"].as_array().unwrap().len(), 3);
    assert_eq!(pred["slots"].as_array().unwrap().len(), 3);
}

#[test]
fn training_is_reproducible_and_config_echo_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path());
    for name in ["a", "b"] {
        ok(&["--quiet", "--seed", "1", "--out", p(&dir.path().join(name)), "train", "--config", p(&config), "--epochs", "2"]);
    }
    let a = dir.path().join("a");
    assert_eq!(fs::read(a.join("model.bin")).unwrap(), fs::read(dir.path().join("b/model.bin")).unwrap());

    let echoed = RunConfig::load(&a.join("config.toml")).unwrap();
    assert_eq!(echoed.train.epochs, 2);
    assert_eq!(echoed.train.seed, 1);
    assert_eq!(RunConfig::parse(&echoed.to_toml().unwrap(), None).unwrap(), echoed);
    assert!(echoed.data.vocab.as_ref().unwrap().is_absolute());

    // retraining from the echoed config alone gives the same model
    let c = dir.path().join("c");
    ok(&["--quiet", "--out", p(&c), "train", "--config", p(&a.join("config.toml"))]);
    assert_eq!(fs::read(a.join("model.bin")).unwrap(), fs::read(c.join("model.bin")).unwrap());
}

#[test]
fn project_dumps_features() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path());
    ok(&[
        "--quiet",
        "--out",
        p(dir.path()),
        "project",
        "--config",
        p(&config),
        "--input",
        p(&dir.path().join("val.jsonl")),
        "-o",
        "val.feat",
    ]);
    let feats = pnlp::features_file::read(&dir.path().join("val.feat")).unwrap();
    let val = pnlp::io::load_jsonl(&dir.path().join("val.jsonl")).unwrap();
    assert_eq!(feats.len(), val.len());
    assert_eq!(feats[0].rows(), 256);
    assert_eq!(feats[0].valid_len(), val[0].tokens.len().min(16));
}

#[test]
fn params_for_presets() {
    assert_eq!(ok(&["params", "--preset", "base"]).trim(), "1138126");
    assert_eq!(ok(&["params", "--preset", "x-small"]).trim(), "203534");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "preset = \"base\"\n[model]\nbottleneck = 64\n").unwrap();
    assert_eq!(ok(&["params", "--config", p(&cfg)]).trim(), "334606");
}

#[test]
fn exit_codes() {
    assert_eq!(pnlp(&["params", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(pnlp(&["nonsense"]).status.code(), Some(1));
    assert_eq!(pnlp(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "preset = \"base\"\n[model]\ninput_rows = 7\n").unwrap();
    let out = pnlp(&["params", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("input_rows"));
    assert_eq!(pnlp(&["eval", "--model", p(&dir.path().join("missing.bin")), "--data", "x"]).status.code(), Some(2));
    let garbage = dir.path().join("g.bin");
    fs::write(&garbage, b"PNLPMODL garbage").unwrap();
    assert_eq!(pnlp(&["eval", "--model", p(&garbage), "--data", "x"]).status.code(), Some(2));
}

#[test]
fn importers_summarize_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("mtop.tsv");
    fs::write(
        &raw,
        "1\tIN:CREATE_ALARM\t0:7:SL:DATE_TIME\ttomorrow alarm\n\
         2\tIN:GET_WEATHER\t\tweather now\n\
         3\tIN:X\t5:99:SL:LOC\tshort row\n",
    )
    .unwrap();
    let fields = dir.path().join("mtop.toml");
    fs::write(&fields, "utterance = 3\nslots = 2\n").unwrap();
    let summary =
        json_lines(&ok(&["--quiet", "--out", p(dir.path()), "import-mtop", "--raw", p(&raw), "--fields", p(&fields), "-o", "a.jsonl"]))[0]
            .clone();
    assert_eq!(summary, serde_json::json!({"examples": 2, "skipped": 1, "labels": 2}));
    ok(&["--quiet", "--out", p(dir.path()), "import-mtop", "--raw", p(&raw), "--fields", p(&fields), "-o", "b.jsonl"]);
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());
    let ex = pnlp::io::load_jsonl(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(ex[0].slots.as_ref().unwrap(), &["SL:DATE_TIME", "O"]);

    fs::write(&raw, "1\tIN:A\t0:x:SL:B\tbad span\n").unwrap();
    let out = pnlp(&["--out", p(dir.path()), "import-mtop", "--raw", p(&raw), "--fields", p(&fields), "-o", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));

    let atis = dir.path().join("atis.tsv");
    fs::write(&atis, "id\tutterance\tslots\tintent\n0\tshow me flights to boston\tO O O O B-city\tatis_flight\n1\twhat's the fare?\tO O O\tatis_airfare\n2\t \tO\tatis_flight\n").unwrap();
    let af = dir.path().join("atis.toml");
    fs::write(&af, "utterance = 1\nintent = 3\nheader = true\n").unwrap();
    let summary = json_lines(&ok(&[
        "--quiet",
        "--out",
        p(dir.path()),
        "import-multiatis",
        "--raw",
        p(&atis),
        "--fields",
        p(&af),
        "-o",
        "atis.jsonl",
    ]))[0]
        .clone();
    assert_eq!(summary, serde_json::json!({"examples": 2, "skipped": 1, "labels": 2}));
    let ex = pnlp::io::load_jsonl(&dir.path().join("atis.jsonl")).unwrap();
    assert_eq!(ex[1].label.as_deref(), Some("atis_airfare"));
    assert_eq!(ex[1].tokens.last().map(String::as_str), Some("?"));
}
