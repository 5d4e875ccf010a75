use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gdr_core::config::ModelConfig;
use gdr_core::encoder::Vocab;
use gdr_core::matcher::NliLabel;
use gdr_core::pipeline::MatcherModel;
use gdr_core::Tensor;

fn gdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gdr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 10] = [
    "--train-dialogues",
    "40",
    "--valid-dialogues",
    "5",
    "--test-dialogues",
    "6",
    "--nli-train",
    "30",
    "--nli-test",
    "9",
];

fn synth(dir: &Path) {
    let mut args = vec!["synth", "--out-dir", p(dir), "--seed", "3"];
    args.extend(SMALL);
    ok(&args);
}

const TINY: [&str; 8] = ["--hidden", "8", "--heads", "2", "--layers", "1", "--lr-scale", "0.3"];

fn bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_is_reproducible_and_validated() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth(&a);
    synth(&b);
    for f in ["dialogues.train.jsonl", "dialogues.valid.jsonl", "dialogues.test.jsonl", "nli.train.jsonl", "nli.test.jsonl", "vocab.txt"] {
        assert_eq!(bytes(&a.join(f)), bytes(&b.join(f)), "{f}");
    }
    let out = gdr(&["synth", "--out-dir", p(&t.path().join("c")), "--train-dialogues", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one_before_work() {
    let t = tempfile::tempdir().unwrap();
    let out = gdr(&["train-gdr", "--data", p(t.path()), "--out-dir", p(&t.path().join("m")), "--variant", "gdr"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--matcher"));
    assert!(!t.path().join("m").exists());
    assert_eq!(gdr(&["train-gdr", "--variant", "xyz", "--out-dir", "x"]).status.code(), Some(1));
    assert_eq!(gdr(&["nonsense"]).status.code(), Some(1));
    assert!(gdr(&["--help"]).status.success());
}

#[test]
fn missing_inputs_are_data_errors() {
    let t = tempfile::tempdir().unwrap();
    let out = gdr(&["train-matcher", "--data", p(&t.path().join("none")), "--out-dir", p(&t.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_three_and_names_the_step() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data);
    let out_dir = t.path().join("g");
    let mut args = vec!["train-gdr", "--data", p(&data), "--out-dir", p(&out_dir), "--variant", "g"];
    args.extend(TINY);
    args.extend(["--lr-scale", "1e300", "--epochs", "3"]);
    let out = gdr(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data);
    let cfg = t.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nepochs = 1\nmax_steps = 2\nhidden = 8\nheads = 2\nlayers = 1\n").unwrap();
    let out_dir = t.path().join("g");
    ok(&["train-gdr", "--config", p(&cfg), "--data", p(&data), "--out-dir", p(&out_dir), "--variant", "g", "--max-steps", "3"]);
    let log = fs::read_to_string(out_dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["training"]["model"]["hidden"], 8);
    assert_eq!(manifest["config"]["training"]["max_steps"], 3);
    assert!(manifest["finished"].is_string());
    let bad = t.path().join("bad.cfg");
    fs::write(&bad, "no-such-flag = 1\n").unwrap();
    let out = gdr(&["train-gdr", "--config", p(&bad), "--data", p(&data), "--out-dir", p(&out_dir), "--variant", "g"]);
    assert_eq!(out.status.code(), Some(1));
}

fn forced_matcher(dir: &Path, data: &Path, label: NliLabel) {
    let vocab = Vocab::load(&data.join("vocab.txt")).unwrap();
    let cfg = ModelConfig { hidden: 8, heads: 2, ffn_inner: 16, matcher_layers: 1, matcher_mlp_hidden: 8, ..ModelConfig::desk(vocab.len()) };
    let mut m = MatcherModel::init(&cfg, 1).unwrap();
    m.store.get_mut("matcher.mlp.w3").unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut b = vec![0.0; 3];
    b[label.index()] = 5.0;
    *m.store.get_mut("matcher.mlp.b3").unwrap() = Tensor::new(vec![3], b).unwrap();
    fs::create_dir_all(dir).unwrap();
    m.store.save(&dir.join("model.gdr")).unwrap();
    vocab.save(&dir.join("vocab.txt")).unwrap();
    let card = serde_json::json!({"kind": "matcher", "variant": null, "model": cfg, "decode": null});
    fs::write(dir.join("model.json"), card.to_string()).unwrap();
}

#[test]
fn full_run_is_byte_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data);
    let run = |tag: &str| {
        let m = t.path().join(format!("matcher{tag}"));
        let g = t.path().join(format!("gdr{tag}"));
        let e = t.path().join(format!("eval{tag}"));
        let mut args = vec!["train-matcher", "--data", p(&data), "--out-dir", p(&m), "--epochs", "2", "--seed", "5"];
        args.extend(TINY);
        ok(&args);
        let mut args = vec!["train-gdr", "--data", p(&data), "--out-dir", p(&g), "--matcher", p(&m), "--epochs", "2", "--warmup-steps", "2", "--seed", "5", "--max-decode-len", "12"];
        args.extend(TINY);
        ok(&args);
        let report = ok(&["eval", "--checkpoint", p(&g), "--matcher", p(&m), "--data", p(&data), "--out-dir", p(&e)]);
        (m, g, e, report.stdout)
    };
    let (m1, g1, e1, r1) = run("1");
    let (m2, g2, e2, r2) = run("2");
    for f in ["model.gdr", "model.json", "log.jsonl", "metrics.json"] {
        assert_eq!(bytes(&m1.join(f)), bytes(&m2.join(f)), "matcher {f}");
    }
    for f in ["model.gdr", "model.json", "log.jsonl"] {
        assert_eq!(bytes(&g1.join(f)), bytes(&g2.join(f)), "pipeline {f}");
    }
    for f in ["report.json", "responses.jsonl"] {
        assert_eq!(bytes(&e1.join(f)), bytes(&e2.join(f)), "eval {f}");
    }
    assert_eq!(r1, r2);
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    let mut keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["dist1", "dist2", "entailment_ratio", "examples", "ppl", "tokens", "variant"]);
    let log = fs::read_to_string(g1.join("log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for k in ["step", "phase", "loss_g", "loss_r", "lr"] {
        assert!(first.get(k).is_some(), "{k}");
    }

    // Respond: one line per query, deterministic, OOV words tolerated.
    let persona = t.path().join("persona.txt");
    fs::write(&persona, "i have a dog .\ni play golf .\n").unwrap();
    let respond = |variant: &str, matcher: &Path| {
        ok(&["respond", "--checkpoint", p(&g1), "--matcher", p(matcher), "--variant", variant, "--persona", p(&persona), "--query", "what pet do you have ?", "--query", "zyzzyva quux ?"]).stdout
    };
    let a = respond("gdr", &m1);
    assert_eq!(a, respond("gdr", &m1));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2);
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for k in ["query", "prototype", "label", "probs", "response_weights", "masked", "final"] {
        assert!(line.get(k).is_some(), "{k}");
    }

    let ent = t.path().join("entail");
    forced_matcher(&ent, &data, NliLabel::Entailment);
    for l in String::from_utf8(respond("gdr", &ent)).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["label"], "entailment");
        assert_eq!(v["masked"], v["prototype"]);
    }
    let g_only = String::from_utf8(respond("g", &m1)).unwrap();
    let v: serde_json::Value = serde_json::from_str(g_only.lines().next().unwrap()).unwrap();
    assert!(v["masked"].is_null() && v["label"].is_null());
    assert_eq!(v["final"], v["prototype"]);

    // An empty evaluation set is an error.
    let empty = t.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = gdr(&["eval", "--checkpoint", p(&g1), "--matcher", p(&m1), "--dialogues", p(&empty)]);
    assert_eq!(out.status.code(), Some(2));
}
