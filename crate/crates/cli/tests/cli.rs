use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtlsum::data::{encode_records, read_jsonl, Limits, PAD, START};
use mtlsum::decoding::{greedy_decode, ids_to_tokens, DecodeConfig, DecodeRecord, PointerGenerator};
use mtlsum::training::read_metrics;
use mtlsum_cli::commands::load_checkpoint;
use mtlsum_cli::config::RunConfig;
use tempfile::TempDir;

fn mtlsum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtlsum"))
        .args(args)
        .env("MTLSUM_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic corpora plus a run config with tiny dimensions.
fn workspace(extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    let o = mtlsum(&["synth", p(&data), "--train", "120", "--valid", "16", "--test", "12", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut cfg = std::fs::read_to_string(data.join("run.toml")).unwrap();
    cfg = cfg.replace("max_steps = 2000", "max_steps = 40\nbatch_size = 4\ncheckpoint_every = 10");
    cfg = cfg.replace("val_every = 250", "val_every = 10");
    cfg = cfg.replace("\n[[tasks]]", "\n[[tasks]]\nmodel = { hidden = 6, emb_dim = 4 }");
    cfg.push_str(extra);
    let path = data.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    (dir, path)
}

fn train(cfg: &Path) -> Output {
    mtlsum(&["train", p(cfg)])
}

#[test]
fn gradcheck_passes_and_is_reproducible() {
    let a = mtlsum(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert!(stdout(&a).contains("PASS"));
    let b = mtlsum(&["gradcheck", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let c = mtlsum(&["gradcheck", "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn gradcheck_f32_warns_about_tolerance() {
    let o = mtlsum(&["gradcheck", "--f32"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stderr(&o).contains("relaxed to 1e-2"), "{}", stderr(&o));
    assert!(stdout(&o).contains("tolerance 1e-2"));
}

#[test]
fn gradcheck_failure_exits_nonzero() {
    // with strong curvature a step this large leaves truncation error far above 1e-4
    let o = mtlsum(&["gradcheck", "--init-range", "2", "--step", "1e-2"]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn three_way_final_run_writes_artifacts() {
    let (_dir, cfg) = workspace("");
    let o = train(&cfg);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = cfg.parent().unwrap().join("run");
    let echo = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert_eq!(echo, std::fs::read_to_string(&cfg).unwrap());
    let (loaded, _) = RunConfig::load(&cfg).unwrap();
    let (effective, _) = RunConfig::load(&run.join("effective.toml")).unwrap();
    assert_eq!(effective, loaded);
    assert_eq!(loaded.tasks.len(), 3);
    assert!(!run.join("run.lock").exists());

    let metrics = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.iter().filter(|m| m.kind == "train").count(), 40);
    for task in ["copy-oov", "keyword-extract", "subset-rewrite"] {
        assert_eq!(metrics.iter().filter(|m| m.kind == "val" && m.task == task).count(), 4);
        assert!(run.join(format!("vocab-{task}.txt")).exists());
    }
    let mut ck: Vec<_> = std::fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    ck.sort();
    assert_eq!(ck.len(), 4);
    let ck = load_checkpoint(&run).unwrap();
    assert_eq!(ck.step, 40);
    assert!((ck.plan.gamma - 1e-5).abs() < 1e-20);
    assert!(run.join("eval/report.json").exists());
    assert_eq!(std::fs::read_to_string(run.join("decoded.jsonl")).unwrap().lines().count(), 12);

    // the same config and seed give the same metric log
    let again = cfg.parent().unwrap().join("again");
    let o = mtlsum(&["train", p(&cfg), "--output-dir", p(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_metrics(&again.join("metrics.jsonl")).unwrap(), metrics);
}

#[test]
fn config_errors_exit_2_with_field_names() {
    let (_dir, cfg) = workspace("");
    let text = std::fs::read_to_string(&cfg).unwrap();

    std::fs::write(&cfg, text.replace("preset = \"final\"", "preset = \"final\"\ngamma = -1.0")).unwrap();
    let o = train(&cfg);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sharing.gamma"), "{}", stderr(&o));

    std::fs::write(&cfg, format!("{text}\nmystery = 3\n")).unwrap();
    let o = train(&cfg);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mystery"), "{}", stderr(&o));

    std::fs::write(&cfg, text.replacen("copy-oov/train.jsonl", "copy-oov/nowhere.jsonl", 1)).unwrap();
    let o = train(&cfg);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.jsonl"), "{}", stderr(&o));
}

#[test]
fn locked_run_directory_is_refused() {
    let (_dir, cfg) = workspace("");
    let run = cfg.parent().unwrap().join("run");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("run.lock"), "1").unwrap();
    let o = train(&cfg);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
}

#[test]
fn numeric_abort_exits_4() {
    let (_dir, cfg) = workspace("");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg, text.replace("hidden = 6, emb_dim = 4", "hidden = 6, emb_dim = 4, init_range = 1e200")).unwrap();
    let o = train(&cfg);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stdout(&o).contains("diverged"));
}

#[test]
fn decode_defaults_determinism_and_greedy_equivalence() {
    let (_dir, cfg) = workspace("");
    assert_eq!(code(&train(&cfg)), 0);
    let d = cfg.parent().unwrap();
    let run = d.join("run");
    let input = d.join("copy-oov/test.jsonl");
    let out = |name: &str, extra: &[&str]| {
        let path = d.join(name);
        let mut args = vec!["decode", p(&run), p(&input), "-o", p(&path)];
        args.extend_from_slice(extra);
        let o = mtlsum(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read_to_string(path).unwrap()
    };
    let default = out("a.jsonl", &[]);
    assert_eq!(default, out("b.jsonl", &[]));
    assert_eq!(default, out("c.jsonl", &["--beam", "4"]));

    let beam1 = out("g.jsonl", &["--beam", "1", "--max-len", "30"]);
    let ck = load_checkpoint(&run).unwrap();
    let task = ck.primary().unwrap();
    let vocab = task.vocab().unwrap();
    let examples = encode_records(&read_jsonl(&input).unwrap(), &vocab, Limits::default());
    let cfg = DecodeConfig {
        beam: 1,
        max_len: 30,
        banned: vec![PAD, START],
        ..DecodeConfig::default()
    };
    for (line, ex) in beam1.lines().zip(&examples) {
        let rec: DecodeRecord = serde_json::from_str(line).unwrap();
        let model = PointerGenerator::new(&task.params, ck.coverage_active, ex).unwrap();
        let ids = greedy_decode(&model, &cfg).unwrap();
        assert_eq!(rec.hypothesis, ids_to_tokens(&ids, &vocab, &ex.oovs).join(" "));
    }
}

#[test]
fn bad_checkpoints_exit_3() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"source\": \"a b\"}\n").unwrap();
    let out = dir.path().join("out.jsonl");
    let missing = dir.path().join("missing.json");
    let o = mtlsum(&["decode", p(&missing), p(&input), "-o", p(&out)]);
    assert_eq!(code(&o), 3);

    let (_w, cfg) = workspace("");
    assert_eq!(code(&train(&cfg)), 0);
    let ck = cfg.parent().unwrap().join("run/checkpoints/step-00000040.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&ck).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    let bad = dir.path().join("v99.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let o = mtlsum(&["decode", p(&bad), p(&input), "-o", p(&out)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("version 99"), "{}", stderr(&o));
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn eval_identical_files_score_one() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("x.txt");
    std::fs::write(&f, "the cat sat\na b c d\n").unwrap();
    let out = dir.path().join("r");
    let o = mtlsum(&["eval", p(&f), p(&f), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("ROUGE-L"));
    let r = report(&out);
    for m in ["rouge1", "rouge2", "rouge_l"] {
        assert_eq!(r[m]["f1"], 1.0);
    }
}

#[test]
fn eval_empty_line_keywords_and_misalignment() {
    let dir = TempDir::new().unwrap();
    let hyp = dir.path().join("h.txt");
    let refs = dir.path().join("r.txt");
    let kw = dir.path().join("k.txt");
    std::fs::write(&hyp, "a c x\n\n").unwrap();
    std::fs::write(&refs, "a b c d\nq r\n").unwrap();
    std::fs::write(&kw, "a b c d\n{\"keywords\": [\"q\"]}\n").unwrap();
    let out = dir.path().join("o");
    let o = mtlsum(&["eval", p(&hyp), p(&refs), "--keywords", p(&kw), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores: Vec<serde_json::Value> = std::fs::read_to_string(out.join("scores.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(scores.len(), 2);
    assert_eq!(scores[1]["rouge1"]["f1"], 0.0);
    assert_eq!(scores[1]["rouge_l"]["f1"], 0.0);
    // keywords {a,b,c,d}, hypothesis has a and c
    assert_eq!(scores[0]["saliency"], 50.0);
    assert_eq!(scores[1]["saliency"], 0.0);
    assert_eq!(report(&out)["saliency"], 25.0);

    std::fs::write(&refs, "a b c d\n").unwrap();
    let o = mtlsum(&["eval", p(&hyp), p(&refs)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("1 lines"), "{}", stderr(&o));
}

#[test]
fn synth_is_deterministic_and_rejects_unknown_kinds() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(code(&mtlsum(&["synth", p(d), "--train", "30", "--valid", "5", "--test", "5"])), 0);
    }
    for kind in ["copy-oov", "keyword-extract", "subset-rewrite"] {
        for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt"] {
            assert_eq!(std::fs::read(a.join(kind).join(f)).unwrap(), std::fs::read(b.join(kind).join(f)).unwrap());
        }
    }
    let o = mtlsum(&["synth", p(&a), "--kinds", "poetry"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("poetry"));
}
