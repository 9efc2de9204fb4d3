use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hedkit::editing::EditSession;
use hedkit::HierarchicalEd;

fn hedkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedkit"))
        .current_dir(dir)
        .env_remove("HEDKIT_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hedkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn item_ed(corpus: &Path, id: &str) -> HierarchicalEd {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(corpus.join(format!("items/{id}.json"))).unwrap()).unwrap();
    serde_json::from_value(doc["ed"].clone()).unwrap()
}

fn item_text(corpus: &Path, id: &str) -> String {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(corpus.join(format!("items/{id}.json"))).unwrap()).unwrap();
    let words: Vec<Vec<String>> = serde_json::from_value(doc["text"].clone()).unwrap();
    words.iter().map(|w| w.join(" ")).collect::<Vec<_>>().join(" | ")
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let out = hedkit(d.path(), &["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&hedkit(d.path(), &[])), 1);
    assert_eq!(code(&hedkit(d.path(), &["sweep", "--emotion", "Sad", "--level", "clause"])), 1);
    assert_eq!(code(&hedkit(d.path(), &["predict", "--predictor", "missing.json", "--text", "K AE"])), 1);
    assert_eq!(code(&hedkit(d.path(), &["--help"])), 0);
    assert_eq!(code(&hedkit(d.path(), &["eval"])), 1);
}

#[test]
fn data_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = hedkit(d.path(), &["sweep", "--emotion", "Sad", "--level", "word", "--index", "9"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
    fs::write(d.path().join("bad.json"), "{\"emotions\": [").unwrap();
    assert_eq!(code(&hedkit(d.path(), &["eval", "--pred", "bad.json", "--gt", "bad.json"])), 2);
    assert_eq!(code(&hedkit(d.path(), &["sweep", "--emotion", "Bored", "--level", "utterance"])), 2);
}

#[test]
fn gen_corpus_is_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--seed", "7", "--n", "50", "--out", "c1"]);
    ok(d.path(), &["gen-corpus", "--seed", "7", "--n", "50", "--out", "c2"]);
    let a = tree(&d.path().join("c1"));
    assert_eq!(a.len(), 51);
    assert_eq!(a, tree(&d.path().join("c2")));
    ok(d.path(), &["gen-corpus", "--seed", "8", "--n", "50", "--out", "c3"]);
    assert_ne!(a, tree(&d.path().join("c3")));
    // Rewriting an existing corpus directory replaces it.
    ok(d.path(), &["gen-corpus", "--seed", "7", "--n", "5", "--out", "c1"]);
    assert_eq!(tree(&d.path().join("c1")).len(), 6);
}

#[test]
fn seed_falls_back_to_env_then_config() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--seed", "7", "--n", "4", "--out", "flag"]);
    let run = |env: Option<&str>, args: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hedkit"));
        cmd.current_dir(d.path()).env_remove("HEDKIT_SEED").args(args);
        if let Some(v) = env {
            cmd.env("HEDKIT_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    run(Some("7"), &["gen-corpus", "--n", "4", "--out", "env"]);
    run(Some("9"), &["gen-corpus", "--seed", "7", "--n", "4", "--out", "flag_wins"]);
    fs::write(d.path().join("cfg.toml"), "[global]\nseed = 7\n[gen-corpus]\nn = 4\n").unwrap();
    run(None, &["--config", "cfg.toml", "gen-corpus", "--out", "config"]);
    let want = tree(&d.path().join("flag"));
    for dir in ["env", "flag_wins", "config"] {
        assert_eq!(tree(&d.path().join(dir)), want, "{dir}");
    }
    let out = hedkit(d.path(), &["gen-corpus", "--n", "4", "--out", "env"]);
    assert!(out.status.success());
    assert_ne!(tree(&d.path().join("env")), want);
}

#[test]
fn config_flags_win() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("cfg.toml"), "[gen-corpus]\nn = 6\n").unwrap();
    ok(d.path(), &["--config", "cfg.toml", "gen-corpus", "--out", "a"]);
    ok(d.path(), &["--config", "cfg.toml", "gen-corpus", "--n", "3", "--out", "b"]);
    assert_eq!(tree(&d.path().join("a")).len(), 7);
    assert_eq!(tree(&d.path().join("b")).len(), 4);
    fs::write(d.path().join("bad.toml"), "[gen-corpus]\nn = \"six\"\n").unwrap();
    assert_eq!(code(&hedkit(d.path(), &["--config", "bad.toml", "gen-corpus", "--out", "c"])), 2);
    assert!(!d.path().join("c").exists());
}

#[test]
fn eval_of_identical_eds_is_zero() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--seed", "1", "--n", "3", "--out", "c"]);
    fs::write(d.path().join("g.json"), item_ed(&d.path().join("c"), "0000").to_json()).unwrap();
    fs::copy(d.path().join("g.json"), d.path().join("p.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&ok(d.path(), &["eval", "--pred", "p.json", "--gt", "g.json"])).unwrap();
    for k in ["phonemes", "words", "utterance", "average"] {
        assert_eq!(report[k], 0.0, "{k}");
    }
    ok(d.path(), &["eval", "--pred", "p.json", "--gt", "g.json", "--out", "r.csv"]);
    assert_eq!(
        fs::read_to_string(d.path().join("r.csv")).unwrap(),
        "phonemes,words,utterance,average\n0.0,0.0,0.0,0.0\n"
    );
}

#[test]
fn failed_eval_keeps_previous_report() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-corpus", "--seed", "1", "--n", "3", "--out", "c"]);
    let c = d.path().join("c");
    fs::write(d.path().join("a.json"), item_ed(&c, "0000").to_json()).unwrap();
    fs::write(d.path().join("b.json"), item_ed(&c, "0001").to_json()).unwrap();
    fs::write(d.path().join("report.json"), "old").unwrap();
    let out = hedkit(d.path(), &["eval", "--pred", "a.json", "--gt", "b.json", "--out", "report.json"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(d.path().join("report.json")).unwrap(), "old");
    let leftovers = fs::read_dir(d.path()).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".hedkit-")
    });
    assert_eq!(leftovers.count(), 0);
}

#[test]
fn sweep_matches_rule_oracle() {
    let d = tempfile::tempdir().unwrap();
    let csv = ok(d.path(), &["sweep", "--emotion", "Sad", "--level", "word", "--index", "1", "--values", "0,0.5,1"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "value,pitch_mean,pitch_std,energy_mean,energy_std,duration");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    // Word 1 of the demo phrase is L AE M P; a word-level value v contributes
    // v/3 to the combined intensity and Sad stretches log duration by 0.40.
    let base = 0.076 + 0.115 + 0.080 + 0.088;
    for (row, v) in rows.iter().zip([0.0, 0.5, 1.0]) {
        assert_eq!(row[0], v);
        let want = base * (0.40 * v / 3.0f64).exp();
        assert!((row[5] - want).abs() < 1e-12, "{} vs {want}", row[5]);
    }
    assert!(rows.windows(2).all(|w| w[1][5] > w[0][5]));
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn sweep_of_ignored_emotion_is_flat() {
    let d = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "emotions": ["Angry", "Happy", "Sad", "Surprise"],
        "rules": [{"emotion": "Sad", "d_pitch": -0.25, "d_energy": -0.45, "d_log_duration": 0.4}],
    });
    fs::write(d.path().join("spec.json"), spec.to_string()).unwrap();
    ok(d.path(), &["gen-corpus", "--spec", "spec.json", "--n", "2", "--out", "c"]);
    let csv = ok(
        d.path(),
        &["sweep", "--corpus", "c", "--emotion", "Happy", "--level", "utterance", "--target", "word:0", "--out", "s.csv"],
    );
    assert!(csv.is_empty());
    let text = fs::read_to_string(d.path().join("s.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| *r == rows[0]));
}

#[test]
fn train_predict_render_edit_round() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["gen-corpus", "--seed", "3", "--n", "12", "--out", "c"]);
    ok(p, &["--seed", "3", "train-predictor", "--corpus", "c", "--epochs", "3", "--out", "pred.json", "--history", "h.json"]);
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("h.json")).unwrap()).unwrap();
    assert_eq!(history["words"].as_array().unwrap().len(), 3);
    let text = item_text(&p.join("c"), "0000");
    let ed: HierarchicalEd = serde_json::from_str(&ok(p, &["predict", "--predictor", "pred.json", "--text", &text])).unwrap();
    assert_eq!(ed.words.len(), text.split('|').count());
    ok(p, &["predict", "--predictor", "pred.json", "--text", &text, "--out", "ed.json"]);

    ok(p, &["--seed", "3", "train-renderer", "--corpus", "c", "--mode", "va", "--epochs", "2", "--out", "r.json"]);
    let contour: serde_json::Value = serde_json::from_str(&ok(p, &["render", "--renderer", "r.json", "--text", &text])).unwrap();
    let n_phones: usize = text.split('|').map(|w| w.split_whitespace().count()).sum();
    assert_eq!(contour["phones"].as_array().unwrap().len(), n_phones);
    ok(p, &["render", "--renderer", "r.json", "--text", &text, "--ed", "ed.json", "--speaker", "1", "--out", "k.json"]);
    assert_eq!(code(&hedkit(p, &["render", "--renderer", "r.json", "--text", &text, "--speaker", "99"])), 2);

    fs::write(
        p.join("edits.jsonl"),
        "{\"level\":\"word\",\"index\":0,\"emotion\":\"Sad\",\"value\":0.9,\"timestamp_ms\":5}\n\
         {\"level\":\"utterance\",\"emotion\":\"Happy\",\"value\":0.2,\"policy\":\"repredict\"}\n",
    )
    .unwrap();
    ok(p, &["edit", "--text", &text, "--predictor", "pred.json", "--log", "edits.jsonl", "--out", "s1.json", "--ed-out", "e1.json"]);
    let session = EditSession::from_json(
        &fs::read_to_string(p.join("s1.json")).unwrap(),
        Some(std::sync::Arc::new(hedkit::EdPredictor::load(p.join("pred.json")).unwrap())),
    )
    .unwrap();
    assert_eq!(session.log().len(), 2);
    assert_eq!(session.current().words[0][2], 0.9);
    assert_eq!(session.current().utterance[1], 0.2);
    assert_eq!(&HierarchicalEd::load(p.join("e1.json")).unwrap(), session.current());

    // Same inputs, same bytes.
    ok(p, &["edit", "--text", &text, "--predictor", "pred.json", "--log", "edits.jsonl", "--out", "s2.json"]);
    assert_eq!(fs::read(p.join("s1.json")).unwrap(), fs::read(p.join("s2.json")).unwrap());

    // Continue from the snapshot; a repredict edit without a predictor fails.
    fs::write(p.join("more.jsonl"), "{\"level\":\"phoneme\",\"index\":0,\"emotion\":\"Angry\",\"value\":1.0}\n").unwrap();
    ok(p, &["edit", "--session", "s1.json", "--predictor", "pred.json", "--log", "more.jsonl", "--out", "s3.json"]);
    fs::write(p.join("bad.jsonl"), "{\"level\":\"word\",\"index\":0,\"emotion\":\"Sad\",\"value\":1.5}\n").unwrap();
    let out = hedkit(p, &["edit", "--ed", "ed.json", "--text", &text, "--log", "bad.jsonl", "--out", "s4.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("edit 0"));
    assert!(!p.join("s4.json").exists());
    let out = hedkit(p, &["edit", "--ed", "ed.json", "--text", &text, "--log", "edits.jsonl", "--out", "s5.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("edit 1"));
}

#[test]
fn ranker_from_external_features() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let mut feats = String::from("segment_id,f0,f1\n");
    let mut labels = String::from("id,label\n");
    for i in 0..40 {
        let (label, x) = match i % 3 {
            0 => ("Angry", 2.0),
            1 => ("Sad", -2.0),
            _ => ("Neutral", 0.0),
        };
        feats.push_str(&format!("s{i},{},{}\n", x + 0.01 * i as f64, -x));
        labels.push_str(&format!("s{i},{label}\n"));
    }
    fs::write(p.join("f.csv"), feats).unwrap();
    fs::write(p.join("l.csv"), labels).unwrap();
    ok(p, &["train-ranker", "--features", "f.csv", "--labels", "l.csv", "--emotions", "Angry,Sad", "--out", "r.json"]);
    let bundle = hedkit::RankerBundle::load(p.join("r.json")).unwrap();
    assert_eq!(bundle.emotions().labels(), ["Angry", "Sad"]);
    fs::write(p.join("l2.csv"), "id,label\nnope,Angry\n").unwrap();
    assert_eq!(code(&hedkit(p, &["train-ranker", "--features", "f.csv", "--labels", "l2.csv", "--out", "r2.json"])), 2);
}

#[test]
fn extract_from_wav_and_alignment() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["--seed", "2", "gen-corpus", "--n", "24", "--audio", "--out", "c"]);
    ok(p, &["train-ranker", "--corpus", "c", "--out", "r.json"]);
    ok(p, &["extract-hed", "--rankers", "r.json", "--corpus", "c", "--out", "eds"]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("c/items/0003.json")).unwrap()).unwrap();
    fs::write(p.join("a.json"), doc["segmentation"].to_string()).unwrap();
    ok(p, &["extract-hed", "--rankers", "r.json", "--wav", "c/items/0003.wav", "--alignment", "a.json", "--out", "one.json"]);
    assert_eq!(
        HierarchicalEd::load(p.join("one.json")).unwrap(),
        HierarchicalEd::load(p.join("eds/0003.json")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_str(&ok(p, &["eval", "--pred", "eds", "--gt", "eds"])).unwrap();
    assert_eq!(report["average"], 0.0);
}
