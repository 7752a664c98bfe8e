use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use drawsim_core::conceptmap::{validate_map, ConceptMap, Layer};
use drawsim_core::docs::read_document;
use drawsim_core::synthesis::AlignmentReport;

fn drawsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drawsim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DRAWSIM_PROVIDERS")
        .env_remove("DRAWSIM_CORPUS_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = drawsim(args, cwd);
    assert!(
        out.status.success(),
        "drawsim {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn decompose_generate_and_check_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["decompose", "--code", "3-LS1-1", "--out", "topic.json"], d);
    ok(&["profile", "--topic", "topic.json", "--out", "ladder.json"], d);
    ok(&["profile", "--topic", "topic.json", "--level", "4", "--out", "l4.json"], d);
    let stdout = ok(&["generate", "--topic", "topic.json", "--level", "4", "--profile", "l4.json", "--out", "adv"], d);
    assert!(stdout.contains("alignment pass"), "{stdout}");

    let adv = d.join("adv");
    for f in ["image.png", "narrative.txt", "prompt.json", "alignment.json", "cmap.json", "cmap.dot"] {
        assert!(adv.join(f).exists(), "{f} missing");
    }
    let report: AlignmentReport = read_document(&adv.join("alignment.json"), "alignment_report").unwrap();
    assert!(report.pass);
    let map: ConceptMap = read_document(&adv.join("cmap.json"), "concept_map").unwrap();
    assert_eq!(map.count(Layer::Feedback), 0);
    assert!(validate_map(&map).pass());
    assert_eq!(ok(&["cmap", "validate", "adv/cmap.json"], d).trim(), "valid");
    let dot = ok(&["cmap", "render", "adv/cmap.json"], d);
    assert_eq!(dot, fs::read_to_string(adv.join("cmap.dot")).unwrap());

    // a second Topic node is reported by rule id and fails the command
    let mut broken = map.clone();
    let mut topic = broken.nodes.iter().find(|n| n.layer == Layer::Topic).unwrap().clone();
    topic.id = "second-topic".into();
    broken.nodes.push(topic);
    fs::write(d.join("broken.json"), serde_json::to_string(&broken).unwrap()).unwrap();
    let out = drawsim(&["cmap", "validate", "broken.json"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("topic-count"));

    let unprofiled = ok(&["generate", "--topic", "topic.json", "--level", "2", "--strategy", "unprofiled", "--out", "ctl"], d);
    assert!(unprofiled.contains("unprofiled"));
    assert!(!d.join("ctl/cmap.json").exists());

    let out = drawsim(&["generate", "--topic", "topic.json", "--level", "7", "--out", "bad"], d);
    assert!(!out.status.success());
}

#[test]
fn corpus_build_sample_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("corpus.toml"),
        "root = \"corpus-root\"\ntopics = [\"K-ESS3-1\", \"5-PS2-1\"]\nexemplars_per_cell = 1\nconcurrency = 2\nseed = 3\n",
    )
    .unwrap();
    let built = ok(&["corpus", "build", "--config", "corpus.toml"], d);
    assert!(built.starts_with("8 new, 0 already present"), "{built}");
    let again = ok(&["corpus", "build", "--config", "corpus.toml"], d);
    assert!(again.starts_with("0 new, 8 already present"), "{again}");
    assert!(ok(&["corpus", "reindex", "--root", "corpus-root"], d).starts_with("8 artifacts in 8 cells"));

    let sampled = ok(
        &["corpus", "sample", "--root", "corpus-root", "--raters", "2", "--per-rater", "4", "--seed", "1"],
        d,
    );
    assert!(sampled.contains("2 raters x 4 = 8 evaluations"), "{sampled}");
    let plan = fs::read_dir(d.join("corpus-root/plans")).unwrap().next().unwrap().unwrap().path();

    let table = ok(
        &["metrics", "consistency", "--root", "corpus-root", "--sample", plan.to_str().unwrap(), "--out", "cons.json"],
        d,
    );
    assert!(table.contains("Overall"));
    assert!(d.join("cons.json").exists());

    let ablation = ok(&["metrics", "ablation", "--corpus", "corpus-root/manifest.json", "--condition", "with"], d);
    assert!(ablation.contains("K-ESS3-1") && ablation.contains("5-PS2-1"), "{ablation}");
    let out = drawsim(&["metrics", "ablation", "--corpus", "corpus-root", "--condition", "without"], d);
    assert!(!out.status.success());

    let shard = fs::read_dir(d.join("corpus-root/blobs")).unwrap().next().unwrap().unwrap().path();
    let blob = fs::read_dir(shard).unwrap().next().unwrap().unwrap().path();
    let blob = blob.to_str().unwrap();
    let density = ok(&["metrics", "edge-density", blob], d);
    assert_eq!(density, ok(&["metrics", "edge-density", blob], d));
    assert!(!drawsim(&["metrics", "edge-density", blob, "--low", "200", "--high", "100"], d).status.success());
}

#[test]
fn aggregate_reads_plain_records_and_rejects_bad_likert() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let line = |artifact: &str, q7: u8| {
        format!(
            r#"{{"rater_id":"R1","artifact_id":"{artifact}","q1":"Yes","q2":"No","q3":"Yes","q4":"Yes","q5":"Partially","q6":"Yes","q7":{q7},"q8":4}}"#
        )
    };
    fs::write(d.join("good.jsonl"), format!("{}\n{}\n", line("a", 5), line("b", 3))).unwrap();
    let table = ok(&["metrics", "aggregate", "--records", "good.jsonl", "--out", "summary.json"], d);
    assert!(table.contains("Q7"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["data"]["n"], 2);

    fs::write(d.join("bad.jsonl"), format!("{}\n", line("a", 6))).unwrap();
    let out = drawsim(&["metrics", "aggregate", "--records", "bad.jsonl"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("q7"));
}
