use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use situmatch::pipeline::{run_all, run_stage, RunConfig, Stage, StageStatus};
use situmatch::Error;

fn config_text(n_docs: usize) -> String {
    format!(
        r#"
seed = 7
output_dir = "out"

[paths]
submissions = "synth/submissions.jsonl"
comments = "synth/comments.jsonl"
bots = "synth/bots.txt"

[synth]
out_dir = "synth"
n_docs = {n_docs}

[study.topics]
k_candidates = [2]

[study.topics.lda]
iterations = 60
burn_in = 20
samples = 5

[study.matching.bootstrap]
b = 200

[annotate]
pairs = 20
practice_pairs = 2
annotators = ["ann", "bea", "cal", "dee", "eli"]
"#
    )
}

fn setup(dir: &Path, n_docs: usize) -> RunConfig {
    let path = dir.join("run.toml");
    fs::write(&path, config_text(n_docs)).unwrap();
    RunConfig::load(&path).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_run_writes_report_and_skips_when_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 600);
    assert_eq!(run_stage(Stage::Synth, &cfg).unwrap().status, StageStatus::Ran);
    let first = run_all(&cfg).unwrap();
    assert!(first.iter().all(|o| o.status == StageStatus::Ran));
    for f in [
        "sweep.csv",
        "topic_or.csv",
        "age_or.csv",
        "balance.csv",
        "demographics.csv",
        "topics.csv",
        "tests.jsonl",
    ] {
        let text = fs::read_to_string(cfg.output_dir.join("report").join(f)).unwrap();
        assert!(text.lines().count() >= 2, "{f} has no data rows");
    }
    let second = run_all(&cfg).unwrap();
    assert!(second.iter().all(|o| o.status == StageStatus::Skipped));

    // A changed parameter reruns that stage; upstream stays cached.
    let mut changed = cfg.clone();
    changed.study.matching.bootstrap.b = 100;
    let third = run_all(&changed).unwrap();
    let status: BTreeMap<&str, StageStatus> = third.iter().map(|o| (o.stage.name(), o.status)).collect();
    assert_eq!(status["match"], StageStatus::Skipped);
    assert_eq!(status["estimate"], StageStatus::Ran);
    assert_eq!(status["report"], StageStatus::Ran);

    // Manifests record the actual input hashes.
    let manifest = situmatch::pipeline::Manifest::load(&cfg.output_dir.join("extract"))
        .unwrap()
        .unwrap();
    let docs_hash = situmatch::pipeline::manifest::hash_file(&cfg.output_dir.join("ingest/documents.jsonl")).unwrap();
    assert_eq!(manifest.inputs["documents"], docs_hash);

    let prepared = run_stage(Stage::AnnotateServe, &cfg).unwrap();
    assert_eq!(prepared.status, StageStatus::Ran);
    let (pairs, practice) = situmatch::pipeline::stages::load_annotation_pairs(&cfg).unwrap();
    assert_eq!((pairs.len(), practice.len()), (20, 2));
    let shown = fs::read_to_string(prepared.dir.join("pairs.json")).unwrap();
    assert!(!shown.contains("distance") && !shown.contains("outcome"));
}

#[test]
fn tampered_output_reruns_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 400);
    run_stage(Stage::Synth, &cfg).unwrap();
    run_stage(Stage::Ingest, &cfg).unwrap();
    let docs = cfg.output_dir.join("ingest/documents.jsonl");
    fs::write(&docs, "").unwrap();
    assert_eq!(run_stage(Stage::Ingest, &cfg).unwrap().status, StageStatus::Ran);
    assert!(!fs::read_to_string(&docs).unwrap().is_empty());
}

#[test]
fn stage_before_its_upstream_names_what_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 400);
    match run_stage(Stage::Extract, &cfg) {
        Err(Error::MissingArtifact { stage, run_first, .. }) => {
            assert_eq!((stage.as_str(), run_first.as_str()), ("extract", "ingest"));
        }
        other => panic!("{other:?}"),
    }
    run_stage(Stage::Synth, &cfg).unwrap();
    for s in [Stage::Ingest, Stage::Extract, Stage::Topics, Stage::Embed] {
        run_stage(s, &cfg).unwrap();
    }
    let err = run_stage(Stage::Match, &cfg).unwrap_err();
    assert!(err.to_string().contains("run stage `propensity` first"), "{err}");
}

#[test]
fn missing_input_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 400);
    match run_stage(Stage::Ingest, &cfg) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "paths.submissions"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn locked_output_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 400);
    let _held = situmatch::pipeline::RunLock::acquire(&cfg.output_dir).unwrap();
    assert!(matches!(run_stage(Stage::Ingest, &cfg), Err(Error::Locked(_))));
}

#[test]
fn identical_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = setup(dir, 500);
        run_stage(Stage::Synth, &cfg).unwrap();
        run_all(&cfg).unwrap();
    }
    let fa = files(&a.path().join("out"));
    let fb = files(&b.path().join("out"));
    assert!(fa.len() > 15);
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{k} differs");
    }
}
