mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kge_core::checkpoint::{read_header, save_checkpoint, CheckpointMeta};
use kge_core::graph::{build_vocab, write_triples, RawTriple};
use kge_core::{ModelKind, ModelParams, Triple};
use tempfile::TempDir;

fn kge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kge"))
        .args(args)
        .env_remove("KGE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TEN: &str = "a\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\te\ne\tr\tf\nf\tr\tg\ng\tr\th\nh\tr\ti\ni\tr\tj\nj\tr\ta\n";

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn ingest_splits_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("kg.tsv");
    fs::write(&input, TEN).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = kge(&["ingest", p(&input), p(out), "--seed", "3", "--ratios", "0.6,0.2,0.2"]);
        assert!(run.status.success(), "{}", stderr(&run));
        assert!(stdout(&run).contains("entities=10"));
    }
    let total: usize = ["train.tsv", "valid.tsv", "test.tsv"].iter().map(|f| line_count(&a.join(f))).sum();
    assert_eq!(total, 10);
    let mut lines: Vec<String> = ["train.tsv", "valid.tsv", "test.tsv"]
        .iter()
        .flat_map(|f| fs::read_to_string(a.join(f)).unwrap().lines().map(String::from).collect::<Vec<_>>())
        .collect();
    lines.sort();
    lines.dedup();
    assert_eq!(lines.len(), 10);
    for f in ["train.tsv", "valid.tsv", "test.tsv", "entities.dict", "relations.dict"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ingest_reports_malformed_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("kg.tsv");
    fs::write(&input, "a\tr\tb\nb\tr\tc\nc\tr\td\nd r e\n").unwrap();
    let run = kge(&["ingest", p(&input), p(&dir.path().join("out"))]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains(":4"), "{}", stderr(&run));
}

/// Ingested toy graph plus a config file in `dir`.
fn toy_setup(dir: &Path, model: &str, epochs: usize, extra: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    let run = kge(&["ingest", p(&common::fixture("toy_kg.tsv")), p(&data), "--seed", "1"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let config = dir.join("run.conf");
    fs::write(
        &config,
        format!(
            "model = {model}\ndim = 16\nepochs = {epochs}\nlearning_rate = 0.01\ndata_dir = data\ncheckpoint_dir = ckpt\ncheckpoint_every = 2\n{extra}"
        ),
    )
    .unwrap();
    config
}

#[test]
fn train_writes_checkpoint_and_resumes() {
    let dir = TempDir::new().unwrap();
    let config = toy_setup(dir.path(), "DistMult", 3, "");
    let run = kge(&["train", "--config", p(&config)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let ckpt = dir.path().join("ckpt/model.kge");
    let header = read_header(&ckpt).unwrap();
    assert_eq!(header.kind, ModelKind::DistMult);
    assert_eq!(header.dim, 16);
    assert_eq!(header.n_entities, 85);
    assert_eq!(header.n_relations, 3);
    assert_eq!(CheckpointMeta::load(&ckpt).unwrap().epoch, 3);

    let text = fs::read_to_string(&config).unwrap().replace("epochs = 3", "epochs = 5");
    fs::write(&config, text).unwrap();
    let run = kge(&["train", "--config", p(&config), "--resume"]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(stdout(&run).contains("epoch=5"));
    assert_eq!(CheckpointMeta::load(&ckpt).unwrap().epoch, 5);
    assert_eq!(line_count(&dir.path().join("ckpt/losses.tsv")), 5);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let config = toy_setup(dir.path(), "DistMult", 1, "learnin_rate = 0.1\n");
    let run = kge(&["train", "--config", p(&config)]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("learnin_rate"), "{}", stderr(&run));
}

#[test]
fn divergence_exits_nonzero_and_keeps_checkpoint() {
    let dir = TempDir::new().unwrap();
    let config = toy_setup(dir.path(), "DistMult", 2, "");
    assert!(kge(&["train", "--config", p(&config)]).status.success());
    let ckpt = dir.path().join("ckpt/model.kge");
    let before = fs::read(&ckpt).unwrap();

    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("epochs = 2", "epochs = 50")
        .replace("learning_rate = 0.01", "learning_rate = 1e300\noptimizer = sgd");
    fs::write(&config, text).unwrap();
    let run = kge(&["train", "--config", p(&config), "--resume"]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("non-finite") || stderr(&run).contains("diverged"), "{}", stderr(&run));
    assert_eq!(fs::read(&ckpt).unwrap(), before);
    assert_eq!(CheckpointMeta::load(&ckpt).unwrap().epoch, 2);
}

#[test]
fn parallel_training_warns() {
    let dir = TempDir::new().unwrap();
    let config = toy_setup(dir.path(), "ComplEx", 1, "");
    let run = Command::new(env!("CARGO_BIN_EXE_kge"))
        .args(["train", "--config", p(&config)])
        .env("KGE_THREADS", "2")
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(stderr(&run).contains("scheduling"), "{}", stderr(&run));
}

/// TransE, dim 2: a + r lands exactly on b and b - r exactly on a.
fn perfect_model(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let raw = vec![RawTriple::new("a", "r", "b"), RawTriple::new("c", "s", "c")];
    let vocab = build_vocab(&raw);
    vocab.save(&data).unwrap();
    let a = vocab.entity_id("a").unwrap();
    let r = vocab.relation_id("r").unwrap();
    let b = vocab.entity_id("b").unwrap();
    write_triples(&data.join("test.tsv"), &[Triple::new(a, r, b)], &vocab).unwrap();
    let mut entity = vec![0.0; 6];
    entity[b * 2] = 1.0;
    entity[vocab.entity_id("c").unwrap() * 2..][..2].copy_from_slice(&[5.0, 5.0]);
    let mut relation = vec![0.0; 4];
    relation[r * 2] = 1.0;
    let params = ModelParams::from_parts(ModelKind::TransEL2, 2, entity, relation).unwrap();
    let ckpt = dir.join("model.kge");
    save_checkpoint(&params, &ckpt).unwrap();
    (ckpt, data)
}

#[test]
fn eval_prints_both_settings() {
    let dir = TempDir::new().unwrap();
    let (ckpt, data) = perfect_model(dir.path());
    let out = dir.path().join("metrics");
    let run = kge(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--setting", "both", "--out", p(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    assert_eq!(text.matches("MRR=1.0000").count(), 2, "{text}");
    assert!(text.contains("setting=raw") && text.contains("setting=filtered"));
    assert!(out.join("metrics_raw.txt").is_file() && out.join("ranks_filtered.tsv").is_file());
}

#[test]
fn eval_rejects_empty_test_and_vocab_mismatch() {
    let dir = TempDir::new().unwrap();
    let (ckpt, data) = perfect_model(dir.path());
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let run = kge(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--test", p(&empty)]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("empty"), "{}", stderr(&run));

    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    build_vocab(&[RawTriple::new("x", "r", "y")]).save(&other).unwrap();
    fs::copy(data.join("test.tsv"), other.join("test.tsv")).unwrap();
    let run = kge(&["eval", "--checkpoint", p(&ckpt), "--data", p(&other)]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("mismatch"), "{}", stderr(&run));
}

fn rank_setup(dir: &Path) -> (std::path::PathBuf, [std::path::PathBuf; 3]) {
    let config = toy_setup(dir, "DistMult", 2, "");
    assert!(kge(&["train", "--config", p(&config)]).status.success());
    let drugs = dir.join("drugs.txt");
    let targets = dir.join("targets.txt");
    let relations = dir.join("relations.txt");
    let names: Vec<String> = (0..12).map(|i| format!("Compound::C{i:02}")).collect();
    fs::write(&drugs, names.join("\n")).unwrap();
    fs::write(&targets, "Disease::D00\nDisease::D01\n").unwrap();
    fs::write(&relations, "treats::Compound:Disease\n").unwrap();
    (config, [drugs, targets, relations])
}

fn rank_args<'a>(config: &'a Path, files: &'a [std::path::PathBuf; 3], out: &'a Path) -> Vec<&'a str> {
    vec![
        "rank",
        "--config",
        p(config),
        "--drugs",
        p(&files[0]),
        "--targets",
        p(&files[1]),
        "--relations",
        p(&files[2]),
        "--out",
        p(out),
    ]
}

#[test]
fn rank_writes_sorted_top_k() {
    let dir = TempDir::new().unwrap();
    let (config, files) = rank_setup(dir.path());
    let out = dir.path().join("top.tsv");
    let mut args = rank_args(&config, &files, &out);
    args.extend(["--k", "5"]);
    let run = kge(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5);
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 5);
        assert_eq!(row[0], (i + 1).to_string());
        assert_eq!(row[3], "treats::Compound:Disease");
    }

    // default k covers all 12 candidates
    let run = kge(&rank_args(&config, &files, &out));
    assert!(run.status.success());
    assert_eq!(line_count(&out), 12);
}

#[test]
fn rank_strict_and_lenient() {
    let dir = TempDir::new().unwrap();
    let (config, files) = rank_setup(dir.path());
    let mut text = fs::read_to_string(&files[0]).unwrap();
    text.push_str("\nCompound::Nope\n");
    fs::write(&files[0], text).unwrap();
    let out = dir.path().join("top.tsv");
    let run = kge(&rank_args(&config, &files, &out));
    assert!(!run.status.success());
    assert!(stderr(&run).contains("Compound::Nope"));
    let mut args = rank_args(&config, &files, &out);
    args.push("--lenient");
    let run = kge(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(stderr(&run).contains("Compound::Nope"));
    assert_eq!(line_count(&out), 12);
}

fn ranking_file(path: &Path, drugs: &[&str]) {
    let text: String = drugs
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}\t{d}\t{}\trel\ttarget\n", i + 1, -(i as f64)))
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn consensus_intersects_and_validates() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("TransE.tsv"), dir.path().join("RotatE.tsv"));
    ranking_file(&a, &["A", "B", "C"]);
    ranking_file(&b, &["B", "C", "D"]);
    let out = dir.path().join("consensus.tsv");
    let run = kge(&["consensus", p(&a), p(&b), "--out", p(&out)]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(fs::read_to_string(&out).unwrap(), "B\t2\tTransE,RotatE\nC\t2\tTransE,RotatE\n");

    let trials = dir.path().join("trials.txt");
    fs::write(&trials, " C \nZ\n").unwrap();
    let run = kge(&["consensus", p(&a), p(&b), "--trials", p(&trials), "--out", p(&out)]);
    assert!(run.status.success());
    assert!(fs::read_to_string(&out).unwrap().ends_with("hits=1\n"));

    let run = kge(&["consensus", p(&a), "--out", p(&out)]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("at least 2"));
}
