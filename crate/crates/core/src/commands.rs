//! Subcommand implementations. Each returns a summary for the caller to
//! print; data goes to files, diagnostics to the log.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{echo_train, RunConfig};
use crate::error::{KgeError, Result};
use crate::eval::{evaluate_with, RankReport, SettingChoice, SidePolicy};
use crate::graph::{
    build_vocab, encode, read_triples, split_triples, write_triples, FilterIndex, SplitRatios, Triple, Vocabulary,
};
use crate::model::ModelParams;
use crate::repurpose::{
    consensus, format_consensus, format_ranking, load_candidates, read_name_list, score_candidates, top_k,
    validate_names, ConsensusReport, RankedList, Reduction, ScoredCandidate, Validation,
};
use crate::train::Trainer;

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const CHECKPOINT_FILE: &str = "model.kge";
pub const LOSS_FILE: &str = "losses.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| KgeError::io(dir, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(KgeError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| KgeError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub entities: usize,
    pub relations: usize,
    /// Lines read, duplicates included.
    pub triples: usize,
    pub unique: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub warnings: Vec<String>,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "entities={}", self.entities)?;
        writeln!(f, "relations={}", self.relations)?;
        writeln!(f, "triples={}", self.triples)?;
        writeln!(f, "unique={}", self.unique)?;
        write!(f, "train={}\nvalid={}\ntest={}", self.train, self.valid, self.test)
    }
}

/// Parses a triple file, builds the vocabulary and writes the three splits
/// plus both dictionaries into `out_dir`.
pub fn cmd_ingest(triples_path: &Path, out_dir: &Path, ratios: SplitRatios, seed: u64) -> Result<IngestSummary> {
    let raw = read_triples(triples_path)?;
    let vocab = build_vocab(&raw);
    let triples = encode(&raw, &vocab)?;
    let split = split_triples(&triples, ratios, seed)?;
    create_dir(out_dir)?;
    write_triples(&out_dir.join(TRAIN_FILE), &split.train, &vocab)?;
    write_triples(&out_dir.join(VALID_FILE), &split.valid, &vocab)?;
    write_triples(&out_dir.join(TEST_FILE), &split.test, &vocab)?;
    vocab.save(out_dir)?;
    Ok(IngestSummary {
        entities: vocab.n_entities(),
        relations: vocab.n_relations(),
        triples: raw.len(),
        unique: split.len(),
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
        warnings: split.warnings,
    })
}

fn read_encoded(path: &Path, vocab: &Vocabulary) -> Result<Vec<Triple>> {
    encode(&read_triples(path)?, vocab).map_err(|e| e.in_file(path))
}

/// Every triple in whichever split files exist under `data_dir`.
fn known_triples(data_dir: &Path, vocab: &Vocabulary) -> Result<FilterIndex> {
    let mut index = FilterIndex::default();
    for name in [TRAIN_FILE, VALID_FILE, TEST_FILE] {
        let path = data_dir.join(name);
        if path.is_file() {
            for t in read_encoded(&path, vocab)? {
                index.insert(t);
            }
        }
    }
    Ok(index)
}

fn check_vocab(params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    if params.n_entities() != vocab.n_entities() || params.n_relations() != vocab.n_relations() {
        return Err(KgeError::Mismatch(format!(
            "checkpoint has {} entities / {} relations, vocabulary has {} / {}",
            params.n_entities(),
            params.n_relations(),
            vocab.n_entities(),
            vocab.n_relations()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub epoch: usize,
    pub loss: Option<f64>,
    pub epochs_run: usize,
}

impl fmt::Display for TrainOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "checkpoint={}", self.checkpoint.display())?;
        writeln!(f, "epoch={}", self.epoch)?;
        match self.loss {
            Some(loss) => write!(f, "loss={loss:.6}"),
            None => write!(f, "loss=none"),
        }
    }
}

/// Trains on `<data_dir>/train.tsv` until `epochs` epochs are complete,
/// saving `<checkpoint_dir>/model.kge` every `checkpoint_every` epochs and at
/// the end. With `resume`, training continues from that checkpoint and its
/// epoch counter. On divergence the previous checkpoint is left untouched.
pub fn cmd_train(config: &RunConfig, resume: bool, threads: usize) -> Result<TrainOutcome> {
    let mut train_config = config.train_config()?;
    train_config.threads = threads;
    if train_config.parallel() {
        warn!(
            "training with {threads} threads: lock-free updates make results depend on scheduling"
        );
    }
    let data_dir = RunConfig::require(&config.data_dir, "data_dir")?;
    let ckpt_dir = RunConfig::require(&config.checkpoint_dir, "checkpoint_dir")?;
    let train_path = data_dir.join(TRAIN_FILE);
    require_file(&train_path)?;
    let vocab = Vocabulary::load(data_dir)?;
    let triples = read_encoded(&train_path, &vocab)?;
    let filter = train_config.filter_false_negatives.then(|| FilterIndex::new(&triples));
    create_dir(ckpt_dir)?;
    let ckpt = ckpt_dir.join(CHECKPOINT_FILE);
    let loss_path = ckpt_dir.join(LOSS_FILE);

    let mut trainer = if resume {
        let params = load_checkpoint(&ckpt)?;
        check_vocab(&params, &vocab)?;
        let meta = CheckpointMeta::load(&ckpt)?;
        info!("resuming {} from epoch {}", params.kind(), meta.epoch);
        Trainer::resume(train_config.clone(), params, meta.epoch)?
    } else {
        write_file(&loss_path, "")?;
        Trainer::new(train_config.clone(), vocab.n_entities(), vocab.n_relations())?
    };
    let mut losses = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&loss_path)
        .map_err(|e| KgeError::io(&loss_path, e))?;

    let save = |trainer: &Trainer, loss: Option<f64>| -> Result<()> {
        save_checkpoint(trainer.params(), &ckpt)?;
        CheckpointMeta {
            epoch: trainer.epoch(),
            loss,
            config: echo_train(&train_config),
        }
        .save(&ckpt)
    };

    let start = Instant::now();
    let first = trainer.epoch();
    let mut last_loss = None;
    while trainer.epoch() < train_config.epochs {
        let loss = trainer.run_epoch(&triples, filter.as_ref())?;
        last_loss = Some(loss);
        writeln!(losses, "{}\t{loss:?}", trainer.epoch()).map_err(|e| KgeError::io(&loss_path, e))?;
        info!("epoch {} loss {loss:.6}", trainer.epoch());
        let periodic = config.checkpoint_every > 0 && trainer.epoch() % config.checkpoint_every == 0;
        if periodic && trainer.epoch() < train_config.epochs {
            save(&trainer, last_loss)?;
        }
    }
    if last_loss.is_none() && resume {
        last_loss = CheckpointMeta::load(&ckpt)?.loss;
    }
    save(&trainer, last_loss)?;
    info!(
        "trained {} epochs in {:.2}s",
        trainer.epoch() - first,
        start.elapsed().as_secs_f64()
    );
    Ok(TrainOutcome {
        checkpoint: ckpt,
        epoch: trainer.epoch(),
        loss: last_loss,
        epochs_run: trainer.epoch() - first,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub setting: SettingChoice,
    pub side: SidePolicy,
    /// Defaults to `<data_dir>/test.tsv`.
    pub test_file: Option<PathBuf>,
    /// When set, metrics and per-query ranks are also written here.
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
}

/// Ranks a test file against a checkpoint. The filter covers every split
/// under `data_dir` plus the test file itself.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path, options: &EvalOptions) -> Result<Vec<RankReport>> {
    let params = load_checkpoint(checkpoint)?;
    let vocab = Vocabulary::load(data_dir)?;
    check_vocab(&params, &vocab)?;
    let test_path = options.test_file.clone().unwrap_or_else(|| data_dir.join(TEST_FILE));
    require_file(&test_path)?;
    let test = read_encoded(&test_path, &vocab)?;
    if test.is_empty() {
        return Err(KgeError::EmptyInput(format!("{} has no triples", test_path.display())));
    }
    let mut filter = known_triples(data_dir, &vocab)?;
    for &t in &test {
        filter.insert(t);
    }
    if let Some(dir) = &options.out_dir {
        create_dir(dir)?;
    }
    let mut reports = Vec::new();
    for &setting in options.setting.settings() {
        let report = evaluate_with(&params, &test, setting, options.side, Some(&filter), options.threads)?;
        if let Some(dir) = &options.out_dir {
            write_file(&dir.join(format!("metrics_{setting}.txt")), &report.to_kv())?;
            write_file(&dir.join(format!("ranks_{setting}.tsv")), &report.ranks_tsv())?;
        }
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct RankOptions {
    pub drugs: PathBuf,
    pub targets: PathBuf,
    pub relations: PathBuf,
    pub k: usize,
    pub lenient: bool,
    pub reduction: Reduction,
}

#[derive(Debug, Clone)]
pub struct RankOutcome {
    pub ranked: Vec<ScoredCandidate>,
    pub warnings: Vec<String>,
}

/// Writes the top-K candidate drugs to `out`.
pub fn cmd_rank(checkpoint: &Path, data_dir: &Path, options: &RankOptions, out: &Path) -> Result<RankOutcome> {
    if options.k == 0 {
        return Err(KgeError::Config("k must be at least 1".into()));
    }
    let params = load_checkpoint(checkpoint)?;
    let vocab = Vocabulary::load(data_dir)?;
    check_vocab(&params, &vocab)?;
    let loaded = load_candidates(
        &options.drugs,
        &options.targets,
        &options.relations,
        &vocab,
        options.lenient,
    )?;
    let scored = score_candidates(&params, &loaded.set, options.reduction);
    let ranked = top_k(&scored, options.k);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(out, &format_ranking(&ranked, &vocab))?;
    Ok(RankOutcome {
        ranked,
        warnings: loaded.warnings,
    })
}

#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub report: ConsensusReport,
    pub min_models: usize,
    pub validation: Option<Validation>,
}

/// Intersects ranking files. Drugs found in at least `min_models` lists
/// (default: all of them) are written to `out`; with a trial file, a
/// `hits=<n>` line follows.
pub fn cmd_consensus(
    list_files: &[PathBuf],
    trial_file: Option<&Path>,
    min_models: Option<usize>,
    out: &Path,
) -> Result<ConsensusOutcome> {
    let lists = list_files
        .iter()
        .map(|p| RankedList::read(p))
        .collect::<Result<Vec<_>>>()?;
    let report = consensus(&lists)?;
    let min_models = min_models.unwrap_or(lists.len());
    if min_models == 0 || min_models > lists.len() {
        return Err(KgeError::Config(format!(
            "min_models must lie in 1..={}, got {min_models}",
            lists.len()
        )));
    }
    let selected = report.at_least(min_models);
    let mut text = format_consensus(&selected);
    let validation = match trial_file {
        Some(path) => {
            let trials = read_name_list(path)?;
            let names: Vec<&str> = selected.iter().map(|e| e.drug.as_str()).collect();
            let v = validate_names(&names, &trials);
            text.push_str(&format!("hits={}\n", v.count()));
            Some(v)
        }
        None => None,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(out, &text)?;
    Ok(ConsensusOutcome {
        report,
        min_models,
        validation,
    })
}
