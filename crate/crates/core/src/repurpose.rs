//! Candidate ranking: score every (drug, treat relation, target) triple,
//! reduce each drug to one score, keep the top K, and compare top-K lists
//! across models and against a list of drugs known from clinical trials.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::error::{KgeError, Result};
use crate::graph::Vocabulary;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub drug_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub treat_relation_ids: Vec<usize>,
}

/// Trimmed non-blank lines of a one-name-per-line file.
pub fn read_name_list(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| KgeError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| KgeError::from(e).in_file(path))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(KgeError::EmptyInput(format!("{} lists no names", path.display())));
    }
    Ok(names)
}

/// Maps names to ids, keeping the first occurrence of duplicates. Unknown
/// names fail in strict mode and become warnings in lenient mode.
pub fn resolve_names(
    names: &[String],
    lookup: impl Fn(&str) -> Option<usize>,
    lenient: bool,
    warnings: &mut Vec<String>,
) -> Result<Vec<usize>> {
    let mut seen = HashSet::new();
    let mut ids = Vec::with_capacity(names.len());
    for name in names {
        match lookup(name) {
            Some(id) => {
                if seen.insert(id) {
                    ids.push(id);
                }
            }
            None if lenient => warnings.push(format!("skipping unknown name `{name}`")),
            None => return Err(KgeError::UnknownName(name.clone())),
        }
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedCandidates {
    pub set: CandidateSet,
    pub warnings: Vec<String>,
}

pub fn load_candidates(
    drug_file: &Path,
    target_file: &Path,
    relation_file: &Path,
    vocab: &Vocabulary,
    lenient: bool,
) -> Result<LoadedCandidates> {
    let mut warnings = Vec::new();
    let entities = |path: &Path, warnings: &mut Vec<String>| -> Result<Vec<usize>> {
        let names = read_name_list(path)?;
        let ids = resolve_names(&names, |n| vocab.entity_id(n), lenient, warnings).map_err(|e| e.in_file(path))?;
        if ids.is_empty() {
            return Err(KgeError::EmptyInput(format!("no name in {} is in the vocabulary", path.display())));
        }
        Ok(ids)
    };
    let drug_ids = entities(drug_file, &mut warnings)?;
    let target_ids = entities(target_file, &mut warnings)?;
    let names = read_name_list(relation_file)?;
    let treat_relation_ids = resolve_names(&names, |n| vocab.relation_id(n), lenient, &mut warnings)
        .map_err(|e| e.in_file(relation_file))?;
    if treat_relation_ids.is_empty() {
        return Err(KgeError::EmptyInput(format!(
            "no name in {} is in the vocabulary",
            relation_file.display()
        )));
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(LoadedCandidates {
        set: CandidateSet {
            drug_ids,
            target_ids,
            treat_relation_ids,
        },
        warnings,
    })
}

/// How the scores of one drug over all (relation, target) pairs collapse to
/// a single ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Max => "max",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Reduction::Max),
            "mean" => Ok(Reduction::Mean),
            _ => Err(KgeError::Config(format!("unknown reduction `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub drug_id: usize,
    /// The reduced score (the maximum under `Reduction::Max`).
    pub best_score: f64,
    /// Argmax pair; the first pair in relation-then-target order wins ties.
    pub best_target_id: usize,
    pub best_relation_id: usize,
}

fn ranking_order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.best_score.total_cmp(&a.best_score).then(a.drug_id.cmp(&b.drug_id))
}

/// Scores all `|drugs|·|relations|·|targets|` triples and returns one entry
/// per drug, best first, ties by ascending drug id.
pub fn score_candidates(params: &ModelParams, cands: &CandidateSet, reduction: Reduction) -> Vec<ScoredCandidate> {
    let mut out: Vec<ScoredCandidate> = cands
        .drug_ids
        .iter()
        .map(|&drug_id| ScoredCandidate {
            drug_id,
            best_score: f64::NEG_INFINITY,
            best_target_id: cands.target_ids[0],
            best_relation_id: cands.treat_relation_ids[0],
        })
        .collect();
    let mut sums = vec![0.0; out.len()];
    for &r in &cands.treat_relation_ids {
        for &t in &cands.target_ids {
            let heads = params.score_all_heads(r, t);
            for (entry, sum) in out.iter_mut().zip(&mut sums) {
                let s = heads[entry.drug_id];
                *sum += s;
                if s > entry.best_score {
                    entry.best_score = s;
                    entry.best_target_id = t;
                    entry.best_relation_id = r;
                }
            }
        }
    }
    if reduction == Reduction::Mean {
        let pairs = (cands.treat_relation_ids.len() * cands.target_ids.len()) as f64;
        for (entry, sum) in out.iter_mut().zip(sums) {
            entry.best_score = sum / pairs;
        }
    }
    out.sort_by(ranking_order);
    out
}

/// The first `min(k, len)` entries of the ranking order.
pub fn top_k(scored: &[ScoredCandidate], k: usize) -> Vec<ScoredCandidate> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(ranking_order);
    sorted.truncate(k);
    sorted
}

/// One line per drug: `rank<TAB>drug<TAB>score<TAB>relation<TAB>target`.
pub fn format_ranking(ranked: &[ScoredCandidate], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (i, c) in ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{}\t{}",
            i + 1,
            vocab.entity_name(c.drug_id),
            c.best_score,
            vocab.relation_name(c.best_relation_id),
            vocab.entity_name(c.best_target_id)
        );
    }
    out
}

/// A named top-K list of drug names, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub model: String,
    pub drugs: Vec<String>,
}

impl RankedList {
    pub fn new(model: impl Into<String>, drugs: Vec<String>) -> Self {
        let mut seen = HashSet::new();
        let drugs = drugs.into_iter().filter(|d| seen.insert(d.clone())).collect();
        Self {
            model: model.into(),
            drugs,
        }
    }

    /// Reads a ranking file; the list is named after the file stem.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KgeError::io(path, e))?;
        let mut drugs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 || fields[0].parse::<usize>().is_err() {
                return Err(KgeError::AtLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected `rank<TAB>drug<TAB>score<TAB>relation<TAB>target`".into(),
                });
            }
            drugs.push(fields[1].trim().to_string());
        }
        if drugs.is_empty() {
            return Err(KgeError::EmptyInput(format!("{} has no ranked drugs", path.display())));
        }
        let model = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self::new(model, drugs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusEntry {
    pub drug: String,
    pub model_count: usize,
    pub models: Vec<String>,
    /// Mean 1-based position over the lists that contain the drug.
    pub avg_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusReport {
    pub lists: Vec<RankedList>,
    /// Every drug in any list, by model count (descending), then average
    /// position, then name.
    pub entries: Vec<ConsensusEntry>,
}

impl ConsensusReport {
    /// Drugs present in every list.
    pub fn intersection(&self) -> Vec<&ConsensusEntry> {
        self.at_least(self.lists.len())
    }

    pub fn at_least(&self, min_models: usize) -> Vec<&ConsensusEntry> {
        self.entries.iter().filter(|e| e.model_count >= min_models).collect()
    }
}

pub fn consensus(lists: &[RankedList]) -> Result<ConsensusReport> {
    if lists.len() < 2 {
        return Err(KgeError::TooFewLists(lists.len()));
    }
    let mut by_drug: HashMap<&str, (Vec<String>, Vec<usize>)> = HashMap::new();
    for list in lists {
        for (pos, drug) in list.drugs.iter().enumerate() {
            let slot = by_drug.entry(drug).or_default();
            slot.0.push(list.model.clone());
            slot.1.push(pos + 1);
        }
    }
    let mut entries: Vec<ConsensusEntry> = by_drug
        .into_iter()
        .map(|(drug, (models, positions))| ConsensusEntry {
            drug: drug.to_string(),
            model_count: models.len(),
            avg_position: positions.iter().sum::<usize>() as f64 / positions.len() as f64,
            models,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.model_count
            .cmp(&a.model_count)
            .then(a.avg_position.total_cmp(&b.avg_position))
            .then_with(|| a.drug.cmp(&b.drug))
    });
    Ok(ConsensusReport {
        lists: lists.to_vec(),
        entries,
    })
}

/// `drug<TAB>model_count<TAB>models` per entry, models comma-separated.
pub fn format_consensus(entries: &[&ConsensusEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}", e.drug, e.model_count, e.models.join(","));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub hits: Vec<String>,
}

impl Validation {
    pub fn count(&self) -> usize {
        self.hits.len()
    }
}

/// Predicted drugs that also appear in `trials`, in prediction order.
pub fn validate_names(predicted: &[&str], trials: &[String]) -> Validation {
    let trials: HashSet<&str> = trials.iter().map(|s| s.trim()).collect();
    let mut seen = HashSet::new();
    let hits = predicted
        .iter()
        .map(|p| p.trim())
        .filter(|p| trials.contains(p) && seen.insert(*p))
        .map(str::to_string)
        .collect();
    Validation { hits }
}

/// Checks the consensus entries shared by at least `min_models` lists
/// against a one-name-per-line trial file.
pub fn validate_against(report: &ConsensusReport, min_models: usize, trial_file: &Path) -> Result<Validation> {
    let trials = read_name_list(trial_file)?;
    let predicted: Vec<&str> = report.at_least(min_models).iter().map(|e| e.drug.as_str()).collect();
    Ok(validate_names(&predicted, &trials))
}
