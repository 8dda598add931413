//! Link-prediction ranking: for each test triple, replace one side with every
//! entity, score all candidates and record where the true entity lands.
//!
//! Ties count half: `rank = 1 + #greater + ⌊#equal / 2⌋`, where `#equal`
//! excludes the true entity itself. In the filtered setting, candidates that
//! form some other known-true triple are dropped before counting.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{KgeError, Result};
use crate::graph::{FilterIndex, Triple};
use crate::model::ModelParams;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Raw,
    Filtered,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Raw => "raw",
            Setting::Filtered => "filtered",
        })
    }
}

impl FromStr for Setting {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Setting::Raw),
            "filtered" => Ok(Setting::Filtered),
            _ => Err(KgeError::Config(format!("unknown setting `{s}`"))),
        }
    }
}

/// Which settings a command reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SettingChoice {
    Raw,
    Filtered,
    Both,
}

impl SettingChoice {
    pub fn settings(self) -> &'static [Setting] {
        match self {
            SettingChoice::Raw => &[Setting::Raw],
            SettingChoice::Filtered => &[Setting::Filtered],
            SettingChoice::Both => &[Setting::Raw, Setting::Filtered],
        }
    }
}

impl fmt::Display for SettingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SettingChoice::Raw => "raw",
            SettingChoice::Filtered => "filtered",
            SettingChoice::Both => "both",
        })
    }
}

impl FromStr for SettingChoice {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(SettingChoice::Both),
            _ => Ok(match s.parse::<Setting>()? {
                Setting::Raw => SettingChoice::Raw,
                Setting::Filtered => SettingChoice::Filtered,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SidePolicy {
    HeadOnly,
    TailOnly,
    /// Each triple contributes one head rank and one tail rank.
    BothAveraged,
}

impl SidePolicy {
    fn sides(self) -> &'static [Side] {
        match self {
            SidePolicy::HeadOnly => &[Side::Head],
            SidePolicy::TailOnly => &[Side::Tail],
            SidePolicy::BothAveraged => &[Side::Head, Side::Tail],
        }
    }
}

impl fmt::Display for SidePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SidePolicy::HeadOnly => "head",
            SidePolicy::TailOnly => "tail",
            SidePolicy::BothAveraged => "both",
        })
    }
}

impl FromStr for SidePolicy {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" | "head_only" => Ok(SidePolicy::HeadOnly),
            "tail" | "tail_only" => Ok(SidePolicy::TailOnly),
            "both" | "both_averaged" => Ok(SidePolicy::BothAveraged),
            _ => Err(KgeError::Config(format!("unknown side policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RankQuery {
    pub triple: Triple,
    pub side: Side,
}

impl RankQuery {
    pub fn new(triple: Triple, side: Side) -> Self {
        Self { triple, side }
    }

    fn truth(&self) -> usize {
        match self.side {
            Side::Head => self.triple.h,
            Side::Tail => self.triple.t,
        }
    }

    fn with_candidate(&self, e: usize) -> Triple {
        match self.side {
            Side::Head => Triple { h: e, ..self.triple },
            Side::Tail => Triple { t: e, ..self.triple },
        }
    }

    /// Other entities that complete the query into a known-true triple.
    fn known<'a>(&self, filter: &'a FilterIndex) -> &'a [usize] {
        match self.side {
            Side::Head => filter.heads_of(self.triple.r, self.triple.t),
            Side::Tail => filter.tails_of(self.triple.h, self.triple.r),
        }
    }
}

fn tie_rank(greater: usize, equal: usize) -> usize {
    1 + greater + equal / 2
}

/// Rank of the true entity using the batched candidate scorers.
pub fn rank_one(params: &ModelParams, query: RankQuery, filter: Option<&FilterIndex>) -> usize {
    let Triple { h, r, t } = query.triple;
    let scores = match query.side {
        Side::Head => params.score_all_heads(r, t),
        Side::Tail => params.score_all_tails(h, r),
    };
    let truth = query.truth();
    let target = scores[truth];
    let mut greater = 0usize;
    let mut equal = 0usize;
    for (e, &s) in scores.iter().enumerate() {
        if s > target {
            greater += 1;
        } else if s == target && e != truth {
            equal += 1;
        }
    }
    if let Some(filter) = filter {
        for &e in query.known(filter) {
            if e == truth {
                continue;
            }
            let s = scores[e];
            if s > target {
                greater -= 1;
            } else if s == target {
                equal -= 1;
            }
        }
    }
    tie_rank(greater, equal)
}

/// Reference ranking: builds every candidate triple, scores it with the
/// scalar path, sorts, and reads off the true entity's tie-adjusted position.
pub fn brute_force_rank(params: &ModelParams, query: RankQuery, filter: Option<&FilterIndex>) -> usize {
    let truth = query.truth();
    let mut scored: Vec<(f64, usize)> = (0..params.n_entities())
        .filter_map(|e| {
            let candidate = query.with_candidate(e);
            if e != truth && filter.is_some_and(|index| index.contains(&candidate)) {
                return None;
            }
            Some((params.score(candidate), e))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let target = params.score(query.triple);
    let first = scored
        .iter()
        .position(|&(s, _)| s == target)
        .expect("true triple is always a candidate");
    let block = scored[first..].iter().take_while(|&&(s, _)| s == target).count();
    tie_rank(first, block - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub ranks: Vec<usize>,
    pub mr: f64,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub setting: Setting,
    pub side_policy: SidePolicy,
}

impl RankReport {
    pub fn from_ranks(ranks: Vec<usize>, setting: Setting, side_policy: SidePolicy) -> Result<Self> {
        if ranks.is_empty() {
            return Err(KgeError::EmptyEvaluation);
        }
        debug_assert!(ranks.iter().all(|&r| r >= 1));
        let n = ranks.len() as f64;
        let mr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        Ok(Self {
            ranks,
            mr,
            mrr,
            hits,
            setting,
            side_policy,
        })
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// `key=value` block: setting, side, query count, MR, MRR and Hits@N.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "setting={}", self.setting);
        let _ = writeln!(out, "side={}", self.side_policy);
        let _ = writeln!(out, "queries={}", self.ranks.len());
        let _ = writeln!(out, "MR={:.4}", self.mr);
        let _ = writeln!(out, "MRR={:.4}", self.mrr);
        for (k, v) in &self.hits {
            let _ = writeln!(out, "H@{k}={v:.4}");
        }
        out
    }

    /// `triple-index<TAB>rank` per line. Under `both`, each triple appears
    /// twice (head rank, then tail rank).
    pub fn ranks_tsv(&self) -> String {
        let per_triple = self.side_policy.sides().len();
        let mut out = String::new();
        for (i, rank) in self.ranks.iter().enumerate() {
            let _ = writeln!(out, "{}\t{rank}", i / per_triple);
        }
        out
    }
}

/// Ranks every triple under `side_policy`. `threads > 1` scores queries on a
/// worker pool; the report is identical either way.
pub fn evaluate_with(
    params: &ModelParams,
    triples: &[Triple],
    setting: Setting,
    side_policy: SidePolicy,
    filter: Option<&FilterIndex>,
    threads: usize,
) -> Result<RankReport> {
    if triples.is_empty() {
        return Err(KgeError::EmptyEvaluation);
    }
    let filter = match setting {
        Setting::Raw => None,
        Setting::Filtered => Some(filter.ok_or(KgeError::MissingFilter)?),
    };
    if let Some(bad) = triples.iter().find(|t| !params.contains(t)) {
        return Err(KgeError::Mismatch(format!(
            "triple {bad} is outside the model's {} entities / {} relations",
            params.n_entities(),
            params.n_relations()
        )));
    }
    let queries: Vec<RankQuery> = triples
        .iter()
        .flat_map(|&t| side_policy.sides().iter().map(move |&side| RankQuery::new(t, side)))
        .collect();
    let ranks: Vec<usize> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| KgeError::Config(format!("cannot start {threads} workers: {e}")))?;
        pool.install(|| queries.par_iter().map(|&q| rank_one(params, q, filter)).collect())
    } else {
        queries.iter().map(|&q| rank_one(params, q, filter)).collect()
    };
    RankReport::from_ranks(ranks, setting, side_policy)
}

pub fn evaluate(
    params: &ModelParams,
    triples: &[Triple],
    setting: Setting,
    side_policy: SidePolicy,
    filter: Option<&FilterIndex>,
) -> Result<RankReport> {
    evaluate_with(params, triples, setting, side_policy, filter, 0)
}
