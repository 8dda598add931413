//! Triple files, vocabularies, deterministic splits and the known-triple index
//! used by filtered ranking.
//!
//! Triple files hold one `head<TAB>relation<TAB>tail` statement per line with
//! no header. Entity names follow the `Type::identifier` convention, e.g.
//! `Compound::DB00811` or `Gene::2157`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KgeError, Result};

pub const ENTITY_DICT: &str = "entities.dict";
pub const RELATION_DICT: &str = "relations.dict";

/// A triple as it appears in a file, before id assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// An integer-coded `(head, relation, tail)` statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub h: usize,
    pub r: usize,
    pub t: usize,
}

impl Triple {
    pub const fn new(h: usize, r: usize, t: usize) -> Self {
        Self { h, r, t }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.h, self.r, self.t)
    }
}

/// Entity category, taken from the name prefix before the first `::`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntityType(pub String);

impl EntityType {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn entity_type(name: &str) -> EntityType {
    match name.split_once("::") {
        Some((tag, _)) => EntityType(tag.to_string()),
        None => EntityType("Unknown".to_string()),
    }
}

/// Parses tab-separated triples. Blank lines are skipped; CRLF endings and
/// trailing whitespace on each field are tolerated. Line numbers are 1-based.
pub fn parse_triples(bytes: &[u8]) -> Result<Vec<RawTriple>> {
    let text = String::from_utf8(bytes.to_vec())?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim_end).collect();
        if fields.len() != 3 {
            return Err(KgeError::Parse {
                line: line_no,
                found: fields.len(),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
            return Err(KgeError::Format {
                line: line_no,
                reason: format!("field {} is empty", pos + 1),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

pub fn read_triples(path: &Path) -> Result<Vec<RawTriple>> {
    let bytes = fs::read(path).map_err(|e| KgeError::io(path, e))?;
    parse_triples(&bytes).map_err(|e| e.in_file(path))
}

/// Bidirectional name/id maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relation_names[id]
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        intern(&mut self.entity_names, &mut self.entity_index, name)
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        intern(&mut self.relation_names, &mut self.relation_index, name)
    }

    /// Number of entities per type tag, sorted by tag.
    pub fn type_counts(&self) -> Vec<(EntityType, usize)> {
        let mut counts: HashMap<EntityType, usize> = HashMap::new();
        for name in &self.entity_names {
            *counts.entry(entity_type(name)).or_default() += 1;
        }
        let mut counts: Vec<_> = counts.into_iter().collect();
        counts.sort_by(|a, b| a.0 .0.cmp(&b.0 .0));
        counts
    }

    pub fn decode(&self, triple: Triple) -> RawTriple {
        RawTriple::new(
            self.entity_name(triple.h),
            self.relation_name(triple.r),
            self.entity_name(triple.t),
        )
    }

    /// Writes `entities.dict` and `relations.dict` (`name<TAB>id` per line) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_dict(&dir.join(ENTITY_DICT), &self.entity_names)?;
        write_dict(&dir.join(RELATION_DICT), &self.relation_names)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for name in read_dict(&dir.join(ENTITY_DICT))? {
            vocab.add_entity(&name);
        }
        for name in read_dict(&dir.join(RELATION_DICT))? {
            vocab.add_relation(&name);
        }
        Ok(vocab)
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = index.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_string());
    index.insert(name.to_string(), id);
    id
}

fn write_dict(path: &Path, names: &[String]) -> Result<()> {
    let mut buf = String::new();
    for (id, name) in names.iter().enumerate() {
        buf.push_str(name);
        buf.push('\t');
        buf.push_str(&id.to_string());
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| KgeError::io(path, e))
}

/// Reads a `name<TAB>id` dump; ids must be dense and in order.
fn read_dict(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| KgeError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| KgeError::from(e).in_file(path))?;
    let mut names = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| {
            KgeError::Format {
                line: idx + 1,
                reason,
            }
            .in_file(path)
        };
        let (name, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| bad("expected name<TAB>id".into()))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid id `{id}`")))?;
        if id != names.len() {
            return Err(bad(format!("expected id {}, found {id}", names.len())));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

/// Assigns ids in first-seen order: entities scanning head then tail of each
/// triple, relations in the order they appear.
pub fn build_vocab(triples: &[RawTriple]) -> Vocabulary {
    let mut vocab = Vocabulary::default();
    for raw in triples {
        vocab.add_entity(&raw.head);
        vocab.add_relation(&raw.relation);
        vocab.add_entity(&raw.tail);
    }
    vocab
}

pub fn encode(triples: &[RawTriple], vocab: &Vocabulary) -> Result<Vec<Triple>> {
    let entity = |name: &str| {
        vocab
            .entity_id(name)
            .ok_or_else(|| KgeError::UnknownName(name.to_string()))
    };
    triples
        .iter()
        .map(|raw| {
            Ok(Triple {
                h: entity(&raw.head)?,
                r: vocab
                    .relation_id(&raw.relation)
                    .ok_or_else(|| KgeError::UnknownName(raw.relation.clone()))?,
                t: entity(&raw.tail)?,
            })
        })
        .collect()
}

pub fn write_triples(path: &Path, triples: &[Triple], vocab: &Vocabulary) -> Result<()> {
    let mut buf = Vec::new();
    for &triple in triples {
        let raw = vocab.decode(triple);
        writeln!(buf, "{}\t{}\t{}", raw.head, raw.relation, raw.tail)
            .expect("write to Vec cannot fail");
    }
    fs::write(path, buf).map_err(|e| KgeError::io(path, e))
}

/// Order-preserving deduplication (first occurrence wins).
pub fn dedup(triples: &[Triple]) -> Vec<Triple> {
    let mut seen = HashSet::with_capacity(triples.len());
    triples.iter().copied().filter(|t| seen.insert(*t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.9,
            valid: 0.05,
            test: 0.05,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let ratios = Self { train, valid, test };
        ratios.validate()?;
        Ok(ratios)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(KgeError::Config(format!(
                "split ratios must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(KgeError::Config(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| KgeError::Config(format!("invalid ratios `{s}`")))?;
        match parts.as_slice() {
            [a, b, c] => SplitRatios::new(*a, *b, *c),
            _ => Err(KgeError::Config(format!(
                "expected 3 comma-separated ratios, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Parts that ended up empty despite a positive ratio.
    pub warnings: Vec<String>,
}

impl Split {
    pub fn all(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deduplicates, shuffles with `seed`, then cuts contiguous train/valid/test
/// blocks of `round(f_train*N)` and `round(f_valid*N)` triples; the rest is test.
pub fn split_triples(triples: &[Triple], ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let mut unique = dedup(triples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);

    let n = unique.len();
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_valid = ((ratios.valid * n as f64).round() as usize).min(n - n_train);

    let test = unique.split_off(n_train + n_valid);
    let valid = unique.split_off(n_train);
    let mut split = Split {
        train: unique,
        valid,
        test,
        warnings: Vec::new(),
    };
    if n > 0 {
        for (name, part) in [
            ("train", &split.train),
            ("valid", &split.valid),
            ("test", &split.test),
        ] {
            if part.is_empty() {
                let msg = format!("{name} split is empty for {n} triples");
                log::warn!("{msg}");
                split.warnings.push(msg);
            }
        }
    }
    Ok(split)
}

/// Set of every known-true triple, with per-side lookups for filtered ranking.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    triples: HashSet<Triple>,
    heads: HashMap<(usize, usize), Vec<usize>>,
    tails: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut index = FilterIndex::default();
        for &triple in triples {
            index.insert(triple);
        }
        index
    }

    pub fn insert(&mut self, triple: Triple) {
        if self.triples.insert(triple) {
            self.heads
                .entry((triple.r, triple.t))
                .or_default()
                .push(triple.h);
            self.tails
                .entry((triple.h, triple.r))
                .or_default()
                .push(triple.t);
        }
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains(triple)
    }

    /// Known heads `h` with `(h, r, t)` true.
    pub fn heads_of(&self, r: usize, t: usize) -> &[usize] {
        self.heads.get(&(r, t)).map_or(&[], Vec::as_slice)
    }

    /// Known tails `t` with `(h, r, t)` true.
    pub fn tails_of(&self, h: usize, r: usize) -> &[usize] {
        self.tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

pub fn build_filter_index(split: &Split) -> FilterIndex {
    FilterIndex::new(split.all())
}
