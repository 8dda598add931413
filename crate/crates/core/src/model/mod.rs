//! Scoring-function models and their learnable parameters.
//!
//! All six models follow one convention: a higher score means a more
//! plausible triple. Distance models (TransE, RotatE) return the negated
//! distance.
//!
//! | kind        | entity row        | relation row         | score                          |
//! |-------------|-------------------|----------------------|--------------------------------|
//! | `TransE_l1` | `d` reals         | `d` reals            | `-‖h + r − t‖₁`                |
//! | `TransE_l2` | `d` reals         | `d` reals            | `-‖h + r − t‖₂`                |
//! | `RotatE`    | `d` complex (2d)  | `d` phases θ         | `-‖h ∘ e^{iθ} − t‖₂`           |
//! | `RESCAL`    | `d` reals         | `d×d` row-major      | `hᵀ M t`                       |
//! | `DistMult`  | `d` reals         | `d` reals            | `Σ hᵢ rᵢ tᵢ`                   |
//! | `ComplEx`   | `d` complex (2d)  | `d` complex (2d)     | `Re Σ hᵢ rᵢ conj(tᵢ)`          |
//!
//! Complex rows are stored interleaved as `(re, im)` pairs.

pub(crate) mod kernels;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KgeError, Result};
use crate::graph::Triple;

pub use kernels::{logistic_loss, logistic_loss_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransEL1,
    TransEL2,
    RotatE,
    Rescal,
    DistMult,
    ComplEx,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::TransEL1,
        ModelKind::TransEL2,
        ModelKind::RotatE,
        ModelKind::Rescal,
        ModelKind::DistMult,
        ModelKind::ComplEx,
    ];

    /// Stable numeric code used in checkpoint headers.
    pub fn code(self) -> u32 {
        match self {
            ModelKind::TransEL1 => 0,
            ModelKind::TransEL2 => 1,
            ModelKind::RotatE => 2,
            ModelKind::Rescal => 3,
            ModelKind::DistMult => 4,
            ModelKind::ComplEx => 5,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or(KgeError::UnknownKind(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransEL1 => "TransE_l1",
            ModelKind::TransEL2 => "TransE_l2",
            ModelKind::RotatE => "RotatE",
            ModelKind::Rescal => "RESCAL",
            ModelKind::DistMult => "DistMult",
            ModelKind::ComplEx => "ComplEx",
        }
    }

    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            ModelKind::RotatE | ModelKind::ComplEx => 2 * dim,
            _ => dim,
        }
    }

    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx => 2 * dim,
            ModelKind::Rescal => dim * dim,
            _ => dim,
        }
    }

    pub fn is_translational(self) -> bool {
        matches!(self, ModelKind::TransEL1 | ModelKind::TransEL2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "transel1" => Ok(ModelKind::TransEL1),
            "transel2" | "transe" => Ok(ModelKind::TransEL2),
            "rotate" => Ok(ModelKind::RotatE),
            "rescal" => Ok(ModelKind::Rescal),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            _ => Err(KgeError::Config(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKind {
    Entity,
    Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    n_entities: usize,
    n_relations: usize,
    entity: Vec<f64>,
    relation: Vec<f64>,
}

/// Uniform initialization on `[-6/√d, 6/√d]`; RotatE phases on `[0, 2π)`.
pub fn init_params(
    kind: ModelKind,
    n_entities: usize,
    n_relations: usize,
    dim: usize,
    seed: u64,
) -> Result<ModelParams> {
    if dim == 0 {
        return Err(KgeError::Config("dim must be at least 1".into()));
    }
    if n_entities == 0 || n_relations == 0 {
        return Err(KgeError::Config(format!(
            "need at least one entity and relation, got {n_entities} and {n_relations}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 6.0 / (dim as f64).sqrt();
    let entity = (0..n_entities * kind.entity_width(dim))
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    let relation = (0..n_relations * kind.relation_width(dim))
        .map(|_| match kind {
            ModelKind::RotatE => rng.gen_range(0.0..std::f64::consts::TAU),
            _ => rng.gen_range(-bound..=bound),
        })
        .collect();
    Ok(ModelParams {
        kind,
        dim,
        n_entities,
        n_relations,
        entity,
        relation,
    })
}

impl ModelParams {
    /// Builds params from flat row-major tables, checking shapes and finiteness.
    pub fn from_parts(
        kind: ModelKind,
        dim: usize,
        entity: Vec<f64>,
        relation: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KgeError::Config("dim must be at least 1".into()));
        }
        let (ew, rw) = (kind.entity_width(dim), kind.relation_width(dim));
        if entity.len() % ew != 0 || relation.len() % rw != 0 {
            return Err(KgeError::Mismatch(format!(
                "{kind} dim {dim}: table lengths {} / {} are not multiples of {ew} / {rw}",
                entity.len(),
                relation.len()
            )));
        }
        if entity.iter().chain(&relation).any(|v| !v.is_finite()) {
            return Err(KgeError::Mismatch("non-finite parameter value".into()));
        }
        Ok(Self {
            kind,
            dim,
            n_entities: entity.len() / ew,
            n_relations: relation.len() / rw,
            entity,
            relation,
        })
    }

    /// Unchecked constructor for tables whose shapes are already known good.
    pub(crate) fn from_tables(kind: ModelKind, dim: usize, entity: Vec<f64>, relation: Vec<f64>) -> Self {
        let (ew, rw) = (kind.entity_width(dim), kind.relation_width(dim));
        Self {
            kind,
            dim,
            n_entities: entity.len() / ew,
            n_relations: relation.len() / rw,
            entity,
            relation,
        }
    }

    pub(crate) fn tables_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.entity, &mut self.relation)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn entity_width(&self) -> usize {
        self.kind.entity_width(self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.kind.relation_width(self.dim)
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entity
    }

    pub fn relation_table(&self) -> &[f64] {
        &self.relation
    }

    pub fn entity_row(&self, id: usize) -> &[f64] {
        let w = self.entity_width();
        &self.entity[id * w..(id + 1) * w]
    }

    pub fn relation_row(&self, id: usize) -> &[f64] {
        let w = self.relation_width();
        &self.relation[id * w..(id + 1) * w]
    }

    pub fn entity_row_mut(&mut self, id: usize) -> &mut [f64] {
        let w = self.entity_width();
        &mut self.entity[id * w..(id + 1) * w]
    }

    pub fn relation_row_mut(&mut self, id: usize) -> &mut [f64] {
        let w = self.relation_width();
        &mut self.relation[id * w..(id + 1) * w]
    }

    pub fn row(&self, kind: RowKind, id: usize) -> &[f64] {
        match kind {
            RowKind::Entity => self.entity_row(id),
            RowKind::Relation => self.relation_row(id),
        }
    }

    pub fn row_mut(&mut self, kind: RowKind, id: usize) -> &mut [f64] {
        match kind {
            RowKind::Entity => self.entity_row_mut(id),
            RowKind::Relation => self.relation_row_mut(id),
        }
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        triple.h < self.n_entities && triple.t < self.n_entities && triple.r < self.n_relations
    }

    pub fn is_finite(&self) -> bool {
        self.entity.iter().chain(&self.relation).all(|v| v.is_finite())
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.entity.iter().chain(&self.relation) {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }

    fn rotation_for(&self, r: usize) -> Vec<(f64, f64)> {
        match self.kind {
            ModelKind::RotatE => kernels::rotation(self.relation_row(r)),
            _ => Vec::new(),
        }
    }

    pub fn score(&self, triple: Triple) -> f64 {
        let rot = self.rotation_for(triple.r);
        kernels::score_rows(
            self.kind,
            self.dim,
            self.entity_row(triple.h),
            self.relation_row(triple.r),
            self.entity_row(triple.t),
            &rot,
        )
    }

    /// Scores `(e, r, t)` for every entity `e`.
    pub fn score_all_heads(&self, r: usize, t: usize) -> Vec<f64> {
        let rel = self.relation_row(r);
        let tail = self.entity_row(t);
        match self.kind {
            ModelKind::Rescal => {
                // hᵀ(M t) with M t shared across candidates
                let d = self.dim;
                let mt: Vec<f64> = (0..d)
                    .map(|i| kernels::dot(&rel[i * d..(i + 1) * d], tail))
                    .collect();
                (0..self.n_entities)
                    .map(|e| {
                        let h = self.entity_row(e);
                        let mut total = 0.0;
                        for i in 0..d {
                            total += h[i] * mt[i];
                        }
                        total
                    })
                    .collect()
            }
            _ => {
                let rot = self.rotation_for(r);
                (0..self.n_entities)
                    .map(|e| {
                        kernels::score_rows(self.kind, self.dim, self.entity_row(e), rel, tail, &rot)
                    })
                    .collect()
            }
        }
    }

    /// Scores `(h, r, e)` for every entity `e`.
    pub fn score_all_tails(&self, h: usize, r: usize) -> Vec<f64> {
        let rel = self.relation_row(r);
        let head = self.entity_row(h);
        match self.kind {
            ModelKind::Rescal => {
                let d = self.dim;
                let mut hm = vec![0.0; d];
                for i in 0..d {
                    let row = &rel[i * d..(i + 1) * d];
                    for j in 0..d {
                        hm[j] += head[i] * row[j];
                    }
                }
                (0..self.n_entities)
                    .map(|e| kernels::dot(&hm, self.entity_row(e)))
                    .collect()
            }
            _ => {
                let rot = self.rotation_for(r);
                (0..self.n_entities)
                    .map(|e| {
                        kernels::score_rows(self.kind, self.dim, head, rel, self.entity_row(e), &rot)
                    })
                    .collect()
            }
        }
    }

    /// Logistic loss `log(1 + e^{-y·score})` and its gradient rows.
    pub fn grad(&self, triple: Triple, y: f64) -> (f64, SparseGrad) {
        let score = self.score(triple);
        let loss = logistic_loss(score, y);
        let dloss = logistic_loss_grad(score, y);
        let mut gh = vec![0.0; self.entity_width()];
        let mut gr = vec![0.0; self.relation_width()];
        let mut gt = vec![0.0; self.entity_width()];
        kernels::accumulate_score_grad(
            self.kind,
            self.dim,
            self.entity_row(triple.h),
            self.relation_row(triple.r),
            self.entity_row(triple.t),
            dloss,
            &mut gh,
            &mut gr,
            &mut gt,
        );
        (loss, SparseGrad::for_triple(triple, gh, gr, gt))
    }

    /// Symmetrizes every RESCAL relation matrix as `M ← (M + Mᵀ)/2`.
    pub fn symmetrize_relation(&mut self, r: usize) {
        if self.kind != ModelKind::Rescal {
            return;
        }
        let d = self.dim;
        let m = self.relation_row_mut(r);
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
                m[i * d + j] = avg;
                m[j * d + i] = avg;
            }
        }
    }

    /// Rescales an entity row to unit L2 norm (no-op on a zero row).
    pub fn normalize_entity(&mut self, id: usize) {
        let row = self.entity_row_mut(id);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub kind: RowKind,
    pub id: usize,
    pub values: Vec<f64>,
}

/// Gradient rows keyed by `(row kind, id)`, at most one row per key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub rows: Vec<GradRow>,
}

impl SparseGrad {
    fn for_triple(triple: Triple, gh: Vec<f64>, gr: Vec<f64>, gt: Vec<f64>) -> Self {
        let mut rows = vec![GradRow {
            kind: RowKind::Entity,
            id: triple.h,
            values: gh,
        }];
        if triple.t == triple.h {
            for (a, b) in rows[0].values.iter_mut().zip(&gt) {
                *a += b;
            }
        } else {
            rows.push(GradRow {
                kind: RowKind::Entity,
                id: triple.t,
                values: gt,
            });
        }
        rows.push(GradRow {
            kind: RowKind::Relation,
            id: triple.r,
            values: gr,
        });
        SparseGrad { rows }
    }

    pub fn get(&self, kind: RowKind, id: usize) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|row| row.kind == kind && row.id == id)
            .map(|row| row.values.as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.rows {
            row.values.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
