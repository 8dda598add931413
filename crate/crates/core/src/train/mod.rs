//! Mini-batch training with uniform negative corruption and logistic loss.
//!
//! Each batch holds `B` positives from the training split plus `k` corrupted
//! copies of each. Gradients are sparse: only the entity and relation rows a
//! batch touches are updated, and Adam keeps moments only for rows it has seen.

mod hogwild;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KgeError, Result};
use crate::graph::{FilterIndex, Triple};
use crate::model::kernels;
use crate::model::{init_params, GradRow, ModelKind, ModelParams, RowKind, SparseGrad};

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl FromStr for Optimizer {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(KgeError::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum L2Mode {
    None,
    /// Adds `λ·(‖h‖² + ‖r‖² + ‖t‖²)` to every triple's loss.
    Penalty(f64),
    /// Renormalizes touched entity rows to unit L2 norm after each step.
    ProjectEntities,
}

impl L2Mode {
    /// Penalty for every kind. Unit-norm projection stops TransE_l2 from
    /// separating positives once scores carry an offset, so it is opt-in.
    pub fn default_for(_kind: ModelKind) -> Self {
        L2Mode::Penalty(1e-5)
    }
}

impl fmt::Display for L2Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            L2Mode::None => f.write_str("none"),
            L2Mode::Penalty(_) => f.write_str("penalty"),
            L2Mode::ProjectEntities => f.write_str("project_entities"),
        }
    }
}

pub fn default_gamma(kind: ModelKind) -> f64 {
    if kind.is_translational() {
        3.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub l2_mode: L2Mode,
    /// Offset added to the score inside the loss only, `log(1 + e^{-y(γ + f)})`.
    /// Rankings are unaffected. Distance scores are never positive, so
    /// translational models need a positive offset to push positives above
    /// the logistic midpoint.
    pub gamma: f64,
    pub rescal_symmetric: bool,
    pub filter_false_negatives: bool,
    pub seed: u64,
    /// 0 or 1 runs the deterministic single-threaded loop; more threads run
    /// lock-free parallel updates.
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            dim: 400,
            epochs: 100,
            batch_size: 128,
            negatives: 16,
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            l2_mode: L2Mode::default_for(model),
            gamma: default_gamma(model),
            rescal_symmetric: false,
            filter_false_negatives: false,
            seed: 0,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(KgeError::Config(msg.to_string()));
        if self.dim == 0 {
            return fail("dim must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        if !self.gamma.is_finite() {
            return fail("gamma must be finite");
        }
        if let L2Mode::Penalty(lambda) = self.l2_mode {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return fail("l2 penalty must be non-negative");
            }
        }
        Ok(())
    }

    pub fn parallel(&self) -> bool {
        self.threads > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledTriple {
    pub triple: Triple,
    /// +1 for training triples, -1 for corruptions.
    pub y: f64,
}

impl LabeledTriple {
    pub fn positive(triple: Triple) -> Self {
        Self { triple, y: 1.0 }
    }

    pub fn negative(triple: Triple) -> Self {
        Self { triple, y: -1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Negatives {
    pub triples: Vec<LabeledTriple>,
    /// Set when no corruption can differ from the original (a single entity).
    pub degenerate: bool,
}

/// Corrupts the head or the tail (each with probability 1/2) with a uniform
/// entity. A draw that reproduces the original, or with `filter` a known-true
/// triple, is re-drawn up to 100 times and then kept.
pub fn sample_negatives<R: Rng + ?Sized>(
    triple: Triple,
    k: usize,
    n_entities: usize,
    rng: &mut R,
    filter: Option<&FilterIndex>,
) -> Negatives {
    if n_entities <= 1 {
        return Negatives {
            triples: vec![LabeledTriple::negative(triple); k],
            degenerate: true,
        };
    }
    let triples = (0..k)
        .map(|_| {
            let corrupt_head = rng.gen_bool(0.5);
            let mut candidate = triple;
            for _ in 0..MAX_REDRAWS {
                let e = rng.gen_range(0..n_entities);
                candidate = if corrupt_head {
                    Triple { h: e, ..triple }
                } else {
                    Triple { t: e, ..triple }
                };
                let rejected = candidate == triple
                    || filter.is_some_and(|index| index.contains(&candidate));
                if !rejected {
                    break;
                }
            }
            LabeledTriple::negative(candidate)
        })
        .collect();
    Negatives {
        triples,
        degenerate: false,
    }
}

/// Dense gradient rows keyed by `(row kind, id)`.
struct GradAccumulator {
    slots: HashMap<(RowKind, usize), usize>,
    rows: Vec<GradRow>,
}

impl GradAccumulator {
    fn new() -> Self {
        Self {
            slots: HashMap::new(),
            rows: Vec::new(),
        }
    }

    fn slot(&mut self, kind: RowKind, id: usize, width: usize) -> usize {
        let rows = &mut self.rows;
        *self.slots.entry((kind, id)).or_insert_with(|| {
            rows.push(GradRow {
                kind,
                id,
                values: vec![0.0; width],
            });
            rows.len() - 1
        })
    }

    fn into_sparse(mut self) -> SparseGrad {
        self.rows.sort_by_key(|row| (row.kind, row.id));
        SparseGrad { rows: self.rows }
    }
}

/// Mean logistic loss over the batch and the batch-averaged gradient.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[LabeledTriple],
    l2_mode: L2Mode,
    gamma: f64,
) -> Result<(f64, SparseGrad)> {
    if batch.is_empty() {
        return Ok((0.0, SparseGrad::default()));
    }
    let kind = params.kind();
    let dim = params.dim();
    let (ew, rw) = (params.entity_width(), params.relation_width());
    let inv_n = 1.0 / batch.len() as f64;
    let lambda = match l2_mode {
        L2Mode::Penalty(lambda) => lambda,
        _ => 0.0,
    };
    // phases have a fixed-modulus image, so they are not penalized
    let penalize_relation = kind != ModelKind::RotatE;

    let mut acc = GradAccumulator::new();
    let mut total = 0.0;
    for item in batch {
        let Triple { h, r, t } = item.triple;
        let (hrow, rrow, trow) = (params.entity_row(h), params.relation_row(r), params.entity_row(t));
        let score = params.score(item.triple);
        let mut loss = kernels::logistic_loss(gamma + score, item.y);
        if lambda > 0.0 {
            let sq = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>();
            loss += lambda
                * (sq(hrow) + sq(trow) + if penalize_relation { sq(rrow) } else { 0.0 });
        }
        if !loss.is_finite() {
            return Err(KgeError::NonFiniteLoss {
                kind,
                triple: item.triple,
                score,
            });
        }
        total += loss;

        let scale = kernels::logistic_loss_grad(gamma + score, item.y) * inv_n;
        let hs = acc.slot(RowKind::Entity, h, ew);
        let rs = acc.slot(RowKind::Relation, r, rw);
        let ts = acc.slot(RowKind::Entity, t, ew);
        let mut gh = std::mem::take(&mut acc.rows[hs].values);
        let mut gr = std::mem::take(&mut acc.rows[rs].values);
        let mut gt = if ts == hs {
            vec![0.0; ew]
        } else {
            std::mem::take(&mut acc.rows[ts].values)
        };
        kernels::accumulate_score_grad(kind, dim, hrow, rrow, trow, scale, &mut gh, &mut gr, &mut gt);
        if lambda > 0.0 {
            let w = 2.0 * lambda * inv_n;
            axpy(&mut gh, w, hrow);
            axpy(&mut gt, w, trow);
            if penalize_relation {
                axpy(&mut gr, w, rrow);
            }
        }
        if ts == hs {
            axpy(&mut gh, 1.0, &gt);
        } else {
            acc.rows[ts].values = gt;
        }
        acc.rows[hs].values = gh;
        acc.rows[rs].values = gr;
    }
    Ok((total * inv_n, acc.into_sparse()))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Plain SGD on the touched rows: `row ← row − lr·g`.
pub fn sgd_step(params: &mut ModelParams, grad: &SparseGrad, lr: f64) {
    for row in &grad.rows {
        let target = params.row_mut(row.kind, row.id);
        axpy(target, -lr, &row.values);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates this row has received.
    pub step: u64,
}

/// Lazily allocated per-row Adam state; rows never touched hold no moments.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    rows: HashMap<(RowKind, usize), AdamMoments>,
}

impl AdamState {
    pub fn get(&self, kind: RowKind, id: usize) -> Option<&AdamMoments> {
        self.rows.get(&(kind, id))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One bias-corrected Adam update of a single row. `step` is the row's
/// update count including this one.
pub(crate) fn adam_update_row(
    row: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    hyper: AdamHyper,
) {
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..row.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        row[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

/// Sparse Adam: only rows present in `grad` are updated, and only their
/// moments decay.
pub fn adam_step(params: &mut ModelParams, grad: &SparseGrad, state: &mut AdamState, hyper: AdamHyper) {
    for row in &grad.rows {
        let width = row.values.len();
        let moments = state
            .rows
            .entry((row.kind, row.id))
            .or_insert_with(|| AdamMoments {
                m: vec![0.0; width],
                v: vec![0.0; width],
                step: 0,
            });
        moments.step += 1;
        adam_update_row(
            params.row_mut(row.kind, row.id),
            &row.values,
            &mut moments.m,
            &mut moments.v,
            moments.step,
            hyper,
        );
    }
}

/// Post-step constraints: entity projection and RESCAL symmetrization on the
/// rows the step touched.
pub fn apply_constraints(params: &mut ModelParams, grad: &SparseGrad, config: &TrainConfig) {
    for row in &grad.rows {
        match row.kind {
            RowKind::Entity if config.l2_mode == L2Mode::ProjectEntities => {
                params.normalize_entity(row.id)
            }
            RowKind::Relation if config.rescal_symmetric => params.symmetrize_relation(row.id),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub wall_time: Duration,
    pub checksum: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    adam: AdamState,
    epoch: usize,
    losses: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, n_entities: usize, n_relations: usize) -> Result<Self> {
        config.validate()?;
        let params = init_params(config.model, n_entities, n_relations, config.dim, config.seed)?;
        Self::resume(config, params, 0)
    }

    /// Continues from existing parameters; `epoch` is the number of epochs
    /// already completed. Optimizer moments start fresh.
    pub fn resume(config: TrainConfig, mut params: ModelParams, epoch: usize) -> Result<Self> {
        config.validate()?;
        if params.kind() != config.model || params.dim() != config.dim {
            return Err(KgeError::Mismatch(format!(
                "params are {} dim {}, config asks for {} dim {}",
                params.kind(),
                params.dim(),
                config.model,
                config.dim
            )));
        }
        if config.l2_mode == L2Mode::ProjectEntities {
            for id in 0..params.n_entities() {
                params.normalize_entity(id);
            }
        }
        Ok(Self {
            config,
            params,
            adam: AdamState::default(),
            epoch,
            losses: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs, including those before a resume.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mixed = self
            .config
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(self.epoch as u64 + 1);
        ChaCha8Rng::seed_from_u64(mixed)
    }

    /// Shuffles positives, cuts them into batches and corrupts each batch.
    fn plan_epoch(
        &self,
        triples: &[Triple],
        filter: Option<&FilterIndex>,
    ) -> Vec<Vec<LabeledTriple>> {
        let mut rng = self.epoch_rng();
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(&mut rng);
        let filter = if self.config.filter_false_negatives {
            filter
        } else {
            None
        };
        let n_entities = self.params.n_entities();
        order
            .chunks(self.config.batch_size)
            .map(|chunk| {
                let mut batch = Vec::with_capacity(chunk.len() * (1 + self.config.negatives));
                for &i in chunk {
                    batch.push(LabeledTriple::positive(triples[i]));
                }
                for &i in chunk {
                    let neg = sample_negatives(triples[i], self.config.negatives, n_entities, &mut rng, filter);
                    if !neg.degenerate {
                        batch.extend(neg.triples);
                    }
                }
                batch
            })
            .collect()
    }

    fn step(&mut self, grad: &SparseGrad) {
        match self.config.optimizer {
            Optimizer::Sgd => sgd_step(&mut self.params, grad, self.config.learning_rate),
            Optimizer::Adam => adam_step(
                &mut self.params,
                grad,
                &mut self.adam,
                AdamHyper::from_config(&self.config),
            ),
        }
        apply_constraints(&mut self.params, grad, &self.config);
    }

    /// Runs one epoch and returns its mean per-triple loss. On error the
    /// parameters are left as they were after the last successful step.
    pub fn run_epoch(&mut self, triples: &[Triple], filter: Option<&FilterIndex>) -> Result<f64> {
        if triples.is_empty() {
            return Err(KgeError::EmptyInput("training set".into()));
        }
        if let Some(bad) = triples.iter().find(|t| !self.params.contains(t)) {
            return Err(KgeError::Mismatch(format!(
                "triple {bad} is outside the model's {} entities / {} relations",
                self.params.n_entities(),
                self.params.n_relations()
            )));
        }
        let batches = self.plan_epoch(triples, filter);
        let (sum, count) = if self.config.parallel() {
            hogwild::run_batches(&mut self.params, &mut self.adam, &batches, &self.config)?
        } else {
            let mut sum = 0.0;
            let mut count = 0usize;
            for batch in &batches {
                let (loss, grad) = batch_loss(&self.params, batch, self.config.l2_mode, self.config.gamma)?;
                self.step(&grad);
                sum += loss * batch.len() as f64;
                count += batch.len();
            }
            (sum, count)
        };
        let mean = sum / count.max(1) as f64;
        self.epoch += 1;
        if !mean.is_finite() || !self.params.is_finite() {
            return Err(KgeError::Diverged {
                epoch: self.epoch,
                loss: mean,
            });
        }
        self.losses.push(mean);
        Ok(mean)
    }

    /// Runs `config.epochs` epochs, calling `on_epoch(epoch, params, loss)`
    /// after each one.
    pub fn fit<F>(&mut self, triples: &[Triple], filter: Option<&FilterIndex>, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(usize, &ModelParams, f64) -> Result<()>,
    {
        for _ in 0..self.config.epochs {
            let loss = self.run_epoch(triples, filter)?;
            on_epoch(self.epoch, &self.params, loss)?;
        }
        Ok(())
    }

    pub fn report(&self, wall_time: Duration) -> TrainReport {
        TrainReport {
            epoch_losses: self.losses.clone(),
            wall_time,
            checksum: self.params.checksum(),
        }
    }
}

/// Trains a fresh model on `triples` for `config.epochs` epochs.
pub fn train(
    triples: &[Triple],
    n_entities: usize,
    n_relations: usize,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if triples.is_empty() {
        return Err(KgeError::EmptyInput("training set".into()));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone(), n_entities, n_relations)?;
    trainer.fit(triples, None, |_, _, _| Ok(()))?;
    let report = trainer.report(start.elapsed());
    Ok((trainer.into_params(), report))
}
