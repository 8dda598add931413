//! Lock-free parallel epoch: batches run on a worker pool and write their
//! sparse updates straight into shared tables without synchronization.
//! Overlapping rows are last-write-wins, so results depend on scheduling.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use super::{adam_update_row, axpy, batch_loss, AdamHyper, AdamMoments, AdamState, LabeledTriple, L2Mode, Optimizer, TrainConfig};
use crate::error::{KgeError, Result};
use crate::graph::Triple;
use crate::model::{ModelParams, RowKind};

struct SharedTable {
    cells: Vec<AtomicU64>,
    width: usize,
}

impl SharedTable {
    fn from_slice(values: &[f64], width: usize) -> Self {
        Self {
            cells: values.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            width,
        }
    }

    fn zeros(len: usize, width: usize) -> Self {
        Self {
            cells: (0..len).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
            width,
        }
    }

    fn load_row(&self, id: usize) -> Vec<f64> {
        self.cells[id * self.width..(id + 1) * self.width]
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    fn store_row(&self, id: usize, values: &[f64]) {
        for (cell, v) in self.cells[id * self.width..(id + 1) * self.width].iter().zip(values) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn copy_into(&self, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.cells) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }
}

struct SharedAdam {
    m: SharedTable,
    v: SharedTable,
    steps: Vec<AtomicU64>,
}

struct Shared<'a> {
    params: &'a ModelParams,
    entity: SharedTable,
    relation: SharedTable,
    adam_entity: Option<SharedAdam>,
    adam_relation: Option<SharedAdam>,
}

impl Shared<'_> {
    fn table(&self, kind: RowKind) -> &SharedTable {
        match kind {
            RowKind::Entity => &self.entity,
            RowKind::Relation => &self.relation,
        }
    }

    fn adam(&self, kind: RowKind) -> Option<&SharedAdam> {
        match kind {
            RowKind::Entity => self.adam_entity.as_ref(),
            RowKind::Relation => self.adam_relation.as_ref(),
        }
    }
}

fn shared_adam(state: &AdamState, kind: RowKind, rows: usize, width: usize) -> SharedAdam {
    let adam = SharedAdam {
        m: SharedTable::zeros(rows * width, width),
        v: SharedTable::zeros(rows * width, width),
        steps: (0..rows).map(|_| AtomicU64::new(0)).collect(),
    };
    for (&(k, id), moments) in &state.rows {
        if k == kind {
            adam.m.store_row(id, &moments.m);
            adam.v.store_row(id, &moments.v);
            adam.steps[id].store(moments.step, Ordering::Relaxed);
        }
    }
    adam
}

fn collect_adam(adam: &SharedAdam, kind: RowKind, state: &mut AdamState) {
    for (id, step) in adam.steps.iter().enumerate() {
        let step = step.load(Ordering::Relaxed);
        if step > 0 {
            state.rows.insert(
                (kind, id),
                AdamMoments {
                    m: adam.m.load_row(id),
                    v: adam.v.load_row(id),
                    step,
                },
            );
        }
    }
}

/// Processes one batch against a private copy of the rows it touches and
/// writes the updated rows back.
fn run_batch(shared: &Shared<'_>, batch: &[LabeledTriple], config: &TrainConfig) -> Result<f64> {
    let params = shared.params;
    let mut entity_ids: HashMap<usize, usize> = HashMap::new();
    let mut relation_ids: HashMap<usize, usize> = HashMap::new();
    let mut local_batch = Vec::with_capacity(batch.len());
    for item in batch {
        let local = |map: &mut HashMap<usize, usize>, id: usize| {
            let next = map.len();
            *map.entry(id).or_insert(next)
        };
        let h = local(&mut entity_ids, item.triple.h);
        let r = local(&mut relation_ids, item.triple.r);
        let t = local(&mut entity_ids, item.triple.t);
        local_batch.push(LabeledTriple {
            triple: Triple::new(h, r, t),
            y: item.y,
        });
    }
    let mut entity_global = vec![0; entity_ids.len()];
    for (&global, &local) in &entity_ids {
        entity_global[local] = global;
    }
    let mut relation_global = vec![0; relation_ids.len()];
    for (&global, &local) in &relation_ids {
        relation_global[local] = global;
    }
    let entity: Vec<f64> = entity_global.iter().flat_map(|&g| shared.entity.load_row(g)).collect();
    let relation: Vec<f64> = relation_global
        .iter()
        .flat_map(|&g| shared.relation.load_row(g))
        .collect();
    let mut local = ModelParams::from_tables(params.kind(), params.dim(), entity, relation);

    let (loss, grad) = batch_loss(&local, &local_batch, config.l2_mode, config.gamma)?;
    let hyper = AdamHyper::from_config(config);
    for row in &grad.rows {
        let global = match row.kind {
            RowKind::Entity => entity_global[row.id],
            RowKind::Relation => relation_global[row.id],
        };
        let mut values = shared.table(row.kind).load_row(global);
        match (config.optimizer, shared.adam(row.kind)) {
            (Optimizer::Adam, Some(adam)) => {
                let step = adam.steps[global].fetch_add(1, Ordering::Relaxed) + 1;
                let mut m = adam.m.load_row(global);
                let mut v = adam.v.load_row(global);
                adam_update_row(&mut values, &row.values, &mut m, &mut v, step, hyper);
                adam.m.store_row(global, &m);
                adam.v.store_row(global, &v);
            }
            _ => axpy(&mut values, -config.learning_rate, &row.values),
        }
        local.row_mut(row.kind, row.id).copy_from_slice(&values);
        match row.kind {
            RowKind::Entity if config.l2_mode == L2Mode::ProjectEntities => {
                local.normalize_entity(row.id)
            }
            RowKind::Relation if config.rescal_symmetric => local.symmetrize_relation(row.id),
            _ => {}
        }
        shared.table(row.kind).store_row(global, local.row(row.kind, row.id));
    }
    Ok(loss)
}

/// Runs every batch of an epoch on `config.threads` workers. Returns the
/// summed per-triple loss and the triple count.
pub(super) fn run_batches(
    params: &mut ModelParams,
    adam: &mut AdamState,
    batches: &[Vec<LabeledTriple>],
    config: &TrainConfig,
) -> Result<(f64, usize)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| KgeError::Config(format!("cannot start {} workers: {e}", config.threads)))?;
    let use_adam = config.optimizer == Optimizer::Adam;
    let shared = Shared {
        params,
        entity: SharedTable::from_slice(params.entity_table(), params.entity_width()),
        relation: SharedTable::from_slice(params.relation_table(), params.relation_width()),
        adam_entity: use_adam
            .then(|| shared_adam(adam, RowKind::Entity, params.n_entities(), params.entity_width())),
        adam_relation: use_adam.then(|| {
            shared_adam(adam, RowKind::Relation, params.n_relations(), params.relation_width())
        }),
    };
    let results: Vec<Result<(f64, usize)>> = pool.install(|| {
        batches
            .par_iter()
            .map(|batch| run_batch(&shared, batch, config).map(|loss| (loss * batch.len() as f64, batch.len())))
            .collect()
    });

    let Shared {
        entity,
        relation,
        adam_entity,
        adam_relation,
        ..
    } = shared;
    let (entity_out, relation_out) = params.tables_mut();
    entity.copy_into(entity_out);
    relation.copy_into(relation_out);
    if let Some(a) = &adam_entity {
        collect_adam(a, RowKind::Entity, adam);
    }
    if let Some(a) = &adam_relation {
        collect_adam(a, RowKind::Relation, adam);
    }

    let mut sum = 0.0;
    let mut count = 0;
    for result in results {
        let (s, n) = result?;
        sum += s;
        count += n;
    }
    Ok((sum, count))
}
