#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kge_core::model::RowKind;
use kge_core::{init_params, ModelKind, ModelParams, Triple};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn random_triple(rng: &mut ChaCha8Rng, n_entities: usize, n_relations: usize) -> Triple {
    Triple::new(
        rng.gen_range(0..n_entities),
        rng.gen_range(0..n_relations),
        rng.gen_range(0..n_entities),
    )
}

pub fn random_params(rng: &mut ChaCha8Rng, kind: ModelKind, n_entities: usize, n_relations: usize, dim: usize) -> ModelParams {
    init_params(kind, n_entities, n_relations, dim, rng.gen()).unwrap()
}

/// True when a coordinate step of `eps` can cross a TransE_l1 kink.
pub fn near_l1_kink(params: &ModelParams, triple: Triple, eps: f64) -> bool {
    if params.kind() != ModelKind::TransEL1 {
        return false;
    }
    let (h, r, t) = (
        params.entity_row(triple.h),
        params.relation_row(triple.r),
        params.entity_row(triple.t),
    );
    (0..params.dim()).any(|i| (h[i] + r[i] - t[i]).abs() < 4.0 * eps)
}

/// Relative gap between the analytic gradient and central differences of
/// the loss: the largest coordinate gap over every touched row, divided by
/// the largest gradient magnitude of the instance. Per-coordinate ratios are
/// dominated by differencing noise wherever a component is near zero (self
/// loops cancel TransE entity gradients exactly). `None` when the instance
/// sits at a TransE_l1 kink.
pub fn fd_max_rel_error(params: &ModelParams, triple: Triple, y: f64, eps: f64) -> Option<f64> {
    if near_l1_kink(params, triple, eps) {
        return None;
    }
    let (_, grad) = params.grad(triple, y);
    let loss = |p: &ModelParams| p.grad(triple, y).0;
    let mut gap = 0.0f64;
    let mut magnitude = 0.0f64;
    let rows = [
        (RowKind::Entity, triple.h),
        (RowKind::Relation, triple.r),
        (RowKind::Entity, triple.t),
    ];
    for (kind, id) in rows {
        let analytic = grad.get(kind, id).expect("touched row present").to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.row_mut(kind, id)[i] += eps;
            let mut minus = params.clone();
            minus.row_mut(kind, id)[i] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            gap = gap.max((a - numeric).abs());
            magnitude = magnitude.max(a.abs()).max(numeric.abs());
        }
    }
    Some(gap / magnitude.max(1e-8))
}

/// Ring graph over `n` entities with one relation: i -> i+1.
pub fn ring(n: usize) -> Vec<Triple> {
    (0..n).map(|i| Triple::new(i, 0, (i + 1) % n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariant {
    DistMultSymmetry,
    RescalIdentity,
    ComplExRealSymmetry,
    TransENormOrdering,
    RotatEJointRotation,
    RotatEPhaseShift,
}

impl Invariant {
    pub const ALL: [Invariant; 6] = [
        Invariant::DistMultSymmetry,
        Invariant::RescalIdentity,
        Invariant::ComplExRealSymmetry,
        Invariant::TransENormOrdering,
        Invariant::RotatEJointRotation,
        Invariant::RotatEPhaseShift,
    ];

    /// Violation on one random instance: relative gap for identities, the
    /// amount by which the L1 score exceeds the L2 score for the ordering.
    pub fn violation(self, rng: &mut ChaCha8Rng) -> f64 {
        let dim = rng.gen_range(1..=16);
        let (n_e, n_r) = (4, 2);
        let triple = random_triple(rng, n_e, n_r);
        let gap = |a: f64, b: f64| (a - b).abs() / (1.0 + a.abs());
        match self {
            Invariant::DistMultSymmetry => {
                let p = random_params(rng, ModelKind::DistMult, n_e, n_r, dim);
                gap(p.score(triple), p.score(Triple::new(triple.t, triple.r, triple.h)))
            }
            Invariant::RescalIdentity => {
                let p = random_params(rng, ModelKind::Rescal, n_e, n_r, dim);
                let mut relation = p.relation_table().to_vec();
                let m = &mut relation[triple.r * dim * dim..(triple.r + 1) * dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        m[i * dim + j] = if i == j { 1.0 } else { 0.0 };
                    }
                }
                let p = ModelParams::from_parts(ModelKind::Rescal, dim, p.entity_table().to_vec(), relation).unwrap();
                let dot: f64 = p
                    .entity_row(triple.h)
                    .iter()
                    .zip(p.entity_row(triple.t))
                    .map(|(a, b)| a * b)
                    .sum();
                gap(p.score(triple), dot)
            }
            Invariant::ComplExRealSymmetry => {
                let p = random_params(rng, ModelKind::ComplEx, n_e, n_r, dim);
                let mut relation = p.relation_table().to_vec();
                for im in relation.iter_mut().skip(1).step_by(2) {
                    *im = 0.0;
                }
                let p = ModelParams::from_parts(ModelKind::ComplEx, dim, p.entity_table().to_vec(), relation).unwrap();
                gap(p.score(triple), p.score(Triple::new(triple.t, triple.r, triple.h)))
            }
            Invariant::TransENormOrdering => {
                let l1 = random_params(rng, ModelKind::TransEL1, n_e, n_r, dim);
                let l2 = ModelParams::from_parts(
                    ModelKind::TransEL2,
                    dim,
                    l1.entity_table().to_vec(),
                    l1.relation_table().to_vec(),
                )
                .unwrap();
                (l1.score(triple) - l2.score(triple)).max(0.0)
            }
            Invariant::RotatEJointRotation | Invariant::RotatEPhaseShift => {
                let p = random_params(rng, ModelKind::RotatE, n_e, n_r, dim);
                // the tail-only rotation needs a distinct tail row
                let triple = Triple::new(triple.h, triple.r, (triple.h + 1 + triple.t % (n_e - 1)) % n_e);
                let delta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let (c, s) = (delta.cos(), delta.sin());
                let rotate = |row: &mut [f64]| {
                    for pair in row.chunks_exact_mut(2) {
                        let (re, im) = (pair[0], pair[1]);
                        pair[0] = re * c - im * s;
                        pair[1] = re * s + im * c;
                    }
                };
                let mut entity = p.entity_table().to_vec();
                let mut relation = p.relation_table().to_vec();
                let w = 2 * dim;
                if self == Invariant::RotatEJointRotation {
                    // h and t both turn by δ, phases unchanged
                    rotate(&mut entity[triple.h * w..(triple.h + 1) * w]);
                    if triple.t != triple.h {
                        rotate(&mut entity[triple.t * w..(triple.t + 1) * w]);
                    }
                } else {
                    // phases gain δ, only the tail turns by δ
                    for phase in &mut relation[triple.r * dim..(triple.r + 1) * dim] {
                        *phase += delta;
                    }
                    rotate(&mut entity[triple.t * w..(triple.t + 1) * w]);
                }
                let q = ModelParams::from_parts(ModelKind::RotatE, dim, entity, relation).unwrap();
                gap(p.score(triple), q.score(triple))
            }
        }
    }
}
