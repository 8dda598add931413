//! Row-level scoring kernels and their analytic derivatives.
//!
//! Every function here works on borrowed parameter rows so the same math
//! backs the scalar path, the batched candidate paths and the lock-free
//! trainer. Complex rows are interleaved `(re, im)` pairs.

use super::ModelKind;

/// Score of one triple given its three parameter rows. `rot` carries the
/// precomputed `(cos θ, sin θ)` pairs for RotatE and is ignored otherwise.
#[inline]
pub(crate) fn score_rows(
    kind: ModelKind,
    dim: usize,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    rot: &[(f64, f64)],
) -> f64 {
    match kind {
        ModelKind::TransEL1 => -h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| (h + r - t).abs())
            .sum::<f64>(),
        ModelKind::TransEL2 => -h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| {
                let v = h + r - t;
                v * v
            })
            .sum::<f64>()
            .sqrt(),
        ModelKind::RotatE => {
            let mut sq = 0.0;
            for i in 0..dim {
                let (c, s) = rot[i];
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                let ur = hr * c - hi * s - t[2 * i];
                let ui = hr * s + hi * c - t[2 * i + 1];
                sq += ur * ur + ui * ui;
            }
            -sq.sqrt()
        }
        ModelKind::Rescal => {
            let mut total = 0.0;
            for i in 0..dim {
                total += h[i] * dot(&r[i * dim..(i + 1) * dim], t);
            }
            total
        }
        ModelKind::DistMult => h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| h * r * t)
            .sum(),
        ModelKind::ComplEx => {
            let mut total = 0.0;
            for i in 0..dim {
                let (ar, ai) = (h[2 * i], h[2 * i + 1]);
                let (br, bi) = (r[2 * i], r[2 * i + 1]);
                let (cr, ci) = (t[2 * i], t[2 * i + 1]);
                total += (ar * br - ai * bi) * cr + (ar * bi + ai * br) * ci;
            }
            total
        }
    }
}

/// Four independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn rotation(phases: &[f64]) -> Vec<(f64, f64)> {
    phases.iter().map(|p| (p.cos(), p.sin())).collect()
}

/// Adds `scale * ∂score/∂row` into `gh`, `gr` and `gt`.
///
/// The distance models use the subgradient 0 at the non-differentiable
/// points (zero residual for L2/RotatE, zero coordinate for L1).
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_score_grad(
    kind: ModelKind,
    dim: usize,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    scale: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    match kind {
        ModelKind::TransEL1 => {
            for i in 0..dim {
                let v = h[i] + r[i] - t[i];
                let g = -scale * sign(v);
                gh[i] += g;
                gr[i] += g;
                gt[i] -= g;
            }
        }
        ModelKind::TransEL2 => {
            let norm = h
                .iter()
                .zip(r)
                .zip(t)
                .map(|((h, r), t)| {
                    let v = h + r - t;
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return;
            }
            for i in 0..dim {
                let g = -scale * (h[i] + r[i] - t[i]) / norm;
                gh[i] += g;
                gr[i] += g;
                gt[i] -= g;
            }
        }
        ModelKind::RotatE => {
            let mut residual = vec![0.0; 2 * dim];
            let mut rotated = vec![0.0; 2 * dim];
            let mut sq = 0.0;
            for i in 0..dim {
                let (c, s) = (r[i].cos(), r[i].sin());
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                rotated[2 * i] = hr * c - hi * s;
                rotated[2 * i + 1] = hr * s + hi * c;
                residual[2 * i] = rotated[2 * i] - t[2 * i];
                residual[2 * i + 1] = rotated[2 * i + 1] - t[2 * i + 1];
                sq += residual[2 * i] * residual[2 * i] + residual[2 * i + 1] * residual[2 * i + 1];
            }
            let norm = sq.sqrt();
            if norm == 0.0 {
                return;
            }
            for i in 0..dim {
                let (c, s) = (r[i].cos(), r[i].sin());
                // ∂score/∂residual
                let g_re = -scale * residual[2 * i] / norm;
                let g_im = -scale * residual[2 * i + 1] / norm;
                gh[2 * i] += g_re * c + g_im * s;
                gh[2 * i + 1] += -g_re * s + g_im * c;
                gr[i] += -g_re * rotated[2 * i + 1] + g_im * rotated[2 * i];
                gt[2 * i] -= g_re;
                gt[2 * i + 1] -= g_im;
            }
        }
        ModelKind::Rescal => {
            for i in 0..dim {
                let row = &r[i * dim..(i + 1) * dim];
                gh[i] += scale * dot(row, t);
                let sh = scale * h[i];
                for (g, tj) in gr[i * dim..(i + 1) * dim].iter_mut().zip(t) {
                    *g += sh * tj;
                }
                for (g, mj) in gt[..dim].iter_mut().zip(row) {
                    *g += sh * mj;
                }
            }
        }
        ModelKind::DistMult => {
            for i in 0..dim {
                gh[i] += scale * r[i] * t[i];
                gr[i] += scale * h[i] * t[i];
                gt[i] += scale * h[i] * r[i];
            }
        }
        ModelKind::ComplEx => {
            for i in 0..dim {
                let (ar, ai) = (h[2 * i], h[2 * i + 1]);
                let (br, bi) = (r[2 * i], r[2 * i + 1]);
                let (cr, ci) = (t[2 * i], t[2 * i + 1]);
                gh[2 * i] += scale * (br * cr + bi * ci);
                gh[2 * i + 1] += scale * (br * ci - bi * cr);
                gr[2 * i] += scale * (ar * cr + ai * ci);
                gr[2 * i + 1] += scale * (ar * ci - ai * cr);
                gt[2 * i] += scale * (ar * br - ai * bi);
                gt[2 * i + 1] += scale * (ar * bi + ai * br);
            }
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `log(1 + e^{-y·s})`, evaluated without overflow.
#[inline]
pub fn logistic_loss(score: f64, y: f64) -> f64 {
    let x = -y * score;
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `∂/∂s log(1 + e^{-y·s}) = -y·σ(-y·s)`.
#[inline]
pub fn logistic_loss_grad(score: f64, y: f64) -> f64 {
    -y * sigmoid(-y * score)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
