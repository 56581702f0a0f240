//! Central-difference gradient check against an f64 re-implementation of
//! the forward pass and TD loss.

use rand::Rng;

use crate::cost::Precision;
use crate::graph::{LayerKind, LayerSpec};
use crate::numerics::Matrix;
use crate::train::dqn::td_loss;
use crate::train::mlp::{backward, forward_cached, Params};

/// Forward pass in f64; returns outputs and the sign pattern of every ReLU input.
fn forward_f64(specs: &[LayerSpec], params: &[Option<(Vec<f64>, Vec<f64>)>], x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut acts: Vec<Vec<f64>> = x.to_vec();
    let mut pattern = Vec::new();
    for (i, l) in specs.iter().enumerate() {
        acts = acts
            .iter()
            .map(|row| match l.kind {
                LayerKind::Dense => {
                    let (w, b) = params[i].as_ref().unwrap();
                    (0..l.out_dim)
                        .map(|j| {
                            let mut s = b[j];
                            for (k, &v) in row.iter().enumerate() {
                                s += v * w[k * l.out_dim + j];
                            }
                            s
                        })
                        .collect()
                }
                LayerKind::Relu => {
                    pattern.extend(row.iter().map(|&v| v > 0.0));
                    row.iter().map(|&v| v.max(0.0)).collect()
                }
                LayerKind::Tanh => row.iter().map(|&v| v.tanh()).collect(),
                _ => unreachable!(),
            })
            .collect();
    }
    (acts, pattern)
}

fn loss_f64(
    specs: &[LayerSpec],
    params: &[Option<(Vec<f64>, Vec<f64>)>],
    x: &[Vec<f64>],
    actions: &[usize],
    y: &[f64],
) -> (f64, Vec<bool>) {
    let (q, pattern) = forward_f64(specs, params, x);
    let n = actions.len() as f64;
    let loss = q
        .iter()
        .zip(actions)
        .zip(y)
        .map(|((row, &a), &t)| (row[a] - t).powi(2))
        .sum::<f64>()
        / n;
    (loss, pattern)
}

type Params64 = Vec<Option<(Vec<f64>, Vec<f64>)>>;

fn bump(p: &mut Params64, layer: usize, bias: bool, k: usize, delta: f64) {
    let (w, b) = p[layer].as_mut().unwrap();
    if bias {
        b[k] += delta;
    } else {
        w[k] += delta;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Compares FP32 analytic gradients of the TD loss against central
/// differences of an f64 re-implementation with step `h`. Relative error is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn grad_check<R: Rng>(specs: &[LayerSpec], batch: usize, h: f64, floor: f64, rng: &mut R) -> GradCheck {
    let params = Params::init(specs, rng);
    let in_dim = specs[0].in_dim;
    let out_dim = specs.last().unwrap().out_dim;
    let xs: Vec<f32> = (0..batch * in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..out_dim)).collect();
    let y: Vec<f32> = (0..batch).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let x = Matrix::from_vec(batch, in_dim, xs.clone()).unwrap();
    let acts = forward_cached(specs, &params, &x);
    let (_, dq) = td_loss(acts.last().unwrap(), &actions, &y, 1.0, Precision::Fp32);
    let grads = backward(specs, &params, &acts, &dq);

    let as64 = |p: &Params| -> Params64 {
        p.layers
            .iter()
            .map(|l| {
                l.as_ref().map(|d| {
                    (
                        d.w.data().iter().map(|&v| v as f64).collect(),
                        d.b.iter().map(|&v| v as f64).collect(),
                    )
                })
            })
            .collect()
    };
    let base = as64(&params);
    let x64: Vec<Vec<f64>> = xs.chunks(in_dim).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let y64: Vec<f64> = y.iter().map(|&v| v as f64).collect();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (li, layer) in base.iter().enumerate() {
        let Some((w, b)) = layer else { continue };
        let g = grads.layers[li].as_ref().unwrap();
        for (is_bias, len) in [(false, w.len()), (true, b.len())] {
            for k in 0..len {
                let mut plus = base.clone();
                let mut minus = base.clone();
                bump(&mut plus, li, is_bias, k, h);
                bump(&mut minus, li, is_bias, k, -h);
                let (lp, pp) = loss_f64(specs, &plus, &x64, &actions, &y64);
                let (lm, pm) = loss_f64(specs, &minus, &x64, &actions, &y64);
                let (_, p0) = loss_f64(specs, &base, &x64, &actions, &y64);
                if pp != p0 || pm != p0 {
                    out.skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = if is_bias { g.b[k] } else { g.w.data()[k] } as f64;
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                out.max_rel_error = out.max_rel_error.max(rel);
                out.checked += 1;
            }
        }
    }
    out
}

/// Random small MLP: 1–3 hidden layers of width 2–8 with ReLU or tanh.
pub fn random_mlp<R: Rng>(rng: &mut R) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = rng.gen_range(1..=6);
    for _ in 0..rng.gen_range(1..=3) {
        let h = rng.gen_range(2..=8);
        specs.push(LayerSpec::dense(prev, h));
        specs.push(if rng.gen_bool(0.5) {
            LayerSpec::relu(h)
        } else {
            LayerSpec::tanh(h)
        });
        prev = h;
    }
    specs.push(LayerSpec::dense(prev, rng.gen_range(1..=4)));
    specs
}
