//! Dense/activation stacks with hand-written backward passes and Adam.
//!
//! Every kernel takes the precision it runs at. Operands are narrowed inside
//! the kernel and the output is rounded to that precision before being
//! returned widened to f32, so no low-precision tensor outlives the call.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::Precision;
use crate::graph::{LayerKind, LayerSpec};
use crate::numerics::{gemm, quantize, quantize_slice, Matrix};

/// Weights `in x out` and bias `out` of one Dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vec<f32>,
}

impl DenseParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(in_dim, out_dim),
            b: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn he_uniform<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim as f32).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            w: Matrix::from_vec(in_dim, out_dim, data).expect("sized"),
            b: vec![0.0; out_dim],
        }
    }

    pub fn round_to(&mut self, precision: Precision) {
        quantize_slice(self.w.data_mut(), precision);
        quantize_slice(&mut self.b, precision);
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.w.data().iter().chain(&self.b).copied()
    }
}

pub type DenseGrads = DenseParams;

/// Parameters per layer index; `None` for activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Option<DenseParams>>,
}

impl Params {
    pub fn init<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Self {
        Self {
            layers: specs
                .iter()
                .map(|l| match l.kind {
                    LayerKind::Dense => Some(DenseParams::he_uniform(l.in_dim, l.out_dim, rng)),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| l.as_ref().map(|p| DenseParams::zeros(p.w.rows(), p.w.cols())))
                .collect(),
        }
    }

    pub fn dense(&self, layer: usize) -> &DenseParams {
        self.layers[layer].as_ref().expect("dense layer")
    }

    pub fn dense_mut(&mut self, layer: usize) -> &mut DenseParams {
        self.layers[layer].as_mut().expect("dense layer")
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers.iter().flatten().flat_map(DenseParams::values)
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bit patterns of every value, for exact comparisons.
    pub fn bits(&self) -> Vec<u32> {
        self.values().map(f32::to_bits).collect()
    }
}

/// `x·W + b`, rounded to `precision`.
pub fn dense_forward(x: &Matrix, p: &DenseParams, precision: Precision) -> Matrix {
    let mut y = gemm(x, &p.w, precision).expect("layer shapes agree");
    let n = y.cols();
    let b: Vec<f32> = p.b.iter().map(|&v| quantize(v, precision)).collect();
    for row in y.data_mut().chunks_mut(n) {
        for (v, bj) in row.iter_mut().zip(&b) {
            *v = quantize(*v + bj, precision);
        }
    }
    y
}

/// Returns `(dx, grads)` with `dW = xᵀ·dy`, `db = Σ_rows dy`, `dx = dy·Wᵀ`.
pub fn dense_backward(
    x: &Matrix,
    p: &DenseParams,
    dy: &Matrix,
    precision: Precision,
) -> (Matrix, DenseGrads) {
    let mut dw = gemm(&x.transpose(), dy, precision).expect("layer shapes agree");
    let mut dx = gemm(dy, &p.w.transpose(), precision).expect("layer shapes agree");
    let n = dy.cols();
    let mut db = vec![0.0f32; n];
    for row in dy.data().chunks(n) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += quantize(g, precision);
        }
    }
    quantize_slice(dw.data_mut(), precision);
    quantize_slice(dx.data_mut(), precision);
    quantize_slice(&mut db, precision);
    (dx, DenseParams { w: dw, b: db })
}

pub fn activation_forward(kind: LayerKind, x: &Matrix, precision: Precision) -> Matrix {
    match kind {
        LayerKind::Relu => x.map(|v| quantize(v.max(0.0), precision)),
        LayerKind::Tanh => x.map(|v| quantize(quantize(v, precision).tanh(), precision)),
        other => panic!("{other:?} is not an activation"),
    }
}

/// `x` is the activation input, `y` its output.
pub fn activation_backward(
    kind: LayerKind,
    x: &Matrix,
    y: &Matrix,
    dy: &Matrix,
    precision: Precision,
) -> Matrix {
    let data = match kind {
        LayerKind::Relu => x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xi, &g)| if xi > 0.0 { quantize(g, precision) } else { 0.0 })
            .collect(),
        LayerKind::Tanh => y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&yi, &g)| {
                let (yi, g) = (quantize(yi, precision), quantize(g, precision));
                quantize(g * (1.0 - yi * yi), precision)
            })
            .collect(),
        other => panic!("{other:?} is not an activation"),
    };
    Matrix::from_vec(dy.rows(), dy.cols(), data).expect("same shape")
}

/// Forward through `specs`, returning every layer input plus the final output.
pub fn forward_cached(specs: &[LayerSpec], params: &Params, x: &Matrix) -> Vec<Matrix> {
    let mut acts = Vec::with_capacity(specs.len() + 1);
    acts.push(x.clone());
    for (i, l) in specs.iter().enumerate() {
        let input = &acts[i];
        let out = match l.kind {
            LayerKind::Dense => dense_forward(input, params.dense(i), Precision::Fp32),
            kind => activation_forward(kind, input, Precision::Fp32),
        };
        acts.push(out);
    }
    acts
}

pub fn forward(specs: &[LayerSpec], params: &Params, x: &Matrix) -> Matrix {
    forward_cached(specs, params, x).pop().expect("non-empty")
}

/// FP32 backward given cached activations; returns gradients per layer.
pub fn backward(specs: &[LayerSpec], params: &Params, acts: &[Matrix], dout: &Matrix) -> Params {
    let mut grads = Params {
        layers: vec![None; specs.len()],
    };
    let mut dy = dout.clone();
    for (i, l) in specs.iter().enumerate().rev() {
        dy = match l.kind {
            LayerKind::Dense => {
                let (dx, g) = dense_backward(&acts[i], params.dense(i), &dy, Precision::Fp32);
                grads.layers[i] = Some(g);
                dx
            }
            kind => activation_backward(kind, &acts[i], &acts[i + 1], &dy, Precision::Fp32),
        };
    }
    grads
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the applied-step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Advances the step count; call once per applied optimizer step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates one layer in place with the current step's bias correction.
    pub fn apply(&mut self, cfg: &AdamConfig, layer: usize, p: &mut DenseParams, g: &DenseGrads) {
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = self.m.dense_mut(layer);
        let v = self.v.dense_mut(layer);
        let step = |w: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
            for i in 0..w.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        };
        step(p.w.data_mut(), g.w.data(), m.w.data_mut(), v.w.data_mut());
        step(&mut p.b, &g.b, &mut m.b, &mut v.b);
    }
}

/// Online weights, target weights and optimizer state of one Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub specs: Vec<LayerSpec>,
    pub master: Params,
    pub target: Params,
    pub adam: AdamState,
}

impl Mlp {
    pub fn new<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Self {
        let master = Params::init(specs, rng);
        Self {
            specs: specs.to_vec(),
            target: master.clone(),
            adam: AdamState::new(&master),
            master,
        }
    }

    pub fn sync_target(&mut self) {
        self.target = self.master.clone();
    }

    pub fn q_values(&self, x: &Matrix) -> Matrix {
        forward(&self.specs, &self.master, x)
    }

    pub fn greedy_action(&self, state: &[f32]) -> usize {
        let x = Matrix::from_vec(1, state.len(), state.to_vec()).expect("row");
        argmax(self.q_values(&x).row(0))
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Dense)
            .map(|(i, _)| i)
    }
}

/// Index of the largest value; the first on ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_dense_outer_product() {
        let p = DenseParams {
            w: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
            b: vec![0.5, -0.5],
        };
        let x = Matrix::from_rows(&[vec![1.0, -1.0, 2.0]]).unwrap();
        let y = dense_forward(&x, &p, Precision::Fp32);
        assert_eq!(y.data(), &[8.5, 9.5]);
        let dy = Matrix::from_rows(&[vec![0.25, -2.0]]).unwrap();
        let (dx, g) = dense_backward(&x, &p, &dy, Precision::Fp32);
        assert_eq!(g.w.data(), &[0.25, -2.0, -0.25, 2.0, 0.5, -4.0]);
        assert_eq!(g.b, vec![0.25, -2.0]);
        assert_eq!(dx.data(), &[0.25 - 4.0, 0.75 - 8.0, 1.25 - 12.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let specs = [
            LayerSpec::dense(4, 8),
            LayerSpec::relu(8),
            LayerSpec::dense(8, 2),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = Params::init(&specs, &mut rng);
        let x = Matrix::from_vec(3, 4, (0..12).map(|i| i as f32 * 0.1).collect()).unwrap();
        let acts = forward_cached(&specs, &params, &x);
        let grads = backward(&specs, &params, &acts, &Matrix::zeros(3, 2));
        assert!(grads.values().all(|g| g == 0.0));
        assert_eq!(grads.len(), params.len());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Params {
            layers: vec![Some(DenseParams::zeros(1, 1))],
        };
        let g = DenseParams {
            w: Matrix::from_vec(1, 1, vec![3.0]).unwrap(),
            b: vec![-0.5],
        };
        let mut adam = AdamState::new(&p);
        adam.begin_step();
        adam.apply(&AdamConfig::default(), 0, p.dense_mut(0), &g);
        let d = p.dense(0);
        assert!((d.w.get(0, 0) + 1e-3).abs() < 1e-9);
        assert!((d.b[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
