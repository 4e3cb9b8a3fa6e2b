//! Dense layers, a leaky-rectifier MLP, and momentum SGD.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{leaky_relu, leaky_relu_grad, sqrt};

/// `y = W x + b`, weights row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Dense {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Dense {
        let bound = 1.0 / sqrt(inputs.max(1) as f64);
        let mut layer = Dense::zeros(inputs, outputs);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..=bound);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo = self.bias[o] + dot(row, x);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.outputs];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients and, when `dx` is given, writes
    /// `W^T dy` into it.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseGrad, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let gw = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            axpy(g, x, gw);
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dy.iter().enumerate() {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                axpy(g, row, dx);
            }
        }
    }

    /// Forward pass over `batch` row-major inputs into `batch` row-major
    /// outputs; each row matches [`Dense::forward_into`] bit for bit.
    pub fn forward_batch(&self, x: &[f64], batch: usize, y: &mut [f64]) {
        let (ni, no) = (self.inputs, self.outputs);
        let mut s0 = 0;
        while s0 < batch {
            let cs = BLOCK.min(batch - s0);
            for o in 0..no {
                let row = &self.weights[o * ni..(o + 1) * ni];
                if cs == BLOCK {
                    let xs = core::array::from_fn(|s| &x[(s0 + s) * ni..(s0 + s + 1) * ni]);
                    let d = dot_block(row, xs);
                    for s in 0..BLOCK {
                        y[(s0 + s) * no + o] = self.bias[o] + d[s];
                    }
                } else {
                    for s in s0..s0 + cs {
                        y[s * no + o] = self.bias[o] + dot(row, &x[s * ni..(s + 1) * ni]);
                    }
                }
            }
            s0 += cs;
        }
    }

    /// Batched [`Dense::backward`]: accumulates the gradients of every row in
    /// row order and optionally writes each row's input gradient.
    pub fn backward_batch(&self, x: &[f64], dy: &[f64], batch: usize, grad: &mut DenseGrad, dx: Option<&mut [f64]>) {
        let (ni, no) = (self.inputs, self.outputs);
        for o in 0..no {
            let gw = &mut grad.weights[o * ni..(o + 1) * ni];
            let mut s0 = 0;
            while s0 < batch {
                let cs = BLOCK.min(batch - s0);
                if cs == BLOCK {
                    let g: [f64; BLOCK] = core::array::from_fn(|s| dy[(s0 + s) * no + o]);
                    let xs: [&[f64]; BLOCK] = core::array::from_fn(|s| &x[(s0 + s) * ni..(s0 + s + 1) * ni]);
                    for s in 0..BLOCK {
                        grad.bias[o] += g[s];
                    }
                    let (x0, x1, x2, x3) = (&xs[0][..ni], &xs[1][..ni], &xs[2][..ni], &xs[3][..ni]);
                    for k in 0..ni {
                        gw[k] = (((gw[k] + g[0] * x0[k]) + g[1] * x1[k]) + g[2] * x2[k]) + g[3] * x3[k];
                    }
                } else {
                    for s in s0..s0 + cs {
                        let g = dy[s * no + o];
                        grad.bias[o] += g;
                        axpy(g, &x[s * ni..(s + 1) * ni], gw);
                    }
                }
                s0 += cs;
            }
        }
        if let Some(dx) = dx {
            dx[..batch * ni].iter_mut().for_each(|v| *v = 0.0);
            for (sb, dx_block) in dx[..batch * ni].chunks_mut(BLOCK * ni).enumerate() {
                for o in 0..no {
                    let row = &self.weights[o * ni..(o + 1) * ni];
                    for (j, dx_row) in dx_block.chunks_exact_mut(ni).enumerate() {
                        axpy(dy[(sb * BLOCK + j) * no + o], row, dx_row);
                    }
                }
            }
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Four independent partial sums so the loop vectorizes. [`dot_block`]
/// reproduces this summation order exactly.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (ac, at) = a[..n].as_chunks::<LANES>();
    let (bc, bt) = b[..n].as_chunks::<LANES>();
    let mut acc = [0.0f64; LANES];
    for (x, y) in ac.iter().zip(bc) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in at.iter().zip(bt) {
        total += x * y;
    }
    total
}

const LANES: usize = 4;
const BLOCK: usize = 4;

/// `dot(w, xs[s])` for four inputs at once, sharing the loads of `w`.
#[inline]
fn dot_block(w: &[f64], xs: [&[f64]; BLOCK]) -> [f64; BLOCK] {
    let n = w.len();
    let (wc, wt) = w.as_chunks::<LANES>();
    let (c0, t0) = xs[0][..n].as_chunks::<LANES>();
    let (c1, t1) = xs[1][..n].as_chunks::<LANES>();
    let (c2, t2) = xs[2][..n].as_chunks::<LANES>();
    let (c3, t3) = xs[3][..n].as_chunks::<LANES>();
    let mut acc = [[0.0f64; LANES]; BLOCK];
    for ((((wk, x0), x1), x2), x3) in wc.iter().zip(c0).zip(c1).zip(c2).zip(c3) {
        for l in 0..LANES {
            acc[0][l] += wk[l] * x0[l];
            acc[1][l] += wk[l] * x1[l];
            acc[2][l] += wk[l] * x2[l];
            acc[3][l] += wk[l] * x3[l];
        }
    }
    let tails = [t0, t1, t2, t3];
    let mut out = [0.0; BLOCK];
    for s in 0..BLOCK {
        let a = &acc[s];
        let mut total = (a[0] + a[1]) + (a[2] + a[3]);
        for (x, y) in wt.iter().zip(tails[s]) {
            total += x * y;
        }
        out[s] = total;
    }
    out
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn for_layer(layer: &Dense) -> DenseGrad {
        DenseGrad {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|v| *v = 0.0);
        self.bias.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

/// Heavy-ball momentum: `v = m v - lr g; w += v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<DenseGrad>,
}

impl Momentum {
    pub fn new(learning_rate: f64, momentum: f64, layers: &[&Dense]) -> Momentum {
        Momentum {
            learning_rate,
            momentum,
            velocity: layers.iter().map(|l| DenseGrad::for_layer(l)).collect(),
        }
    }

    pub fn step(&mut self, layers: &mut [&mut Dense], grads: &[DenseGrad]) {
        for ((layer, grad), vel) in layers.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            update(&mut layer.weights, &grad.weights, &mut vel.weights, self.learning_rate, self.momentum);
            update(&mut layer.bias, &grad.bias, &mut vel.bias, self.learning_rate, self.momentum);
        }
    }
}

fn update(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, m: f64) {
    for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = m * *vi - lr * gi;
        *wi += *vi;
    }
}

/// Dense stack with leaky-rectifier activations between layers and a
/// linear final layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations cached by [`Mlp::forward_trace`]: `inputs[i]` feeds layer `i`,
/// `pre[i]` is its pre-activation.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Row-major activations of a whole batch, laid out like [`MlpTrace`].
#[derive(Debug, Clone, Default)]
pub struct BatchTrace {
    pub batch: usize,
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Mlp {
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn shapes_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = MlpTrace::default();
        self.forward_trace(x, &mut trace);
        trace.pre.pop().unwrap_or_default()
    }

    pub fn forward_trace(&self, x: &[f64], trace: &mut MlpTrace) {
        let n = self.layers.len();
        trace.inputs.resize(n, Vec::new());
        trace.pre.resize(n, Vec::new());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 {
                x.to_vec()
            } else {
                trace.pre[i - 1].iter().map(|&v| leaky_relu(v)).collect()
            };
            let mut pre = core::mem::take(&mut trace.pre[i]);
            pre.resize(layer.outputs, 0.0);
            layer.forward_into(&input, &mut pre);
            trace.inputs[i] = input;
            trace.pre[i] = pre;
        }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the final pre-activation);
    /// returns the gradient w.r.t. the network input.
    pub fn backward(&self, trace: &MlpTrace, d_out: &[f64], grads: &mut [DenseGrad]) -> Vec<f64> {
        self.backward_impl(trace, d_out, grads, true)
    }

    /// Like [`Mlp::backward`] but skips the gradient w.r.t. the input.
    pub fn accumulate_gradients(&self, trace: &MlpTrace, d_out: &[f64], grads: &mut [DenseGrad]) {
        self.backward_impl(trace, d_out, grads, false);
    }

    fn backward_impl(&self, trace: &MlpTrace, d_out: &[f64], grads: &mut [DenseGrad], input_grad: bool) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i == 0 && !input_grad {
                layer.backward(&trace.inputs[i], &delta, &mut grads[i], None);
                return Vec::new();
            }
            let mut dx = vec![0.0; layer.inputs];
            layer.backward(&trace.inputs[i], &delta, &mut grads[i], Some(&mut dx));
            if i > 0 {
                for (d, &p) in dx.iter_mut().zip(&trace.pre[i - 1]) {
                    *d *= leaky_relu_grad(p);
                }
            }
            delta = dx;
        }
        delta
    }

    /// Forward pass over `batch` row-major inputs; every row equals the
    /// single-row [`Mlp::forward_trace`] result.
    pub fn forward_batch(&self, x: &[f64], batch: usize, trace: &mut BatchTrace) {
        let n = self.layers.len();
        trace.batch = batch;
        trace.inputs.resize(n, Vec::new());
        trace.pre.resize(n, Vec::new());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut input = core::mem::take(&mut trace.inputs[i]);
            input.clear();
            if i == 0 {
                input.extend_from_slice(&x[..batch * layer.inputs]);
            } else {
                input.extend(trace.pre[i - 1].iter().map(|&v| leaky_relu(v)));
            }
            let mut pre = core::mem::take(&mut trace.pre[i]);
            pre.resize(batch * layer.outputs, 0.0);
            layer.forward_batch(&input, batch, &mut pre);
            trace.inputs[i] = input;
            trace.pre[i] = pre;
        }
    }

    /// Accumulates parameter gradients for a batch given row-major `d_out`;
    /// skips the input gradient.
    pub fn accumulate_batch_gradients(&self, trace: &BatchTrace, d_out: &[f64], grads: &mut [DenseGrad]) {
        let batch = trace.batch;
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i == 0 {
                layer.backward_batch(&trace.inputs[0], &delta, batch, &mut grads[0], None);
                break;
            }
            let mut dx = vec![0.0; batch * layer.inputs];
            layer.backward_batch(&trace.inputs[i], &delta, batch, &mut grads[i], Some(&mut dx));
            for (d, &p) in dx.iter_mut().zip(&trace.pre[i - 1]) {
                *d *= leaky_relu_grad(p);
            }
            delta = dx;
        }
    }

    pub fn zero_grads(&self) -> Vec<DenseGrad> {
        self.layers.iter().map(DenseGrad::for_layer).collect()
    }
}
