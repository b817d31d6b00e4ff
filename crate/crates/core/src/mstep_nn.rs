//! Kernel refit with an antisymmetrized multilayer perceptron.
//!
//! A ReLU network `g_θ(x, y)` defines `f(x, y) = g_θ(x, y) − g_θ(y, x)`.
//! Training pairs are drawn from `Q̄` and the loss
//!
//! ```text
//! Σ_s −log σ(f(x_s, y_s)) + |θ|² / Σ_ij w_ij
//! ```
//!
//! is minimized with Adam. The trained `f` is sampled back onto the
//! Chebyshev grid so downstream code sees an ordinary [`Kernel`].

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chebkit::ChebGrid;
use crate::em::QGrid;
use crate::error::{Error, Result};
use crate::model::{sigmoid, Kernel};

const MAX_DEFAULT_SAMPLES: usize = 1_000_000;
const SAMPLES_PER_MATCH: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub hidden: Vec<usize>,
    /// Training pairs per refit; `None` means 50 per match, capped at 10⁶.
    pub samples: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            samples: None,
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.samples == Some(0) {
            return Err(Error::InvalidOption("sample count must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidOption("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidOption("batch size and epochs must be positive".into()));
        }
        Ok(())
    }

    fn sample_count(&self, total_matches: f64) -> usize {
        self.samples.unwrap_or_else(|| {
            ((SAMPLES_PER_MATCH as f64 * total_matches).ceil() as usize).clamp(1, MAX_DEFAULT_SAMPLES)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out × in`.
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

/// Fully connected ReLU network with two inputs and one output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Gradients laid out like [`Mlp::to_flat`].
pub type FlatGrad = Vec<f64>;

impl Mlp {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn new(hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![2];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|io| {
                let bound = 1.0 / (io[0] as f64).sqrt();
                let weight = DMatrix::from_fn(io[1], io[0], |_, _| rng.gen_range(-bound..bound));
                let bias = DVector::from_fn(io[1], |_, _| rng.gen_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.ncols()];
        w.extend(self.layers.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `|θ|²`.
    pub fn squared_norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum()
    }

    /// `|θ|² / Σ w`.
    pub fn regularizer(&self, total_matches: f64) -> f64 {
        self.squared_norm() / total_matches
    }

    /// Raw network output `g_θ(x, y)`.
    pub fn raw(&self, x: f64, y: f64) -> f64 {
        let input = DMatrix::from_column_slice(2, 1, &[x, y]);
        self.forward_batch(&input).0[(0, 0)]
    }

    /// `f(x, y) = g_θ(x, y) − g_θ(y, x)`.
    pub fn log_odds(&self, x: f64, y: f64) -> f64 {
        let input = DMatrix::from_column_slice(2, 2, &[x, y, y, x]);
        let out = self.forward_batch(&input).0;
        out[(0, 0)] - out[(0, 1)]
    }

    /// Forward pass on columns of `input`; returns the output and every
    /// layer's post-activation input for backprop.
    fn forward_batch(&self, input: &DMatrix<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = input.clone();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if idx < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(a);
            a = z;
        }
        (a, acts)
    }

    /// Backprop of `d_out` (1 × B) into gradients laid out like `to_flat`.
    fn backward(&self, acts: &[DMatrix<f64>], d_out: DMatrix<f64>) -> FlatGrad {
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let a = &acts[idx];
            let gw = &delta * a.transpose();
            let gb = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            grads.push((gw, gb));
            if idx > 0 {
                let mut back = layer.weight.transpose() * &delta;
                // a is the ReLU output of the previous layer
                back.zip_apply(a, |d, act| {
                    if act <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        flat
    }

    /// Data term `Σ_s −log σ(f(x_s, y_s))` and its gradient.
    fn data_loss_and_grad(&self, pairs: &[(f64, f64)]) -> (f64, FlatGrad) {
        let b = pairs.len();
        let mut input = DMatrix::zeros(2, 2 * b);
        for (s, &(x, y)) in pairs.iter().enumerate() {
            input[(0, s)] = x;
            input[(1, s)] = y;
            input[(0, b + s)] = y;
            input[(1, b + s)] = x;
        }
        let (out, acts) = self.forward_batch(&input);
        let mut d_out = DMatrix::zeros(1, 2 * b);
        let mut loss = 0.0;
        for s in 0..b {
            let f = out[(0, s)] - out[(0, b + s)];
            loss += softplus(-f);
            let dl_df = -sigmoid(-f);
            d_out[(0, s)] = dl_df;
            d_out[(0, b + s)] = -dl_df;
        }
        (loss, self.backward(&acts, d_out))
    }

    /// Full loss `Σ_s −log σ(f(x_s, y_s)) + |θ|² / total_matches` and its
    /// gradient.
    pub fn loss_and_grad(&self, pairs: &[(f64, f64)], total_matches: f64) -> (f64, FlatGrad) {
        let (data, mut grad) = self.data_loss_and_grad(pairs);
        let theta = self.to_flat();
        for (g, t) in grad.iter_mut().zip(&theta) {
            *g += 2.0 * t / total_matches;
        }
        (data + self.regularizer(total_matches), grad)
    }

    /// Trains on pairs drawn from `q` with Adam, continuing from the
    /// current weights.
    pub fn train_on_q(&mut self, q: &QGrid, grid: &ChebGrid, opts: &TrainOptions) -> Result<TrainReport> {
        opts.validate()?;
        let total = q.total_weight();
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        let count = opts.sample_count(total);
        let mut samples = sample_pairs(q, grid, count, opts.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
        let reg_scale = 1.0 / (total * count as f64);

        let n = self.param_count();
        let mut adam = Adam::new(n, opts);
        let mut epoch_losses = Vec::with_capacity(opts.epochs);
        for epoch in 0..opts.epochs {
            samples.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for batch in samples.chunks(opts.batch_size) {
                let (data, mut grad) = self.data_loss_and_grad(batch);
                let inv_b = 1.0 / batch.len() as f64;
                let mut theta = self.to_flat();
                let mut sq = 0.0;
                for (g, t) in grad.iter_mut().zip(&theta) {
                    *g = *g * inv_b + 2.0 * t * reg_scale;
                    sq += t * t;
                }
                let loss = data * inv_b + sq * reg_scale;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { epoch, loss });
                }
                epoch_loss += loss;
                batches += 1;
                adam.step(&mut theta, &grad);
                self.set_flat(&theta)?;
            }
            epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(TrainReport {
            samples: count,
            epoch_losses,
        })
    }

    /// The trained log-odds sampled at node pairs.
    pub fn kernel_on(&self, grid: &ChebGrid) -> Result<Kernel> {
        let l = grid.order();
        let x = grid.nodes();
        let mut input = DMatrix::zeros(2, l * l);
        for k in 0..l {
            for m in 0..l {
                input[(0, k * l + m)] = x[k];
                input[(1, k * l + m)] = x[m];
            }
        }
        let out = self.forward_batch(&input).0;
        let f = DMatrix::from_fn(l, l, |k, m| out[(0, k * l + m)] - out[(0, m * l + k)]);
        Kernel::from_log_odds(grid.clone(), f)
    }

    /// Text form: a `# mlp` header listing layer widths, then one parameter
    /// per line in `to_flat` order.
    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths().iter().map(|w| w.to_string()).collect();
        let mut out = format!("# mlp {}\n", widths.join(" "));
        for v in self.to_flat() {
            let _ = writeln!(out, "{v:e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# mlp "))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "missing `# mlp` header".into(),
            })?;
        let widths = header
            .split_whitespace()
            .map(|w| w.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?;
        if widths.len() < 2 || widths[0] != 2 || *widths.last().unwrap() != 1 {
            return Err(Error::Parse {
                line: 1,
                message: "architecture must map 2 inputs to 1 output".into(),
            });
        }
        let mut net = Mlp::new(&widths[1..widths.len() - 1], 0);
        let flat = lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        net.set_flat(&flat)?;
        Ok(net)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub samples: usize,
    /// Mean per-sample loss (data plus scaled regularizer) of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, opts: &TrainOptions) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: opts.learning_rate,
            beta1: opts.beta1,
            beta2: opts.beta2,
            eps: opts.epsilon,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Boundaries of the cells around each node: midpoints between neighbours,
/// closed off by 0 and 1.
pub fn cell_edges(grid: &ChebGrid) -> Vec<f64> {
    let x = grid.nodes();
    let mut edges = Vec::with_capacity(x.len() + 1);
    edges.push(0.0);
    edges.extend(x.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(1.0);
    edges
}

/// Draws `count` pairs with density proportional to `Q̄`: a node cell is
/// chosen with probability proportional to its quadrature mass and the
/// point is placed uniformly inside it.
pub fn sample_pairs(q: &QGrid, grid: &ChebGrid, count: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let l = grid.order();
    if q.order() != l {
        return Err(Error::LengthMismatch {
            expected: l,
            found: q.order(),
        });
    }
    let mass = q.cell_weights(grid);
    if mass.iter().any(|m| *m < 0.0 || !m.is_finite()) || !(mass.sum() > 0.0) {
        return Err(Error::ZeroMass);
    }
    // row-major over (k, m)
    let weights: Vec<f64> = (0..l).flat_map(|k| (0..l).map(move |m| (k, m))).map(|(k, m)| mass[(k, m)]).collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::ZeroMass)?;
    let edges = cell_edges(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let cell = dist.sample(&mut rng);
            let (k, m) = (cell / l, cell % l);
            let x = edges[k] + rng.gen::<f64>() * (edges[k + 1] - edges[k]);
            let y = edges[m] + rng.gen::<f64>() * (edges[m + 1] - edges[m]);
            (x, y)
        })
        .collect())
}

/// One-shot refit from a fresh network.
pub fn fit_kernel_nn(q: &QGrid, opts: &TrainOptions, grid: &ChebGrid) -> Result<Kernel> {
    let mut net = Mlp::new(&opts.hidden, opts.seed);
    net.train_on_q(q, grid, opts)?;
    net.kernel_on(grid)
}
