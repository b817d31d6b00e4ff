//! Expectation–maximization over the kernel.
//!
//! Each iteration runs belief propagation under the current kernel,
//! accumulates `Q̄(x, y) = Σ_ij w_ij μ_ij(x, y)` from the pair joints, and
//! hands `Q̄` to the selected M-step backend.

use nalgebra::DMatrix;

use crate::bp::{BpOptions, FactorGraph, MessageSet, SkillPosterior};
use crate::chebkit::{ChebGrid, DEFAULT_ORDER};
use crate::error::{Error, Result};
use crate::model::{Kernel, WinMatrix, DEFAULT_SLOPE};
use crate::mstep_cheb::{ChebPrior, MonotoneParams, NewtonOptions, DEFAULT_P};
use crate::mstep_nn::{Mlp, TrainOptions};

/// Match-weighted sum of pair joints on the node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    values: DMatrix<f64>,
    total_weight: f64,
}

impl QGrid {
    pub fn new(values: DMatrix<f64>, total_weight: f64) -> Self {
        Self {
            values,
            total_weight,
        }
    }

    pub fn zeros(order: usize) -> Self {
        Self::new(DMatrix::zeros(order, order), 0.0)
    }

    pub fn order(&self) -> usize {
        self.values.nrows()
    }

    /// `Q̄(x_k, x_m)`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `Σ_ij w_ij` of the data that produced this grid.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Quadrature mass of each node cell, `q_k q_m Q̄(x_k, x_m)`.
    pub fn cell_weights(&self, grid: &ChebGrid) -> DMatrix<f64> {
        let q = grid.weights();
        DMatrix::from_fn(self.order(), self.order(), |k, m| q[k] * q[m] * self.values[(k, m)])
    }

    /// `∬ Q̄`.
    pub fn integral(&self, grid: &ChebGrid) -> f64 {
        self.cell_weights(grid).sum()
    }

    /// `∬ Q̄ log b`.
    pub fn expected_log_likelihood(&self, kernel: &Kernel) -> f64 {
        self.cell_weights(kernel.grid())
            .component_mul(kernel.log_values())
            .sum()
    }
}

/// `Q̄` from a belief-propagation posterior. Pairs are visited in sorted
/// order, so the floating-point sum is reproducible.
pub fn accumulate_from_posterior(posterior: &SkillPosterior) -> QGrid {
    let l = posterior.grid().order();
    let mut values = DMatrix::zeros(l, l);
    let mut total = 0.0;
    posterior.for_each_joint(|pair, joint| {
        let (wij, wji) = (pair.wins_ij as f64, pair.wins_ji as f64);
        total += wij + wji;
        for a in 0..l {
            for b in 0..l {
                // μ_ji(x, y) = μ_ij(y, x)
                values[(a, b)] += wij * joint[(a, b)] + wji * joint[(b, a)];
            }
        }
    });
    QGrid::new(values, total)
}

/// `Q̄` for messages computed on `(w, kernel)`.
pub fn accumulate_q(w: &WinMatrix, msgs: &MessageSet, kernel: &Kernel) -> Result<QGrid> {
    let graph = FactorGraph::new(w, kernel);
    Ok(accumulate_from_posterior(&graph.posterior(msgs, kernel)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Chebyshev,
    Neural,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chebyshev" | "cheb" => Ok(Self::Chebyshev),
            "neural" | "nn" => Ok(Self::Neural),
            other => Err(Error::InvalidOption(format!("unknown backend {other:?}"))),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Chebyshev => "chebyshev",
            Self::Neural => "neural",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub backend: BackendKind,
    pub grid_order: usize,
    /// Slope of the logistic kernel used as the initial guess.
    pub initial_slope: f64,
    /// Stop once no node value of `b` moves by more than this.
    pub tol: f64,
    pub max_iters: usize,
    pub bp: BpOptions,
    pub p: u32,
    pub newton: NewtonOptions,
    pub nn: TrainOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            backend: BackendKind::Chebyshev,
            grid_order: DEFAULT_ORDER,
            initial_slope: DEFAULT_SLOPE,
            tol: 1e-3,
            max_iters: 50,
            bp: BpOptions::default(),
            p: DEFAULT_P,
            newton: NewtonOptions::default(),
            nn: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub kernel: Kernel,
    pub iteration: usize,
    /// Bethe estimate of `log P_b(w)` plus the backend's log prior, one
    /// entry per E-step.
    pub bound_trace: Vec<f64>,
    /// `∬ Q̄ log b + R[b]` at each E-step, before the M-step moves `b`.
    pub surrogate_trace: Vec<f64>,
    /// Largest node change of `b` in the last M-step.
    pub kernel_delta: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub kernel: Kernel,
    pub posterior: SkillPosterior,
    pub state: EmState,
    /// Final Chebyshev parameters, when that backend was used.
    pub monotone_params: Option<MonotoneParams>,
    /// Final network, when the neural backend was used.
    pub network: Option<Mlp>,
    /// `Q̄` from the last E-step.
    pub q: QGrid,
}

enum Backend {
    Chebyshev {
        prior: ChebPrior,
        params: MonotoneParams,
        newton: NewtonOptions,
    },
    Neural {
        net: Mlp,
        opts: TrainOptions,
        last_samples: usize,
    },
}

impl Backend {
    fn new(opts: &EmOptions, grid: &ChebGrid, initial: &Kernel) -> Result<Self> {
        Ok(match opts.backend {
            BackendKind::Chebyshev => Backend::Chebyshev {
                prior: ChebPrior::new(grid.clone(), opts.p)?,
                params: MonotoneParams::fit_to_log_odds(initial.log_odds(), opts.p),
                newton: opts.newton,
            },
            BackendKind::Neural => Backend::Neural {
                net: Mlp::new(&opts.nn.hidden, opts.nn.seed),
                opts: opts.nn.clone(),
                last_samples: 0,
            },
        })
    }

    fn log_prior(&self) -> f64 {
        match self {
            Backend::Chebyshev { prior, params, .. } => prior.penalty_of(params),
            Backend::Neural {
                net, last_samples, ..
            } => {
                if *last_samples == 0 {
                    0.0
                } else {
                    -net.squared_norm() / *last_samples as f64
                }
            }
        }
    }

    fn refit(&mut self, q: &QGrid, grid: &ChebGrid, iteration: usize) -> Result<Kernel> {
        match self {
            Backend::Chebyshev {
                prior,
                params,
                newton,
            } => {
                let fit = prior.fit(q, params, newton)?;
                *params = fit.params;
                Ok(fit.kernel)
            }
            Backend::Neural {
                net,
                opts,
                last_samples,
            } => {
                let mut run = opts.clone();
                run.seed = opts.seed.wrapping_add(iteration as u64);
                let report = net.train_on_q(q, grid, &run)?;
                *last_samples = report.samples;
                net.kernel_on(grid)
            }
        }
    }
}

/// Alternates belief propagation and kernel refits until the kernel stops
/// moving or `max_iters` is reached.
pub fn em_fit(w: &WinMatrix, opts: &EmOptions) -> Result<EmFit> {
    opts.bp.validate()?;
    let grid = ChebGrid::new(opts.grid_order)?;
    let initial = Kernel::logistic(grid.clone(), opts.initial_slope);
    let mut backend = Backend::new(opts, &grid, &initial)?;
    let mut kernel = initial;
    let mut state = EmState {
        kernel: kernel.clone(),
        iteration: 0,
        bound_trace: Vec::new(),
        surrogate_trace: Vec::new(),
        kernel_delta: 0.0,
        converged: true,
    };

    let wrap = |iteration: usize| move |e: Error| Error::Em {
        iteration,
        source: Box::new(e),
    };

    if w.is_empty() {
        let graph = FactorGraph::new(w, &kernel);
        let msgs = graph.run(&opts.bp, None)?;
        let posterior = graph.posterior(&msgs, &kernel)?;
        return Ok(finish(kernel, posterior, state, backend, QGrid::zeros(grid.order())));
    }

    state.converged = false;
    let mut messages: Option<MessageSet> = None;
    let mut q = QGrid::zeros(grid.order());
    for iteration in 1..=opts.max_iters {
        let graph = FactorGraph::new(w, &kernel);
        let msgs = graph.run(&opts.bp, messages.as_ref()).map_err(wrap(iteration))?;
        let posterior = graph.posterior(&msgs, &kernel).map_err(wrap(iteration))?;
        q = accumulate_from_posterior(&posterior);
        let prior = backend.log_prior();
        state
            .bound_trace
            .push(posterior.log_evidence() + prior);
        state
            .surrogate_trace
            .push(q.expected_log_likelihood(&kernel) + prior);
        messages = Some(msgs);

        let next = backend.refit(&q, &grid, iteration).map_err(wrap(iteration))?;
        state.kernel_delta = next.max_abs_diff(&kernel);
        state.iteration = iteration;
        kernel = next;
        if state.kernel_delta < opts.tol {
            state.converged = true;
            break;
        }
    }

    let graph = FactorGraph::new(w, &kernel);
    let msgs = graph.run(&opts.bp, messages.as_ref())?;
    let posterior = graph.posterior(&msgs, &kernel)?;
    state.kernel = kernel.clone();
    Ok(finish(kernel, posterior, state, backend, q))
}

fn finish(kernel: Kernel, posterior: SkillPosterior, mut state: EmState, backend: Backend, q: QGrid) -> EmFit {
    state.kernel = kernel.clone();
    let (monotone_params, network) = match backend {
        Backend::Chebyshev { params, .. } => (Some(params), None),
        Backend::Neural { net, .. } => (None, Some(net)),
    };
    EmFit {
        kernel,
        posterior,
        state,
        monotone_params,
        network,
        q,
    }
}

/// Errors between two kernels over the node cells whose `Q̄` mass is at
/// least `threshold` times the largest cell mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelErrors {
    /// Unweighted mean of `|b₁ − b₂|` over the selected cells.
    pub mean_abs: f64,
    /// Mass-weighted root mean square of `b₁ − b₂` over the selected cells.
    pub weighted_rms: f64,
    pub cells: usize,
}

pub fn masked_kernel_errors(a: &Kernel, b: &Kernel, q: &QGrid, threshold: f64) -> KernelErrors {
    let mass = q.cell_weights(a.grid());
    let cutoff = threshold * mass.max();
    let (mut abs_sum, mut sq_sum, mut w_sum, mut cells) = (0.0, 0.0, 0.0, 0usize);
    for ((m, x), y) in mass.iter().zip(a.values().iter()).zip(b.values().iter()) {
        if *m >= cutoff && *m > 0.0 {
            let d = x - y;
            abs_sum += d.abs();
            sq_sum += m * d * d;
            w_sum += m;
            cells += 1;
        }
    }
    if cells == 0 {
        return KernelErrors {
            mean_abs: 0.0,
            weighted_rms: 0.0,
            cells,
        };
    }
    KernelErrors {
        mean_abs: abs_sum / cells as f64,
        weighted_rms: (sq_sum / w_sum).sqrt(),
        cells,
    }
}
