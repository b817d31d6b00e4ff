//! Kernel refit under the monotone Chebyshev prior.
//!
//! The log-odds at node pairs are parameterized by an unconstrained upper
//! triangular array `g`:
//!
//! ```text
//! A(k, m)      = ( Σ_{k ≤ i < j ≤ m} |g_ij|^p )^{1/p}       (k < m)
//! f(x_k, x_m)  = −A(k, m),   f(x_m, x_k) = A(k, m),   f(x_k, x_k) = 0
//! ```
//!
//! which is exactly antisymmetric and non-decreasing in the first argument.
//! The refit maximizes `∬ Q̄ log σ(f) + R[f]` with a quadrature sum for the
//! integral and `R[f] = −(1/64) Σ ((α² + β²) c_αβ)²` on the Chebyshev
//! coefficients of `f`. Since `R` is a quadratic form in the upper-triangle
//! values `A`, its Hessian is assembled once per grid.
//!
//! Derivatives with respect to `g` go through `A` by the chain rule. Every
//! `g_ij` feeds exactly the triangles `(k, m)` with `k ≤ i` and `m ≥ j`, so
//! the sums over triangles reduce to 2D dominance prefix sums.

use nalgebra::{DMatrix, DVector};

use crate::chebkit::ChebGrid;
use crate::em::QGrid;
use crate::error::{Error, Result};
use crate::model::{log_sigmoid, sigmoid, Kernel};

/// Exponent of the p-norm in the monotone parameterization.
pub const DEFAULT_P: u32 = 8;

/// Overall scale of the smoothness penalty.
pub const PENALTY_SCALE: f64 = 1.0 / 64.0;

/// Triangle norms below this are treated as exactly zero in derivatives.
const TINY_NORM: f64 = 1e-12;

/// Smallest magnitude given to `g_ij` by the warm start.
const WARM_START_FLOOR: f64 = 1e-3;

/// Upper-triangular parameters `g_ij` (`i < j`) of the monotone log-odds.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneParams {
    order: usize,
    p: u32,
    g: DMatrix<f64>,
}

impl MonotoneParams {
    pub fn zeros(order: usize, p: u32) -> Self {
        Self {
            order,
            p,
            g: DMatrix::zeros(order, order),
        }
    }

    /// Parameters from a full `L × L` array; only the strict upper triangle
    /// is read.
    pub fn from_matrix(g: DMatrix<f64>, p: u32) -> Self {
        let order = g.nrows();
        let g = DMatrix::from_fn(order, order, |i, j| if i < j { g[(i, j)] } else { 0.0 });
        Self { order, p, g }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.order * (self.order - 1) / 2,
            upper_pairs(self.order).map(|(i, j)| self.g[(i, j)]),
        )
    }

    fn from_vector(order: usize, p: u32, v: &DVector<f64>) -> Self {
        let mut g = DMatrix::zeros(order, order);
        for (x, (i, j)) in v.iter().zip(upper_pairs(order)) {
            g[(i, j)] = *x;
        }
        Self { order, p, g }
    }

    /// Warm start reproducing `log_odds` where it is monotone: the p-th
    /// powers of the target triangle norms are differenced back into `|g|^p`
    /// by inclusion–exclusion and negative increments are clipped.
    pub fn fit_to_log_odds(log_odds: &DMatrix<f64>, p: u32) -> Self {
        let l = log_odds.nrows();
        let pf = p as f64;
        let big = DMatrix::from_fn(l, l, |k, m| {
            if k < m {
                (-log_odds[(k, m)]).max(0.0).powf(pf)
            } else {
                0.0
            }
        });
        let at = |k: usize, m: usize| if k < m { big[(k, m)] } else { 0.0 };
        let g = DMatrix::from_fn(l, l, |i, j| {
            if i >= j {
                return 0.0;
            }
            let t = at(i, j) - at(i + 1, j) - at(i, j - 1) + if i + 1 < j { at(i + 1, j - 1) } else { 0.0 };
            t.max(0.0).powf(1.0 / pf).max(WARM_START_FLOOR)
        });
        Self { order: l, p, g }
    }

    pub fn log_odds(&self) -> DMatrix<f64> {
        log_odds_from_norms(&self.triangle_norms())
    }

    /// `A(k, m)` for `k < m`, zero elsewhere.
    pub fn triangle_norms(&self) -> DMatrix<f64> {
        let l = self.order;
        let p = self.p as i32;
        let mut big = DMatrix::<f64>::zeros(l, l);
        for span in 1..l {
            for k in 0..l - span {
                let m = k + span;
                let inner = if span > 1 { big[(k + 1, m - 1)] } else { 0.0 };
                big[(k, m)] = self.g[(k, m)].abs().powi(p) + big[(k + 1, m)] + big[(k, m - 1)] - inner;
            }
        }
        let inv = 1.0 / self.p as f64;
        big.map(|v| if v > 0.0 { v.powf(inv) } else { 0.0 })
    }
}

fn upper_pairs(order: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..order).flat_map(move |i| (i + 1..order).map(move |j| (i, j)))
}

fn log_odds_from_norms(norms: &DMatrix<f64>) -> DMatrix<f64> {
    let l = norms.nrows();
    DMatrix::from_fn(l, l, |k, m| {
        if k < m {
            -norms[(k, m)]
        } else if k > m {
            norms[(m, k)]
        } else {
            0.0
        }
    })
}

/// `f(x_k, x_m)` at node pairs for the given parameters.
pub fn monotone_values(params: &MonotoneParams, grid: &ChebGrid) -> Result<DMatrix<f64>> {
    if params.order() != grid.order() {
        return Err(Error::LengthMismatch {
            expected: grid.order(),
            found: params.order(),
        });
    }
    Ok(params.log_odds())
}

/// `λ_αβ = (1/64)(α² + β²)²`.
pub fn penalty_weights(order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(order, order, |a, b| {
        let s = (a * a + b * b) as f64;
        PENALTY_SCALE * s * s
    })
}

/// `R[f] = −(1/64) Σ ((α² + β²) c_αβ)²` from node values of `f`.
pub fn penalty(f_values: &DMatrix<f64>, grid: &ChebGrid) -> Result<f64> {
    let c = grid.vals_to_coeffs_2d(f_values)?.coeffs;
    let lambda = penalty_weights(grid.order());
    Ok(-c.component_mul(&c).component_mul(&lambda).sum())
}

/// Dominance prefix sum `out(i, j) = Σ_{k ≤ i, m ≥ j} a(k, m)`.
fn dominance_sum(a: &mut DMatrix<f64>) {
    let l = a.nrows();
    for k in 1..l {
        for m in 0..l {
            a[(k, m)] += a[(k - 1, m)];
        }
    }
    for m in (0..l.saturating_sub(1)).rev() {
        for k in 0..l {
            a[(k, m)] += a[(k, m + 1)];
        }
    }
}

/// Optimizer settings for the Newton refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Stop when the largest gradient component falls below
    /// `grad_tol · (1 + ∬ Q̄)`.
    pub grad_tol: f64,
    /// Stop when an accepted step improves the objective by less than this
    /// relative amount.
    pub rel_improvement: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-7,
            rel_improvement: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChebFit {
    pub kernel: Kernel,
    pub params: MonotoneParams,
    /// `∬ Q̄ log σ(f) + R[f]` at the returned parameters.
    pub objective: f64,
    /// `R[f]` alone.
    pub penalty: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective after each accepted step, starting from the initial point.
    pub trace: Vec<f64>,
}

/// Grid-dependent pieces of the Chebyshev prior, reusable across refits.
#[derive(Debug, Clone)]
pub struct ChebPrior {
    grid: ChebGrid,
    p: u32,
    pairs: Vec<(usize, usize)>,
    /// Hessian of `R` with respect to the upper-triangle log-odds magnitudes.
    penalty_hessian: DMatrix<f64>,
}

struct Evaluation {
    value: f64,
    penalty: f64,
    grad: DVector<f64>,
    /// Exact Hessian and its Gauss–Newton part `Jᵀ H_u J`, which drops the
    /// curvature of `u(g)` and is negative semidefinite.
    hessian: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl ChebPrior {
    pub fn new(grid: ChebGrid, p: u32) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidOption("the Newton refit needs p ≥ 2".into()));
        }
        let l = grid.order();
        let pairs: Vec<(usize, usize)> = upper_pairs(l).collect();
        let mcoef = grid.coeff_matrix();
        let lambda = penalty_weights(l);
        // column (k, m): √λ ∘ ∂c/∂A(k, m), with ∂c_αβ/∂A = −M_αk M_βm + M_αm M_βk
        let mut t = DMatrix::<f64>::zeros(l * l, pairs.len());
        for (v, &(k, m)) in pairs.iter().enumerate() {
            for a in 0..l {
                for b in 0..l {
                    let d = -mcoef[(a, k)] * mcoef[(b, m)] + mcoef[(a, m)] * mcoef[(b, k)];
                    t[(a * l + b, v)] = lambda[(a, b)].sqrt() * d;
                }
            }
        }
        let penalty_hessian = -2.0 * t.transpose() * &t;
        Ok(Self {
            grid,
            p,
            pairs,
            penalty_hessian,
        })
    }

    pub fn grid(&self) -> &ChebGrid {
        &self.grid
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    fn norms_vector(&self, params: &MonotoneParams) -> DVector<f64> {
        let norms = params.triangle_norms();
        DVector::from_iterator(self.pairs.len(), self.pairs.iter().map(|&(k, m)| norms[(k, m)]))
    }

    /// `R[f]` for the parameters, via the precomputed quadratic form.
    pub fn penalty_of(&self, params: &MonotoneParams) -> f64 {
        let u = self.norms_vector(params);
        0.5 * u.dot(&(&self.penalty_hessian * &u))
    }

    /// `∬ Q̄ log σ(f) + R[f]` for the parameters.
    pub fn objective(&self, q: &QGrid, params: &MonotoneParams) -> f64 {
        let w = q.cell_weights(&self.grid);
        self.evaluate(&w, &params.to_vector(), false).value
    }

    /// Gradient of the objective with respect to the upper-triangle `g`.
    pub fn gradient(&self, q: &QGrid, params: &MonotoneParams) -> DMatrix<f64> {
        let w = q.cell_weights(&self.grid);
        let e = self.evaluate(&w, &params.to_vector(), false);
        MonotoneParams::from_vector(self.grid.order(), self.p, &e.grad).g
    }

    /// Hessian with respect to `g`, variables in row-major upper order.
    pub fn hessian(&self, q: &QGrid, params: &MonotoneParams) -> DMatrix<f64> {
        let w = q.cell_weights(&self.grid);
        self.evaluate(&w, &params.to_vector(), true)
            .hessian
            .expect("requested")
            .0
    }

    fn evaluate(&self, w: &DMatrix<f64>, gv: &DVector<f64>, want_hessian: bool) -> Evaluation {
        let l = self.grid.order();
        let p = self.p as f64;
        let pi = self.p as i32;
        let nv = self.pairs.len();
        let params = MonotoneParams::from_vector(l, self.p, gv);
        let u = self.norms_vector(&params);

        let pen_grad = &self.penalty_hessian * &u;
        let penalty = 0.5 * u.dot(&pen_grad);
        let mut value = penalty;
        for k in 0..l {
            value -= w[(k, k)] * std::f64::consts::LN_2;
        }
        let mut gamma = DVector::zeros(nv);
        let mut curv = DVector::zeros(nv);
        let mut a1 = DMatrix::zeros(l, l);
        let mut a2 = DMatrix::zeros(l, l);
        for (v, &(k, m)) in self.pairs.iter().enumerate() {
            let uv = u[v];
            let (wkm, wmk) = (w[(k, m)], w[(m, k)]);
            value += wkm * log_sigmoid(-uv) + wmk * log_sigmoid(uv);
            let (sp, sm) = (sigmoid(uv), sigmoid(-uv));
            gamma[v] = -wkm * sp + wmk * sm + pen_grad[v];
            curv[v] = -(wkm + wmk) * sp * sm;
            if uv > TINY_NORM {
                let r = uv.powf(1.0 - p);
                a1[(k, m)] = gamma[v] * r;
                a2[(k, m)] = gamma[v] * (1.0 - p) * uv.powf(1.0 - 2.0 * p);
            }
        }
        dominance_sum(&mut a1);
        let phi = a1;

        let s: Vec<f64> = gv.iter().map(|g| g.abs().powi(pi - 1) * g.signum()).collect();
        let grad = DVector::from_iterator(
            nv,
            self.pairs.iter().enumerate().map(|(v, &(i, j))| s[v] * phi[(i, j)]),
        );

        let hessian = want_hessian.then(|| {
            dominance_sum(&mut a2);
            let big_gamma = a2;
            let r: Vec<f64> = u
                .iter()
                .map(|&uv| if uv > TINY_NORM { uv.powf(1.0 - p) } else { 0.0 })
                .collect();
            let mut ht = self.penalty_hessian.clone();
            for v in 0..nv {
                ht[(v, v)] += curv[v];
            }
            for a in 0..nv {
                for b in 0..nv {
                    ht[(a, b)] *= r[a] * r[b];
                }
            }
            // Y[v, b] = Σ_{v' ∋ b} ht[v, v']
            let mut y = DMatrix::zeros(nv, nv);
            let mut scratch = DMatrix::zeros(l, l);
            for v in 0..nv {
                scratch.fill(0.0);
                for (vp, &(k, m)) in self.pairs.iter().enumerate() {
                    scratch[(k, m)] = ht[(v, vp)];
                }
                dominance_sum(&mut scratch);
                for (b, &(i, j)) in self.pairs.iter().enumerate() {
                    y[(v, b)] = scratch[(i, j)];
                }
            }
            // X[a, b] = Σ_{v ∋ a} Y[v, b]
            let mut x = DMatrix::zeros(nv, nv);
            for b in 0..nv {
                scratch.fill(0.0);
                for (v, &(k, m)) in self.pairs.iter().enumerate() {
                    scratch[(k, m)] = y[(v, b)];
                }
                dominance_sum(&mut scratch);
                for (a, &(i, j)) in self.pairs.iter().enumerate() {
                    x[(a, b)] = scratch[(i, j)];
                }
            }
            let mut gn = x;
            for a in 0..nv {
                for b in 0..nv {
                    gn[(a, b)] *= s[a] * s[b];
                }
            }
            let mut h = gn.clone();
            for (a, &(i, j)) in self.pairs.iter().enumerate() {
                for (b, &(i2, j2)) in self.pairs.iter().enumerate() {
                    h[(a, b)] += s[a] * s[b] * big_gamma[(i.min(i2), j.max(j2))];
                }
                h[(a, a)] += (p - 1.0) * gv[a].abs().powi(pi - 2) * phi[(i, j)];
            }
            (h, gn)
        });

        Evaluation {
            value,
            penalty,
            grad,
            hessian,
        }
    }

    /// Maximizes the penalized quadrature objective over `g` with a
    /// backtracking line search. Each step tries the exact Newton direction
    /// and falls back to Gauss–Newton with Levenberg damping when the
    /// Hessian is not negative definite; heavy damping tends to gradient
    /// ascent.
    pub fn fit(&self, q: &QGrid, init: &MonotoneParams, opts: &NewtonOptions) -> Result<ChebFit> {
        let l = self.grid.order();
        if init.order() != l || q.order() != l {
            return Err(Error::LengthMismatch {
                expected: l,
                found: if init.order() != l { init.order() } else { q.order() },
            });
        }
        let w = q.cell_weights(&self.grid);
        let scale = 1.0 + q.integral(&self.grid).abs();
        let mut g = init.to_vector();
        let mut cur = self.evaluate(&w, &g, true);
        let mut trace = vec![cur.value];
        let mut iterations = 0;
        let nv = g.len();

        while iterations < opts.max_iters {
            let grad_norm = cur.grad.amax();
            if !cur.value.is_finite() || cur.grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::Optimizer {
                    iterations,
                    grad_norm,
                });
            }
            if grad_norm <= opts.grad_tol * scale || nv == 0 {
                break;
            }
            let (h, gn) = cur.hessian.take().expect("evaluated with hessian");
            let neg_h = -h;
            let neg_gn = -gn;
            let diag_scale = neg_gn.diagonal().amax().max(1e-12);
            // exact Newton first, then Gauss–Newton with growing damping
            let mut attempts = vec![(&neg_h, 0.0)];
            attempts.extend((0..24).map(|e| (&neg_gn, if e == 0 { 0.0 } else { diag_scale * 10f64.powi(e - 13) })));
            let mut accepted = None;
            for (m0, tau) in attempts {
                let mut m = m0.clone();
                for a in 0..nv {
                    m[(a, a)] += tau + 1e-14 * diag_scale;
                }
                let Some(chol) = m.cholesky() else {
                    continue;
                };
                let step = chol.solve(&cur.grad);
                let slope = cur.grad.dot(&step);
                if !(slope > 0.0) {
                    continue;
                }
                let mut t = 1.0;
                while t > 1e-10 {
                    let trial = &g + &step * t;
                    let e = self.evaluate(&w, &trial, false);
                    if e.value.is_finite() && e.value >= cur.value + 1e-4 * t * slope {
                        accepted = Some(trial);
                        break;
                    }
                    t *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
            }
            let Some(next) = accepted else {
                // step size underflow: the current point is as good as we can do
                cur = self.evaluate(&w, &g, true);
                break;
            };
            let prev = cur.value;
            g = next;
            cur = self.evaluate(&w, &g, true);
            iterations += 1;
            trace.push(cur.value);
            if (cur.value - prev).abs() <= opts.rel_improvement * (1.0 + prev.abs()) {
                break;
            }
        }

        let params = MonotoneParams::from_vector(l, self.p, &g);
        let kernel = Kernel::from_log_odds(self.grid.clone(), params.log_odds())?;
        Ok(ChebFit {
            kernel,
            params,
            objective: cur.value,
            penalty: cur.penalty,
            iterations,
            grad_norm: cur.grad.amax(),
            trace,
        })
    }
}

/// One-shot refit: builds the prior for `grid` and maximizes from `init`.
pub fn fit_kernel_cheb(q: &QGrid, init: &MonotoneParams, grid: &ChebGrid) -> Result<Kernel> {
    let prior = ChebPrior::new(grid.clone(), init.p())?;
    Ok(prior.fit(q, init, &NewtonOptions::default())?.kernel)
}
