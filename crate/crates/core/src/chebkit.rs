//! Chebyshev grids on `[0, 1]`: nodes, value/coefficient transforms,
//! Clenshaw evaluation, and Fejér-type (Clenshaw–Curtis family) quadrature.
//!
//! Functions are stored either as values at the `L` nodes or as
//! coefficients of `T_α(2x − 1)`. The two representations are related by a
//! dense `L × L` matrix which is precomputed once per grid.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Grid order used throughout when nothing else is configured.
pub const DEFAULT_ORDER: usize = 32;

/// Chebyshev nodes of the first kind mapped to `[0, 1]`, with their
/// quadrature weights and transform matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `to_coeffs[(α, k)]`: coefficient α picks up `to_coeffs[(α,k)] * v_k`.
    to_coeffs: DMatrix<f64>,
    /// `basis[(k, α)] = T_α(2 x_k − 1)`.
    basis: DMatrix<f64>,
}

impl ChebGrid {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidGridOrder);
        }
        let l = order as f64;
        let theta: Vec<f64> = (0..order).map(|k| (k as f64 + 0.5) * PI / l).collect();
        // cos θ_k written as sin((L − 2k − 1)π / 2L): exact zero at the middle
        // node and odd symmetry about it
        let nodes: Vec<f64> = (0..order)
            .map(|k| 0.5 - 0.5 * ((l - 2.0 * k as f64 - 1.0) * PI / (2.0 * l)).sin())
            .collect();

        // t_k = 2x_k - 1 = -cos θ_k, so T_α(t_k) = (-1)^α cos(α θ_k).
        let basis = DMatrix::from_fn(order, order, |k, a| {
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            sign * (a as f64 * theta[k]).cos()
        });
        let to_coeffs = DMatrix::from_fn(order, order, |a, k| {
            let scale = if a == 0 { 1.0 / l } else { 2.0 / l };
            scale * basis[(k, a)]
        });

        let weights = theta
            .iter()
            .map(|t| {
                let tail: f64 = (1..=order / 2)
                    .map(|j| {
                        let j = j as f64;
                        (2.0 * j * t).cos() / (4.0 * j * j - 1.0)
                    })
                    .sum();
                (1.0 - 2.0 * tail) / l
            })
            .collect();

        Ok(Self {
            nodes,
            weights,
            to_coeffs,
            basis,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Matrix taking node values to Chebyshev coefficients.
    pub fn coeff_matrix(&self) -> &DMatrix<f64> {
        &self.to_coeffs
    }

    fn check_len(&self, found: usize) -> Result<()> {
        if found != self.order() {
            return Err(Error::LengthMismatch {
                expected: self.order(),
                found,
            });
        }
        Ok(())
    }

    fn check_shape(&self, m: &DMatrix<f64>) -> Result<()> {
        self.check_len(m.nrows())?;
        self.check_len(m.ncols())
    }

    pub fn vals_to_coeffs(&self, values: &[f64]) -> Result<ChebFun1D> {
        self.check_len(values.len())?;
        let coeffs = (0..self.order())
            .map(|a| {
                values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| self.to_coeffs[(a, k)] * v)
                    .sum()
            })
            .collect();
        Ok(ChebFun1D { coeffs })
    }

    /// Node values of a 1D expansion whose order matches this grid.
    pub fn coeffs_to_vals(&self, f: &ChebFun1D) -> Result<Vec<f64>> {
        self.check_len(f.coeffs.len())?;
        Ok((0..self.order())
            .map(|k| {
                f.coeffs
                    .iter()
                    .enumerate()
                    .map(|(a, c)| self.basis[(k, a)] * c)
                    .sum()
            })
            .collect())
    }

    /// `values[(k, m)] = f(x_k, x_m)` to coefficients `c_αβ`.
    pub fn vals_to_coeffs_2d(&self, values: &DMatrix<f64>) -> Result<ChebFun2D> {
        self.check_shape(values)?;
        let coeffs = &self.to_coeffs * values * self.to_coeffs.transpose();
        Ok(ChebFun2D { coeffs })
    }

    pub fn coeffs_to_vals_2d(&self, f: &ChebFun2D) -> Result<DMatrix<f64>> {
        self.check_shape(&f.coeffs)?;
        Ok(&self.basis * &f.coeffs * self.basis.transpose())
    }

    /// `∫₀¹ f(u) du` from node values.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(self.weights.iter().zip(values).map(|(w, v)| w * v).sum())
    }

    /// `∬ f(u, v) du dv` over the unit square from node values.
    pub fn integrate_2d(&self, values: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(values)?;
        let mut total = 0.0;
        for (k, wk) in self.weights.iter().enumerate() {
            let row: f64 = self
                .weights
                .iter()
                .enumerate()
                .map(|(m, wm)| wm * values[(k, m)])
                .sum();
            total += wk * row;
        }
        Ok(total)
    }

    pub fn integrate_fun_2d(&self, f: &ChebFun2D) -> Result<f64> {
        self.integrate_2d(&self.coeffs_to_vals_2d(f)?)
    }

    /// Node values of `f` sampled on the grid.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// `out[(k, m)] = f(x_k, x_m)`.
    pub fn sample_2d(&self, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
        let l = self.order();
        DMatrix::from_fn(l, l, |k, m| f(self.nodes[k], self.nodes[m]))
    }
}

/// Expansion `Σ c_α T_α(2x − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebFun1D {
    pub coeffs: Vec<f64>,
}

impl ChebFun1D {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Points outside `[0, 1]` are clamped to the boundary.
    pub fn eval(&self, x: f64) -> f64 {
        clenshaw(&self.coeffs, to_unit_interval(x))
    }
}

/// Expansion `Σ c_αβ T_α(2x − 1) T_β(2y − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebFun2D {
    pub coeffs: DMatrix<f64>,
}

impl ChebFun2D {
    pub fn new(coeffs: DMatrix<f64>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let t = to_unit_interval(x);
        let s = to_unit_interval(y);
        let inner: Vec<f64> = (0..self.coeffs.nrows())
            .map(|a| {
                let row: Vec<f64> = self.coeffs.row(a).iter().copied().collect();
                clenshaw(&row, s)
            })
            .collect();
        clenshaw(&inner, t)
    }
}

fn to_unit_interval(x: f64) -> f64 {
    2.0 * x.clamp(0.0, 1.0) - 1.0
}

fn clenshaw(coeffs: &[f64], t: f64) -> f64 {
    let Some((c0, rest)) = coeffs.split_first() else {
        return 0.0;
    };
    let (mut b1, mut b2) = (0.0, 0.0);
    for c in rest.iter().rev() {
        let b0 = c + 2.0 * t * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    c0 + t * b1 - b2
}
