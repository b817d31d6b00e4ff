//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed: sampling a kernel for a heatmap, fitting a
//! small synthetic tournament, and the skill posterior of one player whose
//! opponents' skills are known.

use kernelrank::chebkit::ChebGrid;
use kernelrank::em::{em_fit, EmOptions};
use kernelrank::model::{Kernel, DEFAULT_SLOPE};
use kernelrank::synth::{builtin_kernel, generate, SynthConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: kernelrank::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Built-in kernel by name; `bradley-terry` is the logistic baseline.
fn named_kernel(name: &str, order: usize) -> Result<Kernel, kernelrank::Error> {
    let grid = ChebGrid::new(order)?;
    if name == "bradley-terry" {
        return Ok(Kernel::logistic(grid, DEFAULT_SLOPE));
    }
    Ok(builtin_kernel(name)?.on_grid(&grid))
}

/// Row-major `resolution²` samples of `b(x, y)` at cell centres; rows run
/// over `x`.
fn sample(kernel: &Kernel, resolution: usize) -> Vec<f64> {
    let h = 1.0 / resolution as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for a in 0..resolution {
        for c in 0..resolution {
            out.push(kernel.eval((a as f64 + 0.5) * h, (c as f64 + 0.5) * h));
        }
    }
    out
}

/// Chebyshev interpolant of a named kernel sampled for display.
#[wasm_bindgen]
pub fn kernel_heatmap(name: &str, order: usize, resolution: usize) -> Result<Vec<f64>, JsError> {
    Ok(sample(&named_kernel(name, order).map_err(js_err)?, resolution))
}

#[wasm_bindgen]
pub struct SyntheticFit {
    kernel: Kernel,
    truth: Kernel,
    bound_trace: Vec<f64>,
    percentiles: Vec<f64>,
    skills: Vec<f64>,
}

#[wasm_bindgen]
impl SyntheticFit {
    pub fn fitted_heatmap(&self, resolution: usize) -> Vec<f64> {
        sample(&self.kernel, resolution)
    }

    pub fn truth_heatmap(&self, resolution: usize) -> Vec<f64> {
        sample(&self.truth, resolution)
    }

    pub fn bound_trace(&self) -> Vec<f64> {
        self.bound_trace.clone()
    }

    pub fn percentiles(&self) -> Vec<f64> {
        self.percentiles.clone()
    }

    pub fn true_skills(&self) -> Vec<f64> {
        self.skills.clone()
    }

    /// Spearman correlation between true skills and inferred percentiles.
    pub fn rank_correlation(&self) -> f64 {
        spearman(&self.skills, &self.percentiles)
    }
}

/// Simulates `n` players with `k` matches each under a named truth and
/// refits the kernel with the Chebyshev backend.
#[wasm_bindgen]
pub fn fit_synthetic(truth: &str, n: usize, k: usize, seed: u64, order: usize, max_iters: usize) -> Result<SyntheticFit, JsError> {
    let kernel = builtin_kernel(truth).map_err(js_err)?;
    let t = generate(&SynthConfig { n, k, kernel, seed }).map_err(js_err)?;
    let opts = EmOptions {
        grid_order: order,
        max_iters,
        ..EmOptions::default()
    };
    let fit = em_fit(&t.wins, &opts).map_err(js_err)?;
    let grid = fit.kernel.grid().clone();
    let percentiles = fit
        .posterior
        .marginals()
        .iter()
        .map(|m| 100.0 * m.mean(&grid))
        .collect();
    Ok(SyntheticFit {
        truth: kernel.on_grid(&grid),
        kernel: fit.kernel,
        bound_trace: fit.state.bound_trace,
        percentiles,
        skills: t.skills,
    })
}

/// Posterior density of a player with a uniform prior who beat opponents
/// of skill `beat` and lost to opponents of skill `lost_to`, sampled at
/// `resolution` cell centres and normalized to integrate to one.
#[wasm_bindgen]
pub fn record_posterior(kernel: &str, order: usize, beat: Vec<f64>, lost_to: Vec<f64>, resolution: usize) -> Result<Vec<f64>, JsError> {
    let b = named_kernel(kernel, order).map_err(js_err)?;
    Ok(record_density(&b, &beat, &lost_to, resolution))
}

fn record_density(b: &Kernel, beat: &[f64], lost_to: &[f64], resolution: usize) -> Vec<f64> {
    let h = 1.0 / resolution as f64;
    let logs: Vec<f64> = (0..resolution)
        .map(|a| {
            let x = (a as f64 + 0.5) * h;
            beat.iter().map(|&y| b.eval(x, y).ln()).sum::<f64>()
                + lost_to.iter().map(|&y| b.eval(y, x).ln()).sum::<f64>()
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = dens.iter().sum::<f64>() * h;
    dens.iter_mut().for_each(|d| *d /= z);
    dens
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
