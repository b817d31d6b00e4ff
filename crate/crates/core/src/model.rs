//! Win matrix, outcome kernel and skill densities.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use nalgebra::DMatrix;

use crate::chebkit::{ChebFun1D, ChebFun2D, ChebGrid};
use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_FLOOR, 1 − PROB_FLOOR]` before any log.
pub const PROB_FLOOR: f64 = 1e-9;

/// Default slope of the logistic baseline on the percentile scale.
pub const DEFAULT_SLOPE: f64 = 5.0;

/// Largest log-odds magnitude compatible with [`PROB_FLOOR`].
pub fn max_log_odds() -> f64 {
    ((1.0 - PROB_FLOOR) / PROB_FLOOR).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(z)`, stable for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Sparse counts `w_ij` = number of times player `i` beat player `j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WinMatrix {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
    entries: BTreeMap<(usize, usize), u64>,
}

/// One aggregated observed pair with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub i: usize,
    pub j: usize,
    /// Wins of `i` over `j`.
    pub wins_ij: u64,
    /// Wins of `j` over `i`.
    pub wins_ji: u64,
}

impl WinMatrix {
    /// Matrix over `labels` with no results yet.
    pub fn with_labels(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self {
            labels,
            index,
            entries: BTreeMap::new(),
        }
    }

    /// Players labelled `p0000`, `p0001`, … so that label order equals index order.
    pub fn with_numbered_players(n: usize) -> Self {
        let width = n.saturating_sub(1).to_string().len().max(4);
        Self::with_labels((0..n).map(|i| format!("p{i:0width$}")).collect())
    }

    /// Builds a matrix from `(winner, loser, count)` records. Player indices
    /// follow the sorted order of the ids, so input order never matters.
    pub fn from_records<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, u64)>,
    {
        let records: Vec<_> = records.into_iter().collect();
        let mut ids = BTreeSet::new();
        for (i, (winner, loser, _)) in records.iter().enumerate() {
            if winner == loser {
                return Err(Error::SelfMatch {
                    line: i + 1,
                    id: winner.to_string(),
                });
            }
            ids.insert(*winner);
            ids.insert(*loser);
        }
        let labels: Vec<String> = ids.into_iter().map(str::to_string).collect();
        let mut w = Self::with_labels(labels);
        for (winner, loser, count) in records {
            let i = w.index_of(winner).expect("id registered above");
            let j = w.index_of(loser).expect("id registered above");
            w.add(i, j, count);
        }
        Ok(w)
    }

    /// Reads the match file format: `winner,loser` or `winner,loser,count`
    /// per line, `#` comments and blank lines ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut raw: Vec<(String, String, u64)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let count = match fields.len() {
                2 => 1,
                3 => fields[2]
                    .parse::<u64>()
                    .map_err(|e| parse_err(format!("bad count {:?}: {e}", fields[2])))?,
                n => return Err(parse_err(format!("expected 2 or 3 fields, found {n}"))),
            };
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(parse_err("empty player id".into()));
            }
            if fields[0] == fields[1] {
                return Err(Error::SelfMatch {
                    line: line_no,
                    id: fields[0].to_string(),
                });
            }
            raw.push((fields[0].to_string(), fields[1].to_string(), count));
        }
        Self::from_records(raw.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), *c)))
    }

    /// Adds `count` wins of `i` over `j`.
    pub fn add(&mut self, i: usize, j: usize, count: u64) {
        assert!(i != j, "self-match {i}");
        assert!(i < self.n() && j < self.n(), "player index out of range");
        if count > 0 {
            *self.entries.entry((i, j)).or_insert(0) += count;
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0)
    }

    /// Non-zero `(i, j, w_ij)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.entries.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    /// `Σ_ij w_ij`.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observed unordered pairs, sorted by `(i, j)` with `i < j`.
    pub fn pairs(&self) -> Vec<PairCounts> {
        let mut map: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
        for (&(i, j), &w) in &self.entries {
            if i < j {
                map.entry((i, j)).or_default().0 += w;
            } else {
                map.entry((j, i)).or_default().1 += w;
            }
        }
        map.into_iter()
            .map(|((i, j), (wins_ij, wins_ji))| PairCounts {
                i,
                j,
                wins_ij,
                wins_ji,
            })
            .collect()
    }

    /// Matches played by each player.
    pub fn match_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.n()];
        for (i, j, w) in self.iter() {
            counts[i] += w;
            counts[j] += w;
        }
        counts
    }
}

/// A density on `[0, 1]` stored by its values at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub values: Vec<f64>,
}

impl Density {
    pub fn uniform(order: usize) -> Self {
        Self {
            values: vec![1.0; order],
        }
    }

    pub fn integral(&self, grid: &ChebGrid) -> f64 {
        dot(grid.weights(), &self.values)
    }

    pub fn mean(&self, grid: &ChebGrid) -> f64 {
        grid.weights()
            .iter()
            .zip(grid.nodes())
            .zip(&self.values)
            .map(|((w, x), v)| w * x * v)
            .sum()
    }

    pub fn std_dev(&self, grid: &ChebGrid) -> f64 {
        let mean = self.mean(grid);
        let var: f64 = grid
            .weights()
            .iter()
            .zip(grid.nodes())
            .zip(&self.values)
            .map(|((w, x), v)| w * (x - mean).powi(2) * v)
            .sum();
        var.max(0.0).sqrt()
    }

    pub fn to_chebfun(&self, grid: &ChebGrid) -> Result<ChebFun1D> {
        grid.vals_to_coeffs(&self.values)
    }

    /// Indices of strict local maxima of the node values; plateaus at the
    /// boundary count once.
    pub fn local_maxima(&self) -> Vec<usize> {
        let v = &self.values;
        let n = v.len();
        (0..n)
            .filter(|&k| {
                let left = k == 0 || v[k] > v[k - 1];
                let right = k + 1 == n || v[k] > v[k + 1];
                left && right
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The outcome kernel `b(x, y) = σ(f(x, y))` with antisymmetric log-odds `f`,
/// held at the nodes of a Chebyshev grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    grid: ChebGrid,
    log_odds: DMatrix<f64>,
    values: DMatrix<f64>,
    log_values: DMatrix<f64>,
    f_fun: ChebFun2D,
}

impl Kernel {
    /// Builds a kernel from log-odds at node pairs. The input is projected
    /// onto its antisymmetric part and clipped to the probability floor.
    pub fn from_log_odds(grid: ChebGrid, log_odds: DMatrix<f64>) -> Result<Self> {
        let l = grid.order();
        if log_odds.nrows() != l || log_odds.ncols() != l {
            return Err(Error::LengthMismatch {
                expected: l,
                found: log_odds.nrows().max(log_odds.ncols()),
            });
        }
        let cap = max_log_odds();
        let f = DMatrix::from_fn(l, l, |k, m| {
            (0.5 * (log_odds[(k, m)] - log_odds[(m, k)])).clamp(-cap, cap)
        });
        let values = f.map(|z| clamp_prob(sigmoid(z)));
        let log_values = f.map(log_sigmoid);
        let f_fun = grid.vals_to_coeffs_2d(&f)?;
        Ok(Self {
            grid,
            log_odds: f,
            values,
            log_values,
            f_fun,
        })
    }

    /// Samples a closed-form kernel at the nodes.
    pub fn from_fn(grid: ChebGrid, b: impl Fn(f64, f64) -> f64) -> Self {
        let f = grid.sample_2d(|x, y| logit(clamp_prob(b(x, y))));
        Self::from_log_odds(grid, f).expect("sampled on its own grid")
    }

    /// Kernel from win probabilities at node pairs.
    pub fn from_node_values(grid: ChebGrid, values: &DMatrix<f64>) -> Result<Self> {
        let f = values.map(|b| logit(clamp_prob(b)));
        Self::from_log_odds(grid, f)
    }

    /// Bradley–Terry baseline on the percentile scale:
    /// `b(x, y) = 1 / (1 + exp(slope · (y − x)))`.
    pub fn logistic(grid: ChebGrid, slope: f64) -> Self {
        let f = grid.sample_2d(|x, y| slope * (x - y));
        Self::from_log_odds(grid, f).expect("sampled on its own grid")
    }

    /// Constant `b ≡ 1/2`.
    pub fn flat(grid: ChebGrid) -> Self {
        let l = grid.order();
        Self::from_log_odds(grid, DMatrix::zeros(l, l)).expect("shape matches")
    }

    pub fn grid(&self) -> &ChebGrid {
        &self.grid
    }

    /// `b(x_k, x_m)`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `ln b(x_k, x_m)`.
    pub fn log_values(&self) -> &DMatrix<f64> {
        &self.log_values
    }

    /// `f(x_k, x_m)`, exactly antisymmetric.
    pub fn log_odds(&self) -> &DMatrix<f64> {
        &self.log_odds
    }

    pub fn log_odds_fun(&self) -> &ChebFun2D {
        &self.f_fun
    }

    /// `b(x, y)` at arbitrary points via the Chebyshev expansion of `f`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let f = 0.5 * (self.f_fun.eval(x, y) - self.f_fun.eval(y, x));
        clamp_prob(sigmoid(f))
    }

    /// Largest node-wise change in `b` between two kernels on the same grid.
    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        (&self.values - &other.values).abs().max()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
