//! Belief propagation on the match graph.
//!
//! Every observed pair `(i, j)` (with `i < j`) carries two cavity densities:
//! `μ_{i←j}`, the density of `x_j` with `i`'s evidence removed, and
//! `μ_{j←i}`, the density of `x_i` with `j`'s evidence removed. Pushing a
//! cavity through the pair's likelihood
//!
//! ```text
//! h_{i←j}(x) = ∫ μ_{i←j}(y) b(x, y)^{w_ij} b(y, x)^{w_ji} dy
//! ```
//!
//! gives the factor that `j` contributes to `i`. Cavities are products of
//! all incoming factors except one, and marginals are products of all of
//! them. Integrals are quadrature-weighted matrix-vector products over the
//! Chebyshev nodes; products are accumulated in log space.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chebkit::ChebGrid;
use crate::error::{Error, Result};
use crate::model::{Density, Kernel, PairCounts, WinMatrix};

/// Smallest value a pushed-through factor may take before its log.
const FACTOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Jacobi sweeps: every message is updated from the previous sweep.
    Synchronous,
    /// Gauss–Seidel sweeps over a freshly shuffled message order.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    pub schedule: Schedule,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 1000,
            damping: 0.2,
            schedule: Schedule::Synchronous,
        }
    }
}

impl BpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidOption("bp tol must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidOption("bp max_sweeps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidOption("bp damping must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Cavity densities for every observed pair, as node values.
///
/// Slot `2e` holds `μ_{i←j}` (a density of `x_j`) and slot `2e + 1` holds
/// `μ_{j←i}` (a density of `x_i`) for the `e`-th pair of
/// [`WinMatrix::pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    order: usize,
    pairs: Vec<(usize, usize)>,
    values: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub residual: f64,
}

impl MessageSet {
    fn uniform(order: usize, pairs: Vec<(usize, usize)>) -> Self {
        let values = vec![1.0; 2 * pairs.len() * order];
        Self {
            order,
            pairs,
            values,
            sweeps: 0,
            converged: false,
            residual: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn slot(&self, d: usize) -> &[f64] {
        &self.values[d * self.order..(d + 1) * self.order]
    }

    /// `μ_{to←from}`: the density of `from`'s skill with `to` removed.
    pub fn message(&self, to: usize, from: usize) -> Option<Density> {
        let (e, d) = if to < from {
            (self.pairs.binary_search(&(to, from)).ok()?, 0)
        } else {
            (self.pairs.binary_search(&(from, to)).ok()?, 1)
        };
        Some(Density {
            values: self.slot(2 * e + d).to_vec(),
        })
    }
}

/// Pairwise likelihood `K(x, y) = b(x, y)^{w_ij} b(y, x)^{w_ji}` on the
/// node grid, stored row-shifted so that each row's maximum is 1.
#[derive(Debug, Clone)]
struct EdgeFactor {
    /// `K_ij(x_a, x_b) / exp(fwd_shift[a])`.
    fwd: DMatrix<f64>,
    fwd_shift: Vec<f64>,
    /// `K_ji(x_a, x_b) = K_ij(x_b, x_a)`, shifted per row likewise.
    bwd: DMatrix<f64>,
    bwd_shift: Vec<f64>,
}

fn shifted_rows(log_k: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let l = log_k.nrows();
    let shift: Vec<f64> = (0..l).map(|a| log_k.row(a).max()).collect();
    let m = DMatrix::from_fn(l, l, |a, b| (log_k[(a, b)] - shift[a]).exp());
    (m, shift)
}

impl EdgeFactor {
    fn new(kernel: &Kernel, wins_ij: u64, wins_ji: u64) -> Self {
        let lb = kernel.log_values();
        let l = lb.nrows();
        let (wij, wji) = (wins_ij as f64, wins_ji as f64);
        let log_k = DMatrix::from_fn(l, l, |a, b| wij * lb[(a, b)] + wji * lb[(b, a)]);
        let (fwd, fwd_shift) = shifted_rows(&log_k);
        let (bwd, bwd_shift) = shifted_rows(&log_k.transpose());
        Self {
            fwd,
            fwd_shift,
            bwd,
            bwd_shift,
        }
    }
}

/// The match graph together with the kernel-dependent pair factors.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    grid: ChebGrid,
    n: usize,
    pairs: Vec<PairCounts>,
    /// For each player, the slots `d` of factors `h` flowing into it.
    incoming: Vec<Vec<usize>>,
    factor_of_pair: Vec<usize>,
    factors: Vec<EdgeFactor>,
    log_kernel: DMatrix<f64>,
}

impl FactorGraph {
    pub fn new(w: &WinMatrix, kernel: &Kernel) -> Self {
        let pairs = w.pairs();
        let mut incoming = vec![Vec::new(); w.n()];
        let mut cache: HashMap<(u64, u64), usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut factor_of_pair = Vec::with_capacity(pairs.len());
        for (e, p) in pairs.iter().enumerate() {
            // slot 2e feeds i, slot 2e+1 feeds j
            incoming[p.i].push(2 * e);
            incoming[p.j].push(2 * e + 1);
            let idx = *cache.entry((p.wins_ij, p.wins_ji)).or_insert_with(|| {
                factors.push(EdgeFactor::new(kernel, p.wins_ij, p.wins_ji));
                factors.len() - 1
            });
            factor_of_pair.push(idx);
        }
        Self {
            grid: kernel.grid().clone(),
            n: w.n(),
            pairs,
            incoming,
            factor_of_pair,
            factors,
            log_kernel: kernel.log_values().clone(),
        }
    }

    pub fn grid(&self) -> &ChebGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[PairCounts] {
        &self.pairs
    }

    fn order(&self) -> usize {
        self.grid.order()
    }

    /// Player whose density lives in message slot `d`.
    fn source(&self, d: usize) -> usize {
        let p = &self.pairs[d / 2];
        if d.is_multiple_of(2) {
            p.j
        } else {
            p.i
        }
    }

    /// Player that factor slot `d` flows into.
    fn target(&self, d: usize) -> usize {
        let p = &self.pairs[d / 2];
        if d.is_multiple_of(2) {
            p.i
        } else {
            p.j
        }
    }

    fn pair_keys(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.i, p.j)).collect()
    }

    /// Messages for this graph taken from `previous` wherever the same pair
    /// of player indices appears there, uniform elsewhere.
    pub fn carry_over(&self, previous: &MessageSet) -> MessageSet {
        let l = self.order();
        let keys = self.pair_keys();
        let mut msgs = MessageSet::uniform(l, keys);
        if previous.order != l {
            return msgs;
        }
        for e in 0..msgs.pairs.len() {
            if let Ok(pe) = previous.pairs.binary_search(&msgs.pairs[e]) {
                msgs.values[2 * e * l..(2 * e + 2) * l]
                    .copy_from_slice(&previous.values[2 * pe * l..(2 * pe + 2) * l]);
            }
        }
        msgs
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.pairs.binary_search_by(|p| (p.i, p.j).cmp(&key)).ok()
    }

    /// `ln h_d` from the message in slot `d`.
    fn push_through(&self, d: usize, message: &[f64], out: &mut [f64]) {
        let f = &self.factors[self.factor_of_pair[d / 2]];
        let (m, shift) = if d.is_multiple_of(2) {
            (&f.fwd, &f.fwd_shift)
        } else {
            (&f.bwd, &f.bwd_shift)
        };
        let v = DVector::from_iterator(
            message.len(),
            self.grid.weights().iter().zip(message).map(|(q, mu)| q * mu),
        );
        let h = m * v;
        for (a, o) in out.iter_mut().enumerate() {
            *o = h[a].max(FACTOR_FLOOR).ln() + shift[a];
        }
    }

    fn all_factors(&self, msgs: &MessageSet) -> Vec<f64> {
        let l = self.order();
        let mut lh = vec![0.0; msgs.values.len()];
        for d in 0..msgs.len() {
            self.push_through(d, msgs.slot(d), &mut lh[d * l..(d + 1) * l]);
        }
        lh
    }

    fn node_sums(&self, lh: &[f64]) -> Vec<f64> {
        let l = self.order();
        let mut s = vec![0.0; self.n * l];
        for (v, slots) in self.incoming.iter().enumerate() {
            let sv = &mut s[v * l..(v + 1) * l];
            for &d in slots {
                for (a, x) in sv.iter_mut().enumerate() {
                    *x += lh[d * l + a];
                }
            }
        }
        s
    }

    /// Normalized density `∝ exp(log_values)`.
    fn normalize_log(&self, log_values: &mut [f64]) {
        let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in log_values.iter_mut() {
            *v = (*v - max).exp();
        }
        let z: f64 = self.grid.integrate(log_values).unwrap_or(0.0);
        if z > 0.0 && z.is_finite() {
            for v in log_values.iter_mut() {
                *v /= z;
            }
        }
    }

    /// Writes the damped update of slot `d` into `out`, returning the
    /// largest change at any node.
    fn update_message(&self, d: usize, s: &[f64], lh: &[f64], old: &[f64], damping: f64, out: &mut [f64]) -> f64 {
        let l = self.order();
        let src = self.source(d);
        let excl = d ^ 1;
        for a in 0..l {
            out[a] = s[src * l + a] - lh[excl * l + a];
        }
        self.normalize_log(out);
        if damping > 0.0 {
            for (o, prev) in out.iter_mut().zip(old) {
                *o = (1.0 - damping) * *o + damping * prev;
            }
        }
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
        let z = self.grid.integrate(out).unwrap_or(1.0);
        if z > 0.0 {
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        out.iter()
            .zip(old)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Iterates the message equations to a fixed point.
    pub fn run(&self, opts: &BpOptions, warm: Option<&MessageSet>) -> Result<MessageSet> {
        opts.validate()?;
        let l = self.order();
        let keys = self.pair_keys();
        let mut msgs = match warm {
            Some(m) if m.pairs == keys && m.order == l => {
                let mut m = m.clone();
                m.sweeps = 0;
                m.converged = false;
                m.residual = f64::INFINITY;
                m
            }
            _ => MessageSet::uniform(l, keys),
        };
        if msgs.is_empty() {
            msgs.converged = true;
            msgs.residual = 0.0;
            return Ok(msgs);
        }

        let mut lh = self.all_factors(&msgs);
        let mut s = self.node_sums(&lh);
        let mut order: Vec<usize> = (0..msgs.len()).collect();
        let mut rng = match opts.schedule {
            Schedule::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Schedule::Synchronous => None,
        };
        let mut scratch = vec![0.0; l];

        for sweep in 1..=opts.max_sweeps {
            let mut residual: f64 = 0.0;
            match rng.as_mut() {
                None => {
                    let mut next = msgs.values.clone();
                    for d in 0..msgs.len() {
                        let r = self.update_message(
                            d,
                            &s,
                            &lh,
                            msgs.slot(d),
                            opts.damping,
                            &mut next[d * l..(d + 1) * l],
                        );
                        residual = residual.max(r);
                    }
                    msgs.values = next;
                    lh = self.all_factors(&msgs);
                    s = self.node_sums(&lh);
                }
                Some(rng) => {
                    order.shuffle(rng);
                    for &d in &order {
                        let r = self.update_message(d, &s, &lh, msgs.slot(d), opts.damping, &mut scratch);
                        residual = residual.max(r);
                        msgs.values[d * l..(d + 1) * l].copy_from_slice(&scratch);
                        let mut fresh = vec![0.0; l];
                        self.push_through(d, &scratch, &mut fresh);
                        let t = self.target(d);
                        for a in 0..l {
                            s[t * l + a] += fresh[a] - lh[d * l + a];
                            lh[d * l + a] = fresh[a];
                        }
                    }
                }
            }
            if !residual.is_finite() || msgs.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { sweeps: sweep });
            }
            msgs.sweeps = sweep;
            msgs.residual = residual;
            if residual <= opts.tol {
                msgs.converged = true;
                break;
            }
        }
        Ok(msgs)
    }

    fn check_messages(&self, msgs: &MessageSet) -> Result<()> {
        if msgs.pairs != self.pair_keys() || msgs.order != self.order() {
            return Err(Error::InvalidOption(
                "message set was computed for a different match graph".into(),
            ));
        }
        Ok(())
    }

    /// Posterior marginals, joints and evidence for converged messages.
    pub fn posterior(&self, msgs: &MessageSet, kernel: &Kernel) -> Result<SkillPosterior> {
        self.check_messages(msgs)?;
        let l = self.order();
        let lh = self.all_factors(msgs);
        let s = self.node_sums(&lh);
        let mut marginals = Vec::with_capacity(self.n);
        let mut log_evidence = 0.0;
        for v in 0..self.n {
            let mut vals = s[v * l..(v + 1) * l].to_vec();
            log_evidence += log_integral_exp(&self.grid, &vals);
            self.normalize_log(&mut vals);
            marginals.push(Density { values: vals });
        }
        for e in 0..self.pairs.len() {
            // z_ij = ∫ μ_{j←i}(x) h_{i←j}(x) dx, with μ_{j←i} a density of x_i
            let cav_i = msgs.slot(2 * e + 1);
            let terms: Vec<f64> = (0..l)
                .map(|a| {
                    if cav_i[a] > 0.0 {
                        cav_i[a].ln() + lh[2 * e * l + a]
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            log_evidence -= log_integral_exp(&self.grid, &terms);
        }
        Ok(SkillPosterior {
            graph: self.clone(),
            kernel: kernel.clone(),
            messages: msgs.clone(),
            marginals,
            log_evidence,
        })
    }

    /// Normalized joint density of `(x_i, x_j)` for observed pair `e`,
    /// rows indexed by the lower-indexed player.
    fn pair_joint(&self, msgs: &MessageSet, e: usize) -> DMatrix<f64> {
        let l = self.order();
        let f = &self.factors[self.factor_of_pair[e]];
        let top = f.fwd_shift.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cav_i = msgs.slot(2 * e + 1);
        let cav_j = msgs.slot(2 * e);
        let mut joint = DMatrix::from_fn(l, l, |a, b| {
            cav_i[a] * (f.fwd_shift[a] - top).exp() * f.fwd[(a, b)] * cav_j[b]
        });
        let z = self.grid.integrate_2d(&joint).expect("grid-shaped");
        if z > 0.0 {
            joint /= z;
        }
        joint
    }
}

/// `ln ∫ exp(g(u)) du` by quadrature.
fn log_integral_exp(grid: &ChebGrid, log_values: &[f64]) -> f64 {
    let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = grid
        .weights()
        .iter()
        .zip(log_values)
        .map(|(q, g)| q * (g - max).exp())
        .sum();
    max + sum.ln()
}

/// Approximate posterior over skills produced by belief propagation.
#[derive(Debug, Clone)]
pub struct SkillPosterior {
    graph: FactorGraph,
    kernel: Kernel,
    messages: MessageSet,
    marginals: Vec<Density>,
    log_evidence: f64,
}

impl SkillPosterior {
    pub fn n(&self) -> usize {
        self.marginals.len()
    }

    pub fn grid(&self) -> &ChebGrid {
        self.kernel.grid()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn messages(&self) -> &MessageSet {
        &self.messages
    }

    pub fn marginal(&self, i: usize) -> &Density {
        &self.marginals[i]
    }

    pub fn marginals(&self) -> &[Density] {
        &self.marginals
    }

    /// Bethe approximation of `ln ∫ Π b(x_i, x_j)^{w_ij} dx`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn observed(&self, i: usize, j: usize) -> bool {
        i != j && self.graph.pair_index(i, j).is_some()
    }

    /// Joint density `μ_ij(x, y)` of `(x_i, x_j)` at node pairs; rows index
    /// `x_i`. Only defined for pairs that have played.
    pub fn joint(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        let e = self
            .graph
            .pair_index(i, j)
            .filter(|_| i != j)
            .ok_or(Error::UnobservedPair(i, j))?;
        let joint = self.graph.pair_joint(&self.messages, e);
        Ok(if i < j { joint } else { joint.transpose() })
    }

    /// Visits every observed pair `(i, j, w_ij, w_ji, μ_ij)` with `i < j`.
    pub fn for_each_joint(&self, mut visit: impl FnMut(&PairCounts, &DMatrix<f64>)) {
        for (e, p) in self.graph.pairs.iter().enumerate() {
            let joint = self.graph.pair_joint(&self.messages, e);
            visit(p, &joint);
        }
    }

    /// Log of the kernel at node pairs used for this posterior.
    pub fn log_kernel(&self) -> &DMatrix<f64> {
        &self.graph.log_kernel
    }
}

/// Runs belief propagation from uniform (or warm) messages.
pub fn run_bp(w: &WinMatrix, kernel: &Kernel, opts: &BpOptions) -> Result<MessageSet> {
    FactorGraph::new(w, kernel).run(opts, None)
}

/// Posterior marginal of player `i`.
pub fn marginal(msgs: &MessageSet, w: &WinMatrix, kernel: &Kernel, i: usize) -> Result<Density> {
    let graph = FactorGraph::new(w, kernel);
    Ok(graph.posterior(msgs, kernel)?.marginal(i).clone())
}

/// Joint marginal of an observed pair, rows indexing `x_i`.
pub fn joint_marginal(
    msgs: &MessageSet,
    w: &WinMatrix,
    kernel: &Kernel,
    i: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    let graph = FactorGraph::new(w, kernel);
    graph.check_messages(msgs)?;
    let e = graph
        .pair_index(i, j)
        .filter(|_| i != j)
        .ok_or(Error::UnobservedPair(i, j))?;
    let joint = graph.pair_joint(msgs, e);
    Ok(if i < j { joint } else { joint.transpose() })
}

/// Convenience: messages plus posterior in one call.
pub fn infer(w: &WinMatrix, kernel: &Kernel, opts: &BpOptions) -> Result<SkillPosterior> {
    let graph = FactorGraph::new(w, kernel);
    let msgs = graph.run(opts, None)?;
    graph.posterior(&msgs, kernel)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::model::DEFAULT_SLOPE;

    fn grid() -> ChebGrid {
        ChebGrid::new(32).unwrap()
    }

    fn matrix(n: usize, games: &[(usize, usize, u64)]) -> WinMatrix {
        let mut w = WinMatrix::with_numbered_players(n);
        for &(i, j, c) in games {
            w.add(i, j, c);
        }
        w
    }

    #[test]
    fn carried_messages_converge_to_the_same_fixed_point() {
        let k = Kernel::logistic(grid(), DEFAULT_SLOPE);
        let opts = BpOptions::default();
        let before = matrix(5, &[(0, 1, 2), (1, 2, 1), (3, 2, 1)]);
        let after = matrix(5, &[(0, 1, 2), (1, 2, 1), (2, 4, 3), (4, 0, 1)]);
        let old = FactorGraph::new(&before, &k).run(&opts, None).unwrap();
        let graph = FactorGraph::new(&after, &k);
        let seeded = graph.carry_over(&old);
        assert_eq!(seeded.message(0, 1), old.message(0, 1));
        assert_eq!(seeded.message(4, 2).unwrap().values, vec![1.0; 32]);
        let warm = graph.run(&opts, Some(&seeded)).unwrap();
        let cold = graph.run(&opts, None).unwrap();
        let (pw, pc) = (graph.posterior(&warm, &k).unwrap(), graph.posterior(&cold, &k).unwrap());
        for i in 0..5 {
            assert_abs_diff_eq!(pw.marginal(i).mean(&grid()), pc.marginal(i).mean(&grid()), epsilon = 1e-7);
        }
    }

    #[test]
    fn isolated_players_stay_uniform() {
        let k = Kernel::logistic(grid(), DEFAULT_SLOPE);
        let w = matrix(3, &[(0, 1, 2)]);
        let post = infer(&w, &k, &BpOptions::default()).unwrap();
        for v in &post.marginal(2).values {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_match_messages_are_uniform() {
        let k = Kernel::logistic(grid(), DEFAULT_SLOPE);
        let w = matrix(2, &[(0, 1, 1)]);
        let msgs = run_bp(&w, &k, &BpOptions::default()).unwrap();
        assert!(msgs.converged);
        for (to, from) in [(0, 1), (1, 0)] {
            let m = msgs.message(to, from).unwrap();
            assert!(m.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        assert!(msgs.message(0, 0).is_none());
    }

    #[test]
    fn single_match_joint_is_kernel() {
        let g = grid();
        let k = Kernel::logistic(g.clone(), 3.0);
        let w = matrix(2, &[(1, 0, 1)]);
        let msgs = run_bp(&w, &k, &BpOptions::default()).unwrap();
        // player 1 beat player 0: μ_10(x, y) ∝ b(x, y) = 2 b(x, y)
        let joint = joint_marginal(&msgs, &w, &k, 1, 0).unwrap();
        let expected = k.values() * 2.0;
        assert!((&joint - &expected).abs().max() < 1e-10);
        assert_abs_diff_eq!(g.integrate_2d(k.values()).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(
            joint_marginal(&msgs, &w, &k, 0, 0),
            Err(Error::UnobservedPair(0, 0))
        ));
    }

    #[test]
    fn single_match_winner_mean() {
        let g = grid();
        let k = Kernel::logistic(g.clone(), DEFAULT_SLOPE);
        let w = matrix(2, &[(0, 1, 1)]);
        let post = infer(&w, &k, &BpOptions::default()).unwrap();
        // ∬ x b(x,y) / ∬ b(x,y) with b = σ(5(x−y)); the denominator is 1/2
        let num = g.integrate_2d(&g.sample_2d(|x, y| x / (1.0 + (5.0 * (y - x)).exp()))).unwrap();
        assert_abs_diff_eq!(post.marginal(0).mean(&g), num / 0.5, epsilon = 1e-10);
        assert!(post.marginal(0).mean(&g) > 0.5);
        assert!(post.marginal(1).mean(&g) < 0.5);
        // evidence of a single match is exactly ∬ b = 1/2
        assert_abs_diff_eq!(post.log_evidence(), 0.5f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn symmetric_record_gives_symmetric_joint() {
        let k = Kernel::logistic(grid(), DEFAULT_SLOPE);
        let w = matrix(3, &[(0, 1, 3), (1, 0, 3), (1, 2, 1)]);
        let post = infer(&w, &k, &BpOptions::default()).unwrap();
        let j = post.joint(0, 1).unwrap();
        // cavities differ (player 1 has another opponent), so compare the
        // pair in isolation instead
        let w2 = matrix(2, &[(0, 1, 3), (1, 0, 3)]);
        let post2 = infer(&w2, &k, &BpOptions::default()).unwrap();
        let j2 = post2.joint(0, 1).unwrap();
        assert!((&j2 - j2.transpose()).abs().max() < 1e-9);
        assert!(j.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn joint_marginalizes_to_marginal_on_trees() {
        let g = grid();
        let k = Kernel::logistic(g.clone(), DEFAULT_SLOPE);
        let w = matrix(4, &[(0, 1, 2), (1, 2, 1), (2, 1, 1), (3, 1, 1)]);
        let post = infer(&w, &k, &BpOptions::default()).unwrap();
        for (i, j) in [(0, 1), (1, 2), (3, 1)] {
            let joint = post.joint(i, j).unwrap();
            let mi = post.marginal(i);
            for a in 0..32 {
                let row: f64 = (0..32).map(|b| g.weights()[b] * joint[(a, b)]).sum();
                assert_abs_diff_eq!(row, mi.values[a], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn schedules_agree_on_trees() {
        let g = grid();
        let k = Kernel::logistic(g.clone(), DEFAULT_SLOPE);
        let w = matrix(5, &[(0, 1, 2), (1, 2, 1), (3, 1, 1), (4, 3, 3), (3, 4, 1)]);
        let sync = infer(&w, &k, &BpOptions::default()).unwrap();
        for seed in 0..4 {
            let opts = BpOptions {
                schedule: Schedule::Shuffled { seed },
                damping: 0.0,
                ..BpOptions::default()
            };
            let shuffled = infer(&w, &k, &opts).unwrap();
            for i in 0..5 {
                let a = sync.marginal(i);
                let b = shuffled.marginal(i);
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn relabeling_permutes_marginals() {
        let g = grid();
        let k = Kernel::logistic(g.clone(), DEFAULT_SLOPE);
        let games = [(0, 1, 2), (1, 2, 1), (2, 0, 1), (3, 2, 2), (0, 3, 1)];
        let perm = [2usize, 0, 3, 1];
        let w = matrix(4, &games);
        let wp = matrix(
            4,
            &games.iter().map(|&(i, j, c)| (perm[i], perm[j], c)).collect::<Vec<_>>(),
        );
        let a = infer(&w, &k, &BpOptions::default()).unwrap();
        let b = infer(&wp, &k, &BpOptions::default()).unwrap();
        for i in 0..4 {
            for (x, y) in a.marginal(i).values.iter().zip(&b.marginal(perm[i]).values) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-7);
            }
        }
        assert_abs_diff_eq!(a.log_evidence(), b.log_evidence(), epsilon = 1e-7);
    }

    #[test]
    fn normalization_and_positivity() {
        let g = grid();
        let k = Kernel::from_fn(g.clone(), |x, y| if x > y { 0.95 } else if x < y { 0.05 } else { 0.5 });
        let w = matrix(
            6,
            &[(0, 1, 1), (1, 2, 1), (2, 0, 1), (3, 4, 4), (4, 5, 2), (5, 3, 1), (0, 5, 2)],
        );
        let graph = FactorGraph::new(&w, &k);
        let msgs = graph.run(&BpOptions::default(), None).unwrap();
        for d in 0..msgs.len() {
            let m = msgs.slot(d);
            assert!(m.iter().all(|v| *v >= 0.0));
            assert_abs_diff_eq!(g.integrate(m).unwrap(), 1.0, epsilon = 1e-8);
        }
        let post = graph.posterior(&msgs, &k).unwrap();
        for m in post.marginals() {
            assert_abs_diff_eq!(m.integral(&g), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_bad_options() {
        let k = Kernel::logistic(grid(), 1.0);
        let w = matrix(2, &[(0, 1, 1)]);
        for opts in [
            BpOptions { tol: 0.0, ..BpOptions::default() },
            BpOptions { max_sweeps: 0, ..BpOptions::default() },
            BpOptions { damping: 1.0, ..BpOptions::default() },
        ] {
            assert!(run_bp(&w, &k, &opts).is_err());
        }
    }
}
