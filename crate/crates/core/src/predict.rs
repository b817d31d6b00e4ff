//! Percentile rankings, pairwise win probabilities and betting backtests.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use chrono::{Months, NaiveDate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bp::{BpOptions, FactorGraph, MessageSet, SkillPosterior};
use crate::chebkit::{ChebGrid, DEFAULT_ORDER};
use crate::error::{Error, Result};
use crate::model::{Density, Kernel, WinMatrix, DEFAULT_SLOPE};

/// `100 · E[x_i]` under the posterior marginal.
pub fn percentile(posterior: &SkillPosterior, i: usize) -> f64 {
    100.0 * posterior.marginal(i).mean(posterior.grid())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub rank: usize,
    pub id: String,
    pub percentile: f64,
    pub mean: f64,
    pub sd: f64,
    pub matches: u64,
}

/// Players sorted by descending percentile; ties broken by id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable {
    pub rows: Vec<RankingRow>,
}

impl RankingTable {
    pub fn new(posterior: &SkillPosterior, w: &WinMatrix) -> Self {
        let grid = posterior.grid();
        let counts = w.match_counts();
        let mut rows: Vec<RankingRow> = (0..posterior.n())
            .map(|i| {
                let m = posterior.marginal(i);
                let mean = m.mean(grid);
                RankingRow {
                    rank: 0,
                    id: w.label(i).to_string(),
                    percentile: 100.0 * mean,
                    mean,
                    sd: m.std_dev(grid),
                    matches: counts[i],
                }
            })
            .collect();
        rows.sort_by(|a, b| b.percentile.total_cmp(&a.percentile).then_with(|| a.id.cmp(&b.id)));
        for (r, row) in rows.iter_mut().enumerate() {
            row.rank = r + 1;
        }
        Self { rows }
    }

    /// Tab-separated with a header row.
    pub fn to_text(&self) -> String {
        let mut out = String::from("rank\tid\tpercentile\tmean\tsd\tmatches\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.2}\t{:.6}\t{:.6}\t{}",
                r.rank, r.id, r.percentile, r.mean, r.sd, r.matches
            );
        }
        out
    }
}

/// Which density `∬ μ_ij b` integrates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairDensity {
    /// The belief-propagation pair joint when the players have met,
    /// otherwise the product of marginals.
    #[default]
    JointWhenObserved,
    ProductOfMarginals,
}

/// `P(i beats j) = ∬ μ_ij(x, y) b(x, y)`. `None` stands for a player with
/// no history, whose skill follows the uniform prior.
pub fn win_probability(
    posterior: &SkillPosterior,
    kernel: &Kernel,
    i: Option<usize>,
    j: Option<usize>,
    mode: PairDensity,
) -> Result<f64> {
    let grid = posterior.grid();
    if kernel.grid().order() != grid.order() {
        return Err(Error::LengthMismatch {
            expected: grid.order(),
            found: kernel.grid().order(),
        });
    }
    if let (Some(a), Some(b)) = (i, j) {
        if a == b {
            return Ok(0.5);
        }
        if mode == PairDensity::JointWhenObserved && posterior.observed(a, b) {
            return Ok(expect_kernel(grid, &posterior.joint(a, b)?, kernel));
        }
    }
    let uniform = Density::uniform(grid.order());
    let mi = i.map_or(&uniform, |a| posterior.marginal(a));
    let mj = j.map_or(&uniform, |b| posterior.marginal(b));
    let joint = DMatrix::from_fn(grid.order(), grid.order(), |a, b| mi.values[a] * mj.values[b]);
    Ok(expect_kernel(grid, &joint, kernel))
}

/// `∬ J b / ∬ J` by quadrature.
fn expect_kernel(grid: &ChebGrid, joint: &DMatrix<f64>, kernel: &Kernel) -> f64 {
    let q = grid.weights();
    let b = kernel.values();
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..q.len() {
        for c in 0..q.len() {
            let m = q[a] * q[c] * joint[(a, c)];
            num += m * b[(a, c)];
            den += m;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// One market line: decimal odds on both players and the result.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsRecord {
    pub date: NaiveDate,
    pub player_a: String,
    pub player_b: String,
    pub odds_a: f64,
    pub odds_b: f64,
    pub winner: Side,
}

impl OddsRecord {
    pub fn winner_id(&self) -> &str {
        match self.winner {
            Side::A => &self.player_a,
            Side::B => &self.player_b,
        }
    }

    pub fn loser_id(&self) -> &str {
        match self.winner {
            Side::A => &self.player_b,
            Side::B => &self.player_a,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.date,
            self.player_a,
            self.player_b,
            self.odds_a,
            self.odds_b,
            self.winner_id()
        )
    }
}

pub const ODDS_HEADER: &str = "date,player_a,player_b,odds_a,odds_b,winner";

/// Reads `date,player_a,player_b,odds_a,odds_b,winner` lines with ISO
/// dates. The winner column holds the winning player's id. A header line,
/// blank lines and `#` comments are skipped.
pub fn parse_odds<R: BufRead>(reader: R) -> Result<Vec<OddsRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("date,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let date = NaiveDate::parse_from_str(f[0], "%Y-%m-%d").map_err(|e| err(format!("bad date {:?}: {e}", f[0])))?;
        if f[1].is_empty() || f[2].is_empty() {
            return Err(err("empty player id".into()));
        }
        if f[1] == f[2] {
            return Err(Error::SelfMatch {
                line: line_no,
                id: f[1].to_string(),
            });
        }
        let odds = |s: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(o) if o.is_finite() && o > 1.0 => Ok(o),
                _ => Err(err(format!("decimal odds must exceed 1, found {s:?}"))),
            }
        };
        let winner = if f[5] == f[1] {
            Side::A
        } else if f[5] == f[2] {
            Side::B
        } else {
            return Err(err(format!("winner {:?} is neither player", f[5])));
        };
        out.push(OddsRecord {
            date,
            player_a: f[1].to_string(),
            player_b: f[2].to_string(),
            odds_a: odds(f[3])?,
            odds_b: odds(f[4])?,
            winner,
        });
    }
    Ok(out)
}

/// Expected profit per unit staked at decimal odds `odds`.
pub fn expected_profit(p: f64, odds: f64) -> f64 {
    p * odds - 1.0
}

/// A bet is placed only with a positive edge of at most 100%.
pub fn should_bet(p: f64, odds: f64) -> bool {
    let e = expected_profit(p, odds);
    e > 0.0 && e <= 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Back a uniformly random side of every match.
    Chance { seed: u64 },
    /// Logistic kernel `σ(s(x − y))` on the percentile scale.
    BradleyTerry { slope: f64 },
    /// A previously fitted kernel, held fixed.
    Kernel(Kernel),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Chance { .. } => "chance",
            Strategy::BradleyTerry { .. } => "bradley-terry",
            Strategy::Kernel(_) => "kernel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOptions {
    pub window_months: u32,
    pub stake: f64,
    pub bp: BpOptions,
    pub pair_density: PairDensity,
    /// Grid order for the Bradley–Terry kernel.
    pub grid_order: usize,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            window_months: 12,
            stake: 1.0,
            bp: BpOptions::default(),
            pair_density: PairDensity::default(),
            grid_order: DEFAULT_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bet {
    pub date: NaiveDate,
    pub player_a: String,
    pub player_b: String,
    pub side: Side,
    /// Model probability that the backed side wins.
    pub probability: f64,
    pub odds: f64,
    pub stake: f64,
    /// Gross return: `stake · odds` on a win, zero on a loss.
    pub payoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub strategy: String,
    pub matches: usize,
    pub bets: Vec<Bet>,
    /// `(date, Σ payoffs − Σ stakes)` after each match day.
    pub cumulative: Vec<(NaiveDate, f64)>,
    pub total_staked: f64,
    pub total_payoff: f64,
}

impl BacktestLedger {
    pub fn net_return(&self) -> f64 {
        self.total_payoff - self.total_staked
    }

    /// Net return per unit staked; zero when nothing was staked.
    pub fn return_per_stake(&self) -> f64 {
        if self.total_staked > 0.0 {
            self.net_return() / self.total_staked
        } else {
            0.0
        }
    }

    /// Cumulative series divided by the total stake, so strategies that
    /// risk different totals are comparable.
    pub fn normalized_series(&self) -> Vec<(NaiveDate, f64)> {
        let s = if self.total_staked > 0.0 { self.total_staked } else { 1.0 };
        self.cumulative.iter().map(|&(d, v)| (d, v / s)).collect()
    }

    pub fn bets_text(&self) -> String {
        let mut out = String::from("date\tplayer_a\tplayer_b\tside\tprobability\todds\tstake\tpayoff\n");
        for b in &self.bets {
            let side = match b.side {
                Side::A => &b.player_a,
                Side::B => &b.player_b,
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
                b.date, b.player_a, b.player_b, side, b.probability, b.odds, b.stake, b.payoff
            );
        }
        out
    }

    pub fn series_text(&self) -> String {
        let norm = self.normalized_series();
        let mut out = String::from("date\tcumulative\tnormalized\n");
        for (&(d, v), &(_, n)) in self.cumulative.iter().zip(&norm) {
            let _ = writeln!(out, "{d}\t{v}\t{n}");
        }
        out
    }
}

/// Replays the odds stream day by day. Model strategies rerun belief
/// propagation on the matches of the trailing window (excluding the current
/// day) under a fixed kernel, warm-started from the previous day, and back
/// the side whose expected profit lies in `(0, 1]`.
pub fn backtest(records: &[OddsRecord], strategy: &Strategy, opts: &BacktestOptions) -> Result<BacktestLedger> {
    if !(opts.stake > 0.0) {
        return Err(Error::InvalidOption("stake must be positive".into()));
    }
    opts.bp.validate()?;
    let mut records: Vec<&OddsRecord> = records.iter().collect();
    records.sort_by_key(|r| r.date);

    let ids: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| [r.player_a.as_str(), r.player_b.as_str()])
        .collect();
    let labels: Vec<String> = ids.into_iter().map(str::to_string).collect();
    let template = WinMatrix::with_labels(labels);
    let index = |id: &str| template.index_of(id).expect("all ids registered");

    let kernel = match strategy {
        Strategy::Chance { .. } => None,
        Strategy::BradleyTerry { slope } => Some(Kernel::logistic(ChebGrid::new(opts.grid_order)?, *slope)),
        Strategy::Kernel(k) => Some(k.clone()),
    };
    let mut rng = match strategy {
        Strategy::Chance { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };

    let mut ledger = BacktestLedger {
        strategy: strategy.name().to_string(),
        matches: records.len(),
        bets: Vec::new(),
        cumulative: Vec::new(),
        total_staked: 0.0,
        total_payoff: 0.0,
    };
    let mut previous: Option<MessageSet> = None;
    let mut start = 0;
    while start < records.len() {
        let day = records[start].date;
        let end = start + records[start..].iter().take_while(|r| r.date == day).count();
        let posterior = match &kernel {
            Some(k) => {
                let from = day.checked_sub_months(Months::new(opts.window_months)).unwrap_or(NaiveDate::MIN);
                let mut w = template.clone();
                for r in records[..start].iter().filter(|r| r.date >= from) {
                    w.add(index(r.winner_id()), index(r.loser_id()), 1);
                }
                let graph = FactorGraph::new(&w, k);
                let seeded = previous.as_ref().map(|m| graph.carry_over(m));
                let msgs = graph.run(&opts.bp, seeded.as_ref())?;
                let post = graph.posterior(&msgs, k)?;
                previous = Some(msgs);
                Some(post)
            }
            None => None,
        };

        for r in &records[start..end] {
            let choice = match (&posterior, &kernel, rng.as_mut()) {
                (Some(post), Some(k), _) => {
                    let p = win_probability(post, k, Some(index(&r.player_a)), Some(index(&r.player_b)), opts.pair_density)?;
                    let (ea, eb) = (expected_profit(p, r.odds_a), expected_profit(1.0 - p, r.odds_b));
                    let ok_a = should_bet(p, r.odds_a);
                    let ok_b = should_bet(1.0 - p, r.odds_b);
                    match (ok_a, ok_b) {
                        (true, true) if eb > ea => Some((Side::B, 1.0 - p)),
                        (true, _) => Some((Side::A, p)),
                        (false, true) => Some((Side::B, 1.0 - p)),
                        (false, false) => None,
                    }
                }
                (_, _, Some(rng)) => Some(if rng.gen::<bool>() { (Side::A, 0.5) } else { (Side::B, 0.5) }),
                _ => None,
            };
            if let Some((side, probability)) = choice {
                let odds = match side {
                    Side::A => r.odds_a,
                    Side::B => r.odds_b,
                };
                let payoff = if side == r.winner { opts.stake * odds } else { 0.0 };
                ledger.total_staked += opts.stake;
                ledger.total_payoff += payoff;
                ledger.bets.push(Bet {
                    date: r.date,
                    player_a: r.player_a.clone(),
                    player_b: r.player_b.clone(),
                    side,
                    probability,
                    odds,
                    stake: opts.stake,
                    payoff,
                });
            }
        }
        ledger.cumulative.push((day, ledger.total_payoff - ledger.total_staked));
        start = end;
    }
    Ok(ledger)
}

/// Default Bradley–Terry strategy on the percentile scale.
pub fn bradley_terry() -> Strategy {
    Strategy::BradleyTerry { slope: DEFAULT_SLOPE }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::{prop_assert, proptest};

    use super::*;
    use crate::bp::infer;

    fn grid() -> ChebGrid {
        ChebGrid::new(32).unwrap()
    }

    fn posterior(n: usize, games: &[(usize, usize, u64)], k: &Kernel) -> (WinMatrix, SkillPosterior) {
        let mut w = WinMatrix::with_numbered_players(n);
        for &(i, j, c) in games {
            w.add(i, j, c);
        }
        let p = infer(&w, k, &BpOptions::default()).unwrap();
        (w, p)
    }

    #[test]
    fn unseen_players_are_even() {
        let k = Kernel::logistic(grid(), DEFAULT_SLOPE);
        let (_, post) = posterior(3, &[], &k);
        assert_abs_diff_eq!(percentile(&post, 1), 50.0, epsilon = 1e-9);
        let p = win_probability(&post, &k, None, None, PairDensity::default()).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        let p = win_probability(&post, &k, Some(0), Some(2), PairDensity::default()).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_match_matches_quadrature_oracle() {
        // oracle: brute-force midpoint integration of the two-player posterior
        let slope = DEFAULT_SLOPE;
        let k = Kernel::logistic(grid(), slope);
        let (_, post) = posterior(2, &[(0, 1, 1)], &k);
        let b = |x: f64, y: f64| 1.0 / (1.0 + (-slope * (x - y)).exp());
        let n = 2000;
        let h = 1.0 / n as f64;
        let (mut z, mut num, mut mean) = (0.0, 0.0, 0.0);
        for a in 0..n {
            for c in 0..n {
                let (x, y) = ((a as f64 + 0.5) * h, (c as f64 + 0.5) * h);
                let like = b(x, y);
                z += like;
                num += like * b(x, y);
                mean += like * x;
            }
        }
        let p = win_probability(&post, &k, Some(0), Some(1), PairDensity::JointWhenObserved).unwrap();
        assert_abs_diff_eq!(p, num / z, epsilon = 1e-6);
        assert_abs_diff_eq!(percentile(&post, 0), 100.0 * mean / z, epsilon = 1e-4);
        assert!(percentile(&post, 0) > 50.0);
    }

    #[test]
    fn probabilities_are_complementary() {
        let k = Kernel::logistic(grid(), 4.0);
        let (_, post) = posterior(4, &[(0, 1, 3), (1, 0, 1), (1, 2, 2), (3, 2, 1)], &k);
        for mode in [PairDensity::JointWhenObserved, PairDensity::ProductOfMarginals] {
            for i in 0..4 {
                for j in 0..4 {
                    let pij = win_probability(&post, &k, Some(i), Some(j), mode).unwrap();
                    let pji = win_probability(&post, &k, Some(j), Some(i), mode).unwrap();
                    assert_abs_diff_eq!(pij + pji, 1.0, epsilon = 1e-8);
                }
            }
        }
        // observed pair: the joint differs from the product
        let joint = win_probability(&post, &k, Some(0), Some(1), PairDensity::JointWhenObserved).unwrap();
        let product = win_probability(&post, &k, Some(0), Some(1), PairDensity::ProductOfMarginals).unwrap();
        assert!((joint - product).abs() > 1e-4);
    }

    #[test]
    fn ranking_is_sorted_and_relabeling_invariant() {
        let k = Kernel::logistic(grid(), DEFAULT_SLOPE);
        let games = [(0, 1, 2), (1, 2, 1), (0, 2, 1), (3, 0, 1)];
        let (w, post) = posterior(4, &games, &k);
        let table = RankingTable::new(&post, &w);
        assert!(table.rows.windows(2).all(|r| r[0].percentile >= r[1].percentile));
        assert!(table.rows.iter().all(|r| (0.0..=100.0).contains(&r.percentile)));
        // relabel: reverse the index order
        let perm = [3, 2, 1, 0];
        let mut w2 = WinMatrix::with_labels(perm.iter().map(|&i| w.label(i).to_string()).collect());
        for (i, j, c) in w.iter() {
            w2.add(perm[i], perm[j], c);
        }
        let post2 = infer(&w2, &k, &BpOptions::default()).unwrap();
        let table2 = RankingTable::new(&post2, &w2);
        for (a, b) in table.rows.iter().zip(&table2.rows) {
            assert_eq!(a.id, b.id);
            assert_abs_diff_eq!(a.percentile, b.percentile, epsilon = 1e-9);
        }
        assert!(table.to_text().starts_with("rank\tid\tpercentile"));
    }

    #[test]
    fn betting_rule_examples() {
        assert!(!should_bet(0.5, 2.0));
        assert!(should_bet(0.6, 2.0));
        assert_abs_diff_eq!(expected_profit(0.6, 2.0), 0.2, epsilon = 1e-12);
        assert!(!should_bet(0.9, 3.0));
        assert!(should_bet(0.5, 4.0));
        assert!(!should_bet(0.5, 4.0 + 1e-9));
    }

    proptest! {
        #[test]
        fn rule_never_bets_without_edge_or_above_cap(p in 0.0f64..=1.0, o in 1.0001f64..50.0) {
            if should_bet(p, o) {
                prop_assert!(p * o - 1.0 > 0.0 && p * o - 1.0 <= 1.0);
            }
        }
    }

    fn record(day: u32, a: &str, b: &str, oa: f64, ob: f64, a_wins: bool) -> OddsRecord {
        OddsRecord {
            date: NaiveDate::from_ymd_opt(2024, 1, day).unwrap(),
            player_a: a.into(),
            player_b: b.into(),
            odds_a: oa,
            odds_b: ob,
            winner: if a_wins { Side::A } else { Side::B },
        }
    }

    #[test]
    fn odds_parse_and_reject() {
        let text = "date,player_a,player_b,odds_a,odds_b,winner\n2024-01-02,ann,bob,1.5,2.6,bob\n";
        let recs = parse_odds(text.as_bytes()).unwrap();
        assert_eq!(recs, vec![record(2, "ann", "bob", 1.5, 2.6, false)]);
        assert_eq!(recs[0].to_line(), "2024-01-02,ann,bob,1.5,2.6,bob");
        for bad in [
            "2024-01-02,ann,bob,1.0,2.6,bob",
            "2024-13-02,ann,bob,1.5,2.6,bob",
            "2024-01-02,ann,bob,1.5,2.6,cat",
            "2024-01-02,ann,bob,1.5,2.6",
        ] {
            assert!(matches!(parse_odds(bad.as_bytes()), Err(Error::Parse { line: 1, .. })), "{bad}");
        }
        assert!(matches!(parse_odds("2024-01-02,ann,ann,1.5,2.6,ann".as_bytes()), Err(Error::SelfMatch { .. })));
    }

    #[test]
    fn chance_bets_every_match_and_balances() {
        let recs: Vec<OddsRecord> = (1..=20).map(|d| record(d, "a", "b", 1.9, 1.9, d % 3 == 0)).collect();
        let ledger = backtest(&recs, &Strategy::Chance { seed: 1 }, &BacktestOptions::default()).unwrap();
        assert_eq!(ledger.bets.len(), 20);
        let payoffs: f64 = ledger.bets.iter().map(|b| b.payoff).sum();
        let stakes: f64 = ledger.bets.iter().map(|b| b.stake).sum();
        assert_eq!(ledger.cumulative.last().unwrap().1, ledger.total_payoff - ledger.total_staked);
        assert_abs_diff_eq!(ledger.net_return(), payoffs - stakes, epsilon = 1e-12);
        assert_eq!(ledger.cumulative.len(), 20);
    }

    #[test]
    fn model_uses_only_earlier_days() {
        // a beats b every day before; on the day itself the odds make a a value bet
        let mut recs: Vec<OddsRecord> = (1..=5).map(|d| record(d, "a", "b", 1.01, 30.0, true)).collect();
        recs.push(record(6, "a", "b", 1.8, 2.1, true));
        let ledger = backtest(&recs, &bradley_terry(), &BacktestOptions::default()).unwrap();
        let last = ledger.bets.iter().find(|b| b.date.format("%d").to_string() == "06").unwrap();
        assert_eq!(last.side, Side::A);
        assert!(last.probability > 0.6);
        assert_eq!(last.payoff, 1.8);
        assert!(ledger.bets.iter().all(|b| b.probability * b.odds - 1.0 > 0.0));
    }

    #[test]
    fn window_drops_old_matches() {
        let early = OddsRecord {
            date: NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
            ..record(1, "a", "b", 1.01, 30.0, true)
        };
        let late = OddsRecord {
            date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            ..record(1, "a", "b", 1.9, 2.2, true)
        };
        let ledger = backtest(&[early, late], &bradley_terry(), &BacktestOptions::default()).unwrap();
        // two years later the history is outside the window, so p = 0.5 and
        // only b at 2.2 carries an edge
        let bet = ledger.bets.last().unwrap();
        assert_eq!(bet.side, Side::B);
        assert_abs_diff_eq!(bet.probability, 0.5, epsilon = 1e-12);
    }
}
