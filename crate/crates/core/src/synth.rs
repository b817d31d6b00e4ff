//! Synthetic tournaments with closed-form ground-truth kernels.

use std::fmt;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chebkit::ChebGrid;
use crate::error::{Error, Result};
use crate::model::{sigmoid, Kernel, WinMatrix};
use crate::predict::{OddsRecord, Side};

/// Noise floor of the step kernel.
pub const STEP_NOISE: f64 = 0.05;
pub const DEFAULT_PLAYERS: usize = 1024;
pub const DEFAULT_MATCHES_PER_PLAYER: usize = 64;

/// Built-in kernels. Every form satisfies `b(x, y) + b(y, x) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroundTruthKernel {
    /// `σ(5(x − y))`.
    Logistic,
    /// `η + (1 − 2η)·[x > y]`, one half on the diagonal.
    Step,
    /// `(1 + x − y) / 2`.
    Uniform,
    /// `σ((2 + 10xy)(x − y))`.
    Complex,
}

impl GroundTruthKernel {
    pub const ALL: [GroundTruthKernel; 4] = [Self::Logistic, Self::Step, Self::Uniform, Self::Complex];

    pub fn name(self) -> &'static str {
        match self {
            Self::Logistic => "logistic",
            Self::Step => "step",
            Self::Uniform => "uniform",
            Self::Complex => "complex",
        }
    }

    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Logistic => sigmoid(5.0 * (x - y)),
            Self::Step => {
                if x > y {
                    1.0 - STEP_NOISE
                } else if x < y {
                    STEP_NOISE
                } else {
                    0.5
                }
            }
            Self::Uniform => 0.5 * (1.0 + (x - y)),
            Self::Complex => sigmoid((2.0 + 10.0 * x * y) * (x - y)),
        }
    }

    /// Node values on `grid`, clamped like any other kernel.
    pub fn on_grid(self, grid: &ChebGrid) -> Kernel {
        Kernel::from_fn(grid.clone(), |x, y| self.eval(x, y))
    }
}

impl fmt::Display for GroundTruthKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroundTruthKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        builtin_kernel(s)
    }
}

pub fn builtin_kernel(name: &str) -> Result<GroundTruthKernel> {
    GroundTruthKernel::ALL
        .into_iter()
        .find(|k| k.name() == name.trim().to_ascii_lowercase())
        .ok_or_else(|| Error::UnknownKernel(name.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    /// Matches per player.
    pub k: usize,
    pub kernel: GroundTruthKernel,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_PLAYERS,
            k: DEFAULT_MATCHES_PER_PLAYER,
            kernel: GroundTruthKernel::Logistic,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || (self.n * self.k) % 2 == 1 {
            return Err(Error::ImpossiblePairing { n: self.n, k: self.k });
        }
        Ok(())
    }
}

/// One simulated game as player indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchRecord {
    pub winner: usize,
    pub loser: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tournament {
    pub matches: Vec<MatchRecord>,
    pub wins: WinMatrix,
    pub skills: Vec<f64>,
}

impl Tournament {
    /// Match file lines `winner,loser`, one per game.
    pub fn match_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.matches
            .iter()
            .map(|m| format!("{},{}", self.wins.label(m.winner), self.wins.label(m.loser)))
    }

    /// Sidecar lines `id,skill`.
    pub fn skill_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.skills
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{},{s}", self.wins.label(i)))
    }
}

/// Draws uniform skills, a `k`-regular multigraph and one outcome per edge.
///
/// Even `n` uses `k` independent uniform perfect matchings. Odd `n` (which
/// forces even `k`) uses `k/2` random Hamiltonian cycles.
pub fn generate(config: &SynthConfig) -> Result<Tournament> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let skills: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut edges = Vec::with_capacity(n * config.k / 2);
    if n.is_multiple_of(2) {
        for _ in 0..config.k {
            order.shuffle(&mut rng);
            edges.extend(order.chunks(2).map(|c| (c[0], c[1])));
        }
    } else {
        for _ in 0..config.k / 2 {
            order.shuffle(&mut rng);
            edges.extend((0..n).map(|t| (order[t], order[(t + 1) % n])));
        }
    }

    let mut wins = WinMatrix::with_numbered_players(n);
    let matches = edges
        .into_iter()
        .map(|(a, b)| {
            let p = config.kernel.eval(skills[a], skills[b]);
            let m = if rng.gen::<f64>() < p {
                MatchRecord { winner: a, loser: b }
            } else {
                MatchRecord { winner: b, loser: a }
            };
            wins.add(m.winner, m.loser, 1);
            m
        })
        .collect();
    Ok(Tournament { matches, wins, skills })
}

/// A bookmaker pricing matches between players of known skill.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsConfig {
    pub players: usize,
    pub matches: usize,
    /// Matches are spread evenly over this many consecutive days.
    pub days: usize,
    pub start: NaiveDate,
    pub kernel: GroundTruthKernel,
    /// Overround `m`: implied probabilities sum to `1 + m`.
    pub margin: f64,
    /// Each side's true probability is scaled by an independent factor
    /// uniform in `[1 − noise, 1 + noise]` before normalizing.
    pub noise: f64,
    /// Opponents are drawn among players whose skill differs by less than
    /// this, which keeps every quoted price above 1.
    pub max_gap: f64,
    pub seed: u64,
}

impl Default for OddsConfig {
    fn default() -> Self {
        Self {
            players: 100,
            matches: 10_000,
            days: 200,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            kernel: GroundTruthKernel::Logistic,
            margin: 0.05,
            noise: 0.0,
            max_gap: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OddsStream {
    pub records: Vec<OddsRecord>,
    /// True win probability of `player_a` for each record.
    pub true_probability: Vec<f64>,
    pub skills: Vec<f64>,
    pub labels: Vec<String>,
}

/// Simulates a time-ordered odds file together with the truth behind it.
pub fn generate_odds(config: &OddsConfig) -> Result<OddsStream> {
    if config.players < 2 || config.days == 0 {
        return Err(Error::InvalidOption("need at least two players and one day".into()));
    }
    if !(0.0..1.0).contains(&config.noise) || !(config.margin >= 0.0) || !(config.max_gap > 0.0) {
        return Err(Error::InvalidOption("noise must lie in [0, 1), margin ≥ 0, max_gap > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let skills: Vec<f64> = (0..config.players).map(|_| rng.gen::<f64>()).collect();
    let labels = WinMatrix::with_numbered_players(config.players).labels().to_vec();
    let mut records = Vec::with_capacity(config.matches);
    let mut truth = Vec::with_capacity(config.matches);
    let mut t = 0;
    while records.len() < config.matches {
        let a = rng.gen_range(0..config.players);
        let b = rng.gen_range(0..config.players);
        if a == b || (skills[a] - skills[b]).abs() >= config.max_gap {
            continue;
        }
        let p = config.kernel.eval(skills[a], skills[b]);
        let qa = p * (1.0 + config.noise * rng.gen_range(-1.0..=1.0));
        let qb = (1.0 - p) * (1.0 + config.noise * rng.gen_range(-1.0..=1.0));
        let pa = qa / (qa + qb);
        let (odds_a, odds_b) = (1.0 / ((1.0 + config.margin) * pa), 1.0 / ((1.0 + config.margin) * (1.0 - pa)));
        if !(odds_a > 1.0 && odds_b > 1.0) {
            return Err(Error::InvalidOption(format!(
                "max_gap {} allows prices at or below 1 for this kernel and margin",
                config.max_gap
            )));
        }
        let day = (t * config.days / config.matches) as u64;
        let date = config
            .start
            .checked_add_days(Days::new(day))
            .ok_or_else(|| Error::InvalidOption("date out of range".into()))?;
        let winner = if rng.gen::<f64>() < p { Side::A } else { Side::B };
        records.push(OddsRecord {
            date,
            player_a: labels[a].clone(),
            player_b: labels[b].clone(),
            odds_a,
            odds_b,
            winner,
        });
        truth.push(p);
        t += 1;
    }
    Ok(OddsStream {
        records,
        true_probability: truth,
        skills,
        labels,
    })
}
