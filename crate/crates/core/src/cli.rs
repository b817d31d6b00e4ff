//! Command-line front end.
//!
//! Every option may also come from a TOML file given with `--config`, using
//! the long flag name as key (`max-iters = 20`). Flags win over the file.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bp::{BpOptions, FactorGraph};
use crate::chebkit::{ChebGrid, DEFAULT_ORDER};
use crate::em::{em_fit, BackendKind, EmFit, EmOptions};
use crate::error::{Error, Result};
use crate::io::{
    kernel_table, log_odds_table, marginals_table, parse_kernel_table, read_matches, read_to_string, write_file,
};
use crate::model::{Kernel, WinMatrix, DEFAULT_SLOPE};
use crate::mstep_cheb::DEFAULT_P;
use crate::predict::{
    backtest, parse_odds, win_probability, BacktestOptions, PairDensity, RankingTable, Strategy, ODDS_HEADER,
};
use crate::synth::{builtin_kernel, generate, generate_odds, OddsConfig, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "kernelrank", version, about = "Skill percentiles and win-probability kernels from match results")]
pub struct Cli {
    /// TOML file supplying defaults for any option
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit skills and kernel by EM; writes kernel, marginals, ranking and a report
    Fit(FitArgs),
    /// Rank players under a fixed kernel
    Rank(RankArgs),
    /// Win probabilities for player pairs
    Predict(PredictArgs),
    /// Simulate a tournament (and optionally a priced odds stream)
    Synth(SynthArgs),
    /// Replay an odds file with a betting strategy
    Backtest(BacktestArgs),
    /// Write a kernel table from a built-in form or an existing table
    ExportKernel(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct BpArgs {
    /// Chebyshev grid order L
    #[arg(long)]
    pub order: Option<usize>,
    /// Logistic slope s on the percentile scale
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long)]
    pub bp_tol: Option<f64>,
    #[arg(long)]
    pub bp_max_sweeps: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Match file: `winner,loser[,count]` per line
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `chebyshev` or `neural`
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Exponent of the monotone parameterization
    #[arg(long)]
    pub p: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nn_samples: Option<usize>,
    #[arg(long)]
    pub nn_epochs: Option<usize>,
    /// Hidden layer widths, comma separated
    #[arg(long)]
    pub nn_hidden: Option<String>,
    #[command(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Kernel table; the logistic kernel is used when absent
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Pair `a,b`; repeatable
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    /// File of `a,b` lines
    #[arg(long)]
    pub pairs_file: Option<PathBuf>,
    /// Integrate against the product of marginals even for pairs that met
    #[arg(long)]
    pub product: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// logistic, step, uniform or complex
    #[arg(long = "truth")]
    pub truth: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write this many priced matches to odds.csv
    #[arg(long)]
    pub odds: Option<usize>,
    #[arg(long)]
    pub odds_players: Option<usize>,
    #[arg(long)]
    pub odds_days: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub max_gap: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub odds: Option<PathBuf>,
    /// chance, bradley-terry or kernel
    #[arg(long)]
    pub strategy: Option<String>,
    /// Kernel table for the kernel strategy
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window_months: Option<u32>,
    #[arg(long)]
    pub stake: Option<f64>,
    #[arg(long)]
    pub product: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub bp: BpArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Built-in kernel name, or `bradley-terry` for the logistic baseline
    #[arg(long)]
    pub builtin: Option<String>,
    /// Existing kernel table to re-export
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Write log-odds f instead of b
    #[arg(long)]
    pub log_odds: bool,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub matches: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub kernel: Option<PathBuf>,
    pub odds: Option<PathBuf>,
    pub backend: Option<String>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub p: Option<u32>,
    pub seed: Option<u64>,
    pub nn_samples: Option<usize>,
    pub nn_epochs: Option<usize>,
    pub nn_hidden: Option<String>,
    pub order: Option<usize>,
    pub slope: Option<f64>,
    pub bp_tol: Option<f64>,
    pub bp_max_sweeps: Option<usize>,
    pub damping: Option<f64>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub truth: Option<String>,
    pub strategy: Option<String>,
    pub window_months: Option<u32>,
    pub stake: Option<f64>,
    pub margin: Option<f64>,
    pub noise: Option<f64>,
    pub max_gap: Option<f64>,
    pub odds_players: Option<usize>,
    pub odds_days: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.message().to_string(),
        })
    }
}

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::InvalidOption(format!("--{name} is required")))
}

fn bp_options(args: &BpArgs, cfg: &FileConfig) -> BpOptions {
    let d = BpOptions::default();
    BpOptions {
        tol: args.bp_tol.or(cfg.bp_tol).unwrap_or(d.tol),
        max_sweeps: args.bp_max_sweeps.or(cfg.bp_max_sweeps).unwrap_or(d.max_sweeps),
        damping: args.damping.or(cfg.damping).unwrap_or(d.damping),
        schedule: d.schedule,
    }
}

/// The kernel table at `path`, or the logistic kernel on the requested grid.
fn load_kernel(path: Option<&PathBuf>, args: &BpArgs, cfg: &FileConfig) -> Result<Kernel> {
    match path {
        Some(p) => parse_kernel_table(&read_to_string(p)?),
        None => Ok(Kernel::logistic(
            ChebGrid::new(args.order.or(cfg.order).unwrap_or(DEFAULT_ORDER))?,
            args.slope.or(cfg.slope).unwrap_or(DEFAULT_SLOPE),
        )),
    }
}

fn non_empty(w: WinMatrix) -> Result<WinMatrix> {
    if w.is_empty() {
        Err(Error::NoMatches)
    } else {
        Ok(w)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| Error::InvalidOption(format!("bad hidden width {w:?}")))
        })
        .collect()
}

pub fn fit_options(args: &FitArgs, cfg: &FileConfig) -> Result<EmOptions> {
    let mut opts = EmOptions::default();
    if let Some(b) = args.backend.as_ref().or(cfg.backend.as_ref()) {
        opts.backend = b.parse::<BackendKind>()?;
    }
    opts.grid_order = args.bp.order.or(cfg.order).unwrap_or(DEFAULT_ORDER);
    opts.initial_slope = args.bp.slope.or(cfg.slope).unwrap_or(DEFAULT_SLOPE);
    opts.tol = args.tol.or(cfg.tol).unwrap_or(opts.tol);
    opts.max_iters = args.max_iters.or(cfg.max_iters).unwrap_or(opts.max_iters);
    opts.p = args.p.or(cfg.p).unwrap_or(DEFAULT_P);
    opts.bp = bp_options(&args.bp, cfg);
    opts.nn.seed = args.seed.or(cfg.seed).unwrap_or(0);
    opts.nn.samples = args.nn_samples.or(cfg.nn_samples).or(opts.nn.samples);
    opts.nn.epochs = args.nn_epochs.or(cfg.nn_epochs).unwrap_or(opts.nn.epochs);
    if let Some(h) = args.nn_hidden.as_ref().or(cfg.nn_hidden.as_ref()) {
        opts.nn.hidden = parse_hidden(h)?;
    }
    opts.nn.validate()?;
    Ok(opts)
}

fn fit_report(fit: &EmFit, opts: &EmOptions, w: &WinMatrix) -> String {
    let s = &fit.state;
    let mut out = String::new();
    let _ = writeln!(out, "backend\t{}", opts.backend);
    let _ = writeln!(out, "players\t{}", w.n());
    let _ = writeln!(out, "matches\t{}", w.total());
    let _ = writeln!(out, "grid_order\t{}", opts.grid_order);
    let _ = writeln!(out, "iterations\t{}", s.iteration);
    let _ = writeln!(out, "converged\t{}", s.converged);
    let _ = writeln!(out, "kernel_delta\t{}", s.kernel_delta);
    let _ = writeln!(out, "log_evidence\t{}", fit.posterior.log_evidence());
    let _ = writeln!(out, "\niteration\tbound\tsurrogate");
    for (i, (b, q)) in s.bound_trace.iter().zip(&s.surrogate_trace).enumerate() {
        let _ = writeln!(out, "{}\t{b}\t{q}", i + 1);
    }
    out
}

fn cmd_fit(args: &FitArgs, cfg: &FileConfig) -> Result<()> {
    let path = required(args.matches.clone(), cfg.matches.clone(), "matches")?;
    let out = required(args.out.clone(), cfg.out.clone(), "out")?;
    let opts = fit_options(args, cfg)?;
    let w = non_empty(read_matches(&path)?)?;
    let fit = em_fit(&w, &opts)?;
    write_file(&out.join("kernel.tsv"), &kernel_table(&fit.kernel))?;
    write_file(&out.join("log_odds.tsv"), &log_odds_table(&fit.kernel))?;
    write_file(&out.join("marginals.tsv"), &marginals_table(&fit.posterior, &w))?;
    write_file(&out.join("ranking.tsv"), &RankingTable::new(&fit.posterior, &w).to_text())?;
    write_file(&out.join("report.tsv"), &fit_report(&fit, &opts, &w))?;
    if let Some(net) = &fit.network {
        write_file(&out.join("network.txt"), &net.to_text())?;
    }
    Ok(())
}

fn posterior_for(
    matches: &Path,
    kernel: &Kernel,
    bp: &BpOptions,
) -> Result<(WinMatrix, crate::bp::SkillPosterior)> {
    let w = read_matches(matches)?;
    let graph = FactorGraph::new(&w, kernel);
    let msgs = graph.run(bp, None)?;
    let post = graph.posterior(&msgs, kernel)?;
    Ok((w, post))
}

fn cmd_rank(args: &RankArgs, cfg: &FileConfig) -> Result<()> {
    let path = required(args.matches.clone(), cfg.matches.clone(), "matches")?;
    let kernel = load_kernel(args.kernel.as_ref().or(cfg.kernel.as_ref()), &args.bp, cfg)?;
    let (w, post) = posterior_for(&path, &kernel, &bp_options(&args.bp, cfg))?;
    let w = non_empty(w)?;
    emit(args.out.as_deref(), &RankingTable::new(&post, &w).to_text())
}

fn cmd_predict(args: &PredictArgs, cfg: &FileConfig) -> Result<()> {
    let path = required(args.matches.clone(), cfg.matches.clone(), "matches")?;
    let kernel = load_kernel(args.kernel.as_ref().or(cfg.kernel.as_ref()), &args.bp, cfg)?;
    let (w, post) = posterior_for(&path, &kernel, &bp_options(&args.bp, cfg))?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut lines: Vec<(usize, String)> = args.pairs.iter().cloned().enumerate().collect();
    if let Some(p) = &args.pairs_file {
        lines.extend(read_to_string(p)?.lines().map(str::to_string).enumerate());
    }
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected `a,b`, found {line:?}"),
            });
        }
        pairs.push((f[0].to_string(), f[1].to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidOption("no pairs given (use --pair a,b or --pairs-file)".into()));
    }
    let mode = if args.product {
        PairDensity::ProductOfMarginals
    } else {
        PairDensity::JointWhenObserved
    };
    let mut out = String::from("player_a\tplayer_b\tprobability\n");
    for (a, b) in pairs {
        let p = win_probability(&post, &kernel, w.index_of(&a), w.index_of(&b), mode)?;
        let _ = writeln!(out, "{a}\t{b}\t{p:.6}");
    }
    emit(args.out.as_deref(), &out)
}

fn cmd_synth(args: &SynthArgs, cfg: &FileConfig) -> Result<()> {
    let out = required(args.out.clone(), cfg.out.clone(), "out")?;
    let d = SynthConfig::default();
    let truth = match args.truth.as_ref().or(cfg.truth.as_ref()) {
        Some(name) => builtin_kernel(name)?,
        None => d.kernel,
    };
    let seed = args.seed.or(cfg.seed).unwrap_or(d.seed);
    let config = SynthConfig {
        n: args.n.or(cfg.n).unwrap_or(d.n),
        k: args.k.or(cfg.k).unwrap_or(d.k),
        kernel: truth,
        seed,
    };
    let t = generate(&config)?;
    let mut matches = String::new();
    for line in t.match_lines() {
        matches.push_str(&line);
        matches.push('\n');
    }
    write_file(&out.join("matches.csv"), &matches)?;
    let mut skills = String::from("id,skill\n");
    for line in t.skill_lines() {
        skills.push_str(&line);
        skills.push('\n');
    }
    write_file(&out.join("skills.csv"), &skills)?;
    let grid = ChebGrid::new(args.order.or(cfg.order).unwrap_or(DEFAULT_ORDER))?;
    write_file(&out.join("truth_kernel.tsv"), &kernel_table(&truth.on_grid(&grid)))?;

    if let Some(count) = args.odds {
        let od = OddsConfig::default();
        let oc = OddsConfig {
            players: args.odds_players.or(cfg.odds_players).unwrap_or(od.players),
            matches: count,
            days: args.odds_days.or(cfg.odds_days).unwrap_or(od.days),
            kernel: truth,
            margin: args.margin.or(cfg.margin).unwrap_or(od.margin),
            noise: args.noise.or(cfg.noise).unwrap_or(od.noise),
            max_gap: args.max_gap.or(cfg.max_gap).unwrap_or(od.max_gap),
            seed: seed.wrapping_add(1),
            ..od
        };
        let stream = generate_odds(&oc)?;
        let mut text = format!("{ODDS_HEADER}\n");
        for r in &stream.records {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        write_file(&out.join("odds.csv"), &text)?;
    }
    Ok(())
}

fn cmd_backtest(args: &BacktestArgs, cfg: &FileConfig) -> Result<()> {
    let path = required(args.odds.clone(), cfg.odds.clone(), "odds")?;
    let records = parse_odds(read_to_string(&path)?.as_bytes())?;
    let name = args
        .strategy
        .clone()
        .or(cfg.strategy.clone())
        .unwrap_or_else(|| "kernel".into());
    let d = BacktestOptions::default();
    let opts = BacktestOptions {
        window_months: args.window_months.or(cfg.window_months).unwrap_or(d.window_months),
        stake: args.stake.or(cfg.stake).unwrap_or(d.stake),
        bp: bp_options(&args.bp, cfg),
        pair_density: if args.product {
            PairDensity::ProductOfMarginals
        } else {
            PairDensity::JointWhenObserved
        },
        grid_order: args.bp.order.or(cfg.order).unwrap_or(d.grid_order),
    };
    let strategy = match name.as_str() {
        "chance" => Strategy::Chance {
            seed: args.seed.or(cfg.seed).unwrap_or(0),
        },
        "bradley-terry" | "bt" => Strategy::BradleyTerry {
            slope: args.bp.slope.or(cfg.slope).unwrap_or(DEFAULT_SLOPE),
        },
        "kernel" => {
            let p = required(args.kernel.clone(), cfg.kernel.clone(), "kernel")?;
            Strategy::Kernel(parse_kernel_table(&read_to_string(&p)?)?)
        }
        other => return Err(Error::InvalidOption(format!("unknown strategy {other:?}"))),
    };
    let ledger = backtest(&records, &strategy, &opts)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "strategy\t{}", ledger.strategy);
    let _ = writeln!(summary, "matches\t{}", ledger.matches);
    let _ = writeln!(summary, "bets\t{}", ledger.bets.len());
    let _ = writeln!(summary, "total_staked\t{}", ledger.total_staked);
    let _ = writeln!(summary, "total_payoff\t{}", ledger.total_payoff);
    let _ = writeln!(summary, "net_return\t{}", ledger.net_return());
    let _ = writeln!(summary, "return_per_stake\t{}", ledger.return_per_stake());
    if let Some(out) = args.out.clone().or(cfg.out.clone()) {
        write_file(&out.join("bets.tsv"), &ledger.bets_text())?;
        write_file(&out.join("series.tsv"), &ledger.series_text())?;
        write_file(&out.join("summary.tsv"), &summary)?;
    }
    emit(None, &summary)
}

fn cmd_export(args: &ExportArgs, cfg: &FileConfig) -> Result<()> {
    let order = args.order.or(cfg.order).unwrap_or(DEFAULT_ORDER);
    let kernel = match (&args.from, &args.builtin) {
        (Some(p), _) => parse_kernel_table(&read_to_string(p)?)?,
        (None, Some(name)) if name == "bradley-terry" || name == "bt" => {
            Kernel::logistic(ChebGrid::new(order)?, args.slope.or(cfg.slope).unwrap_or(DEFAULT_SLOPE))
        }
        (None, Some(name)) => builtin_kernel(name)?.on_grid(&ChebGrid::new(order)?),
        (None, None) => return Err(Error::InvalidOption("give --builtin NAME or --from FILE".into())),
    };
    let text = if args.log_odds {
        log_odds_table(&kernel)
    } else {
        kernel_table(&kernel)
    };
    emit(args.out.as_deref().or(cfg.out.as_deref()), &text)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cfg),
        Command::Rank(a) => cmd_rank(a, &cfg),
        Command::Predict(a) => cmd_predict(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Backtest(a) => cmd_backtest(a, &cfg),
        Command::ExportKernel(a) => cmd_export(a, &cfg),
    }
}

/// Parses arguments and runs; returns the process exit code. Failures print
/// a single `error[kind]: message` line to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            1
        }
    }
}
