//! Joint inference of latent skill percentiles and the win-probability
//! kernel `b(x, y)` from pairwise win–loss records.
//!
//! Skills live on `[0, 1]` under a uniform prior. For a fixed kernel the
//! posterior is approximated by belief propagation on Chebyshev grids
//! ([`bp`]); the kernel itself is refitted by expectation–maximization
//! ([`em`]) with either a monotone Chebyshev prior ([`mstep_cheb`]) or an
//! antisymmetrized neural network ([`mstep_nn`]).

pub mod bp;
pub mod chebkit;
#[cfg(feature = "cli")]
pub mod cli;
pub mod em;
pub mod error;
pub mod io;
pub mod model;
pub mod mstep_cheb;
pub mod mstep_nn;
pub mod predict;
pub mod synth;

pub use bp::{BpOptions, MessageSet, Schedule, SkillPosterior};
pub use chebkit::{ChebFun1D, ChebFun2D, ChebGrid};
pub use em::{em_fit, BackendKind, EmFit, EmOptions, QGrid};
pub use error::{Error, Result};
pub use model::{Density, Kernel, WinMatrix};
pub use predict::{win_probability, RankingTable};
pub use synth::{GroundTruthKernel, SynthConfig};
