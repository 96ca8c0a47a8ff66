//! Optimal combination of discrete probabilistic forecasts.
//!
//! A discrete predictive distribution is a finite weighted sample (an
//! ensemble forecast). Embedding such distributions into the reproducing
//! kernel Hilbert space of a positive definite kernel turns "find the
//! pooling weights that minimise a kernel score over training data" into a
//! convex quadratic program over the probability simplex. This crate
//! implements that pipeline end to end:
//!
//! * [`kernels`] — energy, Gaussian and chained kernels; discrete
//!   distributions and their Gram sums;
//! * [`scoring`] — kernel score, CRPS, energy score, squared MMD, weighted
//!   empirical scores;
//! * [`pooling`] — equal, per-model, per-member and per-order-statistic
//!   linear pools over panels of component forecasts;
//! * [`qp`] — assembly of the quadratic coefficients and a deterministic
//!   accelerated projected-gradient solver on the simplex;
//! * [`recalibration`] — member-by-member post-processing on the
//!   square-root scale;
//! * [`evaluation`] — PIT histograms, grouped score means, skill,
//!   per-member MSE, report CSVs;
//! * [`data`] — panel CSV I/O, the seeded synthetic-scenario generator,
//!   fitted-model persistence;
//! * [`cli`] — the `kpool` command-line pipeline.
//!
//! The numeric core is generic over the [`scalar::Scalar`] floating-point
//! type; the aliases below pin the default `f64` instantiation used by the
//! data layer and the CLI.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod pooling;
pub mod qp;
pub mod recalibration;
pub mod rng;
pub mod scalar;
pub mod scoring;

pub use error::{Error, Result};

/// Default double-precision instantiations of the generic core.
pub type Point = kernels::Point<f64>;
pub type KernelSpec = kernels::KernelSpec<f64>;
pub type KernelConfig = kernels::KernelConfig<f64>;
pub type DiscreteDistribution = kernels::DiscreteDistribution<f64>;
pub type AlphaWeights = scoring::AlphaWeights<f64>;
pub type ForecastCase = pooling::ForecastCase<f64>;
pub type Panel = pooling::Panel<f64>;
pub type WeightVector = pooling::WeightVector<f64>;
pub type QpProblem = qp::QpProblem<f64>;
pub type SolverConfig = qp::SolverConfig<f64>;
pub type Solution = qp::Solution<f64>;
pub type MbmParams = recalibration::MbmParams<f64>;
pub type PitValue = evaluation::PitValue<f64>;
