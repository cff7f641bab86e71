//! Numerical laboratory for fast learning rates of empirical risk
//! minimization under heavy-tailed losses, instantiated on k-means
//! quantization.
//!
//! * [`distributions`]: source laws, seeded samplers and moment oracles.
//! * [`quantization`]: the distortion loss, risk oracles and ERM solvers.
//! * [`bounds`]: closed-form evaluators for the rate exponents and the
//!   concentration and interpolation inequalities they rest on.
//! * [`bernstein`]: probing and fitting of the multi-scale Bernstein
//!   condition.
//! * [`nets`]: grid ε-nets over codebooks and entropy checks.
//! * [`experiments`]: the end-to-end rate experiment runner.

pub mod bernstein;
pub mod bounds;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod io;
pub mod nets;
pub mod numeric;
pub mod quantization;
pub mod rng;

pub use distributions::{moment, sample, DistributionSpec, Family, Sample};
pub use error::{Error, Result};
pub use quantization::{distortion, empirical_risk, erm, Codebook, ErmStrategy, RiskOracle};

