//! Heavy- and light-tailed source laws with exact moment oracles.
//!
//! A [`DistributionSpec`] is either a finite mixture of point masses in
//! `R^d` or a product of `d` iid copies of a one-dimensional family. Samples
//! are drawn from per-point ChaCha streams so that point `i` depends only on
//! `(seed, i)`.

mod moments;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, LogNormal, Normal, Pareto, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

pub use moments::{certified_envelope_bound, envelope_bound, moment};

fn one() -> f64 {
    1.0
}

/// One support point of a [`Family::PointMassMixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn new(location: Vec<f64>, weight: f64) -> Self {
        Self { location, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    PointMassMixture {
        atoms: Vec<Atom>,
    },
    /// Classical Pareto on `[scale, ∞)`; with `symmetric` the magnitude gets
    /// an independent fair sign.
    Pareto {
        shape: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        symmetric: bool,
    },
    StudentT {
        nu: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::PointMassMixture { .. } => "point_mass_mixture",
            Family::Pareto { .. } => "pareto",
            Family::StudentT { .. } => "student_t",
            Family::Lognormal { .. } => "lognormal",
            Family::Gaussian { .. } => "gaussian",
            Family::Uniform { .. } => "uniform",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    #[serde(flatten)]
    family: Family,
    dim: usize,
}

/// A validated source law: family, parameters and dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct DistributionSpec {
    family: Family,
    dim: usize,
}

impl TryFrom<RawSpec> for DistributionSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        DistributionSpec::new(raw.family, raw.dim)
    }
}

impl From<DistributionSpec> for RawSpec {
    fn from(spec: DistributionSpec) -> Self {
        RawSpec {
            family: spec.family,
            dim: spec.dim,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite, got {v}")))
    }
}

impl DistributionSpec {
    pub fn new(family: Family, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim must be >= 1"));
        }
        match &family {
            Family::PointMassMixture { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::param("mixture needs at least one atom"));
                }
                let mut total = 0.0;
                for atom in atoms {
                    if atom.location.len() != dim {
                        return Err(Error::Dimension {
                            expected: dim,
                            got: atom.location.len(),
                        });
                    }
                    if !(atom.weight >= 0.0) || !atom.weight.is_finite() {
                        return Err(Error::param(format!(
                            "mixture weights must be nonnegative, got {}",
                            atom.weight
                        )));
                    }
                    for &x in &atom.location {
                        finite("atom coordinate", x)?;
                    }
                    total += atom.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::param(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
            }
            Family::Pareto { shape, scale, .. } => {
                positive("pareto shape", *shape)?;
                positive("pareto scale", *scale)?;
            }
            Family::StudentT { nu, scale } => {
                positive("student-t nu", *nu)?;
                positive("student-t scale", *scale)?;
            }
            Family::Lognormal { mu, sigma } => {
                finite("lognormal mu", *mu)?;
                positive("lognormal sigma", *sigma)?;
            }
            Family::Gaussian { mean, std } => {
                finite("gaussian mean", *mean)?;
                positive("gaussian std", *std)?;
            }
            Family::Uniform { low, high } => {
                finite("uniform low", *low)?;
                finite("uniform high", *high)?;
                if !(low < high) {
                    return Err(Error::param(format!(
                        "uniform requires low < high, got [{low}, {high}]"
                    )));
                }
            }
        }
        Ok(Self { family, dim })
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new(Family::Gaussian { mean, std }, 1)
    }

    pub fn pareto(shape: f64, scale: f64) -> Result<Self> {
        Self::new(
            Family::Pareto {
                shape,
                scale,
                symmetric: false,
            },
            1,
        )
    }

    pub fn student_t(nu: f64) -> Result<Self> {
        Self::new(Family::StudentT { nu, scale: 1.0 }, 1)
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        Self::new(Family::Uniform { low, high }, 1)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(Family::Lognormal { mu, sigma }, 1)
    }

    /// One-dimensional mixture from `(location, weight)` pairs.
    pub fn point_masses(atoms: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            Family::PointMassMixture {
                atoms: atoms.iter().map(|&(x, w)| Atom::new(vec![x], w)).collect(),
            },
            1,
        )
    }

    /// Same law in `dim` dimensions (iid product). Mixtures keep their own
    /// dimension and cannot be re-dimensioned.
    pub fn with_dim(self, dim: usize) -> Result<Self> {
        if matches!(self.family, Family::PointMassMixture { .. }) && dim != self.dim {
            return Err(Error::param("point-mass mixtures fix their own dimension"));
        }
        Self::new(self.family, dim)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.family, Family::PointMassMixture { .. })
    }

    /// Supremum of the orders `p` with `E‖X‖^p < ∞`.
    pub fn max_finite_moment_order(&self) -> f64 {
        match self.family {
            Family::Pareto { shape, .. } => shape,
            Family::StudentT { nu, .. } => nu,
            _ => f64::INFINITY,
        }
    }

    /// Mean vector, or `None` when the first moment is infinite.
    pub fn mean(&self) -> Option<Vec<f64>> {
        let coord = match &self.family {
            Family::PointMassMixture { atoms } => {
                let mut m = vec![0.0; self.dim];
                for a in atoms {
                    for (mj, xj) in m.iter_mut().zip(&a.location) {
                        *mj += a.weight * xj;
                    }
                }
                return Some(m);
            }
            Family::Pareto {
                shape,
                scale,
                symmetric,
            } => {
                if *shape <= 1.0 {
                    return None;
                }
                if *symmetric {
                    0.0
                } else {
                    shape * scale / (shape - 1.0)
                }
            }
            Family::StudentT { nu, .. } => {
                if *nu <= 1.0 {
                    return None;
                }
                0.0
            }
            Family::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Family::Gaussian { mean, .. } => *mean,
            Family::Uniform { low, high } => 0.5 * (low + high),
        };
        Some(vec![coord; self.dim])
    }

    /// Trace of the covariance matrix, `E‖X − EX‖²`, or `None` when infinite.
    pub fn total_variance(&self) -> Option<f64> {
        let mean = self.mean()?;
        match &self.family {
            Family::PointMassMixture { atoms } => Some(
                atoms
                    .iter()
                    .map(|a| {
                        a.weight
                            * a.location
                                .iter()
                                .zip(&mean)
                                .map(|(x, m)| (x - m) * (x - m))
                                .sum::<f64>()
                    })
                    .sum(),
            ),
            Family::Pareto {
                shape,
                scale,
                symmetric,
            } => {
                if *shape <= 2.0 {
                    return None;
                }
                let second = shape * scale * scale / (shape - 2.0);
                let m = if *symmetric { 0.0 } else { mean[0] };
                Some(self.dim as f64 * (second - m * m))
            }
            Family::StudentT { nu, scale } => {
                if *nu <= 2.0 {
                    return None;
                }
                Some(self.dim as f64 * scale * scale * nu / (nu - 2.0))
            }
            Family::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                Some(self.dim as f64 * s2.exp_m1() * (2.0 * mu + s2).exp())
            }
            Family::Gaussian { std, .. } => Some(self.dim as f64 * std * std),
            Family::Uniform { low, high } => Some(self.dim as f64 * (high - low).powi(2) / 12.0),
        }
    }
}

/// Prepared per-coordinate sampler.
enum Sampler {
    Mixture(WeightedIndex<f64>, Vec<Atom>),
    Pareto(Pareto<f64>, bool),
    StudentT(StudentT<f64>, f64),
    Lognormal(LogNormal<f64>),
    Gaussian(Normal<f64>),
    Uniform(Uniform<f64>),
}

impl Sampler {
    fn new(spec: &DistributionSpec) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::param(e.to_string());
        Ok(match spec.family.clone() {
            Family::PointMassMixture { atoms } => {
                let index = WeightedIndex::new(atoms.iter().map(|a| a.weight))
                    .map_err(|e| bad(&e))?;
                Sampler::Mixture(index, atoms)
            }
            Family::Pareto {
                shape,
                scale,
                symmetric,
            } => Sampler::Pareto(Pareto::new(scale, shape).map_err(|e| bad(&e))?, symmetric),
            Family::StudentT { nu, scale } => {
                Sampler::StudentT(StudentT::new(nu).map_err(|e| bad(&e))?, scale)
            }
            Family::Lognormal { mu, sigma } => {
                Sampler::Lognormal(LogNormal::new(mu, sigma).map_err(|e| bad(&e))?)
            }
            Family::Gaussian { mean, std } => {
                Sampler::Gaussian(Normal::new(mean, std).map_err(|e| bad(&e))?)
            }
            Family::Uniform { low, high } => {
                Sampler::Uniform(Uniform::new(low, high).map_err(|e| bad(&e))?)
            }
        })
    }

    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Sampler::Mixture(index, atoms) => {
                out.copy_from_slice(&atoms[index.sample(rng)].location);
            }
            Sampler::Pareto(d, symmetric) => {
                for x in out {
                    let v = d.sample(rng);
                    *x = if *symmetric && rng.random::<bool>() { -v } else { v };
                }
            }
            Sampler::StudentT(d, scale) => {
                for x in out {
                    *x = scale * d.sample(rng);
                }
            }
            Sampler::Lognormal(d) => out.iter_mut().for_each(|x| *x = d.sample(rng)),
            Sampler::Gaussian(d) => out.iter_mut().for_each(|x| *x = d.sample(rng)),
            Sampler::Uniform(d) => out.iter_mut().for_each(|x| *x = d.sample(rng)),
        }
    }
}

/// `n` iid points of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    points: Vec<f64>,
    dim: usize,
    seed: u64,
    spec: Option<DistributionSpec>,
}

impl Sample {
    /// Wraps externally supplied row-major points.
    pub fn from_points(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::param(format!(
                "{} values do not form rows of dimension {dim}",
                points.len()
            )));
        }
        Ok(Self {
            points,
            dim,
            seed: 0,
            spec: None,
        })
    }

    /// One-dimensional sample from a list of scalars.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            points: values.to_vec(),
            dim: 1,
            seed: 0,
            spec: None,
        }
    }

    pub(crate) fn with_provenance(mut self, seed: u64, spec: Option<DistributionSpec>) -> Self {
        self.seed = seed;
        self.spec = spec;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> Option<&DistributionSpec> {
        self.spec.as_ref()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }
}

/// Draws `n` iid points. Point `i` is generated from stream `i` of the key
/// derived from `seed`, so any prefix of a longer run is reproduced exactly.
pub fn sample(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(Error::param("sample size must be >= 1"));
    }
    let sampler = Sampler::new(spec)?;
    let key = StreamKey::new(seed);
    let dim = spec.dim;
    let mut points = vec![0.0; n * dim];
    points
        .par_chunks_mut(dim)
        .with_min_len(1024)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = key.stream(i as u64);
            sampler.fill(&mut rng, row);
        });
    Ok(Sample {
        points,
        dim,
        seed,
        spec: Some(spec.clone()),
    })
}
