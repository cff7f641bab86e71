//! k-means quantization: codebooks in the box `(−ρ, ρ)^{d×k}`, the
//! distortion loss `ℓ(C, x) = min_i ‖x − y_i‖²`, risk oracles and ERM
//! solvers.

mod erm;
mod oracle;

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::distributions::{moment, DistributionSpec, Sample};
use crate::error::{Error, Result};
use crate::numeric::{block_sum, least_squares};
use crate::rng::StreamKey;

pub use erm::{erm, ErmStrategy, DEFAULT_LLOYD_RESTARTS};
pub use oracle::{
    excess_risk, true_risk, DifferenceMoments, ExcessRisk, OptimumProvenance, OracleKind,
    OracleMode, OracleSettings, ReferenceOptimum, RiskEstimate, RiskOracle, DEFAULT_ORACLE_N,
};

/// Gap kept between clipped coordinates and the open box boundary.
pub const CLIP_MARGIN: f64 = 1e-12;

/// Largest admissible coordinate magnitude inside `(−ρ, ρ)`.
pub fn clip_limit(rho: f64) -> f64 {
    let lim = rho - CLIP_MARGIN;
    if lim < rho {
        lim
    } else {
        rho.next_down()
    }
}

/// k cluster centers in `R^d`, every coordinate inside `(−ρ, ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Vec<f64>,
    dim: usize,
    rho: f64,
}

impl Codebook {
    /// Strict constructor: fails if any coordinate lies outside the box.
    pub fn new(centers: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        let (flat, dim) = flatten(centers)?;
        Self::from_flat(flat, dim, rho)
    }

    pub fn from_flat(centers: Vec<f64>, dim: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::param(format!("rho must be finite and > 0, got {rho}")));
        }
        if dim == 0 || centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::param("codebook needs k >= 1 centers of dimension d >= 1"));
        }
        if let Some(bad) = centers.iter().find(|c| !(c.abs() < rho)) {
            return Err(Error::param(format!(
                "center coordinate {bad} outside the open box (-{rho}, {rho})"
            )));
        }
        Ok(Self { centers, dim, rho })
    }

    /// Builds a codebook after clipping every coordinate into the box.
    pub fn clipped(centers: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        let (flat, dim) = flatten(centers)?;
        Self::clipped_flat(flat, dim, rho)
    }

    pub fn clipped_flat(mut centers: Vec<f64>, dim: usize, rho: f64) -> Result<Self> {
        if centers.iter().any(|c| c.is_nan()) {
            return Err(Error::param("NaN center coordinate"));
        }
        let lim = clip_limit(rho);
        for c in &mut centers {
            *c = c.clamp(-lim, lim);
        }
        Self::from_flat(centers, dim, rho)
    }

    /// Parses the JSON array-of-arrays form.
    pub fn from_json(json: &str, rho: f64) -> Result<Self> {
        let centers: Vec<Vec<f64>> = serde_json::from_str(json)?;
        Self::new(centers, rho)
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centers(&self) -> std::slice::ChunksExact<'_, f64> {
        self.centers.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.centers
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.centers().map(<[f64]>::to_vec).collect()
    }

    /// Euclidean distance between the flattened parameter vectors.
    pub fn param_distance(&self, other: &Codebook) -> f64 {
        self.centers
            .iter()
            .zip(&other.centers)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Codebook with one more center appended.
    pub fn with_center(&self, y: &[f64]) -> Result<Self> {
        if y.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: y.len(),
            });
        }
        let mut centers = self.centers.clone();
        centers.extend_from_slice(y);
        Self::from_flat(centers, self.dim, self.rho)
    }

    /// Distance from the farthest coordinate to the box boundary.
    pub fn interior_margin(&self) -> f64 {
        self.rho - self.centers.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Index and squared distance of the nearest center, lowest index on ties.
    #[inline]
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest_flat(&self.centers, self.dim, x)
    }

    /// Uniform random codebook in the box.
    pub fn random<R: Rng>(k: usize, dim: usize, rho: f64, rng: &mut R) -> Result<Self> {
        let lim = clip_limit(rho);
        let centers = (0..k * dim)
            .map(|_| rng.random_range(-lim..=lim))
            .collect();
        Self::from_flat(centers, dim, rho)
    }
}

impl Serialize for Codebook {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(serializer)
    }
}

fn flatten(centers: Vec<Vec<f64>>) -> Result<(Vec<f64>, usize)> {
    let dim = centers.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(Error::param("codebook needs k >= 1 centers of dimension d >= 1"));
    }
    let mut flat = Vec::with_capacity(dim * centers.len());
    for c in centers {
        if c.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: c.len(),
            });
        }
        flat.extend(c);
    }
    Ok((flat, dim))
}

#[inline]
pub(crate) fn nearest_flat(centers: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// `ℓ(C, x) = min_i ‖x − y_i‖²`.
pub fn distortion(codebook: &Codebook, x: &[f64]) -> Result<f64> {
    if x.len() != codebook.dim {
        return Err(Error::Dimension {
            expected: codebook.dim,
            got: x.len(),
        });
    }
    Ok(codebook.nearest(x).1)
}

fn check_sample(codebook: &Codebook, sample: &Sample) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::param("empirical risk of an empty sample"));
    }
    if sample.dim() != codebook.dim {
        return Err(Error::Dimension {
            expected: codebook.dim,
            got: sample.dim(),
        });
    }
    Ok(())
}

/// `P_n ℓ(C)` with compensated, schedule-independent summation.
pub fn empirical_risk(codebook: &Codebook, sample: &Sample) -> Result<f64> {
    check_sample(codebook, sample)?;
    let n = sample.len();
    Ok(block_sum(n, |i| codebook.nearest(sample.point(i)).1) / n as f64)
}

/// Mean of the loss and its standard error over a sample.
pub(crate) fn loss_mean_and_se(codebook: &Codebook, sample: &Sample) -> Result<(f64, f64)> {
    check_sample(codebook, sample)?;
    let n = sample.len();
    let mean = block_sum(n, |i| codebook.nearest(sample.point(i)).1) / n as f64;
    let ss = block_sum(n, |i| {
        let v = codebook.nearest(sample.point(i)).1 - mean;
        v * v
    });
    let se = if n > 1 {
        (ss / (n - 1) as f64 / n as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((mean, se))
}

/// Analytic Lipschitz constant of the loss in codebook distance:
/// `E[ℓ(C, X) − ℓ(C′, X)]² ≤ L ‖C − C′‖²` with `L = 4 (‖X‖_{L2} + ρ√d)²`.
pub fn lipschitz_bound(spec: &DistributionSpec, rho: f64) -> Result<f64> {
    let m2 = moment(spec, 2.0)?;
    let v = m2.sqrt() + rho * (spec.dim() as f64).sqrt();
    Ok(4.0 * v * v)
}

/// Empirical estimate of the loss Lipschitz constant on a fixed sample.
/// Even pairs are independent uniform codebooks; odd pairs perturb a uniform
/// codebook at a log-uniform scale, where the ratio `E[Δℓ²]/‖ΔC‖²` is
/// largest.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzEstimate {
    /// Least-squares slope of `E[Δℓ²]` against `‖C − C′‖²` through the origin.
    pub slope: f64,
    /// Largest observed ratio `E[Δℓ²] / ‖C − C′‖²`.
    pub max_ratio: f64,
    /// Intercept and slope of an unconstrained fit, for diagnostics.
    pub free_fit: Option<(f64, f64)>,
    pub pairs: usize,
}

pub fn estimate_lipschitz(
    sample: &Sample,
    k: usize,
    rho: f64,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if pairs == 0 {
        return Err(Error::param("need at least one codebook pair"));
    }
    let key = StreamKey::new(seed);
    let n = sample.len();
    let mut dist2 = Vec::with_capacity(pairs);
    let mut second = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let mut rng = key.stream(p as u64);
        let a = Codebook::random(k, sample.dim(), rho, &mut rng)?;
        let b = if p % 2 == 0 {
            Codebook::random(k, sample.dim(), rho, &mut rng)?
        } else {
            // short-range pair at a log-uniform scale in [ρ/1000, ρ]
            let t = rho * 10f64.powf(-rng.random_range(0.0..3.0));
            let dir: Vec<f64> = (0..a.as_flat().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let moved = a.as_flat().iter().zip(&dir).map(|(c, u)| c + t * u / norm).collect();
            Codebook::clipped_flat(moved, sample.dim(), rho)?
        };
        let m = block_sum(n, |i| {
            let x = sample.point(i);
            let d = a.nearest(x).1 - b.nearest(x).1;
            d * d
        }) / n as f64;
        let dd = a.param_distance(&b).powi(2);
        dist2.push(dd);
        second.push(m);
    }
    let sxy: f64 = dist2.iter().zip(&second).map(|(x, y)| x * y).sum();
    let sxx: f64 = dist2.iter().map(|x| x * x).sum();
    let max_ratio = dist2
        .iter()
        .zip(&second)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| y / x)
        .fold(0.0, f64::max);
    let free_fit = least_squares(&dist2, &second).map(|f| (f.intercept, f.slope));
    Ok(LipschitzEstimate {
        slope: sxy / sxx,
        max_ratio,
        free_fit,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample;
    use proptest::prelude::*;

    fn cb(centers: &[f64], rho: f64) -> Codebook {
        Codebook::new(centers.iter().map(|&c| vec![c]).collect(), rho).unwrap()
    }

    #[test]
    fn distortion_examples() {
        assert_eq!(distortion(&cb(&[0.0], 10.0), &[3.0]).unwrap(), 9.0);
        assert_eq!(distortion(&cb(&[-1.0, 1.0], 10.0), &[0.0]).unwrap(), 1.0);
        assert_eq!(distortion(&cb(&[0.0, 5.0], 10.0), &[-1.0]).unwrap(), 1.0);
        assert!(matches!(
            distortion(&cb(&[0.0], 10.0), &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        assert_eq!(cb(&[-1.0, 1.0], 10.0).nearest(&[0.0]).0, 0);
        assert_eq!(cb(&[1.0, -1.0], 10.0).nearest(&[0.0]).0, 0);
    }

    #[test]
    fn empirical_risk_examples() {
        let s = Sample::from_scalars(&[0.0, 2.0, 10.0]);
        let r = empirical_risk(&cb(&[1.0, 10.0], 20.0), &s).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        let s = Sample::from_scalars(&[0.25]);
        assert_eq!(empirical_risk(&cb(&[0.25], 1.0), &s).unwrap(), 0.0);
        let s = Sample::from_scalars(&[-1.0, -1.0, 1.0]);
        assert_eq!(empirical_risk(&cb(&[-1.0, 1.0], 2.0), &s).unwrap(), 0.0);
    }

    #[test]
    fn codebook_box_invariant() {
        assert!(Codebook::new(vec![vec![1.0]], 1.0).is_err());
        assert!(Codebook::new(vec![vec![0.999]], 1.0).is_ok());
        assert!(Codebook::new(vec![vec![0.0, 1.0], vec![0.0]], 2.0).is_err());
        let c = Codebook::clipped(vec![vec![5.0, -7.0]], 1.0).unwrap();
        assert!(c.as_flat().iter().all(|x| x.abs() < 1.0));
        assert!((c.as_flat()[0] - (1.0 - CLIP_MARGIN)).abs() < 1e-15);
        let big = Codebook::clipped(vec![vec![1e20]], 1e6).unwrap();
        assert!(big.as_flat()[0] < 1e6);
    }

    #[test]
    fn json_form_is_array_of_arrays() {
        let c = Codebook::new(vec![vec![0.5, -0.25], vec![0.0, 0.125]], 1.0).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, "[[0.5,-0.25],[0.0,0.125]]");
        assert_eq!(Codebook::from_json(&s, 1.0).unwrap(), c);
    }

    #[test]
    fn lipschitz_estimate_below_analytic_bound() {
        let spec = DistributionSpec::uniform(-1.0, 1.0).unwrap();
        let s = sample(&spec, 20_000, 4).unwrap();
        let est = estimate_lipschitz(&s, 2, 1.5, 200, 9).unwrap();
        let bound = lipschitz_bound(&spec, 1.5).unwrap();
        assert!(est.max_ratio <= bound, "{} > {bound}", est.max_ratio);
        assert!(est.slope > 0.0 && est.slope <= est.max_ratio);
    }

    proptest! {
        #[test]
        fn adding_a_center_never_increases_distortion(
            centers in prop::collection::vec(-5.0f64..5.0, 1..6),
            extra in -5.0f64..5.0,
            x in -20.0f64..20.0,
        ) {
            let c = cb(&centers, 5.5);
            let bigger = c.with_center(&[extra]).unwrap();
            prop_assert!(distortion(&bigger, &[x]).unwrap() <= distortion(&c, &[x]).unwrap());
        }

        #[test]
        fn empirical_risk_is_order_independent(
            values in prop::collection::vec(-100.0f64..100.0, 1..200),
            seed in any::<u64>(),
        ) {
            let c = cb(&[-3.0, 4.0], 10.0);
            let s1 = Sample::from_scalars(&values);
            let mut shuffled = values.clone();
            let mut rng = StreamKey::new(seed).stream(0);
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let s2 = Sample::from_scalars(&shuffled);
            let a = empirical_risk(&c, &s1).unwrap();
            let b = empirical_risk(&c, &s2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
