//! Probing and fitting of the multi-scale Bernstein condition
//! `E[(ℓ(C) − ℓ(C*_i))²] ≤ B_i (E[ℓ(C) − ℓ(C*_i)])^{γ_i}` on codebooks.
//!
//! The hypothesis class is split in two regions by an excess-risk threshold
//! τ: a near region `excess ≤ τ` and a far region `excess > τ`. Each probe is
//! compared against its nearest reference optimum in parameter space.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BernsteinPiece, BernsteinProfile, FarField, ProfileProvenance};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::numeric::least_squares;
use crate::quantization::{Codebook, OracleSettings, RiskOracle};
use crate::rng::StreamKey;

/// Minimum number of probes in every nonempty region.
pub const MIN_REGION_PROBES: usize = 20;

/// Relative slack for the literal inequality checks, absorbing the rounding
/// of `exp(ln ·)`.
const REL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisProbe {
    pub codebook: Codebook,
    /// `E[ℓ(C) − ℓ(C*)]`, floored at zero.
    pub excess: f64,
    pub second_moment: f64,
    pub nearest_optimum: usize,
    pub se_excess: f64,
    pub se_second: f64,
}

impl HypothesisProbe {
    /// Probe with known moments and no sampling error.
    pub fn exact(codebook: Codebook, excess: f64, second_moment: f64) -> Self {
        Self {
            codebook,
            excess,
            second_moment,
            nearest_optimum: 0,
            se_excess: 0.0,
            se_second: 0.0,
        }
    }
}

fn nearest_optimum(codebook: &Codebook, optima: &[Codebook]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, o) in optima.iter().enumerate() {
        let d = codebook.param_distance(o);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Moments of the loss difference for each codebook, in input order.
pub fn probe(codebooks: &[Codebook], spec: &DistributionSpec, oracle: &RiskOracle) -> Result<Vec<HypothesisProbe>> {
    if oracle.spec() != spec {
        return Err(Error::Oracle("oracle was built for a different law".into()));
    }
    let reference = oracle
        .reference()
        .ok_or_else(|| Error::Oracle("oracle has no reference optimum".into()))?;
    codebooks
        .par_iter()
        .map(|c| {
            let idx = nearest_optimum(c, &reference.optima);
            let m = oracle.difference_moments(c, idx)?;
            Ok(HypothesisProbe {
                codebook: c.clone(),
                excess: m.mean.max(0.0),
                second_moment: m.second,
                nearest_optimum: idx,
                se_excess: m.mean_se,
                se_second: m.second_se,
            })
        })
        .collect()
}

/// Probe placement: `rays` random directions from every optimum at each of
/// `distances`, plus `uniform` codebooks drawn uniformly in the box. All
/// codebooks are clipped into the box.
pub fn probe_codebooks(
    optima: &[Codebook],
    distances: &[f64],
    rays: usize,
    uniform: usize,
    seed: u64,
) -> Result<Vec<Codebook>> {
    let first = optima
        .first()
        .ok_or_else(|| Error::param("at least one optimum required"))?;
    let (k, d, rho) = (first.k(), first.dim(), first.rho());
    let key = StreamKey::new(seed);
    let mut out = Vec::with_capacity(optima.len() * rays * distances.len() + uniform);
    let mut stream = 0u64;
    for star in optima {
        for _ in 0..rays {
            let mut rng = key.stream(stream);
            stream += 1;
            let mut dir: Vec<f64> = (0..k * d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|x| *x /= norm);
            for &t in distances {
                let flat = star.as_flat().iter().zip(&dir).map(|(c, u)| c + t * u).collect();
                out.push(Codebook::clipped_flat(flat, d, rho)?);
            }
        }
    }
    for _ in 0..uniform {
        out.push(Codebook::random(k, d, rho, &mut key.stream(stream))?);
        stream += 1;
    }
    Ok(out)
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|i| lo * (step * i as f64).exp()).collect()
        }
    }
}

/// Excess-risk threshold `(M/(α − M)) R(C*)` of the far-field bound.
pub fn far_field_tau(m: f64, alpha: f64, optimal_risk: f64) -> f64 {
    m / (alpha - m) * optimal_risk
}

/// Default split, `α = 2M`, which reduces to `τ = R(C*)`.
pub fn default_tau(optimal_risk: f64) -> f64 {
    far_field_tau(1.0, 2.0, optimal_risk)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `excess ≤ τ`.
    Near,
    /// `excess > τ`.
    Far,
}

impl Region {
    pub fn of(excess: f64, tau: f64) -> Self {
        if excess <= tau {
            Region::Near
        } else {
            Region::Far
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPiece {
    pub region: Region,
    pub probes: usize,
    /// Probes with positive excess and second moment, used in the regression.
    pub used: usize,
    pub gamma: f64,
    /// Two-standard-error band around the unclipped slope.
    pub gamma_band: (f64, f64),
    pub gamma_raw: f64,
    pub gamma_clipped: bool,
    pub b: f64,
    /// Whether `second ≤ B̂ excess^γ̂` holds at every probe of the region.
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinFit {
    pub tau: f64,
    pub pieces: Vec<FittedPiece>,
}

impl BernsteinFit {
    pub fn piece(&self, region: Region) -> Option<&FittedPiece> {
        self.pieces.iter().find(|p| p.region == region)
    }

    pub fn to_profile(&self) -> Result<BernsteinProfile> {
        BernsteinProfile::new(
            self.pieces
                .iter()
                .map(|p| BernsteinPiece {
                    label: serde_json::to_value(p.region)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default(),
                    b: p.b,
                    gamma: p.gamma,
                })
                .collect(),
            ProfileProvenance::Estimated,
        )
    }
}

/// Smallest exponent kept after clipping into `(0, 1]`.
pub const GAMMA_FLOOR: f64 = 1e-6;

fn fit_region(region: Region, probes: &[&HypothesisProbe]) -> Result<FittedPiece> {
    if probes.len() < MIN_REGION_PROBES {
        return Err(Error::Insufficient(format!(
            "{region:?} region has {} probes, need {MIN_REGION_PROBES}",
            probes.len()
        )));
    }
    let usable: Vec<_> = probes
        .iter()
        .filter(|p| p.excess > 0.0 && p.second_moment > 0.0)
        .collect();
    let x: Vec<f64> = usable.iter().map(|p| p.excess.ln()).collect();
    let y: Vec<f64> = usable.iter().map(|p| p.second_moment.ln()).collect();
    let fit = least_squares(&x, &y).ok_or_else(|| {
        Error::Degenerate(format!(
            "{region:?} region: {} usable probes with distinct excess needed for a slope",
            usable.len()
        ))
    })?;
    let raw = fit.slope;
    let gamma = raw.clamp(GAMMA_FLOOR, 1.0);
    let max_resid = x
        .iter()
        .zip(&y)
        .map(|(lx, ly)| ly - gamma * lx)
        .fold(f64::NEG_INFINITY, f64::max);
    let b = max_resid.exp();
    let satisfied = probes
        .iter()
        .all(|p| p.second_moment <= b * p.excess.powf(gamma) * (1.0 + REL_SLACK));
    Ok(FittedPiece {
        region,
        probes: probes.len(),
        used: usable.len(),
        gamma,
        gamma_band: (raw - 2.0 * fit.slope_se, raw + 2.0 * fit.slope_se),
        gamma_raw: raw,
        gamma_clipped: gamma != raw,
        b,
        satisfied,
    })
}

/// Per-region log-log regression of second moment on excess. Empty regions
/// are omitted; a nonempty region with fewer than [`MIN_REGION_PROBES`]
/// probes is an error.
pub fn fit_multiscale(probes: &[HypothesisProbe], tau: f64) -> Result<BernsteinFit> {
    if !(tau >= 0.0) {
        return Err(Error::param(format!("tau must be >= 0, got {tau}")));
    }
    let mut pieces = Vec::new();
    for region in [Region::Near, Region::Far] {
        let members: Vec<_> = probes.iter().filter(|p| Region::of(p.excess, tau) == region).collect();
        if !members.is_empty() {
            pieces.push(fit_region(region, &members)?);
        }
    }
    if pieces.is_empty() {
        return Err(Error::Insufficient("no probes".into()));
    }
    Ok(BernsteinFit { tau, pieces })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub region: Region,
    pub second_moment: f64,
    /// `B excess^γ`.
    pub allowed: f64,
    /// Three propagated standard errors.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flags probes with `second > B_i excess^{γ_i} + 3·SE`, the standard error
/// propagated from both moment estimates. A one-piece profile applies
/// everywhere; a two-piece profile is read as (near, far).
pub fn check_condition(probes: &[HypothesisProbe], profile: &BernsteinProfile, tau: f64) -> Result<ViolationReport> {
    let pieces = profile.pieces();
    if pieces.len() > 2 {
        return Err(Error::param(format!(
            "profile has {} pieces, the partition has two regions",
            pieces.len()
        )));
    }
    let mut violations = Vec::new();
    for (index, p) in probes.iter().enumerate() {
        let region = Region::of(p.excess, tau);
        let piece = match (region, pieces.len()) {
            (Region::Far, 2) => &pieces[1],
            _ => &pieces[0],
        };
        let allowed = piece.b * p.excess.powf(piece.gamma);
        let slope = if p.excess > 0.0 {
            piece.b * piece.gamma * p.excess.powf(piece.gamma - 1.0)
        } else {
            0.0
        };
        let se = (p.se_second.powi(2) + (slope * p.se_excess).powi(2)).sqrt();
        if p.second_moment > allowed * (1.0 + REL_SLACK) + 3.0 * se {
            violations.push(Violation {
                index,
                region,
                second_moment: p.second_moment,
                allowed,
                slack: 3.0 * se,
            });
        }
    }
    Ok(ViolationReport {
        checked: probes.len(),
        violations,
    })
}

/// Exact far-field check: every probe with `R(C) ≥ (α/(α − M)) R(C*)` must
/// satisfy `second ≤ 2α^γ excess^γ`. Returns the indices that were checked
/// and those that failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FarFieldReport {
    pub checked: Vec<usize>,
    pub violations: Vec<usize>,
}

pub fn check_far_field(probes: &[HypothesisProbe], far: &FarField, optimal_risk: f64) -> FarFieldReport {
    let mut report = FarFieldReport {
        checked: Vec::new(),
        violations: Vec::new(),
    };
    for (i, p) in probes.iter().enumerate() {
        if far.applies(optimal_risk + p.excess, optimal_risk) {
            report.checked.push(i);
            if p.second_moment > far.b * p.excess.powf(far.gamma) {
                report.violations.push(i);
            }
        }
    }
    report
}

/// Input of a full probe-and-fit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub spec: DistributionSpec,
    pub k: usize,
    pub rho: f64,
    pub oracle: OracleSettings,
    /// Ray distances from each optimum, geometric between the two ends.
    pub distance_range: (f64, f64),
    pub distances: usize,
    pub rays: usize,
    #[serde(default)]
    pub uniform: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to [`default_tau`] of the reference risk.
    #[serde(default)]
    pub tau: Option<f64>,
}

pub fn run_check(config: &CheckConfig) -> Result<(BernsteinFit, Vec<HypothesisProbe>)> {
    let oracle = config.oracle.build(&config.spec, config.k, config.rho)?;
    let reference = oracle.reference().expect("built with an optimum");
    let (lo, hi) = config.distance_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::param("distance_range must satisfy 0 < lo <= hi"));
    }
    let codebooks = probe_codebooks(
        &reference.optima,
        &geometric_grid(lo, hi, config.distances),
        config.rays,
        config.uniform,
        config.seed,
    )?;
    let probes = probe(&codebooks, &config.spec, &oracle)?;
    let tau = config.tau.unwrap_or_else(|| default_tau(reference.risk));
    Ok((fit_multiscale(&probes, tau)?, probes))
}

/// Writes one row per probe; centers are flattened and `;`-separated.
pub fn write_probes_csv(path: &std::path::Path, probes: &[HypothesisProbe]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["index", "centers", "nearest_optimum", "excess", "se_excess", "second_moment", "se_second"])
        .map_err(csv_err)?;
    for (i, p) in probes.iter().enumerate() {
        let centers = p
            .codebook
            .as_flat()
            .iter()
            .map(|c| format!("{c:.16e}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            i.to_string(),
            centers,
            p.nearest_optimum.to_string(),
            format!("{:.16e}", p.excess),
            format!("{:.16e}", p.se_excess),
            format!("{:.16e}", p.second_moment),
            format!("{:.16e}", p.se_second),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::far_field_bernstein;
    use crate::quantization::OracleKind;

    fn one(c: f64) -> Codebook {
        Codebook::new(vec![vec![c]], 10.0).unwrap()
    }

    fn gaussian_oracle() -> (DistributionSpec, RiskOracle) {
        let spec = DistributionSpec::gaussian(0.0, 1.0).unwrap();
        let oracle = RiskOracle::closed_form(&spec).unwrap().with_optimum(1, 10.0).unwrap();
        (spec, oracle)
    }

    #[test]
    fn probe_examples() {
        let (spec, oracle) = gaussian_oracle();
        let p = probe(&[one(0.0), one(1.0), one(2.0)], &spec, &oracle).unwrap();
        assert_eq!((p[0].excess, p[0].second_moment), (0.0, 0.0));
        assert!((p[1].excess - 1.0).abs() < 1e-15 && (p[1].second_moment - 5.0).abs() < 1e-15);
        assert!((p[2].excess - 4.0).abs() < 1e-15 && (p[2].second_moment - 32.0).abs() < 1e-15);
    }

    fn power_law(gamma: f64) -> Vec<HypothesisProbe> {
        geometric_grid(1e-3, 1e-1, 30)
            .into_iter()
            .map(|e| HypothesisProbe::exact(one(0.0), e, e.powf(gamma)))
            .collect()
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let fit = fit_multiscale(&power_law(1.0), 1.0).unwrap();
        let p = fit.piece(Region::Near).unwrap();
        assert!((p.gamma - 1.0).abs() < 1e-9 && (p.b - 1.0).abs() < 1e-9 && p.satisfied);
        let fit = fit_multiscale(&power_law(2.0 / 3.0), 1.0).unwrap();
        let p = fit.piece(Region::Near).unwrap();
        assert!((p.gamma - 2.0 / 3.0).abs() < 1e-9);
        assert!(fit.piece(Region::Far).is_none());
    }

    #[test]
    fn clipping_is_flagged() {
        let fit = fit_multiscale(&power_law(1.5), 1.0).unwrap();
        let p = &fit.pieces[0];
        assert!(p.gamma_clipped && p.gamma == 1.0 && p.satisfied);
    }

    #[test]
    fn check_condition_examples() {
        let probes = power_law(2.0 / 3.0);
        let fit = fit_multiscale(&probes, 1.0).unwrap();
        let profile = fit.to_profile().unwrap();
        assert!(check_condition(&probes, &profile, 1.0).unwrap().consistent());
        let halved = BernsteinProfile::new(
            vec![BernsteinPiece {
                label: "near".into(),
                b: profile.pieces()[0].b / 2.0,
                gamma: profile.pieces()[0].gamma,
            }],
            ProfileProvenance::Assumed,
        )
        .unwrap();
        assert_eq!(check_condition(&probes, &halved, 1.0).unwrap().violations.len(), probes.len());
    }

    #[test]
    fn gaussian_near_field_strong_convexity() {
        let (spec, oracle) = gaussian_oracle();
        let tau: f64 = 0.1;
        let books: Vec<_> = geometric_grid(1e-3, tau.sqrt(), 40).into_iter().map(one).collect();
        let probes = probe(&books, &spec, &oracle).unwrap();
        let profile = BernsteinProfile::new(
            vec![BernsteinPiece {
                label: "near".into(),
                b: 4.0 + tau,
                gamma: 1.0,
            }],
            ProfileProvenance::Assumed,
        )
        .unwrap();
        assert!(check_condition(&probes, &profile, tau).unwrap().consistent());
        let fit = fit_multiscale(&probes, tau).unwrap();
        assert!((fit.pieces[0].gamma - 1.0).abs() < 0.1);
    }

    #[test]
    fn too_few_probes() {
        let probes: Vec<_> = power_law(1.0).into_iter().take(5).collect();
        assert!(matches!(fit_multiscale(&probes, 1.0), Err(Error::Insufficient(_))));
        let flat: Vec<_> = (0..25).map(|_| HypothesisProbe::exact(one(0.0), 0.5, 0.5)).collect();
        assert!(matches!(fit_multiscale(&flat, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn far_field_exact_on_student_t() {
        let spec = DistributionSpec::student_t(9.0).unwrap();
        let oracle = RiskOracle::closed_form(&spec).unwrap().with_optimum(1, 5.0).unwrap();
        let rs = oracle.reference().unwrap().risk;
        let r = 4.0;
        let w = crate::distributions::certified_envelope_bound(&spec, 5.0, r).unwrap();
        let m = w.powf(r / (r - 2.0));
        let far = far_field_bernstein(w, r, 2.0 * m).unwrap();
        let books: Vec<_> = (0..100).map(|i| Codebook::new(vec![vec![-4.99 + 0.1 * i as f64]], 5.0).unwrap()).collect();
        let probes = probe(&books, &spec, &oracle).unwrap();
        let report = check_far_field(&probes, &far, rs);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn run_check_on_mixture() {
        let cfg: CheckConfig = serde_json::from_value(serde_json::json!({
            "spec": {"family": "point_mass_mixture",
                     "params": {"atoms": [{"location": [-1.0], "weight": 0.5},
                                          {"location": [1.0], "weight": 0.5}]},
                     "dim": 1},
            "k": 2, "rho": 3.0,
            "oracle": {"mode": "exact"},
            "distance_range": [0.001, 2.0], "distances": 10, "rays": 4, "uniform": 20
        }))
        .unwrap();
        assert_eq!(cfg.oracle.mode, OracleKind::Exact);
        let (fit, probes) = run_check(&cfg).unwrap();
        assert_eq!(probes.len(), 2 * 4 * 10 + 20);
        assert!(fit.pieces.iter().all(|p| p.satisfied));
    }
}
