use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{erm, loss_mean_and_se, Codebook, ErmStrategy};
use crate::distributions::{sample, DistributionSpec, Family, Sample};
use crate::error::{Error, Result};
use crate::numeric::block_sum;

/// How true risks `R(C) = E ℓ(C, X)` are evaluated.
#[derive(Debug, Clone)]
pub enum OracleMode {
    /// Weighted sum over the atoms of a point-mass mixture.
    ExactDiscrete,
    /// Average over one fixed, shared oracle sample.
    MonteCarlo {
        sample: Arc<Sample>,
        oracle_n: usize,
        oracle_seed: u64,
    },
    /// `R(c) = tr Σ + ‖c − μ‖²` for a single center.
    SingleCenterClosedForm { mean: Vec<f64>, total_variance: f64 },
}

impl OracleMode {
    pub fn name(&self) -> &'static str {
        match self {
            OracleMode::ExactDiscrete => "exact_discrete",
            OracleMode::MonteCarlo { .. } => "monte_carlo",
            OracleMode::SingleCenterClosedForm { .. } => "closed_form",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumProvenance {
    /// Known analytically (atoms of a mixture with k ≥ #atoms, or the mean
    /// for k = 1 under the closed form).
    ByConstruction,
    /// Exhaustive weighted search over partitions of the atoms.
    ExhaustiveAtoms,
    /// Exact 1-D ERM on the Monte Carlo oracle sample.
    Exact1dOracleSample,
    /// Lloyd multistart on the Monte Carlo oracle sample.
    LloydOracleSample,
    /// Supplied by the caller.
    Supplied,
}

/// The reference minimizers `C*` and their risk.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceOptimum {
    /// All known global minimizers, including relabellings of the centers.
    pub optima: Vec<Codebook>,
    pub risk: f64,
    pub risk_se: f64,
    pub provenance: OptimumProvenance,
    /// Whether `C*` lies strictly inside the box by more than the clip margin.
    pub interior: bool,
}

#[derive(Debug, Clone)]
pub struct RiskOracle {
    spec: DistributionSpec,
    mode: OracleMode,
    reference: Option<ReferenceOptimum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Standard error; zero for exact modes.
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcessRisk {
    /// `max(0, raw)`.
    pub value: f64,
    pub raw: f64,
    pub se: f64,
    /// Set when the raw estimate was negative and got clipped to zero.
    pub clipped: bool,
}

/// First and second moments of `ℓ(C) − ℓ(C*_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DifferenceMoments {
    pub mean: f64,
    pub mean_se: f64,
    pub second: f64,
    pub second_se: f64,
}

fn relabellings(codebook: &Codebook) -> Vec<Codebook> {
    fn permute(items: &mut Vec<Vec<f64>>, start: usize, out: &mut Vec<Vec<Vec<f64>>>) {
        if start == items.len() {
            if !out.contains(items) {
                out.push(items.clone());
            }
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, out);
            items.swap(start, i);
        }
    }
    let mut centers = codebook.to_nested();
    if centers.len() > 6 {
        return vec![codebook.clone()];
    }
    let mut out = Vec::new();
    permute(&mut centers, 0, &mut out);
    out.into_iter()
        .map(|c| Codebook::new(c, codebook.rho()).expect("relabelling stays in the box"))
        .collect()
}

impl RiskOracle {
    pub fn exact_discrete(spec: &DistributionSpec) -> Result<Self> {
        if !spec.is_discrete() {
            return Err(Error::Oracle(format!(
                "exact discrete oracle requested for continuous {} law",
                spec.family().name()
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            mode: OracleMode::ExactDiscrete,
            reference: None,
        })
    }

    pub fn monte_carlo(spec: &DistributionSpec, oracle_n: usize, oracle_seed: u64) -> Result<Self> {
        let s = sample(spec, oracle_n, oracle_seed)?;
        Ok(Self {
            spec: spec.clone(),
            mode: OracleMode::MonteCarlo {
                sample: Arc::new(s),
                oracle_n,
                oracle_seed,
            },
            reference: None,
        })
    }

    pub fn closed_form(spec: &DistributionSpec) -> Result<Self> {
        let mean = spec
            .mean()
            .ok_or_else(|| Error::Oracle("closed form needs a finite mean".into()))?;
        let total_variance = spec
            .total_variance()
            .ok_or_else(|| Error::Oracle("closed form needs a finite variance".into()))?;
        Ok(Self {
            spec: spec.clone(),
            mode: OracleMode::SingleCenterClosedForm {
                mean,
                total_variance,
            },
            reference: None,
        })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn mode(&self) -> &OracleMode {
        &self.mode
    }

    pub fn reference(&self) -> Option<&ReferenceOptimum> {
        self.reference.as_ref()
    }

    pub fn oracle_sample(&self) -> Option<&Sample> {
        match &self.mode {
            OracleMode::MonteCarlo { sample, .. } => Some(sample),
            _ => None,
        }
    }

    /// Computes the reference optimum for `k` centers in `(−ρ, ρ)^d`.
    pub fn with_optimum(mut self, k: usize, rho: f64) -> Result<Self> {
        let d = self.spec.dim();
        let (codebook, provenance) = match (&self.mode, self.spec.family()) {
            (OracleMode::ExactDiscrete, Family::PointMassMixture { atoms }) => {
                let support: Vec<&[f64]> = atoms
                    .iter()
                    .filter(|a| a.weight > 0.0)
                    .map(|a| a.location.as_slice())
                    .collect();
                let mut distinct: Vec<Vec<f64>> = Vec::new();
                for s in support {
                    if !distinct.iter().any(|x| x.as_slice() == s) {
                        distinct.push(s.to_vec());
                    }
                }
                if distinct.len() <= k {
                    let first = distinct[0].clone();
                    distinct.resize(k, first);
                    (Codebook::clipped(distinct, rho)?, OptimumProvenance::ByConstruction)
                } else {
                    (
                        weighted_atom_search(atoms, k, rho)?,
                        OptimumProvenance::ExhaustiveAtoms,
                    )
                }
            }
            (OracleMode::ExactDiscrete, _) => unreachable!("checked at construction"),
            (OracleMode::MonteCarlo { sample, .. }, _) => {
                if d == 1 {
                    (
                        erm(sample, k, rho, ErmStrategy::Exact1d)?,
                        OptimumProvenance::Exact1dOracleSample,
                    )
                } else {
                    (
                        erm(sample, k, rho, ErmStrategy::lloyd(0x0c5a))?,
                        OptimumProvenance::LloydOracleSample,
                    )
                }
            }
            (OracleMode::SingleCenterClosedForm { mean, .. }, _) => {
                if k != 1 {
                    return Err(Error::Oracle(format!(
                        "closed-form oracle supports k = 1 only, got k = {k}"
                    )));
                }
                (
                    Codebook::clipped(vec![mean.clone()], rho)?,
                    OptimumProvenance::ByConstruction,
                )
            }
        };
        self.set_reference(vec![codebook], provenance)?;
        Ok(self)
    }

    /// Installs caller-supplied global minimizers (all relabellings are added).
    pub fn with_supplied_optimum(mut self, optima: Vec<Codebook>) -> Result<Self> {
        if optima.is_empty() {
            return Err(Error::param("at least one optimum required"));
        }
        self.set_reference(optima, OptimumProvenance::Supplied)?;
        Ok(self)
    }

    fn set_reference(&mut self, optima: Vec<Codebook>, provenance: OptimumProvenance) -> Result<()> {
        let head = optima[0].clone();
        let est = true_risk(&head, &self.spec, self)?;
        let mut all = Vec::new();
        for c in optima {
            for r in relabellings(&c) {
                if !all.contains(&r) {
                    all.push(r);
                }
            }
        }
        let interior = all.iter().all(|c| c.interior_margin() > 2.0 * super::CLIP_MARGIN);
        self.reference = Some(ReferenceOptimum {
            optima: all,
            risk: est.value,
            risk_se: est.se,
            provenance,
            interior,
        });
        Ok(())
    }

    fn check_compatible(&self, codebook: &Codebook, spec: &DistributionSpec) -> Result<()> {
        if spec != &self.spec {
            return Err(Error::Oracle("oracle was built for a different law".into()));
        }
        if codebook.dim() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: codebook.dim(),
            });
        }
        Ok(())
    }

    /// Moments of `ℓ(C) − ℓ(C*_i)` for the reference optimum `i`.
    pub fn difference_moments(&self, codebook: &Codebook, optimum: usize) -> Result<DifferenceMoments> {
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::Oracle("oracle has no reference optimum".into()))?;
        let star = reference
            .optima
            .get(optimum)
            .ok_or_else(|| Error::param(format!("no optimum with index {optimum}")))?;
        self.check_compatible(codebook, &self.spec)?;
        match &self.mode {
            OracleMode::ExactDiscrete => {
                let Family::PointMassMixture { atoms } = self.spec.family() else {
                    unreachable!("checked at construction")
                };
                let (mut mean, mut second) = (0.0, 0.0);
                for a in atoms {
                    let diff = codebook.nearest(&a.location).1 - star.nearest(&a.location).1;
                    mean += a.weight * diff;
                    second += a.weight * diff * diff;
                }
                Ok(DifferenceMoments {
                    mean,
                    mean_se: 0.0,
                    second,
                    second_se: 0.0,
                })
            }
            OracleMode::MonteCarlo { sample, .. } => {
                let n = sample.len();
                let diff = |i: usize| {
                    let x = sample.point(i);
                    codebook.nearest(x).1 - star.nearest(x).1
                };
                let nf = n as f64;
                let mean = block_sum(n, &diff) / nf;
                let second = block_sum(n, |i| diff(i).powi(2)) / nf;
                let var1 = block_sum(n, |i| (diff(i) - mean).powi(2)) / (nf - 1.0);
                let var2 = block_sum(n, |i| (diff(i).powi(2) - second).powi(2)) / (nf - 1.0);
                Ok(DifferenceMoments {
                    mean,
                    mean_se: (var1 / nf).sqrt(),
                    second,
                    second_se: (var2 / nf).sqrt(),
                })
            }
            OracleMode::SingleCenterClosedForm { mean, .. } => {
                if codebook.k() != 1 {
                    return Err(Error::Oracle("closed form supports k = 1 only".into()));
                }
                if matches!(self.spec.family(), Family::PointMassMixture { .. }) && self.spec.dim() > 1 {
                    return Err(Error::Unsupported(
                        "closed-form second moment needs isotropic coordinates".into(),
                    ));
                }
                // Δℓ = ‖c‖² − ‖c*‖² − 2 x·(c − c*); Var Δℓ = 4 σ² ‖c − c*‖²
                let c = codebook.center(0);
                let s = star.center(0);
                let mu_term: f64 = c
                    .iter()
                    .zip(s)
                    .zip(mean)
                    .map(|((a, b), m)| (a - m) * (a - m) - (b - m) * (b - m))
                    .sum();
                let shift2: f64 = c.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
                let sigma2 = self.spec.total_variance().expect("finite variance") / self.spec.dim() as f64;
                Ok(DifferenceMoments {
                    mean: mu_term,
                    mean_se: 0.0,
                    second: mu_term * mu_term + 4.0 * sigma2 * shift2,
                    second_se: 0.0,
                })
            }
        }
    }
}

/// Default Monte Carlo oracle size.
pub const DEFAULT_ORACLE_N: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Exact,
    MonteCarlo,
    ClosedForm,
}

/// Serializable description of a [`RiskOracle`] and how its reference
/// optimum is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    pub mode: OracleKind,
    #[serde(default = "default_oracle_n")]
    pub oracle_n: usize,
    #[serde(default)]
    pub oracle_seed: u64,
    /// Known global minimizers, each a list of centers. Computed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum: Option<Vec<Vec<Vec<f64>>>>,
}

fn default_oracle_n() -> usize {
    DEFAULT_ORACLE_N
}

impl OracleSettings {
    pub fn new(mode: OracleKind) -> Self {
        Self {
            mode,
            oracle_n: DEFAULT_ORACLE_N,
            oracle_seed: 0,
            optimum: None,
        }
    }

    pub fn build(&self, spec: &DistributionSpec, k: usize, rho: f64) -> Result<RiskOracle> {
        let oracle = match self.mode {
            OracleKind::Exact => RiskOracle::exact_discrete(spec)?,
            OracleKind::MonteCarlo => RiskOracle::monte_carlo(spec, self.oracle_n, self.oracle_seed)?,
            OracleKind::ClosedForm => RiskOracle::closed_form(spec)?,
        };
        match &self.optimum {
            Some(optima) => {
                let books = optima
                    .iter()
                    .map(|c| {
                        if c.len() != k {
                            return Err(Error::Dimension {
                                expected: k,
                                got: c.len(),
                            });
                        }
                        Codebook::new(c.clone(), rho)
                    })
                    .collect::<Result<Vec<_>>>()?;
                oracle.with_supplied_optimum(books)
            }
            None => oracle.with_optimum(k, rho),
        }
    }
}

/// Exhaustive weighted k-partition search over the atoms of a mixture.
fn weighted_atom_search(atoms: &[crate::distributions::Atom], k: usize, rho: f64) -> Result<Codebook> {
    let live: Vec<_> = atoms.iter().filter(|a| a.weight > 0.0).collect();
    if live.len() > 12 {
        return Err(Error::Unsupported(format!(
            "exhaustive optimum search over {} atoms",
            live.len()
        )));
    }
    let d = live[0].location.len();
    let mut labels = vec![0usize; live.len()];
    let mut best: Option<(f64, Codebook)> = None;
    loop {
        let groups = labels.iter().max().map_or(0, |m| m + 1);
        let mut centers = vec![vec![0.0; d]; k];
        let mut w = vec![0.0; k];
        for (a, &l) in live.iter().zip(&labels) {
            w[l] += a.weight;
            for (c, x) in centers[l].iter_mut().zip(&a.location) {
                *c += a.weight * x;
            }
        }
        for g in 0..groups {
            centers[g].iter_mut().for_each(|c| *c /= w[g]);
        }
        for g in groups..k {
            centers[g] = centers[0].clone();
        }
        let cb = Codebook::clipped(centers, rho)?;
        let risk: f64 = live
            .iter()
            .map(|a| a.weight * cb.nearest(&a.location).1)
            .sum();
        if best.as_ref().is_none_or(|(b, _)| risk < *b) {
            best = Some((risk, cb));
        }
        if !super::erm::next_partition(&mut labels, k) {
            break;
        }
    }
    Ok(best.expect("nonempty").1)
}

/// `R(C)` under the oracle.
pub fn true_risk(codebook: &Codebook, spec: &DistributionSpec, oracle: &RiskOracle) -> Result<RiskEstimate> {
    oracle.check_compatible(codebook, spec)?;
    match &oracle.mode {
        OracleMode::ExactDiscrete => {
            let Family::PointMassMixture { atoms } = spec.family() else {
                return Err(Error::Oracle("exact discrete oracle on a continuous law".into()));
            };
            let value = atoms
                .iter()
                .map(|a| a.weight * codebook.nearest(&a.location).1)
                .sum();
            Ok(RiskEstimate { value, se: 0.0 })
        }
        OracleMode::MonteCarlo { sample, .. } => {
            let (value, se) = loss_mean_and_se(codebook, sample)?;
            Ok(RiskEstimate { value, se })
        }
        OracleMode::SingleCenterClosedForm {
            mean,
            total_variance,
        } => {
            if codebook.k() != 1 {
                return Err(Error::Oracle("closed-form risk supports k = 1 only".into()));
            }
            let shift: f64 = codebook
                .center(0)
                .iter()
                .zip(mean)
                .map(|(c, m)| (c - m) * (c - m))
                .sum();
            Ok(RiskEstimate {
                value: total_variance + shift,
                se: 0.0,
            })
        }
    }
}

/// `max(0, R(C) − R(C*))`, computed from loss differences on the shared
/// oracle so that Monte Carlo noise largely cancels.
pub fn excess_risk(codebook: &Codebook, oracle: &RiskOracle, spec: &DistributionSpec) -> Result<ExcessRisk> {
    oracle.check_compatible(codebook, spec)?;
    let m = oracle.difference_moments(codebook, 0)?;
    Ok(ExcessRisk {
        value: m.mean.max(0.0),
        raw: m.mean,
        se: m.mean_se,
        clipped: m.mean < 0.0,
    })
}
