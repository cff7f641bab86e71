//! Closed-form evaluators for the rate exponents and the inequalities used to
//! derive them.
//!
//! Everything here is a pure function of its numeric arguments. The
//! randomized property suites live in the tests of this module and in the
//! crate's acceptance suite.

pub mod eval;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Theory constants: moment order `r`, entropy constant and scale
/// `(𝒞, K)`, envelope norm `W`, box radius `ρ`, confidence `δ` and sample
/// size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub r: f64,
    pub c_entropy: f64,
    pub k_entropy: f64,
    pub w: f64,
    pub rho: f64,
    pub delta: f64,
    pub n: f64,
}

impl BoundParams {
    /// Checks positivity, `δ ∈ (0, 1)`, `𝒞, K ≥ 1` and the integrability
    /// requirement `r ≥ 𝒞 + 1`.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("r", self.r),
            ("c_entropy", self.c_entropy),
            ("k_entropy", self.k_entropy),
            ("w", self.w),
            ("rho", self.rho),
            ("delta", self.delta),
            ("n", self.n),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::param(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.delta >= 1.0 {
            return Err(Error::param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.c_entropy < 1.0 || self.k_entropy < 1.0 {
            return Err(Error::param("entropy constants must satisfy C >= 1 and K >= 1"));
        }
        if self.r < self.c_entropy + 1.0 {
            return Err(Error::param(format!(
                "r = {} must be at least C + 1 = {}",
                self.r,
                self.c_entropy + 1.0
            )));
        }
        Ok(())
    }

    /// Additionally requires `r ≥ 4𝒞`, the regime of every rate statement.
    pub fn validate_rate_regime(&self) -> Result<()> {
        self.validate()?;
        require_rate_regime(self.r, self.c_entropy)
    }
}

fn require_rate_regime(r: f64, c_entropy: f64) -> Result<()> {
    if r < 4.0 * c_entropy {
        return Err(Error::EmptyInterval(format!(
            "r = {r} < 4C = {}: no admissible rate exponent",
            4.0 * c_entropy
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileProvenance {
    Assumed,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinPiece {
    pub label: String,
    pub b: f64,
    pub gamma: f64,
}

/// Piecewise Bernstein constants `(B_i, γ_i)` over a finite partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinProfile {
    pieces: Vec<BernsteinPiece>,
    provenance: ProfileProvenance,
}

impl BernsteinProfile {
    pub fn new(pieces: Vec<BernsteinPiece>, provenance: ProfileProvenance) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::param("Bernstein profile needs at least one piece"));
        }
        for p in &pieces {
            if !(p.b > 0.0) {
                return Err(Error::param(format!("piece {}: B must be > 0", p.label)));
            }
            if !(p.gamma > 0.0 && p.gamma <= 1.0) {
                return Err(Error::param(format!(
                    "piece {}: gamma must lie in (0, 1], got {}",
                    p.label, p.gamma
                )));
            }
        }
        Ok(Self { pieces, provenance })
    }

    /// Profile with unit `B` and the given exponents, labelled by index.
    pub fn from_gammas(gammas: &[f64]) -> Result<Self> {
        Self::new(
            gammas
                .iter()
                .enumerate()
                .map(|(i, &gamma)| BernsteinPiece {
                    label: format!("piece-{i}"),
                    b: 1.0,
                    gamma,
                })
                .collect(),
            ProfileProvenance::Assumed,
        )
    }

    pub fn pieces(&self) -> &[BernsteinPiece] {
        &self.pieces
    }

    pub fn provenance(&self) -> ProfileProvenance {
        self.provenance
    }

    pub fn min_gamma(&self) -> f64 {
        self.pieces.iter().map(|p| p.gamma).fold(f64::INFINITY, f64::min)
    }
}

/// `A(l, r, β, 𝒞, α) = max{ l²/r − (1−β) l + β𝒞, [β(1 − α/2) − 1/2] l + β𝒞 }`.
pub fn exponent_a(l: f64, r: f64, c_entropy: f64, beta: f64, alpha: f64) -> f64 {
    let quadratic = l * l / r - (1.0 - beta) * l + beta * c_entropy;
    let linear = (beta * (1.0 - alpha / 2.0) - 0.5) * l + beta * c_entropy;
    quadratic.max(linear)
}

/// The open interval `(0, β_max)` of rate exponents for which the failure
/// probability exponent is negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibleBeta {
    pub beta_max: f64,
    pub r: f64,
}

impl AdmissibleBeta {
    /// The moment index `l = r(1 − β)/2` that certifies `A < 0`.
    pub fn witness_l(&self, beta: f64) -> f64 {
        self.r * (1.0 - beta) / 2.0
    }

    pub fn contains(&self, beta: f64) -> bool {
        beta > 0.0 && beta < self.beta_max
    }

    pub fn is_empty(&self) -> bool {
        self.beta_max <= 0.0
    }
}

/// `β_max = (1 − 2√(𝒞/r)) / (2 − α)` for `α ≤ 1` and `1 − 2√(𝒞/r)` for
/// `α ≥ 1`. Requires `r ≥ 4𝒞`.
pub fn admissible_beta(r: f64, c_entropy: f64, alpha: f64) -> Result<AdmissibleBeta> {
    if !(alpha > 0.0) {
        return Err(Error::param(format!("alpha must be > 0, got {alpha}")));
    }
    if !(r > 0.0 && c_entropy > 0.0) {
        return Err(Error::param("r and C must be > 0"));
    }
    require_rate_regime(r, c_entropy)?;
    let base = (1.0 - 2.0 * (c_entropy / r).sqrt()).max(0.0);
    let beta_max = if alpha <= 1.0 { base / (2.0 - alpha) } else { base };
    Ok(AdmissibleBeta { beta_max, r })
}

/// `β_max = min_i admissible_beta(γ_i) = (1 − 2√(𝒞/r)) / (2 − min γ)`.
pub fn guaranteed_rate(params: &BoundParams, profile: &BernsteinProfile) -> Result<f64> {
    profile
        .pieces()
        .iter()
        .map(|p| admissible_beta(params.r, params.c_entropy, p.gamma).map(|a| a.beta_max))
        .try_fold(f64::INFINITY, |acc, b| b.map(|b| acc.min(b)))
}

/// Guaranteed k-means exponent `((r−1)/r)(1 − 2√(k(d+1)/r))`, requiring
/// `r ≥ 4k(d+1)`.
pub fn kmeans_rate(r: f64, k: usize, d: usize) -> Result<f64> {
    if k == 0 || d == 0 {
        return Err(Error::param("k and d must be >= 1"));
    }
    let c = (k * (d + 1)) as f64;
    if !(r >= 4.0 * c) {
        return Err(Error::EmptyInterval(format!(
            "r = {r} < 4k(d+1) = {}: no admissible k-means exponent",
            4.0 * c
        )));
    }
    Ok(((r - 1.0) / r) * (1.0 - 2.0 * (c / r).sqrt()).max(0.0))
}

/// Default constant `64/ζ + ζ + 7` of the tail bound for suprema of empirical
/// processes.
pub fn lederer_constant(zeta: f64) -> f64 {
    64.0 / zeta + zeta + 7.0
}

/// Inputs of [`lederer_tail`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedererInput {
    pub n: f64,
    pub r: f64,
    /// Bound on `(E sup_k |V_k|^r)^{1/r}`.
    pub m: f64,
    /// `sup_k (E V_k²)^{1/2}`.
    pub sigma: f64,
    pub zeta: f64,
    pub x: f64,
    /// Overrides `64/ζ + ζ + 7`.
    #[serde(default)]
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    /// May exceed 1, in which case the bound is vacuous.
    pub value: f64,
    pub argmin_l: f64,
}

/// Number of interior grid points for the minimization over real `l`.
pub const LEDERER_GRID: usize = 512;

/// `min_{1≤l≤r} (1/x)^l [c (l/n)^{1−l/r} M + 4σ√(l/n)]^l` over a uniform grid
/// of real `l` merged with the integers in `[1, r]`.
pub fn lederer_tail(input: &LedererInput) -> Result<TailBound> {
    let LedererInput {
        n,
        r,
        m,
        sigma,
        zeta,
        x,
        constant,
    } = *input;
    if !(n > 0.0 && zeta > 0.0 && x > 0.0) {
        return Err(Error::param("n, zeta and x must be > 0"));
    }
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::param(format!("r must be finite and >= 1, got {r}")));
    }
    if !(m >= 0.0 && sigma >= 0.0) {
        return Err(Error::param("M and sigma must be >= 0"));
    }
    let c = constant.unwrap_or_else(|| lederer_constant(zeta));
    if m == 0.0 && sigma == 0.0 {
        return Ok(TailBound {
            value: 0.0,
            argmin_l: 1.0,
        });
    }
    let mut grid: Vec<f64> = (0..LEDERER_GRID)
        .map(|i| 1.0 + (r - 1.0) * i as f64 / (LEDERER_GRID - 1) as f64)
        .collect();
    grid.extend((1..=r.floor() as usize).map(|i| i as f64));
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let ln_x = x.ln();
    let mut best = TailBound {
        value: f64::INFINITY,
        argmin_l: 1.0,
    };
    let mut best_ln = f64::INFINITY;
    for &l in &grid {
        let ratio = l / n;
        let inner = c * ratio.powf(1.0 - l / r) * m + 4.0 * sigma * ratio.sqrt();
        let ln_v = l * (inner.ln() - ln_x);
        if ln_v < best_ln {
            best_ln = ln_v;
            best = TailBound {
                value: ln_v.exp(),
                argmin_l: l,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderCheck {
    /// `‖u‖_{L2}`.
    pub lhs: f64,
    /// `‖u‖_{L1}^{(r−2)/(2r−2)} ‖u‖_{Lr}^{r/(2r−2)}`.
    pub rhs: f64,
    pub holds: bool,
}

/// Slack used by [`reverse_holder_check`], relative once `rhs > 1`.
pub const HOLDER_SLACK: f64 = 1e-12;

/// Evaluates both sides of the reverse-Hölder interpolation
/// `‖u‖₂ ≤ ‖u‖₁^{(r−2)/(2r−2)} ‖u‖_r^{r/(2r−2)}` under the empirical measure
/// of a weighted sample. Weights default to uniform.
pub fn reverse_holder_check(values: &[f64], weights: Option<&[f64]>, r: f64) -> Result<HolderCheck> {
    if !(r > 2.0) || !r.is_finite() {
        return Err(Error::param(format!("r must be finite and > 2, got {r}")));
    }
    if values.is_empty() {
        return Err(Error::param("empty sample"));
    }
    if values.iter().any(|u| !(*u >= 0.0) || !u.is_finite()) {
        return Err(Error::param("values must be finite and nonnegative"));
    }
    let uniform;
    let w = match weights {
        Some(w) => {
            if w.len() != values.len() {
                return Err(Error::Dimension {
                    expected: values.len(),
                    got: w.len(),
                });
            }
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::param("weights must be nonnegative"));
            }
            w
        }
        None => {
            uniform = vec![1.0; values.len()];
            &uniform[..]
        }
    };
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param("weights must not all vanish"));
    }
    let scale = values.iter().copied().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(HolderCheck {
            lhs: 0.0,
            rhs: 0.0,
            holds: true,
        });
    }
    let (mut p1, mut p2, mut pr) = (0.0, 0.0, 0.0);
    for (u, wi) in values.iter().zip(w) {
        let v = u / scale;
        let wi = wi / total;
        p1 += wi * v;
        p2 += wi * v * v;
        pr += wi * v.powf(r);
    }
    let lhs = p2.sqrt() * scale;
    let rhs = p1.powf((r - 2.0) / (2.0 * r - 2.0)) * pr.powf(1.0 / (2.0 * r - 2.0)) * scale;
    Ok(HolderCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + HOLDER_SLACK * rhs.max(1.0),
    })
}

/// Constants `(C₁, C₂)` with `x ≤ a x^ν + b ⇒ x ≤ C₁ a^{1/(1−ν)} + C₂ b`,
/// from Young's inequality: `C₁ = 2(1−ν)(2ν)^{ν/(1−ν)}`, `C₂ = 2`.
pub fn implicit_constants(nu: f64) -> Result<(f64, f64)> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::param(format!("nu must lie in (0, 1), got {nu}")));
    }
    Ok((2.0 * (1.0 - nu) * (2.0 * nu).powf(nu / (1.0 - nu)), 2.0))
}

pub fn implicit_bound(a: f64, b: f64, nu: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::param("a and b must be >= 0"));
    }
    let (c1, c2) = implicit_constants(nu)?;
    Ok(c1 * a.powf(1.0 / (1.0 - nu)) + c2 * b)
}

/// Far-field Bernstein constants derived from envelope integrability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FarField {
    /// `2 α^γ`.
    pub b: f64,
    /// `(r − 2)/(r − 1)`.
    pub gamma: f64,
    /// `M = W^{r/(r−2)}`.
    pub m: f64,
    pub alpha: f64,
    /// Risk ratio `α/(α − M)` above which the inequality is guaranteed.
    pub ratio_threshold: f64,
}

impl FarField {
    /// Excess-risk split `(M/(α − M)) R(f*)` equivalent to the ratio threshold.
    pub fn excess_threshold(&self, optimal_risk: f64) -> f64 {
        self.m / (self.alpha - self.m) * optimal_risk
    }

    pub fn applies(&self, risk: f64, optimal_risk: f64) -> bool {
        risk >= self.ratio_threshold * optimal_risk
    }
}

pub fn far_field_bernstein(w: f64, r: f64, alpha: f64) -> Result<FarField> {
    if !(r > 2.0) {
        return Err(Error::param(format!("r must be > 2, got {r}")));
    }
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::param(format!("W must be finite and > 0, got {w}")));
    }
    let m = w.powf(r / (r - 2.0));
    if !(alpha > m) {
        return Err(Error::Threshold(format!("alpha = {alpha} must exceed M = {m}")));
    }
    let gamma = (r - 2.0) / (r - 1.0);
    Ok(FarField {
        b: 2.0 * alpha.powf(gamma),
        gamma,
        m,
        alpha,
        ratio_threshold: alpha / (alpha - m),
    })
}
