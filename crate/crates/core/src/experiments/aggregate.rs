use serde::{Deserialize, Serialize};

use super::table::TrialRecord;
use crate::bounds::{guaranteed_rate, kmeans_rate, BernsteinProfile, BoundParams};
use crate::error::{Error, Result};
use crate::numeric::{least_squares, mean_and_se, quantile_se_sorted, quantile_sorted};

/// Excess-risk summary at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    /// Successful trials.
    pub trials: usize,
    pub failed: usize,
    /// Fraction of successful trials whose raw excess was negative.
    pub clip_rate: f64,
    /// `None` when every trial failed.
    pub quantiles: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub q90: f64,
    pub mean: f64,
    /// Standard errors; `None` with a single trial.
    pub median_se: Option<f64>,
    pub q90_se: Option<f64>,
    pub mean_se: Option<f64>,
}

/// Log-log fit `log median = intercept − β log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub beta_hat: f64,
    pub se: f64,
    pub intercept: f64,
    /// Sample sizes that entered the fit.
    pub window_n: Vec<f64>,
    /// Sample sizes of the window dropped for a zero median.
    pub excluded_n: Vec<f64>,
}

impl RateFit {
    /// Empirical constant `c` of `median ≈ c n^{−β}`. It is fitted, not a
    /// bound.
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Vacuous,
}

impl Verdict {
    /// Process exit code: 0, 2 or 3.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
            Verdict::Vacuous => 3,
        }
    }
}

/// Where the guaranteed exponent comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TheorySource {
    KMeans { r: f64, k: usize, d: usize },
    Profile {
        params: BoundParams,
        profile: BernsteinProfile,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub verdict: Verdict,
    pub source: TheorySource,
    pub beta_max: Option<f64>,
    pub beta_hat: Option<f64>,
    pub se: Option<f64>,
    /// `β̂ + 2 se − β_max`.
    pub margin: Option<f64>,
    /// Empirical constant of the fitted curve.
    pub constant_fitted: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub name: Option<String>,
    pub points: Vec<CurvePoint>,
    pub fit_window: usize,
    pub fit: Option<RateFit>,
    pub fit_note: Option<String>,
    pub theory: Option<TheoryComparison>,
}

/// Summaries per sample size, in increasing `n`.
pub fn aggregate(table: &[TrialRecord]) -> Vec<CurvePoint> {
    let mut ns: Vec<usize> = table.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let rows: Vec<_> = table.iter().filter(|r| r.n == n).collect();
            let ok: Vec<_> = rows.iter().filter_map(|r| r.excess).collect();
            let mut values: Vec<f64> = ok.iter().map(|e| e.value).collect();
            values.sort_by(f64::total_cmp);
            let clipped = ok.iter().filter(|e| e.clipped).count();
            let quantiles = (!values.is_empty()).then(|| {
                let (mean, mean_se) = mean_and_se(&values);
                let several = values.len() >= 2;
                Quantiles {
                    median: quantile_sorted(&values, 0.5),
                    q90: quantile_sorted(&values, 0.9),
                    mean,
                    median_se: several.then(|| quantile_se_sorted(&values, 0.5)),
                    q90_se: several.then(|| quantile_se_sorted(&values, 0.9)),
                    mean_se: several.then_some(mean_se),
                }
            });
            CurvePoint {
                n,
                trials: ok.len(),
                failed: rows.len() - ok.len(),
                clip_rate: if ok.is_empty() {
                    0.0
                } else {
                    clipped as f64 / ok.len() as f64
                },
                quantiles,
            }
        })
        .collect()
}

/// Least-squares exponent over the last `window` points of `(n, median)`.
/// Zero medians inside the window are dropped and reported; at least three
/// positive points must remain.
pub fn fit_rate(points: &[(f64, f64)], window: usize) -> Result<RateFit> {
    let start = points.len().saturating_sub(window);
    let tail = &points[start..];
    let (kept, dropped): (Vec<_>, Vec<_>) = tail.iter().partition(|(_, m)| *m > 0.0);
    if kept.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} positive medians in a window of {}, need 3",
            kept.len(),
            tail.len()
        )));
    }
    let x: Vec<f64> = kept.iter().map(|(n, _)| n.ln()).collect();
    let y: Vec<f64> = kept.iter().map(|(_, m)| m.ln()).collect();
    let fit = least_squares(&x, &y).ok_or_else(|| Error::Degenerate("repeated sample sizes".into()))?;
    Ok(RateFit {
        beta_hat: -fit.slope,
        se: fit.slope_se,
        intercept: fit.intercept,
        window_n: kept.iter().map(|(n, _)| *n).collect(),
        excluded_n: dropped.iter().map(|(n, _)| *n).collect(),
    })
}

impl RateCurve {
    pub fn from_table(table: &[TrialRecord], fit_window: usize) -> Self {
        Self::from_points(aggregate(table), fit_window)
    }

    pub fn from_points(points: Vec<CurvePoint>, fit_window: usize) -> Self {
        let medians: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| p.quantiles.as_ref().map(|q| (p.n as f64, q.median)))
            .collect();
        let (fit, fit_note) = match fit_rate(&medians, fit_window) {
            Ok(f) => {
                let note = (!f.excluded_n.is_empty())
                    .then(|| format!("zero medians excluded at n = {:?}", f.excluded_n));
                (Some(f), note)
            }
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            name: None,
            points,
            fit_window,
            fit,
            fit_note,
            theory: None,
        }
    }

    /// Medians of the last `fit_window` points that have quantiles.
    fn window_medians(&self) -> Vec<f64> {
        let m: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| p.quantiles.as_ref().map(|q| q.median))
            .collect();
        m[m.len().saturating_sub(self.fit_window)..].to_vec()
    }
}

/// Guaranteed exponent, `None` when the admissible interval is empty.
pub fn theory_beta(source: &TheorySource) -> Result<Option<f64>> {
    let value = match source {
        TheorySource::KMeans { r, k, d } => kmeans_rate(*r, *k, *d),
        TheorySource::Profile { params, profile } => params
            .validate_rate_regime()
            .and_then(|_| guaranteed_rate(params, profile)),
    };
    match value {
        Ok(b) => Ok(Some(b)),
        Err(Error::EmptyInterval(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// PASS when `β̂ + 2 se ≥ β_max`, VACUOUS when no exponent is guaranteed.
pub fn compare_theory(curve: &RateCurve, source: &TheorySource) -> TheoryComparison {
    let mut notes = vec!["the rate constant is fitted empirically, not bounded".to_owned()];
    let mut report = TheoryComparison {
        verdict: Verdict::Vacuous,
        source: source.clone(),
        beta_max: None,
        beta_hat: curve.fit.as_ref().map(|f| f.beta_hat),
        se: curve.fit.as_ref().map(|f| f.se),
        margin: None,
        constant_fitted: curve.fit.as_ref().map(RateFit::constant),
        notes: Vec::new(),
    };
    let beta_max = match theory_beta(source) {
        Ok(Some(b)) => b,
        Ok(None) => {
            notes.push("admissible interval is empty for the assumed moment order".into());
            report.notes = notes;
            return report;
        }
        Err(e) => {
            notes.push(format!("theory not evaluable: {e}"));
            report.notes = notes;
            return report;
        }
    };
    report.beta_max = Some(beta_max);
    report.verdict = match &curve.fit {
        Some(f) => {
            let margin = f.beta_hat + 2.0 * f.se - beta_max;
            report.margin = Some(margin);
            if margin >= 0.0 {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        None => {
            let window = curve.window_medians();
            if !window.is_empty() && window.iter().all(|m| *m == 0.0) {
                notes.push("median excess is identically zero over the fit window".into());
                Verdict::Pass
            } else {
                notes.push(format!(
                    "no rate fit: {}",
                    curve.fit_note.as_deref().unwrap_or("unknown")
                ));
                Verdict::Fail
            }
        }
    };
    report.notes = notes;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(c: f64, beta: f64) -> Vec<(f64, f64)> {
        [1e2f64, 1e3, 1e4, 1e5].iter().map(|&n| (n, c * n.powf(-beta))).collect()
    }

    #[test]
    fn fit_rate_examples() {
        let f = fit_rate(&power(3.0, 1.0), 4).unwrap();
        assert!((f.beta_hat - 1.0).abs() < 1e-12 && f.se < 1e-12);
        assert!((f.constant() - 3.0).abs() < 1e-9);
        let f = fit_rate(&power(1.0, 0.5), 3).unwrap();
        assert!((f.beta_hat - 0.5).abs() < 1e-12);
        assert_eq!(f.window_n, vec![1e3, 1e4, 1e5]);
        let mut with_zero = power(1.0, 1.0);
        with_zero[3].1 = 0.0;
        assert!(matches!(fit_rate(&with_zero, 3), Err(Error::Insufficient(_))));
        let f = fit_rate(&with_zero, 4).unwrap();
        assert_eq!(f.excluded_n, vec![1e5]);
    }

    fn curve(beta: f64) -> RateCurve {
        let mut c = RateCurve::from_points(Vec::new(), 3);
        c.fit = Some(RateFit {
            beta_hat: beta,
            se: 0.0,
            intercept: 0.0,
            window_n: vec![],
            excluded_n: vec![],
        });
        c
    }

    #[test]
    fn verdicts() {
        let src = TheorySource::KMeans { r: 100.0, k: 2, d: 2 };
        assert_eq!(compare_theory(&curve(1.0), &src).verdict, Verdict::Pass);
        assert_eq!(compare_theory(&curve(0.3), &src).verdict, Verdict::Fail);
        let empty = TheorySource::KMeans { r: 10.0, k: 2, d: 2 };
        assert_eq!(compare_theory(&curve(1.0), &empty).verdict, Verdict::Vacuous);
        let r = compare_theory(&curve(1.0), &src);
        assert!((r.margin.unwrap() - (1.0 - r.beta_max.unwrap())).abs() < 1e-15);
    }
}
