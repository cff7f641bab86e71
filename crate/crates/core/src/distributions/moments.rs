use std::f64::consts::PI;

use super::{DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::numeric::{integrate_to_infinity, ln_gamma};

const QUAD_TOL: f64 = 1e-9;

fn is_even_integer(p: f64) -> bool {
    p.fract() == 0.0 && (p as u64) % 2 == 0
}

/// `E|X|^p` for a single coordinate of a product family.
fn abs_moment_1d(family: &Family, p: f64) -> Result<f64> {
    Ok(match *family {
        Family::Pareto { shape, scale, .. } => {
            if p >= shape {
                f64::INFINITY
            } else {
                shape * scale.powf(p) / (shape - p)
            }
        }
        Family::StudentT { nu, scale } => {
            if p >= nu {
                f64::INFINITY
            } else {
                let ln = p * scale.ln() + 0.5 * p * nu.ln() + ln_gamma(0.5 * (p + 1.0))
                    + ln_gamma(0.5 * (nu - p))
                    - 0.5 * PI.ln()
                    - ln_gamma(0.5 * nu);
                ln.exp()
            }
        }
        Family::Lognormal { mu, sigma } => (p * mu + 0.5 * p * p * sigma * sigma).exp(),
        Family::Gaussian { mean, std } => gaussian_abs_moment(mean, std, p)?,
        Family::Uniform { low, high } => {
            let antiderivative = |x: f64| x.signum() * x.abs().powf(p + 1.0) / (p + 1.0);
            (antiderivative(high) - antiderivative(low)) / (high - low)
        }
        Family::PointMassMixture { .. } => unreachable!("mixtures are handled jointly"),
    })
}

fn gaussian_abs_moment(mean: f64, std: f64, p: f64) -> Result<f64> {
    if mean == 0.0 {
        let ln = p * std.ln() + 0.5 * p * 2f64.ln() + ln_gamma(0.5 * (p + 1.0)) - 0.5 * PI.ln();
        return Ok(ln.exp());
    }
    if is_even_integer(p) {
        // E X^{2m} = Σ_j C(2m, 2j) μ^{2m-2j} σ^{2j} (2j-1)!!
        let two_m = p as u64;
        let mut total = 0.0;
        let mut binom = 1.0; // C(2m, 0)
        let mut double_fact = 1.0; // (2j - 1)!! with j = 0
        for j in 0..=two_m / 2 {
            let k = 2 * j;
            if j > 0 {
                binom *= ((two_m - k + 2) * (two_m - k + 1)) as f64 / (k * (k - 1)) as f64;
                double_fact *= (k - 1) as f64;
            }
            total += binom * mean.powi((two_m - k) as i32) * std.powi(k as i32) * double_fact;
        }
        return Ok(total);
    }
    let density = |x: f64| {
        let z = (x - mean) / std;
        (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
    };
    let right = integrate_to_infinity(|x| x.powf(p) * density(x), 0.0, QUAD_TOL / 2.0);
    let left = integrate_to_infinity(|x| x.powf(p) * density(-x), 0.0, QUAD_TOL / 2.0);
    let value = right.value + left.value;
    let err = right.abs_error + left.abs_error;
    if err > QUAD_TOL.max(1e-13 * value.abs()) {
        return Err(Error::Unsupported(format!(
            "quadrature for gaussian |x|^{p} did not reach tolerance (error {err:e})"
        )));
    }
    Ok(value)
}

/// `E‖X‖^order`.
///
/// Closed forms cover every one-dimensional family and point-mass mixtures
/// of any dimension. For product laws with `d > 1` the value is exact when
/// `order` is an even integer (multinomial expansion of `(Σ X_j²)^m`) or the
/// law is a centred Gaussian (chi distribution). Other multivariate orders
/// return [`Error::Unsupported`]. Orders at or above the finite-moment
/// threshold return `f64::INFINITY`.
pub fn moment(spec: &DistributionSpec, order: f64) -> Result<f64> {
    if !(order > 0.0) || !order.is_finite() {
        return Err(Error::param(format!("moment order must be > 0, got {order}")));
    }
    if order >= spec.max_finite_moment_order() {
        return Ok(f64::INFINITY);
    }
    let d = spec.dim();
    match spec.family() {
        Family::PointMassMixture { atoms } => Ok(atoms
            .iter()
            .map(|a| {
                let norm2: f64 = a.location.iter().map(|x| x * x).sum();
                a.weight * norm2.powf(0.5 * order)
            })
            .sum()),
        family if d == 1 => abs_moment_1d(family, order),
        Family::Gaussian { mean, std } if *mean == 0.0 => {
            let df = d as f64;
            let ln = order * std.ln() + 0.5 * order * 2f64.ln() + ln_gamma(0.5 * (df + order))
                - ln_gamma(0.5 * df);
            Ok(ln.exp())
        }
        family if is_even_integer(order) => {
            let m = (order / 2.0) as usize;
            product_even_moment(family, d, m)
        }
        family => Err(Error::Unsupported(format!(
            "E‖X‖^{order} for a {}-dimensional {} law has no exact route",
            d,
            family.name()
        ))),
    }
}

/// `E(Σ_j X_j²)^m` for iid coordinates via
/// `m! [t^m] (Σ_k E X^{2k} t^k / k!)^d`.
fn product_even_moment(family: &Family, d: usize, m: usize) -> Result<f64> {
    let mut series = Vec::with_capacity(m + 1);
    let mut factorial = 1.0;
    for k in 0..=m {
        if k > 0 {
            factorial *= k as f64;
        }
        let mk = if k == 0 {
            1.0
        } else {
            abs_moment_1d(family, 2.0 * k as f64)?
        };
        if !mk.is_finite() {
            return Ok(f64::INFINITY);
        }
        series.push(mk / factorial);
    }
    let mut power = vec![0.0; m + 1];
    power[0] = 1.0;
    for _ in 0..d {
        let mut next = vec![0.0; m + 1];
        for (i, &a) in power.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in series.iter().enumerate().take(m + 1 - i) {
                next[i + j] += a * b;
            }
        }
        power = next;
    }
    Ok(power[m] * factorial)
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Envelope norm from the displayed k-means bound
/// `W = ((1/2) E‖X‖^{2r} + (1/2) ρ^{2r})^{1/r}`, evaluated in log space.
pub fn envelope_bound(spec: &DistributionSpec, rho: f64, r: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::param(format!("rho must be > 0, got {rho}")));
    }
    if !(r >= 1.0) {
        return Err(Error::param(format!("r must be >= 1, got {r}")));
    }
    let m = moment(spec, 2.0 * r)?;
    if !m.is_finite() {
        return Ok(f64::INFINITY);
    }
    let ln_sum = ln_add_exp(m.ln(), 2.0 * r * rho.ln()) + 0.5f64.ln();
    Ok((ln_sum / r).exp())
}

/// A valid upper bound on `(E sup_C ℓ(C, X)^r)^{1/r}` over the box
/// `(−ρ, ρ)^{d×k}`: the sup is at most `(‖X‖ + ρ√d)²`, and Minkowski in
/// `L^{2r}` gives `W ≤ (‖X‖_{2r} + ρ√d)²`.
pub fn certified_envelope_bound(spec: &DistributionSpec, rho: f64, r: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::param(format!("rho must be > 0, got {rho}")));
    }
    if !(r >= 1.0) {
        return Err(Error::param(format!("r must be >= 1, got {r}")));
    }
    let m = moment(spec, 2.0 * r)?;
    if !m.is_finite() {
        return Ok(f64::INFINITY);
    }
    let norm = m.powf(1.0 / (2.0 * r));
    let v = norm + rho * (spec.dim() as f64).sqrt();
    Ok(v * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{integrate, integrate_real_line};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn pareto_moments_match_quadrature() {
        let spec = DistributionSpec::pareto(3.0, 1.0).unwrap();
        assert!(close(moment(&spec, 2.0).unwrap(), 3.0, 1e-14));
        assert!(moment(&spec, 3.0).unwrap().is_infinite());
        assert!(moment(&spec, 4.0).unwrap().is_infinite());
        for p in [0.5, 1.0, 1.7, 2.5] {
            // x = e^u turns the algebraic tail into an exponential one
            let q = integrate_to_infinity(
                |u| {
                    let x = u.exp();
                    x.powf(p) * 3.0 * x.powf(-4.0) * x
                },
                0.0,
                1e-11,
            );
            assert!(close(moment(&spec, p).unwrap(), q.value, 1e-9), "p={p}");
        }
    }

    #[test]
    fn point_mass_moment() {
        let spec = DistributionSpec::point_masses(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(moment(&spec, 4.0).unwrap(), 1.0);
        assert_eq!(moment(&spec, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn student_t_moments() {
        // t_6: E X^2 = 6/4, E X^4 = 3·36/(4·2) = 13.5
        let spec = DistributionSpec::student_t(6.0).unwrap();
        assert!(close(moment(&spec, 2.0).unwrap(), 1.5, 1e-12));
        assert!(close(moment(&spec, 4.0).unwrap(), 13.5, 1e-12));
        assert!(moment(&spec, 6.0).unwrap().is_infinite());
        let nu: f64 = 6.0;
        let c = (ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)).exp() / (nu * PI).sqrt();
        let density = |x: f64| c * (1.0 + x * x / nu).powf(-0.5 * (nu + 1.0));
        for p in [0.7, 1.0, 3.3] {
            let q = integrate_real_line(|x| x.abs().powf(p) * density(x), 0.0, 1e-11);
            assert!(close(moment(&spec, p).unwrap(), q.value, 1e-9), "p={p}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let std_normal = DistributionSpec::gaussian(0.0, 1.0).unwrap();
        assert!(close(moment(&std_normal, 2.0).unwrap(), 1.0, 1e-14));
        assert!(close(moment(&std_normal, 4.0).unwrap(), 3.0, 1e-13));
        assert!(close(moment(&std_normal, 8.0).unwrap(), 105.0, 1e-12));
        assert!(close(
            moment(&std_normal, 1.0).unwrap(),
            (2.0 / PI).sqrt(),
            1e-14
        ));
        let shifted = DistributionSpec::gaussian(1.5, 0.5).unwrap();
        // E X^4 = μ^4 + 6μ²σ² + 3σ^4
        let mu: f64 = 1.5;
        let s2: f64 = 0.25;
        assert!(close(
            moment(&shifted, 4.0).unwrap(),
            mu.powi(4) + 6.0 * mu * mu * s2 + 3.0 * s2 * s2,
            1e-13
        ));
        // E|X|^3 via quadrature agrees with the even-order neighbour ordering
        let m3 = moment(&shifted, 3.0).unwrap();
        let density = |x: f64| (-0.5 * ((x - mu) / 0.5).powi(2)).exp() / (0.5 * (2.0 * PI).sqrt());
        let q = integrate(|x| x.abs().powi(3) * density(x), -10.0, 12.0, 1e-12);
        assert!(close(m3, q.value, 1e-9));
    }

    #[test]
    fn uniform_and_lognormal_moments() {
        let u = DistributionSpec::uniform(-1.0, 2.0).unwrap();
        // E|X|^2 = (8 + 1) / (3·3) = 1
        assert!(close(moment(&u, 2.0).unwrap(), 1.0, 1e-14));
        // E|X| = (4/2 + 1/2) / 3
        assert!(close(moment(&u, 1.0).unwrap(), 2.5 / 3.0, 1e-14));
        let ln = DistributionSpec::lognormal(0.0, 0.5).unwrap();
        assert!(close(moment(&ln, 2.0).unwrap(), (0.5f64).exp(), 1e-14));
    }

    #[test]
    fn multivariate_even_moments() {
        // Standard Gaussian in d = 3: E‖X‖^4 = d(d + 2) = 15
        let g = DistributionSpec::gaussian(0.0, 1.0).unwrap().with_dim(3).unwrap();
        assert!(close(moment(&g, 4.0).unwrap(), 15.0, 1e-12));
        // Shifted Gaussian forces the multinomial route: E(X1² + X2²)² with
        // X ~ N(1, 1): E X^4 = 10, E X² = 2 → 2·10 + 2·2·2 = 28
        let s = DistributionSpec::gaussian(1.0, 1.0).unwrap().with_dim(2).unwrap();
        assert!(close(moment(&s, 4.0).unwrap(), 28.0, 1e-12));
        // Uniform(-1, 1) in d = 2: E‖X‖² = 2/3
        let u = DistributionSpec::uniform(-1.0, 1.0).unwrap().with_dim(2).unwrap();
        assert!(close(moment(&u, 2.0).unwrap(), 2.0 / 3.0, 1e-14));
        assert!(matches!(moment(&u, 3.0), Err(Error::Unsupported(_))));
        let p = DistributionSpec::pareto(3.0, 1.0).unwrap().with_dim(2).unwrap();
        assert!(moment(&p, 4.0).unwrap().is_infinite());
    }

    #[test]
    fn envelope_examples() {
        let mix = DistributionSpec::point_masses(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(close(envelope_bound(&mix, 1.0, 2.0).unwrap(), 1.0, 1e-15));
        let p = DistributionSpec::pareto(3.0, 1.0).unwrap();
        assert!(envelope_bound(&p, 1.0, 2.0).unwrap().is_infinite());
        let g = DistributionSpec::gaussian(0.0, 1.0).unwrap();
        for r in [1.0, 2.0, 10.0, 50.0] {
            assert!(envelope_bound(&g, 1.0, r).unwrap().is_finite());
        }
    }

    #[test]
    fn envelope_monotone_in_rho() {
        let g = DistributionSpec::student_t(10.0).unwrap();
        let mut prev = 0.0;
        for rho in [0.1, 0.5, 1.0, 2.0, 8.0, 100.0] {
            let w = envelope_bound(&g, rho, 3.0).unwrap();
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn envelope_finite_iff_moment_finite() {
        let t = DistributionSpec::student_t(6.0).unwrap();
        for r in [1.0, 2.0, 2.9, 3.0, 4.0] {
            let finite_moment = moment(&t, 2.0 * r).unwrap().is_finite();
            assert_eq!(envelope_bound(&t, 1.0, r).unwrap().is_finite(), finite_moment);
        }
    }

    #[test]
    fn certified_envelope_dominates_exact_one_dimensional_envelope() {
        // d = 1: sup_c (x - c)² over (−ρ, ρ) is (|x| + ρ)²; E(|X| + ρ)^{2r} by
        // binomial expansion for integer 2r.
        let g = DistributionSpec::gaussian(0.0, 1.0).unwrap();
        let rho: f64 = 2.0;
        let r = 2.0;
        let exact: f64 = (0..=4)
            .map(|j| {
                let binom = [1.0, 4.0, 6.0, 4.0, 1.0][j];
                let mj = if j == 0 { 1.0 } else { moment(&g, j as f64).unwrap() };
                binom * mj * rho.powi(4 - j as i32)
            })
            .sum();
        let w_exact = exact.powf(1.0 / r);
        assert!(certified_envelope_bound(&g, rho, r).unwrap() >= w_exact);
    }
}
