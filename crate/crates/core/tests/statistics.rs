//! Large-sample checks of samplers and risk oracles against closed forms.

use fastrate_core::quantization::{excess_risk, true_risk};
use fastrate_core::{empirical_risk, erm, moment, sample, Codebook, DistributionSpec, ErmStrategy, Family, RiskOracle};

fn abs_power_stats(points: &[f64], dim: usize, p: f64) -> (f64, f64) {
    let vals: Vec<f64> = points
        .chunks_exact(dim)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn sample_moments_match_closed_forms() {
    let symmetric = DistributionSpec::new(
        Family::Pareto {
            shape: 6.0,
            scale: 1.0,
            symmetric: true,
        },
        1,
    )
    .unwrap();
    let cases: Vec<(DistributionSpec, Vec<f64>)> = vec![
        (DistributionSpec::gaussian(0.5, 2.0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]),
        (DistributionSpec::gaussian(0.0, 1.0).unwrap().with_dim(3).unwrap(), vec![1.0, 2.0, 4.0]),
        (DistributionSpec::student_t(10.0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]),
        (DistributionSpec::pareto(6.0, 1.0).unwrap(), vec![0.5, 1.0, 2.0]),
        (symmetric, vec![1.0, 2.0]),
        (DistributionSpec::uniform(-1.0, 3.0).unwrap(), vec![1.0, 2.0, 5.0]),
        (DistributionSpec::uniform(0.0, 1.0).unwrap().with_dim(2).unwrap(), vec![2.0, 4.0]),
        (DistributionSpec::lognormal(0.0, 0.5).unwrap(), vec![1.0, 2.0, 3.0]),
        (DistributionSpec::point_masses(&[(-1.0, 0.3), (2.0, 0.7)]).unwrap(), vec![1.0, 2.0, 3.0]),
    ];
    for (i, (spec, orders)) in cases.iter().enumerate() {
        let s = sample(spec, 1_000_000, 1000 + i as u64).unwrap();
        for &p in orders {
            let exact = moment(spec, p).unwrap();
            let (est, se) = abs_power_stats(s.as_flat(), s.dim(), p);
            assert!(
                (est - exact).abs() <= 5.0 * se + 1e-12,
                "{} order {p}: {est} vs {exact} (se {se})",
                spec.family().name()
            );
        }
    }
}

#[test]
fn pareto_fourth_moment_diverges_while_second_settles() {
    let spec = DistributionSpec::pareto(3.0, 1.0).unwrap();
    assert!(moment(&spec, 4.0).unwrap().is_infinite());
    assert!((moment(&spec, 2.0).unwrap() - 3.0).abs() < 1e-12);
    // Median over independent seeds of the n-sample estimate; for E X^4 it
    // grows like n^(1/3), for E X^2 it settles at 3.
    let median_estimate = |n: usize, p: i32| {
        let mut est: Vec<f64> = (0..41u64)
            .map(|seed| {
                let s = sample(&spec, n, 7_000 + seed).unwrap();
                s.as_flat().iter().map(|x| x.powi(p)).sum::<f64>() / n as f64
            })
            .collect();
        est.sort_by(f64::total_cmp);
        est[20]
    };
    let fourth: Vec<f64> = [1_000, 10_000, 100_000].iter().map(|&n| median_estimate(n, 4)).collect();
    assert!(fourth.windows(2).all(|w| w[1] > 1.5 * w[0]), "{fourth:?}");
    let second = median_estimate(100_000, 2);
    assert!((second - 3.0).abs() < 0.15, "{second}");
}

#[test]
fn sampling_is_independent_of_thread_count() {
    let spec = DistributionSpec::student_t(3.0).unwrap().with_dim(2).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample(&spec, 300_000, 42).unwrap())
    };
    assert_eq!(run(1).as_flat(), run(7).as_flat());
}

#[test]
fn empirical_risk_obeys_law_of_large_numbers() {
    let spec = DistributionSpec::gaussian(0.0, 1.0).unwrap();
    let oracle = RiskOracle::closed_form(&spec).unwrap();
    let cb = Codebook::new(vec![vec![0.7]], 5.0).unwrap();
    let exact = true_risk(&cb, &spec, &oracle).unwrap().value;
    assert!((exact - 1.49).abs() < 1e-12);
    let s = sample(&spec, 100_000, 3).unwrap();
    let losses: Vec<f64> = s.as_flat().iter().map(|x| (x - 0.7).powi(2)).collect();
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let se = (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let emp = empirical_risk(&cb, &s).unwrap();
    assert!((emp - exact).abs() <= 5.0 * se);

    let mix = DistributionSpec::point_masses(&[(-1.0, 0.3), (2.0, 0.6), (5.0, 0.1)]).unwrap();
    let exact_oracle = RiskOracle::exact_discrete(&mix).unwrap();
    let cb2 = Codebook::new(vec![vec![0.0], vec![3.0]], 6.0).unwrap();
    let r = true_risk(&cb2, &mix, &exact_oracle).unwrap().value;
    let s2 = sample(&mix, 100_000, 5).unwrap();
    let emp2 = empirical_risk(&cb2, &s2).unwrap();
    assert!((emp2 - r).abs() <= 5.0 * (r / 100_000f64).sqrt().max(1e-3), "{emp2} vs {r}");
}

#[test]
fn exact_and_monte_carlo_excess_agree() {
    let mix = DistributionSpec::point_masses(&[(-2.0, 0.25), (0.0, 0.25), (1.0, 0.2), (4.0, 0.3)]).unwrap();
    let exact = RiskOracle::exact_discrete(&mix).unwrap().with_optimum(2, 6.0).unwrap();
    let mc = RiskOracle::monte_carlo(&mix, 1_000_000, 11)
        .unwrap()
        .with_optimum(2, 6.0)
        .unwrap();
    for s in 0..5 {
        let data = sample(&mix, 30, 100 + s).unwrap();
        let c = erm(&data, 2, 6.0, ErmStrategy::Exact1d).unwrap();
        let e = excess_risk(&c, &exact, &mix).unwrap();
        let m = excess_risk(&c, &mc, &mix).unwrap();
        assert!((e.raw - m.raw).abs() <= 5.0 * m.se + 1e-12, "{e:?} vs {m:?}");
    }
}
