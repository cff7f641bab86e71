use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{empirical_risk, nearest_flat, Codebook};
use crate::distributions::Sample;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::rng::StreamKey;

pub const DEFAULT_LLOYD_RESTARTS: usize = 32;
const DEFAULT_LLOYD_MAX_ITER: usize = 300;
const BRUTE_FORCE_MAX_N: usize = 12;
const BRUTE_FORCE_MAX_PARAMS: usize = 16;

fn default_restarts() -> usize {
    DEFAULT_LLOYD_RESTARTS
}

fn default_max_iter() -> usize {
    DEFAULT_LLOYD_MAX_ITER
}

/// How the empirical risk minimizer is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErmStrategy {
    /// Global minimizer in one dimension by dynamic programming over sorted
    /// points.
    #[serde(rename = "exact_1d")]
    Exact1d,
    /// Exhaustive search over partitions of at most 12 points.
    BruteForceTiny,
    /// Best of several k-means++ seeded Lloyd runs. Not guaranteed global.
    LloydMultistart {
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
}

impl ErmStrategy {
    pub fn lloyd(seed: u64) -> Self {
        ErmStrategy::LloydMultistart {
            restarts: DEFAULT_LLOYD_RESTARTS,
            seed,
            max_iter: DEFAULT_LLOYD_MAX_ITER,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ErmStrategy::Exact1d => "exact_1d",
            ErmStrategy::BruteForceTiny => "brute_force_tiny",
            ErmStrategy::LloydMultistart { .. } => "lloyd_multistart",
        }
    }

    /// Whether the strategy certifies a global empirical minimizer.
    pub fn is_exact(&self) -> bool {
        !matches!(self, ErmStrategy::LloydMultistart { .. })
    }
}

/// Empirical risk minimizer over `(−ρ, ρ)^{d×k}`.
///
/// Centers are computed without the box constraint and then clipped into it.
/// `n < k` is allowed and yields duplicate centers.
pub fn erm(sample: &Sample, k: usize, rho: f64, strategy: ErmStrategy) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if sample.is_empty() {
        return Err(Error::param("ERM on an empty sample"));
    }
    if !(rho > 0.0) {
        return Err(Error::param(format!("rho must be > 0, got {rho}")));
    }
    match strategy {
        ErmStrategy::Exact1d => {
            if sample.dim() != 1 {
                return Err(Error::Strategy {
                    strategy: strategy.name(),
                    reason: format!("requires d = 1, sample has d = {}", sample.dim()),
                });
            }
            exact_1d(sample.as_flat(), k, rho)
        }
        ErmStrategy::BruteForceTiny => {
            if sample.len() > BRUTE_FORCE_MAX_N {
                return Err(Error::Strategy {
                    strategy: strategy.name(),
                    reason: format!("n = {} exceeds {BRUTE_FORCE_MAX_N}", sample.len()),
                });
            }
            if sample.dim() * k > BRUTE_FORCE_MAX_PARAMS {
                return Err(Error::Strategy {
                    strategy: strategy.name(),
                    reason: format!("d·k = {} exceeds {BRUTE_FORCE_MAX_PARAMS}", sample.dim() * k),
                });
            }
            brute_force(sample, k, rho)
        }
        ErmStrategy::LloydMultistart {
            restarts,
            seed,
            max_iter,
        } => {
            if restarts == 0 {
                return Err(Error::Strategy {
                    strategy: strategy.name(),
                    reason: "restart count must be >= 1".into(),
                });
            }
            lloyd_multistart(sample, k, rho, restarts, seed, max_iter.max(1))
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().value() / values.len() as f64
}

/// Optimal 1-D clusters are contiguous runs of the sorted sample, so the
/// problem is a k-segment partition solved layer by layer. The split points
/// are monotone in the right endpoint, which lets each layer be filled by
/// divide and conquer in `O(n log n)`.
fn exact_1d(values: &[f64], k: usize, rho: f64) -> Result<Codebook> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite sample value"));
    }
    if k == 1 {
        return Codebook::clipped_flat(vec![mean(values)], 1, rho);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= k {
        let mut centers = distinct;
        let last = *centers.last().expect("nonempty");
        centers.resize(k, last);
        return Codebook::clipped_flat(centers, 1, rho);
    }

    let n = sorted.len();
    let shift = mean(&sorted);
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &x) in sorted.iter().enumerate() {
        let y = x - shift;
        s1[i + 1] = s1[i] + y;
        s2[i + 1] = s2[i] + y * y;
    }
    let cost = |i: usize, j: usize| -> f64 {
        let m = (j - i) as f64;
        let a = s1[j] - s1[i];
        (s2[j] - s2[i] - a * a / m).max(0.0)
    };

    let mut prev: Vec<f64> = (0..=n).map(|j| if j == 0 { 0.0 } else { cost(0, j) }).collect();
    let mut splits: Vec<Vec<u32>> = Vec::with_capacity(k - 1);
    for g in 2..=k {
        let mut cur = vec![f64::INFINITY; n + 1];
        let mut arg = vec![0u32; n + 1];
        fill_layer(&prev, &cost, g, n, g - 1, n - 1, &mut cur, &mut arg);
        splits.push(arg);
        prev = cur;
    }

    let mut bounds = vec![n];
    let mut j = n;
    for arg in splits.iter().rev() {
        j = arg[j] as usize;
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    let centers: Vec<f64> = bounds
        .windows(2)
        .map(|w| mean(&sorted[w[0]..w[1]]))
        .collect();
    Codebook::clipped_flat(centers, 1, rho)
}

/// Fills `cur[j] = min_{i<j} prev[i] + cost(i, j)` for `j ∈ [g, n]` using
/// monotonicity of the argmin. Ties go to the smallest split.
#[allow(clippy::too_many_arguments)]
fn fill_layer<F: Fn(usize, usize) -> f64>(
    prev: &[f64],
    cost: &F,
    g: usize,
    n: usize,
    opt_lo: usize,
    opt_hi: usize,
    cur: &mut [f64],
    arg: &mut [u32],
) {
    // iterative divide and conquer over (j_lo, j_hi, opt_lo, opt_hi)
    let mut stack = vec![(g, n, opt_lo, opt_hi)];
    while let Some((lo, hi, olo, ohi)) = stack.pop() {
        if lo > hi {
            continue;
        }
        let mid = (lo + hi) / 2;
        let mut best = (f64::INFINITY, olo);
        for i in olo..=ohi.min(mid - 1) {
            let v = prev[i] + cost(i, mid);
            if v < best.0 {
                best = (v, i);
            }
        }
        cur[mid] = best.0;
        arg[mid] = best.1 as u32;
        if mid > lo {
            stack.push((lo, mid - 1, olo, best.1));
        }
        stack.push((mid + 1, hi, best.1, ohi));
    }
}

/// Enumerates every partition of the sample into at most `k` labelled-up-to-
/// permutation groups (restricted growth strings).
fn brute_force(sample: &Sample, k: usize, rho: f64) -> Result<Codebook> {
    let n = sample.len();
    let d = sample.dim();
    let mut labels = vec![0usize; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut centers = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    loop {
        let groups = labels.iter().max().map_or(0, |m| m + 1);
        centers.iter_mut().for_each(|c| *c = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (c, x) in centers[l * d..(l + 1) * d].iter_mut().zip(sample.point(i)) {
                *c += x;
            }
        }
        for g in 0..groups {
            for c in &mut centers[g * d..(g + 1) * d] {
                *c /= counts[g] as f64;
            }
        }
        for g in groups..k {
            let (head, tail) = centers.split_at_mut(g * d);
            tail[..d].copy_from_slice(&head[..d]);
        }
        let candidate = Codebook::clipped_flat(centers.clone(), d, rho)?;
        let risk = empirical_risk(&candidate, sample)?;
        if best.as_ref().is_none_or(|(b, _)| risk < *b) {
            best = Some((risk, candidate.as_flat().to_vec()));
        }
        if !next_partition(&mut labels, k) {
            break;
        }
    }
    let (_, flat) = best.expect("at least one partition");
    Codebook::from_flat(flat, d, rho)
}

/// Advances a restricted growth string with labels `< k`.
pub(super) fn next_partition(labels: &mut [usize], k: usize) -> bool {
    let n = labels.len();
    for i in (1..n).rev() {
        let prefix_max = labels[..i].iter().copied().max().unwrap_or(0);
        if labels[i] <= prefix_max && labels[i] + 1 < k {
            labels[i] += 1;
            for l in &mut labels[i + 1..] {
                *l = 0;
            }
            return true;
        }
    }
    false
}

fn lloyd_multistart(
    sample: &Sample,
    k: usize,
    rho: f64,
    restarts: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Codebook> {
    let key = StreamKey::new(seed);
    let runs: Vec<(f64, Codebook)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = key.stream(r as u64);
            let cb = lloyd_run(sample, k, rho, max_iter, &mut rng)?;
            let risk = empirical_risk(&cb, sample)?;
            Ok((risk, cb))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.0 < runs[best].0 {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("restarts >= 1").1)
}

fn plus_plus_seed(sample: &Sample, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = sample.len();
    let d = sample.dim();
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(sample.point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = sample
        .rows()
        .map(|x| nearest_flat(&centers, d, x).1)
        .collect();
    while centers.len() < k * d {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let new = sample.point(pick).to_vec();
        for (i, x) in sample.rows().enumerate() {
            let v: f64 = new.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if v < d2[i] {
                d2[i] = v;
            }
        }
        centers.extend(new);
    }
    centers
}

fn lloyd_run(
    sample: &Sample,
    k: usize,
    rho: f64,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Codebook> {
    let n = sample.len();
    let d = sample.dim();
    let lim = super::clip_limit(rho);
    let mut centers = plus_plus_seed(sample, k, rng);
    centers.iter_mut().for_each(|c| *c = c.clamp(-lim, lim));
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, x) in sample.rows().enumerate() {
            let (a, _) = nearest_flat(&centers, d, x);
            if assign[i] != a {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (x, &a) in sample.rows().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = (sums[c * d + j] / counts[c] as f64).clamp(-lim, lim);
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed at the point with the largest current distortion
                let mut worst = (0, -1.0);
                for (i, x) in sample.rows().enumerate() {
                    let v = nearest_flat(&centers, d, x).1;
                    if v > worst.1 {
                        worst = (i, v);
                    }
                }
                for (j, v) in sample.point(worst.0).iter().enumerate() {
                    centers[c * d + j] = v.clamp(-lim, lim);
                }
            }
        }
    }
    Codebook::from_flat(centers, d, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{sample, DistributionSpec};
    use proptest::prelude::*;

    fn sorted_centers(c: &Codebook) -> Vec<f64> {
        let mut v = c.as_flat().to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Independent 1-D oracle: try every contiguous split into k groups.
    fn brute_contiguous(values: &[f64], k: usize) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        fn rec(v: &[f64], k: usize) -> f64 {
            let sse = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            };
            if k == 1 || v.len() <= 1 {
                return sse(v);
            }
            (1..v.len())
                .map(|i| sse(&v[..i]) + rec(&v[i..], k - 1))
                .fold(sse(v), f64::min)
        }
        rec(&v, k) / v.len() as f64
    }

    #[test]
    fn exact_1d_examples() {
        let s = Sample::from_scalars(&[0.0, 2.0, 10.0]);
        let c = erm(&s, 2, 20.0, ErmStrategy::Exact1d).unwrap();
        assert_eq!(sorted_centers(&c), vec![1.0, 10.0]);
        assert!((empirical_risk(&c, &s).unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let s = Sample::from_scalars(&[0.3]);
        let c = erm(&s, 1, 1.0, ErmStrategy::Exact1d).unwrap();
        assert_eq!(c.as_flat(), &[0.3]);

        let s = Sample::from_scalars(&[-1.0, -1.0, 1.0, 1.0]);
        let c = erm(&s, 2, 2.0, ErmStrategy::Exact1d).unwrap();
        assert_eq!(sorted_centers(&c), vec![-1.0, 1.0]);
        assert_eq!(empirical_risk(&c, &s).unwrap(), 0.0);
    }

    #[test]
    fn fewer_points_than_centers() {
        let s = Sample::from_scalars(&[0.5, -0.5]);
        let c = erm(&s, 4, 1.0, ErmStrategy::Exact1d).unwrap();
        assert_eq!(c.k(), 4);
        assert_eq!(empirical_risk(&c, &s).unwrap(), 0.0);
        let b = erm(&s, 4, 1.0, ErmStrategy::BruteForceTiny).unwrap();
        assert_eq!(b.k(), 4);
        assert_eq!(empirical_risk(&b, &s).unwrap(), 0.0);
    }

    #[test]
    fn strategy_mismatch_errors() {
        let s2 = Sample::from_points(vec![0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert!(matches!(
            erm(&s2, 1, 5.0, ErmStrategy::Exact1d),
            Err(Error::Strategy { .. })
        ));
        let big = Sample::from_scalars(&[0.0; 13]);
        assert!(erm(&big, 2, 5.0, ErmStrategy::BruteForceTiny).is_err());
        let lloyd = ErmStrategy::LloydMultistart {
            restarts: 0,
            seed: 0,
            max_iter: 10,
        };
        assert!(erm(&big, 2, 5.0, lloyd).is_err());
    }

    #[test]
    fn clipping_keeps_codebook_feasible() {
        let s = Sample::from_scalars(&[100.0, 101.0, -50.0]);
        let c = erm(&s, 2, 10.0, ErmStrategy::Exact1d).unwrap();
        assert!(c.as_flat().iter().all(|x| x.abs() < 10.0));
    }

    #[test]
    fn exact_1d_matches_contiguous_brute_force_on_heavy_tails() {
        let spec = DistributionSpec::student_t(3.0).unwrap();
        for seed in 0..20 {
            let s = sample(&spec, 40, seed).unwrap();
            for k in 1..=4 {
                let c = erm(&s, k, 1e6, ErmStrategy::Exact1d).unwrap();
                let got = empirical_risk(&c, &s).unwrap();
                let want = brute_contiguous(s.as_flat(), k);
                assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn lloyd_is_deterministic_and_near_exact() {
        let spec = DistributionSpec::point_masses(&[(-2.0, 0.3), (0.0, 0.3), (3.0, 0.4)]).unwrap();
        let s = sample(&spec, 200, 5).unwrap();
        let a = erm(&s, 3, 5.0, ErmStrategy::lloyd(1)).unwrap();
        let b = erm(&s, 3, 5.0, ErmStrategy::lloyd(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(empirical_risk(&a, &s).unwrap(), 0.0);
    }

    #[test]
    fn lloyd_two_dimensional_clusters() {
        let atoms = vec![
            crate::distributions::Atom::new(vec![1.0, 1.0], 0.5),
            crate::distributions::Atom::new(vec![-1.0, -1.0], 0.5),
        ];
        let spec = DistributionSpec::new(crate::distributions::Family::PointMassMixture { atoms }, 2)
            .unwrap();
        let s = sample(&spec, 50, 3).unwrap();
        let c = erm(&s, 2, 2.0, ErmStrategy::lloyd(0)).unwrap();
        assert_eq!(empirical_risk(&c, &s).unwrap(), 0.0);
    }

    #[test]
    fn partitions_enumerated_exactly() {
        // Stirling numbers: S(5,1)+S(5,2)+S(5,3) = 1 + 15 + 25 = 41
        let mut labels = vec![0; 5];
        let mut count = 1;
        while next_partition(&mut labels, 3) {
            count += 1;
        }
        assert_eq!(count, 41);
    }

    fn random_codebooks_never_beat(s: &Sample, k: usize, rho: f64, best: f64, seed: u64) {
        let key = StreamKey::new(seed);
        for t in 0..1000 {
            let mut rng = key.stream(t);
            let c = Codebook::random(k, s.dim(), rho, &mut rng).unwrap();
            assert!(empirical_risk(&c, s).unwrap() >= best - 1e-12);
        }
    }

    #[test]
    fn erm_dominates_random_codebooks() {
        let spec = DistributionSpec::pareto(2.5, 1.0).unwrap();
        let s = sample(&spec, 10, 8).unwrap();
        for k in 1..=3 {
            let exact = erm(&s, k, 50.0, ErmStrategy::Exact1d).unwrap();
            let brute = erm(&s, k, 50.0, ErmStrategy::BruteForceTiny).unwrap();
            let re = empirical_risk(&exact, &s).unwrap();
            let rb = empirical_risk(&brute, &s).unwrap();
            assert!((re - rb).abs() < 1e-10, "k={k}: {re} vs {rb}");
            random_codebooks_never_beat(&s, k, 50.0, re, 100 + k as u64);
        }
        let g = DistributionSpec::gaussian(0.0, 1.0).unwrap().with_dim(2).unwrap();
        let s2 = sample(&g, 8, 1).unwrap();
        let b2 = erm(&s2, 2, 4.0, ErmStrategy::BruteForceTiny).unwrap();
        random_codebooks_never_beat(&s2, 2, 4.0, empirical_risk(&b2, &s2).unwrap(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_1d_equals_brute_force_on_tiny_samples(
            values in prop::collection::vec(-10.0f64..10.0, 1..=10),
            k in 1usize..=3,
        ) {
            let s = Sample::from_scalars(&values);
            let exact = erm(&s, k, 20.0, ErmStrategy::Exact1d).unwrap();
            let brute = erm(&s, k, 20.0, ErmStrategy::BruteForceTiny).unwrap();
            let re = empirical_risk(&exact, &s).unwrap();
            let rb = empirical_risk(&brute, &s).unwrap();
            prop_assert!((re - rb).abs() <= 1e-10 * rb.max(1.0), "{} vs {}", re, rb);
        }
    }
}
