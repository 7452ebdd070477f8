//! Subclassification on propensity scores and the subclassification
//! estimators of treatment effects.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

pub const DEFAULT_CLASSES: usize = 5;
pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 300;

/// Class label per unit, `labels[i] ∈ 0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subclassification {
    labels: Vec<usize>,
    k: usize,
}

impl Subclassification {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::arg(format!("label {bad} out of range for K = {k}")));
        }
        Ok(Subclassification { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn empty_classes(&self) -> Vec<usize> {
        self.class_sizes().iter().enumerate().filter(|(_, &s)| s == 0).map(|(k, _)| k).collect()
    }

    pub fn members(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(move |(_, &l)| l == class).map(|(i, _)| i)
    }

    /// CSV with header `unit,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(out, "{i},{l}").unwrap();
        }
        out
    }
}

/// Assigns each unit to the quantile bin of its score.
///
/// Cut points are the order statistics at ranks `⌊kN/K⌋`, `k = 1..K−1`; bin
/// `k` is `[q_k, q_{k+1})` and the last bin is closed. Tied scores always
/// share a bin.
pub fn quantile_subclassify(scores: &[f64], k: usize) -> Result<Subclassification> {
    let n = scores.len();
    if k == 0 {
        return Err(Error::arg("need at least one class"));
    }
    if k > n {
        return Err(Error::arg(format!("K = {k} exceeds N = {n}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::arg("scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..k).map(|c| sorted[c * n / k]).collect();
    let labels = scores.iter().map(|&s| cuts.partition_point(|&q| q <= s)).collect();
    Subclassification::new(labels, k)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means run: k-means++ seeding, then Lloyd iterations until labels
/// stop changing. Returns labels and within-cluster sum of squares.
fn kmeans_once<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let wcss = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, wcss)
}

/// k-means subclassification of the rows of `points` (typically the pairs
/// `(ê(m−1, Xᵢ), ê(m, Xᵢ))`), keeping the best of [`KMEANS_RESTARTS`]
/// k-means++ restarts. Restart seeds are drawn from `rng` up front, so the
/// result does not depend on `exec`.
pub fn kmeans_subclassify<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<Subclassification> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::arg(format!("need 1 <= K <= N, got K = {k}, N = {n}")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::arg("points differ in dimension"));
    }
    let seeds: Vec<u64> = (0..KMEANS_RESTARTS).map(|_| rng.random()).collect();
    let runs = map_indexed(KMEANS_RESTARTS, exec, |r| {
        kmeans_once(points, k, &mut ChaCha8Rng::seed_from_u64(seeds[r]))
    });
    let (labels, _) = runs
        .into_iter()
        .reduce(|best, run| if run.1 < best.1 { run } else { best })
        .unwrap();
    Subclassification::new(labels, k)
}

fn check_lengths(sub: &Subclassification, z: usize, y: usize) -> Result<()> {
    if z != sub.n() {
        return Err(Error::DimensionMismatch { expected: sub.n(), found: z });
    }
    if y != sub.n() {
        return Err(Error::DimensionMismatch { expected: sub.n(), found: y });
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Difference of outcome means between units at `treated` and `control`
/// levels inside one class.
fn class_contrast(
    class: usize,
    sub: &Subclassification,
    z: &[usize],
    y: &[f64],
    treated: usize,
    control: usize,
) -> Result<f64> {
    let arm = |level| mean(sub.members(class).filter(|&i| z[i] == level).map(|i| y[i]));
    match (arm(treated), arm(control)) {
        (Some(t), Some(c)) => Ok(t - c),
        _ => Err(Error::OneArmedClass { class }),
    }
}

/// `τ̂_k`: treated-minus-control outcome means within class `k`.
pub fn within_class_effect(class: usize, sub: &Subclassification, z: &[usize], y: &[f64]) -> Result<f64> {
    check_lengths(sub, z.len(), y.len())?;
    if class >= sub.k() {
        return Err(Error::arg(format!("class {class} out of range for K = {}", sub.k())));
    }
    class_contrast(class, sub, z, y, 1, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub value: f64,
    /// `τ̂_k`, `None` for dropped classes.
    pub per_class: Vec<Option<f64>>,
    /// Units per class entering the contrast.
    pub class_sizes: Vec<usize>,
    /// Non-empty classes lacking one of the two arms.
    pub dropped_classes: Vec<usize>,
}

fn combine(per_class: Vec<Option<f64>>, class_sizes: Vec<usize>) -> Result<EffectEstimate> {
    let mut dropped = Vec::new();
    let (mut total, mut weight) = (0.0, 0usize);
    for (k, (tau, &size)) in per_class.iter().zip(&class_sizes).enumerate() {
        match tau {
            Some(t) => {
                total += size as f64 * t;
                weight += size;
            }
            None if size > 0 => dropped.push(k),
            None => {}
        }
    }
    if weight == 0 {
        return Err(Error::EstimationImpossible("no class contains both arms".into()));
    }
    Ok(EffectEstimate { value: total / weight as f64, per_class, class_sizes, dropped_classes: dropped })
}

/// `τ̂ = Σ_k N_k τ̂_k / Σ_k N_k` over classes with both arms; one-armed
/// classes are dropped and reported.
pub fn combined_effect(sub: &Subclassification, z: &[usize], y: &[f64]) -> Result<EffectEstimate> {
    check_lengths(sub, z.len(), y.len())?;
    let sizes = sub.class_sizes();
    let per_class = (0..sub.k()).map(|k| class_contrast(k, sub, z, y, 1, 0).ok()).collect();
    combine(per_class, sizes)
}

/// Multivalued contrast of level `m` against `m − 1`: within each class,
/// `Ave(Y | Z = m) − Ave(Y | Z = m − 1)`, weighted by the number of units at
/// either level. Units at other levels do not enter the contrast.
pub fn level_contrast_effect(sub: &Subclassification, z: &[usize], y: &[f64], m: usize) -> Result<EffectEstimate> {
    check_lengths(sub, z.len(), y.len())?;
    if m == 0 {
        return Err(Error::arg("level m must be at least 1"));
    }
    let sizes = (0..sub.k())
        .map(|k| sub.members(k).filter(|&i| z[i] == m || z[i] + 1 == m).count())
        .collect();
    let per_class = (0..sub.k()).map(|k| class_contrast(k, sub, z, y, m, m - 1).ok()).collect();
    combine(per_class, sizes)
}

/// Difference in sample means between treated and control units.
pub fn difference_in_means(z: &[usize], y: &[f64]) -> Result<f64> {
    let t = mean(z.iter().zip(y).filter(|(&zi, _)| zi == 1).map(|(_, &v)| v));
    let c = mean(z.iter().zip(y).filter(|(&zi, _)| zi == 0).map(|(_, &v)| v));
    match (t, c) {
        (Some(t), Some(c)) => Ok(t - c),
        _ => Err(Error::EstimationImpossible("one arm is empty".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn quantile_examples() {
        let s = quantile_subclassify(&[0.1, 0.2, 0.3, 0.4], 2).unwrap();
        assert_eq!(s.labels(), &[0, 0, 1, 1]);
        let flat = quantile_subclassify(&[0.7; 6], 2).unwrap();
        assert_eq!(flat.class_sizes().iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(flat.empty_classes().len(), 1);
        assert!(quantile_subclassify(&[0.1, 0.2], 3).is_err());
        assert!(quantile_subclassify(&[0.1, f64::NAN], 1).is_err());
    }

    #[test]
    fn quantile_uniform_scores_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let s = quantile_subclassify(&scores, 5).unwrap();
        // continuous scores have no ties, so sizes are exact
        assert_eq!(s.class_sizes(), vec![2000; 5]);
    }

    #[test]
    fn quantile_ties_stay_together() {
        let scores = [0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 3.0, 3.0];
        let s = quantile_subclassify(&scores, 4).unwrap();
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] == scores[j] {
                    assert_eq!(s.labels()[i], s.labels()[j]);
                }
            }
        }
    }

    #[test]
    fn kmeans_separated_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut points = Vec::new();
        for c in [0.0, 1.0] {
            for _ in 0..30 {
                points.push(vec![c + normal.sample(&mut rng), c + normal.sample(&mut rng)]);
            }
        }
        let s = kmeans_subclassify(&points, 2, &mut rng, Execution::Parallel).unwrap();
        let first = s.labels()[0];
        assert!(s.labels()[..30].iter().all(|&l| l == first));
        assert!(s.labels()[30..].iter().all(|&l| l != first));
    }

    #[test]
    fn kmeans_identical_points() {
        let points = vec![vec![0.3, 0.3]; 10];
        let s = kmeans_subclassify(&points, 2, &mut ChaCha8Rng::seed_from_u64(3), Execution::Sequential).unwrap();
        assert_eq!(s.class_sizes().iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn kmeans_planted_mixture_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = 0.1;
        let normal = Normal::new(0.0, sigma).unwrap();
        let centers = [[0.0, 0.0], [10.0 * sigma, 0.0], [0.0, 10.0 * sigma]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..50 {
                points.push(vec![center[0] + normal.sample(&mut rng) * 0.3, center[1] + normal.sample(&mut rng) * 0.3]);
                truth.push(c);
            }
        }
        let s = kmeans_subclassify(&points, 3, &mut rng, Execution::Parallel).unwrap();
        for i in 0..points.len() {
            for j in 0..points.len() {
                assert_eq!(truth[i] == truth[j], s.labels()[i] == s.labels()[j]);
            }
        }
        let again = kmeans_subclassify(&points, 3, &mut ChaCha8Rng::seed_from_u64(9), Execution::Sequential).unwrap();
        let again_par = kmeans_subclassify(&points, 3, &mut ChaCha8Rng::seed_from_u64(9), Execution::Parallel).unwrap();
        assert_eq!(again, again_par);
    }

    #[test]
    fn within_class_examples() {
        let sub = Subclassification::new(vec![0, 0], 1).unwrap();
        assert_eq!(within_class_effect(0, &sub, &[1, 0], &[1.0, 0.0]).unwrap(), 1.0);
        let sub = Subclassification::new(vec![0; 4], 1).unwrap();
        assert_eq!(within_class_effect(0, &sub, &[1, 1, 0, 0], &[2.0, 4.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(
            within_class_effect(0, &sub, &[1, 1, 1, 1], &[1.0; 4]),
            Err(Error::OneArmedClass { class: 0 })
        ));
    }

    #[test]
    fn within_class_matches_direct_two_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let sub = Subclassification::new(labels.clone(), 2).unwrap();
        for k in 0..2 {
            let (mut st, mut nt, mut sc, mut nc) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if labels[i] == k {
                    if z[i] == 1 {
                        st += y[i];
                        nt += 1.0;
                    } else {
                        sc += y[i];
                        nc += 1.0;
                    }
                }
            }
            let direct = st / nt - sc / nc;
            assert!((within_class_effect(k, &sub, &z, &y).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_examples() {
        let z = [1, 0, 1, 1, 0];
        let y = [3.0, 1.0, 2.0, 5.0, 0.5];
        let one = Subclassification::new(vec![0; 5], 1).unwrap();
        let est = combined_effect(&one, &z, &y).unwrap();
        assert_eq!(est.value, difference_in_means(&z, &y).unwrap());

        // class 0: 10 units with τ̂ = 1, class 1: 30 units with τ̂ = 0
        let mut labels = vec![0; 10];
        labels.extend(vec![1; 30]);
        let z: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 10 && i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let sub = Subclassification::new(labels, 2).unwrap();
        assert!((combined_effect(&sub, &z, &y).unwrap().value - 0.25).abs() < 1e-15);

        let sub = Subclassification::new(vec![0, 0, 1, 1], 2).unwrap();
        let est = combined_effect(&sub, &[1, 0, 1, 1], &[2.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(est.dropped_classes, vec![1]);
        assert_eq!(est.value, 1.0);
        assert!(matches!(
            combined_effect(&sub, &[1, 1, 0, 0], &[0.0; 4]),
            Err(Error::EstimationImpossible(_))
        ));
    }

    #[test]
    fn combined_matches_brute_force_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y: Vec<f64> = (0..n).map(|i| scores[i] * 3.0 + z[i] as f64 * 2.0 + rng.random::<f64>()).collect();
        let sub = quantile_subclassify(&scores, 5).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..5 {
            let idx: Vec<usize> = (0..n).filter(|&i| sub.labels()[i] == k).collect();
            let t: Vec<f64> = idx.iter().filter(|&&i| z[i] == 1).map(|&i| y[i]).collect();
            let c: Vec<f64> = idx.iter().filter(|&&i| z[i] == 0).map(|&i| y[i]).collect();
            if t.is_empty() || c.is_empty() {
                continue;
            }
            let tau = t.iter().sum::<f64>() / t.len() as f64 - c.iter().sum::<f64>() / c.len() as f64;
            num += idx.len() as f64 * tau;
            den += idx.len() as f64;
        }
        assert!((combined_effect(&sub, &z, &y).unwrap().value - num / den).abs() < 1e-12);
    }

    #[test]
    fn level_contrast_examples() {
        // five-worker example, 0-indexed units
        let z = [1, 2, 1, 2, 4];
        let y = [0.0, 0.0, 1.0, 1.0, 0.0];
        let true_sets = Subclassification::new(vec![0, 0, 1, 0, 0], 2).unwrap();
        assert_eq!(level_contrast_effect(&true_sets, &z, &y, 2).unwrap().value, 0.5);
        let naive_sets = Subclassification::new(vec![0, 0, 0, 0, 1], 2).unwrap();
        assert_eq!(level_contrast_effect(&naive_sets, &z, &y, 2).unwrap().value, 0.0);
        let flat = Subclassification::new(vec![0; 4], 1).unwrap();
        assert_eq!(level_contrast_effect(&flat, &[3, 2, 3, 2], &[1.0, 0.0, 0.0, 1.0], 3).unwrap().value, 0.0);
        assert!(level_contrast_effect(&flat, &[1, 1, 1, 1], &[0.0; 4], 3).is_err());
    }

    #[test]
    fn randomized_design_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (reps, n, ate) = (2000, 100, 2.0);
        let estimates: Vec<f64> = (0..reps)
            .map(|_| {
                let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
                let y: Vec<f64> =
                    (0..n).map(|i| 5.0 * scores[i] + ate * z[i] as f64 + normal.sample(&mut rng)).collect();
                combined_effect(&quantile_subclassify(&scores, 5).unwrap(), &z, &y).unwrap().value
            })
            .collect();
        let m = estimates.iter().sum::<f64>() / reps as f64;
        let sd = (estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((m - ate).abs() < 3.0 * sd / (reps as f64).sqrt(), "mean {m}, sd {sd}");
    }

    proptest! {
        #[test]
        fn quantile_labels_invariant_under_monotone_maps(
            scores in proptest::collection::vec(-5.0f64..5.0, 5..60),
            k in 1usize..5,
        ) {
            prop_assume!(k <= scores.len());
            let base = quantile_subclassify(&scores, k).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(base.labels().to_vec(), quantile_subclassify(&mapped, k).unwrap().labels().to_vec());
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            prop_assert_eq!(base.labels().to_vec(), quantile_subclassify(&cubed, k).unwrap().labels().to_vec());
        }

        #[test]
        fn single_class_equals_difference_in_means(
            z in proptest::collection::vec(0usize..2, 4..40),
            seed in any::<u64>(),
        ) {
            prop_assume!(z.contains(&0) && z.contains(&1));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = z.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
            let one = Subclassification::new(vec![0; z.len()], 1).unwrap();
            let est = combined_effect(&one, &z, &y).unwrap().value;
            prop_assert!((est - difference_in_means(&z, &y).unwrap()).abs() < 1e-12);
        }
    }
}
