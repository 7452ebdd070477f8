//! Agreement between propensity-score models: exact subclassification
//! similarity, gradient-cosine similarity and its projection form, the
//! moment equation linking a linear fit to the true model, and `r(a, σ)`.

use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_chunks, map_indexed, Execution};
use crate::expit;
use crate::kv::KeyValues;
use crate::matrix::Matrix;
use crate::rng::{Rng, Streams};
use crate::subclass::{quantile_subclassify, Subclassification};

const DRAW_CHUNK: usize = 1024;
const BRUTE_FORCE_MAX_K: usize = 9;

/// `counts[k][l] = #{i : unit i in class k under m and class l under e}`,
/// padded with zeros to a square `K × K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(sub_m: &Subclassification, sub_e: &Subclassification) -> Result<Self> {
        if sub_m.n() != sub_e.n() {
            return Err(Error::DimensionMismatch { expected: sub_m.n(), found: sub_e.n() });
        }
        let k = sub_m.k().max(sub_e.k());
        let mut counts = vec![vec![0; k]; k];
        for (&lm, &le) in sub_m.labels().iter().zip(sub_e.labels()) {
            counts[lm][le] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, k: usize, l: usize) -> u64 {
        self.counts[k][l]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Largest `Σ_k counts[k][σ(k)]` over permutations, via the Hungarian
    /// method.
    pub fn max_matching(&self) -> u64 {
        let cost: Vec<Vec<i64>> =
            self.counts.iter().map(|row| row.iter().map(|&c| -(c as i64)).collect()).collect();
        let assignment = hungarian_min(&cost);
        assignment.iter().enumerate().map(|(k, &l)| self.counts[k][l]).sum()
    }

    /// Same maximum by enumerating all `K!` permutations.
    pub fn max_matching_brute_force(&self) -> Result<u64> {
        let k = self.k();
        if k > BRUTE_FORCE_MAX_K {
            return Err(Error::Capacity { dyads: k, limit: BRUTE_FORCE_MAX_K });
        }
        let mut perm: Vec<usize> = (0..k).collect();
        let score = |p: &[usize]| -> u64 { p.iter().enumerate().map(|(r, &c)| self.counts[r][c]).sum() };
        let mut best = score(&perm);
        // Heap's algorithm
        let mut c = vec![0; k];
        let mut i = 0;
        while i < k {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.max(score(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        Ok(best)
    }
}

/// Minimum-cost perfect assignment on a square matrix; returns the column
/// assigned to each row. Shortest augmenting paths with potentials, O(n³).
fn hungarian_min(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Fraction of units the two subclassifications place together under the
/// best matching of their class labels.
pub fn exact_similarity(sub_m: &Subclassification, sub_e: &Subclassification) -> Result<f64> {
    let confusion = ConfusionMatrix::new(sub_m, sub_e)?;
    if sub_m.n() == 0 {
        return Err(Error::arg("empty subclassifications"));
    }
    Ok(confusion.max_matching() as f64 / sub_m.n() as f64)
}

/// [`exact_similarity`] by permutation enumeration.
pub fn exact_similarity_brute_force(sub_m: &Subclassification, sub_e: &Subclassification) -> Result<f64> {
    let confusion = ConfusionMatrix::new(sub_m, sub_e)?;
    if sub_m.n() == 0 {
        return Err(Error::arg("empty subclassifications"));
    }
    Ok(confusion.max_matching_brute_force()? as f64 / sub_m.n() as f64)
}

/// A propensity model `g : ℝᵈ → ℝ` evaluated on covariate vectors.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Analytic gradient, if available.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// `h(xᵀβ)` with `h` the identity or expit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScore {
    pub beta: Vec<f64>,
    pub logistic: bool,
}

impl ScoreModel for LinearScore {
    fn dim(&self) -> usize {
        self.beta.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let u = dot(&self.beta, x);
        if self.logistic {
            expit(u)
        } else {
            u
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let scale = if self.logistic {
            let p = expit(dot(&self.beta, x));
            p * (1.0 - p)
        } else {
            1.0
        };
        Some(self.beta.iter().map(|b| scale * b).collect())
    }
}

/// Expected new degree under the inner-product model with `Xⱼ ~ N(0, τ² I)`:
/// `e(x) = (N − 1) r(a, |b| τ ‖x‖)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerProductScore {
    pub units: usize,
    pub dim: usize,
    pub a: f64,
    pub b: f64,
    pub tau: f64,
}

impl ScoreModel for InnerProductScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.units - 1) as f64 * r_function(self.a, self.b.abs() * self.tau * norm(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let len = norm(x);
        if len == 0.0 {
            return Some(vec![0.0; x.len()]);
        }
        let scale = self.b.abs() * self.tau;
        let d = (self.units - 1) as f64 * r_sigma_derivative(self.a, scale * len) * scale / len;
        Some(x.iter().map(|xi| d * xi).collect())
    }
}

/// `1 − Πⱼ (1 − expit(a_own/2 + aⱼ/2 + b xⱼ))`: probability that a unit with
/// node effect `a_own` makes at least one new connection, as a function of
/// its dyadic covariate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicScore {
    pub own_effect: f64,
    pub other_effects: Vec<f64>,
    pub b: f64,
}

impl DyadicScore {
    fn probs(&self, x: &[f64]) -> Vec<f64> {
        self.other_effects.iter().zip(x).map(|(aj, xj)| expit(self.own_effect / 2.0 + aj / 2.0 + self.b * xj)).collect()
    }
}

impl ScoreModel for DyadicScore {
    fn dim(&self) -> usize {
        self.other_effects.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        1.0 - self.probs(x).iter().map(|p| 1.0 - p).product::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let p = self.probs(x);
        let none: f64 = p.iter().map(|q| 1.0 - q).product();
        Some(p.iter().map(|q| none * self.b * q).collect())
    }
}

/// Wraps a closure as a [`ScoreModel`] without an analytic gradient.
pub struct FnScore<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScoreModel for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GradientMethod {
    Analytic,
    /// Central differences with step `base · (1 + ‖x‖)`.
    CentralDifference { base: f64 },
}

impl GradientMethod {
    pub const DEFAULT_DIFFERENCE: GradientMethod = GradientMethod::CentralDifference { base: 1e-5 };
}

fn central_difference<M: ScoreModel + ?Sized>(model: &M, x: &[f64], base: f64) -> Vec<f64> {
    let h = base * (1.0 + norm(x));
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = model.value(&probe);
            probe[k] = x[k] - h;
            let down = model.value(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradients of a model at a set of covariate draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    sample_points: Matrix,
    gradients: Matrix,
    method: GradientMethod,
}

impl GradientField {
    pub fn new(sample_points: Matrix, gradients: Matrix, method: GradientMethod) -> Result<Self> {
        if sample_points.rows() != gradients.rows() || sample_points.cols() != gradients.cols() {
            return Err(Error::arg("gradients must match the sample points in shape"));
        }
        if let Some(index) = gradients.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericalBoundary { index: index / gradients.cols().max(1) });
        }
        Ok(GradientField { sample_points, gradients, method })
    }

    pub fn from_model<M: ScoreModel + ?Sized>(
        model: &M,
        sample_points: Matrix,
        method: GradientMethod,
        exec: Execution,
    ) -> Result<Self> {
        if sample_points.cols() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: sample_points.cols() });
        }
        let rows = map_indexed(sample_points.rows(), exec, |i| {
            let x = sample_points.row(i);
            match method {
                GradientMethod::Analytic => model.gradient(x),
                GradientMethod::CentralDifference { base } => Some(central_difference(model, x, base)),
            }
        });
        let mut data = Vec::with_capacity(sample_points.rows() * sample_points.cols());
        for row in rows {
            data.extend(row.ok_or_else(|| Error::arg("model has no analytic gradient"))?);
        }
        let gradients = Matrix::from_vec(sample_points.rows(), sample_points.cols(), data)?;
        GradientField::new(sample_points, gradients, method)
    }

    pub fn samples(&self) -> usize {
        self.sample_points.rows()
    }

    pub fn sample_points(&self) -> &Matrix {
        &self.sample_points
    }

    pub fn gradients(&self) -> &Matrix {
        &self.gradients
    }

    pub fn method(&self) -> GradientMethod {
        self.method
    }

    pub fn is_zero(&self, i: usize) -> bool {
        norm(self.gradients.row(i)) == 0.0
    }

    /// `∇̄ = mean of ∇g(Xᵢ)/‖∇g(Xᵢ)‖` over nonzero gradients.
    pub fn expected_normalized_gradient(&self) -> Result<NormalizedGradient> {
        let d = self.gradients.cols();
        let mut mean = vec![0.0; d];
        let mut used = 0;
        for i in 0..self.samples() {
            let g = self.gradients.row(i);
            let len = norm(g);
            if len == 0.0 {
                continue;
            }
            used += 1;
            for (m, gk) in mean.iter_mut().zip(g) {
                *m += gk / len;
            }
        }
        if used == 0 {
            return Err(Error::UndefinedSimilarity);
        }
        mean.iter_mut().for_each(|m| *m /= used as f64);
        Ok(NormalizedGradient { vector: mean, used, excluded: self.samples() - used })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedGradient {
    pub vector: Vec<f64>,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxSimilarity {
    pub value: f64,
    pub used: usize,
    /// Points where either gradient vanishes.
    pub excluded: usize,
}

/// `J[m, e] = |mean cos(∇m(Xᵢ), ∇e(Xᵢ))|` over points where both gradients
/// are nonzero.
pub fn approx_similarity(field_m: &GradientField, field_e: &GradientField) -> Result<ApproxSimilarity> {
    if field_m.sample_points != field_e.sample_points {
        return Err(Error::arg("gradient fields must share sample points"));
    }
    let mut total = 0.0;
    let mut used = 0;
    for i in 0..field_m.samples() {
        let (gm, ge) = (field_m.gradients.row(i), field_e.gradients.row(i));
        let (nm, ne) = (norm(gm), norm(ge));
        if nm == 0.0 || ne == 0.0 {
            continue;
        }
        total += dot(gm, ge) / (nm * ne);
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok(ApproxSimilarity { value: (total / used as f64).abs(), used, excluded: field_m.samples() - used })
}

/// `|βᵀ∇̄_e| / ‖β‖`.
pub fn linear_projection_similarity(beta: &[f64], nabla_e_bar: &[f64]) -> Result<f64> {
    if beta.len() != nabla_e_bar.len() {
        return Err(Error::DimensionMismatch { expected: beta.len(), found: nabla_e_bar.len() });
    }
    let len = norm(beta);
    if len == 0.0 {
        return Err(Error::arg("beta must be nonzero"));
    }
    Ok(dot(beta, nabla_e_bar).abs() / len)
}

/// Draws `m` covariate vectors; draw `i` comes from chunk stream
/// `i / 1024`, so the sample does not depend on `exec`.
pub fn sample_points<S>(dim: usize, m: usize, sampler: S, streams: &Streams, exec: Execution) -> Result<Matrix>
where
    S: Fn(&mut Rng) -> Vec<f64> + Sync,
{
    let chunks = map_chunks(m, DRAW_CHUNK, exec, |range| {
        let mut rng = streams.stream((range.start / DRAW_CHUNK) as u64);
        range.map(|_| sampler(&mut rng)).collect::<Vec<_>>()
    });
    let mut data = Vec::with_capacity(m * dim);
    for x in chunks.into_iter().flatten() {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
        }
        data.extend(x);
    }
    Matrix::from_vec(m, dim, data)
}

/// Standard normal covariates scaled by `tau`.
pub fn gaussian_sampler(dim: usize, tau: f64) -> impl Fn(&mut Rng) -> Vec<f64> + Sync {
    move |rng: &mut Rng| {
        (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                tau * z
            })
            .collect()
    }
}

pub fn expected_normalized_gradient<M, S>(
    model: &M,
    sampler: S,
    m: usize,
    method: GradientMethod,
    streams: &Streams,
    exec: Execution,
) -> Result<NormalizedGradient>
where
    M: ScoreModel + ?Sized,
    S: Fn(&mut Rng) -> Vec<f64> + Sync,
{
    if m == 0 {
        return Err(Error::arg("need at least one draw"));
    }
    let points = sample_points(model.dim(), m, sampler, streams, exec)?;
    GradientField::from_model(model, points, method, exec)?.expected_normalized_gradient()
}

/// Similarity of the row-mean linear model to the dyadic "at least one new
/// connection" model: the cosine between `1` and the expected normalized
/// vector `(expit(aᵢ/2 + aⱼ/2 + b Xᵢⱼ))_{j≠i}`. Unit `i` is drawn uniformly
/// per draw, `Xᵢⱼ` from `sampler`, and entry `j` is averaged over the draws
/// with `j ≠ i`.
pub fn dyadic_similarity<S>(
    a_effects: &[f64],
    b: f64,
    sampler: S,
    m: usize,
    streams: &Streams,
    exec: Execution,
) -> Result<f64>
where
    S: Fn(&mut Rng) -> f64 + Sync,
{
    let n = a_effects.len();
    if n < 2 || m == 0 {
        return Err(Error::arg("need at least two units and one draw"));
    }
    let partial = map_chunks(m, DRAW_CHUNK, exec, |range| {
        let mut rng = streams.stream((range.start / DRAW_CHUNK) as u64);
        let mut acc = vec![0.0; n];
        let mut count = vec![0usize; n];
        let mut p = vec![0.0; n];
        for _ in range {
            let i = rng.random_range(0..n);
            for j in 0..n {
                p[j] = if j == i { 0.0 } else { expit(a_effects[i] / 2.0 + a_effects[j] / 2.0 + b * sampler(&mut rng)) };
            }
            let len = norm(&p);
            if len == 0.0 {
                continue;
            }
            for j in (0..n).filter(|&j| j != i) {
                acc[j] += p[j] / len;
                count[j] += 1;
            }
        }
        (acc, count)
    });
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (acc, c) in partial {
        sum.iter_mut().zip(acc).for_each(|(s, v)| *s += v);
        count.iter_mut().zip(c).for_each(|(s, v)| *s += v);
    }
    let mean: Vec<f64> = sum.iter().zip(&count).filter(|(_, &c)| c > 0).map(|(s, &c)| s / c as f64).collect();
    let len = norm(&mean);
    if len == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok(mean.iter().sum::<f64>().abs() / (len * (mean.len() as f64).sqrt()))
}

/// Empirical `E[(e/h)·(h'/(1−h))·X] − E[(h'/(1−h))·X]` at `β`, with `e`
/// given at each row of `x`.
pub fn moment_residual<H, D>(beta: &[f64], e: &[f64], x: &Matrix, h: H, h_prime: D) -> Result<Vec<f64>>
where
    H: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if beta.len() != x.cols() {
        return Err(Error::DimensionMismatch { expected: x.cols(), found: beta.len() });
    }
    if e.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), found: e.len() });
    }
    if x.rows() == 0 {
        return Err(Error::arg("empty covariate sample"));
    }
    let mut out = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let xi = x.row(i);
        let u = dot(xi, beta);
        let hv = h(u);
        if !(hv > 1e-12 && hv < 1.0 - 1e-12) {
            return Err(Error::NumericalBoundary { index: i });
        }
        let w = h_prime(u) / (1.0 - hv) * (e[i] / hv - 1.0);
        out.iter_mut().zip(xi).for_each(|(o, xk)| *o += w * xk);
    }
    let n = x.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

const HERMITE_NODES: usize = 64;

/// Gauss–Hermite nodes and weights for `∫ f(x) e^{−x²} dx`.
fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_NODES))
}

fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E f(Z)` for standard normal `Z` by 64-node Gauss–Hermite quadrature.
pub fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = hermite_rule();
    let s: f64 = x.iter().zip(w).map(|(xi, wi)| wi * f(std::f64::consts::SQRT_2 * xi)).sum();
    s / std::f64::consts::PI.sqrt()
}

/// `r(a, σ) = E expit(a + σZ)`, `Z ~ N(0, 1)`.
pub fn r_function(a: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return expit(a);
    }
    normal_expectation(|z| expit(a + sigma * z))
}

/// `∂r/∂σ = E[expit'(a + σZ) Z]`.
pub fn r_sigma_derivative(a: f64, sigma: f64) -> f64 {
    normal_expectation(|z| {
        let p = expit(a + sigma * z);
        p * (1.0 - p) * z
    })
}

/// Sign of `∂r/∂σ` by central difference with step `10⁻⁴`.
pub fn r_monotonicity_sign(a: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::arg("sigma must be positive"));
    }
    let h = 1e-4_f64.min(sigma / 2.0);
    let slope = (r_function(a, sigma + h) - r_function(a, sigma - h)) / (2.0 * h);
    Ok(if slope > 0.0 {
        1.0
    } else if slope < 0.0 {
        -1.0
    } else {
        0.0
    })
}

/// JSON report of the `similarity` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub exact: f64,
    pub approx: f64,
    pub projection: f64,
    pub samples: usize,
    pub excluded_zero_gradients: usize,
}

/// Settings of a similarity study read from a key-value config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SimilarityConfig {
    /// True model: inner-product network with `NewDegree` treatment.
    /// Misspecified model: linear in the unit covariates with slope `beta`.
    InnerProduct {
        units: usize,
        dim: usize,
        a: f64,
        b: f64,
        tau: f64,
        beta: Vec<f64>,
        samples: usize,
        k: usize,
        replications: usize,
        seed: u64,
    },
    /// True model: dyadic network with `AtLeastOne` treatment and node
    /// effects `aᵢ ~ N(a_mean, a_sd²)`. Misspecified model: linear in the
    /// row mean of the dyadic covariates.
    Dyadic {
        units: usize,
        a_mean: f64,
        a_sd: f64,
        b: f64,
        samples: usize,
        k: usize,
        replications: usize,
        seed: u64,
    },
}

impl SimilarityConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let units = kv.require("n")?;
        let samples = kv.get_or("samples", 10_000)?;
        let k = kv.get_or("k", 5)?;
        let replications = kv.get_or("replications", 20)?;
        let seed = kv.get_or("seed", 0)?;
        let config = match kv.require_str("model")? {
            "inner_product" => {
                let dim = kv.get_or("d", 3)?;
                let beta = match kv.get_list("beta")? {
                    Some(beta) => beta,
                    None => vec![1.0; dim],
                };
                SimilarityConfig::InnerProduct {
                    units,
                    dim,
                    a: kv.get_or("a", -2.0)?,
                    b: kv.get_or("b", 1.0)?,
                    tau: kv.get_or("tau", 1.0)?,
                    beta,
                    samples,
                    k,
                    replications,
                    seed,
                }
            }
            "dyadic" => SimilarityConfig::Dyadic {
                units,
                a_mean: kv.get_or("a_mean", -5.0)?,
                a_sd: kv.get_or("a_sd", 0.0)?,
                b: kv.get_or("b", 1.0)?,
                samples,
                k,
                replications,
                seed,
            },
            other => return Err(Error::arg(format!("unknown similarity model `{other}`"))),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let (units, samples, k, replications) = match self {
            SimilarityConfig::InnerProduct { units, dim, beta, tau, samples, k, replications, .. } => {
                if beta.len() != *dim {
                    return Err(Error::DimensionMismatch { expected: *dim, found: beta.len() });
                }
                if !(*tau > 0.0) {
                    return Err(Error::arg("tau must be positive"));
                }
                (*units, *samples, *k, *replications)
            }
            SimilarityConfig::Dyadic { units, a_sd, samples, k, replications, .. } => {
                if !(*a_sd >= 0.0) {
                    return Err(Error::arg("a_sd must be nonnegative"));
                }
                (*units, *samples, *k, *replications)
            }
        };
        if units < 2 || samples == 0 || replications == 0 || k == 0 || k > units {
            return Err(Error::arg("need n >= 2, samples >= 1, replications >= 1, 1 <= k <= n"));
        }
        Ok(())
    }
}

/// Runs a similarity study. `exact` averages the exact similarity of the
/// two quantile subclassifications over covariate resamples; `approx` and
/// `projection` use `samples` covariate draws.
pub fn run_similarity(config: &SimilarityConfig, exec: Execution) -> Result<SimilarityReport> {
    match config {
        SimilarityConfig::InnerProduct { units, dim, a, b, tau, beta, samples, k, replications, seed } => {
            let streams = Streams::new(*seed);
            let truth = InnerProductScore { units: *units, dim: *dim, a: *a, b: *b, tau: *tau };
            let linear = LinearScore { beta: beta.clone(), logistic: false };
            let rep_streams = streams.derive(1);
            let exact = map_indexed(*replications, exec, |r| {
                let mut rng = rep_streams.stream(r as u64);
                let sampler = gaussian_sampler(*dim, *tau);
                let xs: Vec<Vec<f64>> = (0..*units).map(|_| sampler(&mut rng)).collect();
                let e: Vec<f64> = xs.iter().map(|x| truth.value(x)).collect();
                let m: Vec<f64> = xs.iter().map(|x| linear.value(x)).collect();
                exact_similarity(&quantile_subclassify(&m, *k)?, &quantile_subclassify(&e, *k)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let points = sample_points(*dim, *samples, gaussian_sampler(*dim, *tau), &streams.derive(2), exec)?;
            let field_e = GradientField::from_model(&truth, points.clone(), GradientMethod::Analytic, exec)?;
            let field_m = GradientField::from_model(&linear, points, GradientMethod::Analytic, exec)?;
            let approx = approx_similarity(&field_m, &field_e)?;
            let nabla = field_e.expected_normalized_gradient()?;
            Ok(SimilarityReport {
                exact: exact.iter().sum::<f64>() / exact.len() as f64,
                approx: approx.value,
                projection: linear_projection_similarity(beta, &nabla.vector)?,
                samples: *samples,
                excluded_zero_gradients: approx.excluded,
            })
        }
        SimilarityConfig::Dyadic { units, a_mean, a_sd, b, samples, k, replications, seed } => {
            let streams = Streams::new(*seed);
            let n = *units;
            let draw_effects = |rng: &mut Rng| -> Vec<f64> {
                let normal = Normal::new(*a_mean, *a_sd).unwrap();
                (0..n).map(|_| normal.sample(rng)).collect()
            };
            let rep_streams = streams.derive(1);
            let exact = map_indexed(*replications, exec, |r| {
                let mut rng = rep_streams.stream(r as u64);
                let a = draw_effects(&mut rng);
                let mut x = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in i + 1..n {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        x[(i, j)] = v;
                        x[(j, i)] = v;
                    }
                }
                let mut e = Vec::with_capacity(n);
                let mut m = Vec::with_capacity(n);
                for i in 0..n {
                    let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| x[(i, j)]).collect();
                    let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| a[j]).collect();
                    e.push(DyadicScore { own_effect: a[i], other_effects: others, b: *b }.value(&row));
                    m.push(row.iter().sum::<f64>() / row.len() as f64);
                }
                exact_similarity(&quantile_subclassify(&m, *k)?, &quantile_subclassify(&e, *k)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let a = draw_effects(&mut streams.derive(2).stream(0));
            let approx = dyadic_similarity(&a, *b, |rng| StandardNormal.sample(rng), *samples, &streams.derive(3), exec)?;
            Ok(SimilarityReport {
                exact: exact.iter().sum::<f64>() / exact.len() as f64,
                approx,
                projection: approx,
                samples: *samples,
                excluded_zero_gradients: 0,
            })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::fit_logistic;
    use crate::rng::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sub(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Subclassification {
        Subclassification::new((0..n).map(|_| rng.random_range(0..k)).collect(), k).unwrap()
    }

    #[test]
    fn exact_similarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = random_sub(&mut rng, 40, 4);
        assert_eq!(exact_similarity(&sub, &sub).unwrap(), 1.0);
        let permuted =
            Subclassification::new(sub.labels().iter().map(|&l| [2, 0, 3, 1][l]).collect(), 4).unwrap();
        assert_eq!(exact_similarity(&sub, &permuted).unwrap(), 1.0);
        let short = random_sub(&mut rng, 39, 4);
        assert!(matches!(exact_similarity(&sub, &short), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn unequal_class_counts_are_padded() {
        let m = Subclassification::new(vec![0, 0, 1, 1], 2).unwrap();
        let e = Subclassification::new(vec![0, 1, 2, 2], 3).unwrap();
        assert_eq!(ConfusionMatrix::new(&m, &e).unwrap().k(), 3);
        assert_eq!(exact_similarity(&m, &e).unwrap(), 0.75);
    }

    #[test]
    fn hungarian_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let k = rng.random_range(1..=7);
            let n = rng.random_range(k..60);
            let (m, e) = (random_sub(&mut rng, n, k), random_sub(&mut rng, n, k));
            let c = ConfusionMatrix::new(&m, &e).unwrap();
            assert_eq!(c.max_matching(), c.max_matching_brute_force().unwrap());
        }
    }

    #[test]
    fn hungarian_on_known_matrix() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let a = hungarian_min(&cost);
        let total: i64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn balanced_similarity_bounds_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(2..6);
            let mut a: Vec<usize> = (0..k * 8).map(|i| i % k).collect();
            let mut b = a.clone();
            for i in (1..a.len()).rev() {
                a.swap(i, rng.random_range(0..=i));
                b.swap(i, rng.random_range(0..=i));
            }
            let (sa, sb) = (Subclassification::new(a, k).unwrap(), Subclassification::new(b, k).unwrap());
            let s = exact_similarity(&sa, &sb).unwrap();
            assert!(s >= 1.0 / k as f64 - 1e-12 && s <= 1.0);
            assert_eq!(s, exact_similarity(&sb, &sa).unwrap());
        }
    }

    #[test]
    fn approx_similarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points = Matrix::from_rows(&(0..50).map(|_| vec![rng.random(), rng.random()]).collect::<Vec<_>>()).unwrap();
        let grads = Matrix::from_rows(&(0..50).map(|_| vec![rng.random::<f64>() - 0.5, rng.random()]).collect::<Vec<_>>())
            .unwrap();
        let f = GradientField::new(points.clone(), grads.clone(), GradientMethod::Analytic).unwrap();
        assert!((approx_similarity(&f, &f).unwrap().value - 1.0).abs() < 1e-12);
        let neg = Matrix::from_vec(50, 2, grads.as_slice().iter().map(|g| -2.0 * g).collect()).unwrap();
        let g = GradientField::new(points.clone(), neg, GradientMethod::Analytic).unwrap();
        assert!((approx_similarity(&f, &g).unwrap().value - 1.0).abs() < 1e-12);

        let zeros = GradientField::new(points.clone(), Matrix::zeros(50, 2), GradientMethod::Analytic).unwrap();
        assert!(matches!(approx_similarity(&f, &zeros), Err(Error::UndefinedSimilarity)));
        let other = GradientField::new(Matrix::zeros(50, 2), grads, GradientMethod::Analytic).unwrap();
        assert!(approx_similarity(&f, &other).is_err());
    }

    #[test]
    fn zero_gradients_are_excluded_and_counted() {
        let points = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let m = GradientField::new(points.clone(), Matrix::column(&[1.0, 1.0, 0.0]), GradientMethod::Analytic).unwrap();
        let e = GradientField::new(points, Matrix::column(&[2.0, -1.0, 3.0]), GradientMethod::Analytic).unwrap();
        let s = approx_similarity(&m, &e).unwrap();
        assert_eq!((s.value, s.used, s.excluded), (0.0, 2, 1));
        assert_eq!(m.expected_normalized_gradient().unwrap().excluded, 1);
    }

    #[test]
    fn projection_examples() {
        let nabla = [0.375, -0.5];
        assert_eq!(linear_projection_similarity(&[0.6, -0.8], &nabla).unwrap(), 0.625);
        assert_eq!(linear_projection_similarity(&[4.0, 3.0], &nabla).unwrap(), 0.0);
        assert!(linear_projection_similarity(&[0.0, 0.0], &nabla).is_err());
    }

    #[test]
    fn linear_model_normalized_gradient_is_beta_direction() {
        let model = LinearScore { beta: vec![3.0, -4.0, 0.0], logistic: true };
        let g = expected_normalized_gradient(
            &model,
            gaussian_sampler(3, 1.0),
            100,
            GradientMethod::Analytic,
            &Streams::new(5),
            Execution::Parallel,
        )
        .unwrap();
        for (got, want) in g.vector.iter().zip([0.6, -0.8, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_model_has_vanishing_normalized_gradient() {
        let model = FnScore { dim: 3, f: |x: &[f64]| r_function(-1.0, norm(x)) };
        let g = expected_normalized_gradient(
            &model,
            gaussian_sampler(3, 1.0),
            100_000,
            GradientMethod::DEFAULT_DIFFERENCE,
            &Streams::new(6),
            Execution::Parallel,
        )
        .unwrap();
        assert!(norm(&g.vector) <= 0.02, "{:?}", g.vector);
    }

    #[test]
    fn dyadic_analytic_and_difference_gradients_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(-2.0, 1.0).unwrap();
        let model = DyadicScore {
            own_effect: normal.sample(&mut rng),
            other_effects: (0..20).map(|_| normal.sample(&mut rng)).collect(),
            b: 1.0,
        };
        let points = sample_points(20, 200, gaussian_sampler(20, 1.0), &Streams::new(8), Execution::Parallel).unwrap();
        let exact = GradientField::from_model(&model, points.clone(), GradientMethod::Analytic, Execution::Parallel).unwrap();
        let fd = GradientField::from_model(&model, points, GradientMethod::DEFAULT_DIFFERENCE, Execution::Parallel).unwrap();
        let worst = exact.gradients().as_slice().iter().zip(fd.gradients().as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn inner_product_analytic_gradient_matches_difference() {
        let model = InnerProductScore { units: 50, dim: 3, a: -1.0, b: 0.7, tau: 1.3 };
        let points = sample_points(3, 100, gaussian_sampler(3, 1.3), &Streams::new(9), Execution::Sequential).unwrap();
        let exact = GradientField::from_model(&model, points.clone(), GradientMethod::Analytic, Execution::Sequential).unwrap();
        let fd = GradientField::from_model(&model, points, GradientMethod::DEFAULT_DIFFERENCE, Execution::Sequential).unwrap();
        for (a, b) in exact.gradients().as_slice().iter().zip(fd.gradients().as_slice()) {
            assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn dyadic_similarity_examples() {
        let streams = Streams::new(10);
        let flat = dyadic_similarity(&[-3.0; 30], 0.0, |rng| StandardNormal.sample(rng), 500, &streams, Execution::Parallel)
            .unwrap();
        assert!((flat - 1.0).abs() < 1e-12);
        let homogeneous =
            dyadic_similarity(&[-5.0; 100], 1.0, |rng| StandardNormal.sample(rng), 10_000, &streams, Execution::Parallel)
                .unwrap();
        assert!(homogeneous >= 0.999, "{homogeneous}");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(-5.0, 2.0).unwrap();
        let a: Vec<f64> = (0..100).map(|_| normal.sample(&mut rng)).collect();
        let heterogeneous =
            dyadic_similarity(&a, 1.0, |rng| StandardNormal.sample(rng), 10_000, &streams, Execution::Parallel).unwrap();
        assert!(heterogeneous < homogeneous, "{heterogeneous} vs {homogeneous}");
    }

    #[test]
    fn dyadic_similarity_independent_of_execution() {
        let streams = Streams::new(12);
        let run = |exec| dyadic_similarity(&[-4.0, -2.0, -3.0, -1.0], 1.0, |rng| StandardNormal.sample(rng), 5000, &streams, exec).unwrap();
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn inner_product_vs_linear_is_near_zero() {
        let truth = InnerProductScore { units: 100, dim: 3, a: -2.0, b: 1.0, tau: 1.0 };
        let linear = LinearScore { beta: vec![1.0, -2.0, 0.5], logistic: true };
        let points = sample_points(3, 100_000, gaussian_sampler(3, 1.0), &Streams::new(13), Execution::Parallel).unwrap();
        let fe = GradientField::from_model(&truth, points.clone(), GradientMethod::Analytic, Execution::Parallel).unwrap();
        let fm = GradientField::from_model(&linear, points, GradientMethod::Analytic, Execution::Parallel).unwrap();
        assert!(approx_similarity(&fm, &fe).unwrap().value <= 0.05);
    }

    #[test]
    fn projection_matches_pointwise_cosines_for_linear_models() {
        let truth = InnerProductScore { units: 30, dim: 2, a: 1.0, b: 0.5, tau: 1.0 };
        let shifted = |rng: &mut Rng| {
            let (z1, z2): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            vec![1.0 + z1, z2]
        };
        let m = 20_000;
        let points = sample_points(2, m, shifted, &Streams::new(14), Execution::Parallel).unwrap();
        let fe = GradientField::from_model(&truth, points.clone(), GradientMethod::Analytic, Execution::Parallel).unwrap();
        let nabla = fe.expected_normalized_gradient().unwrap();
        let beta = vec![0.8, 0.3];
        let fm = GradientField::from_model(&LinearScore { beta: beta.clone(), logistic: false }, points, GradientMethod::Analytic, Execution::Parallel)
            .unwrap();
        let direct = approx_similarity(&fm, &fe).unwrap().value;
        let projection = linear_projection_similarity(&beta, &nabla.vector).unwrap();
        assert!(projection > 0.1);
        assert!((direct - projection).abs() < 2.0 / (m as f64).sqrt());
    }

    #[test]
    fn moment_residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 500;
        let x = Matrix::from_rows(&(0..n).map(|_| vec![1.0, StandardNormal.sample(&mut rng)]).collect::<Vec<_>>()).unwrap();
        let beta = [0.3, -1.2];
        let h = expit;
        let hp = |u: f64| expit(u) * (1.0 - expit(u));
        let e: Vec<f64> = (0..n).map(|i| h(dot(x.row(i), &beta))).collect();
        let r = moment_residual(&beta, &e, &x, h, hp).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-15));

        let y: Vec<f64> = e.iter().map(|&p| f64::from(rng.random::<f64>() < p)).collect();
        let fit = fit_logistic(&y, &x).unwrap();
        let at_mle = moment_residual(&fit.coefficients, &y, &x, h, hp).unwrap();
        assert!(at_mle.iter().all(|v| v.abs() < 1e-8), "{at_mle:?}");

        let direction = [0.4, 0.7];
        let mut last = f64::INFINITY;
        for t in [1.0, 0.5, 0.25, 0.1, 0.01] {
            let b: Vec<f64> = fit.coefficients.iter().zip(direction).map(|(c, d)| c + t * d).collect();
            let size = norm(&moment_residual(&b, &y, &x, h, hp).unwrap());
            assert!(size > 0.0 && size < last);
            last = size;
        }

        let edge = moment_residual(&[1e3, 0.0], &e, &x, h, hp);
        assert!(matches!(edge, Err(Error::NumericalBoundary { index: 0 })));
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let (x, w) = gauss_hermite(HERMITE_NODES);
        assert!((w.iter().sum::<f64>() - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!(x.windows(2).all(|p| p[0] > p[1]));
        assert!((normal_expectation(|z| z * z) - 1.0).abs() < 1e-13);
        assert!((normal_expectation(|z| z.powi(4)) - 3.0).abs() < 1e-12);
        assert!((normal_expectation(|z| (0.5 * z).exp()) - (0.125f64).exp()).abs() < 1e-13);
    }

    /// Composite Simpson rule on `[−12, 12]` with `n` panels.
    fn simpson_r(a: f64, sigma: f64) -> f64 {
        let n = 200_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / n as f64;
        let f = |z: f64| expit(a + sigma * z) * (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn r_function_examples() {
        for a in [-3.0, -0.5, 0.0, 2.0] {
            assert_eq!(r_function(a, 0.0), expit(a));
        }
        for sigma in [0.1, 1.0, 3.0, 10.0] {
            assert!((r_function(0.0, sigma) - 0.5).abs() < 1e-14);
        }
        for (a, sigma) in [(1.0, 2.0), (-2.0, 0.5), (0.5, 3.0), (-1.0, 1.0)] {
            let diff = (r_function(a, sigma) - simpson_r(a, sigma)).abs();
            // expit's poles at ±iπ limit the 64-node rule to ~1e-7 at sigma = 3
            assert!(diff < 1e-6, "a={a} sigma={sigma} diff={diff:e}");
        }
    }

    #[test]
    fn r_function_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let pairs = 5_000_000;
        let mut total = 0.0;
        for _ in 0..pairs {
            let z: f64 = StandardNormal.sample(&mut rng);
            total += expit(1.0 + 2.0 * z) + expit(1.0 - 2.0 * z);
        }
        let mc = total / (2 * pairs) as f64;
        assert!((r_function(1.0, 2.0) - mc).abs() < 1e-4);
    }

    #[test]
    fn r_monotonicity_examples() {
        assert_eq!(r_monotonicity_sign(-1.0, 1.0).unwrap(), 1.0);
        assert_eq!(r_monotonicity_sign(1.0, 1.0).unwrap(), -1.0);
        for a in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
            for sigma in [0.1, 0.5, 1.0, 2.0, 3.0] {
                assert_eq!(r_monotonicity_sign(a, sigma).unwrap(), -f64::signum(a));
                assert_eq!(r_sigma_derivative(a, sigma).signum(), -f64::signum(a));
            }
        }
        assert!(r_monotonicity_sign(1.0, 0.0).is_err());
    }

    #[test]
    fn config_parses_and_runs() {
        let kv = KeyValues::parse("model=inner_product\nn=60\nd=3\na=-2\nb=1\ntau=1\nbeta=1,0,0\nsamples=2000\nk=3\nreplications=4\nseed=5\n").unwrap();
        let config = SimilarityConfig::from_key_values(&kv).unwrap();
        let seq = run_similarity(&config, Execution::Sequential).unwrap();
        let par = run_similarity(&config, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert!(seq.approx < 0.1 && seq.projection < 0.1);
        assert!(seq.exact >= 1.0 / 3.0 && seq.exact < 0.9);

        let kv = KeyValues::parse("model=dyadic\nn=40\na_mean=-3\na_sd=0\nb=1\nsamples=2000\nk=4\nreplications=3\nseed=1\n").unwrap();
        let report = run_similarity(&SimilarityConfig::from_key_values(&kv).unwrap(), Execution::Parallel).unwrap();
        assert!(report.approx > 0.99);

        let bad = KeyValues::parse("model=inner_product\nn=10\nd=2\nbeta=1,2,3\n").unwrap();
        assert!(SimilarityConfig::from_key_values(&bad).is_err());
    }

    fn quadratic<'a>(c: &'a [f64], q: &'a [f64]) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
        move |x: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1] + q[0] * x[0] * x[0] + q[1] * x[0] * x[1] + q[2] * x[1] * x[1]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn similarities_invariant_under_monotone_transforms(
            c in proptest::collection::vec(-2.0f64..2.0, 3),
            q in proptest::collection::vec(-1.0f64..1.0, 3),
            seed in any::<u64>(),
            which in 0usize..3,
        ) {
            let transform = |v: f64| match which {
                0 => v.exp(),
                1 => v * v * v + v,
                _ => expit(v),
            };
            let m = FnScore { dim: 2, f: quadratic(&c, &q) };
            let hm = FnScore { dim: 2, f: |x: &[f64]| transform(quadratic(&c, &q)(x)) };
            let e = LinearScore { beta: vec![1.0, -0.5], logistic: true };

            let points = sample_points(2, 200, gaussian_sampler(2, 1.0), &Streams::new(seed), Execution::Sequential).unwrap();
            let fe = GradientField::from_model(&e, points.clone(), GradientMethod::Analytic, Execution::Sequential).unwrap();
            let fm = GradientField::from_model(&m, points.clone(), GradientMethod::DEFAULT_DIFFERENCE, Execution::Sequential).unwrap();
            let fhm = GradientField::from_model(&hm, points.clone(), GradientMethod::DEFAULT_DIFFERENCE, Execution::Sequential).unwrap();
            if let (Ok(a), Ok(b)) = (approx_similarity(&fm, &fe), approx_similarity(&fhm, &fe)) {
                prop_assert!((a.value - b.value).abs() < 1e-4, "{} vs {}", a.value, b.value);
            }

            let sm: Vec<f64> = (0..points.rows()).map(|i| m.value(points.row(i))).collect();
            let shm: Vec<f64> = sm.iter().map(|&v| transform(v)).collect();
            let se: Vec<f64> = (0..points.rows()).map(|i| e.value(points.row(i))).collect();
            prop_assume!(shm.iter().all(|v| v.is_finite()));
            let sub_e = quantile_subclassify(&se, 5).unwrap();
            prop_assert_eq!(
                exact_similarity(&quantile_subclassify(&sm, 5).unwrap(), &sub_e).unwrap(),
                exact_similarity(&quantile_subclassify(&shm, 5).unwrap(), &sub_e).unwrap()
            );
        }
    }
}
