//! Propensity scores `e(l, Xᵢ) = P(Zᵢ = l | X)` for network treatments.
//!
//! The entanglement-aware scores marginalize over the post-treatment network
//! given `G⁻`: by Monte-Carlo ([`estimate_entangled`]), exactly through the
//! Poisson-binomial law of the new degree ([`exact_degree_propensity`]), or by
//! enumerating every completion of `G⁻` ([`brute_force_propensity`]). The
//! classical baselines fit a unit-level GLM to the observed treatments and
//! ignore the network.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_chunks, map_indexed, Execution};
use crate::glm::{fit_logistic, fit_poisson, intercept_design, GlmFit};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::netmodel::{sample_unchecked, EdgeModel, EdgeProbabilities};
use crate::rng::Streams;
use crate::treatment::TreatmentDef;

/// Largest number of free dyads [`brute_force_propensity`] will enumerate.
pub const BRUTE_FORCE_MAX_DYADS: usize = 24;

/// `N × (L_max + 1)` table of `ê(l, Xᵢ)` plus the mass above `L_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityTable {
    n: usize,
    l_max: usize,
    values: Vec<f64>,
    overflow: Vec<f64>,
}

impl PropensityTable {
    pub fn new(n: usize, l_max: usize, values: Vec<f64>, overflow: Vec<f64>) -> Result<Self> {
        if values.len() != n * (l_max + 1) {
            return Err(Error::DimensionMismatch { expected: n * (l_max + 1), found: values.len() });
        }
        if overflow.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: overflow.len() });
        }
        Ok(PropensityTable { n, l_max, values, overflow })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.values[i * (self.l_max + 1) + l]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * (self.l_max + 1)..(i + 1) * (self.l_max + 1)]
    }

    pub fn overflow(&self, i: usize) -> f64 {
        self.overflow[i]
    }

    /// `ê(l, Xᵢ)` for every unit; zero when `l > L_max`.
    pub fn column(&self, l: usize) -> Vec<f64> {
        (0..self.n).map(|i| if l <= self.l_max { self.get(i, l) } else { 0.0 }).collect()
    }

    /// `Σ_l l · ê(l, Xᵢ)` over the tabulated levels.
    pub fn expected_level(&self, i: usize) -> f64 {
        self.row(i).iter().enumerate().map(|(l, p)| l as f64 * p).sum()
    }

    /// Largest `|row sum + overflow − 1|` over units.
    pub fn normalization_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() + self.overflow[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest total-variation distance between corresponding rows.
    pub fn max_tv_distance(&self, other: &PropensityTable) -> f64 {
        let l = self.l_max.max(other.l_max);
        (0..self.n.min(other.n))
            .map(|i| {
                let lhs = |t: &PropensityTable, k: usize| if k <= t.l_max { t.get(i, k) } else { 0.0 };
                let body: f64 = (0..=l).map(|k| (lhs(self, k) - lhs(other, k)).abs()).sum();
                0.5 * (body + (self.overflow[i] - other.overflow[i]).abs())
            })
            .fold(0.0, f64::max)
    }

    /// CSV with header `unit,l0,l1,…,overflow`, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit");
        for l in 0..=self.l_max {
            write!(out, ",l{l}").unwrap();
        }
        out.push_str(",overflow\n");
        for i in 0..self.n {
            write!(out, "{i}").unwrap();
            for v in self.row(i) {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", self.overflow[i]).unwrap();
        }
        out
    }
}

fn table_width(def: TreatmentDef, n: usize) -> usize {
    if def.is_binary() {
        1
    } else {
        n.saturating_sub(1)
    }
}

fn check_model<M: EdgeModel + ?Sized>(model: &M, g_minus: &Graph) -> Result<()> {
    if model.n() != g_minus.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), found: g_minus.n() });
    }
    if model.is_directed() != g_minus.is_directed() {
        return Err(Error::arg("model and graph differ in directedness"));
    }
    Ok(())
}

/// Monte-Carlo propensities: the empirical frequency of each treatment level
/// over `draws` samples of `G⁺ | G⁻`. Draw `b` uses `streams.stream(b)`, so
/// the table does not depend on the execution mode.
pub fn estimate_entangled<M: EdgeModel + ?Sized>(
    model: &M,
    g_minus: &Graph,
    def: TreatmentDef,
    draws: usize,
    streams: &Streams,
    exec: Execution,
) -> Result<PropensityTable> {
    check_model(model, g_minus)?;
    if draws == 0 {
        return Err(Error::arg("need at least one draw"));
    }
    let n = g_minus.n();
    let l_max = table_width(def, n);
    let width = l_max + 2; // last slot counts overflow
    let probs = EdgeProbabilities::of(model);
    let base_degrees = g_minus.degrees();

    let partials = map_chunks(draws, 64, exec, |range| {
        let mut counts = vec![0u64; n * width];
        for b in range {
            let mut rng = streams.stream(b as u64);
            let g = sample_unchecked(&probs, g_minus, &mut rng);
            for (i, base) in base_degrees.iter().enumerate() {
                let new_degree = g.row(i).iter().filter(|&&e| e).count() - base;
                let level = def.of_new_degree(new_degree).min(l_max + 1);
                counts[i * width + level] += 1;
            }
        }
        counts
    });
    let mut counts = vec![0u64; n * width];
    for part in partials {
        for (c, p) in counts.iter_mut().zip(part) {
            *c += p;
        }
    }
    let scale = 1.0 / draws as f64;
    let mut values = Vec::with_capacity(n * (l_max + 1));
    let mut overflow = Vec::with_capacity(n);
    for i in 0..n {
        let row = &counts[i * width..(i + 1) * width];
        values.extend(row[..=l_max].iter().map(|&c| c as f64 * scale));
        overflow.push(row[l_max + 1] as f64 * scale);
    }
    PropensityTable::new(n, l_max, values, overflow)
}

/// PMF of a sum of independent Bernoulli(pₖ) variables, by the O(K²)
/// convolution recurrence.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; probs.len() + 1];
    pmf[0] = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        for l in (1..=k + 1).rev() {
            pmf[l] = pmf[l] * (1.0 - p) + pmf[l - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

/// Distribution of treatment values given the pmf of the new degree.
fn treatment_row(def: TreatmentDef, pmf: &[f64], l_max: usize) -> (Vec<f64>, f64) {
    let mut row = vec![0.0; l_max + 1];
    let mut overflow = 0.0;
    for (d, &p) in pmf.iter().enumerate() {
        let level = def.of_new_degree(d);
        if level <= l_max {
            row[level] += p;
        } else {
            overflow += p;
        }
    }
    (row, overflow)
}

/// Exact propensities for degree-based treatments under a model with
/// independent dyads: each unit's new degree is Poisson-binomial over its
/// free dyads in `G⁻`.
pub fn exact_degree_propensity<M: EdgeModel + ?Sized>(
    model: &M,
    g_minus: &Graph,
    def: TreatmentDef,
    exec: Execution,
) -> Result<PropensityTable> {
    check_model(model, g_minus)?;
    let n = g_minus.n();
    let l_max = table_width(def, n);
    let rows = map_indexed(n, exec, |i| {
        let probs: Vec<f64> = (0..n)
            .filter(|&j| j != i && !g_minus.has_edge(i, j))
            .map(|j| model.prob(i, j))
            .collect();
        treatment_row(def, &poisson_binomial_pmf(&probs), l_max)
    });
    let mut values = Vec::with_capacity(n * (l_max + 1));
    let mut overflow = Vec::with_capacity(n);
    for (row, o) in rows {
        values.extend(row);
        overflow.push(o);
    }
    PropensityTable::new(n, l_max, values, overflow)
}

/// Exact propensities by enumerating every completion of `G⁻` and weighting
/// it by its probability. Limited to [`BRUTE_FORCE_MAX_DYADS`] free dyads.
pub fn brute_force_propensity<M: EdgeModel + ?Sized>(
    model: &M,
    g_minus: &Graph,
    def: TreatmentDef,
) -> Result<PropensityTable> {
    check_model(model, g_minus)?;
    let free = g_minus.free_dyads();
    if free.len() > BRUTE_FORCE_MAX_DYADS {
        return Err(Error::Capacity { dyads: free.len(), limit: BRUTE_FORCE_MAX_DYADS });
    }
    let n = g_minus.n();
    let l_max = table_width(def, n);
    let width = l_max + 2;
    let directed = g_minus.is_directed();
    let p: Vec<f64> = free.iter().map(|&(i, j)| model.prob(i, j)).collect();
    let total = 1usize << free.len();

    let partials = map_chunks(total, 1 << 12, Execution::Parallel, |range| {
        let mut acc = vec![0.0; n * width];
        let mut new_degree = vec![0usize; n];
        for mask in range {
            new_degree.iter_mut().for_each(|d| *d = 0);
            let mut weight = 1.0;
            for (k, &(i, j)) in free.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    weight *= p[k];
                    new_degree[i] += 1;
                    if !directed {
                        new_degree[j] += 1;
                    }
                } else {
                    weight *= 1.0 - p[k];
                }
            }
            if weight == 0.0 {
                continue;
            }
            for i in 0..n {
                let level = def.of_new_degree(new_degree[i]).min(l_max + 1);
                acc[i * width + level] += weight;
            }
        }
        acc
    });
    let mut acc = vec![0.0; n * width];
    for part in partials {
        for (a, v) in acc.iter_mut().zip(part) {
            *a += v;
        }
    }
    let mut values = Vec::with_capacity(n * (l_max + 1));
    let mut overflow = Vec::with_capacity(n);
    for i in 0..n {
        values.extend_from_slice(&acc[i * width..i * width + l_max + 1]);
        overflow.push(acc[i * width + l_max + 1]);
    }
    PropensityTable::new(n, l_max, values, overflow)
}

fn poisson_pmf(l: usize, lambda: f64) -> f64 {
    let ln_fact: f64 = (2..=l).map(|k| (k as f64).ln()).sum();
    (l as f64 * lambda.ln() - lambda - ln_fact).exp()
}

/// Classical baseline for count treatments: Poisson regression of `Z` on
/// `[1, X]`, tabulated as Poisson pmfs at each unit's fitted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonBaseline {
    pub fit: GlmFit,
    pub rates: Vec<f64>,
    pub table: PropensityTable,
}

pub fn classical_poisson_propensity(z: &[usize], x: &[f64]) -> Result<PoissonBaseline> {
    let n = z.len();
    if n < 3 {
        return Err(Error::arg("classical Poisson baseline needs at least 3 units"));
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    let counts: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let design = intercept_design(x);
    let fit = fit_poisson(&counts, &design)?;
    let rates: Vec<f64> = fit.linear_predictor(&design).into_iter().map(f64::exp).collect();
    let l_max = n - 1;
    let mut values = Vec::with_capacity(n * (l_max + 1));
    let mut overflow = Vec::with_capacity(n);
    for &lambda in &rates {
        let row: Vec<f64> = (0..=l_max).map(|l| poisson_pmf(l, lambda)).collect();
        overflow.push((1.0 - row.iter().sum::<f64>()).max(0.0));
        values.extend(row);
    }
    let table = PropensityTable::new(n, l_max, values, overflow)?;
    Ok(PoissonBaseline { fit, rates, table })
}

/// Classical baseline for binary treatments: logistic regression of `Z` on
/// `[1, Σⱼ Xᵢⱼ]`. Returns the fitted `P(Zᵢ = 1)`.
pub fn classical_logistic_propensity(z: &[usize], dyadic_covariates: &Matrix) -> Result<Vec<f64>> {
    let n = z.len();
    if n < 3 {
        return Err(Error::arg("classical logistic baseline needs at least 3 units"));
    }
    if dyadic_covariates.rows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: dyadic_covariates.rows() });
    }
    let y: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let design = intercept_design(&dyadic_covariates.row_sums());
    let fit = fit_logistic(&y, &design)?;
    Ok(fit.linear_predictor(&design).into_iter().map(crate::expit).collect())
}
