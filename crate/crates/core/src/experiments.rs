//! Simulation harness: the five-worker worked example and the replicated
//! RMSE studies comparing true, misspecified and random-effect propensities.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::netmodel::{fit_node_effect_model, sample_posttreatment, DyadicLogisticSpec, ProductExpSpec};
use crate::propensity::{
    brute_force_propensity, classical_logistic_propensity, classical_poisson_propensity, estimate_entangled,
    exact_degree_propensity, PropensityTable,
};
use crate::rng::{Rng, Streams};
use crate::subclass::{combined_effect, kmeans_subclassify, level_contrast_effect, quantile_subclassify};
use crate::treatment::{apply_treatment, TreatmentDef};

pub const TRUE_ATE: f64 = 10.0;
pub const EDGE_COEFFICIENT: f64 = 1.0;
pub const OUTCOME_SLOPE: f64 = 25.0;
pub const RANDOM_EFFECT_RIDGE: f64 = 0.1;

pub const TABLE2_SIGMAS: [f64; 7] = [2.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];
pub const TABLE3_SIGMAS: [f64; 6] = [2.0, 1.0, 0.5, 0.25, 0.125, 0.0625];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SmallExample,
    /// `aᵢ ~ N(−5, σ²)`, symmetric `X` and edges, at least one new friend.
    SymOneFriend,
    /// `aᵢ ~ N(−2, σ²)`, symmetric, more than ten new friends.
    MultiFriend,
    /// `aᵢ ~ N(−5, σ²)`, directed `X` and edges, at least one new friend.
    AsymProbEnt,
}

impl Scenario {
    fn id(self) -> u64 {
        match self {
            Scenario::SmallExample => 0,
            Scenario::SymOneFriend => 1,
            Scenario::MultiFriend => 2,
            Scenario::AsymProbEnt => 3,
        }
    }

    pub fn effect_mean(self) -> f64 {
        match self {
            Scenario::MultiFriend => -2.0,
            _ => -5.0,
        }
    }

    pub fn is_directed(self) -> bool {
        self == Scenario::AsymProbEnt
    }

    pub fn treatment(self) -> TreatmentDef {
        match self {
            Scenario::MultiFriend => TreatmentDef::MoreThan(10),
            _ => TreatmentDef::AtLeastOne,
        }
    }

    pub fn default_estimators(self) -> Vec<Estimator> {
        match self {
            Scenario::MultiFriend => vec![Estimator::True, Estimator::RandomEffect, Estimator::Misspecified],
            _ => vec![Estimator::True, Estimator::Misspecified],
        }
    }

    pub fn default_sigmas(self) -> Vec<f64> {
        match self {
            Scenario::MultiFriend => TABLE3_SIGMAS.to_vec(),
            _ => TABLE2_SIGMAS.to_vec(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::SmallExample => "small_example",
            Scenario::SymOneFriend => "sym_one_friend",
            Scenario::MultiFriend => "multi_friend",
            Scenario::AsymProbEnt => "asym_prob_ent",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small_example" => Ok(Scenario::SmallExample),
            "sym_one_friend" => Ok(Scenario::SymOneFriend),
            "multi_friend" => Ok(Scenario::MultiFriend),
            "asym_prob_ent" => Ok(Scenario::AsymProbEnt),
            _ => Err(Error::arg(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Exact propensities under the generating network model.
    True,
    /// Logistic regression of `Z` on the row sums of `X`.
    Misspecified,
    /// Directed node-effect network model fitted to `G⁺`, propensities by
    /// Monte Carlo.
    RandomEffect,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::True => "true",
            Estimator::Misspecified => "misspecified",
            Estimator::RandomEffect => "random_effect",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Estimator::True),
            "misspecified" => Ok(Estimator::Misspecified),
            "random_effect" => Ok(Estimator::RandomEffect),
            _ => Err(Error::arg(format!("unknown estimator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub units: usize,
    pub sims: usize,
    pub sigmas: Vec<f64>,
    /// Monte-Carlo draws for the random-effect propensities.
    pub draws: usize,
    pub classes: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub keep_estimates: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 500 replicates of 100 units, K = 10.
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        ExperimentConfig {
            scenario,
            units: 100,
            sims: 500,
            sigmas: scenario.default_sigmas(),
            draws: 200,
            classes: 10,
            seed,
            estimators: scenario.default_estimators(),
            keep_estimates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario == Scenario::SmallExample {
            return Err(Error::arg("small_example is not a replicated scenario"));
        }
        if self.sims == 0 {
            return Err(Error::arg("need at least one simulation"));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::arg("sigma values must be positive"));
        }
        if self.units < 3 || self.classes == 0 || self.classes > self.units {
            return Err(Error::arg("need N >= 3 and 1 <= K <= N"));
        }
        if self.draws == 0 {
            return Err(Error::arg("need at least one propensity draw"));
        }
        if self.estimators.is_empty() {
            return Err(Error::arg("no estimators selected"));
        }
        Ok(())
    }
}

/// One simulated population.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub model: DyadicLogisticSpec,
    pub g_minus: Graph,
    pub g_plus: Graph,
    pub z: Vec<usize>,
    pub y: Vec<f64>,
}

impl Replicate {
    pub fn node_effects(&self) -> &[f64] {
        &self.model.node_effects
    }

    pub fn dyadic_covariates(&self) -> &Matrix {
        &self.model.dyadic_covariates
    }
}

/// Draws `aᵢ`, `Xᵢⱼ ~ N(0, 1)`, `G⁺` from the dyadic model with empty `G⁻`,
/// the scenario's treatment, and `Y = 25 aᵢ + ε + 10 Z` with `ε ~ N(0, σ²)`.
pub fn generate_replicate(scenario: Scenario, sigma: f64, units: usize, rng: &mut Rng) -> Result<Replicate> {
    if scenario == Scenario::SmallExample {
        return Err(Error::arg("small_example has fixed data"));
    }
    let normal = Normal::new(scenario.effect_mean(), sigma).map_err(|e| Error::arg(e.to_string()))?;
    let a: Vec<f64> = (0..units).map(|_| normal.sample(rng)).collect();
    let directed = scenario.is_directed();
    let mut x = Matrix::zeros(units, units);
    for i in 0..units {
        let start = if directed { 0 } else { i + 1 };
        for j in start..units {
            if i == j {
                continue;
            }
            let v: f64 = StandardNormal.sample(rng);
            x[(i, j)] = v;
            if !directed {
                x[(j, i)] = v;
            }
        }
    }
    let model = DyadicLogisticSpec::new(a, EDGE_COEFFICIENT, x, directed)?;
    let g_minus = Graph::empty(units, directed);
    let g_plus = sample_posttreatment(&model, &g_minus, rng)?;
    let z = apply_treatment(scenario.treatment(), &g_minus, &g_plus)?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let y = model
        .node_effects
        .iter()
        .zip(&z)
        .map(|(ai, &zi)| OUTCOME_SLOPE * ai + noise.sample(rng) + TRUE_ATE * zi as f64)
        .collect();
    Ok(Replicate { model, g_minus, g_plus, z, y })
}

/// `P(Zᵢ = 1)` under the chosen estimator.
pub fn propensity_scores(
    data: &Replicate,
    treatment: TreatmentDef,
    estimator: Estimator,
    draws: usize,
    streams: &Streams,
    exec: Execution,
) -> Result<Vec<f64>> {
    match estimator {
        Estimator::True => {
            Ok(exact_degree_propensity(&data.model, &data.g_minus, treatment, exec)?.column(1))
        }
        Estimator::Misspecified => classical_logistic_propensity(&data.z, data.dyadic_covariates()),
        Estimator::RandomEffect => {
            // sender effects only: every unit's new connections are drawn as
            // its own out-edges
            let fit = fit_node_effect_model(&data.g_plus, data.dyadic_covariates(), true, RANDOM_EFFECT_RIDGE)?;
            let g_minus = Graph::empty(data.g_minus.n(), true);
            Ok(estimate_entangled(&fit, &g_minus, treatment, draws, streams, exec)?.column(1))
        }
    }
}

/// Subclassification estimate of the ATE: quantile classes on the
/// estimator's propensity scores, then the size-weighted combination.
pub fn estimate_replicate(
    data: &Replicate,
    treatment: TreatmentDef,
    estimator: Estimator,
    draws: usize,
    classes: usize,
    streams: &Streams,
    exec: Execution,
) -> Result<f64> {
    let scores = propensity_scores(data, treatment, estimator, draws, streams, exec)?;
    let sub = quantile_subclassify(&scores, classes)?;
    Ok(combined_effect(&sub, &data.z, &data.y)?.value)
}

pub fn rmse(estimates: &[f64], true_ate: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::arg("no estimates"));
    }
    let mse = estimates.iter().map(|e| (e - true_ate).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sigma: f64,
    pub estimator: Estimator,
    /// `None` when every replicate was excluded.
    pub rmse: Option<f64>,
    pub used: usize,
    pub excluded: usize,
    pub estimates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn get(&self, sigma: f64, estimator: Estimator) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.sigma == sigma && r.estimator == estimator)
    }

    /// CSV with header `scenario,sigma,estimator,rmse,excluded`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,sigma,estimator,rmse,excluded\n");
        for r in &self.rows {
            let rmse = r.rmse.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
            writeln!(out, "{},{},{},{},{}", self.scenario, r.sigma, r.estimator, rmse, r.excluded).unwrap();
        }
        out
    }
}

pub fn run_scenario(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_scenario_with(config, Execution::Parallel)
}

/// Runs every (σ, replicate) pair as an independent task. Replicate `s` at
/// σ index `k` draws from streams derived from (seed, scenario, k, s), so
/// the result is the same for any execution mode or worker count.
pub fn run_scenario_with(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    config.validate()?;
    let root = Streams::new(config.seed).derive(config.scenario.id());
    let treatment = config.scenario.treatment();
    let sims = config.sims;
    let tasks = config.sigmas.len() * sims;
    let outcomes: Vec<Vec<Option<f64>>> = map_indexed(tasks, exec, |t| {
        let (k, s) = (t / sims, t % sims);
        let sigma = config.sigmas[k];
        let streams = root.derive(k as u64).derive(s as u64);
        let data = match generate_replicate(config.scenario, sigma, config.units, &mut streams.stream(0)) {
            Ok(data) => data,
            Err(_) => return vec![None; config.estimators.len()],
        };
        let draws = streams.derive(1);
        config
            .estimators
            .iter()
            .map(|&est| {
                estimate_replicate(&data, treatment, est, config.draws, config.classes, &draws, Execution::Sequential)
                    .ok()
            })
            .collect()
    });

    let mut rows = Vec::new();
    for (k, &sigma) in config.sigmas.iter().enumerate() {
        for (e, &estimator) in config.estimators.iter().enumerate() {
            let estimates: Vec<f64> =
                outcomes[k * sims..(k + 1) * sims].iter().filter_map(|o| o[e]).collect();
            rows.push(ResultRow {
                sigma,
                estimator,
                rmse: rmse(&estimates, TRUE_ATE).ok(),
                used: estimates.len(),
                excluded: sims - estimates.len(),
                estimates: config.keep_estimates.then(|| estimates.clone()),
            });
        }
    }
    Ok(ExperimentResult { scenario: config.scenario, rows })
}

pub const SMALL_COVARIATES: [f64; 5] = [-5.0, -1.0, 0.0, 3.0, 10.0];
pub const SMALL_TREATMENTS: [usize; 5] = [1, 2, 1, 2, 4];
pub const SMALL_OUTCOMES: [f64; 5] = [0.0, 0.0, 1.0, 1.0, 0.0];
pub const SMALL_EDGES: [(usize, usize); 5] = [(1, 4), (1, 3), (2, 4), (0, 4), (3, 4)];

/// Worked example on five units: true and Poisson propensity tables, the
/// two-class similarity sets (1-indexed) and the level-2 contrasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallExampleReport {
    pub exact: PropensityTable,
    pub monte_carlo: PropensityTable,
    pub draws: usize,
    pub poisson_coefficients: Vec<f64>,
    pub poisson: PropensityTable,
    pub true_sets: Vec<Vec<usize>>,
    pub misspecified_sets: Vec<Vec<usize>>,
    pub tau_true: f64,
    pub tau_misspecified: f64,
    pub expected_z3: f64,
}

fn level_pairs(table: &PropensityTable, m: usize) -> Vec<Vec<f64>> {
    (0..table.n()).map(|i| vec![table.get(i, m - 1), table.get(i, m)]).collect()
}

fn one_indexed_sets(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = (0..k)
        .map(|c| labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i + 1).collect())
        .filter(|s: &Vec<usize>| !s.is_empty())
        .collect();
    sets.sort();
    sets
}

pub fn run_small_example(draws: usize, seed: u64, exec: Execution) -> Result<SmallExampleReport> {
    let model = ProductExpSpec::new(SMALL_COVARIATES.to_vec(), 1.0);
    let g_minus = Graph::empty(5, false);
    let g_plus = Graph::from_edges(5, false, &SMALL_EDGES)?;
    let z = apply_treatment(TreatmentDef::NewDegree, &g_minus, &g_plus)?;
    debug_assert_eq!(z, SMALL_TREATMENTS);

    let streams = Streams::new(seed);
    let exact = brute_force_propensity(&model, &g_minus, TreatmentDef::NewDegree)?;
    let monte_carlo = estimate_entangled(&model, &g_minus, TreatmentDef::NewDegree, draws, &streams.derive(0), exec)?;
    let poisson = classical_poisson_propensity(&z, &SMALL_COVARIATES)?;

    let m = 2;
    let mut rng = streams.derive(1).stream(0);
    let true_sub = kmeans_subclassify(&level_pairs(&exact, m), 2, &mut rng, exec)?;
    let mis_sub = kmeans_subclassify(&level_pairs(&poisson.table, m), 2, &mut rng, exec)?;
    Ok(SmallExampleReport {
        tau_true: level_contrast_effect(&true_sub, &z, &SMALL_OUTCOMES, m)?.value,
        tau_misspecified: level_contrast_effect(&mis_sub, &z, &SMALL_OUTCOMES, m)?.value,
        true_sets: one_indexed_sets(true_sub.labels(), 2),
        misspecified_sets: one_indexed_sets(mis_sub.labels(), 2),
        expected_z3: exact.expected_level(2),
        exact,
        monte_carlo,
        draws,
        poisson_coefficients: poisson.fit.coefficients.clone(),
        poisson: poisson.table,
    })
}
