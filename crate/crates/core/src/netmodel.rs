//! Edge-probability models for the network evolution `G⁻ → G⁺`.
//!
//! Every model here makes dyads independent given its parameters, with a
//! logistic link on a model-specific linear predictor. Conditioning on `G⁻`
//! means existing edges persist and only its non-edges are sampled.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_supergraph, Graph};
use crate::kv::KeyValues;
use crate::linalg::solve_spd;
use crate::matrix::Matrix;
use crate::expit;

/// A network model with independent dyads.
pub trait EdgeModel: Sync {
    fn n(&self) -> usize;

    fn is_directed(&self) -> bool;

    /// Probability of the dyad `(i, j)`; callers guarantee `i ≠ j` and both
    /// in range.
    fn prob(&self, i: usize, j: usize) -> f64;

    fn edge_prob(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(Error::arg(format!("edge probability of self-dyad ({i}, {i})")));
        }
        if i >= self.n() || j >= self.n() {
            return Err(Error::arg(format!("dyad ({i}, {j}) out of range for n = {}", self.n())));
        }
        Ok(self.prob(i, j))
    }
}

/// `expit(a + b XᵢᵀXⱼ)` with unit-level covariate vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerProductSpec {
    pub a: f64,
    pub b: f64,
    /// `N × d` matrix, one covariate vector per unit.
    pub covariates: Matrix,
    /// Standard deviation of the covariates when they were generated.
    pub tau: f64,
}

impl InnerProductSpec {
    pub fn new(a: f64, b: f64, covariates: Matrix, tau: f64) -> Result<Self> {
        if covariates.cols() == 0 {
            return Err(Error::arg("inner-product covariates need d >= 1"));
        }
        Ok(InnerProductSpec { a, b, covariates, tau })
    }

    /// Draws `Xᵢ ~ N(0, τ² I_d)` for `n` units.
    pub fn generate<R: Rng + ?Sized>(n: usize, d: usize, a: f64, b: f64, tau: f64, rng: &mut R) -> Result<Self> {
        if !(tau > 0.0) || d == 0 {
            return Err(Error::arg("generation needs tau > 0 and d >= 1"));
        }
        let normal = Normal::new(0.0, tau).unwrap();
        let data = (0..n * d).map(|_| normal.sample(rng)).collect();
        InnerProductSpec::new(a, b, Matrix::from_vec(n, d, data)?, tau)
    }

    fn linear_predictor(&self, i: usize, j: usize) -> f64 {
        let dot: f64 = self.covariates.row(i).iter().zip(self.covariates.row(j)).map(|(x, y)| x * y).sum();
        self.a + self.b * dot
    }
}

impl EdgeModel for InnerProductSpec {
    fn n(&self) -> usize {
        self.covariates.rows()
    }

    fn is_directed(&self) -> bool {
        false
    }

    fn prob(&self, i: usize, j: usize) -> f64 {
        expit(self.linear_predictor(i, j))
    }
}

/// `expit(aᵢ/2 + aⱼ/2 + b Xᵢⱼ)` with node effects and a dyadic covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicLogisticSpec {
    pub node_effects: Vec<f64>,
    pub b: f64,
    pub dyadic_covariates: Matrix,
    pub directed: bool,
}

impl DyadicLogisticSpec {
    pub fn new(node_effects: Vec<f64>, b: f64, dyadic_covariates: Matrix, directed: bool) -> Result<Self> {
        let n = node_effects.len();
        if dyadic_covariates.rows() != n || dyadic_covariates.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: dyadic_covariates.rows() });
        }
        if !directed && !dyadic_covariates.is_symmetric() {
            return Err(Error::arg("undirected dyadic model needs symmetric covariates"));
        }
        Ok(DyadicLogisticSpec { node_effects, b, dyadic_covariates, directed })
    }
}

impl EdgeModel for DyadicLogisticSpec {
    fn n(&self) -> usize {
        self.node_effects.len()
    }

    fn is_directed(&self) -> bool {
        self.directed
    }

    fn prob(&self, i: usize, j: usize) -> f64 {
        let a = &self.node_effects;
        expit(0.5 * a[i] + 0.5 * a[j] + self.b * self.dyadic_covariates[(i, j)])
    }
}

/// `expit(XᵢXⱼ + intercept)` with scalar unit covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductExpSpec {
    pub covariates: Vec<f64>,
    pub intercept: f64,
}

impl ProductExpSpec {
    pub fn new(covariates: Vec<f64>, intercept: f64) -> Self {
        ProductExpSpec { covariates, intercept }
    }
}

impl EdgeModel for ProductExpSpec {
    fn n(&self) -> usize {
        self.covariates.len()
    }

    fn is_directed(&self) -> bool {
        false
    }

    fn prob(&self, i: usize, j: usize) -> f64 {
        expit(self.covariates[i] * self.covariates[j] + self.intercept)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Penalized objective at the start point and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Fitted node-effect model: `expit(c + uᵢ + d Xᵢⱼ)` when directed (sender
/// effects), `expit(c + uᵢ + uⱼ + d Xᵢⱼ)` when undirected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEffectFitSpec {
    pub intercept: f64,
    pub node_effects: Vec<f64>,
    pub d: f64,
    pub directed: bool,
    pub ridge_lambda: f64,
    pub dyadic_covariates: Matrix,
    pub diagnostics: FitDiagnostics,
}

impl NodeEffectFitSpec {
    fn linear_predictor(&self, i: usize, j: usize) -> f64 {
        let u = &self.node_effects;
        let base = self.intercept + u[i] + self.d * self.dyadic_covariates[(i, j)];
        if self.directed {
            base
        } else {
            base + u[j]
        }
    }
}

impl EdgeModel for NodeEffectFitSpec {
    fn n(&self) -> usize {
        self.node_effects.len()
    }

    fn is_directed(&self) -> bool {
        self.directed
    }

    fn prob(&self, i: usize, j: usize) -> f64 {
        expit(self.linear_predictor(i, j))
    }
}

/// Tabulated dyad probabilities of another model, for repeated sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilities {
    n: usize,
    directed: bool,
    p: Vec<f64>,
}

impl EdgeProbabilities {
    pub fn of<M: EdgeModel + ?Sized>(model: &M) -> Self {
        let n = model.n();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    p[i * n + j] = model.prob(i, j);
                }
            }
        }
        EdgeProbabilities { n, directed: model.is_directed(), p }
    }
}

impl EdgeModel for EdgeProbabilities {
    fn n(&self) -> usize {
        self.n
    }

    fn is_directed(&self) -> bool {
        self.directed
    }

    #[inline]
    fn prob(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

/// Any of the concrete model families, as read from a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NetworkModel {
    InnerProduct(InnerProductSpec),
    DyadicLogistic(DyadicLogisticSpec),
    ProductExp(ProductExpSpec),
    NodeEffect(NodeEffectFitSpec),
}

impl NetworkModel {
    fn inner(&self) -> &dyn EdgeModel {
        match self {
            NetworkModel::InnerProduct(m) => m,
            NetworkModel::DyadicLogistic(m) => m,
            NetworkModel::ProductExp(m) => m,
            NetworkModel::NodeEffect(m) => m,
        }
    }

    /// Reads the flat key-value form. Matrix-valued covariates are given as
    /// a CSV file path, resolved relative to `base_dir`.
    pub fn from_key_values(kv: &KeyValues, base_dir: &Path) -> Result<Self> {
        let matrix = |key: &str| -> Result<Matrix> {
            let path = base_dir.join(kv.require_str(key)?);
            Matrix::read_csv(path)
        };
        let directed = |default| -> Result<bool> { Ok(kv.get_bool("directed")?.unwrap_or(default)) };
        match kv.require_str("model")? {
            "inner_product" => Ok(NetworkModel::InnerProduct(InnerProductSpec::new(
                kv.require("a")?,
                kv.require("b")?,
                matrix("covariates")?,
                kv.get_or("tau", 1.0)?,
            )?)),
            "dyadic_logistic" => Ok(NetworkModel::DyadicLogistic(DyadicLogisticSpec::new(
                kv.require_list("a")?,
                kv.require("b")?,
                matrix("covariates")?,
                directed(false)?,
            )?)),
            "product_exp" => Ok(NetworkModel::ProductExp(ProductExpSpec::new(
                kv.require_list("x")?,
                kv.get_or("intercept", 1.0)?,
            ))),
            "node_effect" => {
                let node_effects: Vec<f64> = kv.require_list("u")?;
                let dyadic_covariates = matrix("covariates")?;
                if dyadic_covariates.rows() != node_effects.len() || dyadic_covariates.cols() != node_effects.len() {
                    return Err(Error::DimensionMismatch {
                        expected: node_effects.len(),
                        found: dyadic_covariates.rows(),
                    });
                }
                Ok(NetworkModel::NodeEffect(NodeEffectFitSpec {
                    intercept: kv.require("c")?,
                    node_effects,
                    d: kv.require("d")?,
                    directed: directed(true)?,
                    ridge_lambda: kv.get_or("ridge_lambda", 0.1)?,
                    dyadic_covariates,
                    diagnostics: FitDiagnostics::default(),
                }))
            }
            other => Err(Error::arg(format!("unknown model `{other}`"))),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let kv = KeyValues::read(path)?;
        NetworkModel::from_key_values(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    /// Key-value form plus the covariate matrix to store at
    /// `covariates_file`, when the model has one.
    pub fn to_key_values(&self, covariates_file: &str) -> (KeyValues, Option<Matrix>) {
        let mut kv = KeyValues::new();
        match self {
            NetworkModel::InnerProduct(m) => {
                kv.set("model", "inner_product");
                kv.set("a", m.a);
                kv.set("b", m.b);
                kv.set("tau", m.tau);
                kv.set("covariates", covariates_file);
                (kv, Some(m.covariates.clone()))
            }
            NetworkModel::DyadicLogistic(m) => {
                kv.set("model", "dyadic_logistic");
                kv.set_list("a", &m.node_effects);
                kv.set("b", m.b);
                kv.set("directed", u8::from(m.directed));
                kv.set("covariates", covariates_file);
                (kv, Some(m.dyadic_covariates.clone()))
            }
            NetworkModel::ProductExp(m) => {
                kv.set("model", "product_exp");
                kv.set_list("x", &m.covariates);
                kv.set("intercept", m.intercept);
                (kv, None)
            }
            NetworkModel::NodeEffect(m) => {
                kv.set("model", "node_effect");
                kv.set("c", m.intercept);
                kv.set_list("u", &m.node_effects);
                kv.set("d", m.d);
                kv.set("directed", u8::from(m.directed));
                kv.set("ridge_lambda", m.ridge_lambda);
                kv.set("covariates", covariates_file);
                (kv, Some(m.dyadic_covariates.clone()))
            }
        }
    }
}

impl EdgeModel for NetworkModel {
    fn n(&self) -> usize {
        self.inner().n()
    }

    fn is_directed(&self) -> bool {
        self.inner().is_directed()
    }

    fn prob(&self, i: usize, j: usize) -> f64 {
        self.inner().prob(i, j)
    }
}

fn check_dims<M: EdgeModel + ?Sized>(model: &M, g: &Graph) -> Result<()> {
    if model.n() != g.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), found: g.n() });
    }
    if model.is_directed() != g.is_directed() {
        return Err(Error::arg("model and graph differ in directedness"));
    }
    Ok(())
}

/// Draws `G⁺` given `G⁻`: edges of `g_minus` persist, every other dyad
/// (each unordered pair once when undirected) is switched on independently.
pub fn sample_posttreatment<M, R>(model: &M, g_minus: &Graph, rng: &mut R) -> Result<Graph>
where
    M: EdgeModel + ?Sized,
    R: Rng + ?Sized,
{
    check_dims(model, g_minus)?;
    Ok(sample_unchecked(model, g_minus, rng))
}

pub(crate) fn sample_unchecked<M, R>(model: &M, g_minus: &Graph, rng: &mut R) -> Graph
where
    M: EdgeModel + ?Sized,
    R: Rng + ?Sized,
{
    let n = g_minus.n();
    let directed = g_minus.is_directed();
    let mut g = g_minus.clone();
    for i in 0..n {
        let start = if directed { 0 } else { i + 1 };
        for j in start..n {
            if i == j || g_minus.has_edge(i, j) {
                continue;
            }
            if rng.random::<f64>() < model.prob(i, j) {
                g.set(i, j);
            }
        }
    }
    g
}

/// Bernoulli log-likelihood of `g_plus` over the non-edges of `g_minus`.
pub fn log_likelihood<M: EdgeModel + ?Sized>(model: &M, g_plus: &Graph, g_minus: &Graph) -> Result<f64> {
    check_supergraph(g_minus, g_plus)?;
    check_dims(model, g_minus)?;
    Ok(g_minus
        .free_dyads()
        .into_iter()
        .map(|(i, j)| {
            let p = model.prob(i, j);
            if g_plus.has_edge(i, j) {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum())
}

/// `log(1 + eᵘ)` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub const NODE_EFFECT_MAX_ITER: usize = 200;
pub const NODE_EFFECT_TOL: f64 = 1e-8;

struct NodeEffectProblem<'a> {
    g: &'a Graph,
    x: &'a Matrix,
    directed: bool,
    lambda: f64,
    /// (i, j) pairs entering the likelihood.
    dyads: Vec<(usize, usize)>,
}

impl NodeEffectProblem<'_> {
    fn lp(&self, theta: &[f64], i: usize, j: usize) -> f64 {
        let base = theta[0] + theta[1] * self.x[(i, j)] + theta[2 + i];
        if self.directed {
            base
        } else {
            base + theta[2 + j]
        }
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let ll: f64 = self
            .dyads
            .iter()
            .map(|&(i, j)| {
                let eta = self.lp(theta, i, j);
                let y = if self.g.has_edge(i, j) { eta } else { 0.0 };
                y - softplus(eta)
            })
            .sum();
        ll - self.lambda * theta[2..].iter().map(|u| u * u).sum::<f64>()
    }

    /// Gradient and negated Hessian, row-major `(n + 2)²`.
    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = theta.len();
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for &(i, j) in &self.dyads {
            let x = self.x[(i, j)];
            let mu = expit(self.lp(theta, i, j));
            let r = if self.g.has_edge(i, j) { 1.0 - mu } else { -mu };
            let w = mu * (1.0 - mu);
            grad[0] += r;
            grad[1] += r * x;
            hess[0] += w;
            hess[1] += w * x;
            hess[p + 1] += w * x * x;
            let ui = 2 + i;
            grad[ui] += r;
            hess[ui] += w;
            hess[p + ui] += w * x;
            hess[ui * p + ui] += w;
            if !self.directed {
                let uj = 2 + j;
                grad[uj] += r;
                hess[uj] += w;
                hess[p + uj] += w * x;
                hess[uj * p + uj] += w;
                hess[ui * p + uj] += w;
                hess[uj * p + ui] += w;
            }
        }
        for k in 2..p {
            grad[k] -= 2.0 * self.lambda * theta[k];
            hess[k * p + k] += 2.0 * self.lambda;
        }
        // mirror the (c, d) rows into the columns
        hess[p] = hess[1];
        for k in 2..p {
            hess[k * p] = hess[k];
            hess[k * p + 1] = hess[p + k];
        }
        (grad, hess)
    }
}

/// Maximizes the ridge-penalized Bernoulli log-likelihood of the node-effect
/// model on an observed `G⁺` (with `G⁻` empty) by damped Newton steps.
pub fn fit_node_effect_model(
    g_plus: &Graph,
    dyadic_covariates: &Matrix,
    directed: bool,
    ridge_lambda: f64,
) -> Result<NodeEffectFitSpec> {
    let n = g_plus.n();
    if n < 3 {
        return Err(Error::arg("node-effect fit needs at least 3 units"));
    }
    if dyadic_covariates.rows() != n || dyadic_covariates.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: dyadic_covariates.rows() });
    }
    if !(ridge_lambda >= 0.0) {
        return Err(Error::arg("ridge_lambda must be nonnegative"));
    }
    if !directed && g_plus.is_directed() {
        return Err(Error::arg("undirected fit needs an undirected graph"));
    }
    let dyads = (0..n)
        .flat_map(|i| {
            let start = if directed { 0 } else { i + 1 };
            (start..n).filter(move |&j| j != i).map(move |j| (i, j))
        })
        .collect();
    let problem = NodeEffectProblem { g: g_plus, x: dyadic_covariates, directed, lambda: ridge_lambda, dyads };

    let mut theta = vec![0.0; n + 2];
    let mut value = problem.objective(&theta);
    let mut diagnostics = FitDiagnostics { objective_trace: vec![value], ..Default::default() };
    let finish = |theta: Vec<f64>, diagnostics: FitDiagnostics| NodeEffectFitSpec {
        intercept: theta[0],
        d: theta[1],
        node_effects: theta[2..].to_vec(),
        directed,
        ridge_lambda,
        dyadic_covariates: dyadic_covariates.clone(),
        diagnostics,
    };

    for iter in 0..=NODE_EFFECT_MAX_ITER {
        let (grad, hess) = problem.derivatives(&theta);
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        diagnostics.iterations = iter;
        diagnostics.gradient_norm = gnorm;
        if gnorm < NODE_EFFECT_TOL {
            diagnostics.converged = true;
            return Ok(finish(theta, diagnostics));
        }
        if iter == NODE_EFFECT_MAX_ITER {
            break;
        }
        let step = solve_spd(&hess, &grad).ok_or(Error::RankDeficient)?;
        // below this predicted gain the objective comparison is roundoff
        let noise_floor = 1e-12 * (1.0 + value.abs());
        let predicted: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let v = problem.objective(&trial);
            if v >= value || (t == 1.0 && predicted < noise_floor && v >= value - noise_floor) {
                theta = trial;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent possible at working precision
            diagnostics.converged = gnorm < 1e3 * NODE_EFFECT_TOL;
            if diagnostics.converged {
                return Ok(finish(theta, diagnostics));
            }
            break;
        }
        diagnostics.objective_trace.push(value);
    }
    let gradient_norm = diagnostics.gradient_norm;
    let iterations = diagnostics.iterations;
    Err(Error::FitNonConvergence { iterations, gradient_norm, last: Box::new(finish(theta, diagnostics)) })
}
