//! Logistic and Poisson regression by iteratively reweighted least squares.
//!
//! Both use the canonical link, so each IRLS step is a Newton step on the
//! log-likelihood. A step that would increase the deviance is halved until it
//! does not. Coefficients are ordered as the design columns (intercept first
//! by convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_full_rank, solve_spd};
use crate::matrix::Matrix;
use crate::expit;

pub const MAX_ITER: usize = 100;
/// Convergence tolerance on the largest coefficient change.
pub const COEF_TOL: f64 = 1e-10;
/// Coefficient norm past which the fit is declared separated.
pub const SEPARATION_NORM: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Deviance at the start point and after every iteration.
    pub deviance_trace: Vec<f64>,
}

impl GlmFit {
    pub fn linear_predictor(&self, design: &Matrix) -> Vec<f64> {
        (0..design.rows())
            .map(|i| design.row(i).iter().zip(&self.coefficients).map(|(x, b)| x * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Binomial,
    Poisson,
}

impl Family {
    fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Binomial => expit(eta),
            Family::Poisson => eta.exp(),
        }
    }

    /// Canonical-link variance, which is also the IRLS weight.
    fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        let ylog = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
        match self {
            Family::Binomial => 2.0 * (ylog(y, mu) + ylog(1.0 - y, 1.0 - mu)),
            Family::Poisson => 2.0 * (ylog(y, mu) - (y - mu)),
        }
    }
}

fn deviance(family: Family, y: &[f64], eta: &[f64]) -> f64 {
    y.iter().zip(eta).map(|(&yi, &e)| family.unit_deviance(yi, family.mean(e))).sum()
}

fn predictor(design: &Matrix, beta: &[f64]) -> Vec<f64> {
    (0..design.rows())
        .map(|i| design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

fn check_inputs(y: &[f64], design: &Matrix) -> Result<()> {
    let (n, p) = (design.rows(), design.cols());
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if p == 0 || p >= n {
        return Err(Error::arg(format!("need 0 < p < N, got p = {p}, N = {n}")));
    }
    let mut gram = vec![0.0; p * p];
    for i in 0..n {
        let row = design.row(i);
        for a in 0..p {
            for b in 0..p {
                gram[a * p + b] += row[a] * row[b];
            }
        }
    }
    if !is_full_rank(&gram, p, 1e-10) {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

fn irls(family: Family, y: &[f64], design: &Matrix) -> Result<GlmFit> {
    check_inputs(y, design)?;
    let (n, p) = (design.rows(), design.cols());
    let mut beta = vec![0.0; p];
    let mut eta = predictor(design, &beta);
    let mut dev = deviance(family, y, &eta);
    let mut trace = vec![dev];

    for iter in 1..=MAX_ITER {
        if family == Family::Binomial
            && y.iter().zip(&eta).all(|(&yi, &e)| (yi - family.mean(e)).abs() < 1e-8)
        {
            // fitted probabilities reproduce the responses: perfect separation
            return Err(Error::Separation { iterations: iter, norm: beta.iter().map(|b| b * b).sum::<f64>().sqrt() });
        }
        let mut xtwx = vec![0.0; p * p];
        let mut score = vec![0.0; p];
        for i in 0..n {
            let mu = family.mean(eta[i]);
            let w = family.variance(mu);
            let r = y[i] - mu;
            let row = design.row(i);
            for a in 0..p {
                score[a] += row[a] * r;
                for b in 0..p {
                    xtwx[a * p + b] += w * row[a] * row[b];
                }
            }
        }
        let step = solve_spd(&xtwx, &score).ok_or_else(|| Error::Separation {
            iterations: iter,
            norm: beta.iter().map(|b| b * b).sum::<f64>().sqrt(),
        })?;

        let mut t = 1.0;
        let (mut new_beta, mut new_eta, mut new_dev);
        loop {
            new_beta = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect::<Vec<_>>();
            new_eta = predictor(design, &new_beta);
            new_dev = deviance(family, y, &new_eta);
            if new_dev <= dev || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        if new_dev > dev {
            // halving exhausted; the current iterate is as good as it gets
            new_beta = beta.clone();
            new_eta = eta.clone();
            new_dev = dev;
        }
        let change = beta.iter().zip(&new_beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        beta = new_beta;
        eta = new_eta;
        dev = new_dev;
        trace.push(dev);

        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > SEPARATION_NORM {
            return Err(Error::Separation { iterations: iter, norm });
        }
        if change < COEF_TOL {
            return Ok(GlmFit { coefficients: beta, converged: true, iterations: iter, deviance: dev, deviance_trace: trace });
        }
    }
    Err(Error::GlmNonConvergence { iterations: MAX_ITER, coefficients: beta })
}

/// Logistic regression of binary `responses` on `design`.
pub fn fit_logistic(responses: &[f64], design: &Matrix) -> Result<GlmFit> {
    if responses.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::arg("logistic responses must be 0 or 1"));
    }
    let ones = responses.iter().filter(|&&y| y == 1.0).count();
    if ones == 0 || ones == responses.len() {
        return Err(Error::Separation { iterations: 0, norm: f64::INFINITY });
    }
    irls(Family::Binomial, responses, design)
}

/// Poisson regression (log link) of nonnegative integer `counts` on `design`.
pub fn fit_poisson(counts: &[f64], design: &Matrix) -> Result<GlmFit> {
    if counts.iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
        return Err(Error::arg("Poisson counts must be nonnegative integers"));
    }
    if counts.iter().all(|&c| c == 0.0) {
        return Err(Error::Degenerate("all counts are zero; the intercept diverges".into()));
    }
    irls(Family::Poisson, counts, design)
}

/// `[1, x]` design with an intercept column.
pub fn intercept_design(x: &[f64]) -> Matrix {
    let data = x.iter().flat_map(|&v| [1.0, v]).collect();
    Matrix::from_vec(x.len(), 2, data).unwrap()
}
