//! Exponential-family GLMs (gaussian, binomial-logit, poisson-log) and their
//! unpenalized, ridge and lasso fits on an explicit design matrix.
//!
//! The fitted objective is the weighted mean negative log-likelihood plus the
//! penalty, `(1/W) sum_i w_i l_i(beta) + lambda ||beta||_1` for the lasso and
//! `+ (lambda/2) ||beta||^2` for ridge, with `W = sum_i w_i`. An optional
//! intercept (column 0) is never penalized.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "linear" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }

    /// Cumulant `b(theta)`.
    pub fn cumulant(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => theta * theta / 2.0,
            Family::Binomial => softplus(theta),
            Family::Poisson => theta.exp(),
        }
    }

    /// Inverse link `b'(theta)`.
    pub fn mean(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => theta,
            Family::Binomial => sigmoid(theta),
            Family::Poisson => theta.exp(),
        }
    }

    /// Variance function `b''(theta)`.
    pub fn variance(self, theta: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => {
                let p = sigmoid(theta);
                p * (1.0 - p)
            }
            Family::Poisson => theta.exp(),
        }
    }

    /// Per-observation loss with `a(phi) = 1` and `h(y, phi)` dropped. The
    /// gaussian case is written as `(y - theta)^2 / 2`.
    pub fn unit_loss(self, y: f64, theta: f64) -> f64 {
        match self {
            Family::Gaussian => 0.5 * (y - theta) * (y - theta),
            _ => self.cumulant(theta) - y * theta,
        }
    }

    /// Unit deviance `2 [l(y; y) - l(y; mu)]`.
    pub fn unit_deviance(self, y: f64, theta: f64) -> f64 {
        match self {
            Family::Gaussian => (y - theta) * (y - theta),
            Family::Binomial => 2.0 * (softplus(theta) - y * theta),
            Family::Poisson => {
                let mu = theta.exp();
                let t = if y > 0.0 { y * (y.ln() - theta) } else { 0.0 };
                2.0 * (t - (y - mu))
            }
        }
    }

    pub fn check_response(self, y: f64) -> Result<()> {
        let ok = match self {
            Family::Gaussian => y.is_finite(),
            Family::Binomial => y == 0.0 || y == 1.0,
            Family::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "response {y} is not valid for the {} family",
                self.name()
            )))
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `-sum_i [y_i theta_i - b(theta_i)]`, gaussian as `sum (y - theta)^2 / 2`.
pub fn neg_loglik(family: Family, linear_predictors: &[f64], responses: &[f64]) -> Result<f64> {
    if linear_predictors.len() != responses.len() {
        return Err(Error::Shape(format!(
            "{} linear predictors, {} responses",
            linear_predictors.len(),
            responses.len()
        )));
    }
    if let Some(i) = linear_predictors.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("linear predictor {i}")));
    }
    Ok(linear_predictors
        .iter()
        .zip(responses)
        .map(|(&t, &y)| family.unit_loss(y, t))
        .sum())
}

/// Gradient of [`neg_loglik`] with respect to `beta` for `theta = X beta`.
pub fn neg_loglik_gradient(family: Family, x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let eta = x * DVector::from_column_slice(beta);
    let r = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(&t, &yi)| family.mean(t) - yi));
    (x.transpose() * r).iter().copied().collect()
}

pub fn predict_mean(family: Family, coefficients: &[f64], rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|row| {
            if row.len() != coefficients.len() {
                return Err(Error::Shape(format!(
                    "row has {} entries, model has {} coefficients",
                    row.len(),
                    coefficients.len()
                )));
            }
            Ok(family.mean(crate::tensor::dot(row, coefficients)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "lowercase")]
pub enum Penalty {
    None,
    Ridge(f64),
    Lasso(f64),
}

/// Weighted GLM problem on a dense design (rows are observations).
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub family: Family,
    pub penalty: Penalty,
    pub weights: Vec<f64>,
    /// Column 0 is an intercept supplied by the caller and left unpenalized.
    pub intercept: bool,
}

impl DesignProblem {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, family: Family) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "design has {} rows, response has {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        for (i, &v) in y.iter().enumerate() {
            family.check_response(v).map_err(|e| e.context(format!("row {i}")))?;
        }
        let n = y.len();
        Ok(Self {
            x,
            y,
            family,
            penalty: Penalty::None,
            weights: vec![1.0; n],
            intercept: false,
        })
    }

    /// Builds a problem from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, family: Family) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Shape("design rows have unequal lengths".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, y, family)
    }

    pub fn with_penalty(mut self, penalty: Penalty) -> Result<Self> {
        match penalty {
            Penalty::Ridge(l) | Penalty::Lasso(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::InvalidArgument(format!("penalty {l} must be >= 0")));
            }
            _ => {}
        }
        self.penalty = penalty;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.y.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} rows",
                weights.len(),
                self.y.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("weights must be >= 0 with a positive sum".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    fn penalized(&self, j: usize) -> bool {
        !(self.intercept && j == 0)
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            family: self.family,
            penalty: self.penalty,
            weights: rows.iter().map(|&i| self.weights[i]).collect(),
            intercept: self.intercept,
        }
    }

    fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let eta = &self.x * DVector::from_column_slice(beta);
        eta.iter().copied().collect()
    }

    /// Weighted mean loss (no penalty); `+inf` on overflow.
    pub fn mean_loss(&self, beta: &[f64]) -> f64 {
        let eta = self.linear_predictor(beta);
        let w_sum: f64 = self.weights.iter().sum();
        let s: f64 = eta
            .iter()
            .zip(&self.y)
            .zip(&self.weights)
            .map(|((&t, &y), &w)| if w == 0.0 { 0.0 } else { w * self.family.unit_loss(y, t) })
            .sum();
        let v = s / w_sum;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        let pen = match self.penalty {
            Penalty::None => 0.0,
            Penalty::Ridge(l) => {
                0.5 * l * beta.iter().enumerate().filter(|(j, _)| self.penalized(*j)).map(|(_, b)| b * b).sum::<f64>()
            }
            Penalty::Lasso(l) => {
                l * beta.iter().enumerate().filter(|(j, _)| self.penalized(*j)).map(|(_, b)| b.abs()).sum::<f64>()
            }
        };
        self.mean_loss(beta) + pen
    }

    /// Gradient of the weighted mean loss (smooth part, no penalty).
    pub fn loss_gradient(&self, beta: &[f64]) -> Vec<f64> {
        let eta = self.linear_predictor(beta);
        let w_sum: f64 = self.weights.iter().sum();
        let r = DVector::from_iterator(
            self.n(),
            eta.iter()
                .zip(&self.y)
                .zip(&self.weights)
                .map(|((&t, &y), &w)| w * (self.family.mean(t) - y) / w_sum),
        );
        (self.x.transpose() * r).iter().copied().collect()
    }

    /// Gradient of the smooth part of the objective (loss plus any ridge term).
    fn smooth_gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = self.loss_gradient(beta);
        if let Penalty::Ridge(l) = self.penalty {
            for (j, gj) in g.iter_mut().enumerate() {
                if self.penalized(j) {
                    *gj += l * beta[j];
                }
            }
        }
        g
    }

    /// Largest lasso penalty with a nonzero solution: the max absolute
    /// gradient at zero (after fitting the intercept alone, if present).
    pub fn lambda_max(&self) -> Result<f64> {
        let mut beta = vec![0.0; self.p()];
        if self.intercept && self.p() > 0 {
            let only = Self {
                x: self.x.columns(0, 1).into_owned(),
                penalty: Penalty::None,
                ..self.clone()
            };
            beta[0] = irls_fit(&only, 1e-10, 100)?.coefficients[0];
        }
        let g = self.loss_gradient(&beta);
        Ok(g.iter()
            .enumerate()
            .filter(|(j, _)| self.penalized(*j))
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective at the returned coefficients.
    pub objective: f64,
}

/// Fitting controls shared by the IRLS and lasso solvers.
#[derive(Debug, Clone)]
pub struct GlmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub start: Option<Vec<f64>>,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            start: None,
        }
    }
}

const MAX_HALVINGS: usize = 20;
const RANK_TOL: f64 = 1e-12;

/// Fisher scoring with step-halving for `Penalty::None` or `Penalty::Ridge`.
pub fn irls_fit(p: &DesignProblem, tol: f64, max_iter: usize) -> Result<GlmFit> {
    irls_fit_with(p, &GlmOptions { tol, max_iter, start: None })
}

pub fn irls_fit_with(p: &DesignProblem, opts: &GlmOptions) -> Result<GlmFit> {
    let ridge = match p.penalty {
        Penalty::None => 0.0,
        Penalty::Ridge(l) => l,
        Penalty::Lasso(l) => return lasso_fit_with(p, l, opts),
    };
    let (n, k) = (p.n(), p.p());
    let mut beta = start_vector(p, opts)?;
    if k == 0 {
        return Ok(GlmFit { coefficients: beta, iterations: 0, converged: true, objective: p.objective(&[]) });
    }
    // All-zero columns under a ridge penalty have the exact solution 0.
    let free: Vec<usize> = (0..k)
        .filter(|&j| !(ridge > 0.0 && p.penalized(j) && p.x.column(j).iter().all(|&v| v == 0.0)))
        .collect();
    for j in 0..k {
        if !free.contains(&j) {
            beta[j] = 0.0;
        }
    }
    let kf = free.len();
    let pen_cols: Vec<usize> = (0..kf).filter(|&c| p.penalized(free[c]) && ridge > 0.0).collect();
    let rows = n + pen_cols.len();
    if rows < kf {
        return Err(Error::RankDeficient { rank: rows, cols: kf });
    }
    let w_sum: f64 = p.weights.iter().sum();
    let mut f = p.objective(&beta);
    if !f.is_finite() {
        beta = vec![0.0; k];
        f = p.objective(&beta);
    }
    for iter in 1..=opts.max_iter {
        let eta = p.linear_predictor(&beta);
        // Augmented least squares whose normal equations are H d = -g.
        let mut a = DMatrix::zeros(rows, kf);
        let mut rhs = DVector::zeros(rows);
        for i in 0..n {
            let v = p.family.variance(eta[i]).max(1e-300);
            let s = (p.weights[i] * v / w_sum).sqrt();
            for (c, &j) in free.iter().enumerate() {
                a[(i, c)] = s * p.x[(i, j)];
            }
            rhs[i] = if s > 0.0 { s * (p.y[i] - p.family.mean(eta[i])) / v } else { 0.0 };
        }
        let sr = ridge.sqrt();
        for (row, &c) in pen_cols.iter().enumerate() {
            a[(n + row, c)] = sr;
            rhs[n + row] = -sr * beta[free[c]];
        }
        let reduced = least_squares(a, rhs)?;
        let mut step = vec![0.0; k];
        for (c, &j) in free.iter().enumerate() {
            step[j] = reduced[c];
        }
        let g = p.smooth_gradient(&beta);
        let decrement: f64 = -g.iter().zip(step.iter()).map(|(a, b)| a * b).sum::<f64>();
        let g_max = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_max <= opts.tol || decrement <= 1e-15 * (1.0 + f.abs()) {
            return Ok(GlmFit { coefficients: beta, iterations: iter - 1, converged: true, objective: f });
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, d)| b + s * d).collect();
            let fc = p.objective(&cand);
            if fc <= f + 1e-14 * f.abs().max(1.0) {
                beta = cand;
                f = fc;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            // No representable decrease left: the predicted gain is below what
            // rounding in the objective can resolve.
            if decrement <= 1e-10 * (1.0 + f.abs()) {
                return Ok(GlmFit { coefficients: beta, iterations: iter - 1, converged: true, objective: f });
            }
            return Err(Error::Diverged {
                iterations: iter,
                reason: format!(
                    "step-halving exhausted (gradient max-norm {g_max:.3e}, Newton decrement {decrement:.3e}, objective {f:.6e})"
                ),
            });
        }
    }
    let g = p.smooth_gradient(&beta);
    let converged = g.iter().all(|v| v.abs() <= opts.tol);
    Ok(GlmFit { coefficients: beta, iterations: opts.max_iter, converged, objective: f })
}

fn start_vector(p: &DesignProblem, opts: &GlmOptions) -> Result<Vec<f64>> {
    match &opts.start {
        Some(s) if s.len() != p.p() => Err(Error::Shape(format!(
            "start vector has {} entries, design has {} columns",
            s.len(),
            p.p()
        ))),
        Some(s) => Ok(s.clone()),
        None => Ok(vec![0.0; p.p()]),
    }
}

/// Least squares via Householder QR, rejecting numerically rank-deficient
/// systems.
fn least_squares(a: DMatrix<f64>, mut b: DVector<f64>) -> Result<DVector<f64>> {
    let k = a.ncols();
    let qr = a.qr();
    let r = qr.r();
    let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..k).filter(|&i| r[(i, i)].abs() > RANK_TOL * diag_max).count();
    if rank < k || diag_max == 0.0 {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    qr.q_tr_mul(&mut b);
    let top = b.rows(0, k).into_owned();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::RankDeficient { rank, cols: k })
}

/// Lasso by IRLS with cyclic coordinate descent on each quadratic model.
pub fn lasso_fit(p: &DesignProblem, lambda: f64, tol: f64, max_iter: usize) -> Result<GlmFit> {
    lasso_fit_with(p, lambda, &GlmOptions { tol, max_iter, start: None })
}

pub fn lasso_fit_with(p: &DesignProblem, lambda: f64, opts: &GlmOptions) -> Result<GlmFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lasso penalty {lambda} must be >= 0")));
    }
    let p = &DesignProblem { penalty: Penalty::Lasso(lambda), ..p.clone() };
    let (n, k) = (p.n(), p.p());
    let mut beta = start_vector(p, opts)?;
    let w_sum: f64 = p.weights.iter().sum();
    let mut f = p.objective(&beta);
    if !f.is_finite() {
        beta = vec![0.0; k];
        f = p.objective(&beta);
    }
    let mut violation = kkt_violation(p, &beta, lambda);
    for iter in 1..=opts.max_iter {
        if violation <= opts.tol {
            return Ok(GlmFit { coefficients: beta, iterations: iter - 1, converged: true, objective: f });
        }
        let eta = p.linear_predictor(&beta);
        let mut omega = vec![0.0; n];
        let mut resid = vec![0.0; n];
        for i in 0..n {
            let v = p.family.variance(eta[i]).max(1e-300);
            omega[i] = p.weights[i] * v / w_sum;
            resid[i] = (p.y[i] - p.family.mean(eta[i])) / v;
        }
        // Weighted Gram matrix and q = X' Omega (z - X cand), updated per move.
        let mut xw = p.x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= omega[i].sqrt();
        }
        let gram = xw.tr_mul(&xw);
        let mut q: Vec<f64> = (0..k)
            .map(|j| (0..n).map(|i| omega[i] * p.x[(i, j)] * resid[i]).sum())
            .collect();
        let mut cand = beta.clone();
        for _sweep in 0..10_000 {
            let mut max_move = 0.0f64;
            for j in 0..k {
                let hj = gram[(j, j)];
                if hj == 0.0 {
                    cand[j] = 0.0;
                    continue;
                }
                let grad = q[j] + hj * cand[j];
                let new = if p.penalized(j) { soft_threshold(grad, lambda) / hj } else { grad / hj };
                let delta = new - cand[j];
                if delta != 0.0 {
                    for (qm, g) in q.iter_mut().zip(gram.column(j).iter()) {
                        *qm -= delta * g;
                    }
                    cand[j] = new;
                    max_move = max_move.max(delta.abs() * hj.sqrt());
                }
            }
            if max_move <= 1e-13 {
                break;
            }
        }
        let step: Vec<f64> = cand.iter().zip(&beta).map(|(c, b)| c - b).collect();
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, d)| b + s * d).collect();
            let ft = p.objective(&trial);
            if ft <= f + 1e-14 * f.abs().max(1.0) {
                beta = trial;
                f = ft;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        violation = kkt_violation(p, &beta, lambda);
        if !accepted && violation > opts.tol {
            return Err(Error::LassoNotConverged { iterations: iter, violation });
        }
    }
    if violation <= opts.tol {
        return Ok(GlmFit { coefficients: beta, iterations: opts.max_iter, converged: true, objective: f });
    }
    Err(Error::LassoNotConverged { iterations: opts.max_iter, violation })
}

fn soft_threshold(z: f64, l: f64) -> f64 {
    if z > l {
        z - l
    } else if z < -l {
        z + l
    } else {
        0.0
    }
}

/// Largest violation of the lasso optimality conditions: `|g_j| <= lambda`
/// at zero coefficients, `g_j + lambda sign(beta_j) = 0` at active ones and
/// `g_j = 0` for the unpenalized intercept.
pub fn kkt_violation(p: &DesignProblem, beta: &[f64], lambda: f64) -> f64 {
    let g = p.loss_gradient(beta);
    g.iter()
        .enumerate()
        .map(|(j, &gj)| {
            if !p.penalized(j) {
                gj.abs()
            } else if beta[j] == 0.0 {
                (gj.abs() - lambda).max(0.0)
            } else {
                (gj + lambda * beta[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Geometric lasso grid from `lambda_max` down to `lambda_max * ratio`.
pub fn lasso_grid(p: &DesignProblem, count: usize, ratio: f64) -> Result<Vec<f64>> {
    let hi = p.lambda_max()?;
    if hi <= 0.0 {
        return Ok(vec![0.0]);
    }
    Ok(geometric(hi, hi * ratio, count))
}

/// The default ridge grid, `10^-4 .. 10^1` in 12 log-spaced steps.
pub fn ridge_grid() -> Vec<f64> {
    geometric(10.0, 1e-4, 12)
}

fn geometric(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let step = (lo / hi).ln() / (count - 1) as f64;
    (0..count).map(|i| hi * (step * i as f64).exp()).collect()
}

/// Deterministic fold labels: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Domain::Folds, &[n as u64, folds as u64]));
    let mut label = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// K-fold cross-validation over a penalty grid. The penalty kind comes from
/// `p.penalty` (ridge or lasso); the value minimizing the mean held-out
/// deviance is returned, the first one on ties. Each fold walks the grid in
/// the given order with warm starts.
pub fn cv_lambda(p: &DesignProblem, grid: &[f64], folds: usize, seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let ridge = match p.penalty {
        Penalty::Ridge(_) => true,
        Penalty::Lasso(_) => false,
        Penalty::None => return Err(Error::InvalidArgument("cross-validation needs a ridge or lasso penalty".into())),
    };
    if folds < 2 || p.n() < folds {
        return Err(Error::InvalidArgument(format!("{} observations cannot fill {} folds", p.n(), folds)));
    }
    let labels = fold_assignment(p.n(), folds, seed);
    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..p.n()).filter(|&i| labels[i] != k).collect();
            let test: Vec<usize> = (0..p.n()).filter(|&i| labels[i] == k).collect();
            let tr = p.subset(&train);
            let te = p.subset(&test);
            let mut start: Option<Vec<f64>> = None;
            grid.iter()
                .map(|&l| {
                    let opts = GlmOptions { tol: 1e-7, max_iter: 100, start: start.clone() };
                    let fit = if ridge {
                        irls_fit_with(&DesignProblem { penalty: Penalty::Ridge(l), ..tr.clone() }, &opts)
                    } else {
                        lasso_fit_with(&tr, l, &opts)
                    };
                    match fit {
                        Ok(fit) => {
                            let eta = te.linear_predictor(&fit.coefficients);
                            start = Some(fit.coefficients);
                            let dev: f64 = eta
                                .iter()
                                .zip(&te.y)
                                .zip(&te.weights)
                                .map(|((&t, &y), &w)| w * te.family.unit_deviance(y, t))
                                .sum();
                            if dev.is_finite() {
                                dev
                            } else {
                                f64::INFINITY
                            }
                        }
                        Err(_) => f64::INFINITY,
                    }
                })
                .collect()
        })
        .collect();
    let mut best = None;
    for (g, &l) in grid.iter().enumerate() {
        let total: f64 = per_fold.iter().map(|f| f[g]).sum();
        if total.is_finite() && best.is_none_or(|(_, b)| total < b) {
            best = Some((l, total));
        }
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::InvalidArgument("every penalty in the grid failed in cross-validation".into()))
}
