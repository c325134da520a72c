//! Competing estimators: Tucker and CP tensor regression by block
//! relaxation (each block update is a GLM fit with the other blocks held
//! fixed) and GLMs on the vectorized predictors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomp::{cp_als, hosvd, mttkrp, tucker_reconstruct, CpFactors, TuckerFactors};
use crate::error::{Error, Result};
use crate::glm::{cv_lambda, irls_fit_with, lasso_fit_with, lasso_grid, neg_loglik, ridge_grid, DesignProblem, Family, GlmOptions, Penalty};
use crate::model::{design_matrix, split_intercept, FitResult, Method};
use crate::na::initial_coefficients;
use crate::tensor::{mode_product, multi_mode_product, standardize, DenseTensor, StandardizationTransform, TensorDataset};

/// How a penalty value is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaChoice {
    /// K-fold cross-validation over the default grid, done once per fit.
    Cv,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRelaxConfig {
    /// Tucker ranks; `None` means full rank.
    pub tucker_ranks: Option<Vec<usize>>,
    pub cp_rank: usize,
    pub max_iter: usize,
    /// Stop when the coefficient tensor changes by at most this in l1 norm.
    pub eta: f64,
    /// Lasso penalty for the Tucker core and the vectorized lasso.
    pub l1: LambdaChoice,
    /// Ridge penalty for the CP factor blocks.
    pub l2: LambdaChoice,
    pub folds: usize,
    pub seed: u64,
    pub intercept: bool,
    pub glm_tol: f64,
    pub glm_max_iter: usize,
}

impl Default for BlockRelaxConfig {
    fn default() -> Self {
        Self {
            tucker_ranks: None,
            cp_rank: 6,
            max_iter: 200,
            eta: 1e-4,
            l1: LambdaChoice::Cv,
            l2: LambdaChoice::Cv,
            folds: 5,
            seed: 0,
            intercept: false,
            glm_tol: 1e-8,
            glm_max_iter: 100,
        }
    }
}

impl BlockRelaxConfig {
    /// Defaults for a simulation family: the poisson lasso penalty is fixed
    /// at 1e-3, and an intercept is fitted.
    pub fn for_family(family: Family) -> Self {
        Self {
            l1: match family {
                Family::Poisson => LambdaChoice::Fixed(1e-3),
                _ => LambdaChoice::Cv,
            },
            intercept: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.eta > 0.0) || self.cp_rank == 0 {
            return Err(Error::InvalidArgument("need max_iter >= 1, eta > 0 and cp_rank >= 1".into()));
        }
        for l in [self.l1, self.l2] {
            if let LambdaChoice::Fixed(v) = l {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("penalty {v} must be >= 0")));
                }
            }
        }
        Ok(())
    }

    fn opts(&self, start: Option<Vec<f64>>) -> GlmOptions {
        GlmOptions { tol: self.glm_tol, max_iter: self.glm_max_iter, start }
    }
}

/// Design for the Tucker factor block of mode `d`: row `i` is
/// `vec(W_(d) G_(d)^T)` with `W = X_i x_{k != d} U_k^T`, so that
/// `row . vec(U_d) = <X_i, G x_1 U_1 ... x_D U_D>`.
pub fn tucker_factor_design(xs: &[DenseTensor], factors: &[DMatrix<f64>], core: &DenseTensor, d: usize) -> Result<DMatrix<f64>> {
    check_factors(xs, factors)?;
    let g_d = crate::tensor::matricize(core, d)?;
    let (i_d, r_d) = factors[d].shape();
    let mut out = DMatrix::zeros(xs.len(), i_d * r_d);
    for (row, x) in xs.iter().enumerate() {
        let mut w = x.clone();
        for (k, u) in factors.iter().enumerate() {
            if k != d {
                w = mode_product(&w, &u.transpose(), k)?;
            }
        }
        let m = crate::tensor::matricize(&w, d)? * g_d.transpose();
        for (c, v) in m.iter().enumerate() {
            out[(row, c)] = *v;
        }
    }
    Ok(out)
}

/// Design for the CP factor block of mode `d`: entry `(i, r)` of row `n` is
/// `w_r * sum over entries with index i in mode d of X_n * prod_{k != d}
/// U_k[i_k, r]`, laid out column-major like `vec(U_d)`.
pub fn cp_factor_design(xs: &[DenseTensor], factors: &[DMatrix<f64>], weights: &[f64], d: usize) -> Result<DMatrix<f64>> {
    check_factors(xs, factors)?;
    let (i_d, r) = factors[d].shape();
    if weights.len() != r {
        return Err(Error::Shape(format!("{} weights for rank {}", weights.len(), r)));
    }
    let mut out = DMatrix::zeros(xs.len(), i_d * r);
    for (row, x) in xs.iter().enumerate() {
        let m = mttkrp(x, factors, d);
        for c in 0..r {
            for i in 0..i_d {
                out[(row, c * i_d + i)] = weights[c] * m[(i, c)];
            }
        }
    }
    Ok(out)
}

/// Design for the core block: row `i` is `vec(X_i x_1 U_1^T ... x_D U_D^T)`.
pub fn core_block_design(xs: &[DenseTensor], factors: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    check_factors(xs, factors)?;
    let len: usize = factors.iter().map(|u| u.ncols()).product();
    let mut out = DMatrix::zeros(xs.len(), len);
    for (row, x) in xs.iter().enumerate() {
        let w = multi_mode_product(x, factors, true)?;
        for (c, v) in w.data().iter().enumerate() {
            out[(row, c)] = *v;
        }
    }
    Ok(out)
}

fn check_factors(xs: &[DenseTensor], factors: &[DMatrix<f64>]) -> Result<()> {
    for x in xs {
        if x.order() != factors.len() || x.shape().iter().zip(factors).any(|(&n, u)| u.nrows() != n) {
            return Err(Error::Shape(format!(
                "predictor shape {:?} does not match the factor row counts",
                x.shape()
            )));
        }
    }
    Ok(())
}

fn with_intercept_column(m: DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        m.insert_column(0, 1.0)
    } else {
        m
    }
}

/// Fits one block. All-zero design columns are dropped and their
/// coefficients fixed at 0; the rest are solved with the given penalty,
/// warm-started from `start`.
fn solve_block(x: DMatrix<f64>, y: &[f64], family: Family, penalty: Penalty, cfg: &BlockRelaxConfig, start: &[f64]) -> Result<Vec<f64>> {
    let keep: Vec<usize> = (0..x.ncols())
        .filter(|&j| (cfg.intercept && j == 0) || x.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let xr = x.select_columns(&keep);
    let sub_start: Vec<f64> = keep.iter().map(|&j| start[j]).collect();
    let p = DesignProblem::new(xr, y.to_vec(), family)?
        .with_intercept(cfg.intercept)
        .with_penalty(penalty)?;
    let fit = irls_fit_with(&p, &cfg.opts(Some(sub_start)))?;
    let mut out = vec![0.0; x.ncols()];
    for (c, &j) in keep.iter().enumerate() {
        out[j] = fit.coefficients[c];
    }
    Ok(out)
}

fn choose_lambda(choice: LambdaChoice, x: &DMatrix<f64>, y: &[f64], family: Family, lasso: bool, cfg: &BlockRelaxConfig) -> Result<f64> {
    match choice {
        LambdaChoice::Fixed(v) => Ok(v),
        LambdaChoice::Cv => {
            let keep: Vec<usize> = (0..x.ncols())
                .filter(|&j| (cfg.intercept && j == 0) || x.column(j).iter().any(|&v| v != 0.0))
                .collect();
            let p = DesignProblem::new(x.select_columns(&keep), y.to_vec(), family)?.with_intercept(cfg.intercept);
            if lasso {
                let p = p.with_penalty(Penalty::Lasso(0.0))?;
                let grid = lasso_grid(&p, 20, 1e-3)?;
                cv_lambda(&p, &grid, cfg.folds, cfg.seed)
            } else {
                let p = p.with_penalty(Penalty::Ridge(0.0))?;
                cv_lambda(&p, &ridge_grid(), cfg.folds, cfg.seed)
            }
        }
    }
}

struct Prepared {
    transform: StandardizationTransform,
    xs: Vec<DenseTensor>,
    y: Vec<f64>,
    family: Family,
    shape: Vec<usize>,
}

fn prepare(ds: &TensorDataset) -> Result<Prepared> {
    let shape = ds
        .shape()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?
        .to_vec();
    let (sds, transform) = standardize(ds)?;
    Ok(Prepared {
        transform,
        xs: sds.predictors().to_vec(),
        y: sds.responses().to_vec(),
        family: ds.family(),
        shape,
    })
}

fn data_loss(pr: &Prepared, b: &DenseTensor, intercept: f64) -> Result<f64> {
    let eta: Vec<f64> = pr
        .xs
        .iter()
        .map(|x| crate::tensor::dot(x.data(), b.data()) + intercept)
        .collect();
    neg_loglik(pr.family, &eta, &pr.y)
}

fn vec_col_major(u: &DMatrix<f64>) -> Vec<f64> {
    u.as_slice().to_vec()
}

fn l1_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum()
}

/// Tucker tensor regression by block relaxation, optionally with a lasso
/// penalty on the core.
pub fn fit_tucker_tr(ds: &TensorDataset, cfg: &BlockRelaxConfig, core_l1: bool) -> Result<FitResult> {
    cfg.validate()?;
    let pr = prepare(ds)?;
    let ranks = cfg.tucker_ranks.clone().unwrap_or_else(|| pr.shape.clone());
    let x_vec = design_matrix(&pr.xs, cfg.intercept);
    let beta0 = initial_coefficients(&x_vec, &pr.y, pr.family, cfg.intercept, &cfg.opts(None))
        .map_err(|e| e.context("initial fit"))?;
    let (mut b0, bpart) = split_intercept(&beta0, cfg.intercept);
    let init = DenseTensor::new(pr.shape.clone(), bpart.to_vec())?;
    let tf = hosvd(&init, &ranks)?;
    let (mut core, mut factors) = (tf.core, tf.factors);
    let mut b_hat = tucker_reconstruct(&TuckerFactors::new(core.clone(), factors.clone())?)?;
    let mut trace = vec![data_loss(&pr, &b_hat, b0)?];
    let mut lambda: Option<f64> = None;
    let off = usize::from(cfg.intercept);
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=cfg.max_iter {
        iterations = t;
        for d in 0..pr.shape.len() {
            let x = with_intercept_column(tucker_factor_design(&pr.xs, &factors, &core, d)?, cfg.intercept);
            let mut start = if cfg.intercept { vec![b0] } else { vec![] };
            start.extend(vec_col_major(&factors[d]));
            let coef = solve_block(x, &pr.y, pr.family, Penalty::None, cfg, &start)
                .map_err(|e| e.context(format!("iteration {t}, factor block {}", d + 1)))?;
            b0 = if cfg.intercept { coef[0] } else { 0.0 };
            let (i_d, r_d) = factors[d].shape();
            factors[d] = DMatrix::from_column_slice(i_d, r_d, &coef[off..]);
        }
        let x = with_intercept_column(core_block_design(&pr.xs, &factors)?, cfg.intercept);
        let penalty = if core_l1 {
            let l = match lambda {
                Some(l) => l,
                None => {
                    let l = choose_lambda(cfg.l1, &x, &pr.y, pr.family, true, cfg)
                        .map_err(|e| e.context(format!("iteration {t}, core penalty selection")))?;
                    lambda = Some(l);
                    l
                }
            };
            Penalty::Lasso(l)
        } else {
            Penalty::None
        };
        let mut start = if cfg.intercept { vec![b0] } else { vec![] };
        start.extend_from_slice(core.data());
        let coef = solve_block(x, &pr.y, pr.family, penalty, cfg, &start)
            .map_err(|e| e.context(format!("iteration {t}, core block")))?;
        b0 = if cfg.intercept { coef[0] } else { 0.0 };
        core = DenseTensor::new(ranks.clone(), coef[off..].to_vec())?;
        let next = tucker_reconstruct(&TuckerFactors::new(core.clone(), factors.clone())?)?;
        trace.push(data_loss(&pr, &next, b0)?);
        let change = l1_diff(&next, &b_hat);
        b_hat = next;
        if change <= cfg.eta {
            converged = true;
            break;
        }
    }
    let mut config = serde_json::to_value(cfg)?;
    if let Some(l) = lambda {
        config["selected_l1"] = serde_json::json!(l);
    }
    Ok(FitResult {
        family: pr.family,
        method: if core_l1 { Method::TuckerL1 } else { Method::Tucker },
        coefficients: b_hat,
        intercept: b0,
        averaged: None,
        tucker: Some(TuckerFactors::new(core, factors)?),
        cp: None,
        trace,
        iterations,
        converged,
        standardization: pr.transform,
        config,
    })
}

/// CP tensor regression by block relaxation, optionally with a ridge
/// penalty on every factor block.
pub fn fit_cp_tr(ds: &TensorDataset, cfg: &BlockRelaxConfig, factor_l2: bool) -> Result<FitResult> {
    cfg.validate()?;
    let pr = prepare(ds)?;
    let r = cfg.cp_rank;
    let x_vec = design_matrix(&pr.xs, cfg.intercept);
    let beta0 = initial_coefficients(&x_vec, &pr.y, pr.family, cfg.intercept, &cfg.opts(None))
        .map_err(|e| e.context("initial fit"))?;
    let (mut b0, bpart) = split_intercept(&beta0, cfg.intercept);
    let init = DenseTensor::new(pr.shape.clone(), bpart.to_vec())?;
    let cp = cp_als(&init, r, 500, 1e-10)?;
    // Absorb the weights into the first factor; block updates then act on
    // unconstrained factors.
    let mut factors = cp.factors.clone();
    for c in 0..r {
        factors[0].column_mut(c).scale_mut(cp.weights[c]);
    }
    let ones = vec![1.0; r];
    let reconstruct = |f: &[DMatrix<f64>]| crate::decomp::cp_reconstruct(&CpFactors { weights: ones.clone(), factors: f.to_vec() });
    let mut b_hat = reconstruct(&factors)?;
    let mut trace = vec![data_loss(&pr, &b_hat, b0)?];
    let mut lambda: Option<f64> = None;
    let off = usize::from(cfg.intercept);
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=cfg.max_iter {
        iterations = t;
        for d in 0..pr.shape.len() {
            let x = with_intercept_column(cp_factor_design(&pr.xs, &factors, &ones, d)?, cfg.intercept);
            let penalty = if factor_l2 {
                let l = match lambda {
                    Some(l) => l,
                    None => {
                        let l = choose_lambda(cfg.l2, &x, &pr.y, pr.family, false, cfg)
                            .map_err(|e| e.context(format!("iteration {t}, factor penalty selection")))?;
                        lambda = Some(l);
                        l
                    }
                };
                Penalty::Ridge(l)
            } else {
                Penalty::None
            };
            let mut start = if cfg.intercept { vec![b0] } else { vec![] };
            start.extend(vec_col_major(&factors[d]));
            let coef = solve_block(x, &pr.y, pr.family, penalty, cfg, &start)
                .map_err(|e| e.context(format!("iteration {t}, factor block {}", d + 1)))?;
            b0 = if cfg.intercept { coef[0] } else { 0.0 };
            let i_d = factors[d].nrows();
            factors[d] = DMatrix::from_column_slice(i_d, r, &coef[off..]);
        }
        let next = reconstruct(&factors)?;
        trace.push(data_loss(&pr, &next, b0)?);
        let change = l1_diff(&next, &b_hat);
        b_hat = next;
        if change <= cfg.eta {
            converged = true;
            break;
        }
    }
    let mut weights = vec![1.0; r];
    for f in factors.iter_mut() {
        for c in 0..r {
            let n = f.column(c).norm();
            if n > 0.0 {
                f.column_mut(c).unscale_mut(n);
            }
            weights[c] *= n;
        }
    }
    let mut config = serde_json::to_value(cfg)?;
    if let Some(l) = lambda {
        config["selected_l2"] = serde_json::json!(l);
    }
    Ok(FitResult {
        family: pr.family,
        method: if factor_l2 { Method::CpL2 } else { Method::Cp },
        coefficients: b_hat,
        intercept: b0,
        averaged: None,
        tucker: None,
        cp: Some(CpFactors::new(weights, factors)?),
        trace,
        iterations,
        converged,
        standardization: pr.transform,
        config,
    })
}

/// GLM on the vectorized (standardized) predictors, unpenalized or lasso.
pub fn fit_vectorized(ds: &TensorDataset, cfg: &BlockRelaxConfig, lasso: bool) -> Result<FitResult> {
    cfg.validate()?;
    let pr = prepare(ds)?;
    let x = design_matrix(&pr.xs, cfg.intercept);
    let (coef, lambda, converged) = if lasso {
        let l = choose_lambda(cfg.l1, &x, &pr.y, pr.family, true, cfg).map_err(|e| e.context("penalty selection"))?;
        let p = DesignProblem::new(x, pr.y.clone(), pr.family)?.with_intercept(cfg.intercept);
        let fit = lasso_fit_with(&p, l, &cfg.opts(None))?;
        (fit.coefficients, Some(l), fit.converged)
    } else {
        let p = DesignProblem::new(x, pr.y.clone(), pr.family)?.with_intercept(cfg.intercept);
        let fit = irls_fit_with(&p, &cfg.opts(None))?;
        (fit.coefficients, None, fit.converged)
    };
    let (b0, bpart) = split_intercept(&coef, cfg.intercept);
    let coefficients = DenseTensor::new(pr.shape.clone(), bpart.to_vec())?;
    let loss = data_loss(&pr, &coefficients, b0)?;
    let mut config = serde_json::to_value(cfg)?;
    if let Some(l) = lambda {
        config["selected_l1"] = serde_json::json!(l);
    }
    Ok(FitResult {
        family: pr.family,
        method: if lasso { Method::VecL1 } else { Method::Vec },
        coefficients,
        intercept: b0,
        averaged: None,
        tucker: None,
        cp: None,
        trace: vec![loss],
        iterations: 1,
        converged,
        standardization: pr.transform,
        config,
    })
}

/// Dispatches a baseline method.
pub fn fit(method: Method, ds: &TensorDataset, cfg: &BlockRelaxConfig) -> Result<FitResult> {
    match method {
        Method::Tucker => fit_tucker_tr(ds, cfg, false),
        Method::TuckerL1 => fit_tucker_tr(ds, cfg, true),
        Method::Cp => fit_cp_tr(ds, cfg, false),
        Method::CpL2 => fit_cp_tr(ds, cfg, true),
        Method::Vec => fit_vectorized(ds, cfg, false),
        Method::VecL1 => fit_vectorized(ds, cfg, true),
        Method::Na0ct2 => Err(Error::InvalidArgument("na0ct2 is not a baseline method".into())),
    }
}

/// `design . coefficients` for each row; used by tests of the block designs.
pub fn design_times(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (x * DVector::from_column_slice(v)).iter().copied().collect()
}
