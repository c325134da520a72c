//! Noise-augmented l0 regularization of the Tucker core (NA0CT2).
//!
//! Each iteration decomposes the current coefficient tensor, draws noise
//! cores whose spread is inversely proportional to the (averaged) core
//! entries, maps them back to predictor space through the factor matrices,
//! appends them as two mirrored blocks of pseudo-observations and refits an
//! unpenalized GLM. Small core entries receive very dispersed noise and are
//! driven to zero.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decomp::{hosvd, hosvd_full, tucker_reconstruct, TuckerFactors};
use crate::error::{Error, Result};
use crate::glm::{irls_fit_with, neg_loglik, DesignProblem, Family, GlmOptions, Penalty};
use crate::model::{design_matrix, split_intercept, FitResult, Method};
use crate::rng::{self, Domain};
use crate::tensor::{increment, multi_mode_product, standardize, DenseTensor, TensorDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaConfig {
    /// Noise block size.
    pub n_e: usize,
    /// Noise scale.
    pub lambda: f64,
    /// Tucker ranks; `None` means full rank.
    pub ranks: Option<Vec<usize>>,
    /// Maximum number of iterations.
    pub max_iter: usize,
    /// Moving-average window.
    pub window: usize,
    /// Stop when the averaged data loss changes by at most this much.
    pub tau: f64,
    /// Stop when the averaged coefficients change by at most this much in
    /// l1 norm; 0 disables the rule.
    pub eta: f64,
    /// Core entries with magnitude at or below this are zeroed at the end.
    pub tau0: f64,
    /// Overflow guard for the noise variance.
    pub c: f64,
    pub seed: u64,
    pub intercept: bool,
    pub glm_tol: f64,
    pub glm_max_iter: usize,
}

impl NaConfig {
    /// Full-length settings: 30000 / 5000 / 10000 iterations, window 600.
    pub fn full(family: Family) -> Self {
        Self {
            n_e: 62,
            lambda: 50.0,
            ranks: None,
            max_iter: match family {
                Family::Gaussian => 30_000,
                Family::Binomial => 5_000,
                Family::Poisson => 10_000,
            },
            window: 600,
            tau: 0.01,
            eta: 0.0,
            tau0: 1e-6,
            c: 1e-7,
            seed: 0,
            intercept: false,
            glm_tol: 1e-8,
            glm_max_iter: 100,
        }
    }

    /// Reduced settings: 3000 / 1000 / 2000 iterations, window 200.
    pub fn desk(family: Family) -> Self {
        Self {
            max_iter: match family {
                Family::Gaussian => 3_000,
                Family::Binomial => 1_000,
                Family::Poisson => 2_000,
            },
            window: 200,
            ..Self::full(family)
        }
    }

    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        let ranks = self.ranks.clone().unwrap_or_else(|| shape.to_vec());
        if ranks.len() != shape.len() || ranks.iter().zip(shape).any(|(&r, &n)| r == 0 || r > n) {
            return Err(Error::InvalidRank(format!("ranks {ranks:?} invalid for shape {shape:?}")));
        }
        let core_len: usize = ranks.iter().product();
        if self.n_e >= core_len {
            return Err(Error::InvalidArgument(format!(
                "noise block size {} must be below the number of core entries {}",
                self.n_e, core_len
            )));
        }
        let positive = [("lambda", self.lambda), ("tau0", self.tau0), ("c", self.c)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.window == 0 || self.max_iter == 0 {
            return Err(Error::InvalidArgument("window and max_iter must be at least 1".into()));
        }
        if !(self.tau >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::InvalidArgument("tau and eta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pseudo-responses for the noise rows: all 0 (gaussian), ceil(n_e/2)
/// zeros then floor(n_e/2) ones (binomial), all 1 (poisson).
pub fn noise_responses(family: Family, n_e: usize) -> Vec<f64> {
    match family {
        Family::Gaussian => vec![0.0; n_e],
        Family::Binomial => (0..n_e).map(|j| if j < n_e.div_ceil(2) { 0.0 } else { 1.0 }).collect(),
        Family::Poisson => vec![1.0; n_e],
    }
}

/// Draws `n_e` noise cores with independent entries `N(0, lambda / g^2)`.
pub fn draw_noise_cores(gbar: &DenseTensor, lambda: f64, n_e: usize, rng: &mut ChaCha20Rng) -> Result<Vec<DenseTensor>> {
    if let Some(k) = gbar.data().iter().position(|g| *g == 0.0 || !g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "averaged core entry {k} is {} and cannot set a noise variance",
            gbar.data()[k]
        )));
    }
    let sd: Vec<f64> = gbar.data().iter().map(|g| lambda.sqrt() / g.abs()).collect();
    (0..n_e)
        .map(|_| {
            let data = sd.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
            DenseTensor::new(gbar.shape().to_vec(), data)
        })
        .collect()
}

/// `Z_j = E_j x_1 U_1 ... x_D U_D`.
pub fn build_noise_predictors(cores: &[DenseTensor], factors: &[DMatrix<f64>]) -> Result<Vec<DenseTensor>> {
    cores.iter().map(|e| multi_mode_product(e, factors, false)).collect()
}

/// Appends `(Z_j, e_j)` then `(-Z_j, e_j)` to the dataset.
pub fn augment(ds: &TensorDataset, z: &[DenseTensor], e_y: &[f64]) -> Result<TensorDataset> {
    if z.len() != e_y.len() {
        return Err(Error::Shape(format!("{} noise predictors, {} noise responses", z.len(), e_y.len())));
    }
    if z.is_empty() {
        return Ok(ds.clone());
    }
    let mut xs = ds.predictors().to_vec();
    let mut ys = ds.responses().to_vec();
    xs.extend(z.iter().cloned());
    ys.extend_from_slice(e_y);
    xs.extend(z.iter().map(|t| t.scale(-1.0)));
    ys.extend_from_slice(e_y);
    TensorDataset::new(xs, ys, ds.family())
}

/// Number of full-rank HOSVD core entries with `|g| <= tau0`.
pub fn core_zero_count(b: &DenseTensor, tau0: f64) -> Result<usize> {
    let f = hosvd_full(b)?;
    Ok(f.core.data().iter().filter(|g| g.abs() <= tau0).count())
}

/// Coefficients of the initial vectorized fit: unpenalized when the design
/// has full column rank, ridge 1e-3 otherwise.
pub(crate) fn initial_coefficients(x: &DMatrix<f64>, y: &[f64], family: Family, intercept: bool, opts: &GlmOptions) -> Result<Vec<f64>> {
    let base = DesignProblem::new(x.clone(), y.to_vec(), family)?.with_intercept(intercept);
    if x.nrows() > x.ncols() {
        match irls_fit_with(&base, opts) {
            Ok(f) => return Ok(f.coefficients),
            Err(e) if matches!(e.root(), Error::RankDeficient { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let ridge = base.with_penalty(Penalty::Ridge(1e-3))?;
    Ok(irls_fit_with(&ridge, opts)?.coefficients)
}

/// Running window of the last `m` items with their sum.
struct Window<T> {
    items: VecDeque<T>,
    m: usize,
}

impl<T> Window<T> {
    fn new(m: usize) -> Self {
        Self { items: VecDeque::with_capacity(m + 1), m }
    }

    fn push(&mut self, v: T) {
        self.items.push_back(v);
        if self.items.len() > self.m {
            self.items.pop_front();
        }
    }
}

/// Flips factor columns (and the matching core slices) so that each column
/// points the same way as in `reference`. The reconstruction is unchanged;
/// the point is that cores from consecutive iterations can be averaged
/// entrywise even when the sign convention of the SVD flips a column.
pub fn align_signs(tf: &mut TuckerFactors, reference: &[DMatrix<f64>]) {
    let shape = tf.core.shape().to_vec();
    for (d, (u, r)) in tf.factors.iter_mut().zip(reference).enumerate() {
        if u.shape() != r.shape() {
            continue;
        }
        let flip: Vec<bool> = (0..u.ncols()).map(|k| u.column(k).dot(&r.column(k)) < 0.0).collect();
        if !flip.contains(&true) {
            continue;
        }
        for (k, _) in flip.iter().enumerate().filter(|(_, f)| **f) {
            u.column_mut(k).neg_mut();
        }
        let mut idx = vec![0; shape.len()];
        for g in tf.core.data_mut() {
            if flip[idx[d]] {
                *g = -*g;
            }
            increment(&mut idx, &shape);
        }
    }
}

/// Running value of a windowed quantity: the latest item until the window
/// is full, the mean over the window afterwards.
fn running(items: &VecDeque<Vec<f64>>, t: usize, m: usize) -> Vec<f64> {
    if t <= m {
        return items.back().expect("window is never empty here").clone();
    }
    mean_of(items)
}

fn mean_of(items: &VecDeque<Vec<f64>>) -> Vec<f64> {
    let mut out = vec![0.0; items[0].len()];
    for v in items {
        out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
    }
    let k = items.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Runs the noise-augmented fit on `ds`.
pub fn fit(ds: &TensorDataset, cfg: &NaConfig) -> Result<FitResult> {
    let shape = ds
        .shape()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?
        .to_vec();
    cfg.validate(&shape)?;
    let ranks = cfg.ranks.clone().unwrap_or_else(|| shape.clone());
    let family = ds.family();
    let (sds, transform) = standardize(ds)?;
    let n = sds.len();
    let x = design_matrix(sds.predictors(), cfg.intercept);
    let y = sds.responses().to_vec();
    let off = usize::from(cfg.intercept);
    let k = x.ncols();
    let opts = GlmOptions { tol: cfg.glm_tol, max_iter: cfg.glm_max_iter, start: None };
    let mut beta = initial_coefficients(&x, &y, family, cfg.intercept, &opts).map_err(|e| e.context("initial fit"))?;

    let e_y = noise_responses(family, cfg.n_e);
    let rows = n + 2 * cfg.n_e;
    let mut x_aug = DMatrix::zeros(rows, k);
    x_aug.rows_mut(0, n).copy_from(&x);
    let mut y_aug = y.clone();
    y_aug.extend_from_slice(&e_y);
    y_aug.extend_from_slice(&e_y);
    let floor = cfg.c.max(cfg.tau0);

    let mut cores: Window<Vec<f64>> = Window::new(cfg.window);
    let mut betas: Window<Vec<f64>> = Window::new(cfg.window);
    let mut losses: Window<f64> = Window::new(cfg.window);
    let mut trace = Vec::new();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut reference: Option<Vec<DMatrix<f64>>> = None;
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=cfg.max_iter {
        iterations = t;
        let b_prev = DenseTensor::new(shape.clone(), beta[off..].to_vec())?;
        let mut tf = hosvd(&b_prev, &ranks).map_err(|e| e.context(format!("iteration {t}")))?;
        if let Some(r) = &reference {
            align_signs(&mut tf, r);
        }
        cores.push(tf.core.data().to_vec());
        reference = Some(tf.factors.clone());
        let gbar_data: Vec<f64> = running(&cores.items, t, cfg.window)
            .into_iter()
            .map(|g| if g.abs() < floor { floor.copysign(if g == 0.0 { 1.0 } else { g }) } else { g })
            .collect();
        let gbar = DenseTensor::new(ranks.clone(), gbar_data)?;

        if cfg.n_e > 0 {
            let mut r = rng::stream(cfg.seed, Domain::Noise, &[t as u64]);
            let e = draw_noise_cores(&gbar, cfg.lambda, cfg.n_e, &mut r)?;
            let z = build_noise_predictors(&e, &tf.factors)?;
            for (j, zj) in z.iter().enumerate() {
                for (c, &v) in zj.data().iter().enumerate() {
                    x_aug[(n + j, off + c)] = v;
                    x_aug[(n + cfg.n_e + j, off + c)] = -v;
                }
            }
        }
        let problem = DesignProblem::new(x_aug.clone(), y_aug.clone(), family)?.with_intercept(cfg.intercept);
        // No warm start: at the previous coefficients the fresh noise rows
        // have linear predictors of order sqrt(lambda * core size), which
        // for the exponential families means astronomically large weights.
        let glm = irls_fit_with(&problem, &opts).map_err(|e| e.context(format!("iteration {t}")))?;
        beta = glm.coefficients;

        let eta: Vec<f64> = (&x * nalgebra::DVector::from_column_slice(&beta)).iter().copied().collect();
        let loss = neg_loglik(family, &eta, &y).map_err(|e| e.context(format!("iteration {t}")))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("data loss at iteration {t}")));
        }
        betas.push(beta.clone());
        losses.push(loss);
        let bbar = running(&betas.items, t, cfg.window);
        let lbar = if t <= cfg.window {
            loss
        } else {
            losses.items.iter().sum::<f64>() / losses.items.len() as f64
        };
        trace.push(lbar);

        if let Some((l_old, b_old)) = &prev {
            let db: f64 = bbar.iter().zip(b_old).map(|(a, b)| (a - b).abs()).sum();
            if (lbar - l_old).abs() <= cfg.tau || (cfg.eta > 0.0 && db <= cfg.eta) {
                converged = true;
                prev = Some((lbar, bbar));
                break;
            }
        }
        prev = Some((lbar, bbar));
    }

    let (_, bbar) = prev.expect("at least one iteration");
    let (intercept, bpart) = split_intercept(&bbar, cfg.intercept);
    let averaged = DenseTensor::new(shape.clone(), bpart.to_vec())?;
    let mut tf = hosvd(&averaged, &ranks)?;
    tf.core.data_mut().iter_mut().for_each(|g| {
        if g.abs() <= cfg.tau0 {
            *g = 0.0;
        }
    });
    let coefficients = tucker_reconstruct(&tf)?;
    Ok(FitResult {
        family,
        method: Method::Na0ct2,
        coefficients,
        intercept,
        averaged: Some(averaged),
        tucker: Some(TuckerFactors::new(tf.core, tf.factors)?),
        cp: None,
        trace,
        iterations,
        converged,
        standardization: transform,
        config: serde_json::to_value(cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::hosvd_full;
    use crate::tensor::inner;
    use rand::SeedableRng;

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.sample(StandardNormal)).unwrap()
    }

    #[test]
    fn noise_response_policies() {
        assert_eq!(noise_responses(Family::Gaussian, 3), vec![0.0; 3]);
        assert_eq!(noise_responses(Family::Binomial, 4), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(noise_responses(Family::Binomial, 5), vec![0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(noise_responses(Family::Poisson, 2), vec![1.0, 1.0]);
    }

    #[test]
    fn noise_variance_follows_inverse_square() {
        let g = DenseTensor::new(vec![1], vec![1.0]).unwrap();
        let mut r = rng::stream(1, Domain::Noise, &[0]);
        let draws = draw_noise_cores(&g, 50.0, 100_000, &mut r).unwrap();
        let v: f64 = draws.iter().map(|e| e.data()[0].powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((v - 50.0).abs() <= 0.03 * 50.0, "{v}");

        // sign of g does not matter
        let pos = DenseTensor::new(vec![2], vec![0.5, 0.01]).unwrap();
        let neg = pos.scale(-1.0);
        let a = draw_noise_cores(&pos, 50.0, 3, &mut rng::stream(2, Domain::Noise, &[0])).unwrap();
        let b = draw_noise_cores(&neg, 50.0, 3, &mut rng::stream(2, Domain::Noise, &[0])).unwrap();
        assert_eq!(a, b);

        let g = DenseTensor::new(vec![1], vec![0.01]).unwrap();
        let d = draw_noise_cores(&g, 50.0, 20_000, &mut rng::stream(3, Domain::Noise, &[0])).unwrap();
        let sd = (d.iter().map(|e| e.data()[0].powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd / (50f64.sqrt() * 100.0) - 1.0).abs() < 0.03);

        let zero = DenseTensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(draw_noise_cores(&zero, 1.0, 1, &mut r).is_err());
    }

    #[test]
    fn noise_predictors_reduce_to_core_inner_products() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let b = random_tensor(&[3, 4, 2], &mut r);
        let tf = hosvd_full(&b).unwrap();
        let e: Vec<DenseTensor> = (0..5).map(|_| random_tensor(&[3, 4, 2], &mut r)).collect();
        let z = build_noise_predictors(&e, &tf.factors).unwrap();
        for (ej, zj) in e.iter().zip(&z) {
            let lhs = inner(zj, &b).unwrap();
            let rhs = inner(ej, &tf.core).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
        let ident: Vec<DMatrix<f64>> = [3, 4, 2].iter().map(|&k| DMatrix::identity(k, k)).collect();
        assert_eq!(build_noise_predictors(&e[..1], &ident).unwrap()[0], e[0]);
        let zero = DenseTensor::zeros(&[3, 4, 2]).unwrap();
        assert!(build_noise_predictors(&[zero], &tf.factors).unwrap()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn augment_orders_blocks() {
        let xs = vec![DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        let ds = TensorDataset::new(xs, vec![0.3], Family::Gaussian).unwrap();
        assert_eq!(augment(&ds, &[], &[]).unwrap(), ds);
        let z = vec![DenseTensor::new(vec![2], vec![5.0, -1.0]).unwrap()];
        let a = augment(&ds, &z, &[0.0]).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.predictors()[1].data(), &[5.0, -1.0]);
        assert_eq!(a.predictors()[2].data(), &[-5.0, 1.0]);
        assert!(augment(&ds, &z, &[]).is_err());
    }

    #[test]
    fn zero_count_edge_cases() {
        assert_eq!(core_zero_count(&DenseTensor::zeros(&[2, 3, 2]).unwrap(), 0.005).unwrap(), 12);
        let t = crate::tensor::outer_rank1(&[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(core_zero_count(&t, 0.005).unwrap(), 11);
    }

    #[test]
    fn config_validation() {
        let mut c = NaConfig::desk(Family::Gaussian);
        assert!(c.validate(&[4, 4, 4]).is_ok());
        c.n_e = 64;
        assert!(c.validate(&[4, 4, 4]).is_err());
        c.n_e = 4;
        c.ranks = Some(vec![2, 2, 1]);
        assert!(c.validate(&[4, 4, 4]).is_err());
        c.ranks = Some(vec![2, 2, 2]);
        assert!(c.validate(&[4, 4, 4]).is_ok());
        c.lambda = 0.0;
        assert!(c.validate(&[4, 4, 4]).is_err());
    }

    fn l2_loss(ds: &TensorDataset, b: &DenseTensor) -> f64 {
        ds.predictors()
            .iter()
            .zip(ds.responses())
            .map(|(x, y)| (y - inner(x, b).unwrap()).powi(2))
            .sum()
    }

    fn random_dataset(shape: &[usize], n: usize, family: Family, rng: &mut impl Rng) -> TensorDataset {
        let xs: Vec<DenseTensor> = (0..n).map(|_| random_tensor(shape, rng)).collect();
        let ys: Vec<f64> = (0..n)
            .map(|_| match family {
                Family::Gaussian => rng.sample(StandardNormal),
                _ => f64::from(rng.random::<bool>()),
            })
            .collect();
        TensorDataset::new(xs, ys, family).unwrap()
    }

    #[test]
    fn augmented_l2_loss_adds_twice_the_squared_projections() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in 0..20 {
            let b = random_tensor(&[3, 2, 2], &mut r);
            let ds = random_dataset(&[3, 2, 2], 9, Family::Gaussian, &mut r);
            let tf = hosvd_full(&b).unwrap();
            let e = draw_noise_cores(&tf.core.scale(0.7), 5.0, 4, &mut rng::stream(11, Domain::Noise, &[k])).unwrap();
            let z = build_noise_predictors(&e, &tf.factors).unwrap();
            let aug = augment(&ds, &z, &noise_responses(Family::Gaussian, 4)).unwrap();
            let extra: f64 = z.iter().map(|zj| inner(zj, &b).unwrap().powi(2)).sum();
            let diff = l2_loss(&aug, &b) - l2_loss(&ds, &b) - 2.0 * extra;
            assert!(diff.abs() <= 1e-8 * l2_loss(&aug, &b));
        }
    }

    #[test]
    fn mirrored_blocks_cancel_linear_terms() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let b = random_tensor(&[2, 3], &mut r);
        let z: Vec<DenseTensor> = (0..6).map(|_| random_tensor(&[2, 3], &mut r)).collect();
        let e_y = noise_responses(Family::Binomial, 6);
        let mean0 = Family::Binomial.mean(0.0);
        let ds = random_dataset(&[2, 3], 2, Family::Binomial, &mut r);
        let aug = augment(&ds, &z, &e_y).unwrap();
        // pair row j of the +Z block with row j of the -Z block
        let plus = &aug.predictors()[2..8];
        let minus = &aug.predictors()[8..];
        let ys = &aug.responses()[2..];
        for j in 0..6 {
            assert_eq!(ys[j], ys[j + 6]);
            let a = (ys[j] - mean0) * inner(&plus[j], &b).unwrap();
            let c = (ys[j + 6] - mean0) * inner(&minus[j], &b).unwrap();
            assert_eq!(a + c, 0.0);
        }
    }

    #[test]
    fn core_reduction_needs_orthonormal_factors() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let b = random_tensor(&[3, 3, 2], &mut r);
        let mut tf = hosvd_full(&b).unwrap();
        tf.factors[0] = tf.factors[0].scale(1.5);
        let b_skew = tucker_reconstruct(&tf).unwrap();
        let e = random_tensor(&[3, 3, 2], &mut r);
        let z = build_noise_predictors(&[e.clone()], &tf.factors).unwrap();
        let lhs = inner(&z[0], &b_skew).unwrap();
        let rhs = inner(&e, &tf.core).unwrap();
        assert!((lhs - rhs).abs() > 1e-3 * rhs.abs().max(1.0));
    }

    #[test]
    fn sign_alignment_keeps_reconstruction() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let b = random_tensor(&[3, 4, 2], &mut r);
        let reference = hosvd_full(&b).unwrap();
        let mut flipped = reference.clone();
        flipped.factors[1].column_mut(2).neg_mut();
        flipped.factors[2].column_mut(0).neg_mut();
        let mut idx = vec![0; 3];
        let shape = flipped.core.shape().to_vec();
        for g in flipped.core.data_mut() {
            if (idx[1] == 2) != (idx[2] == 0) {
                *g = -*g;
            }
            increment(&mut idx, &shape);
        }
        let before = tucker_reconstruct(&flipped).unwrap();
        assert!(before.sub(&b).unwrap().frobenius_norm() <= 1e-10 * b.frobenius_norm());
        align_signs(&mut flipped, &reference.factors);
        assert_eq!(flipped.factors, reference.factors);
        assert!(flipped.core.sub(&reference.core).unwrap().frobenius_norm() <= 1e-12 * b.frobenius_norm());
    }

    fn small_linear(seed: u64) -> TensorDataset {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DenseTensor::from_fn(&[2, 3, 2], |ix| [1.5, -0.5, 0.0][ix[1]] * if ix[0] == 0 { 1.0 } else { 0.5 }).unwrap();
        let xs: Vec<DenseTensor> = (0..60).map(|_| random_tensor(&[2, 3, 2], &mut r)).collect();
        let ys = xs
            .iter()
            .map(|x| inner(x, &b).unwrap() + 0.3 * r.sample::<f64, _>(StandardNormal))
            .collect();
        TensorDataset::new(xs, ys, Family::Gaussian).unwrap()
    }

    fn small_config() -> NaConfig {
        NaConfig { n_e: 8, max_iter: 60, window: 20, seed: 5, ..NaConfig::desk(Family::Gaussian) }
    }

    #[test]
    fn without_noise_rows_fit_is_the_vectorized_glm() {
        let ds = small_linear(21);
        let cfg = NaConfig { n_e: 0, ..small_config() };
        let fit = fit(&ds, &cfg).unwrap();
        let plain = crate::baselines::fit(Method::Vec, &ds, &crate::baselines::BlockRelaxConfig::default()).unwrap();
        let a = fit.averaged.as_ref().unwrap();
        assert!(a.sub(&plain.coefficients).unwrap().data().iter().all(|d| d.abs() <= 1e-8));
        assert!(fit.converged);
        assert_eq!(fit.iterations, 2);
    }

    #[test]
    fn fit_is_deterministic_and_records_a_trace() {
        let ds = small_linear(22);
        let a = fit(&ds, &small_config()).unwrap();
        let b = fit(&ds, &small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), a.iterations);
        assert!(a.tucker.as_ref().unwrap().orthonormality_error() <= 1e-10);
        let c = fit(&ds, &NaConfig { seed: 6, ..small_config() }).unwrap();
        assert_ne!(a.coefficients, c.coefficients);
    }

    #[test]
    fn window_is_raw_until_full() {
        let ds = small_linear(23);
        // tau = 0 and eta = 0 never stop early
        let cfg = NaConfig { tau: 0.0, max_iter: 5, window: 10, ..small_config() };
        let short = fit(&ds, &cfg).unwrap();
        let longer = fit(&ds, &NaConfig { max_iter: 6, ..cfg.clone() }).unwrap();
        // the averaged output at t <= window is the last iterate, so the
        // trace entries equal the raw data loss of each iterate
        assert_eq!(short.trace[..], longer.trace[..5]);
        assert!(short.trace.windows(2).any(|w| w[0] != w[1]));
        assert!(!short.converged);
    }

    #[test]
    fn noise_rows_increase_core_sparsity() {
        use crate::simbench::{gen_dataset, SimDesign};
        let design = SimDesign::desk(Family::Gaussian);
        for repeat in 0..2 {
            let (train, _, _) = gen_dataset(&design, repeat).unwrap();
            let with = fit(&train, &NaConfig { seed: repeat as u64, ..design.na.clone() }).unwrap();
            let without = fit(&train, &NaConfig { n_e: 0, ..design.na.clone() }).unwrap();
            let zw = core_zero_count(&with.coefficients, 0.005).unwrap();
            let zo = core_zero_count(&without.coefficients, 0.005).unwrap();
            assert!(zw > zo, "repeat {repeat}: {zw} vs {zo}");
        }
    }
}
