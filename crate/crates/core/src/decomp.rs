//! Tucker (HOSVD, HOOI) and CP (ALS) decompositions, reconstructions and
//! free-parameter counts.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::tensor::{increment, matricize, mode_product, multi_mode_product, DenseTensor};

/// Core tensor plus one factor matrix per mode (`U_d` is `I_d x R_d`).
///
/// Factors produced by [`hosvd`] and [`hooi`] have orthonormal columns.
/// Block-relaxation fits reuse the type with unconstrained factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTucker")]
pub struct TuckerFactors {
    pub core: DenseTensor,
    #[serde(with = "crate::io::matrix_list")]
    pub factors: Vec<DMatrix<f64>>,
}

#[derive(Deserialize)]
struct RawTucker {
    core: DenseTensor,
    #[serde(with = "crate::io::matrix_list")]
    factors: Vec<DMatrix<f64>>,
}

impl TryFrom<RawTucker> for TuckerFactors {
    type Error = Error;

    fn try_from(raw: RawTucker) -> Result<Self> {
        TuckerFactors::new(raw.core, raw.factors)
    }
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::Shape(format!(
                "{} factors for a core of order {}",
                factors.len(),
                core.order()
            )));
        }
        for (d, (u, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if u.ncols() != r {
                return Err(Error::Shape(format!(
                    "factor {} has {} columns, core mode has size {}",
                    d + 1,
                    u.ncols(),
                    r
                )));
            }
            if u.nrows() == 0 {
                return Err(Error::Shape(format!("factor {} has no rows", d + 1)));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|u| u.nrows()).collect()
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    /// Largest entry of `|U_d^T U_d - I|` over all modes.
    pub fn orthonormality_error(&self) -> f64 {
        self.factors
            .iter()
            .map(|u| {
                let g = u.transpose() * u;
                let r = g.nrows();
                (g - DMatrix::<f64>::identity(r, r)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Weights plus per-mode factor matrices with unit-norm columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCp")]
pub struct CpFactors {
    pub weights: Vec<f64>,
    #[serde(with = "crate::io::matrix_list")]
    pub factors: Vec<DMatrix<f64>>,
}

#[derive(Deserialize)]
struct RawCp {
    weights: Vec<f64>,
    #[serde(with = "crate::io::matrix_list")]
    factors: Vec<DMatrix<f64>>,
}

impl TryFrom<RawCp> for CpFactors {
    type Error = Error;

    fn try_from(raw: RawCp) -> Result<Self> {
        CpFactors::new(raw.weights, raw.factors)
    }
}

impl CpFactors {
    pub fn new(weights: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let r = weights.len();
        if r == 0 {
            return Err(Error::InvalidRank("CP rank must be at least 1".into()));
        }
        if factors.is_empty() {
            return Err(Error::Shape("CP model needs at least one factor".into()));
        }
        for (d, u) in factors.iter().enumerate() {
            if u.ncols() != r || u.nrows() == 0 {
                return Err(Error::Shape(format!(
                    "factor {} is {}x{}, expected {} columns",
                    d + 1,
                    u.nrows(),
                    u.ncols(),
                    r
                )));
            }
        }
        Ok(Self { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|u| u.nrows()).collect()
    }
}

/// Leading `r` left singular vectors of `m`, sorted by descending singular
/// value, with the sign convention "largest-magnitude entry positive, ties to
/// the lowest index". When `r` exceeds the numerical column space the basis
/// is completed with an orthonormal complement.
pub(crate) fn leading_left_singular_vectors(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let rows = m.nrows();
    if r == 0 || r > rows {
        return Err(Error::InvalidRank(format!("rank {r} not in 1..={rows}")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix passed to SVD".into()));
    }
    let svd = m
        .clone()
        .try_svd(true, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Svd(format!("no convergence on a {}x{} matrix", rows, m.ncols())))?;
    let u = svd.u.expect("requested U");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    for &k in order.iter().take(r) {
        cols.push(u.column(k).iter().copied().collect());
    }
    // Orthonormal completion from the standard basis.
    let mut e = 0;
    while cols.len() < r && e < rows {
        let mut v = vec![0.0; rows];
        v[e] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, a)| *x -= p * a);
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= nrm);
            cols.push(v);
        }
        e += 1;
    }
    let mut out = DMatrix::zeros(rows, r);
    for (j, mut c) in cols.into_iter().enumerate() {
        fix_sign(&mut c);
        out.set_column(j, &nalgebra::DVector::from_vec(c));
    }
    Ok(out)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn check_ranks(shape: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != shape.len() {
        return Err(Error::InvalidRank(format!(
            "{} ranks for a tensor of order {}",
            ranks.len(),
            shape.len()
        )));
    }
    for (d, (&r, &n)) in ranks.iter().zip(shape).enumerate() {
        if r == 0 || r > n {
            return Err(Error::InvalidRank(format!(
                "rank {} for mode {} must be in 1..={}",
                r,
                d + 1,
                n
            )));
        }
    }
    Ok(())
}

/// Truncated higher-order SVD.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<TuckerFactors> {
    check_ranks(t.shape(), ranks)?;
    let factors = (0..t.order())
        .map(|d| leading_left_singular_vectors(&matricize(t, d)?, ranks[d]))
        .collect::<Result<Vec<_>>>()?;
    let core = multi_mode_product(t, &factors, true)?;
    TuckerFactors::new(core, factors)
}

/// Full-rank HOSVD.
pub fn hosvd_full(t: &DenseTensor) -> Result<TuckerFactors> {
    hosvd(t, &t.shape().to_vec())
}

pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<DenseTensor> {
    multi_mode_product(&f.core, &f.factors, false)
}

/// `||t - approx||_F / ||t||_F`, or the absolute error when `t` is zero.
pub fn relative_error(t: &DenseTensor, approx: &DenseTensor) -> Result<f64> {
    let diff = t.sub(approx)?.frobenius_norm();
    let nrm = t.frobenius_norm();
    Ok(if nrm > 0.0 { diff / nrm } else { diff })
}

/// HOOI refinement starting from the truncated HOSVD.
pub fn hooi(t: &DenseTensor, ranks: &[usize], max_sweeps: usize, tol: f64) -> Result<TuckerFactors> {
    hooi_trace(t, ranks, max_sweeps, tol).map(|(f, _)| f)
}

/// As [`hooi`], also returning the relative reconstruction error after the
/// initial HOSVD (entry 0) and after each sweep.
pub fn hooi_trace(
    t: &DenseTensor,
    ranks: &[usize],
    max_sweeps: usize,
    tol: f64,
) -> Result<(TuckerFactors, Vec<f64>)> {
    let mut best = hosvd(t, ranks)?;
    let mut err = relative_error(t, &tucker_reconstruct(&best)?)?;
    let mut trace = vec![err];
    for _ in 0..max_sweeps {
        let mut factors = best.factors.clone();
        for d in 0..t.order() {
            let mut y = t.clone();
            for (k, u) in factors.iter().enumerate() {
                if k != d {
                    y = mode_product(&y, &u.transpose(), k)?;
                }
            }
            factors[d] = leading_left_singular_vectors(&matricize(&y, d)?, ranks[d])?;
        }
        let core = multi_mode_product(t, &factors, true)?;
        let cand = TuckerFactors::new(core, factors)?;
        let cand_err = relative_error(t, &tucker_reconstruct(&cand)?)?;
        // A sweep can only gain round-off; keep the better iterate.
        let improved = cand_err <= err;
        if improved {
            best = cand;
        }
        let prev = err;
        err = err.min(cand_err);
        trace.push(err);
        if !improved || prev - err <= tol {
            break;
        }
    }
    Ok((best, trace))
}

pub fn cp_reconstruct(f: &CpFactors) -> Result<DenseTensor> {
    let shape = f.shape();
    let mut out = DenseTensor::zeros(&shape)?;
    let mut idx = vec![0usize; shape.len()];
    for x in out.data_mut().iter_mut() {
        let mut s = 0.0;
        for (r, &g) in f.weights.iter().enumerate() {
            let mut p = g;
            for (u, &i) in f.factors.iter().zip(&idx) {
                p *= u[(i, r)];
            }
            s += p;
        }
        *x = s;
        increment(&mut idx, &shape);
    }
    Ok(out)
}

/// Matricized tensor times Khatri-Rao product: `out[i, r] = sum over entries
/// with i_d = i of x * prod_{k != d} A_k[i_k, r]`.
pub(crate) fn mttkrp(t: &DenseTensor, factors: &[DMatrix<f64>], d: usize) -> DMatrix<f64> {
    let shape = t.shape();
    let r = factors[0].ncols();
    let mut out = DMatrix::zeros(shape[d], r);
    let mut idx = vec![0usize; shape.len()];
    let mut prod = vec![0.0; r];
    for &x in t.data() {
        if x != 0.0 {
            prod.iter_mut().for_each(|p| *p = x);
            for (k, a) in factors.iter().enumerate() {
                if k != d {
                    for (c, p) in prod.iter_mut().enumerate() {
                        *p *= a[(idx[k], c)];
                    }
                }
            }
            for (c, p) in prod.iter().enumerate() {
                out[(idx[d], c)] += p;
            }
        }
        increment(&mut idx, shape);
    }
    out
}

const CP_RIDGE: f64 = 1e-10;

/// Solves `A V = M` for symmetric positive semidefinite `V`, adding a ridge
/// of 1e-10 when `V` is numerically singular.
fn solve_gram(v: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let near_singular = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        let l = c.l_dirty();
        let d: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let hi = d.iter().copied().fold(0.0, f64::max);
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        lo <= 1e-14 * hi
    };
    let chol = v.clone().cholesky().filter(|c| !near_singular(c)).or_else(|| {
        let r = v.nrows();
        (v + DMatrix::<f64>::identity(r, r) * CP_RIDGE).cholesky()
    });
    match chol {
        Some(c) => c.solve(&m.transpose()).transpose(),
        None => {
            let pinv = v
                .clone()
                .pseudo_inverse(1e-12)
                .unwrap_or_else(|_| DMatrix::zeros(v.nrows(), v.ncols()));
            m * pinv
        }
    }
}

fn normalize_columns(a: &mut DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|c| {
            let n = a.column(c).norm();
            if n > 0.0 {
                a.column_mut(c).unscale_mut(n);
            }
            n
        })
        .collect()
}

pub fn cp_als(t: &DenseTensor, rank: usize, max_sweeps: usize, tol: f64) -> Result<CpFactors> {
    cp_als_trace(t, rank, max_sweeps, tol).map(|(f, _)| f)
}

/// CP-ALS returning the relative reconstruction error after each sweep.
pub fn cp_als_trace(
    t: &DenseTensor,
    rank: usize,
    max_sweeps: usize,
    tol: f64,
) -> Result<(CpFactors, Vec<f64>)> {
    if rank == 0 {
        return Err(Error::InvalidRank("CP rank must be at least 1".into()));
    }
    let order = t.order();
    let mut init_rng = rng::stream(0, Domain::CpInit, &[rank as u64]);
    let mut factors = Vec::with_capacity(order);
    for d in 0..order {
        let n = t.shape()[d];
        let lead = leading_left_singular_vectors(&matricize(t, d)?, rank.min(n))?;
        let mut a = DMatrix::zeros(n, rank);
        a.columns_mut(0, lead.ncols()).copy_from(&lead);
        for c in lead.ncols()..rank {
            for i in 0..n {
                a[(i, c)] = init_rng.sample(StandardNormal);
            }
        }
        normalize_columns(&mut a);
        factors.push(a);
    }
    let mut weights = vec![1.0; rank];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..max_sweeps.max(1) {
        for d in 0..order {
            let mut v = DMatrix::from_element(rank, rank, 1.0);
            for (k, a) in factors.iter().enumerate() {
                if k != d {
                    v.component_mul_assign(&(a.transpose() * a));
                }
            }
            let m = mttkrp(t, &factors, d);
            let mut a = solve_gram(&v, &m);
            weights = normalize_columns(&mut a);
            factors[d] = a;
        }
        let f = CpFactors::new(weights.clone(), factors.clone())?;
        let err = relative_error(t, &cp_reconstruct(&f)?)?;
        if !err.is_finite() {
            return Err(Error::NonFinite("CP-ALS reconstruction error".into()));
        }
        trace.push(err);
        if (prev - err).abs() <= tol {
            break;
        }
        prev = err;
    }
    Ok((CpFactors::new(weights, factors)?, trace))
}

/// What [`count_params`] counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamKind {
    Tucker(Vec<usize>),
    Cp(usize),
    Full,
}

/// Number of free parameters of a coefficient tensor of the given shape
/// under a Tucker, CP or unstructured model, after removing the
/// non-identifiable rotations.
pub fn count_params(shape: &[usize], kind: &ParamKind) -> Result<u64> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("invalid shape {shape:?}")));
    }
    let full: u64 = shape.iter().map(|&n| n as u64).product();
    let d = shape.len() as u64;
    let sum_i: u64 = shape.iter().map(|&n| n as u64).sum();
    match kind {
        ParamKind::Full => Ok(full),
        ParamKind::Cp(r) => {
            let r = *r as u64;
            if r == 0 {
                return Err(Error::InvalidRank("CP rank must be at least 1".into()));
            }
            match shape.len() {
                1 => Ok(full),
                2 => {
                    let min = shape.iter().min().copied().unwrap() as u64;
                    if r > min {
                        return Err(Error::InvalidRank(format!(
                            "matrix CP rank {r} exceeds {min}"
                        )));
                    }
                    Ok(r * sum_i - r * r)
                }
                _ => Ok(r * (sum_i - d + 1)),
            }
        }
        ParamKind::Tucker(ranks) => {
            check_ranks(shape, ranks)?;
            let ranks: Vec<u64> = ranks.iter().map(|&r| r as u64).collect();
            if shape.len() == 1 {
                return Ok(full);
            }
            let ir: u64 = shape.iter().zip(&ranks).map(|(&i, &r)| i as u64 * r).sum();
            let r_prod: u64 = ranks.iter().product();
            let r_sq: u64 = ranks.iter().map(|r| r * r).sum();
            Ok(ir + r_prod - r_sq)
        }
    }
}
