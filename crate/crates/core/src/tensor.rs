//! Dense tensors stored in vectorization order (first index fastest) and the
//! basic multilinear operations on them: matricization, folding, mode
//! products, inner and outer products.
//!
//! Indices in the public `vec_index` helper are 1-based to match the usual
//! mathematical notation; everything else works with 0-based offsets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Family;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for DenseTensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        DenseTensor::new(raw.shape, raw.data)
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; shape.len()];
        for k in 0..t.data.len() {
            t.data[k] = f(&idx);
            increment(&mut idx, shape);
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element at a 0-based multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let k = self.offset(idx);
        self.data[k] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut k = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            debug_assert!(i < n);
            k += i * stride;
            stride *= n;
        }
        k
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_shape(self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_shape(self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor must have at least one mode".into()));
    }
    if let Some(d) = shape.iter().position(|&n| n == 0) {
        return Err(Error::Shape(format!("mode {} has size 0", d + 1)));
    }
    Ok(())
}

fn check_same_shape(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// Advances a 0-based multi-index in vectorization order.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

fn check_mode(mode: usize, order: usize) -> Result<()> {
    if mode >= order {
        return Err(Error::InvalidMode { mode: mode + 1, order });
    }
    Ok(())
}

/// 1-based linear position of a 1-based multi-index.
pub fn vec_index(multi_index: &[usize], shape: &[usize]) -> Result<usize> {
    if multi_index.len() != shape.len() {
        return Err(Error::Shape(format!(
            "index has {} modes, shape has {}",
            multi_index.len(),
            shape.len()
        )));
    }
    let mut pos = 1;
    let mut stride = 1;
    for (d, (&i, &n)) in multi_index.iter().zip(shape).enumerate() {
        if i < 1 || i > n {
            return Err(Error::IndexOutOfRange { mode: d + 1, index: i, size: n });
        }
        pos += (i - 1) * stride;
        stride *= n;
    }
    Ok(pos)
}

pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.data.clone()
}

/// Mode-`mode` matricization (0-based mode): an `I_d x prod_{k!=d} I_k`
/// matrix whose column index runs over the remaining modes with the first
/// of them varying fastest.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(mode, t.order())?;
    let (lo_n, n_d, hi_n) = split_dims(&t.shape, mode);
    let mut m = DMatrix::zeros(n_d, lo_n * hi_n);
    for hi in 0..hi_n {
        for i in 0..n_d {
            let base = (hi * n_d + i) * lo_n;
            for lo in 0..lo_n {
                m[(i, lo + hi * lo_n)] = t.data[base + lo];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`matricize`].
pub fn fold(m: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    validate_shape(shape)?;
    check_mode(mode, shape.len())?;
    let (lo_n, n_d, hi_n) = split_dims(shape, mode);
    if m.nrows() != n_d || m.ncols() != lo_n * hi_n {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, mode-{} unfolding of {:?} is {}x{}",
            m.nrows(),
            m.ncols(),
            mode + 1,
            shape,
            n_d,
            lo_n * hi_n
        )));
    }
    let mut data = vec![0.0; n_d * lo_n * hi_n];
    for hi in 0..hi_n {
        for i in 0..n_d {
            let base = (hi * n_d + i) * lo_n;
            for lo in 0..lo_n {
                data[base + lo] = m[(i, lo + hi * lo_n)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

fn split_dims(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let lo: usize = shape[..mode].iter().product();
    let hi: usize = shape[mode + 1..].iter().product();
    (lo, shape[mode], hi)
}

/// `t x_mode a` for `a` of shape `J x I_mode`.
pub fn mode_product(t: &DenseTensor, a: &DMatrix<f64>, mode: usize) -> Result<DenseTensor> {
    check_mode(mode, t.order())?;
    let (lo_n, n_d, hi_n) = split_dims(&t.shape, mode);
    if a.ncols() != n_d {
        return Err(Error::Shape(format!(
            "matrix has {} columns, mode {} has size {}",
            a.ncols(),
            mode + 1,
            n_d
        )));
    }
    let j_n = a.nrows();
    let mut shape = t.shape.clone();
    shape[mode] = j_n;
    let mut out = vec![0.0; lo_n * j_n * hi_n];
    for hi in 0..hi_n {
        for i in 0..n_d {
            let src = &t.data[(hi * n_d + i) * lo_n..(hi * n_d + i + 1) * lo_n];
            for j in 0..j_n {
                let w = a[(j, i)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(hi * j_n + j) * lo_n..(hi * j_n + j + 1) * lo_n];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
    DenseTensor::new(shape, out)
}

/// Applies `t x_1 m_1 x_2 ... x_D m_D`; `transpose` uses `m_d^T` instead.
pub fn multi_mode_product(t: &DenseTensor, mats: &[DMatrix<f64>], transpose: bool) -> Result<DenseTensor> {
    if mats.len() != t.order() {
        return Err(Error::Shape(format!(
            "{} matrices for a tensor of order {}",
            mats.len(),
            t.order()
        )));
    }
    let mut out = t.clone();
    for (d, m) in mats.iter().enumerate() {
        out = if transpose {
            mode_product(&out, &m.transpose(), d)?
        } else {
            mode_product(&out, m, d)?
        };
    }
    Ok(out)
}

pub fn inner(x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    check_same_shape(x, y)?;
    Ok(dot(&x.data, &y.data))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outer product `a1 o a2 o ... o aD`.
pub fn outer_rank1(vectors: &[Vec<f64>]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("outer product of zero vectors".into()));
    }
    if vectors.iter().any(|v| v.is_empty()) {
        return Err(Error::InvalidArgument("outer product with an empty vector".into()));
    }
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let mut data = vec![1.0];
    for v in vectors {
        let mut next = Vec::with_capacity(data.len() * v.len());
        for &a in v {
            next.extend(data.iter().map(|&x| x * a));
        }
        data = next;
    }
    DenseTensor::new(shape, data)
}

/// Predictors paired with scalar responses under a declared family.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    predictors: Vec<DenseTensor>,
    responses: Vec<f64>,
    family: Family,
}

impl TensorDataset {
    pub fn new(predictors: Vec<DenseTensor>, responses: Vec<f64>, family: Family) -> Result<Self> {
        if predictors.len() != responses.len() {
            return Err(Error::Shape(format!(
                "{} predictors but {} responses",
                predictors.len(),
                responses.len()
            )));
        }
        if let Some(first) = predictors.first() {
            if let Some(k) = predictors.iter().position(|p| p.shape != first.shape) {
                return Err(Error::Shape(format!(
                    "predictor {} has shape {:?}, expected {:?}",
                    k, predictors[k].shape, first.shape
                )));
            }
        }
        for (i, &y) in responses.iter().enumerate() {
            family
                .check_response(y)
                .map_err(|e| e.context(format!("response {i}")))?;
        }
        Ok(Self {
            predictors,
            responses,
            family,
        })
    }

    pub fn predictors(&self) -> &[DenseTensor] {
        &self.predictors
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Shape shared by the predictors, `None` for an empty dataset.
    pub fn shape(&self) -> Option<&[usize]> {
        self.predictors.first().map(|p| p.shape())
    }

    /// Row-major design with one row per observation (vectorized predictor).
    pub fn design_rows(&self) -> Vec<Vec<f64>> {
        self.predictors.iter().map(vectorize).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            predictors: rows.iter().map(|&i| self.predictors[i].clone()).collect(),
            responses: rows.iter().map(|&i| self.responses[i]).collect(),
            family: self.family,
        }
    }
}

/// Per-position centering and scaling learned from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationTransform {
    pub means: DenseTensor,
    pub sds: DenseTensor,
}

impl StandardizationTransform {
    pub fn identity(shape: &[usize]) -> Result<Self> {
        let means = DenseTensor::zeros(shape)?;
        let sds = DenseTensor::new(shape.to_vec(), vec![1.0; means.len()])?;
        Ok(Self { means, sds })
    }

    pub fn apply(&self, t: &DenseTensor) -> Result<DenseTensor> {
        check_same_shape(t, &self.means)?;
        let data = t
            .data
            .iter()
            .zip(&self.means.data)
            .zip(&self.sds.data)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        DenseTensor::new(t.shape.clone(), data)
    }

    /// Maps a coefficient tensor fitted on standardized predictors back to
    /// the raw predictor scale (the intercept shift is not included).
    pub fn to_raw_coefficients(&self, b: &DenseTensor) -> Result<DenseTensor> {
        check_same_shape(b, &self.sds)?;
        let data = b.data.iter().zip(&self.sds.data).map(|(x, s)| x / s).collect();
        DenseTensor::new(b.shape.clone(), data)
    }
}

/// Centers and scales each predictor position to sample mean 0 and sample
/// standard deviation 1 (n-1 denominator). Constant positions are only
/// centered.
pub fn standardize(ds: &TensorDataset) -> Result<(TensorDataset, StandardizationTransform)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardization needs at least 2 observations, got {n}"
        )));
    }
    let shape = ds.shape().expect("non-empty").to_vec();
    let p: usize = shape.iter().product();
    let mut means = vec![0.0; p];
    for x in ds.predictors() {
        for (m, v) in means.iter_mut().zip(x.data()) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut sds = vec![0.0; p];
    for x in ds.predictors() {
        for ((s, v), m) in sds.iter_mut().zip(x.data()).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for (s, m) in sds.iter_mut().zip(&means) {
        *s = (*s / (n - 1) as f64).sqrt();
        if *s <= 16.0 * f64::EPSILON * m.abs().max(1.0) {
            *s = 1.0;
        }
    }
    let transform = StandardizationTransform {
        means: DenseTensor::new(shape.clone(), means)?,
        sds: DenseTensor::new(shape, sds)?,
    };
    let predictors = ds
        .predictors()
        .iter()
        .map(|x| transform.apply(x))
        .collect::<Result<Vec<_>>>()?;
    let out = TensorDataset {
        predictors,
        responses: ds.responses.clone(),
        family: ds.family,
    };
    Ok((out, transform))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..n).map(|k| k as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn vec_index_small_cases() {
        assert_eq!(vec_index(&[1, 1, 1], &[3, 4, 5]).unwrap(), 1);
        assert_eq!(vec_index(&[2, 1], &[2, 2]).unwrap(), 2);
        assert_eq!(vec_index(&[1, 2], &[2, 2]).unwrap(), 3);
    }

    #[test]
    fn vec_index_is_a_bijection() {
        let shape = [3, 4, 5];
        let mut seen = vec![false; 60];
        for i in 1..=3 {
            for j in 1..=4 {
                for k in 1..=5 {
                    let p = vec_index(&[i, j, k], &shape).unwrap();
                    assert!(!seen[p - 1]);
                    seen[p - 1] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn vec_index_names_offending_mode() {
        match vec_index(&[1, 5, 1], &[3, 4, 5]) {
            Err(Error::IndexOutOfRange { mode, index, size }) => {
                assert_eq!((mode, index, size), (2, 5, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(vec_index(&[0, 1], &[2, 2]).is_err());
    }

    #[test]
    fn vectorize_two_by_two() {
        // t[1,1]=a, t[2,1]=b, t[1,2]=c, t[2,2]=d
        let t = DenseTensor::from_fn(&[2, 2], |i| match (i[0], i[1]) {
            (0, 0) => 1.0,
            (1, 0) => 2.0,
            (0, 1) => 3.0,
            _ => 4.0,
        })
        .unwrap();
        assert_eq!(vectorize(&t), vec![1.0, 2.0, 3.0, 4.0]);
        let v = DenseTensor::new(vec![3], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(vectorize(&v), vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn matricize_matrix_cases() {
        let t = seq(&[2, 3]);
        let m1 = matricize(&t, 0).unwrap();
        let m2 = matricize(&t, 1).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(m1[(i, j)], t.get(&[i, j]));
                assert_eq!(m2[(j, i)], t.get(&[i, j]));
            }
        }
        assert!(matches!(matricize(&t, 2), Err(Error::InvalidMode { .. })));
    }

    #[test]
    fn fold_single_row() {
        let m = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let t = fold(&m, 0, &[1, 4]).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(fold(&m, 0, &[2, 2]).is_err());
    }

    #[test]
    fn mode_product_identity_and_vector_case() {
        let t = seq(&[3, 4, 5]);
        let id = DMatrix::identity(4, 4);
        assert_eq!(mode_product(&t, &id, 1).unwrap(), t);

        let v = DenseTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
        let out = mode_product(&v, &a, 0).unwrap();
        assert_eq!(out.data(), &[4.0, 4.0]);

        let bad = DMatrix::zeros(2, 3);
        assert!(mode_product(&t, &bad, 1).is_err());
    }

    #[test]
    fn inner_basic() {
        let x = seq(&[2, 3]);
        let z = DenseTensor::zeros(&[2, 3]).unwrap();
        assert_eq!(inner(&x, &z).unwrap(), 0.0);
        assert_eq!(inner(&x, &x).unwrap(), (1..=6).map(|k| (k * k) as f64).sum::<f64>());
        assert!(inner(&x, &seq(&[3, 2])).is_err());
    }

    #[test]
    fn outer_cases() {
        let t = outer_rank1(&[vec![1.0; 2], vec![1.0; 3]]).unwrap();
        assert!(t.data().iter().all(|&x| x == 1.0));
        let a = vec![1.0, 2.0];
        let b = vec![3.0, 4.0, 5.0];
        let m = outer_rank1(&[a.clone(), b.clone()]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(m.get(&[i, j]), a[i] * b[j]);
            }
        }
        assert!(outer_rank1(&[]).is_err());
        assert!(outer_rank1(&[vec![]]).is_err());
    }

    #[test]
    fn standardize_constant_position_is_centered_only() {
        let xs: Vec<DenseTensor> = (0..5)
            .map(|i| DenseTensor::new(vec![2], vec![3.0, i as f64]).unwrap())
            .collect();
        let ds = TensorDataset::new(xs, vec![0.0; 5], Family::Gaussian).unwrap();
        let (out, tr) = standardize(&ds).unwrap();
        assert_eq!(tr.sds.data()[0], 1.0);
        assert!(out.predictors().iter().all(|x| x.data()[0] == 0.0));
        let sd1 = tr.sds.data()[1];
        assert!((sd1 - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn standardize_needs_two_rows() {
        let ds = TensorDataset::new(vec![seq(&[2])], vec![1.0], Family::Gaussian).unwrap();
        assert!(standardize(&ds).is_err());
    }

    #[test]
    fn dataset_validates() {
        assert!(TensorDataset::new(vec![seq(&[2])], vec![], Family::Gaussian).is_err());
        assert!(TensorDataset::new(vec![seq(&[2]), seq(&[3])], vec![0.0, 0.0], Family::Gaussian).is_err());
        assert!(TensorDataset::new(vec![seq(&[2])], vec![0.5], Family::Binomial).is_err());
        assert!(TensorDataset::new(vec![seq(&[2])], vec![-1.0], Family::Poisson).is_err());
        assert!(TensorDataset::new(vec![seq(&[2])], vec![2.0], Family::Poisson).is_ok());
    }

    #[test]
    fn standardize_recomputed_moments() {
        let xs: Vec<DenseTensor> = (0..7)
            .map(|i| DenseTensor::from_fn(&[2, 2], |ix| ((i * 7 + ix[0] * 3 + ix[1] * 5) % 11) as f64 * 0.3).unwrap())
            .collect();
        let ds = TensorDataset::new(xs, vec![0.0; 7], Family::Gaussian).unwrap();
        let (out, _) = standardize(&ds).unwrap();
        for k in 0..4 {
            let col: Vec<f64> = out.predictors().iter().map(|x| x.data()[k]).collect();
            let m = col.iter().sum::<f64>() / 7.0;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-12 && (v.sqrt() - 1.0).abs() < 1e-12);
        }
        let (again, tr) = standardize(&out).unwrap();
        assert!(tr.means.data().iter().all(|m| m.abs() < 1e-12));
        assert!(tr.sds.data().iter().all(|s| (s - 1.0).abs() < 1e-12));
        for (a, b) in again.predictors().iter().zip(out.predictors()) {
            assert!(a.sub(b).unwrap().data().iter().all(|d| d.abs() < 1e-12));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Every multi-index of `shape` with the first index fastest,
        /// produced by nested counting independent of the crate helpers.
        fn all_indices(shape: &[usize]) -> Vec<Vec<usize>> {
            let mut out = vec![vec![]];
            for &n in shape {
                let mut next = Vec::new();
                for i in 0..n {
                    for prefix in &out {
                        let mut v: Vec<usize> = prefix.clone();
                        v.push(i);
                        next.push(v);
                    }
                }
                out = next;
            }
            // `out` now has the last index fastest; reorder.
            out.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
            out
        }

        fn offset(idx: &[usize], shape: &[usize]) -> usize {
            let mut pos = 0;
            let mut stride = 1;
            for (i, n) in idx.iter().zip(shape) {
                pos += i * stride;
                stride *= n;
            }
            pos
        }

        fn int_tensor() -> impl Strategy<Value = DenseTensor> {
            proptest::collection::vec(1usize..=4, 1..=4).prop_flat_map(|shape| {
                let n: usize = shape.iter().product();
                proptest::collection::vec(-5i32..=5, n)
                    .prop_map(move |v| DenseTensor::new(shape.clone(), v.into_iter().map(f64::from).collect()).unwrap())
            })
        }

        fn int_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
            proptest::collection::vec(-4i32..=4, rows * cols)
                .prop_map(move |v| DMatrix::from_iterator(rows, cols, v.into_iter().map(f64::from)))
        }

        fn with_mode_matrix() -> impl Strategy<Value = (DenseTensor, usize, DMatrix<f64>)> {
            int_tensor().prop_flat_map(|t| {
                let order = t.order();
                (Just(t), 0..order).prop_flat_map(|(t, d)| {
                    let i_d = t.shape()[d];
                    (Just(t), Just(d), (1usize..=4).prop_flat_map(move |j| int_matrix(j, i_d)))
                })
            })
        }

        proptest! {
            #[test]
            fn vectorize_matches_nested_loops(t in int_tensor()) {
                let idx = all_indices(t.shape());
                let v = vectorize(&t);
                for (k, ix) in idx.iter().enumerate() {
                    prop_assert_eq!(v[k], t.get(ix));
                    let one: Vec<usize> = ix.iter().map(|i| i + 1).collect();
                    prop_assert_eq!(vec_index(&one, t.shape()).unwrap(), k + 1);
                }
            }

            #[test]
            fn matricize_matches_oracle_and_folds_back(t in int_tensor()) {
                let shape = t.shape().to_vec();
                for d in 0..shape.len() {
                    let m = matricize(&t, d).unwrap();
                    let rest: Vec<usize> = shape.iter().enumerate().filter(|(k, _)| *k != d).map(|(_, n)| *n).collect();
                    for ix in all_indices(&shape) {
                        let others: Vec<usize> = ix.iter().enumerate().filter(|(k, _)| *k != d).map(|(_, i)| *i).collect();
                        prop_assert_eq!(m[(ix[d], offset(&others, &rest))], t.get(&ix));
                    }
                    prop_assert_eq!(&fold(&m, d, &shape).unwrap(), &t);
                }
            }

            #[test]
            fn mode_product_matches_oracle((t, d, a) in with_mode_matrix()) {
                let y = mode_product(&t, &a, d).unwrap();
                let mut out_shape = t.shape().to_vec();
                out_shape[d] = a.nrows();
                prop_assert_eq!(y.shape(), out_shape.as_slice());
                for ix in all_indices(&out_shape) {
                    let mut expect = 0.0;
                    for i in 0..t.shape()[d] {
                        let mut src = ix.clone();
                        src[d] = i;
                        expect += a[(ix[d], i)] * t.get(&src);
                    }
                    prop_assert_eq!(y.get(&ix), expect);
                }
                // unfolding identity
                prop_assert_eq!(matricize(&y, d).unwrap(), &a * matricize(&t, d).unwrap());
            }

            #[test]
            fn mode_products_commute_and_compose((t, d, a) in with_mode_matrix(), b in int_matrix(2, 4)) {
                // same mode: (X x_d A) x_d B = X x_d (BA)
                let bb = b.columns(0, a.nrows()).into_owned();
                let lhs = mode_product(&mode_product(&t, &a, d).unwrap(), &bb, d).unwrap();
                prop_assert_eq!(lhs, mode_product(&t, &(&bb * &a), d).unwrap());
                // distinct modes commute
                if t.order() > 1 {
                    let e = (d + 1) % t.order();
                    let c = DMatrix::from_fn(3, t.shape()[e], |i, j| (i as f64) - (j as f64));
                    let ac = mode_product(&mode_product(&t, &a, d).unwrap(), &c, e).unwrap();
                    let ca = mode_product(&mode_product(&t, &c, e).unwrap(), &a, d).unwrap();
                    prop_assert_eq!(ac, ca);
                }
            }

            #[test]
            fn inner_matches_oracle_and_outer_contraction(t in int_tensor()) {
                let u = t.scale(-1.0).add(&DenseTensor::from_fn(t.shape(), |ix| ix.iter().sum::<usize>() as f64).unwrap()).unwrap();
                let expect: f64 = all_indices(t.shape()).iter().map(|ix| t.get(ix) * u.get(ix)).sum();
                prop_assert_eq!(inner(&t, &u).unwrap(), expect);
                // <X, a1 o ... o aD> = X x_1 a1' ... x_D aD'
                let vecs: Vec<Vec<f64>> = t.shape().iter().map(|&n| (0..n).map(|i| i as f64 - 1.0).collect()).collect();
                let rank1 = outer_rank1(&vecs).unwrap();
                let rows: Vec<DMatrix<f64>> = vecs.iter().map(|v| DMatrix::from_row_slice(1, v.len(), v)).collect();
                let mut c = t.clone();
                for (d, r) in rows.iter().enumerate() {
                    c = mode_product(&c, r, d).unwrap();
                }
                prop_assert_eq!(c.len(), 1);
                prop_assert_eq!(inner(&t, &rank1).unwrap(), c.data()[0]);
            }
        }
    }
}
