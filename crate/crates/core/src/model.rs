//! Fitted tensor-regression models and their JSON form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decomp::{CpFactors, TuckerFactors};
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::io::MatrixJson;
use crate::tensor::{dot, DenseTensor, StandardizationTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "na0ct2")]
    Na0ct2,
    #[serde(rename = "tucker")]
    Tucker,
    #[serde(rename = "tucker-l1")]
    TuckerL1,
    #[serde(rename = "cp")]
    Cp,
    #[serde(rename = "cp-l2")]
    CpL2,
    #[serde(rename = "vec")]
    Vec,
    #[serde(rename = "vec-l1")]
    VecL1,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Na0ct2,
        Method::Tucker,
        Method::TuckerL1,
        Method::Cp,
        Method::CpL2,
        Method::Vec,
        Method::VecL1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Na0ct2 => "na0ct2",
            Method::Tucker => "tucker",
            Method::TuckerL1 => "tucker-l1",
            Method::Cp => "cp",
            Method::CpL2 => "cp-l2",
            Method::Vec => "vec",
            Method::VecL1 => "vec-l1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fitted model. Coefficients live on the standardized predictor scale;
/// [`FitResult::predict`] applies the stored transform first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct FitResult {
    pub family: Family,
    pub method: Method,
    pub coefficients: DenseTensor,
    pub intercept: f64,
    /// Windowed average before thresholding (noise-augmented fits only).
    pub averaged: Option<DenseTensor>,
    pub tucker: Option<TuckerFactors>,
    pub cp: Option<CpFactors>,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub standardization: StandardizationTransform,
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    family: Family,
    method: Method,
    shape: Vec<usize>,
    coefficients: Vec<f64>,
    intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    averaged: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    core: Option<DenseTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<MatrixJson>>,
    standardization: StandardizationTransform,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    config: serde_json::Value,
}

impl From<FitResult> for ModelJson {
    fn from(f: FitResult) -> Self {
        let (core, weights, factors) = match (f.tucker, f.cp) {
            (Some(t), _) => (Some(t.core), None, Some(t.factors)),
            (None, Some(c)) => (None, Some(c.weights), Some(c.factors)),
            (None, None) => (None, None, None),
        };
        Self {
            family: f.family,
            method: f.method,
            shape: f.coefficients.shape().to_vec(),
            coefficients: f.coefficients.into_data(),
            intercept: f.intercept,
            averaged: f.averaged.map(DenseTensor::into_data),
            core,
            weights,
            factors: factors.map(|fs| fs.iter().map(MatrixJson::from).collect()),
            standardization: f.standardization,
            trace: f.trace,
            iterations: f.iterations,
            converged: f.converged,
            config: f.config,
        }
    }
}

impl TryFrom<ModelJson> for FitResult {
    type Error = Error;

    fn try_from(m: ModelJson) -> Result<Self> {
        let coefficients = DenseTensor::new(m.shape.clone(), m.coefficients)?;
        let averaged = m.averaged.map(|a| DenseTensor::new(m.shape.clone(), a)).transpose()?;
        if m.standardization.means.shape() != m.shape.as_slice() || m.standardization.sds.shape() != m.shape.as_slice() {
            return Err(Error::Shape("standardization does not match the coefficient shape".into()));
        }
        let factors = m
            .factors
            .map(|fs| fs.into_iter().map(DMatrix::try_from).collect::<Result<Vec<_>>>())
            .transpose()?;
        let (tucker, cp) = match (m.core, m.weights, factors) {
            (Some(core), None, Some(f)) => (Some(TuckerFactors::new(core, f)?), None),
            (None, Some(w), Some(f)) => (None, Some(CpFactors::new(w, f)?)),
            (None, None, None) => (None, None),
            _ => return Err(Error::Shape("model has inconsistent core/weights/factors fields".into())),
        };
        Ok(Self {
            family: m.family,
            method: m.method,
            coefficients,
            intercept: m.intercept,
            averaged,
            tucker,
            cp,
            trace: m.trace,
            iterations: m.iterations,
            converged: m.converged,
            standardization: m.standardization,
            config: m.config,
        })
    }
}

impl FitResult {
    pub fn shape(&self) -> &[usize] {
        self.coefficients.shape()
    }

    /// Linear predictor `<standardize(X), B> + intercept`.
    pub fn linear_predictor(&self, x: &DenseTensor) -> Result<f64> {
        if x.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "predictor shape {:?}, model shape {:?}",
                x.shape(),
                self.shape()
            )));
        }
        let z = self.standardization.apply(x)?;
        Ok(dot(z.data(), self.coefficients.data()) + self.intercept)
    }

    /// Mean response `b'(theta)` per predictor.
    pub fn predict(&self, xs: &[DenseTensor]) -> Result<Vec<f64>> {
        xs.iter()
            .map(|x| self.linear_predictor(x).map(|t| self.family.mean(t)))
            .collect()
    }

    /// Residual variance `sum (y - yhat)^2 / n` on `ds`: the gaussian
    /// dispersion, which plays no part in the fit. `None` for the other
    /// families, whose dispersion is fixed at 1.
    pub fn dispersion(&self, ds: &crate::tensor::TensorDataset) -> Result<Option<f64>> {
        if self.family != Family::Gaussian || ds.is_empty() {
            return Ok(None);
        }
        let pred = self.predict(ds.predictors())?;
        let ss: f64 = pred.iter().zip(ds.responses()).map(|(p, y)| (y - p) * (y - p)).sum();
        Ok(Some(ss / ds.len() as f64))
    }

    /// Coefficients mapped to the raw (unstandardized) predictor scale.
    pub fn raw_coefficients(&self) -> Result<DenseTensor> {
        self.standardization.to_raw_coefficients(&self.coefficients)
    }
}

/// Stacks vectorized predictors as design rows, with a leading column of
/// ones when `intercept` is set.
pub(crate) fn design_matrix(xs: &[DenseTensor], intercept: bool) -> DMatrix<f64> {
    let p = xs.first().map_or(0, DenseTensor::len);
    let off = usize::from(intercept);
    let mut m = DMatrix::zeros(xs.len(), p + off);
    for (i, x) in xs.iter().enumerate() {
        if intercept {
            m[(i, 0)] = 1.0;
        }
        for (j, &v) in x.data().iter().enumerate() {
            m[(i, j + off)] = v;
        }
    }
    m
}

/// Splits a coefficient vector from [`design_matrix`] into intercept and
/// tensor part.
pub(crate) fn split_intercept(beta: &[f64], intercept: bool) -> (f64, &[f64]) {
    if intercept {
        (beta[0], &beta[1..])
    } else {
        (0.0, beta)
    }
}
