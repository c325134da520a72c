//! Simulation designs with a structured true coefficient tensor, the
//! comparison metrics and a seeded, repeat-parallel benchmark runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BlockRelaxConfig};
use crate::decomp::hosvd_full;
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::model::{FitResult, Method};
use crate::na::{self, core_zero_count, NaConfig};
use crate::rng::{self, Domain};
use crate::tensor::{DenseTensor, TensorDataset};

/// Number of distinct values in the true coefficient tensor.
pub const BASE_LEN: usize = 8;

fn family_tag(family: Family) -> u64 {
    match family {
        Family::Gaussian => 0,
        Family::Binomial => 1,
        Family::Poisson => 2,
    }
}

/// Zero-count threshold used in the comparison tables: 0.005 for gaussian,
/// 0.05 otherwise.
pub fn zero_threshold(family: Family) -> f64 {
    match family {
        Family::Gaussian => 0.005,
        _ => 0.05,
    }
}

/// Fills `shape` by repeating `base` in vectorization order.
pub fn tile_base(base: &[f64], shape: &[usize]) -> Result<DenseTensor> {
    let p: usize = shape.iter().product();
    if base.is_empty() || p % base.len() != 0 {
        return Err(Error::Shape(format!(
            "{} base values do not tile a tensor with {} entries",
            base.len(),
            p
        )));
    }
    DenseTensor::new(shape.to_vec(), (0..p).map(|k| base[k % base.len()]).collect())
}

/// True coefficient tensor: 8 draws (N(0,1), or U(0, 0.3) for poisson)
/// tiled over the shape. Verified to have exactly two HOSVD core entries
/// above 1e-8.
pub fn make_true_b(family: Family, seed: u64, shape: &[usize]) -> Result<DenseTensor> {
    let mut r = rng::stream(seed, Domain::TrueB, &[family_tag(family)]);
    let base: Vec<f64> = match family {
        Family::Poisson => {
            let u = Uniform::new(0.0, 0.3).expect("valid range");
            (0..BASE_LEN).map(|_| u.sample(&mut r)).collect()
        }
        _ => (0..BASE_LEN).map(|_| r.sample(StandardNormal)).collect(),
    };
    let b = tile_base(&base, shape)?;
    let core = hosvd_full(&b)?.core;
    let nonzero = core.data().iter().filter(|g| g.abs() > 1e-8).count();
    if nonzero != 2 {
        return Err(Error::Construction(format!(
            "true coefficient tensor for seed {seed} has {nonzero} core entries above 1e-8, expected 2"
        )));
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub family: Family,
    pub shape: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub b_seed: u64,
    pub methods: Vec<Method>,
    pub na: NaConfig,
    pub block: BlockRelaxConfig,
    pub repeats: usize,
    pub seed: u64,
}

impl SimDesign {
    /// Reduced-length design: 10 repeats and shortened noise-augmented runs.
    pub fn desk(family: Family) -> Self {
        let n_train = match family {
            Family::Poisson => 200,
            _ => 300,
        };
        Self {
            family,
            shape: vec![4, 4, 4],
            n_train,
            n_test: 200,
            b_seed: 1,
            methods: Method::ALL.to_vec(),
            na: NaConfig { intercept: true, ..NaConfig::desk(family) },
            block: BlockRelaxConfig::for_family(family),
            repeats: 10,
            seed: 1,
        }
    }

    /// Full-length design: 200 repeats and full iteration counts.
    pub fn full(family: Family) -> Self {
        Self {
            na: NaConfig { intercept: true, ..NaConfig::full(family) },
            repeats: 200,
            ..Self::desk(family)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_test < 1 || self.repeats < 1 {
            return Err(Error::InvalidArgument(
                "need n_train >= 2, n_test >= 1 and repeats >= 1".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        self.na.validate(&self.shape)?;
        Ok(())
    }
}

fn draw_predictor(family: Family, shape: &[usize], r: &mut impl Rng) -> DenseTensor {
    let p: usize = shape.iter().product();
    let data = match family {
        Family::Gaussian => (0..p).map(|_| r.sample(StandardNormal)).collect(),
        Family::Binomial => {
            let d = Normal::new(0.0, 0.25).expect("valid sd");
            (0..p).map(|_| d.sample(r)).collect()
        }
        Family::Poisson => {
            let d = Normal::new(0.1, 0.3).expect("valid sd");
            (0..p).map(|_| -2.0 * f64::abs(d.sample(r)) + 0.6).collect()
        }
    };
    DenseTensor::new(shape.to_vec(), data).expect("shape matches")
}

fn draw_response(family: Family, theta: f64, r: &mut impl Rng) -> f64 {
    match family {
        Family::Gaussian => theta + 0.5 * r.sample::<f64, _>(StandardNormal),
        Family::Binomial => {
            let p = family.mean(theta);
            f64::from(u8::from(Bernoulli::new(p).expect("probability").sample(r)))
        }
        Family::Poisson => Poisson::new(theta.exp()).expect("positive rate").sample(r),
    }
}

/// Draws `n` observations from the design's data-generating model.
pub fn draw_dataset(family: Family, b: &DenseTensor, n: usize, r: &mut impl Rng) -> Result<TensorDataset> {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_predictor(family, b.shape(), r);
        let theta = crate::tensor::inner(&x, b)?;
        ys.push(draw_response(family, theta, r));
        xs.push(x);
    }
    TensorDataset::new(xs, ys, family)
}

/// Training set, test set and true tensor for one repeat.
pub fn gen_dataset(design: &SimDesign, repeat: usize) -> Result<(TensorDataset, TensorDataset, DenseTensor)> {
    let b = make_true_b(design.family, design.b_seed, &design.shape)?;
    let tag = family_tag(design.family);
    let mut tr = rng::stream(design.seed, Domain::TrainData, &[tag, repeat as u64]);
    let mut te = rng::stream(design.seed, Domain::TestData, &[tag, repeat as u64]);
    let train = draw_dataset(design.family, &b, design.n_train, &mut tr)?;
    let test = draw_dataset(design.family, &b, design.n_test, &mut te)?;
    Ok((train, test, b))
}

/// Mean absolute error (gaussian, poisson) or misclassification rate at a
/// 0.5 cutoff (binomial).
pub fn prediction_error(family: Family, predicted: &[f64], observed: &[f64]) -> f64 {
    let n = observed.len().max(1) as f64;
    match family {
        Family::Binomial => {
            predicted
                .iter()
                .zip(observed)
                .filter(|(&p, &y)| f64::from(u8::from(p > 0.5)) != y)
                .count() as f64
                / n
        }
        _ => predicted.iter().zip(observed).map(|(p, y)| (p - y).abs()).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub prediction_error: f64,
    /// Mean squared entry error of the raw-scale estimate.
    pub mse: f64,
    /// Full-rank core entries of the fitted (standardized-scale) tensor at
    /// or below the family threshold.
    pub zero_count: usize,
}

/// Metrics of one fitted model on a test set.
pub fn metrics(fitted: &FitResult, test: &TensorDataset, true_b: &DenseTensor, tau0: f64) -> Result<MetricRecord> {
    let pred = fitted.predict(test.predictors())?;
    let raw = fitted.raw_coefficients()?;
    let diff = raw.sub(true_b)?;
    Ok(MetricRecord {
        prediction_error: prediction_error(fitted.family, &pred, test.responses()),
        mse: diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64,
        zero_count: core_zero_count(&fitted.coefficients, tau0)?,
    })
}

pub fn fit_method(method: Method, train: &TensorDataset, design: &SimDesign, repeat: usize) -> Result<FitResult> {
    let repeat_seed = design.seed.wrapping_mul(1_000_003).wrapping_add(repeat as u64);
    match method {
        Method::Na0ct2 => na::fit(train, &NaConfig { seed: repeat_seed, ..design.na.clone() }),
        other => baselines::fit(other, train, &BlockRelaxConfig { seed: repeat_seed, ..design.block.clone() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_error: f64,
    pub sd_error: f64,
    /// MSE of the across-repeat mean estimate.
    pub mse_of_mean: f64,
    /// Mean of the per-repeat MSEs.
    pub mean_mse: f64,
    pub mean_zero_count: f64,
    pub failures: usize,
    pub nonconverged: usize,
    /// Per-repeat prediction errors, `None` for failed repeats.
    pub errors: Vec<Option<f64>>,
    pub zero_counts: Vec<Option<usize>>,
    pub failure_messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub family: Family,
    pub repeats: usize,
    pub seed: u64,
    pub zero_threshold: f64,
    pub methods: Vec<MethodSummary>,
}

struct Outcome {
    metrics: MetricRecord,
    raw: DenseTensor,
    converged: bool,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Runs every (method, repeat) pair. Repeats run in parallel; each draws
/// from its own random streams, so the report does not depend on thread
/// scheduling.
pub fn run_benchmark(design: &SimDesign) -> Result<BenchReport> {
    design.validate()?;
    let tau0 = zero_threshold(design.family);
    let true_b = make_true_b(design.family, design.b_seed, &design.shape)?;
    let jobs: Vec<(usize, usize)> = (0..design.repeats)
        .flat_map(|r| (0..design.methods.len()).map(move |m| (r, m)))
        .collect();
    let results: Vec<std::result::Result<Outcome, String>> = jobs
        .par_iter()
        .map(|&(r, m)| {
            let run = || -> Result<Outcome> {
                let (train, test, b) = gen_dataset(design, r)?;
                let fit = fit_method(design.methods[m], &train, design, r)?;
                Ok(Outcome {
                    metrics: metrics(&fit, &test, &b, tau0)?,
                    raw: fit.raw_coefficients()?,
                    converged: fit.converged,
                })
            };
            run().map_err(|e| format!("repeat {r}: {e}"))
        })
        .collect();

    let mut by_method: BTreeMap<usize, Vec<&std::result::Result<Outcome, String>>> = BTreeMap::new();
    for (&(_, m), res) in jobs.iter().zip(&results) {
        by_method.entry(m).or_default().push(res);
    }
    let methods = by_method
        .into_iter()
        .map(|(m, runs)| summarize(design.methods[m], &runs, &true_b))
        .collect();
    Ok(BenchReport {
        family: design.family,
        repeats: design.repeats,
        seed: design.seed,
        zero_threshold: tau0,
        methods,
    })
}

fn summarize(method: Method, runs: &[&std::result::Result<Outcome, String>], true_b: &DenseTensor) -> MethodSummary {
    let ok: Vec<&Outcome> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let errs: Vec<f64> = ok.iter().map(|o| o.metrics.prediction_error).collect();
    let (mean_error, sd_error) = mean_sd(&errs);
    let mse_of_mean = if ok.is_empty() {
        f64::NAN
    } else {
        let p = true_b.len();
        let mut avg = vec![0.0; p];
        for o in &ok {
            avg.iter_mut().zip(o.raw.data()).for_each(|(a, v)| *a += v);
        }
        avg.iter()
            .zip(true_b.data())
            .map(|(a, b)| {
                let d = a / ok.len() as f64 - b;
                d * d
            })
            .sum::<f64>()
            / p as f64
    };
    let (mean_mse, _) = mean_sd(&ok.iter().map(|o| o.metrics.mse).collect::<Vec<_>>());
    let (mean_zero_count, _) = mean_sd(&ok.iter().map(|o| o.metrics.zero_count as f64).collect::<Vec<_>>());
    MethodSummary {
        method,
        mean_error,
        sd_error,
        mse_of_mean,
        mean_mse,
        mean_zero_count,
        failures: runs.len() - ok.len(),
        nonconverged: ok.iter().filter(|o| !o.converged).count(),
        errors: runs.iter().map(|r| r.as_ref().ok().map(|o| o.metrics.prediction_error)).collect(),
        zero_counts: runs.iter().map(|r| r.as_ref().ok().map(|o| o.metrics.zero_count)).collect(),
        failure_messages: runs.iter().filter_map(|r| r.as_ref().err().cloned()).collect(),
    }
}

impl BenchReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Markdown table with one row per method.
    pub fn to_markdown(&self) -> String {
        let err_name = match self.family {
            Family::Binomial => "Misclassification",
            _ => "Mean |y - yhat|",
        };
        let mut s = String::new();
        let _ = writeln!(s, "Family: {}, repeats: {}, seed: {}\n", self.family.name(), self.repeats, self.seed);
        let _ = writeln!(
            s,
            "| Method | {err_name} (sd) | MSE of B (mean estimate) | MSE of B (per repeat) | Zeros at {} | Failures |",
            self.zero_threshold
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "| {} | {:.4} ({:.4}) | {:.6} | {:.6} | {:.2} | {} |",
                m.method, m.mean_error, m.sd_error, m.mse_of_mean, m.mean_mse, m.mean_zero_count, m.failures
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_base_gives_rank_one() {
        let b = tile_base(&[0.7; 8], &[4, 4, 4]).unwrap();
        let core = hosvd_full(&b).unwrap().core;
        assert_eq!(core.data().iter().filter(|g| g.abs() > 1e-8).count(), 1);
    }

    #[test]
    fn tiling_layout() {
        let base: Vec<f64> = (0..8).map(f64::from).collect();
        let b = tile_base(&base, &[4, 4, 4]).unwrap();
        for k in 0..64 {
            assert_eq!(b.data()[k], base[k % 8]);
        }
        assert!(tile_base(&base, &[3, 3]).is_err());
    }

    #[test]
    fn indicator_base_has_low_multilinear_rank() {
        let mut base = vec![0.0; 8];
        base[0] = 1.0;
        let b = tile_base(&base, &[4, 4, 4]).unwrap();
        let ranks: Vec<usize> = (0..3)
            .map(|d| crate::tensor::matricize(&b, d).unwrap().rank(1e-10))
            .collect();
        assert!(ranks[0] <= 1 && ranks[1] <= 2 && ranks[2] <= 1, "{ranks:?}");
    }

    #[test]
    fn true_b_has_two_core_entries() {
        let b = make_true_b(Family::Gaussian, 1, &[4, 4, 4]).unwrap();
        assert_eq!(core_zero_count(&b, 1e-8).unwrap(), 62);
        assert_eq!(core_zero_count(&b, 0.005).unwrap(), 62);
    }

    #[test]
    fn predictor_supports() {
        let b = make_true_b(Family::Poisson, 3, &[4, 4, 4]).unwrap();
        let mut r = rng::stream(1, Domain::TrainData, &[]);
        let ds = draw_dataset(Family::Poisson, &b, 200, &mut r).unwrap();
        assert!(ds.predictors().iter().all(|x| x.data().iter().all(|&v| v <= 0.6)));
    }

    #[test]
    fn prediction_error_rules() {
        assert_eq!(prediction_error(Family::Gaussian, &[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((prediction_error(Family::Poisson, &[1.0, 2.0, 0.5], &[2.0, 2.0, 0.0]) - 0.5).abs() < 1e-15);
        // 0.7 -> 1, 0.2 -> 0, 0.5 -> 0, 0.51 -> 1
        let e = prediction_error(Family::Binomial, &[0.7, 0.2, 0.5, 0.51], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(e, 0.5);
    }

    #[test]
    fn generation_is_deterministic() {
        let d = SimDesign::desk(Family::Binomial);
        let (a, b, _) = gen_dataset(&d, 3).unwrap();
        let (c, e, _) = gen_dataset(&d, 3).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, e);
        let (f, _, _) = gen_dataset(&d, 4).unwrap();
        assert_ne!(a, f);
    }

    #[test]
    fn linear_noise_sd_is_half() {
        let b = make_true_b(Family::Gaussian, 2, &[4, 4, 4]).unwrap();
        let mut r = rng::stream(5, Domain::TrainData, &[]);
        let ds = draw_dataset(Family::Gaussian, &b, 100_000, &mut r).unwrap();
        let res: Vec<f64> = ds
            .predictors()
            .iter()
            .zip(ds.responses())
            .map(|(x, y)| y - crate::tensor::inner(x, &b).unwrap())
            .collect();
        let m = res.iter().sum::<f64>() / res.len() as f64;
        let sd = (res.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (res.len() - 1) as f64).sqrt();
        assert!((sd / 0.5 - 1.0).abs() <= 0.02, "{sd}");
    }

    #[test]
    fn logistic_at_zero_signal_is_a_fair_coin() {
        let b = DenseTensor::zeros(&[4, 4, 4]).unwrap();
        let mut r = rng::stream(6, Domain::TrainData, &[]);
        let ds = draw_dataset(Family::Binomial, &b, 100_000, &mut r).unwrap();
        let p = ds.responses().iter().sum::<f64>() / ds.len() as f64;
        assert!((p - 0.5).abs() <= 0.03 * 0.5, "{p}");
    }

    #[test]
    fn true_b_check_holds_for_twenty_seeds() {
        for family in [Family::Gaussian, Family::Binomial, Family::Poisson] {
            for seed in 0..20 {
                let b = make_true_b(family, seed, &[4, 4, 4]).unwrap();
                let core = hosvd_full(&b).unwrap().core;
                assert_eq!(core.data().iter().filter(|g| g.abs() > 1e-8).count(), 2);
            }
        }
    }

    fn oracle_model(b: &DenseTensor, family: Family) -> FitResult {
        FitResult {
            family,
            method: Method::Vec,
            coefficients: b.clone(),
            intercept: 0.0,
            averaged: None,
            tucker: None,
            cp: None,
            trace: vec![],
            iterations: 0,
            converged: true,
            standardization: crate::tensor::StandardizationTransform::identity(b.shape()).unwrap(),
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn metrics_of_the_truth() {
        let b = make_true_b(Family::Gaussian, 1, &[4, 4, 4]).unwrap();
        let m = oracle_model(&b, Family::Gaussian);
        let xs = vec![DenseTensor::from_fn(&[4, 4, 4], |ix| ix[0] as f64 - ix[2] as f64).unwrap()];
        let y = vec![crate::tensor::inner(&xs[0], &b).unwrap()];
        let test = TensorDataset::new(xs, y, Family::Gaussian).unwrap();
        let rec = metrics(&m, &test, &b, 0.005).unwrap();
        assert_eq!(rec.mse, 0.0);
        assert_eq!(rec.zero_count, 62);
        assert!(rec.prediction_error <= 1e-12);
    }

    #[test]
    fn metrics_hand_computed() {
        let b = DenseTensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let m = oracle_model(&b, Family::Gaussian);
        let xs = vec![
            DenseTensor::new(vec![2], vec![1.0, 1.0]).unwrap(),
            DenseTensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
            DenseTensor::new(vec![2], vec![0.0, -1.0]).unwrap(),
        ];
        // predictions -1, 0.5, 2
        let test = TensorDataset::new(xs, vec![0.0, 0.5, 1.0], Family::Gaussian).unwrap();
        let truth = DenseTensor::new(vec![2], vec![0.0, -1.0]).unwrap();
        let rec = metrics(&m, &test, &truth, 0.005).unwrap();
        assert!((rec.prediction_error - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rec.mse, 1.0);
    }

    fn tiny_design(family: Family, methods: Vec<Method>, repeats: usize) -> SimDesign {
        SimDesign {
            n_train: 80,
            n_test: 30,
            methods,
            repeats,
            na: NaConfig { max_iter: 30, window: 10, ..SimDesign::desk(family).na },
            ..SimDesign::desk(family)
        }
    }

    #[test]
    fn single_repeat_report_equals_the_fit() {
        let d = tiny_design(Family::Gaussian, vec![Method::Vec], 1);
        let report = run_benchmark(&d).unwrap();
        let (train, test, b) = gen_dataset(&d, 0).unwrap();
        let fit = fit_method(Method::Vec, &train, &d, 0).unwrap();
        let rec = metrics(&fit, &test, &b, 0.005).unwrap();
        let s = report.method(Method::Vec).unwrap();
        assert_eq!(s.mean_error, rec.prediction_error);
        assert_eq!(s.mean_mse, rec.mse);
        assert_eq!(s.mse_of_mean, rec.mse);
        assert_eq!(s.mean_zero_count, rec.zero_count as f64);
        assert_eq!(s.sd_error, 0.0);
        assert_eq!(s.failures, 0);
    }

    #[test]
    fn report_is_independent_of_thread_count() {
        let d = tiny_design(Family::Binomial, vec![Method::Na0ct2, Method::Vec], 3);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| run_benchmark(&d)).unwrap();
        let b = wide.install(|| run_benchmark(&d)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let md = a.to_markdown();
        assert_eq!(md.lines().filter(|l| l.starts_with("| na0ct2") || l.starts_with("| vec")).count(), 2);
    }

    #[test]
    fn invalid_designs_rejected() {
        let mut d = SimDesign::desk(Family::Gaussian);
        d.repeats = 0;
        assert!(d.validate().is_err());
        let mut d = SimDesign::desk(Family::Gaussian);
        d.n_test = 0;
        assert!(run_benchmark(&d).is_err());
    }
}
