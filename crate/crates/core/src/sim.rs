//! Data-generating processes, Monte Carlo harness and summary metrics.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::dist;
use crate::error::{check_tau, Error, Result};
use crate::ivqr::{
    asymptotic_cov, confidence_intervals, estimate, estimate_naive_qr, CiRate,
    IvqrConfig, IvqrEstimate, KnotChoice,
};
use crate::model::{assemble_design_with, build_weight_matrix, Dataset};
use crate::ranktest::{rs_beta_test, rs_constancy_test, NullFit, RankTestConfig};
use crate::spline::SplineBasis;

/// Simulation designs. The SAR variants use constant coefficients
/// `gamma_1 = gamma_2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    /// Homoscedastic, `gamma_2(u) = 1 + sin(sqrt(2) pi u)`.
    Ex1Plvc,
    /// Errors scaled by `1 + 0.5 Z_1`, `gamma_2(u) = 0.5 u^2 - u + 1`.
    Ex2PlvcHetero,
    Ex1Sar,
    Ex2SarHetero,
}

impl Example {
    pub const ALL: [Example; 4] = [
        Example::Ex1Plvc,
        Example::Ex2PlvcHetero,
        Example::Ex1Sar,
        Example::Ex2SarHetero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Example::Ex1Plvc => "ex1_plvc",
            Example::Ex2PlvcHetero => "ex2_plvc_hetero",
            Example::Ex1Sar => "ex1_sar",
            Example::Ex2SarHetero => "ex2_sar_hetero",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    pub fn heteroscedastic(self) -> bool {
        matches!(self, Example::Ex2PlvcHetero | Example::Ex2SarHetero)
    }

    pub fn is_sar(self) -> bool {
        matches!(self, Example::Ex1Sar | Example::Ex2SarHetero)
    }

    /// Varying-coefficient counterpart of a SAR design and vice versa.
    pub fn counterpart(self) -> Self {
        match self {
            Example::Ex1Plvc => Example::Ex1Sar,
            Example::Ex2PlvcHetero => Example::Ex2SarHetero,
            Example::Ex1Sar => Example::Ex1Plvc,
            Example::Ex2SarHetero => Example::Ex2PlvcHetero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub example: Example,
    pub n: usize,
    pub tau: f64,
    pub rho: f64,
    pub beta: f64,
    /// Slope dial of `gamma_1(u) = 1 - 0.5 eta u`.
    pub eta: f64,
    pub weight_r: f64,
    /// Multiplier on the error term; zero gives a noiseless design.
    pub error_scale: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(example: Example, n: usize, tau: f64, seed: u64) -> Self {
        Self {
            example,
            n,
            tau,
            rho: 0.5,
            beta: 1.0,
            eta: 1.0,
            weight_r: 0.3,
            error_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if self.n < 20 {
            return Err(Error::InvalidData(alloc::format!("n = {} is below 20", self.n)));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Domain {
                name: "rho",
                value: self.rho,
                expected: "|rho| < 1",
            });
        }
        for (name, v) in [("beta", self.beta), ("eta", self.eta), ("error_scale", self.error_scale)] {
            if !v.is_finite() {
                return Err(Error::Domain {
                    name,
                    value: v,
                    expected: "finite",
                });
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> Truth {
        Truth {
            example: self.example,
            rho: self.rho,
            beta: self.beta,
            eta: self.eta,
        }
    }
}

/// True parameter values of a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub example: Example,
    pub rho: f64,
    pub beta: f64,
    pub eta: f64,
}

impl Truth {
    /// `gamma_l(u)`, `l` 0-based.
    pub fn gamma(&self, l: usize, u: f64) -> f64 {
        if self.example.is_sar() {
            return 1.0;
        }
        match (l, self.example) {
            (0, _) => 1.0 - 0.5 * self.eta * u,
            (_, Example::Ex1Plvc) => 1.0 + libm::sin(core::f64::consts::SQRT_2 * core::f64::consts::PI * u),
            _ => 0.5 * u * u - u + 1.0,
        }
    }
}

/// Support of the smoothing variable in every design.
pub const U_SUPPORT: (f64, f64) = (0.0, 2.0);

/// Draws replicates of one design. The weight matrix and the factorization
/// of `I - rho W` are computed once.
#[derive(Debug, Clone)]
pub struct DgpSampler {
    spec: DgpSpec,
    w: DMatrix<f64>,
    filter: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

impl DgpSampler {
    pub fn new(spec: DgpSpec) -> Result<Self> {
        spec.validate()?;
        let w = build_weight_matrix(spec.n, spec.weight_r)?;
        let filter = DMatrix::identity(spec.n, spec.n) - &w * spec.rho;
        let lu = filter.clone().lu();
        Ok(Self { spec, w, filter, lu })
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    /// Replicate `index`: ChaCha20 seeded with `spec.seed`, stream `index`.
    pub fn replicate(&self, index: u64) -> Result<Dataset> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(index);
        self.draw(&mut rng)
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        let spec = &self.spec;
        let n = spec.n;
        let truth = spec.truth();
        let uni = |lo: f64, hi: f64| Uniform::new(lo, hi).expect("valid uniform bounds");
        let u_dist = uni(U_SUPPORT.0, U_SUPPORT.1);
        let u: Vec<f64> = (0..n).map(|_| u_dist.sample(rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let (z1, z2): (Vec<f64>, Vec<f64>) = match spec.example {
            Example::Ex1Plvc | Example::Ex1Sar => {
                let d1 = uni(-2.0, 2.0);
                let d2 = Normal::new(1.0, 1.0).expect("valid normal");
                let a = (0..n).map(|_| d1.sample(rng)).collect();
                let b = (0..n).map(|_| d2.sample(rng)).collect();
                (a, b)
            }
            Example::Ex2PlvcHetero | Example::Ex2SarHetero => {
                let d2 = uni(-2.0, 2.0);
                let a = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                let b = (0..n).map(|_| d2.sample(rng)).collect();
                (a, b)
            }
        };
        let e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let shift = dist::normal_quantile(spec.tau);

        let rhs = DVector::from_fn(n, |i, _| {
            let eps = e[i] - shift;
            let scale = if spec.example.heteroscedastic() {
                1.0 + 0.5 * z1[i]
            } else {
                1.0
            };
            x[i] * spec.beta
                + z1[i] * truth.gamma(0, u[i])
                + z2[i] * truth.gamma(1, u[i])
                + spec.error_scale * scale * eps
        });
        let y = self
            .lu
            .solve(&rhs)
            .ok_or(Error::SingularSpatialFilter { rho: spec.rho })?;
        let resid = (&self.filter * &y - &rhs).amax();
        if !(resid < 1e-10) {
            return Err(Error::SingularSpatialFilter { rho: spec.rho });
        }

        let mut z = DMatrix::zeros(n, 2);
        z.set_column(0, &DVector::from_vec(z1));
        z.set_column(1, &DVector::from_vec(z2));
        Dataset::new(
            y,
            DMatrix::from_vec(n, 1, x),
            z,
            DVector::from_vec(u),
            self.w.clone(),
        )
    }
}

/// Replicate 0 of `spec`.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    DgpSampler::new(*spec)?.replicate(0)
}

/// Moves every varying covariate into the linear part, giving the
/// constant-coefficient SAR fit of the same data.
pub fn as_sar_dataset(dataset: &Dataset) -> Result<Dataset> {
    let n = dataset.n();
    let x = crate::linalg::hcat(n, &[dataset.x(), dataset.z()]);
    dataset.with_covariates(x, DMatrix::zeros(n, 0))
}

pub fn bias(estimates: &[f64], truth: f64) -> f64 {
    estimates.iter().map(|e| e - truth).sum::<f64>() / estimates.len() as f64
}

pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    let ms = estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / estimates.len() as f64;
    libm::sqrt(ms)
}

/// Mean absolute deviation of a curve estimate over `grid`.
pub fn made(gamma_hat: impl Fn(f64) -> f64, gamma_true: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    grid.iter().map(|&u| libm::fabs(gamma_hat(u) - gamma_true(u))).sum::<f64>() / grid.len() as f64
}

/// `count` equally spaced points covering the central 95% of `[lo, hi]`.
pub fn made_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let a = lo + 0.025 * (hi - lo);
    let b = hi - 0.025 * (hi - lo);
    if count == 1 {
        return alloc::vec![0.5 * (a + b)];
    }
    (0..count)
        .map(|k| a + (b - a) * k as f64 / (count - 1) as f64)
        .collect()
}

/// Default evaluation grid for MADE: 200 points on `[0.05, 1.95]`.
pub fn default_made_grid() -> Vec<f64> {
    made_grid(U_SUPPORT.0, U_SUPPORT.1, 200)
}

/// Runs independent replicate jobs and returns results in index order.
pub trait ReplicateRunner {
    fn run<T, F>(&self, count: u64, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ReplicateRunner for Sequential {
    fn run<T, F>(&self, count: u64, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        (0..count).map(job).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    #[default]
    Ivqr,
    NaiveQr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FittedModel {
    #[default]
    Plvc,
    /// Constant coefficients on every covariate.
    Sar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub index: u64,
    pub rho: f64,
    /// Coefficient on `X` (first linear column).
    pub beta: f64,
    /// MADE per varying coefficient (empty for the SAR fit).
    pub made: Vec<f64>,
    pub k_n: usize,
}

fn fit(dataset: &Dataset, estimator: Estimator, config: &IvqrConfig) -> Result<IvqrEstimate> {
    match estimator {
        Estimator::Ivqr => estimate(dataset, config),
        Estimator::NaiveQr => estimate_naive_qr(dataset, config),
    }
}

/// Fits one replicate and scores it against the truth.
pub fn run_replicate(
    sampler: &DgpSampler,
    index: u64,
    estimator: Estimator,
    fitted: FittedModel,
    config: &IvqrConfig,
) -> Result<ReplicateOutcome> {
    let data = sampler.replicate(index)?;
    let truth = sampler.spec().truth();
    let grid = default_made_grid();
    let (est, made_values) = match fitted {
        FittedModel::Plvc => {
            let est = fit(&data, estimator, config)?;
            let mut m = Vec::with_capacity(est.q);
            for l in 0..est.q {
                let theta = est.theta_block(l)?;
                let b = &est.basis;
                m.push(made(|u| b.eval(u).dot(&theta), |u| truth.gamma(l, u), &grid));
            }
            (est, m)
        }
        FittedModel::Sar => {
            let sar = as_sar_dataset(&data)?;
            let cfg = config.clone().with_knots(KnotChoice::Fixed(0));
            (fit(&sar, estimator, &cfg)?, Vec::new())
        }
    };
    Ok(ReplicateOutcome {
        index,
        rho: est.rho_hat,
        beta: est.beta_hat[0],
        made: made_values,
        k_n: est.basis.interior_knot_count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSummary {
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub sd: f64,
}

impl ParamSummary {
    pub fn from_estimates(estimates: &[f64], truth: f64) -> Self {
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        Self {
            truth,
            mean,
            bias: bias(estimates, truth),
            rmse: rmse(estimates, truth),
            sd: libm::sqrt(var),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub spec: DgpSpec,
    pub estimator: Estimator,
    pub fitted: FittedModel,
    pub requested: usize,
    pub rejected: usize,
    pub replicates: usize,
    pub rho: ParamSummary,
    pub beta: ParamSummary,
    /// Mean MADE per varying coefficient.
    pub made: Vec<f64>,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Fails when more than 5% of the requested replicates failed.
fn check_failures(failed: usize, requested: usize) -> Result<()> {
    if failed * 20 > requested {
        Err(Error::TooManyFailures { failed, requested })
    } else {
        Ok(())
    }
}

/// Aggregates outcomes (already in replicate order).
pub fn summarize(
    spec: &DgpSpec,
    estimator: Estimator,
    fitted: FittedModel,
    requested: usize,
    results: Vec<Result<ReplicateOutcome>>,
) -> Result<MonteCarloReport> {
    let mut outcomes = Vec::with_capacity(results.len());
    let mut rejected = 0;
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("replicate failed: {e}");
                rejected += 1;
            }
        }
    }
    check_failures(rejected, requested)?;
    if outcomes.is_empty() {
        return Err(Error::TooManyFailures {
            failed: rejected,
            requested,
        });
    }
    let truth = spec.truth();
    let rhos: Vec<f64> = outcomes.iter().map(|o| o.rho).collect();
    let betas: Vec<f64> = outcomes.iter().map(|o| o.beta).collect();
    let q = outcomes[0].made.len();
    let made_means = (0..q)
        .map(|l| outcomes.iter().map(|o| o.made[l]).sum::<f64>() / outcomes.len() as f64)
        .collect();
    Ok(MonteCarloReport {
        spec: *spec,
        estimator,
        fitted,
        requested,
        rejected,
        replicates: outcomes.len(),
        rho: ParamSummary::from_estimates(&rhos, truth.rho),
        beta: ParamSummary::from_estimates(&betas, truth.beta),
        made: made_means,
        outcomes,
    })
}

/// Bias, RMSE and MADE over `reps` replicates.
pub fn run_monte_carlo<R: ReplicateRunner>(
    spec: &DgpSpec,
    estimator: Estimator,
    fitted: FittedModel,
    config: &IvqrConfig,
    reps: usize,
    runner: &R,
) -> Result<MonteCarloReport> {
    if reps == 0 {
        return Err(Error::InvalidData("reps must be at least 1".into()));
    }
    let sampler = DgpSampler::new(*spec)?;
    let mut cfg = config.clone();
    cfg.tau = spec.tau;
    let results = runner.run(reps as u64, |i| run_replicate(&sampler, i, estimator, fitted, &cfg));
    summarize(spec, estimator, fitted, reps, results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub underlying: Example,
    pub fitted: FittedModel,
    pub report: MonteCarloReport,
}

/// IVQR fits of both the varying-coefficient and the constant-coefficient
/// model to data from each of the two designs in `specs`.
pub fn run_model_comparison<R: ReplicateRunner>(
    specs: [&DgpSpec; 2],
    config: &IvqrConfig,
    reps: usize,
    runner: &R,
) -> Result<Vec<ComparisonCell>> {
    let mut cells = Vec::with_capacity(4);
    for spec in specs {
        for fitted in [FittedModel::Plvc, FittedModel::Sar] {
            let report = run_monte_carlo(spec, Estimator::Ivqr, fitted, config, reps, runner)?;
            cells.push(ComparisonCell {
                underlying: spec.example,
                fitted,
                report,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    /// `H0: beta = 0`; the dial sets `beta`.
    Beta,
    /// `H0: gamma_1` constant; the dial sets `eta`.
    Constancy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub test: RankTestConfig,
    /// Interior knots of the basis used by the restricted fits.
    pub k_n: usize,
    pub alpha: f64,
}

impl StudyConfig {
    /// `k_n = floor(n^{1/5})`, nominal level 0.05.
    pub fn new(tau: f64, n: usize) -> Self {
        Self {
            test: RankTestConfig::new(tau),
            k_n: libm::floor(libm::pow(n as f64, 0.2)) as usize,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRow {
    pub dial: f64,
    /// Rejection rate with the naive quantile-regression restricted fit.
    pub qr_rate: f64,
    /// Rejection rate with the IVQR restricted fit.
    pub ivqr_rate: f64,
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub qr_statistic: f64,
    pub ivqr_statistic: f64,
    pub qr_reject: bool,
    pub ivqr_reject: bool,
}

/// Both statistics on replicate `index`.
pub fn run_test_replicate(
    sampler: &DgpSampler,
    index: u64,
    test: TestKind,
    config: &StudyConfig,
) -> Result<TestOutcome> {
    let data = sampler.replicate(index)?;
    let basis = SplineBasis::make_knots(data.u().as_slice(), config.k_n, config.test.ivqr.degree)?;
    let run = |null_fit| {
        let mut cfg = config.test.clone();
        cfg.null_fit = null_fit;
        cfg.ivqr.tau = sampler.spec().tau;
        match test {
            TestKind::Beta => rs_beta_test(&data, &basis, &[0], &cfg),
            TestKind::Constancy => rs_constancy_test(&data, &basis, &[0], &cfg),
        }
    };
    let qr = run(NullFit::NaiveQr)?;
    let iv = run(NullFit::Ivqr)?;
    Ok(TestOutcome {
        qr_statistic: qr.statistic,
        ivqr_statistic: iv.statistic,
        qr_reject: qr.rejects(config.alpha),
        ivqr_reject: iv.rejects(config.alpha),
    })
}

/// Rejection rates over `dial_values`, each from `reps` replicates.
pub fn size_power_study<R: ReplicateRunner>(
    test: TestKind,
    dial_values: &[f64],
    spec: &DgpSpec,
    config: &StudyConfig,
    reps: usize,
    runner: &R,
) -> Result<Vec<PowerRow>> {
    if reps == 0 {
        return Err(Error::InvalidData("reps must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(dial_values.len());
    for &dial in dial_values {
        let mut s = *spec;
        match test {
            TestKind::Beta => s.beta = dial,
            TestKind::Constancy => s.eta = dial,
        }
        let sampler = DgpSampler::new(s)?;
        let results = runner.run(reps as u64, |i| run_test_replicate(&sampler, i, test, config));
        let ok: Vec<TestOutcome> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let failed = reps - ok.len();
        check_failures(failed, reps)?;
        let rate = |f: fn(&TestOutcome) -> bool| ok.iter().filter(|o| f(o)).count() as f64 / ok.len() as f64;
        rows.push(PowerRow {
            dial,
            qr_rate: rate(|o| o.qr_reject),
            ivqr_rate: rate(|o| o.ivqr_reject),
            replicates: ok.len(),
            failed,
        });
    }
    Ok(rows)
}

/// One point of a pointwise confidence band with the truth alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRow {
    pub u: f64,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Estimated curves with pointwise bands for every varying coefficient of a
/// single replicate.
pub fn band_data(
    spec: &DgpSpec,
    index: u64,
    config: &IvqrConfig,
    alpha: f64,
    u_grid: &[f64],
) -> Result<Vec<Vec<BandRow>>> {
    let sampler = DgpSampler::new(*spec)?;
    let data = sampler.replicate(index)?;
    let mut cfg = config.clone();
    cfg.tau = spec.tau;
    let est = estimate(&data, &cfg)?;
    let design = assemble_design_with(&data, &est.basis, cfg.instruments)?;
    let bundle = asymptotic_cov(&est, &design, &cfg)?;
    let ci = confidence_intervals(&est, &bundle, alpha, u_grid, CiRate::SqrtN)?;
    let truth = spec.truth();
    Ok(ci
        .gamma
        .iter()
        .enumerate()
        .map(|(l, band)| {
            band.iter()
                .map(|p| BandRow {
                    u: p.u,
                    truth: truth.gamma(l, p.u),
                    estimate: p.interval.estimate,
                    lower: p.interval.lower,
                    upper: p.interval.upper,
                })
                .collect()
        })
        .collect())
}

/// Whether the nominal interval for `beta` covers the truth on one replicate.
pub fn beta_coverage_replicate(
    sampler: &DgpSampler,
    index: u64,
    config: &IvqrConfig,
    alpha: f64,
) -> Result<bool> {
    let data = sampler.replicate(index)?;
    let est = estimate(&data, config)?;
    let design = assemble_design_with(&data, &est.basis, config.instruments)?;
    let bundle = asymptotic_cov(&est, &design, config)?;
    let ci = confidence_intervals(&est, &bundle, alpha, &[], CiRate::SqrtN)?;
    Ok(ci.beta[0].contains(sampler.spec().beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_examples() {
        assert_eq!(bias(&[2.0, 2.0], 2.0), 0.0);
        assert_eq!(rmse(&[2.0, 2.0], 2.0), 0.0);
        assert_eq!(bias(&[3.0, 3.0], 2.0), 1.0);
        assert_eq!(rmse(&[3.0, 3.0], 2.0), 1.0);
        assert_eq!(bias(&[3.0, 1.0], 2.0), 0.0);
        assert_eq!(rmse(&[3.0, 1.0], 2.0), 1.0);
        let g = made_grid(0.0, 2.0, 200);
        assert_eq!(made(|u| u, |u| u, &g), 0.0);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[199] - 1.95).abs() < 1e-15);
    }

    #[test]
    fn example_names_round_trip() {
        for e in Example::ALL {
            assert_eq!(Example::from_name(e.name()), Some(e));
        }
        assert_eq!(Example::from_name("table9"), None);
    }

    #[test]
    fn truth_curves() {
        let t = DgpSpec::new(Example::Ex1Plvc, 50, 0.5, 1).truth();
        assert_eq!(t.gamma(0, 1.0), 0.5);
        assert!((t.gamma(1, 0.0) - 1.0).abs() < 1e-15);
        let t2 = DgpSpec::new(Example::Ex2PlvcHetero, 50, 0.5, 1).truth();
        assert_eq!(t2.gamma(1, 1.0), 0.5);
        let s = DgpSpec::new(Example::Ex1Sar, 50, 0.5, 1).truth();
        assert_eq!(s.gamma(0, 1.7), 1.0);
    }

    #[test]
    fn failure_threshold() {
        assert!(check_failures(5, 100).is_ok());
        assert!(matches!(check_failures(6, 100), Err(Error::TooManyFailures { .. })));
    }

    #[test]
    fn replicates_are_reproducible() {
        let spec = DgpSpec::new(Example::Ex2PlvcHetero, 30, 0.25, 99);
        let s = DgpSampler::new(spec).unwrap();
        assert_eq!(s.replicate(3).unwrap(), s.replicate(3).unwrap());
        assert_ne!(s.replicate(3).unwrap().y(), s.replicate(4).unwrap().y());
    }
}
