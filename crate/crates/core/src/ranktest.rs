//! Error-density (sparsity) estimation and rank-score tests for constant
//! coefficients and for constancy of varying coefficients.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::dist;
use crate::error::{check_tau, Error, Result};
use crate::ivqr::{estimate_with_design, IvqrConfig};
use crate::linalg;
use crate::model::{assemble_with_instruments, Dataset};
use crate::qr_solver::{psi_tau, solve_qr_with, CheckLossProblem};
use crate::spline::{quantile_sorted, SplineBasis};

/// Probability-scale bandwidth rule for the kernel density estimate at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    HallSheather,
    Bofinger,
    /// Bandwidth given directly on the residual scale.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityConfig {
    pub rule: BandwidthRule,
    /// Multiplier applied to the bandwidth.
    pub scale: f64,
    /// Use one pooled density value for every observation.
    pub homoscedastic: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            rule: BandwidthRule::HallSheather,
            scale: 1.0,
            homoscedastic: false,
        }
    }
}

/// Per-observation density estimates at zero, floored at `1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityWeights {
    pub values: DVector<f64>,
    pub bandwidth: f64,
}

/// Probability-scale bandwidth of a rule for sample size `n`.
pub fn probability_bandwidth(rule: BandwidthRule, n: usize, tau: f64) -> f64 {
    let nf = n as f64;
    let x = dist::normal_quantile(tau);
    let f = dist::normal_pdf(x);
    match rule {
        BandwidthRule::HallSheather => {
            let z = dist::normal_quantile(0.975);
            libm::pow(nf, -1.0 / 3.0)
                * libm::pow(z, 2.0 / 3.0)
                * libm::cbrt(1.5 * f * f / (2.0 * x * x + 1.0))
        }
        BandwidthRule::Bofinger => {
            let d = 2.0 * x * x + 1.0;
            let r = 4.5 * f * f * f * f / (d * d);
            libm::pow(nf, -0.2) * libm::pow(r, 0.2)
        }
        BandwidthRule::Fixed(h) => h,
    }
}

fn robust_spread(residuals: &DVector<f64>) -> f64 {
    let n = residuals.len() as f64;
    let mean = residuals.sum() / n;
    let sd = libm::sqrt(residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0));
    let mut sorted: Vec<f64> = residuals.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let r = iqr / 1.34;
    if r > 0.0 {
        sd.min(r)
    } else {
        sd
    }
}

/// Residual-scale bandwidth.
pub fn bandwidth(residuals: &DVector<f64>, tau: f64, config: &DensityConfig) -> Result<f64> {
    check_tau(tau)?;
    let h = match config.rule {
        BandwidthRule::Fixed(h) => h * config.scale,
        rule => {
            let hp = probability_bandwidth(rule, residuals.len(), tau).min(0.999 * tau.min(1.0 - tau));
            let width = dist::normal_quantile(tau + hp) - dist::normal_quantile(tau - hp);
            config.scale * width * robust_spread(residuals)
        }
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain {
            name: "bandwidth",
            value: h,
            expected: "h > 0",
        });
    }
    Ok(h)
}

/// `f_i = phi(e_i / h) / h`.
pub fn estimate_sparsity(residuals: &DVector<f64>, tau: f64, config: &DensityConfig) -> Result<SparsityWeights> {
    if residuals.is_empty() {
        return Err(Error::InvalidData("no residuals".into()));
    }
    let h = bandwidth(residuals, tau, config)?;
    let mut values = residuals.map(|e| dist::normal_pdf(e / h) / h);
    if config.homoscedastic {
        let mean = values.mean();
        values.fill(mean);
    }
    let mut floored = 0;
    for v in values.iter_mut() {
        if *v < 1e-8 {
            *v = 1e-8;
            floored += 1;
        }
    }
    if floored > 0 {
        log::warn!("{floored} density estimates floored at 1e-8");
    }
    Ok(SparsityWeights { values, bandwidth: h })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    ChiSquare,
    /// Standardized statistic `(RS - df) / sqrt(2 df)` against N(0, 1).
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    /// Chi-square, except the constancy test switches to the normal
    /// approximation when `k_n > n^{1/5}`.
    #[default]
    Auto,
    ChiSquare,
    Normal,
}

/// Model used for the restricted fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NullFit {
    #[default]
    Ivqr,
    /// Quantile regression with the spatial lag as an ordinary regressor.
    NaiveQr,
}

/// Direction scored by the constancy test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstancyDirection {
    /// `Z_1 * U`, projected off `(D, X, Z_1, Pi_2)`; one degree of freedom
    /// per tested coefficient.
    #[default]
    LinearTrend,
    /// `Z_1 * B_s(U)` for all but the first basis function, projected off
    /// `(D, X, Z_1, Pi_2)`.
    Spline,
    /// `Z_1` itself, projected off `(D, X, Pi_2)`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTestConfig {
    /// Estimator settings for the restricted fit; its knot choice is unused.
    pub ivqr: IvqrConfig,
    pub null_fit: NullFit,
    /// Score `(I - P) B^{1/2} T` instead of `(I - P) T`.
    pub weighted_g: bool,
    pub reference: ReferenceMode,
    pub direction: ConstancyDirection,
}

impl RankTestConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            ivqr: IvqrConfig::new(tau),
            null_fit: NullFit::default(),
            weighted_g: false,
            reference: ReferenceMode::default(),
            direction: ConstancyDirection::default(),
        }
    }
}

pub const REPORT_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

#[derive(Debug, Clone, PartialEq)]
pub struct RankScoreResult {
    /// Reported statistic: `RS` under chi-square, standardized under the
    /// normal approximation.
    pub statistic: f64,
    /// The quadratic form `S' Q^{-1} S`.
    pub raw_statistic: f64,
    pub df: usize,
    pub reference: Reference,
    pub p_value: f64,
    pub reject_at: Vec<(f64, bool)>,
    /// Spatial coefficient of the restricted fit.
    pub null_rho: f64,
    /// Coefficients of the restricted fit on the non-tested linear columns.
    pub null_beta: DVector<f64>,
    /// Constancy test only: coefficients of the second-step quantile
    /// regression of `y - Z_1 gamma_1` on `(D, X, Pi_2)`.
    pub step2_coefficients: Option<DVector<f64>>,
}

impl RankScoreResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    /// Upper critical value at `alpha` on the statistic's own scale.
    pub fn cutoff(&self, alpha: f64) -> f64 {
        match self.reference {
            Reference::ChiSquare => dist::chi_square_quantile_upper(alpha, self.df),
            Reference::NormalApprox => dist::normal_quantile(1.0 - alpha),
        }
    }
}

/// Upper-tail probability of `statistic` under `reference`.
pub fn reference_pvalue(statistic: f64, df: usize, reference: Reference) -> f64 {
    match reference {
        Reference::ChiSquare => dist::chi_square_sf(statistic, df),
        Reference::NormalApprox => dist::normal_sf(statistic),
    }
}

/// `P = B^{1/2} X (X' B X)^{-1} X' B^{1/2}`.
pub fn projection_matrix(x_star: &DMatrix<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
    let sb = b.map(libm::sqrt);
    let xw = scale_rows(x_star, &sb);
    let inv = linalg::spd_inverse(&xw.tr_mul(&xw), "X*' B X*")?;
    Ok(&xw * inv * xw.transpose())
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col.component_mul_assign(s);
    }
    out
}

/// Rank-score statistic for the columns `tested` given the retained design
/// `x_star`, restricted-fit residuals and density weights.
pub fn score_statistic(
    x_star: &DMatrix<f64>,
    tested: &DMatrix<f64>,
    residuals: &DVector<f64>,
    tau: f64,
    b: &DVector<f64>,
    weighted_g: bool,
) -> Result<f64> {
    let n = residuals.len();
    let nf = n as f64;
    if tested.ncols() == 0 {
        return Err(Error::InvalidData("empty tested block".into()));
    }
    if tested.nrows() != n || x_star.nrows() != n || b.len() != n {
        return Err(Error::Dimension {
            context: "rank-score inputs",
            expected: n,
            found: tested.nrows(),
        });
    }
    let scale = tested.amax().max(f64::MIN_POSITIVE);
    for j in 0..tested.ncols() {
        if tested.column(j).amax() <= 1e-12 * scale || tested.column(j).amax() == 0.0 {
            return Err(Error::Singular {
                what: "tested block (zero column)",
                condition: f64::INFINITY,
            });
        }
    }

    let sb = b.map(libm::sqrt);
    let t = if weighted_g {
        scale_rows(tested, &sb)
    } else {
        tested.clone()
    };
    let g = if x_star.ncols() == 0 {
        t
    } else {
        let xw = scale_rows(x_star, &sb);
        let gram = xw.tr_mul(&xw);
        let chol = gram.clone().cholesky().ok_or(Error::Singular {
            what: "X*' B X*",
            condition: linalg::condition_number_sym(&gram),
        })?;
        let coef = chol.solve(&xw.tr_mul(&t));
        &t - &xw * coef
    };

    let psi = residuals.map(|e| psi_tau(e, tau));
    let s = g.tr_mul(&psi) / libm::sqrt(nf);
    let psi2 = psi.map(|v| v * v);
    let q = linalg::weighted_gram(&g, psi2.as_slice()) / nf;

    let qmax = q.amax();
    if !(qmax > 1e-14 * scale * scale) {
        return Err(Error::Singular {
            what: "Q_n",
            condition: f64::INFINITY,
        });
    }
    let cond = linalg::condition_number_sym(&q);
    let q_inv = if cond > 1e10 {
        log::warn!("Q_n condition number {cond:.3e}; using pseudo-inverse");
        linalg::pinv_sym(&q, 1e-10)
    } else {
        linalg::spd_inverse(&q, "Q_n")?
    };
    Ok((&q_inv * &s).dot(&s).max(0.0))
}

struct NullResiduals {
    residuals: DVector<f64>,
    rho: f64,
    beta: DVector<f64>,
    /// `[D, X_null, Pi_null]`.
    x_star: DMatrix<f64>,
}

/// Restricted fit on `null_ds`, with instruments built from the full data.
/// Residuals exclude the instrument term.
fn fit_null(
    full: &Dataset,
    null_ds: &Dataset,
    basis: &SplineBasis,
    config: &RankTestConfig,
) -> Result<NullResiduals> {
    let raw = config.ivqr.instruments.raw(full.w(), full.x(), full.z());
    let design = assemble_with_instruments(null_ds, basis, &raw)?;
    let x_star = design.with_lag_no_instruments();
    let p = null_ds.p();
    match config.null_fit {
        NullFit::Ivqr => {
            let est = estimate_with_design(&design, &config.ivqr)?;
            let residuals = &est.residuals + &design.e * &est.zeta_hat;
            Ok(NullResiduals {
                residuals,
                rho: est.rho_hat,
                beta: est.beta_hat,
                x_star,
            })
        }
        NullFit::NaiveQr => {
            let problem = CheckLossProblem::with_rank_tol(
                &x_star,
                null_ds.y(),
                config.ivqr.tau,
                config.ivqr.solver.rank_tol,
            )?;
            let fit = solve_qr_with(&problem, &config.ivqr.solver)?;
            Ok(NullResiduals {
                residuals: fit.residuals,
                rho: fit.coefficients[0],
                beta: fit.coefficients.rows(1, p).clone_owned(),
                x_star,
            })
        }
    }
}

fn validate_subset(indices: &[usize], len: usize, what: &'static str) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidData(alloc::format!("no {what} selected for testing")));
    }
    for (k, &i) in indices.iter().enumerate() {
        if i >= len {
            return Err(Error::IndexOutOfRange { what, index: i, len });
        }
        if indices[..k].contains(&i) {
            return Err(Error::InvalidData(alloc::format!("{what} {i} listed twice")));
        }
    }
    Ok(())
}

fn complement(indices: &[usize], len: usize) -> Vec<usize> {
    (0..len).filter(|i| !indices.contains(i)).collect()
}

fn finish(
    raw: f64,
    df: usize,
    reference: Reference,
    null: NullResiduals,
    step2: Option<DVector<f64>>,
) -> RankScoreResult {
    let statistic = match reference {
        Reference::ChiSquare => raw,
        Reference::NormalApprox => (raw - df as f64) / libm::sqrt(2.0 * df as f64),
    };
    let p_value = reference_pvalue(statistic, df, reference);
    RankScoreResult {
        statistic,
        raw_statistic: raw,
        df,
        reference,
        p_value,
        reject_at: REPORT_LEVELS.iter().map(|&a| (a, p_value < a)).collect(),
        null_rho: null.rho,
        null_beta: null.beta,
        step2_coefficients: step2,
    }
}

/// Tests `H0: beta_j = 0` for the linear columns `tested` (0-based).
pub fn rs_beta_test(
    dataset: &Dataset,
    basis: &SplineBasis,
    tested: &[usize],
    config: &RankTestConfig,
) -> Result<RankScoreResult> {
    config.ivqr.validate()?;
    validate_subset(tested, dataset.p(), "linear column")?;
    let x1 = linalg::select_columns(dataset.x(), tested);
    let x2 = linalg::select_columns(dataset.x(), &complement(tested, dataset.p()));
    let null_ds = dataset.with_covariates(x2, dataset.z().clone())?;
    let null = fit_null(dataset, &null_ds, basis, config)?;
    let b = estimate_sparsity(&null.residuals, config.ivqr.tau, &config.ivqr.density)?.values;
    let raw = score_statistic(&null.x_star, &x1, &null.residuals, config.ivqr.tau, &b, config.weighted_g)?;
    let reference = match config.reference {
        ReferenceMode::Normal => Reference::NormalApprox,
        _ => Reference::ChiSquare,
    };
    Ok(finish(raw, tested.len(), reference, null, None))
}

/// Tests that the varying coefficients `tested` (0-based) are constant in `u`.
pub fn rs_constancy_test(
    dataset: &Dataset,
    basis: &SplineBasis,
    tested: &[usize],
    config: &RankTestConfig,
) -> Result<RankScoreResult> {
    config.ivqr.validate()?;
    let n = dataset.n();
    let q1 = tested.len();
    validate_subset(tested, dataset.q(), "varying coefficient")?;
    let z1 = linalg::select_columns(dataset.z(), tested);
    let z2 = linalg::select_columns(dataset.z(), &complement(tested, dataset.q()));
    let p = dataset.p();
    let x_null = linalg::hcat(n, &[dataset.x(), &z1]);
    let null_ds = dataset.with_covariates(x_null, z2)?;
    let null = fit_null(dataset, &null_ds, basis, config)?;
    let tau = config.ivqr.tau;

    // x_star columns: D, X, Z_1, Pi_2
    let x_star_full = &null.x_star;
    let without_z1: Vec<usize> = (0..x_star_full.ncols())
        .filter(|&j| !(1 + p..1 + p + q1).contains(&j))
        .collect();
    let x_breve = linalg::select_columns(x_star_full, &without_z1);

    let (x_star, t, df) = match config.direction {
        ConstancyDirection::Literal => (x_breve.clone(), z1.clone(), q1),
        ConstancyDirection::LinearTrend => {
            let t = DMatrix::from_fn(n, q1, |i, l| z1[(i, l)] * dataset.u()[i]);
            (x_star_full.clone(), t, q1)
        }
        ConstancyDirection::Spline => {
            let bm = basis.eval_matrix(dataset.u().as_slice());
            let k = basis.basis_dim();
            if k < 2 {
                return Err(Error::InvalidData("spline direction needs at least 2 basis functions".into()));
            }
            let t = DMatrix::from_fn(n, q1 * (k - 1), |i, c| {
                let (l, s) = (c / (k - 1), c % (k - 1) + 1);
                z1[(i, l)] * bm[(i, s)]
            });
            (x_star_full.clone(), t, q1 * (k - 1))
        }
    };

    let b = estimate_sparsity(&null.residuals, tau, &config.ivqr.density)?.values;
    let raw = score_statistic(&x_star, &t, &null.residuals, tau, &b, config.weighted_g)?;

    // second step: y - Z_1 gamma_1 on (D, X, Pi_2), diagnostics only
    let gamma1 = null.beta.rows(p, q1).clone_owned();
    let y2 = dataset.y() - &z1 * &gamma1;
    let step2 = CheckLossProblem::with_rank_tol(&x_breve, &y2, tau, config.ivqr.solver.rank_tol)
        .and_then(|prob| solve_qr_with(&prob, &config.ivqr.solver))
        .map(|f| f.coefficients)
        .ok();

    let growing = basis.interior_knot_count() as f64 > libm::pow(n as f64, 0.2);
    let reference = match config.reference {
        ReferenceMode::ChiSquare => Reference::ChiSquare,
        ReferenceMode::Normal => Reference::NormalApprox,
        ReferenceMode::Auto if growing => Reference::NormalApprox,
        ReferenceMode::Auto => Reference::ChiSquare,
    };
    Ok(finish(raw, df, reference, null, step2))
}
