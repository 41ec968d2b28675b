//! Instrumental-variable quantile regression with a grid over the spatial
//! coefficient, the naive quantile-regression comparison fit, plug-in
//! asymptotic covariance and confidence intervals.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dist;
use crate::error::{check_tau, Error, Result};
use crate::linalg;
use crate::model::{assemble_design_with, AssembledDesign, Dataset, InstrumentSet};
use crate::qr_solver::{solve_qr_with, CheckLossProblem, QrFit, SolverConfig, VertexPath};
use crate::ranktest::{estimate_sparsity, DensityConfig};
use crate::spline::{build_pi, default_knot_candidates, select_knots_by, KnotSelection, SicPenalty, SplineBasis};

/// Candidate values `lo, lo + step, ..., hi` for the spatial coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for RhoGrid {
    fn default() -> Self {
        Self {
            lo: -0.99,
            hi: 0.99,
            step: 0.01,
        }
    }
}

impl RhoGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let g = Self { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo > -1.0 && self.hi < 1.0 && self.lo <= self.hi) {
            return Err(Error::Domain {
                name: "rho grid",
                value: if self.lo <= -1.0 { self.lo } else { self.hi },
                expected: "-1 < lo <= hi < 1",
            });
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Domain {
                name: "rho grid step",
                value: self.step,
                expected: "step > 0",
            });
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let count = libm::floor((self.hi - self.lo) / self.step + 1e-9) as usize + 1;
        (0..count)
            .map(|j| {
                let v = self.lo + j as f64 * self.step;
                // remove accumulated representation noise, e.g. 0.30000000000000004
                libm::round(v * 1e12) / 1e12
            })
            .collect()
    }
}

/// Weighting of the instrument coefficients in the grid criterion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightMatrix {
    #[default]
    Identity,
    /// Inverse of a pairs-bootstrap covariance of the instrument coefficients,
    /// computed at a preliminary identity-weighted estimate.
    InverseZetaCov { reps: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnotChoice {
    Fixed(usize),
    Auto {
        candidates: Option<Vec<usize>>,
        penalty: SicPenalty,
    },
}

impl Default for KnotChoice {
    fn default() -> Self {
        KnotChoice::Auto {
            candidates: None,
            penalty: SicPenalty::default(),
        }
    }
}

/// Scaling of the interval half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiRate {
    /// Standard error `sigma / sqrt(n)`.
    #[default]
    SqrtN,
    /// Standard error `sigma / n`.
    InverseN,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvqrConfig {
    pub tau: f64,
    pub rho_grid: RhoGrid,
    pub weight_a: WeightMatrix,
    pub knots: KnotChoice,
    pub degree: usize,
    pub density: DensityConfig,
    pub instruments: InstrumentSet,
    pub solver: SolverConfig,
}

impl IvqrConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            rho_grid: RhoGrid::default(),
            weight_a: WeightMatrix::default(),
            knots: KnotChoice::default(),
            degree: 3,
            density: DensityConfig::default(),
            instruments: InstrumentSet::default(),
            solver: SolverConfig::default(),
        }
    }

    pub fn with_knots(mut self, knots: KnotChoice) -> Self {
        self.knots = knots;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        self.rho_grid.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub rho: f64,
    /// `zeta' A zeta` at this grid point.
    pub zeta_norm: f64,
    pub objective: f64,
}

/// Coefficients of one quantile regression of `y - rho D` on `[X, Pi, E]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step1Fit {
    pub rho: f64,
    pub beta: DVector<f64>,
    pub theta: DVector<f64>,
    pub zeta: DVector<f64>,
    pub objective: f64,
}

impl Step1Fit {
    fn from_fit(rho: f64, design: &AssembledDesign, fit: &QrFit) -> Self {
        let bi = &design.block_index;
        let c = &fit.coefficients;
        Self {
            rho,
            beta: c.rows(bi.x.start, bi.x.len()).clone_owned(),
            theta: c.rows(bi.pi.start, bi.pi.len()).clone_owned(),
            zeta: c.rows(bi.e.start, bi.e.len()).clone_owned(),
            objective: fit.objective,
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > -1.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "rho",
            value: rho,
            expected: "|rho| < 1",
        })
    }
}

/// Quantile regression of `y - rho D` on the assembled design.
pub fn step1_profile(rho: f64, tau: f64, design: &AssembledDesign) -> Result<Step1Fit> {
    step1_profile_with(rho, tau, design, &SolverConfig::default())
}

pub fn step1_profile_with(
    rho: f64,
    tau: f64,
    design: &AssembledDesign,
    solver: &SolverConfig,
) -> Result<Step1Fit> {
    check_rho(rho)?;
    let response = &design.y - &design.d * rho;
    let problem = CheckLossProblem::with_rank_tol(&design.x_tilde, &response, tau, solver.rank_tol)?;
    let fit = solve_qr_with(&problem, solver)?;
    Ok(Step1Fit::from_fit(rho, design, &fit))
}

/// Step-1 fits at every grid point, solved in grid order with each solve
/// warm-started from the previous optimal basis.
pub fn profile_grid(
    design: &AssembledDesign,
    tau: f64,
    rhos: &[f64],
    solver: &SolverConfig,
) -> Result<Vec<Step1Fit>> {
    let Some(&first) = rhos.first() else {
        return Ok(Vec::new());
    };
    check_rho(first)?;
    let y0 = &design.y - &design.d * first;
    let problem = CheckLossProblem::with_rank_tol(&design.x_tilde, &y0, tau, solver.rank_tol)?;
    let mut path = VertexPath::new(&problem, *solver);
    let mut out = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        check_rho(rho)?;
        let response = &design.y - &design.d * rho;
        let fit = path.solve(&response)?;
        out.push(Step1Fit::from_fit(rho, design, &fit));
    }
    Ok(out)
}

/// `zeta' A zeta`.
pub fn zeta_quadratic(zeta: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    (a * zeta).dot(zeta)
}

/// Index of the grid point minimizing `zeta' A zeta`; ties go to the
/// smallest `|rho|`.
pub fn step2_grid_search(rhos: &[f64], zetas: &[DVector<f64>], a: &DMatrix<f64>) -> Result<usize> {
    if rhos.is_empty() || rhos.len() != zetas.len() {
        return Err(Error::Dimension {
            context: "grid search profile",
            expected: rhos.len(),
            found: zetas.len(),
        });
    }
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (j, zeta) in zetas.iter().enumerate() {
        if zeta.len() != a.nrows() || a.nrows() != a.ncols() {
            return Err(Error::Dimension {
                context: "weight matrix A",
                expected: zeta.len(),
                found: a.nrows(),
            });
        }
        let v = zeta_quadratic(zeta, a);
        if j == 0 {
            best_val = v;
            continue;
        }
        let tie = (v - best_val).abs() <= 1e-12 * best_val.abs().max(f64::MIN_POSITIVE);
        if v < best_val && !tie || tie && rhos[j].abs() < rhos[best].abs() {
            best = j;
            best_val = v;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvqrEstimate {
    pub tau: f64,
    pub rho_hat: f64,
    pub beta_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub zeta_hat: DVector<f64>,
    pub basis: SplineBasis,
    /// Number of varying coefficients.
    pub q: usize,
    pub profile: Vec<ProfilePoint>,
    /// Check loss of the fit at the selected grid point.
    pub objective: f64,
    /// Residuals `y - rho_hat D - X beta - Pi theta - E zeta`.
    pub residuals: DVector<f64>,
    pub weight_a: DMatrix<f64>,
    pub knot_selection: Option<KnotSelection>,
}

impl IvqrEstimate {
    /// Spline coefficients of varying coefficient `l` (0-based).
    pub fn theta_block(&self, l: usize) -> Result<DVector<f64>> {
        if l >= self.q {
            return Err(Error::IndexOutOfRange {
                what: "varying coefficient",
                index: l,
                len: self.q,
            });
        }
        let k = self.basis.basis_dim();
        Ok(self.theta_hat.rows(l * k, k).clone_owned())
    }

    /// `gamma_l(u) = pi(u)' theta_l`, with `l` 0-based.
    pub fn gamma(&self, l: usize, u: f64) -> Result<f64> {
        let theta = self.theta_block(l)?;
        Ok(self.basis.eval(u).dot(&theta))
    }

    /// Re-evaluates the grid criterion over the stored profile and returns
    /// the smallest value found.
    pub fn profile_minimum(&self) -> f64 {
        self.profile
            .iter()
            .map(|p| p.zeta_norm)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn eval_varying_coef(estimate: &IvqrEstimate, l: usize, u: f64) -> Result<f64> {
    estimate.gamma(l, u)
}

/// Number of coefficients of the full design for a candidate `k_n`.
fn feasible_knots(dataset: &Dataset, k: usize, degree: usize) -> bool {
    let q_kn = dataset.q() * (k + degree + 1);
    q_kn + dataset.p() + 2 < dataset.n()
}

/// Chooses the interior-knot count minimizing the criterion of full IVQR
/// fits and returns the selection together with the winning estimate.
pub fn select_knots(
    dataset: &Dataset,
    config: &IvqrConfig,
    candidates: &[usize],
    penalty: SicPenalty,
) -> Result<(KnotSelection, IvqrEstimate)> {
    if candidates.is_empty() {
        return Err(Error::InvalidData("empty knot candidate list".into()));
    }
    let mut fits: Vec<(usize, IvqrEstimate)> = Vec::new();
    let selection = select_knots_by(
        dataset.n(),
        candidates,
        |k| feasible_knots(dataset, k, config.degree),
        |k| {
            let basis = SplineBasis::make_knots(dataset.u().as_slice(), k, config.degree)?;
            let design = assemble_design_with(dataset, &basis, config.instruments)?;
            let est = estimate_with_design(&design, config)?;
            let params = penalty.param_count(design.p(), design.q_kn(), design.m_e());
            let obj = est.objective;
            fits.push((k, est));
            Ok((obj, params))
        },
    )?;
    let est = fits
        .into_iter()
        .find(|(k, _)| *k == selection.selected)
        .map(|(_, e)| e)
        .ok_or(Error::NoFeasibleKnots { n: dataset.n() })?;
    Ok((selection, est))
}

/// Knot selection, grid profile, grid search and read-off of the remaining
/// coefficients at the selected spatial coefficient.
pub fn estimate(dataset: &Dataset, config: &IvqrConfig) -> Result<IvqrEstimate> {
    config.validate()?;
    match &config.knots {
        KnotChoice::Fixed(k) => {
            if !feasible_knots(dataset, *k, config.degree) {
                return Err(Error::NoFeasibleKnots { n: dataset.n() });
            }
            let basis = SplineBasis::make_knots(dataset.u().as_slice(), *k, config.degree)?;
            let design = assemble_design_with(dataset, &basis, config.instruments)?;
            estimate_with_design(&design, config)
        }
        KnotChoice::Auto { candidates, penalty } => {
            let cands = candidates
                .clone()
                .unwrap_or_else(|| default_knot_candidates(dataset.n()));
            let (selection, mut est) = select_knots(dataset, config, &cands, *penalty)?;
            est.knot_selection = Some(selection);
            Ok(est)
        }
    }
}

/// Estimation on an already assembled design; the knot choice in `config`
/// is ignored.
pub fn estimate_with_design(design: &AssembledDesign, config: &IvqrConfig) -> Result<IvqrEstimate> {
    config.validate()?;
    let tau = config.tau;
    let rhos = config.rho_grid.points();
    let fits = profile_grid(design, tau, &rhos, &config.solver)?;
    let zetas: Vec<DVector<f64>> = fits.iter().map(|f| f.zeta.clone()).collect();

    let m_e = design.m_e();
    let identity = DMatrix::identity(m_e, m_e);
    let a = match config.weight_a {
        WeightMatrix::Identity => identity,
        WeightMatrix::InverseZetaCov { reps, seed } => {
            let pre = step2_grid_search(&rhos, &zetas, &identity)?;
            let cov = bootstrap_zeta_cov(design, tau, rhos[pre], reps, seed, &config.solver)?;
            match linalg::spd_inverse(&cov, "bootstrap covariance of zeta") {
                Ok(inv) => inv,
                Err(_) => {
                    log::warn!("bootstrap covariance of zeta is singular; using pseudo-inverse");
                    linalg::pinv_sym(&cov, 1e-12)
                }
            }
        }
    };

    let j = step2_grid_search(&rhos, &zetas, &a)?;
    let profile = fits
        .iter()
        .map(|f| ProfilePoint {
            rho: f.rho,
            zeta_norm: zeta_quadratic(&f.zeta, &a),
            objective: f.objective,
        })
        .collect();
    let best = &fits[j];
    let coef = {
        let mut c = DVector::zeros(design.x_tilde.ncols());
        let bi = &design.block_index;
        c.rows_mut(bi.x.start, bi.x.len()).copy_from(&best.beta);
        c.rows_mut(bi.pi.start, bi.pi.len()).copy_from(&best.theta);
        c.rows_mut(bi.e.start, bi.e.len()).copy_from(&best.zeta);
        c
    };
    let residuals = &design.y - &design.d * best.rho - &design.x_tilde * coef;
    Ok(IvqrEstimate {
        tau,
        rho_hat: best.rho,
        beta_hat: best.beta.clone(),
        theta_hat: best.theta.clone(),
        zeta_hat: best.zeta.clone(),
        basis: design.basis.clone(),
        q: design.q,
        profile,
        objective: best.objective,
        residuals,
        weight_a: a,
        knot_selection: None,
    })
}

/// Pairs-bootstrap covariance of the instrument coefficients at fixed `rho`.
fn bootstrap_zeta_cov(
    design: &AssembledDesign,
    tau: f64,
    rho: f64,
    reps: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let n = design.n();
    let bi = &design.block_index;
    let response = &design.y - &design.d * rho;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draws: Vec<DVector<f64>> = Vec::with_capacity(reps);
    let mut idx = alloc::vec![0usize; n];
    for _ in 0..reps {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        let xb = linalg::select_rows(&design.x_tilde, &idx);
        let yb = DVector::from_iterator(n, idx.iter().map(|&i| response[i]));
        let Ok(problem) = CheckLossProblem::with_rank_tol(&xb, &yb, tau, solver.rank_tol) else {
            continue;
        };
        if let Ok(fit) = solve_qr_with(&problem, solver) {
            draws.push(fit.coefficients.rows(bi.e.start, bi.e.len()).clone_owned());
        }
    }
    if draws.len() < 2 {
        return Err(Error::InvalidData("too few usable bootstrap resamples".into()));
    }
    let b = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(bi.e.len()), |acc, d| acc + d) / b;
    let mut cov = DMatrix::zeros(bi.e.len(), bi.e.len());
    for d in &draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    Ok(cov / (b - 1.0))
}

/// `[D, X, Pi]` for a given basis.
pub fn naive_design(dataset: &Dataset, basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let n = dataset.n();
    let d = dataset.w() * dataset.y();
    let d = DMatrix::from_column_slice(n, 1, d.as_slice());
    let pi = build_pi(dataset.z(), dataset.u(), basis)?;
    Ok(linalg::hcat(n, &[&d, dataset.x(), &pi.pi_matrix]))
}

fn naive_fit(dataset: &Dataset, basis: &SplineBasis, config: &IvqrConfig) -> Result<IvqrEstimate> {
    let design = naive_design(dataset, basis)?;
    let problem = CheckLossProblem::with_rank_tol(&design, dataset.y(), config.tau, config.solver.rank_tol)?;
    let fit = solve_qr_with(&problem, &config.solver)?;
    let p = dataset.p();
    let c = &fit.coefficients;
    Ok(IvqrEstimate {
        tau: config.tau,
        rho_hat: c[0],
        beta_hat: c.rows(1, p).clone_owned(),
        theta_hat: c.rows(1 + p, c.len() - 1 - p).clone_owned(),
        zeta_hat: DVector::zeros(0),
        basis: basis.clone(),
        q: dataset.q(),
        profile: Vec::new(),
        objective: fit.objective,
        residuals: fit.residuals,
        weight_a: DMatrix::zeros(0, 0),
        knot_selection: None,
    })
}

/// Single quantile regression with the spatial lag as an ordinary regressor
/// and no instruments.
pub fn estimate_naive_qr(dataset: &Dataset, config: &IvqrConfig) -> Result<IvqrEstimate> {
    config.validate()?;
    match &config.knots {
        KnotChoice::Fixed(k) => {
            if !feasible_knots(dataset, *k, config.degree) {
                return Err(Error::NoFeasibleKnots { n: dataset.n() });
            }
            let basis = SplineBasis::make_knots(dataset.u().as_slice(), *k, config.degree)?;
            naive_fit(dataset, &basis, config)
        }
        KnotChoice::Auto { candidates, penalty } => {
            let cands = candidates
                .clone()
                .unwrap_or_else(|| default_knot_candidates(dataset.n()));
            let mut fits: Vec<(usize, IvqrEstimate)> = Vec::new();
            let selection = select_knots_by(
                dataset.n(),
                &cands,
                |k| feasible_knots(dataset, k, config.degree),
                |k| {
                    let basis = SplineBasis::make_knots(dataset.u().as_slice(), k, config.degree)?;
                    let est = naive_fit(dataset, &basis, config)?;
                    let params = penalty.param_count(dataset.p(), est.theta_hat.len(), 0);
                    let obj = est.objective;
                    fits.push((k, est));
                    Ok((obj, params))
                },
            )?;
            let mut est = fits
                .into_iter()
                .find(|(k, _)| *k == selection.selected)
                .map(|(_, e)| e)
                .ok_or(Error::NoFeasibleKnots { n: dataset.n() })?;
            est.knot_selection = Some(selection);
            Ok(est)
        }
    }
}

/// Plug-in estimates of the sandwich components.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBundle {
    pub n: usize,
    pub tau: f64,
    /// Diagonal of Omega: estimated error densities at each residual.
    pub omega: DVector<f64>,
    pub bandwidth: f64,
    pub j_eta: DMatrix<f64>,
    pub j_rho: DVector<f64>,
    pub s: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// The single row of `K`, stored as a column.
    pub k: DVector<f64>,
    pub m: DMatrix<f64>,
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    pub lambda_beta: DMatrix<f64>,
    pub lambda_rho: f64,
    /// Covariance of `sqrt(n) (theta_l_hat - theta_l)` per varying coefficient.
    pub v_theta: Vec<DMatrix<f64>>,
    pub basis: SplineBasis,
    pub q: usize,
}

impl CovarianceBundle {
    /// Rows of `L2` belonging to varying coefficient `l`.
    pub fn l2_block(&self, l: usize) -> Result<DMatrix<f64>> {
        if l >= self.q {
            return Err(Error::IndexOutOfRange {
                what: "varying coefficient",
                index: l,
                len: self.q,
            });
        }
        let k = self.basis.basis_dim();
        Ok(self.l2.rows(l * k, k).clone_owned())
    }

    /// `L3 = Pi^(l) L2^(l)`, one row per observation.
    pub fn l3(&self, design: &AssembledDesign, l: usize) -> Result<DMatrix<f64>> {
        let block = self.l2_block(l)?;
        let k = self.basis.basis_dim();
        let pi_l = design.x_tilde.columns(design.block_index.pi.start + l * k, k);
        Ok(pi_l * block)
    }

    /// Diagonal of `L3 S L3'`.
    pub fn lambda_gamma_at_data(&self, design: &AssembledDesign, l: usize) -> Result<DVector<f64>> {
        let l3 = self.l3(design, l)?;
        let ls = &l3 * &self.s;
        Ok(DVector::from_fn(l3.nrows(), |i, _| ls.row(i).dot(&l3.row(i))))
    }

    /// `pi(u)' V_l pi(u)`.
    pub fn gamma_variance(&self, l: usize, u: f64) -> Result<f64> {
        let v = self.v_theta.get(l).ok_or(Error::IndexOutOfRange {
            what: "varying coefficient",
            index: l,
            len: self.q,
        })?;
        let b = self.basis.eval(u);
        Ok((v * &b).dot(&b))
    }

    /// `||M J_rho|| / ||J_rho||`.
    pub fn annihilation_ratio(&self) -> f64 {
        (&self.m * &self.j_rho).norm() / self.j_rho.norm()
    }
}

pub fn asymptotic_cov(
    estimate: &IvqrEstimate,
    design: &AssembledDesign,
    config: &IvqrConfig,
) -> Result<CovarianceBundle> {
    let n = design.n();
    let nf = n as f64;
    let tau = estimate.tau;
    if estimate.residuals.len() != n || estimate.zeta_hat.len() != design.m_e() {
        return Err(Error::Dimension {
            context: "estimate vs design",
            expected: n,
            found: estimate.residuals.len(),
        });
    }
    let weights = estimate_sparsity(&estimate.residuals, tau, &config.density)?;
    let omega = weights.values;
    let x = &design.x_tilde;
    let j_eta = linalg::weighted_gram(x, omega.as_slice()) / nf;
    let j_rho = x.tr_mul(&omega.component_mul(&design.d)) / nf;
    let s = x.tr_mul(x) * (tau * (1.0 - tau) / nf);

    let j_inv = linalg::spd_inverse(&j_eta, "J_eta")?;
    let bi = &design.block_index;
    let r_beta = j_inv.rows(bi.x.start, bi.x.len()).clone_owned();
    let r_theta = j_inv.rows(bi.pi.start, bi.pi.len()).clone_owned();
    let r_zeta = j_inv.rows(bi.e.start, bi.e.len()).clone_owned();

    let h = r_zeta.transpose() * &estimate.weight_a * &r_zeta;
    let hj = &h * &j_rho;
    let denom = j_rho.dot(&hj);
    let scale = j_rho.norm_squared() * h.norm();
    if !(denom > 1e-14 * scale) {
        return Err(Error::Singular {
            what: "J_rho' H J_rho",
            condition: if denom > 0.0 { scale / denom } else { f64::INFINITY },
        });
    }
    let k = hj / denom;
    let dim = x.ncols();
    let m = DMatrix::identity(dim, dim) - &j_rho * k.transpose();
    let l1 = &r_beta * &m;
    let l2 = &r_theta * &m;
    let lambda_beta = &l1 * &s * l1.transpose();
    let lambda_rho = (&s * &k).dot(&k);

    let kb = design.basis.basis_dim();
    let v_theta = (0..design.q)
        .map(|l| {
            let block = l2.rows(l * kb, kb);
            &block * &s * block.transpose()
        })
        .collect();

    Ok(CovarianceBundle {
        n,
        tau,
        omega,
        bandwidth: weights.bandwidth,
        j_eta,
        j_rho,
        s,
        h,
        k,
        m,
        l1,
        l2,
        lambda_beta,
        lambda_rho,
        v_theta,
        basis: design.basis.clone(),
        q: design.q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    fn new(estimate: f64, std_error: f64, z: f64) -> Self {
        Self {
            estimate,
            std_error,
            lower: estimate - z * std_error,
            upper: estimate + z * std_error,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub u: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceIntervals {
    pub alpha: f64,
    pub z: f64,
    pub rate: CiRate,
    pub rho: Interval,
    pub beta: Vec<Interval>,
    /// Pointwise bands, one list per varying coefficient.
    pub gamma: Vec<Vec<BandPoint>>,
}

pub fn confidence_intervals(
    estimate: &IvqrEstimate,
    bundle: &CovarianceBundle,
    alpha: f64,
    u_grid: &[f64],
    rate: CiRate,
) -> Result<ConfidenceIntervals> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            expected: "0 < alpha <= 1",
        });
    }
    let z = dist::normal_quantile(1.0 - alpha / 2.0);
    let nf = bundle.n as f64;
    let denom = match rate {
        CiRate::SqrtN => libm::sqrt(nf),
        CiRate::InverseN => nf,
    };
    let se = |var: f64| libm::sqrt(var.max(0.0)) / denom;
    let rho = Interval::new(estimate.rho_hat, se(bundle.lambda_rho), z);
    let beta = (0..estimate.beta_hat.len())
        .map(|j| Interval::new(estimate.beta_hat[j], se(bundle.lambda_beta[(j, j)]), z))
        .collect();
    let mut gamma = Vec::with_capacity(estimate.q);
    for l in 0..estimate.q {
        let mut band = Vec::with_capacity(u_grid.len());
        for &u in u_grid {
            let g = estimate.gamma(l, u)?;
            let var = bundle.gamma_variance(l, u)?;
            band.push(BandPoint {
                u,
                interval: Interval::new(g, se(var), z),
            });
        }
        gamma.push(band);
    }
    Ok(ConfidenceIntervals {
        alpha,
        z,
        rate,
        rho,
        beta,
        gamma,
    })
}
