//! Exact minimization of the quantile check loss over a linear design.
//!
//! [`solve_qr`] runs a primal-dual (Frisch-Newton, Mehrotra predictor-corrector)
//! interior point method on the bounded dual of the check-loss LP:
//!
//! ```text
//! max  y'a   s.t.  X'a = (1 - tau) X'1,  0 <= a <= 1
//! ```
//!
//! When the optimum is unique the interior-point limit is a vertex of the
//! primal problem (an exact fit through `m` observations); the result is then
//! purified to that vertex. On flat faces the interior-point point is kept.
//!
//! [`VertexPath`] walks between vertices by one-observation exchanges and is
//! used for families of problems that share a design but differ in the
//! response, as in the grid over the spatial coefficient.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_tau, DesignBlock, Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative duality-gap stopping tolerance.
    pub gap_tol: f64,
    /// Relative column-rank tolerance for the design check.
    pub rank_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            rank_tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// A validated check-loss minimization problem.
#[derive(Debug, Clone, Copy)]
pub struct CheckLossProblem<'a> {
    design: &'a DMatrix<f64>,
    response: &'a DVector<f64>,
    tau: f64,
}

impl<'a> CheckLossProblem<'a> {
    pub fn new(design: &'a DMatrix<f64>, response: &'a DVector<f64>, tau: f64) -> Result<Self> {
        Self::with_rank_tol(design, response, tau, SolverConfig::default().rank_tol)
    }

    pub fn with_rank_tol(
        design: &'a DMatrix<f64>,
        response: &'a DVector<f64>,
        tau: f64,
        rank_tol: f64,
    ) -> Result<Self> {
        check_tau(tau)?;
        let (n, m) = design.shape();
        if m == 0 {
            return Err(Error::InvalidData("design has no columns".into()));
        }
        if response.len() != n {
            return Err(Error::Dimension {
                context: "check-loss response",
                expected: n,
                found: response.len(),
            });
        }
        if n < m {
            return Err(Error::InvalidData(alloc::format!(
                "{n} observations cannot identify {m} coefficients"
            )));
        }
        if !design.iter().chain(response.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in design or response".into()));
        }
        let rank = linalg::rank(design, rank_tol);
        if rank < m {
            return Err(Error::DegenerateDesign {
                block: DesignBlock::Whole,
                rank,
                columns: m,
            });
        }
        Ok(Self {
            design,
            response,
            tau,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        self.response
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub objective: f64,
    /// Observations fitted exactly (zero residual).
    pub n_interpolated: usize,
    /// Set when the minimizer is not unique and the returned point lies on a
    /// flat face of the objective.
    pub degenerate: bool,
    pub iterations: usize,
}

/// The check function `u * (tau - I(u < 0))`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho_tau(u, tau))
}

/// The score `tau - I(u < 0)`, with `psi(0) = tau`.
pub fn psi(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(psi_tau(u, tau))
}

#[inline]
pub(crate) fn rho_tau(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

#[inline]
pub(crate) fn psi_tau(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        tau - 1.0
    } else {
        tau
    }
}

/// Total check loss of a residual vector.
pub fn objective(residuals: &DVector<f64>, tau: f64) -> f64 {
    residuals.iter().map(|&r| rho_tau(r, tau)).sum()
}

pub fn solve_qr(problem: &CheckLossProblem<'_>) -> Result<QrFit> {
    solve_qr_with(problem, &SolverConfig::default())
}

pub fn solve_qr_with(problem: &CheckLossProblem<'_>, config: &SolverConfig) -> Result<QrFit> {
    let x = problem.design;
    let y = problem.response;
    let tau = problem.tau;
    let m = x.ncols();

    let (beta, iterations) = interior_point(x, y, tau, config)?;
    let residuals = y - x * &beta;
    let ip_objective = objective(&residuals, tau);

    // Purify to the vertex when the optimum is a unique exact-fit point.
    let mut basis = basis_from_residuals(x, &residuals);
    if basis.len() == m {
        if let Ok(vertex) = descend(x, y, tau, &mut basis, 4 * m + 20) {
            let tol = 1e-9 * (1.0 + ip_objective);
            if vertex.unique && vertex.objective <= ip_objective + tol {
                return Ok(vertex.into_fit(iterations));
            }
        }
    }

    Ok(interior_fit(beta, residuals, y, tau, m, iterations))
}

fn interior_fit(
    beta: DVector<f64>,
    residuals: DVector<f64>,
    y: &DVector<f64>,
    tau: f64,
    m: usize,
    iterations: usize,
) -> QrFit {
    let zero_tol = 1e-7 * (1.0 + y.amax());
    let n_interpolated = residuals.iter().filter(|r| r.abs() <= zero_tol).count();
    QrFit {
        coefficients: beta,
        objective: objective(&residuals, tau),
        residuals,
        n_interpolated,
        degenerate: n_interpolated < m,
        iterations,
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&vi, &d)| -vi / d)
        .fold(f64::INFINITY, f64::min)
}

/// Frisch-Newton predictor-corrector on the bounded dual. Returns the primal
/// coefficients and the number of iterations used.
fn interior_point(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    config: &SolverConfig,
) -> Result<(DVector<f64>, usize)> {
    let n = x.nrows();
    let two_n = 2.0 * n as f64;

    let c = -y;
    let b = x.tr_mul(&DVector::from_element(n, 1.0 - tau));
    let mut xa = DVector::from_element(n, 1.0 - tau);
    let mut s = DVector::from_element(n, tau);

    let gram = x.tr_mul(x);
    let chol = gram.cholesky().ok_or(Error::Singular {
        what: "design Gram matrix",
        condition: f64::INFINITY,
    })?;
    let mut lam = chol.solve(&x.tr_mul(&c));

    let r = &c - x * &lam;
    let mean_abs = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let delta = (1e-2 * mean_abs).max(1e-10);
    let mut z = r.map(|v| v.max(0.0) + delta);
    let mut w = r.map(|v| (-v).max(0.0) + delta);

    let mut alpha_p = 1.0;
    let mut alpha_d = 1.0;
    let mut gap = f64::INFINITY;

    for it in 0..config.max_iter {
        gap = xa.dot(&z) + s.dot(&w);
        let obj_est: f64 = w
            .iter()
            .zip(z.iter())
            .map(|(&wi, &zi)| rho_tau(wi - zi, tau))
            .sum();
        if gap <= config.gap_tol * (1.0 + obj_est) {
            return Ok((-lam, it));
        }

        let q = DVector::from_fn(n, |i, _| 1.0 / (z[i] / xa[i] + w[i] / s[i]));
        let rp = &b - x.tr_mul(&xa);
        let rd = &c - x * &lam - &z + &w;

        let normal = linalg::weighted_gram(x, q.as_slice());
        let Some(chol) = normal.cholesky() else {
            return Err(Error::SolverFailure {
                iterations: it,
                gap,
                primal_step: alpha_p,
                dual_step: alpha_d,
            });
        };

        // affine-scaling predictor
        let rt = &rd + &z - &w;
        let dlam = chol.solve(&(&rp + x.tr_mul(&q.component_mul(&rt))));
        let dx = q.component_mul(&(x * &dlam - &rt));
        let ds = -&dx;
        let dz = DVector::from_fn(n, |i, _| -z[i] - z[i] * dx[i] / xa[i]);
        let dw = DVector::from_fn(n, |i, _| -w[i] - w[i] * ds[i] / s[i]);

        let ap = 1.0_f64.min(max_step(&xa, &dx)).min(max_step(&s, &ds));
        let ad = 1.0_f64.min(max_step(&z, &dz)).min(max_step(&w, &dw));
        let mu = gap / two_n;
        let mut mu_aff = 0.0;
        for i in 0..n {
            mu_aff += (xa[i] + ap * dx[i]) * (z[i] + ad * dz[i])
                + (s[i] + ap * ds[i]) * (w[i] + ad * dw[i]);
        }
        mu_aff /= two_n;
        let ratio = mu_aff / mu;
        let sigma = ratio * ratio * ratio;
        let target = sigma * mu;

        // corrector
        let rhs_xz = DVector::from_fn(n, |i, _| target - xa[i] * z[i] - dx[i] * dz[i]);
        let rhs_sw = DVector::from_fn(n, |i, _| target - s[i] * w[i] - ds[i] * dw[i]);
        let rt = DVector::from_fn(n, |i, _| rd[i] - rhs_xz[i] / xa[i] + rhs_sw[i] / s[i]);
        let dlam = chol.solve(&(&rp + x.tr_mul(&q.component_mul(&rt))));
        let dx = q.component_mul(&(x * &dlam - &rt));
        let ds = -&dx;
        let dz = DVector::from_fn(n, |i, _| (rhs_xz[i] - z[i] * dx[i]) / xa[i]);
        let dw = DVector::from_fn(n, |i, _| (rhs_sw[i] - w[i] * ds[i]) / s[i]);

        alpha_p = 1.0_f64.min(0.99995 * max_step(&xa, &dx).min(max_step(&s, &ds)));
        alpha_d = 1.0_f64.min(0.99995 * max_step(&z, &dz).min(max_step(&w, &dw)));

        xa.axpy(alpha_p, &dx, 1.0);
        s.axpy(alpha_p, &ds, 1.0);
        lam.axpy(alpha_d, &dlam, 1.0);
        z.axpy(alpha_d, &dz, 1.0);
        w.axpy(alpha_d, &dw, 1.0);

        if !(lam.iter().all(|v| v.is_finite())) {
            break;
        }
    }

    Err(Error::SolverFailure {
        iterations: config.max_iter,
        gap,
        primal_step: alpha_p,
        dual_step: alpha_d,
    })
}

/// Picks `m` observations with the smallest absolute residuals whose design
/// rows are linearly independent.
fn basis_from_residuals(x: &DMatrix<f64>, residuals: &DVector<f64>) -> Vec<usize> {
    let (n, m) = x.shape();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residuals[a].abs().total_cmp(&residuals[b].abs()));
    let mut accepted: Vec<usize> = Vec::with_capacity(m);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(m);
    for &i in &order {
        if accepted.len() == m {
            break;
        }
        let row = x.row(i).transpose();
        let norm0 = row.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = row;
        for _ in 0..2 {
            for qv in &ortho {
                let c = qv.dot(&v);
                v.axpy(-c, qv, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            ortho.push(v / norm);
            accepted.push(i);
        }
    }
    accepted
}

struct Vertex {
    coefficients: DVector<f64>,
    residuals: DVector<f64>,
    objective: f64,
    unique: bool,
    pivots: usize,
}

impl Vertex {
    fn into_fit(self, iterations: usize) -> QrFit {
        let n_interpolated = self.residuals.iter().filter(|r| **r == 0.0).count();
        QrFit {
            coefficients: self.coefficients,
            residuals: self.residuals,
            objective: self.objective,
            n_interpolated,
            degenerate: !self.unique,
            iterations: iterations + self.pivots,
        }
    }
}

/// Edge-descent from the vertex defined by `basis` until no edge decreases
/// the objective. Each pivot swaps one basic observation for the observation
/// at which the directional derivative along the chosen edge turns
/// nonnegative.
fn descend(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    basis: &mut Vec<usize>,
    max_pivots: usize,
) -> Result<Vertex> {
    let (n, m) = x.shape();
    let mut in_basis = vec![false; n];
    for &i in basis.iter() {
        in_basis[i] = true;
    }
    let fail = |pivots: usize| Error::SolverFailure {
        iterations: pivots,
        gap: f64::NAN,
        primal_step: 0.0,
        dual_step: 0.0,
    };

    let scale = 1.0 + y.amax();
    let snap = 1e-11 * scale;
    let mut pivots = 0;
    // after a zero-length pivot, edges are chosen by lowest index to avoid cycling
    let mut stalled = false;
    let mut breakpoints: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    loop {
        let xh = linalg::select_rows(x, basis);
        let inv = xh.try_inverse().ok_or_else(|| fail(pivots))?;
        let yh = DVector::from_iterator(m, basis.iter().map(|&i| y[i]));
        let coef = &inv * yh;
        let mut r = y - x * &coef;
        for ri in r.iter_mut() {
            if ri.abs() <= snap {
                *ri = 0.0;
            }
        }
        for &i in basis.iter() {
            r[i] = 0.0;
        }
        if r.iter().all(|&ri| ri == 0.0) {
            return Ok(Vertex {
                coefficients: coef,
                residuals: r,
                objective: 0.0,
                unique: n == m,
                pivots,
            });
        }
        let mut psi = DVector::from_fn(n, |i, _| psi_tau(r[i], tau));
        for &i in basis.iter() {
            psi[i] = 0.0;
        }
        let v = inv.tr_mul(&x.tr_mul(&psi));
        let tol = 1e-10 * (1.0 + v.amax());

        // most negative edge derivative; sign +1 drops the basic observation
        // below the fit, -1 above it
        let mut best: Option<(usize, f64, f64)> = None;
        let mut all_strict = true;
        for k in 0..m {
            let up = (1.0 - tau) - v[k];
            let down = tau + v[k];
            if up <= tol || down <= tol {
                all_strict = false;
            }
            for (slope, sign) in [(up, 1.0), (down, -1.0)] {
                let better = match best {
                    None => true,
                    Some((bk, _, b)) => {
                        if stalled {
                            basis[k] < basis[bk] || basis[k] == basis[bk] && slope < b
                        } else {
                            slope < b
                        }
                    }
                };
                if slope < -tol && better {
                    best = Some((k, sign, slope));
                }
            }
        }

        let Some((k, sign, slope0)) = best else {
            let ties = r.iter().enumerate().any(|(i, &ri)| !in_basis[i] && ri == 0.0);
            let obj = objective(&r, tau);
            return Ok(Vertex {
                coefficients: coef,
                residuals: r,
                objective: obj,
                unique: all_strict && !ties,
                pivots,
            });
        };

        pivots += 1;
        if pivots > max_pivots {
            return Err(fail(pivots));
        }

        let direction = inv.column(k) * sign;
        let zdir = x * direction;
        breakpoints.clear();
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            let (ri, zi) = (r[i], zdir[i]);
            if (ri >= 0.0 && zi > 0.0) || (ri < 0.0 && zi < 0.0) {
                breakpoints.push((ri / zi, zi.abs(), i));
            }
        }
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(t, step, i) in breakpoints.iter() {
            slope += step;
            if slope >= 0.0 {
                entering = Some(i);
                stalled = t <= 0.0;
                break;
            }
        }
        let entering = entering.ok_or_else(|| fail(pivots))?;
        in_basis[basis[k]] = false;
        in_basis[entering] = true;
        basis[k] = entering;
    }
}

/// Warm-started vertex solver for a sequence of responses sharing one design.
///
/// The first response is solved by the interior point method and converted to
/// a vertex; later responses start from the previous optimal basis. If a
/// descent stalls, the point is re-solved from scratch.
#[derive(Debug, Clone)]
pub struct VertexPath<'a> {
    design: &'a DMatrix<f64>,
    tau: f64,
    basis: Vec<usize>,
    config: SolverConfig,
    max_pivots: usize,
}

impl<'a> VertexPath<'a> {
    pub fn new(problem: &CheckLossProblem<'a>, config: SolverConfig) -> Self {
        let (n, m) = problem.design.shape();
        Self {
            design: problem.design,
            tau: problem.tau,
            basis: Vec::new(),
            config,
            max_pivots: 10 * (n + m),
        }
    }

    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// Solves for `response`; the design is the one the path was created with
    /// and is assumed to have passed the rank check already.
    pub fn solve(&mut self, response: &DVector<f64>) -> Result<QrFit> {
        let m = self.design.ncols();
        if self.basis.len() == m {
            let mut basis = self.basis.clone();
            if let Ok(v) = descend(self.design, response, self.tau, &mut basis, self.max_pivots) {
                self.basis = basis;
                return Ok(v.into_fit(0));
            }
        }
        self.cold_start(response)
    }

    fn cold_start(&mut self, response: &DVector<f64>) -> Result<QrFit> {
        let m = self.design.ncols();
        let (beta, iterations) = interior_point(self.design, response, self.tau, &self.config)?;
        let residuals = response - self.design * &beta;
        let mut basis = basis_from_residuals(self.design, &residuals);
        if basis.len() < m {
            return Err(Error::DegenerateDesign {
                block: DesignBlock::Whole,
                rank: basis.len(),
                columns: m,
            });
        }
        match descend(self.design, response, self.tau, &mut basis, self.max_pivots) {
            Ok(v) => {
                self.basis = basis;
                Ok(v.into_fit(iterations))
            }
            Err(_) => {
                log::debug!("vertex descent stalled; keeping the interior point solution");
                self.basis.clear();
                Ok(interior_fit(beta, residuals, response, self.tau, m, iterations))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(1.0, 0.5).unwrap(), 0.5);
        assert_eq!(check_loss(-2.0, 0.25).unwrap(), 1.5);
        assert_eq!(check_loss(0.0, 0.9).unwrap(), 0.0);
        assert!(matches!(check_loss(1.0, 1.0), Err(Error::Domain { .. })));
        assert!(check_loss(1.0, 0.0).is_err());
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(0.3, 0.5).unwrap(), 0.5);
        assert_eq!(psi(-0.3, 0.5).unwrap(), -0.5);
        assert_eq!(psi(-1.0, 0.25).unwrap(), -0.75);
        assert_eq!(psi(0.0, 0.25).unwrap(), 0.25);
        assert!(psi(0.1, -0.2).is_err());
    }

    #[test]
    fn median_of_three() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let fit = solve_qr(&CheckLossProblem::new(&x, &y, 0.5).unwrap()).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((fit.objective - 1.0).abs() < 1e-9);
        assert!(!fit.degenerate);
        assert_eq!(fit.n_interpolated, 1);
    }

    #[test]
    fn flat_face_quartile() {
        // every b in [1, 2] is optimal; the objective is what must match
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let fit = solve_qr(&CheckLossProblem::new(&x, &y, 0.25).unwrap()).unwrap();
        let brute = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&b| objective(&y.map(|v| v - b), 0.25))
            .fold(f64::INFINITY, f64::min);
        assert!((fit.objective - brute).abs() < 1e-8);
        let b = fit.coefficients[0];
        assert!((1.0 - 1e-6..=2.0 + 1e-6).contains(&b));
    }

    #[test]
    fn rejects_rank_deficient_design() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            CheckLossProblem::new(&x, &y, 0.5),
            Err(Error::DegenerateDesign { .. })
        ));
    }

    #[test]
    fn rejects_bad_tau_and_dimensions() {
        let x = column(&[1.0, 1.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0]);
        assert!(CheckLossProblem::new(&x, &y, 1.5).is_err());
        let short = DVector::from_row_slice(&[1.0]);
        assert!(matches!(
            CheckLossProblem::new(&x, &short, 0.5),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn vertex_path_matches_fresh_solves() {
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => libm::sin(i as f64 * 0.7),
            _ => libm::cos(i as f64 * 1.3) * (1.0 + 0.1 * i as f64),
        });
        let base = DVector::from_fn(n, |i, _| libm::sin(i as f64 * 2.1) + 0.05 * i as f64);
        let shift = DVector::from_fn(n, |i, _| libm::cos(i as f64 * 0.4));
        let problem = CheckLossProblem::new(&x, &base, 0.3).unwrap();
        let mut path = VertexPath::new(&problem, SolverConfig::default());
        for step in 0..30 {
            let rho = -0.9 + 0.06 * step as f64;
            let y = &base - &shift * rho;
            let warm = path.solve(&y).unwrap();
            let cold = solve_qr(&CheckLossProblem::new(&x, &y, 0.3).unwrap()).unwrap();
            assert!((warm.objective - cold.objective).abs() < 1e-8, "rho {rho}");
            assert!(warm.n_interpolated >= 3);
        }
    }
}
