//! Normalized B-spline bases, the varying-coefficient design block and the
//! Schwarz-type criterion used to choose the number of interior knots.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Clamped B-spline basis on `[lo, hi]` with quantile-placed interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: Vec<f64>,
    degree: usize,
    interior: usize,
}

impl SplineBasis {
    /// Places `k_n` interior knots at the `j/(k_n+1)` empirical quantiles of
    /// `u_values` and replicates the boundary knots `degree + 1` times.
    pub fn make_knots(u_values: &[f64], k_n: usize, degree: usize) -> Result<Self> {
        if u_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite smoothing value".into()));
        }
        let mut sorted = u_values.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < 2 {
            return Err(Error::DegenerateSupport);
        }
        let mut all = u_values.to_vec();
        all.sort_by(f64::total_cmp);
        let lo = all[0];
        let hi = all[all.len() - 1];

        let mut interior: Vec<f64> = (1..=k_n)
            .map(|j| quantile_sorted(&all, j as f64 / (k_n + 1) as f64))
            .collect();
        if spread_collisions(&mut interior, lo, hi) {
            log::warn!("interior knots collided at empirical quantiles; spread between neighbours");
        }

        let mut knots = Vec::with_capacity(k_n + 2 * (degree + 1));
        knots.extend(core::iter::repeat_n(lo, degree + 1));
        knots.extend_from_slice(&interior);
        knots.extend(core::iter::repeat_n(hi, degree + 1));
        Ok(Self {
            knots,
            degree,
            interior: k_n,
        })
    }

    /// Cubic basis, the default order.
    pub fn cubic(u_values: &[f64], k_n: usize) -> Result<Self> {
        Self::make_knots(u_values, k_n, 3)
    }

    /// Basis from an explicit clamped knot vector (first and last values
    /// repeated `degree + 1` times, interior strictly inside).
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let r = degree + 1;
        if knots.len() < 2 * r {
            return Err(Error::Dimension {
                context: "knot vector",
                expected: 2 * r,
                found: knots.len(),
            });
        }
        if knots.iter().any(|v| !v.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidData("knot vector must be finite and nondecreasing".into()));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if lo >= hi {
            return Err(Error::DegenerateSupport);
        }
        let clamped = knots[..r].iter().all(|&k| k == lo)
            && knots[knots.len() - r..].iter().all(|&k| k == hi);
        let inner = &knots[r..knots.len() - r];
        if !clamped || inner.iter().any(|&k| k <= lo || k >= hi) {
            return Err(Error::InvalidData(
                "knot vector must be clamped with interior knots strictly inside".into(),
            ));
        }
        let interior = inner.len();
        Ok(Self {
            knots,
            degree,
            interior,
        })
    }

    pub fn interior_knot_count(&self) -> usize {
        self.interior
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    pub fn basis_dim(&self) -> usize {
        self.interior + self.degree + 1
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Interior knots only.
    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// Index `s` of the knot span `[t_s, t_{s+1})` holding `u`; the right
    /// endpoint belongs to the last nonempty span.
    fn span(&self, u: f64) -> usize {
        let p = self.degree;
        let last = self.knots.len() - p - 2;
        if u >= self.knots[last + 1] {
            return last;
        }
        let (mut lo, mut hi) = (p, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Writes all `basis_dim` values at `u` into `out`. Values outside the
    /// support are evaluated at the nearest endpoint.
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.basis_dim());
        let (lo, hi) = self.support();
        let u = if u < lo || u > hi {
            log::warn!("spline argument {u} outside [{lo}, {hi}]; clamped");
            u.clamp(lo, hi)
        } else {
            u
        };
        out.fill(0.0);
        let p = self.degree;
        let s = self.span(u);
        let t = &self.knots;

        // Cox-de Boor triangle for the p+1 functions nonzero on span s
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = u - t[s + 1 - j];
            right[j] = t[s + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[s - p..=s].copy_from_slice(&n);
    }

    pub fn eval(&self, u: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.basis_dim());
        self.eval_into(u, out.as_mut_slice());
        out
    }

    /// Basis matrix with one row per value of `u`.
    pub fn eval_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let k = self.basis_dim();
        let mut m = DMatrix::zeros(u.len(), k);
        let mut row = vec![0.0; k];
        for (i, &ui) in u.iter().enumerate() {
            self.eval_into(ui, &mut row);
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Type-7 empirical quantile of already sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Makes interior knots strictly increasing and strictly inside `(lo, hi)`
/// by spreading each run of coincident knots evenly over the gap between its
/// distinct neighbours. Returns whether anything moved.
fn spread_collisions(knots: &mut [f64], lo: f64, hi: f64) -> bool {
    let k = knots.len();
    let mut moved = false;
    let mut i = 0;
    while i < k {
        let left = if i == 0 { lo } else { knots[i - 1] };
        if knots[i] > left && knots[i] < hi && (i + 1 == k || knots[i + 1] > knots[i]) {
            i += 1;
            continue;
        }
        // run of knots that share a value with each other or with a boundary
        let value = knots[i];
        let mut j = i;
        while j < k && (knots[j] <= value || knots[j] >= hi) {
            j += 1;
        }
        let right = if j < k { knots[j] } else { hi };
        let right = if right > left { right } else { hi };
        let len = j - i;
        for (r, knot) in knots[i..j].iter_mut().enumerate() {
            *knot = left + (right - left) * (r + 1) as f64 / (len + 1) as f64;
        }
        moved = true;
        i = j;
    }
    moved
}

pub fn eval_basis(u: f64, basis: &SplineBasis) -> DVector<f64> {
    basis.eval(u)
}

/// The varying-coefficient block `Pi`, row `i` equal to
/// `(Z_i1 pi(U_i)', ..., Z_iq pi(U_i)')`.
#[derive(Debug, Clone, PartialEq)]
pub struct VaryingCoefBlock {
    pub pi_matrix: DMatrix<f64>,
    pub q: usize,
    pub basis_dim: usize,
}

impl VaryingCoefBlock {
    pub fn q_kn(&self) -> usize {
        self.q * self.basis_dim
    }
}

pub fn build_pi(z: &DMatrix<f64>, u: &DVector<f64>, basis: &SplineBasis) -> Result<VaryingCoefBlock> {
    let n = z.nrows();
    if u.len() != n {
        return Err(Error::Dimension {
            context: "smoothing variable vs Z rows",
            expected: n,
            found: u.len(),
        });
    }
    let q = z.ncols();
    let k = basis.basis_dim();
    let mut pi = DMatrix::zeros(n, q * k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        basis.eval_into(u[i], &mut row);
        for l in 0..q {
            let zl = z[(i, l)];
            for (s, &b) in row.iter().enumerate() {
                pi[(i, l * k + s)] = zl * b;
            }
        }
    }
    Ok(VaryingCoefBlock {
        pi_matrix: pi,
        q,
        basis_dim: k,
    })
}

/// Parameter count entering the criterion penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SicPenalty {
    /// `1 + p + q_kn + m_E`: the spatial coefficient plus every fitted
    /// coefficient, instrument block included.
    #[default]
    FullCount,
    /// `2 + p + q_kn`.
    Literal,
}

impl SicPenalty {
    pub fn param_count(self, p: usize, q_kn: usize, m_e: usize) -> usize {
        match self {
            SicPenalty::FullCount => 1 + p + q_kn + m_e,
            SicPenalty::Literal => 2 + p + q_kn,
        }
    }
}

/// `log(objective) + log(n)/(2n) * (2 + p + q_kn)`.
pub fn sic(objective: f64, n: usize, p: usize, q_kn: usize) -> f64 {
    sic_with_params(objective, n, 2 + p + q_kn)
}

/// Criterion with an explicit parameter count. A zero objective (perfect
/// interpolation) gives negative infinity.
pub fn sic_with_params(objective: f64, n: usize, params: usize) -> f64 {
    if objective <= 0.0 {
        log::warn!("zero check-loss objective; information criterion saturates at -inf");
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    libm::log(objective) + libm::log(nf) / (2.0 * nf) * params as f64
}

/// Default candidate interior-knot counts `{0, 1, ..., ceil(n^{1/4})}`.
pub fn default_knot_candidates(n: usize) -> Vec<usize> {
    let top = libm::ceil(libm::pow(n as f64, 0.25)) as usize;
    (0..=top).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotScore {
    pub k_n: usize,
    pub objective: f64,
    pub sic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotSelection {
    pub selected: usize,
    pub table: Vec<KnotScore>,
}

/// Index of the smallest score, ties toward the earlier (smaller) candidate.
pub(crate) fn argmin_first(scores: &[KnotScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if !(s.sic < scores[b].sic) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Chooses `k_n` by minimizing the criterion of the full estimator fit.
/// `fit` returns `(objective, parameter count)` for a candidate; candidates
/// that are infeasible for the sample size are skipped.
pub fn select_knots_by<F>(
    n: usize,
    candidates: &[usize],
    mut feasible: impl FnMut(usize) -> bool,
    mut fit: F,
) -> Result<KnotSelection>
where
    F: FnMut(usize) -> Result<(f64, usize)>,
{
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut table = Vec::new();
    let mut first_err = None;
    for &k in &sorted {
        if !feasible(k) {
            continue;
        }
        match fit(k) {
            Ok((objective, params)) => table.push(KnotScore {
                k_n: k,
                objective,
                sic: sic_with_params(objective, n, params),
            }),
            Err(e) => {
                log::warn!("knot candidate {k} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    match argmin_first(&table) {
        Some(i) => Ok(KnotSelection {
            selected: table[i].k_n,
            table,
        }),
        None => Err(first_err.unwrap_or(Error::NoFeasibleKnots { n })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn no_interior_knots() {
        let b = SplineBasis::make_knots(&grid(11, 0.0, 1.0), 0, 3).unwrap();
        assert_eq!(b.knot_vector(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.basis_dim(), 4);
    }

    #[test]
    fn single_knot_at_median() {
        let b = SplineBasis::make_knots(&grid(101, 0.0, 1.0), 1, 3).unwrap();
        assert!((b.interior_knots()[0] - 0.5).abs() < 1e-12);
        assert_eq!(b.knot_vector().len(), 1 + 2 * 4);
    }

    #[test]
    fn degenerate_support() {
        assert_eq!(
            SplineBasis::make_knots(&[1.0, 1.0, 1.0], 1, 3),
            Err(Error::DegenerateSupport)
        );
    }

    #[test]
    fn collisions_are_spread() {
        let mut u = vec![0.0; 50];
        u.extend(grid(10, 0.1, 1.0));
        let b = SplineBasis::make_knots(&u, 4, 3).unwrap();
        let inner = b.interior_knots();
        assert!(inner.windows(2).all(|w| w[1] > w[0]));
        assert!(inner.iter().all(|&k| k > 0.0 && k < 1.0));
    }

    #[test]
    fn degree_zero_indicator() {
        let b = SplineBasis::from_knots(vec![0.0, 0.5, 1.0], 0).unwrap();
        assert_eq!(b.eval(0.25).as_slice(), &[1.0, 0.0]);
        assert_eq!(b.eval(1.0).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn cubic_bernstein_at_midpoint() {
        let b = SplineBasis::from_knots(vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0], 3).unwrap();
        let v = b.eval(0.5);
        for (a, e) in v.iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn endpoints_and_clamping() {
        let b = SplineBasis::make_knots(&grid(20, 0.0, 2.0), 2, 3).unwrap();
        let first = b.eval(0.0);
        assert_eq!(first[0], 1.0);
        let last = b.eval(2.0);
        assert_eq!(last[b.basis_dim() - 1], 1.0);
        assert_eq!(b.eval(-1.0), first);
        assert_eq!(b.eval(3.0), last);
    }

    #[test]
    fn build_pi_scaling() {
        let u = DVector::from_row_slice(&[0.2, 0.7]);
        let basis = SplineBasis::make_knots(&[0.0, 0.5, 1.0], 0, 3).unwrap();
        let z = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        let pi = build_pi(&z, &u, &basis).unwrap();
        assert_eq!(pi.q_kn(), 8);
        let b0 = basis.eval(0.2);
        for s in 0..4 {
            assert_eq!(pi.pi_matrix[(0, s)], 2.0 * b0[s]);
            assert_eq!(pi.pi_matrix[(0, 4 + s)], 0.0);
        }
    }

    #[test]
    fn sic_arithmetic() {
        let v = sic(1.0, 100, 1, 14);
        assert!((v - libm::log(100.0) / 200.0 * 17.0).abs() < 1e-15);
        assert!((v - 0.391_439).abs() < 1e-5);
        let a = sic(2.0 * 3.0, 50, 1, 4);
        let b = libm::log(2.0) + libm::log(3.0) + libm::log(50.0) / 100.0 * 7.0;
        assert!((a - b).abs() < 1e-14);
        let d = sic(1.5, 50, 1, 8) - sic(1.5, 50, 1, 4);
        assert!((d - libm::log(50.0) / 100.0 * 4.0).abs() < 1e-14);
        assert_eq!(sic(0.0, 10, 1, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn knot_candidates_default() {
        assert_eq!(default_knot_candidates(100), vec![0, 1, 2, 3, 4]);
        assert_eq!(default_knot_candidates(16), vec![0, 1, 2]);
    }

    #[test]
    fn selection_ties_prefer_fewer_knots() {
        let sel = select_knots_by(100, &[3, 1, 2], |_| true, |_| Ok((1.0, 5))).unwrap();
        assert_eq!(sel.selected, 1);
        let single = select_knots_by(100, &[4], |_| true, |k| Ok((1.0 + k as f64, 5))).unwrap();
        assert_eq!(single.selected, 4);
        assert!(matches!(
            select_knots_by(10, &[1, 2], |_| false, |_| Ok((1.0, 1))),
            Err(Error::NoFeasibleKnots { n: 10 })
        ));
    }
}
