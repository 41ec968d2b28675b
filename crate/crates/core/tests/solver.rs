use nalgebra::{DMatrix, DVector};
use plvcsar_core::qr_solver::{check_loss, objective, solve_qr, CheckLossProblem};
use proptest::prelude::*;

/// Minimum check loss over every exact fit through `m` observations.
fn vertex_minimum(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
    let (n, m) = x.shape();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let xh = DMatrix::from_fn(m, m, |i, j| x[(idx[i], j)]);
        let yh = DVector::from_fn(m, |i, _| y[idx[i]]);
        if xh.determinant().abs() > 1e-10 {
            if let Some(b) = xh.lu().solve(&yh) {
                let r = y - x * b;
                best = best.min(r.iter().map(|&v| check_loss(v, tau).unwrap()).sum());
            }
        }
        // next combination
        let mut k = m;
        while k > 0 && idx[k - 1] == n - m + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, f64)> {
    (1usize..=3, 0usize..=9, prop::sample::select(vec![0.25, 0.5, 0.75])).prop_flat_map(|(m, extra, tau)| {
        let n = m + 1 + extra;
        (
            prop::collection::vec(-3.0f64..3.0, n * m),
            prop::collection::vec(-5.0f64..5.0, n),
            Just((n, m, tau)),
        )
            .prop_map(|(xs, ys, (n, m, tau))| (DMatrix::from_vec(n, m, xs), DVector::from_vec(ys), tau))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_vertex_enumeration((x, y, tau) in instance()) {
        let problem = CheckLossProblem::new(&x, &y, tau).unwrap();
        let fit = solve_qr(&problem).unwrap();
        let oracle = vertex_minimum(&x, &y, tau);
        prop_assert!((fit.objective - oracle).abs() <= 1e-8 * (1.0 + oracle), "{} vs {}", fit.objective, oracle);
    }

    #[test]
    fn fit_invariants((x, y, tau) in instance()) {
        let fit = solve_qr(&CheckLossProblem::new(&x, &y, tau).unwrap()).unwrap();
        let r = &y - &x * &fit.coefficients;
        prop_assert!((r - &fit.residuals).amax() < 1e-9);
        prop_assert!((objective(&fit.residuals, tau) - fit.objective).abs() < 1e-10);
        prop_assert!(fit.objective >= 0.0);
        prop_assert!(fit.degenerate || fit.n_interpolated >= x.ncols());
    }

    #[test]
    fn optimality_certificate((x, y, tau) in instance()) {
        let fit = solve_qr(&CheckLossProblem::new(&x, &y, tau).unwrap()).unwrap();
        let delta = 1e-6 * (1.0 + fit.coefficients.amax());
        for j in 0..x.ncols() {
            for sign in [-1.0, 1.0] {
                let mut b = fit.coefficients.clone();
                b[j] += sign * delta;
                let moved = objective(&(&y - &x * &b), tau);
                prop_assert!(moved >= fit.objective - 1e-9);
            }
        }
    }

    #[test]
    fn scale_equivariance((x, y, tau) in instance(), c in 0.1f64..10.0) {
        let fit = solve_qr(&CheckLossProblem::new(&x, &y, tau).unwrap()).unwrap();
        let yc = &y * c;
        let scaled = solve_qr(&CheckLossProblem::new(&x, &yc, tau).unwrap()).unwrap();
        prop_assert!((scaled.objective - c * fit.objective).abs() <= 1e-10 * (1.0 + c * fit.objective) + 1e-9);
        if !fit.degenerate && !scaled.degenerate {
            let diff = (&scaled.coefficients - &fit.coefficients * c).amax();
            prop_assert!(diff <= 1e-8 * (1.0 + c * fit.coefficients.amax()));
        }
    }

    #[test]
    fn reparameterization((x, y, tau) in instance(), t in prop::collection::vec(-2.0f64..2.0, 9)) {
        let m = x.ncols();
        let mut tm = DMatrix::from_fn(m, m, |i, j| t[i * 3 + j]);
        for i in 0..m {
            tm[(i, i)] += 3.0;
        }
        prop_assume!(tm.determinant().abs() > 0.5);
        let fit = solve_qr(&CheckLossProblem::new(&x, &y, tau).unwrap()).unwrap();
        let xt = &x * &tm;
        let other = solve_qr(&CheckLossProblem::new(&xt, &y, tau).unwrap()).unwrap();
        prop_assert!((other.objective - fit.objective).abs() <= 1e-8 * (1.0 + fit.objective));
        if !fit.degenerate && !other.degenerate {
            let d = (&x * &fit.coefficients - &xt * &other.coefficients).amax();
            prop_assert!(d < 1e-8 * (1.0 + y.amax()));
        }
    }
}

#[test]
fn two_columns_six_rows() {
    let x = DMatrix::from_row_slice(
        6,
        2,
        &[1.0, 0.3, 1.0, -1.2, 1.0, 2.5, 1.0, 0.7, 1.0, -0.4, 1.0, 1.9],
    );
    let y = DVector::from_vec(vec![0.8, -1.5, 3.1, 0.2, 0.1, 2.2]);
    let fit = solve_qr(&CheckLossProblem::new(&x, &y, 0.5).unwrap()).unwrap();
    assert!((fit.objective - vertex_minimum(&x, &y, 0.5)).abs() < 1e-8);
}

#[test]
fn quartile_of_four_attains_brute_force_minimum() {
    let x = DMatrix::from_element(4, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
    let fit = solve_qr(&CheckLossProblem::new(&x, &y, 0.25).unwrap()).unwrap();
    let scan = (0..4)
        .map(|k| objective(&y.map(|v| v - y[k]), 0.25))
        .fold(f64::INFINITY, f64::min);
    assert!((fit.objective - scan).abs() < 1e-10);
    let at_one = objective(&y.map(|v| v - 1.0), 0.25);
    assert!((fit.objective - at_one).abs() < 1e-10);
}

#[test]
fn larger_problem_is_consistent() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let n = 400;
    let x = DMatrix::from_fn(n, 4, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let y = DVector::from_fn(n, |i, _| x[(i, 1)] - 2.0 * x[(i, 2)] + rng.random_range(-0.5..0.5));
    let fit = solve_qr(&CheckLossProblem::new(&x, &y, 0.5).unwrap()).unwrap();
    assert!((fit.coefficients[1] - 1.0).abs() < 0.15);
    assert!((fit.coefficients[2] + 2.0).abs() < 0.15);
    assert!(fit.n_interpolated >= 4);
}
