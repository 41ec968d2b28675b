use nalgebra::{DMatrix, DVector};
use plvcsar_core::spline::{build_pi, default_knot_candidates, sic, sic_with_params, SicPenalty, SplineBasis};
use proptest::prelude::*;

/// Cox-de Boor recursion written directly from the definition.
fn cox_de_boor(t: &[f64], s: usize, p: usize, u: f64) -> f64 {
    if p == 0 {
        let last = t[t.len() - 1];
        let inside = t[s] <= u && u < t[s + 1];
        let at_end = u == last && t[s] < t[s + 1] && t[s + 1] == last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[s + p] - t[s];
    if d1 > 0.0 {
        v += (u - t[s]) / d1 * cox_de_boor(t, s, p - 1, u);
    }
    let d2 = t[s + p + 1] - t[s + 1];
    if d2 > 0.0 {
        v += (t[s + p + 1] - u) / d2 * cox_de_boor(t, s + 1, p - 1, u);
    }
    v
}

fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn basis_strategy() -> impl Strategy<Value = (SplineBasis, f64, f64)> {
    (
        prop::collection::vec(0.0f64..2.0, 30..80),
        0usize..6,
        0usize..4,
    )
        .prop_map(|(u, k, deg)| {
            let b = SplineBasis::make_knots(&u, k, deg).unwrap();
            let (lo, hi) = b.support();
            (b, lo, hi)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_of_unity_and_nonnegativity(
        (b, lo, hi) in basis_strategy(),
        fracs in prop::collection::vec(0.0f64..=1.0, 10),
    ) {
        for frac in fracs {
            let v = b.eval(lo + frac * (hi - lo));
            prop_assert_eq!(v.len(), b.basis_dim());
            prop_assert!(v.iter().all(|&x| x >= 0.0));
            prop_assert!((v.sum() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().filter(|&&x| x != 0.0).count() <= b.degree() + 1);
        }
    }

    #[test]
    fn local_support((b, lo, hi) in basis_strategy(), frac in 0.0f64..1.0) {
        let u = lo + frac * (hi - lo);
        let t = b.knot_vector();
        let v = b.eval(u);
        for s in 0..b.basis_dim() {
            if u < t[s] || u > t[s + b.degree() + 1] {
                prop_assert_eq!(v[s], 0.0);
            }
        }
    }

    #[test]
    fn agrees_with_recursive_definition((b, lo, hi) in basis_strategy(), frac in 0.0f64..=1.0) {
        let u = lo + frac * (hi - lo);
        let v = b.eval(u);
        for s in 0..b.basis_dim() {
            let r = cox_de_boor(b.knot_vector(), s, b.degree(), u);
            prop_assert!((v[s] - r).abs() < 1e-12, "s={} {} vs {}", s, v[s], r);
        }
    }

    #[test]
    fn build_pi_matches_loop(
        n in 5usize..40,
        q in 1usize..4,
        k in 0usize..3,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0));
        let z = DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0));
        let b = SplineBasis::cubic(u.as_slice(), k).unwrap();
        let block = build_pi(&z, &u, &b).unwrap();
        let kd = b.basis_dim();
        prop_assert_eq!(block.q_kn(), q * kd);
        for i in 0..n {
            let bi = b.eval(u[i]);
            for l in 0..q {
                for s in 0..kd {
                    prop_assert!((block.pi_matrix[(i, l * kd + s)] - z[(i, l)] * bi[s]).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn sic_log_additivity(a in 0.01f64..100.0, b in 0.01f64..100.0, n in 10usize..1000) {
        let pen = sic(1.0, n, 1, 4);
        prop_assert!((sic(a * b, n, 1, 4) - (a.ln() + b.ln() + pen)).abs() < 1e-10);
    }
}

#[test]
fn cubic_polynomials_are_reproduced() {
    let u: Vec<f64> = (0..400).map(|i| 2.0 * (i as f64 + 0.5) / 400.0).collect();
    for k in [0, 1, 3, 5] {
        let b = SplineBasis::cubic(&u, k).unwrap();
        let m = b.eval_matrix(&u);
        let target = DVector::from_iterator(u.len(), u.iter().map(|v| v * v * v - 2.0 * v + 0.5));
        let coef = m.clone().svd(true, true).solve(&target, 1e-14).unwrap();
        let err = (&m * coef - &target).amax();
        assert!(err < 1e-8, "k={k} err={err}");
    }
}

#[test]
fn quantile_knots_match_sorted_computation() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let u: Vec<f64> = (0..257).map(|_| rng.random_range(0.0..2.0)).collect();
    let mut sorted = u.clone();
    sorted.sort_by(f64::total_cmp);
    let b = SplineBasis::cubic(&u, 3).unwrap();
    let knots = b.interior_knots();
    assert_eq!(knots.len(), 3);
    for (j, &p) in [0.25, 0.5, 0.75].iter().enumerate() {
        assert!((knots[j] - type7_quantile(&sorted, p)).abs() < 1e-14);
    }
    assert_eq!(b.knot_vector().len(), 3 + 2 * 4);
    assert_eq!(b.support(), (sorted[0], sorted[256]));
}

#[test]
fn bernstein_values_at_midpoint() {
    let b = SplineBasis::from_knots(vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0], 3).unwrap();
    let v = b.eval(0.5);
    for (got, want) in v.iter().zip([0.125, 0.375, 0.375, 0.125]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn degree_zero_indicator() {
    let b = SplineBasis::from_knots(vec![0.0, 0.5, 1.0], 0).unwrap();
    assert_eq!(b.eval(0.25).as_slice(), &[1.0, 0.0]);
    assert_eq!(b.eval(0.75).as_slice(), &[0.0, 1.0]);
}

#[test]
fn unit_loading_gives_raw_basis() {
    let u = DVector::from_vec(vec![0.1, 0.4, 0.9, 1.3, 1.9, 0.7]);
    let b = SplineBasis::cubic(u.as_slice(), 1).unwrap();
    let block = build_pi(&DMatrix::from_element(6, 1, 1.0), &u, &b).unwrap();
    assert_eq!(block.pi_matrix, b.eval_matrix(u.as_slice()));

    let z = DMatrix::from_row_slice(6, 2, &[2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
    let block = build_pi(&z, &u, &b).unwrap();
    let k = b.basis_dim();
    let raw = b.eval_matrix(u.as_slice());
    assert_eq!(block.pi_matrix.columns(0, k).clone_owned(), raw * 2.0);
    assert!(block.pi_matrix.columns(k, k).iter().all(|&v| v == 0.0));
}

#[test]
fn sic_values() {
    let expected = (100f64).ln() / 200.0 * 17.0;
    assert!((sic(1.0, 100, 1, 14) - expected).abs() < 1e-12);
    assert!((expected - 0.39144).abs() < 1e-5);
    let step = sic(2.0, 100, 1, 28) - sic(2.0, 100, 1, 14);
    assert!((step - (100f64).ln() / 200.0 * 14.0).abs() < 1e-12);
    assert_eq!(sic_with_params(0.0, 50, 3), f64::NEG_INFINITY);
    assert_eq!(SicPenalty::Literal.param_count(1, 14, 3), 17);
    assert_eq!(SicPenalty::FullCount.param_count(1, 14, 3), 19);
    assert_eq!(default_knot_candidates(100), vec![0, 1, 2, 3, 4]);
}
