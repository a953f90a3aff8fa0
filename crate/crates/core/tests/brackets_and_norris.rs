use fbmlab::fbm::sample_cholesky;
use fbmlab::hormander::{hormander_check, lie_bracket, strong_hormander_flag, BracketMode};
use fbmlab::norris::{coarse_qv, norris_sweep, CoarseQvConfig, Scenario, SweepConfig};
use fbmlab::poly::{Monomial, Polynomial, VectorField};
use fbmlab::{systems, HurstParameter, TimeGrid};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn poly_strategy(n: usize) -> impl Strategy<Value = Polynomial> {
    proptest::collection::vec((-3i32..=3, proptest::collection::vec(0u32..=2, n)), 0..4).prop_map(
        move |terms| {
            let monomials: Vec<Monomial> = terms
                .into_iter()
                .map(|(c, exps)| Monomial {
                    coeff: c as f64,
                    exps,
                })
                .collect();
            Polynomial::from_monomials(n, &monomials).unwrap()
        },
    )
}

fn field_strategy(n: usize) -> impl Strategy<Value = VectorField> {
    proptest::collection::vec(poly_strategy(n), n).prop_map(|c| VectorField::new(c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobi_identity_is_exact(u in field_strategy(3), v in field_strategy(3), w in field_strategy(3)) {
        let a = lie_bracket(&u, &lie_bracket(&v, &w).unwrap()).unwrap();
        let b = lie_bracket(&v, &lie_bracket(&w, &u).unwrap()).unwrap();
        let c = lie_bracket(&w, &lie_bracket(&u, &v).unwrap()).unwrap();
        prop_assert!(a.add(&b).add(&c).is_zero());
    }

    #[test]
    fn bracket_is_antisymmetric_and_bilinear(u in field_strategy(2), v in field_strategy(2), w in field_strategy(2), s in -3i32..=3) {
        let uv = lie_bracket(&u, &v).unwrap();
        prop_assert!(uv.add(&lie_bracket(&v, &u).unwrap()).is_zero());
        let lhs = lie_bracket(&u.add(&w.scale(s as f64)), &v).unwrap();
        let rhs = uv.add(&lie_bracket(&w, &v).unwrap().scale(s as f64));
        prop_assert!(lhs.add(&rhs.scale(-1.0)).is_zero());
    }

    #[test]
    fn block_sums_reproduce_quadratic_variation(seed in 0u64..200, blocks in 1usize..5, r in 1usize..9) {
        let cfg = CoarseQvConfig::from_counts(blocks, r).unwrap();
        let grid = TimeGrid::unit(cfg.n_fine() * 2).unwrap();
        let p = &sample_cholesky(HurstParameter::new(0.7).unwrap(), grid, 2, 1, seed).unwrap()[0];
        let stats = coarse_qv(p, &cfg).unwrap();
        for i in 0..2 {
            let qv: f64 = (0..cfg.n_fine()).map(|n| (p.values[i][2 * n + 2] - p.values[i][2 * n]).powi(2)).sum();
            prop_assert!((stats.total_diagonal(i) - qv).abs() <= 1e-12 * (1.0 + qv));
        }
    }
}

#[test]
fn span_level_is_invariant_under_field_recombination() {
    let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
    for (sys, x) in [
        (systems::heisenberg(), vec![0.0, 0.0, 0.0]),
        (systems::grushin(), vec![0.0, 0.0]),
        (systems::grushin(), vec![0.5, 1.0]),
    ] {
        let base = hormander_check(&sys, &x, 4, BracketMode::Weak).unwrap();
        let mixed =
            hormander_check(&sys.recombine_fields(&m).unwrap(), &x, 4, BracketMode::Weak).unwrap();
        assert_eq!(base.n_star, mixed.n_star);
    }
}

#[test]
fn strong_flag_agrees_with_span_test_without_drift() {
    for (sys, x) in [
        (systems::heisenberg(), vec![0.2, -0.1, 0.4]),
        (systems::elliptic(3), vec![0.0; 3]),
        (systems::grushin(), vec![1.0, 0.0]),
    ] {
        let flag = strong_hormander_flag(&sys, &x, 5).unwrap();
        let weak = hormander_check(&sys, &x, 5, BracketMode::Weak).unwrap();
        assert_eq!(flag.r, weak.n_star);
        let d = flag.homogeneous_dimension.unwrap();
        assert!(d >= sys.n);
        assert_eq!(d == sys.n, flag.r == Some(1));
        assert!(flag.growth_vector.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn sweep_probability_shrinks_with_epsilon() {
    let h = HurstParameter::new(0.7).unwrap();
    let eps = [0.3, 0.2, 0.1];
    let cfg = SweepConfig {
        n_paths: 3000,
        seed: 5,
        n_steps: 128,
    };
    let rep = norris_sweep(&Scenario::heisenberg_pullback(), h, &eps, &cfg).unwrap();
    for q in [0.1, 0.5, 1.0] {
        let cells: Vec<_> = rep
            .table
            .iter()
            .filter(|c| (c.q - q).abs() < 1e-9)
            .collect();
        for w in cells.windows(2) {
            let se = (w[0].probability * (1.0 - w[0].probability) / 3000.0).sqrt();
            assert!(
                w[1].probability <= w[0].probability + 3.0 * se + 1e-12,
                "q = {q}: {:?}",
                cells
            );
        }
    }
}
