use fbmlab::fbm::sample_cholesky;
use fbmlab::frac::{h_inner_frac, h_inner_kernel, HSpaceElement};
use fbmlab::holder::SampledPath;
use fbmlab::malliavin::{bump_check, c1_matrix, derivative_paths, gamma_matrix};
use fbmlab::sde::{flow_derivative_check, solve, solve_variation, Scheme};
use fbmlab::{systems, HurstParameter, TimeGrid};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn hurst(h: f64) -> HurstParameter {
    HurstParameter::new(h).unwrap()
}

fn step_element(h: HurstParameter, grid: TimeGrid, levels: &[f64]) -> HSpaceElement {
    let n = grid.n_steps();
    let k = levels.len();
    let values: Vec<f64> = (0..=n)
        .map(|i| levels[(i * k / (n + 1)).min(k - 1)])
        .collect();
    HSpaceElement::new(SampledPath::scalar(grid, values).unwrap(), h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn kernel_and_fractional_forms_agree(h in 0.6f64..0.9, a in proptest::collection::vec(-2.0f64..2.0, 4), b in proptest::collection::vec(-2.0f64..2.0, 4)) {
        let hp = hurst(h);
        let grid = TimeGrid::unit(128).unwrap();
        let (phi, psi) = (step_element(hp, grid, &a), step_element(hp, grid, &b));
        let k = h_inner_kernel(&phi, &psi).unwrap();
        let f = h_inner_frac(&phi, &psi).unwrap();
        let scale = (h_inner_kernel(&phi, &phi).unwrap() * h_inner_kernel(&psi, &psi).unwrap()).sqrt();
        prop_assert!((k - f).abs() <= 0.01 * scale, "kernel {} frac {} scale {}", k, f, scale);
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite(h in 0.55f64..0.95, seed in 0u64..500) {
        let hp = hurst(h);
        let grid = TimeGrid::unit(64).unwrap();
        let paths = sample_cholesky(hp, grid, 5, 1, seed).unwrap();
        let elems: Vec<HSpaceElement> = paths[0]
            .values
            .iter()
            .map(|v| HSpaceElement::new(SampledPath::scalar(grid, v.clone()).unwrap(), hp))
            .collect();
        let g = DMatrix::from_fn(5, 5, |i, j| h_inner_kernel(&elems[i], &elems[j]).unwrap());
        let top = g.amax();
        let eig = SymmetricEigen::new(g).eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= -1e-10 * top));
    }
}

#[test]
fn schemes_converge_to_the_same_solution() {
    let h = hurst(0.7);
    let sys = systems::quadratic();
    let x0 = sys.x0_or_origin();
    let fine = &sample_cholesky(h, TimeGrid::unit(4096).unwrap(), 1, 1, 21).unwrap()[0];
    let coarse = |stride: usize| {
        let n = 4096 / stride;
        let vals = fine
            .values
            .iter()
            .map(|c| (0..=n).map(|k| c[k * stride]).collect())
            .collect();
        fbmlab::FbmPath::from_values(h, TimeGrid::unit(n).unwrap(), vals).unwrap()
    };
    let reference = solve(&sys, &x0, fine, Scheme::Heun).unwrap();
    let mut euler_err = Vec::new();
    for stride in [16, 4, 1] {
        let d = coarse(stride);
        let e = solve(&sys, &x0, &d, Scheme::Euler).unwrap();
        euler_err.push((e.terminal() - reference.terminal()).norm());
    }
    assert!(euler_err[0] > euler_err[1] && euler_err[1] > euler_err[2]);
    assert!(euler_err[2] < 0.05);
}

#[test]
fn jacobian_matches_finite_differences() {
    let h = hurst(0.7);
    let sys = systems::heisenberg();
    let d = &sample_cholesky(h, TimeGrid::unit(256).unwrap(), 2, 1, 2).unwrap()[0];
    for scheme in [Scheme::Euler, Scheme::Heun] {
        let rep = flow_derivative_check(&sys, &[0.3, -0.2, 0.1], d, 1e-6, scheme).unwrap();
        assert!(
            rep.max_rel_error < 1e-7,
            "{scheme:?}: {}",
            rep.max_rel_error
        );
    }
}

#[test]
fn gram_identity_for_derivative_paths() {
    let h = hurst(0.7);
    let grid = TimeGrid::unit(256).unwrap();
    for (sys, seed) in [(systems::heisenberg(), 3u64), (systems::quadratic(), 4)] {
        let d = &sample_cholesky(h, grid, sys.d, 1, seed).unwrap()[0];
        let sol = solve_variation(&sys, &sys.x0_or_origin(), d, Scheme::Heun).unwrap();
        let gamma = gamma_matrix(&sol, &sys, h).unwrap();
        let paths = derivative_paths(&sol, &sys, h).unwrap();
        let n = sys.n;
        let gram = DMatrix::from_fn(n, n, |i, j| h_inner_kernel(&paths[i], &paths[j]).unwrap());
        assert!((&gamma - &gram).amax() <= 1e-10 * gamma.amax());
        let c1 = c1_matrix(&sol, &sys, h).unwrap();
        let jn = sol.j.as_ref().unwrap().last().unwrap();
        let via_c1 = jn * c1 * jn.transpose() * h.kernel_constant();
        assert!((&gamma - &via_c1).amax() <= 1e-10 * gamma.amax());
    }
}

#[test]
fn bump_derivative_on_linear_system() {
    let h = hurst(0.7);
    let sys = systems::scalar_linear(1.0);
    let d = &sample_cholesky(h, TimeGrid::unit(512).unwrap(), 1, 1, 6).unwrap()[0];
    for node in [1, 100, 300, 511] {
        let rep = bump_check(&sys, &[1.0], d, node, 0, 1e-4, Scheme::Heun).unwrap();
        assert!(rep.rel_error < 1e-3, "node {node}: {}", rep.rel_error);
    }
}
