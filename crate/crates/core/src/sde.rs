//! Pathwise solvers for Young SDEs driven by fBm, with first variation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{CholeskySampler, ComponentSampler, FbmPath};
use crate::grid::{HurstParameter, TimeGrid};
use crate::holder::{holder_norm, SampledPath};
use crate::poly::{CompiledSystem, VectorFieldSystem};
use crate::stats::{quantile_sorted, sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `X' = X + V_0(X) dt + sum V_i(X) dB^i`.
    #[default]
    Euler,
    /// Predictor-corrector trapezoid rule.
    Heun,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            other => Err(Error::domain(format!(
                "unknown scheme '{other}' (euler|heun)"
            ))),
        }
    }
}

/// Solution path with optional first variation `J` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeSolution {
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub driver_seed: u64,
    /// `x[k]` is the state at node `t_k`.
    pub x: Vec<DVector<f64>>,
    pub j: Option<Vec<DMatrix<f64>>>,
    pub j_inv: Option<Vec<DMatrix<f64>>>,
}

impl SdeSolution {
    pub fn n_state(&self) -> usize {
        self.x[0].len()
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.x.last().expect("solutions have at least two nodes")
    }

    /// State component `i` as a path.
    pub fn component(&self, i: usize) -> SampledPath {
        SampledPath::scalar(self.grid, self.x.iter().map(|v| v[i]).collect())
            .expect("solution length matches its grid")
    }

    /// Whole state as a vector-valued path.
    pub fn as_path(&self) -> SampledPath {
        SampledPath::new(
            self.grid,
            (0..self.n_state())
                .map(|i| self.x.iter().map(|v| v[i]).collect())
                .collect(),
        )
        .expect("solution length matches its grid")
    }

    pub fn variation(&self) -> Result<(&[DMatrix<f64>], &[DMatrix<f64>])> {
        match (&self.j, &self.j_inv) {
            (Some(j), Some(ji)) => Ok((j, ji)),
            _ => Err(Error::MissingVariation),
        }
    }

    /// `max_k ||J_k J_k^{-1} - I||_F`.
    pub fn inverse_defect(&self) -> Result<f64> {
        let (j, ji) = self.variation()?;
        let id = DMatrix::identity(self.n_state(), self.n_state());
        Ok(j.iter()
            .zip(ji)
            .map(|(a, b)| (a * b - &id).norm())
            .fold(0.0, f64::max))
    }
}

fn check_driver(sys: &VectorFieldSystem, x0: &[f64], driver: &FbmPath) -> Result<()> {
    if driver.dim != sys.d {
        return Err(Error::domain(format!(
            "driver has {} components, system has {} noise fields",
            driver.dim, sys.d
        )));
    }
    if x0.len() != sys.n {
        return Err(Error::domain(format!(
            "starting point has {} coordinates, system state has {}",
            x0.len(),
            sys.n
        )));
    }
    Ok(())
}

struct Stepper<'a> {
    sys: &'a CompiledSystem,
    scheme: Scheme,
    dt: f64,
    f0: Vec<f64>,
    f1: Vec<f64>,
    pred: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a CompiledSystem, scheme: Scheme, dt: f64) -> Self {
        let n = sys.n;
        Self {
            sys,
            scheme,
            dt,
            f0: vec![0.0; n],
            f1: vec![0.0; n],
            pred: vec![0.0; n],
        }
    }

    /// Advance `x` in place; returns the one-step propagator when asked.
    fn step(&mut self, x: &mut [f64], db: &[f64], with_jacobian: bool) -> Option<DMatrix<f64>> {
        let n = x.len();
        self.sys.increment(x, self.dt, db, &mut self.f0);
        match self.scheme {
            Scheme::Euler => {
                let m = with_jacobian.then(|| {
                    let mut a = self.sys.increment_jacobian(x, self.dt, db);
                    for i in 0..n {
                        a[(i, i)] += 1.0;
                    }
                    a
                });
                for (xi, fi) in x.iter_mut().zip(&self.f0) {
                    *xi += fi;
                }
                m
            }
            Scheme::Heun => {
                for i in 0..n {
                    self.pred[i] = x[i] + self.f0[i];
                }
                self.sys.increment(&self.pred, self.dt, db, &mut self.f1);
                let m = with_jacobian.then(|| {
                    // derivative of x + (F(x) + F(x + F(x))) / 2
                    let a0 = self.sys.increment_jacobian(x, self.dt, db);
                    let a1 = self.sys.increment_jacobian(&self.pred, self.dt, db);
                    let mut inner = a0.clone();
                    for i in 0..n {
                        inner[(i, i)] += 1.0;
                    }
                    let mut m = (a0 + a1 * inner) * 0.5;
                    for i in 0..n {
                        m[(i, i)] += 1.0;
                    }
                    m
                });
                for i in 0..n {
                    x[i] += 0.5 * (self.f0[i] + self.f1[i]);
                }
                m
            }
        }
    }
}

fn integrate(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    scheme: Scheme,
    variation: bool,
) -> Result<SdeSolution> {
    check_driver(sys, x0, driver)?;
    let compiled = CompiledSystem::new(sys);
    let grid = driver.grid;
    let n = sys.n;
    let steps = grid.n_steps();
    let mut stepper = Stepper::new(&compiled, scheme, grid.mesh());
    let mut x = x0.to_vec();
    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(DVector::from_column_slice(&x));
    let mut js = variation.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(DMatrix::identity(n, n));
        v
    });
    let mut jis = js.clone();
    let mut db = vec![0.0; sys.d];
    for k in 0..steps {
        for (i, b) in db.iter_mut().enumerate() {
            *b = driver.increment(i, k);
        }
        let m = stepper.step(&mut x, &db, variation);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { node: k + 1 });
        }
        xs.push(DVector::from_column_slice(&x));
        if let (Some(js), Some(jis), Some(m)) = (js.as_mut(), jis.as_mut(), m) {
            let m_inv = m
                .clone()
                .try_inverse()
                .ok_or(Error::SingularStep { node: k })?;
            let j_next = &m * &js[k];
            let ji_next = &jis[k] * m_inv;
            if j_next.iter().chain(ji_next.iter()).any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { node: k + 1 });
            }
            js.push(j_next);
            jis.push(ji_next);
        }
    }
    Ok(SdeSolution {
        grid,
        scheme,
        driver_seed: driver.seed,
        x: xs,
        j: js,
        j_inv: jis,
    })
}

/// Solve `dX = V_0(X) dt + sum V_i(X) dB^i` along `driver`.
pub fn solve(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    scheme: Scheme,
) -> Result<SdeSolution> {
    integrate(sys, x0, driver, scheme, false)
}

/// Solve together with `J = dX_t / dx` and `J^{-1}`.
///
/// `J` is propagated by the exact derivative `M_k` of the discrete step
/// map and `J^{-1}` by `M_k^{-1}`, so both are the variation of the
/// discrete flow and `J J^{-1} = I` up to rounding.
pub fn solve_variation(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    scheme: Scheme,
) -> Result<SdeSolution> {
    integrate(sys, x0, driver, scheme, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDerivativeReport {
    pub eps: f64,
    /// `max_{i,j} |J_ij - FD_ij| / max(||J||_max, 1)`.
    pub max_rel_error: f64,
    pub jacobian: Vec<Vec<f64>>,
    pub finite_difference: Vec<Vec<f64>>,
}

/// Compare `J(horizon)` with central differences of the terminal state.
pub fn flow_derivative_check(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    eps: f64,
    scheme: Scheme,
) -> Result<FlowDerivativeReport> {
    let sol = solve_variation(sys, x0, driver, scheme)?;
    let (j, _) = sol.variation()?;
    let jn = j.last().expect("non-empty").clone();
    let n = sys.n;
    let mut fd = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut xp = x0.to_vec();
        let mut xm = x0.to_vec();
        xp[c] += eps;
        xm[c] -= eps;
        let up = solve(sys, &xp, driver, scheme)?;
        let dn = solve(sys, &xm, driver, scheme)?;
        fd.set_column(c, &((up.terminal() - dn.terminal()) / (2.0 * eps)));
    }
    let scale = jn.amax().max(1.0);
    let max_rel_error = (&jn - &fd).amax() / scale;
    let rows = |m: &DMatrix<f64>| (0..n).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(FlowDerivativeReport {
        eps,
        max_rel_error,
        jacobian: rows(&jn),
        finite_difference: rows(&fd),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    /// Estimate over all paths.
    pub full: f64,
    /// Estimate over the first half of the paths.
    pub half: f64,
    /// `full / half`; close to one when the moment is stably estimated.
    pub doubling_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub gamma: f64,
    pub n_paths: usize,
    pub moments: Vec<MomentRow>,
    /// `(level, quantile over half, quantile over all)`.
    pub quantiles: Vec<(f64, f64, f64)>,
    pub blow_ups: usize,
}

pub const MOMENT_ORDERS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Monte Carlo moments `E ||X||_gamma^p` with a doubling diagnostic: the
/// estimate on all `n_paths` paths is compared with the first half.
#[allow(clippy::too_many_arguments)]
pub fn apriori_moments(
    sys: &VectorFieldSystem,
    x0: &[f64],
    hurst: HurstParameter,
    grid: TimeGrid,
    n_paths: usize,
    gamma: f64,
    seed: u64,
    scheme: Scheme,
) -> Result<AprioriReport> {
    if !(gamma > 0.0 && gamma < hurst.value()) {
        return Err(Error::Precondition(format!(
            "need 0 < gamma < H, got gamma = {gamma}"
        )));
    }
    if n_paths < 2 {
        return Err(Error::Precondition("need at least two paths".into()));
    }
    let sampler = CholeskySampler::cached(hurst, grid)?;
    let norms: Vec<Option<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let driver = sampler.draw(sys.d, seed, "apriori", r);
            solve(sys, x0, &driver, scheme)
                .ok()
                .and_then(|s| holder_norm(&s.as_path(), gamma).ok())
        })
        .collect();
    let blow_ups = norms.iter().filter(|v| v.is_none()).count();
    let vals: Vec<f64> = norms.into_iter().flatten().collect();
    let half = &vals[..vals.len() / 2];
    let moment =
        |xs: &[f64], p: f64| xs.iter().map(|v| v.powf(p)).sum::<f64>() / xs.len().max(1) as f64;
    let moments = MOMENT_ORDERS
        .iter()
        .map(|&p| {
            let full = moment(&vals, p);
            let h = moment(half, p);
            MomentRow {
                p,
                full,
                half: h,
                doubling_ratio: if h > 0.0 {
                    full / h
                } else if full == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect();
    let (sh, sf) = (sorted(half), sorted(&vals));
    let quantiles = [0.9, 0.99, 0.999]
        .iter()
        .map(|&q| (q, quantile_sorted(&sh, q), quantile_sorted(&sf, q)))
        .collect();
    Ok(AprioriReport {
        gamma,
        n_paths,
        moments,
        quantiles,
        blow_ups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::sample_cholesky;
    use crate::systems;
    use approx::assert_relative_eq;

    fn driver(d: usize, n: usize, seed: u64) -> FbmPath {
        let h = HurstParameter::new(0.7).unwrap();
        sample_cholesky(h, TimeGrid::unit(n).unwrap(), d, 1, seed)
            .unwrap()
            .remove(0)
    }

    #[test]
    fn zero_fields_keep_state() {
        let sys = VectorFieldSystem::new(2, None, vec![crate::poly::VectorField::zero(2)]).unwrap();
        let sol = solve_variation(&sys, &[1.0, -2.0], &driver(1, 64, 1), Scheme::Heun).unwrap();
        assert!(sol.x.iter().all(|v| v.as_slice() == [1.0, -2.0]));
        assert!(sol.j.unwrap().iter().all(|m| *m == DMatrix::identity(2, 2)));
    }

    #[test]
    fn additive_noise_is_exact() {
        let b = driver(1, 128, 2);
        for scheme in [Scheme::Euler, Scheme::Heun] {
            let sol = solve(&systems::additive_1d(), &[0.5], &b, scheme).unwrap();
            for k in 0..=128 {
                assert_relative_eq!(sol.x[k][0], 0.5 + b.values[0][k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn linear_noise_converges_to_exponential() {
        let err = |n: usize, scheme| {
            let b = driver(1, n, 3);
            let sol = solve_variation(&systems::scalar_linear(1.0), &[1.0], &b, scheme).unwrap();
            let (j, ji) = sol.variation().unwrap();
            let mut e: f64 = 0.0;
            for k in 0..=n {
                let exact = b.values[0][k].exp();
                e = e
                    .max((sol.x[k][0] - exact).abs())
                    .max((j[k][(0, 0)] - exact).abs());
                e = e.max((ji[k][(0, 0)] - 1.0 / exact).abs());
            }
            e
        };
        assert!(err(2048, Scheme::Heun) < 1e-3);
        assert!(err(2048, Scheme::Euler) < 0.2);
    }

    #[test]
    fn inverse_is_exact_to_rounding() {
        let sol = solve_variation(
            &systems::heisenberg(),
            &[0.0; 3],
            &driver(2, 2048, 4),
            Scheme::Euler,
        )
        .unwrap();
        assert!(sol.inverse_defect().unwrap() < 1e-10);
    }

    #[test]
    fn blow_up_reports_node() {
        // dX = X^3 dt type growth through a huge driver increment
        let n = 1;
        let cube = crate::poly::Polynomial::var(n, 0)
            .mul(&crate::poly::Polynomial::var(n, 0))
            .mul(&crate::poly::Polynomial::var(n, 0));
        let sys = VectorFieldSystem::new(
            1,
            None,
            vec![crate::poly::VectorField::new(vec![cube]).unwrap()],
        )
        .unwrap();
        let mut b = driver(1, 16, 5);
        b.values[0]
            .iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = 1e3 * k as f64);
        match solve(&sys, &[1.0], &b, Scheme::Euler) {
            Err(Error::BlowUp { node }) => assert!(node >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn driver_dimension_is_checked() {
        assert!(solve(
            &systems::heisenberg(),
            &[0.0; 3],
            &driver(1, 8, 1),
            Scheme::Euler
        )
        .is_err());
    }
}
