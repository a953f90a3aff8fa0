//! Malliavin derivative of SDE solutions and the matrices `Gamma_1`, `C_1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{CholeskySampler, ComponentSampler, FbmPath};
use crate::frac::{kernel_masses, HSpaceElement};
use crate::grid::{HurstParameter, TimeGrid};
use crate::holder::SampledPath;
use crate::poly::{CompiledSystem, VectorFieldSystem};
use crate::rng::substream;
use crate::sde::{solve, solve_variation, Scheme, SdeSolution};
use crate::stats::linear_fit;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// `D_s^j X_T = J_T J_s^{-1} V_j(X_s)` at node `s_node`.
pub fn malliavin_derivative(
    sol: &SdeSolution,
    sys: &VectorFieldSystem,
    s_node: usize,
    j: usize,
) -> Result<DVector<f64>> {
    let (jac, jinv) = sol.variation()?;
    let n = sol.grid.n_steps();
    if s_node > n {
        return Err(Error::domain(format!(
            "node {s_node} lies after the horizon node {n}"
        )));
    }
    if j >= sys.d {
        return Err(Error::domain(format!(
            "noise index {j} out of range (d = {})",
            sys.d
        )));
    }
    let v = sys.fields[j].eval(sol.x[s_node].as_slice());
    Ok(&jac[n] * (&jinv[s_node] * v))
}

/// Pulled-back fields `J_u^{-1} V(X_u)`, one `n x d` matrix per cell.
fn pulled_back(sol: &SdeSolution, sys: &CompiledSystem) -> Result<Vec<DMatrix<f64>>> {
    let (_, jinv) = sol.variation()?;
    let n = sol.grid.n_steps();
    Ok((0..n)
        .map(|u| &jinv[u] * sys.diffusion_matrix(sol.x[u].as_slice()))
        .collect())
}

fn c1_from_pullback(p: &[DMatrix<f64>], w: &[f64]) -> DMatrix<f64> {
    let n = p[0].nrows();
    let block = n * p[0].ncols();
    let flat: Vec<f64> = p.iter().flat_map(|m| m.iter().copied()).collect();
    let len = p.len();
    // per-cell terms are collected in order and summed sequentially so the
    // result does not depend on the worker count
    let terms: Vec<DMatrix<f64>> = (0..len)
        .into_par_iter()
        .map(|u| {
            // q = sum_v w_{|u-v|} P_v, stored column-major like P
            let mut q = vec![0.0; block];
            for v in 0..len {
                let wv = w[u.abs_diff(v)];
                for (qi, pi) in q.iter_mut().zip(&flat[v * block..(v + 1) * block]) {
                    *qi += wv * pi;
                }
            }
            &p[u] * DMatrix::from_vec(n, block / n, q).transpose()
        })
        .collect();
    let c = terms.iter().fold(DMatrix::zeros(n, n), |acc, t| acc + t);
    (&c + c.transpose()) * 0.5
}

/// `C_1 = int int J_u^{-1} V(X_u) V(X_v)^T J_v^{-T} |u - v|^{2H-2} du dv`.
pub fn c1_matrix(
    sol: &SdeSolution,
    sys: &VectorFieldSystem,
    hurst: HurstParameter,
) -> Result<DMatrix<f64>> {
    let p = pulled_back(sol, &CompiledSystem::new(sys))?;
    Ok(c1_from_pullback(&p, &kernel_masses(hurst, sol.grid)))
}

/// `Gamma_1 = H(2H-1) J_T C_1 J_T^T`.
pub fn gamma_matrix(
    sol: &SdeSolution,
    sys: &VectorFieldSystem,
    hurst: HurstParameter,
) -> Result<DMatrix<f64>> {
    let c1 = c1_matrix(sol, sys, hurst)?;
    let (jac, _) = sol.variation()?;
    let jn = jac.last().expect("non-empty");
    let g = jn * c1 * jn.transpose() * hurst.kernel_constant();
    Ok((&g + g.transpose()) * 0.5)
}

/// The Malliavin derivative of each state component as a `d`-vector path in `H`.
pub fn derivative_paths(
    sol: &SdeSolution,
    sys: &VectorFieldSystem,
    hurst: HurstParameter,
) -> Result<Vec<HSpaceElement>> {
    let (jac, jinv) = sol.variation()?;
    let compiled = CompiledSystem::new(sys);
    let n = sol.grid.n_steps();
    let jn = &jac[n];
    let derivs: Vec<DMatrix<f64>> = (0..=n)
        .map(|u| jn * (&jinv[u] * compiled.diffusion_matrix(sol.x[u].as_slice())))
        .collect();
    (0..sys.n)
        .map(|i| {
            let values = (0..sys.d)
                .map(|j| derivs.iter().map(|m| m[(i, j)]).collect())
                .collect();
            Ok(HSpaceElement::new(
                SampledPath::new(sol.grid, values)?,
                hurst,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinReport {
    pub gamma: Vec<Vec<f64>>,
    pub c1: Vec<Vec<f64>>,
    pub gamma_eigenvalues: Vec<f64>,
    pub c1_eigenvalues: Vec<f64>,
    pub det_gamma: f64,
    pub det_c1: f64,
    /// `max |G - G^T| / max |G|` for `Gamma_1` before symmetrisation.
    pub symmetry_defect: f64,
    /// `max_k ||J_k J_k^{-1} - I||_F`.
    pub inverse_defect: f64,
}

fn ascending_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    e
}

pub fn malliavin_report(
    sol: &SdeSolution,
    sys: &VectorFieldSystem,
    hurst: HurstParameter,
) -> Result<MalliavinReport> {
    let p = pulled_back(sol, &CompiledSystem::new(sys))?;
    let w = kernel_masses(hurst, sol.grid);
    let c1 = c1_from_pullback(&p, &w);
    let (jac, _) = sol.variation()?;
    let jn = jac.last().expect("non-empty");
    let raw = jn * &c1 * jn.transpose() * hurst.kernel_constant();
    let defect = |m: &DMatrix<f64>| (m - m.transpose()).amax() / m.amax().max(f64::MIN_POSITIVE);
    let symmetry_defect = defect(&raw);
    let gamma = (&raw + raw.transpose()) * 0.5;
    Ok(MalliavinReport {
        gamma_eigenvalues: ascending_eigenvalues(&gamma),
        c1_eigenvalues: ascending_eigenvalues(&c1),
        det_gamma: gamma.determinant(),
        det_c1: c1.determinant(),
        gamma: rows(&gamma),
        c1: rows(&c1),
        symmetry_defect,
        inverse_defect: sol.inverse_defect()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpReport {
    /// Index `m` of the bumped cell `[t_m, t_{m+1}]`.
    pub cell: usize,
    pub noise_index: usize,
    pub eps: f64,
    pub formula: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub rel_error: f64,
}

/// Pathwise Gateaux derivative of `X_T` against the derivative formula.
///
/// Shifting the driver by `eps e_j` at every node after `t_m` is, for the
/// piecewise-linear driver, a ramp over the cell `[t_m, t_{m+1}]`; its
/// Gateaux derivative is the cell average of `D_r^j X_T`, taken here by the
/// trapezoid rule on the formula `J_T J_r^{-1} V_j(X_r)`.
pub fn bump_check(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    cell: usize,
    j: usize,
    eps: f64,
    scheme: Scheme,
) -> Result<BumpReport> {
    let n = driver.grid.n_steps();
    if cell >= n {
        return Err(Error::domain(format!(
            "bump cell must lie in 0..{n}, got {cell}"
        )));
    }
    let sol = solve_variation(sys, x0, driver, scheme)?;
    let formula = (malliavin_derivative(&sol, sys, cell, j)?
        + malliavin_derivative(&sol, sys, cell + 1, j)?)
        * 0.5;
    let bumped = |sign: f64| -> Result<DVector<f64>> {
        let mut b = driver.clone();
        b.values[j][cell + 1..]
            .iter_mut()
            .for_each(|v| *v += sign * eps);
        Ok(solve(sys, x0, &b, scheme)?.terminal().clone())
    };
    let fd = (bumped(1.0)? - bumped(-1.0)?) / (2.0 * eps);
    let rel_error = (&formula - &fd).norm() / formula.norm().max(1e-12);
    Ok(BumpReport {
        cell,
        noise_index: j,
        eps,
        formula: formula.iter().copied().collect(),
        finite_difference: fd.iter().copied().collect(),
        rel_error,
    })
}

/// The `n` basis vectors followed by `n_random` seeded uniform unit vectors.
pub fn default_directions(n: usize, n_random: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            v
        })
        .collect();
    let mut rng = substream(seed, "probe-directions", 0);
    while out.len() < n + n_random {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm: f64 = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub direction: usize,
    pub epsilon: f64,
    pub count: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDecay {
    pub direction: Vec<f64>,
    /// Slope of `log P` against `log eps` over the epsilons with `P > 0`.
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseMoment {
    pub p: f64,
    pub full: f64,
    pub half: f64,
    pub doubling_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_paths: usize,
    pub failed_paths: usize,
    pub eps_grid: Vec<f64>,
    pub rows: Vec<ProbeRow>,
    /// `max_v P(<v, C_1 v> <= eps)` per epsilon.
    pub sup_probability: Vec<f64>,
    pub decay: Vec<DirectionDecay>,
    pub inverse_det_moments: Vec<InverseMoment>,
    pub min_eigenvalue: f64,
    /// Paths whose smallest eigenvalue is zero up to rounding.
    pub zero_eigenvalue_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

/// Monte Carlo estimate of `P(<v, C_1 v> <= eps)` over directions and epsilons.
pub fn eigen_probe(
    sys: &VectorFieldSystem,
    x0: &[f64],
    hurst: HurstParameter,
    directions: &[DVector<f64>],
    eps_grid: &[f64],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if directions
        .iter()
        .any(|v| v.len() != sys.n || (v.norm() - 1.0).abs() > 1e-9)
    {
        return Err(Error::Precondition(
            "probe directions must be unit vectors in R^n".into(),
        ));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0)) || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition(
            "epsilon grid must be positive and decreasing".into(),
        ));
    }
    let sampler = CholeskySampler::cached(hurst, cfg.grid)?;
    let compiled = CompiledSystem::new(sys);
    let w = kernel_masses(hurst, cfg.grid);
    let mats: Vec<Option<DMatrix<f64>>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let driver = sampler.draw(sys.d, cfg.seed, "probe", r);
            let sol = solve_variation(sys, x0, &driver, cfg.scheme).ok()?;
            let p = pulled_back(&sol, &compiled).ok()?;
            Some(c1_from_pullback(&p, &w))
        })
        .collect();
    let failed_paths = mats.iter().filter(|m| m.is_none()).count();
    let mats: Vec<DMatrix<f64>> = mats.into_iter().flatten().collect();
    let total = mats.len().max(1);
    let mut rows = Vec::new();
    let mut decay = Vec::new();
    let mut sup_probability = vec![0.0; eps_grid.len()];
    for (di, v) in directions.iter().enumerate() {
        let forms: Vec<f64> = mats.iter().map(|c| v.dot(&(c * v))).collect();
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        for (ei, &eps) in eps_grid.iter().enumerate() {
            let count = forms.iter().filter(|&&f| f <= eps).count();
            let probability = count as f64 / total as f64;
            sup_probability[ei] = f64::max(sup_probability[ei], probability);
            if count > 0 {
                lx.push(eps.ln());
                ly.push(probability.ln());
            }
            rows.push(ProbeRow {
                direction: di,
                epsilon: eps,
                count,
                probability,
            });
        }
        decay.push(DirectionDecay {
            direction: v.iter().copied().collect(),
            exponent: (lx.len() >= 2).then(|| linear_fit(&lx, &ly).slope),
        });
    }
    let dets: Vec<f64> = mats.iter().map(|c| c.determinant().abs()).collect();
    let half = &dets[..dets.len() / 2];
    let inv_moment =
        |xs: &[f64], p: f64| xs.iter().map(|d| d.powf(-p)).sum::<f64>() / xs.len().max(1) as f64;
    let inverse_det_moments = [1.0, 2.0]
        .iter()
        .map(|&p| {
            let full = inv_moment(&dets, p);
            let h = inv_moment(half, p);
            InverseMoment {
                p,
                full,
                half: h,
                doubling_ratio: full / h,
            }
        })
        .collect();
    let eigs: Vec<(f64, f64)> = mats
        .iter()
        .map(|c| {
            let e = ascending_eigenvalues(c);
            (e[0], e[e.len() - 1])
        })
        .collect();
    let min_eigenvalue = eigs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let zero_eigenvalue_paths = eigs
        .iter()
        .filter(|(lo, hi)| *lo <= 1e-12 * hi.abs().max(f64::MIN_POSITIVE))
        .count();
    Ok(ProbeReport {
        n_paths: cfg.n_paths,
        failed_paths,
        eps_grid: eps_grid.to_vec(),
        rows,
        sup_probability,
        decay,
        inverse_det_moments,
        min_eigenvalue,
        zero_eigenvalue_paths,
    })
}
