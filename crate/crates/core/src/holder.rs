//! Discrete Hölder norms, Young integrals and the interpolation toolkit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::grid::TimeGrid;

/// Scalar or vector valued path on a uniform grid. `values[i][k]` is
/// component `i` at node `t_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
    pub declared_regularity: Option<f64>,
}

impl SampledPath {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("path needs at least one component"));
        }
        if let Some(v) = values.iter().find(|v| v.len() != grid.n_nodes()) {
            return Err(Error::GridMismatch(format!(
                "component has {} values, grid has {} nodes",
                v.len(),
                grid.n_nodes()
            )));
        }
        Ok(Self {
            grid,
            values,
            declared_regularity: None,
        })
    }

    pub fn scalar(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, vec![values])
    }

    /// Sample `f` at the nodes of `grid`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self {
            grid,
            values: vec![values],
            declared_regularity: None,
        }
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub fn with_regularity(mut self, alpha: f64) -> Self {
        self.declared_regularity = Some(alpha);
        self
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Component `i` of an fBm path, with declared regularity just below `H`.
    pub fn from_fbm_component(path: &FbmPath, i: usize) -> Self {
        Self {
            grid: path.grid,
            values: vec![path.values[i].clone()],
            declared_regularity: Some(path.hurst.value() - 0.05),
        }
    }

    pub fn from_fbm(path: &FbmPath) -> Self {
        Self {
            grid: path.grid,
            values: path.values.clone(),
            declared_regularity: Some(path.hurst.value() - 0.05),
        }
    }

    /// Euclidean norm of the value at node `k`.
    pub fn abs_at(&self, k: usize) -> f64 {
        self.values.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt()
    }

    fn increment_norm(&self, i: usize, j: usize) -> f64 {
        self.values
            .iter()
            .map(|c| (c[j] - c[i]) * (c[j] - c[i]))
            .sum::<f64>()
            .sqrt()
    }

    /// Scalar component 0 as a slice (panics for empty paths, which cannot be built).
    pub fn scalar_values(&self) -> &[f64] {
        &self.values[0]
    }

    fn check_same_grid(&self, other: &SampledPath) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{} steps on [0, {}] vs {} steps on [0, {}]",
                self.grid.n_steps(),
                self.grid.horizon(),
                other.grid.n_steps(),
                other.grid.horizon()
            )))
        }
    }
}

/// Hölder seminorm `max_{i<j} |p(t_j) - p(t_i)| / (t_j - t_i)^alpha` over all node pairs.
pub fn holder_norm(p: &SampledPath, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!(
            "Hölder exponent must lie in (0, 1], got {alpha}"
        )));
    }
    let n = p.grid.n_nodes();
    if n < 2 {
        return Err(Error::domain("Hölder norm needs at least two nodes"));
    }
    let dt = p.grid.mesh();
    // powers of the gap depend only on j - i
    let denom: Vec<f64> = (0..n).map(|m| (m as f64 * dt).powf(alpha)).collect();
    let best = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| p.increment_norm(i, j) / denom[j - i])
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

pub fn sup_norm(p: &SampledPath) -> f64 {
    (0..p.grid.n_nodes())
        .map(|k| p.abs_at(k))
        .fold(0.0, f64::max)
}

/// Trapezoid-rule `int |p(t)| dt`.
pub fn l1_norm(p: &SampledPath) -> f64 {
    let n = p.grid.n_steps();
    let dt = p.grid.mesh();
    (0..n)
        .map(|k| 0.5 * (p.abs_at(k) + p.abs_at(k + 1)) * dt)
        .sum()
}

fn young_common(f: &SampledPath, g: &SampledPath) -> Result<()> {
    f.check_same_grid(g)?;
    if f.dim() != g.dim() {
        return Err(Error::domain(format!(
            "integrand has {} components, integrator has {}",
            f.dim(),
            g.dim()
        )));
    }
    if let (Some(a), Some(b)) = (f.declared_regularity, g.declared_regularity) {
        if a + b <= 1.0 {
            log::warn!("Young integral with regularities {a} + {b} <= 1 may not converge");
        }
    }
    Ok(())
}

/// Running left-point sum `int_0^t <f, dg>`.
pub fn young_integral(f: &SampledPath, g: &SampledPath) -> Result<SampledPath> {
    young_common(f, g)?;
    let n = f.grid.n_steps();
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..n {
        acc += f
            .values
            .iter()
            .zip(&g.values)
            .map(|(fc, gc)| fc[k] * (gc[k + 1] - gc[k]))
            .sum::<f64>();
        out.push(acc);
    }
    SampledPath::scalar(f.grid, out)
}

/// Running trapezoid sum `sum (f_k + f_{k+1}) / 2 * (g_{k+1} - g_k)`.
pub fn young_integral_trapezoid(f: &SampledPath, g: &SampledPath) -> Result<SampledPath> {
    young_common(f, g)?;
    let n = f.grid.n_steps();
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..n {
        acc += f
            .values
            .iter()
            .zip(&g.values)
            .map(|(fc, gc)| 0.5 * (fc[k] + fc[k + 1]) * (gc[k + 1] - gc[k]))
            .sum::<f64>();
        out.push(acc);
    }
    SampledPath::scalar(f.grid, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    /// `||b||_inf`.
    pub lhs: f64,
    /// `gamma ||b||_H + gamma^{-1/H} ||b||_{L1}` with unit constant.
    pub rhs: f64,
    /// `lhs / rhs`, zero when both sides vanish.
    pub ratio: f64,
}

/// Both sides of `||b||_inf <= C (gamma ||b||_H + gamma^{-1/H} ||b||_1)` with `C = 1`.
pub fn interpolation_check(
    b: &SampledPath,
    gamma_weight: f64,
    holder_exp: f64,
) -> Result<InterpolationReport> {
    if !(gamma_weight > 0.0 && gamma_weight <= 1.0) {
        return Err(Error::Precondition(format!(
            "weight must lie in (0, 1], got {gamma_weight}"
        )));
    }
    let lhs = sup_norm(b);
    let rhs = gamma_weight * holder_norm(b, holder_exp)?
        + gamma_weight.powf(-1.0 / holder_exp) * l1_norm(b);
    let ratio = if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    };
    Ok(InterpolationReport { lhs, rhs, ratio })
}

/// Number of fine cells per coarse block, checking that `delta` is an
/// admissible coarse scale for `grid`.
pub(crate) fn block_ratio(grid: &TimeGrid, delta: f64) -> Result<usize> {
    let blocks = grid.horizon() / delta;
    let nb = blocks.round();
    if !(delta > 0.0) || nb < 1.0 || (blocks - nb).abs() > 1e-9 * blocks {
        return Err(Error::IncompatibleScale(format!(
            "horizon / Delta = {blocks} is not an integer"
        )));
    }
    let nb = nb as usize;
    if !grid.n_steps().is_multiple_of(nb) {
        return Err(Error::IncompatibleScale(format!(
            "Delta = {delta} is not a multiple of the mesh {}",
            grid.mesh()
        )));
    }
    Ok(grid.n_steps() / nb)
}

/// Split `b` into the step function `b(Delta floor(t / Delta))` and the
/// remainder `beta = b - bbar`.
pub fn step_approximation(b: &SampledPath, delta: f64) -> Result<(SampledPath, SampledPath)> {
    let r = block_ratio(&b.grid, delta)?;
    let bar: Vec<Vec<f64>> = b
        .values
        .iter()
        .map(|c| (0..c.len()).map(|k| c[(k / r) * r]).collect())
        .collect();
    let beta: Vec<Vec<f64>> = b
        .values
        .iter()
        .zip(&bar)
        .map(|(c, s)| c.iter().zip(s).map(|(x, y)| x - y).collect())
        .collect();
    let mut bbar = SampledPath::new(b.grid, bar)?;
    bbar.declared_regularity = None;
    let mut beta = SampledPath::new(b.grid, beta)?;
    beta.declared_regularity = b.declared_regularity;
    Ok((bbar, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiemannGap {
    /// `|Delta sum_N |b(N Delta)| - ||b||_1|`.
    pub gap: f64,
    /// `||b||_gamma Delta^gamma`.
    pub bound: f64,
}

/// Riemann-sum error of the coarse `L1` norm against its Hölder bound.
pub fn riemann_l1_gap(b: &SampledPath, delta: f64, gamma: f64) -> Result<RiemannGap> {
    let r = block_ratio(&b.grid, delta)?;
    let blocks = b.grid.n_steps() / r;
    let sum: f64 = (1..=blocks).map(|m| b.abs_at(m * r)).sum::<f64>() * delta;
    Ok(RiemannGap {
        gap: (sum - l1_norm(b)).abs(),
        bound: holder_norm(b, gamma)? * delta.powf(gamma),
    })
}
