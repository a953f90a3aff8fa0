//! Riemann-Liouville operators and the Cameron-Martin inner product.
//!
//! Elements of `H` are stored by their left values on grid cells: the value
//! on `[t_k, t_{k+1})` is `values[i][k]`, the last node is ignored and the
//! element vanishes beyond the horizon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{HurstParameter, TimeGrid};
use crate::holder::{holder_norm, sup_norm, SampledPath};
use crate::quad::UnitRule;

fn check_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "fractional order must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `I^alpha phi` at the grid nodes, exact for piecewise-constant `phi`.
pub fn frac_integral(phi: &SampledPath, alpha: f64) -> Result<SampledPath> {
    check_order(alpha)?;
    let n = phi.grid.n_steps();
    let scale = phi.grid.mesh().powf(alpha) / gamma(alpha + 1.0);
    // weight of the cell `m` steps behind the evaluation node
    let w: Vec<f64> = (0..=n)
        .map(|m| {
            if m == 0 {
                0.0
            } else {
                (m as f64).powf(alpha) - (m as f64 - 1.0).powf(alpha)
            }
        })
        .collect();
    let values = phi
        .values
        .iter()
        .map(|c| {
            (0..=n)
                .into_par_iter()
                .map(|i| scale * (0..i).map(|k| c[k] * w[i - k]).sum::<f64>())
                .collect()
        })
        .collect();
    SampledPath::new(phi.grid, values)
}

/// `Gamma(beta)^{-1} int_0^{t_i} (t_i - s)^{beta - 1} f(s) ds` with `f`
/// interpolated linearly between nodes.
fn linear_product_integral(c: &[f64], beta: f64, dt: f64) -> Vec<f64> {
    let n = c.len() - 1;
    let g = gamma(beta);
    // a0[m] = int_{(m-1)dt}^{m dt} u^{beta-1} du, a1[m] = int u^beta du
    let a0: Vec<f64> = (0..=n)
        .map(|m| {
            let m = m as f64;
            if m == 0.0 {
                0.0
            } else {
                dt.powf(beta) * (m.powf(beta) - (m - 1.0).powf(beta)) / beta
            }
        })
        .collect();
    let a1: Vec<f64> = (0..=n)
        .map(|m| {
            let m = m as f64;
            if m == 0.0 {
                0.0
            } else {
                dt.powf(beta + 1.0) * (m.powf(beta + 1.0) - (m - 1.0).powf(beta + 1.0))
                    / (beta + 1.0)
            }
        })
        .collect();
    (0..=n)
        .into_par_iter()
        .map(|i| {
            (0..i)
                .map(|k| {
                    let m = i - k;
                    c[k] * a0[m] + (c[k + 1] - c[k]) * (m as f64 * a0[m] - a1[m] / dt)
                })
                .sum::<f64>()
                / g
        })
        .collect()
}

/// `D^alpha f = d/dt I^{1-alpha} f`: product integration of the piecewise
/// linear interpolant followed by a backward difference (forward at `t_0`).
pub fn frac_derivative(f: &SampledPath, alpha: f64) -> Result<SampledPath> {
    check_order(alpha)?;
    if f.values.iter().any(|c| c[0] != 0.0) {
        log::warn!("fractional derivative of a path with f(0) != 0 is singular at the origin");
    }
    let dt = f.grid.mesh();
    let values = f
        .values
        .iter()
        .map(|c| {
            let g = linear_product_integral(c, 1.0 - alpha, dt);
            let n = c.len() - 1;
            (0..=n)
                .map(|i| {
                    if i == 0 {
                        (g[1] - g[0]) / dt
                    } else {
                        (g[i] - g[i - 1]) / dt
                    }
                })
                .collect()
        })
        .collect();
    SampledPath::new(f.grid, values)
}

/// Right-sided Marchaud derivative `D_-^alpha f` with `f` extended by zero
/// past the horizon. Exact for the piecewise-linear interpolant; the part
/// of the integral beyond the horizon is added in closed form. At the last
/// node the value is infinite unless `f` vanishes there.
pub fn frac_derivative_minus(f: &SampledPath, alpha: f64) -> Result<SampledPath> {
    check_order(alpha)?;
    let n = f.grid.n_steps();
    let dt = f.grid.mesh();
    let horizon = f.grid.horizon();
    let pre = -alpha / gamma(1.0 - alpha);
    // b0[m] = int_{m dt}^{(m+1) dt} u^{-alpha-1} du (m >= 1), b1[m] = int u^{-alpha} du
    let b0: Vec<f64> = (0..n)
        .map(|m| {
            let m = m as f64;
            if m == 0.0 {
                f64::NAN
            } else {
                dt.powf(-alpha) * (m.powf(-alpha) - (m + 1.0).powf(-alpha)) / alpha
            }
        })
        .collect();
    let b1: Vec<f64> = (0..n)
        .map(|m| {
            let m = m as f64;
            dt.powf(1.0 - alpha) * ((m + 1.0).powf(1.0 - alpha) - m.powf(1.0 - alpha))
                / (1.0 - alpha)
        })
        .collect();
    let values = f
        .values
        .iter()
        .map(|c| {
            (0..=n)
                .into_par_iter()
                .map(|i| {
                    if i == n {
                        return if c[n] == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY.copysign(c[n])
                        };
                    }
                    let mut acc = 0.0;
                    for k in i..n {
                        let slope = (c[k + 1] - c[k]) / dt;
                        let m = k - i;
                        if m == 0 {
                            acc += slope * b1[0];
                        } else {
                            // f(s) - f(t_i) = (c_k - c_i) + slope (u - m dt)
                            acc += (c[k] - c[i] - slope * m as f64 * dt) * b0[m] + slope * b1[m];
                        }
                    }
                    let tail = -c[i] * (horizon - f.grid.node(i)).powf(-alpha) / alpha;
                    pre * (acc + tail)
                })
                .collect()
        })
        .collect();
    SampledPath::new(f.grid, values)
}

/// A sampled element of the Cameron-Martin space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSpaceElement {
    pub path: SampledPath,
    pub hurst: HurstParameter,
}

impl HSpaceElement {
    pub fn new(path: SampledPath, hurst: HurstParameter) -> Self {
        Self { path, hurst }
    }

    /// `1_{[0, t)}` on `grid`.
    pub fn indicator(hurst: HurstParameter, grid: TimeGrid, t: f64) -> Self {
        let path = SampledPath::from_fn(grid, |s| {
            if s < t - 1e-12 * grid.mesh() {
                1.0
            } else {
                0.0
            }
        });
        Self { path, hurst }
    }

    pub fn grid(&self) -> TimeGrid {
        self.path.grid
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// Left cell values of component `i`.
    fn cells(&self, i: usize) -> &[f64] {
        let c = &self.path.values[i];
        &c[..c.len() - 1]
    }
}

fn check_pair(phi: &HSpaceElement, psi: &HSpaceElement) -> Result<()> {
    if phi.hurst != psi.hurst {
        return Err(Error::domain("elements carry different Hurst parameters"));
    }
    if !phi.grid().same_as(&psi.grid()) {
        return Err(Error::GridMismatch(
            "elements live on different grids".into(),
        ));
    }
    if phi.dim() != psi.dim() {
        return Err(Error::domain(format!(
            "dimensions differ: {} vs {}",
            phi.dim(),
            psi.dim()
        )));
    }
    Ok(())
}

/// Exact cell masses `w_m = int int_{cell_j x cell_k} |s - t|^{2H-2}` for
/// `|j - k| = m`. They satisfy
/// `H(2H-1) w_m = dt^{2H} (|m+1|^{2H} - 2|m|^{2H} + |m-1|^{2H}) / 2`.
pub fn kernel_masses(h: HurstParameter, grid: TimeGrid) -> Vec<f64> {
    let p = 2.0 * h.value();
    let scale = grid.mesh().powf(p) / h.kernel_constant();
    (0..grid.n_steps())
        .map(|m| {
            let m = m as f64;
            scale * 0.5 * ((m + 1.0).powf(p) - 2.0 * m.powf(p) + (m - 1.0).abs().powf(p))
        })
        .collect()
}

/// `sum_{j,k} w_{|j-k|} a_j b_k`.
pub(crate) fn toeplitz_form(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            if a[j] == 0.0 {
                return 0.0;
            }
            let row: f64 = (0..n).map(|k| w[j.abs_diff(k)] * b[k]).sum();
            a[j] * row
        })
        .collect();
    rows.iter().sum()
}

/// `<phi, psi>_H = H(2H-1) int int |s-t|^{2H-2} <phi(s), psi(t)> ds dt` via
/// exact cell masses.
pub fn h_inner_kernel(phi: &HSpaceElement, psi: &HSpaceElement) -> Result<f64> {
    check_pair(phi, psi)?;
    let w = kernel_masses(phi.hurst, phi.grid());
    let c = phi.hurst.kernel_constant();
    Ok((0..phi.dim())
        .map(|i| c * toeplitz_form(&w, phi.cells(i), psi.cells(i)))
        .sum())
}

pub fn h_norm(phi: &HSpaceElement) -> Result<f64> {
    Ok(h_inner_kernel(phi, phi)?.max(0.0).sqrt())
}

/// Ratio between `<I^a phi, I^a psi>_{L2(R+)}`, `a = H - 1/2`, and
/// `<phi, psi>_H`: `Gamma(2-2H) / (Gamma(H-1/2) Gamma(3/2-H) H(2H-1))`.
pub fn frac_representation_constant(h: HurstParameter) -> f64 {
    let hv = h.value();
    gamma(2.0 - 2.0 * hv) / (gamma(hv - 0.5) * gamma(1.5 - hv) * h.kernel_constant())
}

/// Default truncation horizon for the fractional-integral form.
pub const DEFAULT_FRAC_HORIZON: f64 = 8.0;
const TAIL_TERMS: usize = 9;
const CELL_RULE: usize = 6;
const OUTER_PANELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracInnerReport {
    /// Inner product in `H` after dividing by the representation constant.
    pub value: f64,
    /// `int_0^inf I^a phi I^a psi dt` before normalisation.
    pub l2_pairing: f64,
    pub representation_constant: f64,
    /// Contribution of `[0, horizon]` computed by quadrature.
    pub truncated_part: f64,
    /// Contribution of `[horizon, inf)` from the asymptotic series.
    pub tail: f64,
    /// Leading-order size of the tail, `|int phi| |int psi| T^{2H-2} / (Gamma(a)^2 (2-2H))`.
    pub tail_bound: f64,
    pub horizon: f64,
}

/// `I^a phi` sampled on the quadrature points used by [`h_inner_frac_report`].
struct FracSamples {
    inner: Vec<f64>,
    outer: Vec<f64>,
    moments: Vec<f64>,
}

struct FracQuadrature {
    a: f64,
    n: usize,
    dt: f64,
    horizon: f64,
    /// Per cell node `z_q`: offsets `(t - t_i) / dt = z_q^{1/a}`, weights incl. Jacobian.
    cell_z: Vec<f64>,
    cell_w: Vec<f64>,
    /// table[m][q] = (m + z_q^{1/a})^a - (m - 1 + z_q^{1/a})^a, m >= 1
    table: Vec<Vec<f64>>,
    outer_t: Vec<f64>,
    outer_w: Vec<f64>,
}

impl FracQuadrature {
    fn new(h: HurstParameter, grid: TimeGrid, horizon: f64) -> Self {
        let a = h.value() - 0.5;
        let n = grid.n_steps();
        let dt = grid.mesh();
        let rule = UnitRule::new(CELL_RULE);
        let p = 1.0 / a;
        // t = t_i + dt z^{1/a} makes (t - t_i)^a linear in z
        let cell_z: Vec<f64> = rule.nodes.iter().map(|z| z.powf(p)).collect();
        let cell_w: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(z, w)| w * dt * p * z.powf(p - 1.0))
            .collect();
        let table = (0..=n)
            .map(|m| {
                cell_z
                    .iter()
                    .map(|u| {
                        if m == 0 {
                            0.0
                        } else {
                            (m as f64 + u).powf(a) - (m as f64 - 1.0 + u).powf(a)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut outer_t = Vec::new();
        let mut outer_w = Vec::new();
        let t0 = grid.horizon();
        if horizon > t0 {
            let outer = UnitRule::new(8);
            let span = horizon - t0;
            for panel in 0..OUTER_PANELS {
                let lo = panel as f64 / OUTER_PANELS as f64;
                let hi = (panel + 1) as f64 / OUTER_PANELS as f64;
                for (y, w) in outer.nodes.iter().zip(&outer.weights) {
                    let y = lo + (hi - lo) * y;
                    outer_t.push(t0 + span * y.powf(p));
                    outer_w.push(w * (hi - lo) * span * p * y.powf(p - 1.0));
                }
            }
        }
        Self {
            a,
            n,
            dt,
            horizon,
            cell_z,
            cell_w,
            table,
            outer_t,
            outer_w,
        }
    }

    fn sample(&self, cells: &[f64]) -> FracSamples {
        let a = self.a;
        let q = self.cell_z.len();
        let scale = self.dt.powf(a) / gamma(a + 1.0);
        let inner: Vec<f64> = (0..self.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                (0..q).map(move |j| {
                    let hist: f64 = (0..i).map(|k| cells[k] * self.table[i - k][j]).sum();
                    scale * (hist + cells[i] * self.cell_z[j].powf(a))
                })
            })
            .collect();
        let g1 = gamma(a + 1.0);
        let outer: Vec<f64> = self
            .outer_t
            .par_iter()
            .map(|&t| {
                (0..self.n)
                    .map(|k| {
                        let tk = k as f64 * self.dt;
                        cells[k] * ((t - tk).powf(a) - (t - tk - self.dt).max(0.0).powf(a))
                    })
                    .sum::<f64>()
                    / g1
            })
            .collect();
        let moments = (0..TAIL_TERMS)
            .map(|m| {
                let e = (m + 1) as f64;
                (0..self.n)
                    .map(|k| {
                        let tk = k as f64 * self.dt;
                        cells[k] * ((tk + self.dt).powf(e) - tk.powf(e)) / e
                    })
                    .sum()
            })
            .collect();
        FracSamples {
            inner,
            outer,
            moments,
        }
    }

    /// `int_T^inf I^a phi I^a psi` from `I^a phi(t) = Gamma(a)^{-1} sum_m c_m mu_m t^{a-1-m}`.
    fn tail(&self, x: &FracSamples, y: &FracSamples) -> f64 {
        let a = self.a;
        let mut c = [1.0; TAIL_TERMS];
        for m in 1..TAIL_TERMS {
            // (-1)^m binom(a - 1, m)
            c[m] = c[m - 1] * (m as f64 - a) / m as f64;
        }
        let t = self.horizon;
        let mut s = 0.0;
        for m in 0..TAIL_TERMS {
            for l in 0..TAIL_TERMS {
                let e = (m + l) as f64 + 1.0 - 2.0 * a;
                s += c[m] * c[l] * x.moments[m] * y.moments[l] * t.powf(-e) / e;
            }
        }
        s / gamma(a).powi(2)
    }
}

/// `<phi, psi>_H` through `<I^{H-1/2} phi, I^{H-1/2} psi>_{L2}` on `[0, horizon]`
/// plus an asymptotic tail, divided by [`frac_representation_constant`].
pub fn h_inner_frac_report(
    phi: &HSpaceElement,
    psi: &HSpaceElement,
    horizon: f64,
) -> Result<FracInnerReport> {
    check_pair(phi, psi)?;
    if !(horizon >= phi.grid().horizon()) {
        return Err(Error::domain(format!(
            "truncation horizon {horizon} lies inside the support [0, {}]",
            phi.grid().horizon()
        )));
    }
    let quad = FracQuadrature::new(phi.hurst, phi.grid(), horizon);
    let q = quad.cell_w.len();
    let mut truncated = 0.0;
    let mut tail = 0.0;
    let mut tail_bound = 0.0;
    for i in 0..phi.dim() {
        let x = quad.sample(phi.cells(i));
        let same = std::ptr::eq(phi, psi);
        let y_owned;
        let y = if same {
            &x
        } else {
            y_owned = quad.sample(psi.cells(i));
            &y_owned
        };
        truncated += x
            .inner
            .iter()
            .zip(&y.inner)
            .enumerate()
            .map(|(idx, (u, v))| u * v * quad.cell_w[idx % q])
            .sum::<f64>();
        truncated += x
            .outer
            .iter()
            .zip(&y.outer)
            .zip(&quad.outer_w)
            .map(|((u, v), w)| u * v * w)
            .sum::<f64>();
        tail += quad.tail(&x, y);
        let a = quad.a;
        tail_bound += (x.moments[0] * y.moments[0]).abs() * horizon.powf(2.0 * a - 1.0)
            / (gamma(a).powi(2) * (1.0 - 2.0 * a));
    }
    let kappa = frac_representation_constant(phi.hurst);
    let l2 = truncated + tail;
    Ok(FracInnerReport {
        value: l2 / kappa,
        l2_pairing: l2,
        representation_constant: kappa,
        truncated_part: truncated,
        tail,
        tail_bound,
        horizon,
    })
}

pub fn h_inner_frac(phi: &HSpaceElement, psi: &HSpaceElement) -> Result<f64> {
    Ok(h_inner_frac_report(phi, psi, DEFAULT_FRAC_HORIZON)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBoundReport {
    pub h_norm: f64,
    pub sup_norm: f64,
    /// Hölder seminorm plus sup norm.
    pub holder_norm: f64,
    /// `||f||_H ||f||_gamma^{2+1/gamma} / ||f||_inf^{3+1/gamma}`; `None` for the zero path.
    pub bound_ratio: Option<f64>,
    pub zero_path: bool,
}

/// The three norms entering the lower bound on `||f||_H` and their ratio.
///
/// `||f||_gamma` is taken as seminorm plus sup norm so constants stay finite.
pub fn h_norm_lower_bound(
    f: &SampledPath,
    hurst: HurstParameter,
    gamma_exp: f64,
) -> Result<NormBoundReport> {
    if !(gamma_exp > hurst.value() - 0.5 && gamma_exp <= 1.0) {
        return Err(Error::Precondition(format!(
            "Hölder exponent {gamma_exp} must exceed H - 1/2 = {}",
            hurst.value() - 0.5
        )));
    }
    let sup = sup_norm(f);
    let holder = holder_norm(f, gamma_exp)? + sup;
    let h = h_norm(&HSpaceElement::new(f.clone(), hurst))?;
    let zero_path = sup == 0.0;
    let bound_ratio = (!zero_path)
        .then(|| h * holder.powf(2.0 + 1.0 / gamma_exp) / sup.powf(3.0 + 1.0 / gamma_exp));
    Ok(NormBoundReport {
        h_norm: h,
        sup_norm: sup,
        holder_norm: holder,
        bound_ratio,
        zero_path,
    })
}

/// Tolerance on the normalised kernel-vs-fractional gap over a corpus.
pub const REPRESENTATION_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Smooth,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationRow {
    pub pair: usize,
    pub kind: CorpusKind,
    pub kernel: f64,
    pub frac: f64,
    /// `|kernel - frac| / (||phi||_H ||psi||_H + 1e-12)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub hurst: HurstParameter,
    pub n_steps: usize,
    pub seed: u64,
    pub rows: Vec<RepresentationRow>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn corpus_element(
    kind: CorpusKind,
    grid: TimeGrid,
    rng: &mut crate::rng::StreamRng,
) -> SampledPath {
    use rand::Rng;
    match kind {
        CorpusKind::Smooth => {
            let a0: f64 = rng.random_range(-1.0..1.0);
            let coeffs: Vec<(f64, f64)> = (0..3)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            SampledPath::from_fn(grid, |t| {
                let pi_t = std::f64::consts::PI * t;
                a0 + coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, b))| {
                        a * ((k + 1) as f64 * pi_t).sin() + b * ((k + 1) as f64 * pi_t).cos()
                    })
                    .sum::<f64>()
            })
        }
        CorpusKind::Step => {
            let pieces = rng.random_range(2..=6usize);
            let mut breaks: Vec<f64> = (1..pieces).map(|_| rng.random_range(0.0..1.0)).collect();
            breaks.sort_by(f64::total_cmp);
            let levels: Vec<f64> = (0..pieces).map(|_| rng.random_range(-2.0..2.0)).collect();
            let horizon = grid.horizon();
            SampledPath::from_fn(grid, |t| {
                levels[breaks.iter().filter(|&&b| b * horizon <= t).count()]
            })
        }
    }
}

/// Compare the kernel and fractional forms on `n_pairs` seeded pairs,
/// alternating smooth trigonometric and random step functions.
pub fn representation_check(
    hurst: HurstParameter,
    grid: TimeGrid,
    n_pairs: usize,
    seed: u64,
) -> Result<RepresentationReport> {
    if n_pairs == 0 {
        return Err(Error::Precondition(
            "the corpus needs at least one pair".into(),
        ));
    }
    let rows: Vec<RepresentationRow> = (0..n_pairs)
        .into_par_iter()
        .map(|pair| {
            let kind = if pair % 2 == 0 {
                CorpusKind::Smooth
            } else {
                CorpusKind::Step
            };
            let mut rng = crate::rng::substream(seed, "reprh-corpus", pair as u64);
            let phi = HSpaceElement::new(corpus_element(kind, grid, &mut rng), hurst);
            let psi = HSpaceElement::new(corpus_element(kind, grid, &mut rng), hurst);
            let kernel = h_inner_kernel(&phi, &psi)?;
            let frac = h_inner_frac(&phi, &psi)?;
            let scale = h_norm(&phi)? * h_norm(&psi)?;
            Ok(RepresentationRow {
                pair,
                kind,
                kernel,
                frac,
                rel_error: (kernel - frac).abs() / (scale + 1e-12),
            })
        })
        .collect::<Result<_>>()?;
    let max_rel_error = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(RepresentationReport {
        hurst,
        n_steps: grid.n_steps(),
        seed,
        rows,
        max_rel_error,
        tolerance: REPRESENTATION_TOL,
        pass: max_rel_error <= REPRESENTATION_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::covariance;
    use approx::assert_relative_eq;

    fn h(v: f64) -> HurstParameter {
        HurstParameter::new(v).unwrap()
    }

    #[test]
    fn frac_integral_power_rule() {
        let g = TimeGrid::unit(256).unwrap();
        let one = SampledPath::constant(g, 1.0);
        let i = frac_integral(&one, 0.25).unwrap();
        assert_relative_eq!(i.values[0][256], 1.0 / gamma(1.25), max_relative = 1e-12);
        let zero = frac_integral(&SampledPath::constant(g, 0.0), 0.4).unwrap();
        assert!(zero.values[0].iter().all(|&x| x == 0.0));
        assert!(frac_integral(&one, 1.0).is_err());
        assert!(frac_integral(&one, 0.0).is_err());
    }

    #[test]
    fn frac_integral_linear_converges() {
        let target = 1.0 / gamma(2.5);
        let err = |n| {
            let g = TimeGrid::unit(n).unwrap();
            let p = SampledPath::from_fn(g, |t| t);
            (frac_integral(&p, 0.5).unwrap().values[0][n] - target).abs()
        };
        let (e1, e2) = (err(256), err(1024));
        assert!(e2 < 2e-3);
        assert!(e2 < e1 / 3.0);
    }

    #[test]
    fn derivative_of_power_is_constant() {
        let alpha = 0.3;
        let g = TimeGrid::unit(2048).unwrap();
        let f = SampledPath::from_fn(g, |t| t.powf(alpha));
        let d = frac_derivative(&f, alpha).unwrap();
        for k in (512..=2048).step_by(128) {
            assert_relative_eq!(d.values[0][k], gamma(1.0 + alpha), max_relative = 5e-3);
        }
        let z = frac_derivative(&SampledPath::constant(g, 0.0), alpha).unwrap();
        assert!(z.values[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn minus_derivative_of_zero() {
        let g = TimeGrid::unit(64).unwrap();
        let d = frac_derivative_minus(&SampledPath::constant(g, 0.0), 0.4).unwrap();
        assert!(d.values[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn minus_derivative_of_linear_matches_closed_form() {
        // f(s) = 1 - s on [0, 1], zero after; the inner part gives -(1-t)^{1-a}/(1-a)
        // and the extension gives -(1-t)^{1-a}/a
        let a = 0.35;
        let g = TimeGrid::unit(128).unwrap();
        let f = SampledPath::from_fn(g, |t| 1.0 - t);
        let d = frac_derivative_minus(&f, a).unwrap();
        for k in [0, 17, 64, 100] {
            let t = g.node(k);
            let r = (1.0 - t).powf(1.0 - a);
            let exact = -a / gamma(1.0 - a) * (-r / (1.0 - a) - r / a);
            assert_relative_eq!(d.values[0][k], exact, max_relative = 1e-10);
        }
        assert_eq!(d.values[0][128], 0.0);
    }

    #[test]
    fn kernel_inner_product_of_indicators() {
        let g = TimeGrid::unit(64).unwrap();
        for &hv in &[0.6, 0.75, 0.9] {
            let hp = h(hv);
            let one = HSpaceElement::indicator(hp, g, 1.0);
            assert_relative_eq!(
                h_inner_kernel(&one, &one).unwrap(),
                1.0,
                max_relative = 1e-12
            );
            let a = HSpaceElement::indicator(hp, g, 0.25);
            let b = HSpaceElement::indicator(hp, g, 0.625);
            assert_relative_eq!(
                h_inner_kernel(&a, &b).unwrap(),
                covariance(hp, 0.25, 0.625).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn orthogonal_components() {
        let g = TimeGrid::unit(32).unwrap();
        let f = SampledPath::new(g, vec![g.nodes(), vec![0.0; 33]]).unwrap();
        let s = SampledPath::new(
            g,
            vec![vec![0.0; 33], g.nodes().iter().map(|t| t * t).collect()],
        )
        .unwrap();
        let hp = h(0.7);
        let v = h_inner_kernel(&HSpaceElement::new(f, hp), &HSpaceElement::new(s, hp)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn representation_constant_matches_known_values() {
        // at H = 3/4 the constant is Gamma(1/2) / (Gamma(1/4) Gamma(3/4) * 3/8)
        let k = frac_representation_constant(h(0.75));
        assert_relative_eq!(k, 1.063_846_081_070_4, max_relative = 1e-9);
    }

    #[test]
    fn frac_form_matches_kernel_form_on_indicators() {
        let g = TimeGrid::unit(256).unwrap();
        for &hv in &[0.6, 0.7, 0.85] {
            let hp = h(hv);
            let a = HSpaceElement::indicator(hp, g, 0.5);
            let b = HSpaceElement::indicator(hp, g, 1.0);
            let k = h_inner_kernel(&a, &b).unwrap();
            let f = h_inner_frac(&a, &b).unwrap();
            assert_relative_eq!(f, k, max_relative = 2e-3);
            let zero = HSpaceElement::new(SampledPath::constant(g, 0.0), hp);
            assert_eq!(h_inner_frac(&zero, &b).unwrap(), 0.0);
        }
    }

    #[test]
    fn lower_bound_degenerate_paths() {
        let g = TimeGrid::unit(64).unwrap();
        let r = h_norm_lower_bound(&SampledPath::constant(g, 0.0), h(0.7), 0.3).unwrap();
        assert!(r.zero_path && r.bound_ratio.is_none());
        let r = h_norm_lower_bound(&SampledPath::constant(g, 1.0), h(0.7), 0.3).unwrap();
        assert_relative_eq!(r.holder_norm, 1.0);
        assert!(r.bound_ratio.unwrap().is_finite());
        assert!(h_norm_lower_bound(&SampledPath::constant(g, 1.0), h(0.7), 0.15).is_err());
    }

    #[test]
    fn small_corpus_agrees() {
        let rep = representation_check(h(0.7), TimeGrid::unit(256).unwrap(), 6, 4).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert_eq!(rep.rows[1].kind, CorpusKind::Step);
        assert!(rep.pass, "max rel error {}", rep.max_rel_error);
        assert!(representation_check(h(0.7), TimeGrid::unit(8).unwrap(), 0, 4).is_err());
    }
}
