//! Iterated integrals, log-signature coefficients, the truncated Chen
//! series and small-time density exponents.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fbm::{CholeskySampler, ComponentSampler, FbmPath};
use crate::grid::{HurstParameter, TimeGrid};
use crate::hormander::lie_bracket;
use crate::poly::{CompiledField, VectorField, VectorFieldSystem};
use crate::sde::{solve, Scheme};
use crate::stats::{mean_se, weighted_fit, Z95};

/// Largest supported word length.
pub const MAX_LEVEL: usize = 4;
/// Largest level accepted by `chen_approximation`.
pub const MAX_CHEN_LEVEL: usize = 3;

/// How the nested integrals are discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Nested left-point Riemann-Stieltjes sums.
    #[default]
    LeftPoint,
    /// Exact integrals of the piecewise-linear interpolation of the driver.
    Linear,
}

/// Words of length `k` over `d` letters are stored at index
/// `sum_j (i_j - 1) d^{k-j}`, first letter most significant.
fn word_index(d: usize, word: &[usize]) -> usize {
    word.iter().fold(0, |acc, &l| acc * d + (l - 1))
}

fn index_word(d: usize, k: usize, mut idx: usize) -> Vec<usize> {
    let mut w = vec![0; k];
    for slot in w.iter_mut().rev() {
        *slot = idx % d + 1;
        idx /= d;
    }
    w
}

/// All words of length `k` over `1..=d` in index order.
pub fn words(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0..d.pow(k as u32)).map(|i| index_word(d, k, i)).collect()
}

/// Iterated integrals of every word up to length `level`, at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteratedIntegralTable {
    pub d: usize,
    pub level: usize,
    pub horizon: f64,
    pub quadrature: Quadrature,
    pub driver_seed: u64,
    pub driver_replica: u64,
    /// `values[k-1][word_index]`.
    pub values: Vec<Vec<f64>>,
}

impl IteratedIntegralTable {
    /// Value for a word with letters in `1..=d`.
    pub fn get(&self, word: &[usize]) -> f64 {
        self.values[word.len() - 1][word_index(self.d, word)]
    }
}

fn check_level(level: usize, max: usize) -> Result<()> {
    if level == 0 {
        return Err(Error::Precondition(
            "truncation level must be at least 1".into(),
        ));
    }
    if level > max {
        return Err(Error::LevelTooLarge { level, max });
    }
    Ok(())
}

fn left_point_integrals(driver: &FbmPath, level: usize) -> Vec<Vec<f64>> {
    let d = driver.dim;
    let n = driver.grid.n_steps();
    let mut running: Vec<Vec<f64>> = (1..=level).map(|k| vec![0.0; d.pow(k as u32)]).collect();
    let mut db = vec![0.0; d];
    for m in 0..n {
        for (j, slot) in db.iter_mut().enumerate() {
            *slot = driver.increment(j, m);
        }
        // highest level first so every update reads left-point values
        for k in (1..=level).rev() {
            if k == 1 {
                for (j, v) in running[0].iter_mut().enumerate() {
                    *v = driver.values[j][m + 1] - driver.values[j][0];
                }
            } else {
                let (lower, upper) = running.split_at_mut(k - 1);
                let prev = &lower[k - 2];
                for (idx, v) in upper[0].iter_mut().enumerate() {
                    *v += prev[idx / d] * db[idx % d];
                }
            }
        }
    }
    running
}

fn linear_integrals(driver: &FbmPath, level: usize) -> Vec<Vec<f64>> {
    let d = driver.dim;
    let n = driver.grid.n_steps();
    let mut sig: Vec<Vec<f64>> = (1..=level).map(|k| vec![0.0; d.pow(k as u32)]).collect();
    let mut seg: Vec<Vec<f64>> = sig.clone();
    for m in 0..n {
        // signature of one linear piece: level k is the k-fold tensor power over k!
        for j in 0..d {
            seg[0][j] = driver.increment(j, m);
        }
        for k in 2..=level {
            let (lower, upper) = seg.split_at_mut(k - 1);
            let prev = &lower[k - 2];
            for (idx, v) in upper[0].iter_mut().enumerate() {
                *v = prev[idx / d] * lower[0][idx % d] / k as f64;
            }
        }
        // Chen: (S x E)_k = sum_j S_j x E_{k-j}, updated from the top level down
        for k in (1..=level).rev() {
            let mut next = sig[k - 1].clone();
            for (idx, v) in next.iter_mut().enumerate() {
                let mut acc = seg[k - 1][idx];
                for j in 1..k {
                    let tail = d.pow((k - j) as u32);
                    acc += sig[j - 1][idx / tail] * seg[k - j - 1][idx % tail];
                }
                *v += acc;
            }
            sig[k - 1] = next;
        }
        for j in 0..d {
            sig[0][j] = driver.values[j][m + 1] - driver.values[j][0];
        }
    }
    sig
}

/// Nested left-point iterated integrals up to `level` over the whole driver.
pub fn iterated_integrals(driver: &FbmPath, level: usize) -> Result<IteratedIntegralTable> {
    iterated_integrals_with(driver, level, Quadrature::LeftPoint)
}

pub fn iterated_integrals_with(
    driver: &FbmPath,
    level: usize,
    quadrature: Quadrature,
) -> Result<IteratedIntegralTable> {
    check_level(level, MAX_LEVEL)?;
    let values = match quadrature {
        Quadrature::LeftPoint => left_point_integrals(driver, level),
        Quadrature::Linear => linear_integrals(driver, level),
    };
    Ok(IteratedIntegralTable {
        d: driver.dim,
        level,
        horizon: driver.grid.horizon(),
        quadrature,
        driver_seed: driver.seed,
        driver_replica: driver.replica,
        values,
    })
}

/// `|I_ij + I_ji - B^i B^j|` maximised over pairs.
pub fn shuffle_residual(table: &IteratedIntegralTable) -> Result<f64> {
    if table.level < 2 {
        return Err(Error::Precondition(
            "the shuffle identity needs level 2".into(),
        ));
    }
    let d = table.d;
    let mut worst = 0.0f64;
    for i in 1..=d {
        for j in 1..=d {
            let r = table.get(&[i, j]) + table.get(&[j, i]) - table.get(&[i]) * table.get(&[j]);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// `2 T mesh^{2H-1}`: bounds the mean left-point shuffle residual of a two-letter driver.
pub fn shuffle_residual_bound(grid: TimeGrid, hurst: HurstParameter) -> f64 {
    2.0 * grid.horizon() * grid.mesh().powf(2.0 * hurst.value() - 1.0)
}

fn check_permutation(sigma: &[usize]) -> Result<()> {
    let k = sigma.len();
    let mut seen = vec![false; k + 1];
    for &s in sigma {
        if s == 0 || s > k || seen[s] {
            return Err(Error::InvalidPermutation(format!(
                "{sigma:?} is not a permutation of 1..={k}"
            )));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Number of positions `j` with `sigma(j) > sigma(j+1)`, one-line notation.
pub fn raising_count(sigma: &[usize]) -> Result<usize> {
    check_permutation(sigma)?;
    Ok(sigma.windows(2).filter(|w| w[0] > w[1]).count())
}

/// All permutations of `1..=k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        let k = used.len();
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for v in 0..k {
            if !used[v] {
                used[v] = true;
                prefix.push(v + 1);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTerm {
    pub sigma: Vec<usize>,
    pub raising: usize,
    /// `(-1)^e / (k^2 C(k-1, e))`.
    pub coefficient: f64,
    /// `sigma^{-1}` in one-line notation.
    pub inverse: Vec<usize>,
}

/// Coefficients of every permutation of length `k`.
pub fn coefficient_table(k: usize) -> Vec<PermutationTerm> {
    permutations(k)
        .into_iter()
        .map(|sigma| {
            let e = sigma.windows(2).filter(|w| w[0] > w[1]).count();
            let mut inverse = vec![0; k];
            for (pos, &s) in sigma.iter().enumerate() {
                inverse[s - 1] = pos + 1;
            }
            let sign = if e % 2 == 0 { 1.0 } else { -1.0 };
            PermutationTerm {
                sigma,
                raising: e,
                coefficient: sign / ((k * k) as f64 * binomial(k - 1, e)),
                inverse,
            }
        })
        .collect()
}

/// `Lambda_I` for every word up to the table's level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSignature {
    pub d: usize,
    pub level: usize,
    /// `values[k-1][word_index]`.
    pub values: Vec<Vec<f64>>,
    /// Permutation data used at each level.
    pub terms: Vec<Vec<PermutationTerm>>,
}

impl LogSignature {
    pub fn get(&self, word: &[usize]) -> f64 {
        self.values[word.len() - 1][word_index(self.d, word)]
    }
}

pub fn log_signature(table: &IteratedIntegralTable) -> LogSignature {
    let d = table.d;
    let mut values = Vec::with_capacity(table.level);
    let mut terms = Vec::with_capacity(table.level);
    for k in 1..=table.level {
        let coeffs = coefficient_table(k);
        let level: Vec<f64> = words(d, k)
            .iter()
            .map(|w| {
                coeffs
                    .iter()
                    .map(|t| {
                        // (sigma^{-1} . I)_j = i_{sigma^{-1}(j)}
                        let permuted: Vec<usize> = t.inverse.iter().map(|&p| w[p - 1]).collect();
                        t.coefficient * table.get(&permuted)
                    })
                    .sum()
            })
            .collect();
        values.push(level);
        terms.push(coeffs);
    }
    LogSignature {
        d,
        level: table.level,
        values,
        terms,
    }
}

/// Nested brackets `V_I = [V_{i_1}, [V_{i_2}, ...]]` for every word up to `level`.
pub fn word_fields(sys: &VectorFieldSystem, level: usize) -> Result<Vec<Vec<VectorField>>> {
    let d = sys.d;
    let mut out: Vec<Vec<VectorField>> = vec![sys.fields.clone()];
    for k in 2..=level {
        let prev = &out[k - 2];
        let cur = (0..d.pow(k as u32))
            .into_par_iter()
            .map(|idx| {
                let tail = d.pow((k - 1) as u32);
                lie_bracket(&sys.fields[idx / tail], &prev[idx % tail])
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(cur);
    }
    Ok(out)
}

/// `sum_k sum_I Lambda_I V_I`.
pub fn log_signature_field(sys: &VectorFieldSystem, ls: &LogSignature) -> Result<VectorField> {
    let fields = word_fields(sys, ls.level)?;
    let mut w = VectorField::zero(sys.n);
    for (lv, fv) in ls.values.iter().zip(&fields) {
        for (c, f) in lv.iter().zip(fv) {
            if *c != 0.0 && !f.is_zero() {
                w = w.add(&f.scale(*c));
            }
        }
    }
    Ok(w)
}

const FLOW_TOL: f64 = 1e-13;
const FLOW_LIMIT: f64 = 1e12;

fn rk4_step(f: &CompiledField, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let eval = |y: &[f64]| f.eval(y);
    let k1 = eval(x);
    let y2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = eval(&y2);
    let y3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
    let k3 = eval(&y3);
    let y4: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
    let k4 = eval(&y4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Time-`duration` flow of `field` from `x0`, classical RK4 with step
/// doubling error control.
pub fn flow(field: &VectorField, x0: &[f64], duration: f64) -> Result<Vec<f64>> {
    let f = CompiledField::new(field);
    if f.is_constant() {
        let v = f.eval(x0);
        return Ok(x0
            .iter()
            .zip(v.iter())
            .map(|(x, v)| x + duration * v)
            .collect());
    }
    let mut x = x0.to_vec();
    let mut s = 0.0;
    let mut h = duration / 16.0;
    let mut steps = 0usize;
    while s < duration {
        h = h.min(duration - s);
        let full = rk4_step(&f, &x, h);
        let half = rk4_step(&f, &rk4_step(&f, &x, 0.5 * h), 0.5 * h);
        let scale = 1.0 + half.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = full
            .iter()
            .zip(&half)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / 15.0;
        if !err.is_finite() || scale > FLOW_LIMIT {
            return Err(Error::domain("vector field flow blew up"));
        }
        if err <= FLOW_TOL * scale || h < 1e-12 * duration {
            // Richardson-corrected accepted step
            x = half
                .iter()
                .zip(&full)
                .map(|(b, a)| b + (b - a) / 15.0)
                .collect();
            s += h;
            let grow = if err > 0.0 {
                0.9 * (FLOW_TOL * scale / err).powf(0.2)
            } else {
                4.0
            };
            h *= grow.clamp(0.2, 4.0);
        } else {
            h *= (0.9 * (FLOW_TOL * scale / err).powf(0.2)).clamp(0.1, 0.9);
        }
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::domain("vector field flow did not converge"));
        }
    }
    Ok(x)
}

/// `exp(sum_{k<=N} sum_I Lambda_I(B)_t V_I)(x0)`, the time-one flow of the
/// log-signature field, with the integrals of the interpolated driver.
pub fn chen_approximation(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    t: f64,
    level: usize,
) -> Result<Vec<f64>> {
    check_level(level, MAX_CHEN_LEVEL)?;
    if sys.drift.is_some() {
        return Err(Error::Precondition(
            "the Chen series is formed from diffusion fields only".into(),
        ));
    }
    if driver.dim != sys.d {
        return Err(Error::domain(format!(
            "driver has {} components, system needs {}",
            driver.dim, sys.d
        )));
    }
    let table = iterated_integrals_with(&driver.truncated(t)?, level, Quadrature::Linear)?;
    let w = log_signature_field(sys, &log_signature(&table))?;
    flow(&w, x0, 1.0)
}

/// Solution driven by the piecewise-linear interpolation of `driver`, up
/// to time `t`, with `substeps` RK4 steps per grid cell.
pub fn linear_driver_solution(
    sys: &VectorFieldSystem,
    x0: &[f64],
    driver: &FbmPath,
    t: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    if sys.drift.is_some() {
        return Err(Error::Precondition(
            "reference flow is for diffusion fields only".into(),
        ));
    }
    let trunc = driver.truncated(t)?;
    let fields: Vec<CompiledField> = sys.fields.iter().map(CompiledField::new).collect();
    let mut x = x0.to_vec();
    let n = x.len();
    let m = substeps.max(1);
    let mut out = vec![0.0; n];
    for k in 0..trunc.grid.n_steps() {
        let db: Vec<f64> = (0..sys.d).map(|j| trunc.increment(j, k)).collect();
        let rhs = |y: &[f64], out: &mut Vec<f64>| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (f, &b) in fields.iter().zip(&db) {
                f.add_value(y, b, out);
            }
        };
        let h = 1.0 / m as f64;
        for _ in 0..m {
            let mut k1 = vec![0.0; n];
            rhs(&x, &mut k1);
            let y: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
            let mut k2 = vec![0.0; n];
            rhs(&y, &mut k2);
            let y: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
            let mut k3 = vec![0.0; n];
            rhs(&y, &mut k3);
            let y: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
            rhs(&y, &mut out);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + out[i]);
            }
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > FLOW_LIMIT) {
            return Err(Error::BlowUp { node: k + 1 });
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Steps of the unit-horizon driver before rescaling to `[0, t]`.
    pub n_steps: usize,
    pub scheme: Scheme,
    pub n_batches: usize,
    /// Flip the sign of every driver (paired-seed symmetry checks).
    pub negate_driver: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            n_steps: 64,
            scheme: Scheme::Heun,
            n_batches: 20,
            negate_driver: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub t: f64,
    pub n_samples: usize,
    pub failed_paths: usize,
    pub bandwidth: Vec<f64>,
    pub kde: f64,
    pub kde_se: f64,
    pub knn: f64,
    pub knn_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub hurst: f64,
    pub x0: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub config: DensityConfig,
    pub points: Vec<DensityPoint>,
}

/// Eight log-spaced times in `[0.02, 0.5]`.
pub fn default_t_grid() -> Vec<f64> {
    log_spaced(0.02, 0.5, 8)
}

pub fn log_spaced(a: f64, b: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..k)
        .map(|i| (la + (lb - la) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Gaussian product kernel estimate at `x0` with the given bandwidths.
fn kde_at(samples: &[Vec<f64>], x0: &[f64], bw: &[f64]) -> f64 {
    let norm: f64 = bw
        .iter()
        .map(|h| h * (2.0 * std::f64::consts::PI).sqrt())
        .product();
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let q: f64 = s
                .iter()
                .zip(x0)
                .zip(bw)
                .map(|((a, b), h)| ((a - b) / h).powi(2))
                .sum();
            (-0.5 * q).exp()
        })
        .sum();
    sum / (samples.len() as f64 * norm)
}

/// `(k-1) / (N V_n r_k^n)` in coordinates standardised by `sd`.
fn knn_at(samples: &[Vec<f64>], x0: &[f64], sd: &[f64], k: usize) -> f64 {
    let n = x0.len();
    let mut dist: Vec<f64> = samples
        .iter()
        .map(|s| {
            s.iter()
                .zip(x0)
                .zip(sd)
                .map(|((a, b), h)| ((a - b) / h).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let k = k.clamp(2, dist.len());
    let (_, r, _) = dist.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    let r = *r;
    let ball = std::f64::consts::PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0);
    let jac: f64 = sd.iter().product();
    (k - 1) as f64 / (samples.len() as f64 * ball * r.powi(n as i32) * jac)
}

fn density_point(
    samples: &[Vec<f64>],
    x0: &[f64],
    t: f64,
    failed_paths: usize,
    n_batches: usize,
) -> DensityPoint {
    let dim = x0.len();
    let n = samples.len();
    let sd: Vec<f64> = (0..dim)
        .map(|i| {
            let col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let (m, _) = mean_se(&col);
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        })
        .collect();
    let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
    let bandwidth: Vec<f64> = sd.iter().map(|s| s * factor).collect();
    let kde = kde_at(samples, x0, &bandwidth);
    let batches = n_batches.clamp(2, n.max(2));
    let size = n / batches;
    let batch_values: Vec<f64> = (0..batches)
        .map(|b| kde_at(&samples[b * size..(b + 1) * size], x0, &bandwidth))
        .collect();
    let (_, kde_se) = mean_se(&batch_values);
    let knn_k = (n as f64).sqrt().round() as usize;
    DensityPoint {
        t,
        n_samples: n,
        failed_paths,
        bandwidth,
        kde,
        kde_se,
        knn: knn_at(samples, x0, &sd, knn_k),
        knn_k,
    }
}

/// Monte Carlo density of `X_t` at `x0` for each `t` in `t_grid`.
pub fn density_estimate(
    sys: &VectorFieldSystem,
    x0: &[f64],
    hurst: HurstParameter,
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
    cfg: &DensityConfig,
) -> Result<DensityReport> {
    if sys.drift.is_some() {
        return Err(Error::Precondition(
            "density estimation assumes no drift".into(),
        ));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Precondition("every t must lie in (0, 1]".into()));
    }
    if n_paths < 2 * cfg.n_batches.max(2) {
        return Err(Error::Precondition(
            "too few paths for batched standard errors".into(),
        ));
    }
    let sampler = CholeskySampler::cached(hurst, TimeGrid::unit(cfg.n_steps)?)?;
    let mut points = Vec::with_capacity(t_grid.len());
    for (ti, &t) in t_grid.iter().enumerate() {
        let label = format!("density-{ti}");
        let endpoints: Vec<Option<Vec<f64>>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|r| {
                let mut driver = sampler.draw(sys.d, seed, &label, r);
                if cfg.negate_driver {
                    driver.values.iter_mut().flatten().for_each(|v| *v = -*v);
                }
                let driver = driver.rescaled(t).ok()?;
                let sol = solve(sys, x0, &driver, cfg.scheme).ok()?;
                Some(sol.terminal().iter().copied().collect())
            })
            .collect();
        let failed = endpoints.iter().filter(|e| e.is_none()).count();
        let samples: Vec<Vec<f64>> = endpoints.into_iter().flatten().collect();
        points.push(density_point(&samples, x0, t, failed, cfg.n_batches));
    }
    Ok(DensityReport {
        hurst: hurst.value(),
        x0: x0.to_vec(),
        n_paths,
        seed,
        config: *cfg,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% interval for the slope.
    pub ci: (f64, f64),
    /// `exp(intercept)`, the fitted prefactor.
    pub prefactor: f64,
    pub chi2_per_dof: f64,
    pub n_points: usize,
    pub dropped: Vec<f64>,
    pub log_t: Vec<f64>,
    pub log_p: Vec<f64>,
}

/// Weighted fit of `log p` against `log t` with weights `(p / se)^2`.
///
/// The slope error is inflated by `sqrt(chi2 / dof)` when the scatter
/// exceeds the stated errors.
pub fn exponent_fit(t: &[f64], p: &[f64], se: &[f64]) -> Result<ExponentFit> {
    if t.len() != p.len() || t.len() != se.len() {
        return Err(Error::domain(
            "t, density and error vectors differ in length",
        ));
    }
    let mut lt = Vec::new();
    let mut lp = Vec::new();
    let mut w = Vec::new();
    let mut dropped = Vec::new();
    for ((&ti, &pi), &si) in t.iter().zip(p).zip(se) {
        if !(pi > 0.0 && pi.is_finite() && si > 0.0 && si.is_finite()) {
            log::warn!("dropping t = {ti}: density {pi}, standard error {si}");
            dropped.push(ti);
            continue;
        }
        lt.push(ti.ln());
        lp.push(pi.ln());
        w.push((pi / si).powi(2));
    }
    if lt.len() < 4 {
        return Err(Error::Precondition(
            "the exponent fit needs at least four usable points".into(),
        ));
    }
    let span = lt.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - lt.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < 10f64.ln() * (1.0 - 1e-9) {
        return Err(Error::Precondition(
            "the t points must span at least one decade".into(),
        ));
    }
    let fit = weighted_fit(&lt, &lp, &w);
    let dof = lt.len() - 2;
    let chi2: f64 = lt
        .iter()
        .zip(&lp)
        .zip(&w)
        .map(|((x, y), wi)| wi * (y - fit.intercept - fit.slope * x).powi(2))
        .sum();
    let chi2_per_dof = chi2 / dof as f64;
    let slope_se = fit.slope_se * chi2_per_dof.max(1.0).sqrt();
    Ok(ExponentFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se,
        ci: (fit.slope - Z95 * slope_se, fit.slope + Z95 * slope_se),
        prefactor: fit.intercept.exp(),
        chi2_per_dof,
        n_points: lt.len(),
        dropped,
        log_t: lt,
        log_p: lp,
    })
}

/// KDE and kNN exponent fits of a density report; the kNN fit reuses the
/// KDE relative errors.
pub fn report_fits(report: &DensityReport) -> Result<(ExponentFit, ExponentFit)> {
    let t: Vec<f64> = report.points.iter().map(|p| p.t).collect();
    let kde: Vec<f64> = report.points.iter().map(|p| p.kde).collect();
    let se: Vec<f64> = report.points.iter().map(|p| p.kde_se).collect();
    let knn: Vec<f64> = report.points.iter().map(|p| p.knn).collect();
    let knn_se: Vec<f64> = report
        .points
        .iter()
        .map(|p| p.knn * p.kde_se / p.kde)
        .collect();
    Ok((
        exponent_fit(&t, &kde, &se)?,
        exponent_fit(&t, &knn, &knn_se)?,
    ))
}

/// Iterated integrals at several nodes of one driver, keyed by node index.
pub fn integrals_at_nodes(
    driver: &FbmPath,
    level: usize,
    nodes: &[usize],
    quadrature: Quadrature,
) -> Result<HashMap<usize, IteratedIntegralTable>> {
    nodes
        .iter()
        .map(|&k| {
            Ok((
                k,
                iterated_integrals_with(
                    &driver.truncated(driver.grid.node(k))?,
                    level,
                    quadrature,
                )?,
            ))
        })
        .collect()
}

/// `|x - y|` for two points.
pub fn distance(x: &[f64], y: &[f64]) -> f64 {
    DVector::from_column_slice(x).metric_distance(&DVector::from_column_slice(y))
}
