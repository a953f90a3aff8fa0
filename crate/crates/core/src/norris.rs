//! Coarse-grained quadratic variation, Gaussian concentration and the
//! Norris-type small-ball sweep.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{fgn_autocovariance, CholeskySampler, ComponentSampler, CovarianceModel, FbmPath};
use crate::grid::{HurstParameter, TimeGrid};
use crate::poly::{CompiledField, VectorFieldSystem};
use crate::sde::{solve_variation, Scheme};
use crate::stats::{linear_fit, quantile_sorted, sorted, wilson_interval, Z95};
use crate::systems;

/// Returns `round(1/x)` when `1/x` is an integer up to rounding.
fn reciprocal_count(x: f64) -> Option<usize> {
    if !(x > 0.0 && x <= 1.0) {
        return None;
    }
    let inv = 1.0 / x;
    let k = inv.round();
    ((inv - k).abs() <= 1e-9 * k).then_some(k as usize)
}

/// Fine scale `delta` and coarse scale `Delta`, both reciprocals of
/// integers, with `Delta / delta = r` an integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseQvConfig {
    delta: f64,
    big_delta: f64,
    r: usize,
    n_blocks: usize,
}

impl CoarseQvConfig {
    pub fn new(delta: f64, big_delta: f64) -> Result<Self> {
        let n_fine = reciprocal_count(delta).ok_or_else(|| {
            Error::IncompatibleScale(format!(
                "1/delta must be a positive integer, got delta = {delta}"
            ))
        })?;
        let n_blocks = reciprocal_count(big_delta).ok_or_else(|| {
            Error::IncompatibleScale(format!(
                "1/Delta must be a positive integer, got Delta = {big_delta}"
            ))
        })?;
        if n_fine % n_blocks != 0 {
            return Err(Error::IncompatibleScale(format!(
                "1/Delta = {n_blocks} does not divide 1/delta = {n_fine}"
            )));
        }
        Self::from_counts(n_blocks, n_fine / n_blocks)
    }

    /// `n_blocks` coarse blocks of `r` fine steps each.
    pub fn from_counts(n_blocks: usize, r: usize) -> Result<Self> {
        if n_blocks == 0 || r == 0 {
            return Err(Error::IncompatibleScale(
                "block count and block length must be positive".into(),
            ));
        }
        Ok(Self {
            delta: 1.0 / (n_blocks * r) as f64,
            big_delta: 1.0 / n_blocks as f64,
            r,
            n_blocks,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn big_delta(&self) -> f64 {
        self.big_delta
    }

    /// Fine steps per block, the `N` of the concentration bounds.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn n_fine(&self) -> usize {
        self.r * self.n_blocks
    }
}

/// Block sums `X_N^{ij}` of products of fine increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorrisStatistics {
    pub config: CoarseQvConfig,
    /// `x_blocks[N][i][j]`.
    pub x_blocks: Vec<Vec<Vec<f64>>>,
    /// `sqrt(X_N^{ii})`.
    pub y_diag: Vec<Vec<f64>>,
    /// `sqrt(|X_N^{ij}|)`.
    pub y_off: Vec<Vec<Vec<f64>>>,
    /// Block scale, `T^2 = sum_n E (B(t_{n+1}) - B(t_n))^2` over one block.
    pub t: f64,
}

impl NorrisStatistics {
    /// `sum_N X_N^{ii}`.
    pub fn total_diagonal(&self, i: usize) -> f64 {
        self.x_blocks.iter().map(|b| b[i][i]).sum()
    }
}

/// Fine increments of `driver` at scale `delta`, per component.
fn coarse_increments(driver: &FbmPath, cfg: &CoarseQvConfig) -> Result<Vec<Vec<f64>>> {
    let grid = driver.grid;
    if (grid.horizon() - 1.0).abs() > 1e-12 {
        return Err(Error::IncompatibleScale(format!(
            "coarse statistics need a driver on [0, 1], got horizon {}",
            grid.horizon()
        )));
    }
    let n_fine = cfg.n_fine();
    if !grid.n_steps().is_multiple_of(n_fine) {
        return Err(Error::IncompatibleScale(format!(
            "driver grid with {} steps does not refine delta = 1/{n_fine}",
            grid.n_steps()
        )));
    }
    let stride = grid.n_steps() / n_fine;
    Ok(driver
        .values
        .iter()
        .map(|c| {
            (0..n_fine)
                .map(|n| c[(n + 1) * stride] - c[n * stride])
                .collect()
        })
        .collect())
}

/// Block statistics with `T` taken from the exact fBm covariance.
pub fn coarse_qv(driver: &FbmPath, cfg: &CoarseQvConfig) -> Result<NorrisStatistics> {
    coarse_qv_with_model(driver, cfg, &CovarianceModel::exact_fbm(driver.hurst))
}

/// Block statistics with `T` taken from `model`.
pub fn coarse_qv_with_model(
    driver: &FbmPath,
    cfg: &CoarseQvConfig,
    model: &CovarianceModel,
) -> Result<NorrisStatistics> {
    let inc = coarse_increments(driver, cfg)?;
    let d = driver.dim;
    let r = cfg.r();
    let mut x_blocks = Vec::with_capacity(cfg.n_blocks());
    for b in 0..cfg.n_blocks() {
        let range = b * r..(b + 1) * r;
        let mut m = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let s: f64 = range.clone().map(|n| inc[i][n] * inc[j][n]).sum();
                m[i][j] = s;
                m[j][i] = s;
            }
        }
        x_blocks.push(m);
    }
    let y_diag = x_blocks
        .iter()
        .map(|m| (0..d).map(|i| m[i][i].max(0.0).sqrt()).collect())
        .collect();
    let y_off = x_blocks
        .iter()
        .map(|m| {
            m.iter()
                .map(|row| row.iter().map(|x| x.abs().sqrt()).collect())
                .collect()
        })
        .collect();
    let delta = cfg.delta();
    let t2: f64 = (0..r)
        .map(|n| model.increment_variance(n as f64 * delta, (n + 1) as f64 * delta))
        .sum();
    Ok(NorrisStatistics {
        config: *cfg,
        x_blocks,
        y_diag,
        y_off,
        t: t2.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub h: f64,
    pub probability: f64,
}

/// Tail curves and fitted exponential rates at one `(delta, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSetting {
    pub delta: f64,
    pub n: usize,
    pub t: f64,
    /// `N / (delta N)^{2H}`.
    pub rate_scale: f64,
    pub n_samples: usize,
    /// `P(| |X^i| - T | >= h)`.
    pub diff_tail: Vec<TailPoint>,
    /// `P(|<X^i, X^j>| >= h^2)`.
    pub cov_tail: Vec<TailPoint>,
    /// Minus the slope of `log P` against `h^2` over the quantile band.
    pub diff_rate: f64,
    pub cov_rate: f64,
    /// Tails at `h = 10 (delta N)^H / sqrt(N)`.
    pub diff_tail_far: f64,
    pub cov_tail_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub hurst: f64,
    pub n_paths: usize,
    pub settings: Vec<ConcentrationSetting>,
    /// Ratio of `N / (delta N)^{2H}` between the two settings.
    pub predicted_ratio: f64,
    pub diff_rate_ratio: f64,
    pub cov_rate_ratio: f64,
    pub diff_relative_error: f64,
    pub cov_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Quantile levels used for the rate fit.
const FIT_LEVELS: (f64, f64, usize) = (0.3, 0.995, 30);
pub const CONCENTRATION_TOL: f64 = 0.3;

fn empirical_tail(sorted_samples: &[f64], x: f64) -> f64 {
    let below = sorted_samples.partition_point(|&s| s < x);
    (sorted_samples.len() - below) as f64 / sorted_samples.len() as f64
}

/// Minus the slope of `log P(S >= s)` against `s` over a band of quantiles;
/// callers pass squared deviations so that `s` plays the role of `h^2`.
fn tail_rate(sorted_samples: &[f64]) -> f64 {
    let (lo, hi, k) = FIT_LEVELS;
    let mut xs = Vec::with_capacity(k);
    let mut ys = Vec::with_capacity(k);
    for i in 0..k {
        let q = lo + (hi - lo) * i as f64 / (k - 1) as f64;
        let s = quantile_sorted(sorted_samples, q);
        xs.push(s);
        ys.push((1.0 - q).ln());
    }
    -linear_fit(&xs, &ys).slope
}

fn concentration_setting(
    hurst: HurstParameter,
    cfg: &CoarseQvConfig,
    n_paths: usize,
    seed: u64,
    label: &str,
) -> Result<ConcentrationSetting> {
    let h = hurst.value();
    let grid = TimeGrid::unit(cfg.n_fine())?;
    let sampler = CholeskySampler::cached(hurst, grid)?;
    let per_path: Vec<Result<NorrisStatistics>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|r| coarse_qv(&sampler.draw(2, seed, label, r), cfg))
        .collect();
    let mut diffs = Vec::with_capacity(2 * n_paths * cfg.n_blocks());
    let mut covs = Vec::with_capacity(n_paths * cfg.n_blocks());
    let mut t = 0.0;
    for stats in per_path {
        let stats = stats?;
        t = stats.t;
        for (b, y) in stats.x_blocks.iter().zip(&stats.y_diag) {
            diffs.push((y[0] - stats.t).abs());
            diffs.push((y[1] - stats.t).abs());
            covs.push(b[0][1].abs());
        }
    }
    let diffs = sorted(&diffs);
    let covs = sorted(&covs);
    let n = cfg.r();
    let dn = cfg.big_delta();
    let h_far = 10.0 * dn.powf(h) / (n as f64).sqrt();
    let n_grid = 40;
    let hs: Vec<f64> = (0..=n_grid)
        .map(|i| h_far * i as f64 / n_grid as f64)
        .collect();
    Ok(ConcentrationSetting {
        delta: cfg.delta(),
        n,
        t,
        rate_scale: n as f64 / dn.powf(2.0 * h),
        n_samples: diffs.len(),
        diff_tail: hs
            .iter()
            .map(|&x| TailPoint {
                h: x,
                probability: empirical_tail(&diffs, x),
            })
            .collect(),
        cov_tail: hs
            .iter()
            .map(|&x| TailPoint {
                h: x,
                probability: empirical_tail(&covs, x * x),
            })
            .collect(),
        diff_rate: tail_rate(&diffs.iter().map(|x| x * x).collect::<Vec<_>>()),
        cov_rate: tail_rate(&covs),
        diff_tail_far: empirical_tail(&diffs, h_far),
        cov_tail_far: empirical_tail(&covs, h_far * h_far),
    })
}

/// Tail experiment at `(delta, N)` from `cfg` and at `(delta/2, 2N)`.
///
/// Both components of a two-dimensional driver and every block contribute
/// samples; the rates are compared through their ratio, so the unknown
/// constants cancel.
pub fn concentration_experiment(
    hurst: HurstParameter,
    cfg: &CoarseQvConfig,
    n_paths: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if n_paths < 100 {
        return Err(Error::Precondition(
            "the tail fit needs at least 100 paths".into(),
        ));
    }
    let refined = CoarseQvConfig::from_counts(cfg.n_blocks(), 2 * cfg.r())?;
    let a = concentration_setting(hurst, cfg, n_paths, seed, "concentration-coarse")?;
    let b = concentration_setting(hurst, &refined, n_paths, seed, "concentration-fine")?;
    let predicted_ratio = b.rate_scale / a.rate_scale;
    let diff_rate_ratio = b.diff_rate / a.diff_rate;
    let cov_rate_ratio = b.cov_rate / a.cov_rate;
    let diff_relative_error = (diff_rate_ratio / predicted_ratio - 1.0).abs();
    let cov_relative_error = (cov_rate_ratio / predicted_ratio - 1.0).abs();
    Ok(ConcentrationReport {
        hurst: hurst.value(),
        n_paths,
        settings: vec![a, b],
        predicted_ratio,
        diff_rate_ratio,
        cov_rate_ratio,
        diff_relative_error,
        cov_relative_error,
        tolerance: CONCENTRATION_TOL,
        pass: diff_relative_error <= CONCENTRATION_TOL && cov_relative_error <= CONCENTRATION_TOL,
    })
}

/// Covariance of the `n` fine increments of length `delta`.
pub fn increment_covariance(hurst: HurstParameter, delta: f64, n: usize) -> DMatrix<f64> {
    let scale = delta.powf(2.0 * hurst.value());
    let rho: Vec<f64> = (0..n).map(|k| fgn_autocovariance(hurst, k)).collect();
    DMatrix::from_fn(n, n, |m, k| scale * rho[m.abs_diff(k)])
}

/// `||Gamma||_HS^2` without forming the matrix.
pub fn hs_norm_sq(hurst: HurstParameter, delta: f64, n: usize) -> f64 {
    let scale = delta.powf(2.0 * hurst.value());
    let diag = n as f64 * fgn_autocovariance(hurst, 0).powi(2);
    let off: f64 = (1..n)
        .map(|k| 2.0 * (n - k) as f64 * fgn_autocovariance(hurst, k).powi(2))
        .sum();
    scale * scale * (diag + off)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsRow {
    pub n: usize,
    pub delta: f64,
    pub hs_sq: f64,
    /// `||Gamma||_HS^2 / delta^{4H}`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsReport {
    pub hurst: f64,
    /// `Gamma` at the block scale of the configuration.
    pub block_n: usize,
    pub block_hs_sq: f64,
    pub block_trace: f64,
    pub block_operator_norm: f64,
    pub max_diagonal_defect: f64,
    pub rows: Vec<HsRow>,
    pub slope: f64,
    pub predicted_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const HS_SIZES: [usize; 4] = [64, 128, 256, 512];
pub const HS_SLOPE_TOL: f64 = 0.3;

/// Exact increment covariance at the block scale of `cfg`, and the growth
/// exponent of `||Gamma||_HS^2 / delta^{4H}` in `N` at fixed `delta N`.
pub fn hs_bound_check(hurst: HurstParameter, cfg: &CoarseQvConfig) -> Result<HsReport> {
    let h = hurst.value();
    let r = cfg.r();
    let gamma = increment_covariance(hurst, cfg.delta(), r);
    let diag = cfg.delta().powf(2.0 * h);
    let max_diagonal_defect = (0..r)
        .map(|k| (gamma[(k, k)] - diag).abs())
        .fold(0.0, f64::max);
    let block_hs_sq = gamma.iter().map(|x| x * x).sum();
    let block_trace = gamma.trace();
    let block_operator_norm = SymmetricEigen::new(gamma).eigenvalues.max();
    let product = cfg.big_delta();
    let rows: Vec<HsRow> = HS_SIZES
        .iter()
        .map(|&n| {
            let delta = product / n as f64;
            let hs_sq = hs_norm_sq(hurst, delta, n);
            HsRow {
                n,
                delta,
                hs_sq,
                normalized: hs_sq / delta.powf(4.0 * h),
            }
        })
        .collect();
    let lx: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.normalized.ln()).collect();
    let slope = linear_fit(&lx, &ly).slope;
    let predicted_slope = 4.0 * h - 2.0;
    Ok(HsReport {
        hurst: h,
        block_n: r,
        block_hs_sq,
        block_trace,
        block_operator_norm,
        max_diagonal_defect,
        rows,
        slope,
        predicted_slope,
        tolerance: HS_SLOPE_TOL,
        pass: (slope - predicted_slope).abs() <= HS_SLOPE_TOL,
    })
}

/// `H(1-H) / ((1+H)(2-H))`.
pub fn alpha_limit(h: f64) -> f64 {
    h * (1.0 - h) / ((1.0 + h) * (2.0 - h))
}

/// `(2/9)(1-H)`.
pub fn alpha_lower_bound(h: f64) -> f64 {
    2.0 * (1.0 - h) / 9.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleChoices {
    pub eps: f64,
    pub gamma: f64,
    pub delta: f64,
    pub big_delta: f64,
    pub alpha: f64,
    pub raw_delta: f64,
    pub raw_big_delta: f64,
    pub r: usize,
    pub n_blocks: usize,
    /// Set when rounding collapses the scales (`Delta = 1` or `delta = Delta`).
    pub degenerate: bool,
}

impl ScaleChoices {
    pub fn config(&self) -> Result<CoarseQvConfig> {
        CoarseQvConfig::from_counts(self.n_blocks, self.r)
    }
}

/// The `eps`-dependent scales, rounded so that `delta` only shrinks and
/// `Delta` only grows.
pub fn scale_choices(eps: f64, hurst: HurstParameter) -> Result<ScaleChoices> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let h = hurst.value();
    let denom = h * (2.0 - h);
    let gamma = eps.powf(alpha_limit(h));
    let raw_delta = eps.powf(1.0 / denom);
    let raw_big_delta = eps.powf((1.0 - h) / denom);
    let n_blocks = ((1.0 / raw_big_delta) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    let big_delta = 1.0 / n_blocks as f64;
    let r = ((big_delta / raw_delta) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let delta = big_delta / r as f64;
    Ok(ScaleChoices {
        eps,
        gamma,
        delta,
        big_delta,
        alpha: alpha_limit(h),
        raw_delta,
        raw_big_delta,
        r,
        n_blocks,
        degenerate: n_blocks == 1 || r == 1,
    })
}

/// Integrands `(a, b)` feeding `y_t = int a ds + int <b, dB>`.
#[derive(Debug, Clone)]
pub enum Scenario {
    /// `a = 0`, `b = 1`, so `y = B^1`.
    PureNoise,
    /// `a = 1`, `b = 0`, so `y_t = t`.
    PureDrift,
    /// `a = 0`, `b = 0`.
    Degenerate,
    /// `a_t = <v, J_t^{-1} V_0(X_t)>`, `b^j_t = <v, J_t^{-1} V_j(X_t)>`.
    Pullback {
        system: VectorFieldSystem,
        direction: Vec<f64>,
        scheme: Scheme,
    },
}

impl Scenario {
    /// Pullback on the Heisenberg system along the bracket direction `e_3`.
    pub fn heisenberg_pullback() -> Self {
        Scenario::Pullback {
            system: systems::heisenberg(),
            direction: vec![0.0, 0.0, 1.0],
            scheme: Scheme::Heun,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::PureNoise => "pure-noise",
            Scenario::PureDrift => "pure-drift",
            Scenario::Degenerate => "degenerate",
            Scenario::Pullback { .. } => "pullback",
        }
    }

    fn noise_dim(&self) -> usize {
        match self {
            Scenario::Pullback { system, .. } => system.d,
            _ => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Scenario::Pullback {
            system, direction, ..
        } = self
        {
            if direction.len() != system.n {
                return Err(Error::Precondition(format!(
                    "pullback direction has length {} but the system lives in R^{}",
                    direction.len(),
                    system.n
                )));
            }
            let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Precondition(
                    "pullback direction must be a unit vector".into(),
                ));
            }
        }
        Ok(())
    }

    /// `(sup |y|, sup |a| + sup |b|)` along one driver.
    fn sup_norms(&self, driver: &FbmPath) -> Result<(f64, f64)> {
        let grid = driver.grid;
        match self {
            Scenario::PureNoise => Ok((
                driver.values[0]
                    .iter()
                    .fold(0.0, |m, x| f64::max(m, x.abs())),
                1.0,
            )),
            Scenario::PureDrift => Ok((grid.horizon(), 1.0)),
            Scenario::Degenerate => Ok((0.0, 0.0)),
            Scenario::Pullback {
                system,
                direction,
                scheme,
            } => {
                let x0 = system.x0_or_origin();
                let sol = solve_variation(system, &x0, driver, *scheme)?;
                let (_, jinv) = sol.variation()?;
                let v = DVector::from_column_slice(direction);
                let fields: Vec<CompiledField> =
                    system.fields.iter().map(CompiledField::new).collect();
                let drift = system.drift.as_ref().map(CompiledField::new);
                // <v, J^{-1} W> = <J^{-T} v, W>
                let pair = |k: usize, f: &CompiledField| {
                    (jinv[k].transpose() * &v).dot(&f.eval(sol.x[k].as_slice()))
                };
                let dt = grid.mesh();
                let mut y = 0.0;
                let mut y_sup = 0.0f64;
                let mut a_sup = 0.0f64;
                let mut b_sup = 0.0f64;
                for k in 0..=grid.n_steps() {
                    let a = drift.as_ref().map_or(0.0, |f| pair(k, f));
                    let b: Vec<f64> = fields.iter().map(|f| pair(k, f)).collect();
                    a_sup = a_sup.max(a.abs());
                    b_sup = b_sup.max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
                    if k < grid.n_steps() {
                        y += a * dt
                            + b.iter()
                                .enumerate()
                                .map(|(j, bj)| bj * driver.increment(j, k))
                                .sum::<f64>();
                        y_sup = y_sup.max(y.abs());
                    }
                }
                Ok((y_sup, a_sup + b_sup))
            }
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure-noise" => Ok(Scenario::PureNoise),
            "pure-drift" => Ok(Scenario::PureDrift),
            "degenerate" => Ok(Scenario::Degenerate),
            "pullback" => Ok(Scenario::heisenberg_pullback()),
            other => Err(Error::domain(format!(
                "unknown scenario '{other}' (pure-noise|pure-drift|degenerate|pullback)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub n_steps: usize,
}

impl SweepConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            n_steps: DEFAULT_SWEEP_STEPS,
        }
    }
}

pub const DEFAULT_SWEEP_STEPS: usize = 512;

/// `q = 0.05, 0.10, ..., 1.0`.
pub fn q_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub q: f64,
    pub eps: f64,
    pub count: usize,
    pub probability: f64,
    pub wilson_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBall {
    pub eps: f64,
    pub count: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorrisReport {
    pub scenario: String,
    pub hurst: f64,
    pub n_paths: usize,
    pub failed_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub eps_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    /// Joint event counts, `q` major.
    pub table: Vec<SweepCell>,
    /// `P(||y|| < eps)` alone.
    pub small_ball: Vec<SmallBall>,
    /// Largest grid `q` with zero joint counts at every `eps` (all smaller `q` too).
    pub q_hat: Option<f64>,
    pub alpha_guidance: f64,
    pub scales: Vec<ScaleChoices>,
}

/// Monte Carlo estimate of `P(||y|| < eps and ||a|| + ||b|| > eps^q)`.
pub fn norris_sweep(
    scenario: &Scenario,
    hurst: HurstParameter,
    eps_grid: &[f64],
    cfg: &SweepConfig,
) -> Result<NorrisReport> {
    scenario.validate()?;
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Precondition(
            "epsilon grid must be non-empty and inside (0, 1)".into(),
        ));
    }
    if cfg.n_paths == 0 {
        return Err(Error::Precondition("at least one path is required".into()));
    }
    let grid = TimeGrid::unit(cfg.n_steps)?;
    let sampler = CholeskySampler::cached(hurst, grid)?;
    let dim = scenario.noise_dim();
    let norms: Vec<Option<(f64, f64)>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|r| {
            scenario
                .sup_norms(&sampler.draw(dim, cfg.seed, "norris", r))
                .ok()
        })
        .collect();
    let failed_paths = norms.iter().filter(|x| x.is_none()).count();
    let norms: Vec<(f64, f64)> = norms.into_iter().flatten().collect();
    let total = norms.len();
    let qs = q_grid();
    let mut table = Vec::with_capacity(qs.len() * eps_grid.len());
    let mut q_hat = None;
    let mut still_null = true;
    for &q in &qs {
        let mut null_here = true;
        for &eps in eps_grid {
            let threshold = eps.powf(q);
            let count = norms
                .iter()
                .filter(|(y, s)| *y < eps && *s > threshold)
                .count();
            null_here &= count == 0;
            let probability = count as f64 / total.max(1) as f64;
            table.push(SweepCell {
                q,
                eps,
                count,
                probability,
                wilson_upper: wilson_interval(count, total, Z95).1,
            });
        }
        still_null &= null_here && total > 0;
        if still_null {
            q_hat = Some(q);
        }
    }
    let small_ball = eps_grid
        .iter()
        .map(|&eps| {
            let count = norms.iter().filter(|(y, _)| *y < eps).count();
            SmallBall {
                eps,
                count,
                probability: count as f64 / total.max(1) as f64,
            }
        })
        .collect();
    let scales = eps_grid
        .iter()
        .map(|&e| scale_choices(e, hurst))
        .collect::<Result<Vec<_>>>()?;
    Ok(NorrisReport {
        scenario: scenario.name().to_string(),
        hurst: hurst.value(),
        n_paths: cfg.n_paths,
        failed_paths,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        eps_grid: eps_grid.to_vec(),
        q_grid: qs,
        table,
        small_ball,
        q_hat,
        alpha_guidance: alpha_limit(hurst.value()),
        scales,
    })
}
