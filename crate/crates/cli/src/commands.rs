//! Execution of each subcommand into in-memory artifacts.

use std::path::Path;

use anyhow::{ensure, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fbmlab::fbm::{CholeskySampler, ComponentSampler, VolterraSampler};
use fbmlab::frac::{representation_check, RepresentationReport};
use fbmlab::hormander::{
    hormander_check, regular_point_check, strong_hormander_flag, FlagReport, HormanderReport,
    RegularityReport,
};
use fbmlab::malliavin::{
    default_directions, eigen_probe, malliavin_report, MalliavinReport, ProbeConfig, ProbeReport,
};
use fbmlab::norris::{norris_sweep, NorrisReport, Scenario, SweepConfig};
use fbmlab::poly::VectorFieldSystem;
use fbmlab::sde::{solve, solve_variation, Scheme};
use fbmlab::smalltime::{density_estimate, report_fits, DensityConfig, DensityReport, ExponentFit};
use fbmlab::{systems, FbmPath, HurstParameter, SamplingMethod, TimeGrid};

use crate::grids::{parse_grid, parse_point};
use crate::manifest::FileRecord;
use crate::output::{fmt_f64, sidecar_path, to_csv, to_json, Artifact, PathTable, ReportEnvelope};
use crate::{
    Experiment, FbmCommand, FbmSampleArgs, Format, FracCommand, GammaArgs, HormanderCommand,
    InvalidInput, MalliavinCommand, MethodArg, NorrisCommand, ProbeArgs, ReprhArgs, SdeCommand,
    SdeSolveArgs, SmalltimeCommand, SweepArgs,
};

/// Everything a command produced, before anything touches the disk.
#[derive(Debug, Clone, Default)]
pub struct Execution {
    pub artifacts: Vec<Artifact>,
    pub inputs: Vec<FileRecord>,
    pub warnings: Vec<String>,
}

/// Load a system from a JSON file or the catalogue. A file path is
/// rewritten to its absolute form so the manifest can find it again.
pub fn resolve_system(spec: &mut String) -> Result<(VectorFieldSystem, Option<FileRecord>)> {
    let path = Path::new(spec.as_str());
    if path.is_file() {
        let abs = std::fs::canonicalize(path)?;
        let bytes = std::fs::read(&abs)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| InvalidInput(format!("system file {} is not UTF-8", abs.display())))?;
        let sys = VectorFieldSystem::from_json(&text)
            .map_err(|e| InvalidInput(format!("system file {}: {e}", abs.display())))?;
        let record = FileRecord::of(&abs, &bytes);
        *spec = abs.display().to_string();
        return Ok((sys, Some(record)));
    }
    if let Some(sys) = systems::by_name(spec) {
        return Ok((sys, None));
    }
    Err(InvalidInput(format!(
        "system file '{spec}' not found and not a catalogue name ({})",
        systems::CATALOGUE.join(", ")
    ))
    .into())
}

fn start_point(sys: &VectorFieldSystem, x0: &Option<String>) -> Result<Vec<f64>> {
    let x = match x0 {
        Some(s) => parse_point(s)?,
        None => sys.x0_or_origin(),
    };
    ensure!(
        x.len() == sys.n,
        InvalidInput(format!(
            "start point has {} coordinates but the system lives in R^{}",
            x.len(),
            sys.n
        ))
    );
    Ok(x)
}

fn positive(name: &str, v: usize) -> Result<()> {
    ensure!(v > 0, InvalidInput(format!("--{name} must be at least 1")));
    Ok(())
}

pub fn execute(exp: &mut Experiment, seed: u64, format: Format, out: &Path) -> Result<Execution> {
    let name = exp.name();
    match exp {
        Experiment::Fbm(FbmCommand::Sample(a)) => fbm_sample(a, seed, format, out),
        Experiment::Sde(SdeCommand::Solve(a)) => sde_solve(a, seed, format, out),
        Experiment::Frac(FracCommand::CheckReprh(a)) => frac_check(a, name, seed, format, out),
        Experiment::Malliavin(MalliavinCommand::Gamma(a)) => {
            malliavin_gamma(a, name, seed, format, out)
        }
        Experiment::Malliavin(MalliavinCommand::Probe(a)) => {
            malliavin_probe(a, name, seed, format, out)
        }
        Experiment::Norris(NorrisCommand::Sweep(a)) => norris(a, name, seed, format, out),
        Experiment::Hormander(HormanderCommand::Check(a)) => hormander(a, name, seed, format, out),
        Experiment::Smalltime(SmalltimeCommand::Exponent(a)) => {
            smalltime(a, name, seed, format, out)
        }
    }
}

/// JSON envelope, or a CSV table when `format` asks for one.
fn report<T: Serialize>(
    name: &str,
    seed: u64,
    format: Format,
    out: &Path,
    mut exec: Execution,
    payload: T,
    table: impl FnOnce(&T) -> (Vec<String>, Vec<Vec<String>>),
) -> Result<Execution> {
    let bytes = match format {
        Format::Json => to_json(&ReportEnvelope::new(
            name,
            seed,
            exec.warnings.clone(),
            payload,
        ))?,
        Format::Csv => {
            let (header, rows) = table(&payload);
            to_csv(&header, &rows)?
        }
    };
    exec.artifacts.push(Artifact {
        path: out.to_path_buf(),
        bytes,
    });
    Ok(exec)
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmMeta {
    pub hurst: f64,
    pub seed: u64,
    pub method: SamplingMethod,
    pub n_steps: usize,
    pub horizon: f64,
    pub dim: usize,
    pub n_paths: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmPayload {
    pub meta: FbmMeta,
    pub paths: Vec<FbmPath>,
}

fn fbm_sample(a: &FbmSampleArgs, seed: u64, format: Format, out: &Path) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    positive("dim", a.dim)?;
    positive("paths", a.paths)?;
    let grid = TimeGrid::new(a.steps, a.horizon)?;
    let paths = match a.method {
        MethodArg::Cholesky => CholeskySampler::cached(h, grid)?.sample_paths(a.dim, a.paths, seed),
        MethodArg::Volterra => VolterraSampler::new(h, grid)?.sample_paths(a.dim, a.paths, seed),
    };
    let meta = FbmMeta {
        hurst: a.hurst,
        seed,
        method: paths[0].method,
        n_steps: a.steps,
        horizon: a.horizon,
        dim: a.dim,
        n_paths: a.paths,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut exec = Execution::default();
    match format {
        Format::Csv => {
            let table = PathTable {
                prefix: "comp".into(),
                times: grid.nodes(),
                paths: paths
                    .iter()
                    .map(|p| (p.replica, p.values.clone()))
                    .collect(),
            };
            exec.artifacts.push(Artifact {
                path: out.to_path_buf(),
                bytes: table.to_csv()?,
            });
            exec.artifacts.push(Artifact {
                path: sidecar_path(out),
                bytes: to_json(&meta)?,
            });
        }
        Format::Json => exec.artifacts.push(Artifact {
            path: out.to_path_buf(),
            bytes: to_json(&ReportEnvelope::new(
                "fbm sample",
                seed,
                vec![],
                FbmPayload { meta, paths },
            ))?,
        }),
    }
    Ok(exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeMeta {
    pub hurst: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Replicas whose solution blew up; absent from the path table.
    pub failed_paths: Vec<u64>,
    pub x0: Vec<f64>,
    pub system: VectorFieldSystem,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeSolutionRecord {
    pub path_id: u64,
    /// `x[k]` is the state at node `k`.
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdePayload {
    pub meta: SdeMeta,
    pub solutions: Vec<SdeSolutionRecord>,
}

fn sde_solve(a: &mut SdeSolveArgs, seed: u64, format: Format, out: &Path) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    positive("paths", a.paths)?;
    let (sys, input) = resolve_system(&mut a.config)?;
    let x0 = start_point(&sys, &a.x0)?;
    let grid = TimeGrid::unit(a.steps)?;
    let sampler = CholeskySampler::cached(h, grid)?;
    let scheme: Scheme = a.scheme.into();
    let results: Vec<(u64, Option<Vec<Vec<f64>>>)> = (0..a.paths as u64)
        .into_par_iter()
        .map(|r| {
            let driver = sampler.draw(sys.d, seed, "sde", r);
            let sol = solve(&sys, &x0, &driver, scheme).ok();
            (
                r,
                sol.map(|s| s.x.iter().map(|v| v.iter().copied().collect()).collect()),
            )
        })
        .collect();
    let failed_paths: Vec<u64> = results
        .iter()
        .filter(|r| r.1.is_none())
        .map(|r| r.0)
        .collect();
    let mut exec = Execution {
        inputs: input.into_iter().collect(),
        warnings: failed_paths
            .iter()
            .map(|r| format!("path {r} blew up and was dropped"))
            .collect(),
        ..Default::default()
    };
    let solutions: Vec<SdeSolutionRecord> = results
        .into_iter()
        .filter_map(|(path_id, x)| x.map(|x| SdeSolutionRecord { path_id, x }))
        .collect();
    let meta = SdeMeta {
        hurst: a.hurst,
        seed,
        scheme,
        n_steps: a.steps,
        n_paths: a.paths,
        failed_paths,
        x0,
        system: sys.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    match format {
        Format::Csv => {
            let table = PathTable {
                prefix: "x".into(),
                times: grid.nodes(),
                paths: solutions
                    .iter()
                    .map(|s| {
                        let by_component = (0..sys.n)
                            .map(|i| s.x.iter().map(|v| v[i]).collect())
                            .collect();
                        (s.path_id, by_component)
                    })
                    .collect(),
            };
            exec.artifacts.push(Artifact {
                path: out.to_path_buf(),
                bytes: table.to_csv()?,
            });
            exec.artifacts.push(Artifact {
                path: sidecar_path(out),
                bytes: to_json(&meta)?,
            });
        }
        Format::Json => {
            let env = ReportEnvelope::new(
                "sde solve",
                seed,
                exec.warnings.clone(),
                SdePayload { meta, solutions },
            );
            exec.artifacts.push(Artifact {
                path: out.to_path_buf(),
                bytes: to_json(&env)?,
            });
        }
    }
    Ok(exec)
}

fn frac_check(
    a: &ReprhArgs,
    name: &str,
    seed: u64,
    format: Format,
    out: &Path,
) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    let rep: RepresentationReport =
        representation_check(h, TimeGrid::unit(a.steps)?, a.pairs, seed)?;
    let mut exec = Execution::default();
    if !rep.pass {
        exec.warnings.push(format!(
            "max relative gap {:.3e} exceeds tolerance {}",
            rep.max_rel_error, rep.tolerance
        ));
    }
    report(name, seed, format, out, exec, rep, |r| {
        let rows = r
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.pair.to_string(),
                    serde_json::to_value(row.kind)
                        .map(|v| v.as_str().unwrap_or("").to_string())
                        .unwrap_or_default(),
                    fmt_f64(row.kernel),
                    fmt_f64(row.frac),
                    fmt_f64(row.rel_error),
                ]
            })
            .collect();
        (
            header(&["pair", "kind", "kernel", "frac", "rel_error"]),
            rows,
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPayload {
    pub system: VectorFieldSystem,
    pub x0: Vec<f64>,
    pub hurst: f64,
    pub n_steps: usize,
    pub scheme: Scheme,
    pub terminal: Vec<f64>,
    pub report: MalliavinReport,
}

fn malliavin_gamma(
    a: &mut GammaArgs,
    name: &str,
    seed: u64,
    format: Format,
    out: &Path,
) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    let (sys, input) = resolve_system(&mut a.config)?;
    let x0 = start_point(&sys, &a.x0)?;
    let grid = TimeGrid::unit(a.steps)?;
    let driver = CholeskySampler::cached(h, grid)?.draw(sys.d, seed, "malliavin-gamma", 0);
    let scheme: Scheme = a.scheme.into();
    let sol = solve_variation(&sys, &x0, &driver, scheme)?;
    let rep = malliavin_report(&sol, &sys, h)?;
    let payload = GammaPayload {
        terminal: sol.terminal().iter().copied().collect(),
        system: sys,
        x0,
        hurst: a.hurst,
        n_steps: a.steps,
        scheme,
        report: rep,
    };
    let exec = Execution {
        inputs: input.into_iter().collect(),
        ..Default::default()
    };
    report(name, seed, format, out, exec, payload, |p| {
        let n = p.report.gamma.len();
        let rows = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                vec![
                    i.to_string(),
                    j.to_string(),
                    fmt_f64(p.report.gamma[i][j]),
                    fmt_f64(p.report.c1[i][j]),
                ]
            })
            .collect();
        (header(&["row", "col", "gamma", "c1"]), rows)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePayload {
    pub system: VectorFieldSystem,
    pub x0: Vec<f64>,
    pub hurst: f64,
    pub n_steps: usize,
    pub directions: Vec<Vec<f64>>,
    pub report: ProbeReport,
}

fn malliavin_probe(
    a: &mut ProbeArgs,
    name: &str,
    seed: u64,
    format: Format,
    out: &Path,
) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    positive("paths", a.paths)?;
    let (sys, input) = resolve_system(&mut a.config)?;
    let x0 = start_point(&sys, &a.x0)?;
    let eps = parse_grid(&a.eps)?;
    let dirs = default_directions(sys.n, a.random_directions, seed);
    let cfg = ProbeConfig {
        grid: TimeGrid::unit(a.steps)?,
        n_paths: a.paths,
        seed,
        scheme: a.scheme.into(),
    };
    let rep = eigen_probe(&sys, &x0, h, &dirs, &eps, &cfg)?;
    let mut exec = Execution {
        inputs: input.into_iter().collect(),
        ..Default::default()
    };
    if rep.failed_paths > 0 {
        exec.warnings.push(format!(
            "{} paths failed and were dropped",
            rep.failed_paths
        ));
    }
    let payload = ProbePayload {
        system: sys,
        x0,
        hurst: a.hurst,
        n_steps: a.steps,
        directions: dirs.iter().map(|v| v.iter().copied().collect()).collect(),
        report: rep,
    };
    report(name, seed, format, out, exec, payload, |p| {
        let rows = p
            .report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.direction.to_string(),
                    fmt_f64(r.epsilon),
                    r.count.to_string(),
                    fmt_f64(r.probability),
                ]
            })
            .collect();
        (
            header(&["direction", "epsilon", "count", "probability"]),
            rows,
        )
    })
}

fn norris(a: &SweepArgs, name: &str, seed: u64, format: Format, out: &Path) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    let scenario: Scenario = a.scenario.parse()?;
    let eps = parse_grid(&a.eps)?;
    let cfg = SweepConfig {
        n_paths: a.paths,
        seed,
        n_steps: a.steps,
    };
    let rep: NorrisReport = norris_sweep(&scenario, h, &eps, &cfg)?;
    let mut exec = Execution::default();
    if rep.failed_paths > 0 {
        exec.warnings.push(format!(
            "{} paths failed and were dropped",
            rep.failed_paths
        ));
    }
    if rep.q_hat.is_none() {
        exec.warnings
            .push("the joint event was observed at every q of the grid".into());
    }
    report(name, seed, format, out, exec, rep, |r| {
        let rows = r
            .table
            .iter()
            .map(|c| {
                vec![
                    fmt_f64(c.q),
                    fmt_f64(c.eps),
                    c.count.to_string(),
                    fmt_f64(c.probability),
                    fmt_f64(c.wilson_upper),
                ]
            })
            .collect();
        (
            header(&["q", "eps", "count", "probability", "wilson_upper"]),
            rows,
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HormanderPayload {
    pub system: VectorFieldSystem,
    pub check: HormanderReport,
    pub flag: Option<FlagReport>,
    pub regularity: Option<RegularityReport>,
}

fn hormander(
    a: &mut crate::CheckArgs,
    name: &str,
    seed: u64,
    format: Format,
    out: &Path,
) -> Result<Execution> {
    let (sys, input) = resolve_system(&mut a.fields)?;
    let point = start_point(&sys, &a.point)?;
    let check = hormander_check(&sys, &point, a.max_level, a.mode.into())?;
    let mut exec = Execution {
        inputs: input.into_iter().collect(),
        ..Default::default()
    };
    let (flag, regularity) = match strong_hormander_flag(&sys, &point, a.max_level) {
        Ok(mut flag) => {
            let reg = regular_point_check(&sys, &point, a.radius, a.neighbours, a.max_level, seed)?;
            flag.regular = Some(reg.regular);
            (Some(flag), Some(reg))
        }
        Err(e) => {
            exec.warnings
                .push(format!("canonical flag not computed: {e}"));
            (None, None)
        }
    };
    let payload = HormanderPayload {
        system: sys,
        check,
        flag,
        regularity,
    };
    report(name, seed, format, out, exec, payload, |p| {
        let rows = p
            .check
            .levels
            .iter()
            .map(|l| {
                let words: Vec<String> = l.witnesses.iter().map(|w| w.word.to_string()).collect();
                vec![
                    l.level.to_string(),
                    l.n_fields.to_string(),
                    l.rank.to_string(),
                    words.join(" "),
                ]
            })
            .collect();
        (header(&["level", "n_fields", "rank", "witnesses"]), rows)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLogPoint {
    pub t: f64,
    pub log_t: f64,
    pub log_kde: Option<f64>,
    pub log_knn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmalltimePayload {
    pub system: VectorFieldSystem,
    pub density: DensityReport,
    pub kde_fit: Option<ExponentFit>,
    pub knn_fit: Option<ExponentFit>,
    pub log_log: Vec<LogLogPoint>,
}

fn smalltime(
    a: &mut crate::ExponentArgs,
    name: &str,
    seed: u64,
    format: Format,
    out: &Path,
) -> Result<Execution> {
    let h = HurstParameter::new(a.hurst)?;
    let (sys, input) = resolve_system(&mut a.config)?;
    let x0 = start_point(&sys, &a.x0)?;
    let tgrid = parse_grid(&a.tgrid)?;
    let cfg = DensityConfig {
        n_steps: a.steps,
        scheme: a.scheme.into(),
        n_batches: a.batches,
        negate_driver: false,
    };
    let density = density_estimate(&sys, &x0, h, &tgrid, a.paths, seed, &cfg)?;
    let mut exec = Execution {
        inputs: input.into_iter().collect(),
        ..Default::default()
    };
    let (kde_fit, knn_fit) = match report_fits(&density) {
        Ok((k, n)) => (Some(k), Some(n)),
        Err(e) => {
            exec.warnings.push(format!("exponent fit failed: {e}"));
            (None, None)
        }
    };
    let positive_log = |v: f64| (v > 0.0 && v.is_finite()).then(|| v.ln());
    let log_log = density
        .points
        .iter()
        .map(|p| LogLogPoint {
            t: p.t,
            log_t: p.t.ln(),
            log_kde: positive_log(p.kde),
            log_knn: positive_log(p.knn),
        })
        .collect();
    let payload = SmalltimePayload {
        system: sys,
        density,
        kde_fit,
        knn_fit,
        log_log,
    };
    report(name, seed, format, out, exec, payload, |p| {
        let rows = p
            .density
            .points
            .iter()
            .map(|d| {
                vec![
                    fmt_f64(d.t),
                    d.n_samples.to_string(),
                    fmt_f64(d.kde),
                    fmt_f64(d.kde_se),
                    fmt_f64(d.knn),
                    d.knn_k.to_string(),
                ]
            })
            .collect();
        (
            header(&["t", "n_samples", "kde", "kde_se", "knn", "knn_k"]),
            rows,
        )
    })
}
