//! Experiment harness: Monte Carlo rate over the sample size, sensitivity in
//! the regularization weight, and mesh independence, with replication,
//! criticality measured against a shared quasi-Monte Carlo reference
//! gradient, log-log least-squares rate fits, and CSV persistence.
//!
//! Reproducibility contract: a (config, base_seed) pair fully determines
//! every result row, independent of thread count. All parallel maps collect
//! into ordered vectors and reduce sequentially.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::UniformSampler;
use crate::pde::Discretization;
use crate::planner;
use crate::prox::{criticality, RegularizerParams};
use crate::rng::derive_seed;
use crate::saa::{solve_semismooth_newton, SaaInstance, SolverOptions};
use crate::sobol::sobol_parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Rate,
    Alpha,
    Mesh,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentKind::Rate => "rate",
            ExperimentKind::Alpha => "alpha",
            ExperimentKind::Mesh => "mesh",
        };
        f.write_str(s)
    }
}

/// Experiment configuration. The external key = value format uses the field
/// names N_grid, alpha_grid, n_grid, N, n, alpha, replicates, N1, base_seed,
/// exclude_count, gamma, lo, hi, out, record_walltime.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Sample sizes N for the rate experiment.
    pub sample_grid: Vec<usize>,
    /// Regularization weights for the alpha experiment.
    pub alpha_grid: Vec<f64>,
    /// Mesh subdivisions for the mesh experiment.
    pub mesh_grid: Vec<usize>,
    /// Fixed sample size (alpha and mesh experiments).
    pub sample_size: usize,
    /// Fixed mesh subdivision (rate and alpha experiments).
    pub mesh_n: usize,
    /// Fixed regularization weight (rate and mesh experiments).
    pub alpha: f64,
    pub replicates: usize,
    /// Size of the quasi-Monte Carlo reference sample set.
    pub reference_samples: usize,
    pub base_seed: u64,
    /// Smallest-x points dropped before the least-squares fit.
    pub exclude_count: usize,
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
    pub out: Option<String>,
    pub record_walltime: bool,
}

/// Default L1 weight: 0.2 of the gradient sup-norm calibration, rounded to
/// three significant figures.
pub const DEFAULT_GAMMA: f64 = 7.48e-3;

impl ExperimentConfig {
    /// Desk-scale Monte Carlo rate study: full run in tens of minutes on a
    /// small machine.
    pub fn desk_rate() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Rate,
            sample_grid: vec![2, 4, 8, 16, 32, 64, 128],
            alpha_grid: vec![],
            mesh_grid: vec![],
            sample_size: 64,
            mesh_n: 32,
            alpha: 1e-3,
            replicates: 16,
            reference_samples: 1 << 10,
            base_seed: 0,
            exclude_count: 4,
            gamma: DEFAULT_GAMMA,
            lo: -10.0,
            hi: 10.0,
            out: None,
            record_walltime: true,
        }
    }

    pub fn desk_alpha() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Alpha,
            sample_grid: vec![],
            alpha_grid: vec![1e-3, 1e-2, 1e-1, 1e0],
            mesh_grid: vec![],
            sample_size: 64,
            mesh_n: 32,
            alpha: 1e-3,
            replicates: 16,
            reference_samples: 1 << 10,
            base_seed: 0,
            exclude_count: 0,
            gamma: DEFAULT_GAMMA,
            lo: -10.0,
            hi: 10.0,
            out: None,
            record_walltime: true,
        }
    }

    pub fn desk_mesh() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Mesh,
            sample_grid: vec![],
            alpha_grid: vec![],
            mesh_grid: vec![8, 16, 32],
            sample_size: 64,
            mesh_n: 32,
            alpha: 1e-1,
            replicates: 16,
            reference_samples: 1 << 10,
            base_seed: 0,
            exclude_count: 0,
            gamma: DEFAULT_GAMMA,
            lo: -10.0,
            hi: 10.0,
            out: None,
            record_walltime: true,
        }
    }

    /// Restores the full study configuration: finer mesh, more samples, 48
    /// replicates, 2^13 reference points.
    pub fn paper_scale(mut self) -> Self {
        self.replicates = 48;
        self.reference_samples = 1 << 13;
        match self.kind {
            ExperimentKind::Rate => {
                self.sample_grid = vec![2, 4, 8, 16, 32, 64, 128, 256];
                self.mesh_n = 64;
            }
            ExperimentKind::Alpha => {
                self.sample_size = 256;
                self.mesh_n = 64;
            }
            ExperimentKind::Mesh => {
                self.mesh_grid = vec![16, 32, 64];
                self.sample_size = 256;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let strictly_increasing_usize =
            |g: &[usize]| g.windows(2).all(|w| w[0] < w[1]) && !g.is_empty();
        let strictly_increasing_f64 = |g: &[f64]| g.windows(2).all(|w| w[0] < w[1]) && !g.is_empty();
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        match self.kind {
            ExperimentKind::Rate => {
                if !strictly_increasing_usize(&self.sample_grid) {
                    return Err(Error::invalid("N_grid must be nonempty and strictly increasing"));
                }
                if self.reference_samples < *self.sample_grid.last().unwrap() {
                    return Err(Error::invalid("N1 must be at least the largest N in N_grid"));
                }
            }
            ExperimentKind::Alpha => {
                if !strictly_increasing_f64(&self.alpha_grid) {
                    return Err(Error::invalid("alpha_grid must be nonempty and strictly increasing"));
                }
                if self.reference_samples < self.sample_size {
                    return Err(Error::invalid("N1 must be at least N"));
                }
            }
            ExperimentKind::Mesh => {
                if !strictly_increasing_usize(&self.mesh_grid) {
                    return Err(Error::invalid("n_grid must be nonempty and strictly increasing"));
                }
                if self.reference_samples < self.sample_size {
                    return Err(Error::invalid("N1 must be at least N"));
                }
            }
        }
        RegularizerParams::new(self.gamma, self.lo, self.hi, self.alpha.max(1e-300))?;
        Ok(())
    }

    /// Parses the plain key = value format (# comments allowed).
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut cfg = ExperimentConfig::desk_rate();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: ln + 1,
                message: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let perr = |message: String| Error::Parse { line: ln + 1, message };
            let parse_usize_list = |v: &str| -> Result<Vec<usize>> {
                v.split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|e| perr(format!("bad integer list: {e}"))))
                    .collect()
            };
            let parse_f64_list = |v: &str| -> Result<Vec<f64>> {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|e| perr(format!("bad float list: {e}"))))
                    .collect()
            };
            match key {
                "kind" => {
                    kind = Some(match value {
                        "rate" => ExperimentKind::Rate,
                        "alpha" => ExperimentKind::Alpha,
                        "mesh" => ExperimentKind::Mesh,
                        other => return Err(perr(format!("unknown kind {other}"))),
                    })
                }
                "N_grid" => cfg.sample_grid = parse_usize_list(value)?,
                "alpha_grid" => cfg.alpha_grid = parse_f64_list(value)?,
                "n_grid" => cfg.mesh_grid = parse_usize_list(value)?,
                "N" => cfg.sample_size = value.parse().map_err(|e| perr(format!("bad N: {e}")))?,
                "n" => cfg.mesh_n = value.parse().map_err(|e| perr(format!("bad n: {e}")))?,
                "alpha" => cfg.alpha = value.parse().map_err(|e| perr(format!("bad alpha: {e}")))?,
                "replicates" => {
                    cfg.replicates = value.parse().map_err(|e| perr(format!("bad replicates: {e}")))?
                }
                "N1" => {
                    cfg.reference_samples = value.parse().map_err(|e| perr(format!("bad N1: {e}")))?
                }
                "base_seed" => {
                    cfg.base_seed = value.parse().map_err(|e| perr(format!("bad base_seed: {e}")))?
                }
                "exclude_count" => {
                    cfg.exclude_count =
                        value.parse().map_err(|e| perr(format!("bad exclude_count: {e}")))?
                }
                "gamma" => cfg.gamma = value.parse().map_err(|e| perr(format!("bad gamma: {e}")))?,
                "lo" => cfg.lo = value.parse().map_err(|e| perr(format!("bad lo: {e}")))?,
                "hi" => cfg.hi = value.parse().map_err(|e| perr(format!("bad hi: {e}")))?,
                "out" => cfg.out = Some(value.to_string()),
                "record_walltime" => {
                    cfg.record_walltime = value.parse().map_err(|e| perr(format!("bad record_walltime: {e}")))?
                }
                other => return Err(perr(format!("unknown key {other}"))),
            }
        }
        let kind = kind.ok_or(Error::Parse { line: 0, message: "missing kind".into() })?;
        cfg.kind = kind;
        // Kind-specific defaults when the file leaves grids empty.
        match kind {
            ExperimentKind::Rate => {
                if cfg.sample_grid.is_empty() {
                    cfg.sample_grid = ExperimentConfig::desk_rate().sample_grid;
                }
            }
            ExperimentKind::Alpha => {
                if cfg.alpha_grid.is_empty() {
                    cfg.alpha_grid = ExperimentConfig::desk_alpha().alpha_grid;
                }
            }
            ExperimentKind::Mesh => {
                if cfg.mesh_grid.is_empty() {
                    cfg.mesh_grid = ExperimentConfig::desk_mesh().mesh_grid;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Emits the key = value form (round-trips through `parse_str`).
    pub fn to_config_string(&self) -> String {
        let join_usize = |g: &[usize]| g.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let join_f64 = |g: &[f64]| g.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        s.push_str(&format!("kind = {}\n", self.kind));
        if !self.sample_grid.is_empty() {
            s.push_str(&format!("N_grid = {}\n", join_usize(&self.sample_grid)));
        }
        if !self.alpha_grid.is_empty() {
            s.push_str(&format!("alpha_grid = {}\n", join_f64(&self.alpha_grid)));
        }
        if !self.mesh_grid.is_empty() {
            s.push_str(&format!("n_grid = {}\n", join_usize(&self.mesh_grid)));
        }
        s.push_str(&format!("N = {}\n", self.sample_size));
        s.push_str(&format!("n = {}\n", self.mesh_n));
        s.push_str(&format!("alpha = {}\n", self.alpha));
        s.push_str(&format!("replicates = {}\n", self.replicates));
        s.push_str(&format!("N1 = {}\n", self.reference_samples));
        s.push_str(&format!("base_seed = {}\n", self.base_seed));
        s.push_str(&format!("exclude_count = {}\n", self.exclude_count));
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("lo = {}\n", self.lo));
        s.push_str(&format!("hi = {}\n", self.hi));
        if let Some(out) = &self.out {
            s.push_str(&format!("out = {out}\n"));
        }
        s.push_str(&format!("record_walltime = {}\n", self.record_walltime));
        s
    }
}

/// One replicate's criticality measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub replicate: usize,
    pub sample_size: usize,
    pub alpha: f64,
    pub mesh_n: usize,
    pub chi: Option<f64>,
    pub status: String,
    pub iters: usize,
    pub wall_s: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "replicate,N,alpha,n,chi,status,iters,wall_s,seed";

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 64 + 64);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let chi = r.chi.map(|c| c.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.replicate, r.sample_size, r.alpha, r.mesh_n, chi, r.status, r.iters, r.wall_s, r.seed
        ));
    }
    s
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    if header.trim() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {header:?}; expected {CSV_HEADER:?}"),
        });
    }
    let mut rows = Vec::new();
    for (ix, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Parse {
                line: ix + 1,
                message: format!("expected 9 columns, found {}", parts.len()),
            });
        }
        let perr = |what: &str, e: String| Error::Parse { line: ix + 1, message: format!("bad {what}: {e}") };
        rows.push(ResultRow {
            replicate: parts[0].parse().map_err(|e: std::num::ParseIntError| perr("replicate", e.to_string()))?,
            sample_size: parts[1].parse().map_err(|e: std::num::ParseIntError| perr("N", e.to_string()))?,
            alpha: parts[2].parse().map_err(|e: std::num::ParseFloatError| perr("alpha", e.to_string()))?,
            mesh_n: parts[3].parse().map_err(|e: std::num::ParseIntError| perr("n", e.to_string()))?,
            chi: if parts[4].is_empty() {
                None
            } else {
                Some(parts[4].parse().map_err(|e: std::num::ParseFloatError| perr("chi", e.to_string()))?)
            },
            status: parts[5].to_string(),
            iters: parts[6].parse().map_err(|e: std::num::ParseIntError| perr("iters", e.to_string()))?,
            wall_s: parts[7].parse().map_err(|e: std::num::ParseFloatError| perr("wall_s", e.to_string()))?,
            seed: parts[8].parse().map_err(|e: std::num::ParseIntError| perr("seed", e.to_string()))?,
        });
    }
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path, rows_to_csv(rows))?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    rows_from_csv(&std::fs::read_to_string(path)?)
}

/// Least-squares line in (log2 x, log2 y) after dropping the smallest-x
/// points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_sum: f64,
    pub points_used: usize,
    pub points_excluded: usize,
}

pub fn fit_rate(pairs: &[(f64, f64)], exclude_count: usize) -> Result<RateFit> {
    if pairs.len() < exclude_count + 2 {
        return Err(Error::invalid(format!(
            "need at least {} points for a fit excluding {}, got {}",
            exclude_count + 2,
            exclude_count,
            pairs.len()
        )));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let kept = &sorted[exclude_count..];
    let logs: Vec<(f64, f64)> = kept
        .iter()
        .map(|&(x, y)| {
            if x <= 0.0 || y <= 0.0 {
                Err(Error::invalid(format!("log-log fit needs positive data, got ({x}, {y})")))
            } else {
                Ok((x.log2(), y.log2()))
            }
        })
        .collect::<Result<_>>()?;
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("log-log fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual_sum = logs
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual_sum,
        points_used: logs.len(),
        points_excluded: exclude_count,
    })
}

/// Shared quasi-Monte Carlo reference gradient on one mesh: per-sample
/// operators are cached, evaluations are cached per control iterate.
pub struct ReferenceGradient {
    inst: SaaInstance,
    memo: Mutex<HashMap<Vec<u64>, Vec<f64>>>,
}

impl ReferenceGradient {
    pub fn build(disc: Arc<Discretization>, n1: usize) -> Result<Self> {
        let samples = sobol_parameters(n1)?;
        // The regularizer is irrelevant for plain gradient evaluation.
        let reg = RegularizerParams::without_box(0.0, 1.0)?;
        Ok(ReferenceGradient { inst: SaaInstance::new(disc, reg, samples)?, memo: Mutex::new(HashMap::new()) })
    }

    pub fn num_samples(&self) -> usize {
        self.inst.num_samples()
    }

    pub fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        let key: Vec<u64> = u.iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let g = self.inst.gradient(u)?;
        self.memo.lock().unwrap().insert(key, g.clone());
        Ok(g)
    }
}

/// Aggregated experiment result: raw rows, per-grid-point means of the
/// criticality measure, the rate fit (when defined), and the compact-set
/// check tally.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub means: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    pub fit_note: Option<String>,
    pub compact_checked: usize,
    pub compact_violations: usize,
}

struct WorkItem {
    replicate: usize,
    sample_size: usize,
    alpha: f64,
    mesh_index: usize,
}

fn classify_error(e: &Error) -> String {
    match e {
        Error::StateSolve { .. } => "fail:state".to_string(),
        Error::OuterSolve { .. } => "fail:outer".to_string(),
        Error::LinearSolve { .. } => "fail:linear".to_string(),
        Error::Sample { source, .. } => classify_error(source),
        _ => "fail:other".to_string(),
    }
}

fn run_items(
    cfg: &ExperimentConfig,
    discs: &[Arc<Discretization>],
    refs: &[Arc<ReferenceGradient>],
    radius_unscaled: f64,
    items: &[WorkItem],
) -> Result<(Vec<ResultRow>, usize, usize)> {
    let results: Vec<(ResultRow, Option<bool>)> = items
        .par_iter()
        .map(|item| {
            let disc = &discs[item.mesh_index];
            let reference = &refs[item.mesh_index];
            let seed = derive_seed(cfg.base_seed, &[item.replicate as u64, item.sample_size as u64]);
            let mesh_n = disc.mesh.subdivisions();
            let reg = RegularizerParams::new(cfg.gamma, cfg.lo, cfg.hi, item.alpha)
                .expect("validated configuration");
            let started = Instant::now();
            let run = || -> Result<(f64, usize, Option<bool>)> {
                let samples = UniformSampler::new(seed).draw(item.sample_size);
                let inst = SaaInstance::new(disc.clone(), reg, samples)?;
                let outcome = solve_semismooth_newton(
                    &inst,
                    &vec![0.0; inst.num_cells()],
                    &SolverOptions::default(),
                )?;
                let chi = criticality(
                    &outcome.u,
                    |uu| reference.eval(uu),
                    &reg,
                    disc.mesh.cell_area(),
                )?;
                let radius = 1.5 * radius_unscaled / item.alpha;
                let (inside, _norm) = inst.compact_set_check(&outcome.point, radius);
                Ok((chi, outcome.report.outer_iterations, Some(inside)))
            };
            let (row, compact) = match run() {
                Ok((chi, iters, compact)) => (
                    ResultRow {
                        replicate: item.replicate,
                        sample_size: item.sample_size,
                        alpha: item.alpha,
                        mesh_n,
                        chi: Some(chi),
                        status: "ok".to_string(),
                        iters,
                        wall_s: if cfg.record_walltime {
                            started.elapsed().as_secs_f64()
                        } else {
                            0.0
                        },
                        seed,
                    },
                    compact,
                ),
                Err(e) => (
                    ResultRow {
                        replicate: item.replicate,
                        sample_size: item.sample_size,
                        alpha: item.alpha,
                        mesh_n,
                        chi: None,
                        status: classify_error(&e),
                        iters: 0,
                        wall_s: if cfg.record_walltime {
                            started.elapsed().as_secs_f64()
                        } else {
                            0.0
                        },
                        seed,
                    },
                    None,
                ),
            };
            (row, compact)
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut checked = 0;
    let mut violations = 0;
    for (row, compact) in results {
        if let Some(inside) = compact {
            checked += 1;
            if !inside {
                violations += 1;
            }
        }
        rows.push(row);
    }
    Ok((rows, checked, violations))
}

fn group_means<K: PartialEq + Copy>(
    rows: &[ResultRow],
    key: impl Fn(&ResultRow) -> K,
    keys: &[K],
    to_x: impl Fn(K) -> f64,
) -> (Vec<(f64, f64)>, f64) {
    let mut means = Vec::new();
    let mut worst_fail_frac = 0.0f64;
    for &k in keys {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| key(r) == k).collect();
        let ok: Vec<f64> = group.iter().filter_map(|r| r.chi).collect();
        let fail_frac = 1.0 - ok.len() as f64 / group.len().max(1) as f64;
        worst_fail_frac = worst_fail_frac.max(fail_frac);
        if !ok.is_empty() {
            means.push((to_x(k), ok.iter().sum::<f64>() / ok.len() as f64));
        }
    }
    (means, worst_fail_frac)
}

/// The compact-set radius is assembled from the heuristic case-study
/// constants once per experiment; dividing by alpha happens per run.
fn unscaled_compact_radius() -> Result<f64> {
    let constants = planner::case_study_constants(1.0)?;
    let (_, radius) = planner::compact_radius(&constants);
    Ok(radius)
}

/// Monte Carlo rate experiment: solve the SAA problem for each (replicate,
/// N) with fresh independent draws, measure criticality against the shared
/// reference, fit the rate over N.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if cfg.kind != ExperimentKind::Rate {
        return Err(Error::invalid("configuration kind must be rate"));
    }
    cfg.validate()?;
    let disc = Arc::new(Discretization::case_study(cfg.mesh_n)?);
    let reference = Arc::new(ReferenceGradient::build(disc.clone(), cfg.reference_samples)?);
    let radius = unscaled_compact_radius()?;
    let mut items = Vec::new();
    for replicate in 0..cfg.replicates {
        for &n in &cfg.sample_grid {
            items.push(WorkItem { replicate, sample_size: n, alpha: cfg.alpha, mesh_index: 0 });
        }
    }
    let (rows, checked, violations) =
        run_items(cfg, &[disc], &[reference], radius, &items)?;
    let (means, worst_fail) = group_means(&rows, |r| r.sample_size, &cfg.sample_grid, |n| n as f64);
    let (fit, fit_note) = if worst_fail > 0.2 {
        (None, Some(format!("fit invalidated: a grid point failed {:.0}% of replicates", worst_fail * 100.0)))
    } else {
        match fit_rate(&means, cfg.exclude_count) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(ExperimentOutcome { rows, means, fit, fit_note, compact_checked: checked, compact_violations: violations })
}

/// Regularization sweep at fixed N and mesh; samples are shared across the
/// alpha grid per replicate (common random numbers).
pub fn run_alpha_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if cfg.kind != ExperimentKind::Alpha {
        return Err(Error::invalid("configuration kind must be alpha"));
    }
    cfg.validate()?;
    let disc = Arc::new(Discretization::case_study(cfg.mesh_n)?);
    let reference = Arc::new(ReferenceGradient::build(disc.clone(), cfg.reference_samples)?);
    let radius = unscaled_compact_radius()?;
    let mut items = Vec::new();
    for replicate in 0..cfg.replicates {
        for &alpha in &cfg.alpha_grid {
            items.push(WorkItem { replicate, sample_size: cfg.sample_size, alpha, mesh_index: 0 });
        }
    }
    let (rows, checked, violations) = run_items(cfg, &[disc], &[reference], radius, &items)?;
    let (means, worst_fail) = group_means(&rows, |r| r.alpha, &cfg.alpha_grid, |a| a);
    let (fit, fit_note) = if worst_fail > 0.2 {
        (None, Some("fit invalidated: excessive failures".to_string()))
    } else {
        match fit_rate(&means, cfg.exclude_count) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(ExperimentOutcome { rows, means, fit, fit_note, compact_checked: checked, compact_violations: violations })
}

/// Mesh-independence sweep at fixed N and alpha; the reference gradient is
/// rebuilt per mesh.
pub fn run_mesh_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if cfg.kind != ExperimentKind::Mesh {
        return Err(Error::invalid("configuration kind must be mesh"));
    }
    cfg.validate()?;
    let mut discs = Vec::new();
    let mut refs = Vec::new();
    for &n in &cfg.mesh_grid {
        let disc = Arc::new(Discretization::case_study(n)?);
        refs.push(Arc::new(ReferenceGradient::build(disc.clone(), cfg.reference_samples)?));
        discs.push(disc);
    }
    let radius = unscaled_compact_radius()?;
    let mut items = Vec::new();
    for replicate in 0..cfg.replicates {
        for (mesh_index, _n) in cfg.mesh_grid.iter().enumerate() {
            items.push(WorkItem {
                replicate,
                sample_size: cfg.sample_size,
                alpha: cfg.alpha,
                mesh_index,
            });
        }
    }
    let (rows, checked, violations) = run_items(cfg, &discs, &refs, radius, &items)?;
    let (means, worst_fail) = group_means(&rows, |r| r.mesh_n, &cfg.mesh_grid, |n| n as f64);
    let (fit, fit_note) = if worst_fail > 0.2 {
        (None, Some("fit invalidated: excessive failures".to_string()))
    } else if means.len() < 2 {
        (None, Some("slope undefined for a single grid point".to_string()))
    } else {
        match fit_rate(&means, cfg.exclude_count) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(ExperimentOutcome { rows, means, fit, fit_note, compact_checked: checked, compact_violations: violations })
}

/// Standard error of the per-x-group means; used to check the expected
/// 1/sqrt(replicates) shrinkage on synthetic data.
pub fn group_standard_errors(rows: &[ResultRow]) -> Vec<(f64, f64)> {
    let mut keys: Vec<usize> = rows.iter().map(|r| r.sample_size).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.iter()
        .filter_map(|&k| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.sample_size == k)
                .filter_map(|r| r.chi)
                .collect();
            if vals.len() < 2 {
                return None;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            Some((k as f64, (var / n).sqrt()))
        })
        .collect()
}
