//! Command-line front end: solve single instances, run the replicated
//! studies, evaluate the sample-size planner, verify the probabilistic
//! bounds and derivative consistency, and render log-log plots.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Diagnostics go to
//! standard error; results and tables to standard output.

mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use saapde_core::concentration::{
    check_cosh_condition, check_subgaussian_equivalence, default_lambda_grid,
    maxima_bounds_experiment, rows_to_csv as bounds_csv, sum_mgf_check, CheckRow, Verdict,
    VectorSampler,
};
use saapde_core::experiments::{
    fit_rate, run_alpha_experiment, run_mesh_experiment, run_rate_experiment, ExperimentConfig,
    ExperimentKind, ExperimentOutcome, ResultRow,
};
use saapde_core::fields::{ParamVector, UniformSampler};
use saapde_core::pde::{Discretization, StabilityConstants};
use saapde_core::planner::{self, SampleCount};
use saapde_core::prox::RegularizerParams;
use saapde_core::rng::CounterRng;
use saapde_core::saa::{solve_semismooth_newton, SaaInstance, SolverOptions};
use saapde_core::sparse::dot;

use config::{RunMetadata, SolveConfig};

#[derive(Parser)]
#[command(name = "saapde", version, about = "Sample average approximation for semilinear PDE-constrained optimization", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single problem instance and dump the control field.
    Solve {
        #[command(subcommand)]
        which: SolveWhich,
    },
    /// Run a replicated study and persist rows, fit, plot, and metadata.
    Experiment {
        #[command(subcommand)]
        which: ExperimentWhich,
    },
    /// Evaluate the structural constants and sample-size formulas.
    Plan {
        /// Constants file (key = value); missing keys use case-study defaults.
        #[arg(long)]
        constants: Option<PathBuf>,
        /// Target accuracy for the normal-map residual.
        #[arg(long, allow_negative_numbers = true)]
        eps: f64,
        /// Failure probability for the tail bound.
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        delta: f64,
        /// Regularization weight entering the covering radius.
        #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo and finite-difference verification suites.
    Verify {
        #[command(subcommand)]
        which: VerifyWhich,
    },
    /// Render a rows CSV as a log-log SVG plot.
    Plot {
        /// Input rows CSV (as written by the experiment commands).
        csv: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SolveWhich {
    /// Critical point of the nominal problem (parameter fixed at zero).
    Nominal(SolveArgs),
    /// Critical point of one SAA problem with fresh uniform draws.
    Saa(SolveArgs),
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mesh subdivisions per axis.
    #[arg(long)]
    n: Option<usize>,
    /// Sample count (SAA solve only).
    #[arg(long = "N")]
    samples: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentWhich {
    Rate(ExperimentArgs),
    Alpha(ExperimentArgs),
    Mesh(ExperimentArgs),
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Full-scale study (finer mesh, more samples and replicates).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum VerifyWhich {
    /// Monte Carlo checks of the sub-Gaussian moment and maxima bounds.
    Bounds {
        #[arg(long)]
        seed: Option<u64>,
        /// Full 1e5-replication runs (default trims to 2e4).
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference consistency of the adjoint gradient.
    Gradients {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// State stability and Lipschitz estimates on random control pairs.
    Stability {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { which } => match which {
            SolveWhich::Nominal(args) => solve_command(args, true),
            SolveWhich::Saa(args) => solve_command(args, false),
        },
        Command::Experiment { which } => experiment_command(which),
        Command::Plan { constants, eps, delta, alpha, out } => {
            plan_command(constants.as_deref(), eps, delta, alpha, out.as_deref())
        }
        Command::Verify { which } => match which {
            VerifyWhich::Bounds { seed, paper_scale, out } => {
                verify_bounds(seed.unwrap_or(0), paper_scale, out.as_deref())
            }
            VerifyWhich::Gradients { seed } => verify_gradients(seed.unwrap_or(0)),
            VerifyWhich::Stability { seed } => verify_stability(seed.unwrap_or(0)),
        },
        Command::Plot { csv, out } => plot_command(&csv, &out),
    }
}

fn solve_command(args: SolveArgs, nominal: bool) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => SolveConfig::from_file(path)?,
        None => SolveConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.mesh_n = n;
    }
    if let Some(count) = args.samples {
        if nominal {
            bail!("--N applies to the saa solve only (the nominal solve uses the zero parameter)");
        }
        cfg.samples = count;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let disc = Arc::new(Discretization::case_study(cfg.mesh_n)?);
    let reg = RegularizerParams::new(cfg.gamma, cfg.lo, cfg.hi, cfg.alpha)?;
    let samples = if nominal {
        vec![ParamVector::zero()]
    } else {
        UniformSampler::new(cfg.seed).draw(cfg.samples)
    };
    let inst = SaaInstance::new(disc.clone(), reg, samples)?;
    eprintln!(
        "solving {} problem: n = {}, N = {}, alpha = {:e}, gamma = {:e}",
        if nominal { "nominal" } else { "saa" },
        cfg.mesh_n,
        inst.num_samples(),
        cfg.alpha,
        cfg.gamma
    );
    let opts = SolverOptions { tol: cfg.tol, ..SolverOptions::default() };
    let outcome = solve_semismooth_newton(&inst, &vec![0.0; inst.num_cells()], &opts)?;
    let report = &outcome.report;
    eprintln!(
        "converged in {} outer iterations, residual {:.3e}, wall {:.2}s",
        report.outer_iterations,
        report.residual_history.last().unwrap(),
        report.wall_seconds
    );

    std::fs::create_dir_all(&args.out)?;
    write_field_dump(&args.out.join("control.txt"), cfg.mesh_n, cfg.gamma, cfg.alpha, &outcome.u)?;
    std::fs::write(args.out.join("config_snapshot.cfg"), cfg.to_config_string())?;
    let zeros = outcome.u.iter().filter(|&&u| u == 0.0).count();
    RunMetadata {
        command: if nominal { "solve nominal" } else { "solve saa" }.to_string(),
        seed: (!nominal).then_some(cfg.seed),
        wall_s: started.elapsed().as_secs_f64(),
        extra: vec![
            ("outer_iterations".into(), report.outer_iterations.to_string()),
            ("final_residual".into(), format!("{:e}", report.residual_history.last().unwrap())),
            ("zero_cells".into(), zeros.to_string()),
        ],
    }
    .write(&args.out)?;
    println!("control field written to {}", args.out.join("control.txt").display());
    Ok(())
}

/// Flat text dump: three header lines (n, gamma, alpha), then one value per
/// line in triangle index order.
fn write_field_dump(path: &Path, n: usize, gamma: f64, alpha: f64, u: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(u.len() * 24 + 64);
    s.push_str(&format!("n = {n}\n"));
    s.push_str(&format!("gamma = {gamma}\n"));
    s.push_str(&format!("alpha = {alpha}\n"));
    for v in u {
        s.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn experiment_command(which: ExperimentWhich) -> Result<()> {
    let started = Instant::now();
    let (args, kind) = match &which {
        ExperimentWhich::Rate(a) => (a, ExperimentKind::Rate),
        ExperimentWhich::Alpha(a) => (a, ExperimentKind::Alpha),
        ExperimentWhich::Mesh(a) => (a, ExperimentKind::Mesh),
    };
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let cfg = ExperimentConfig::parse_str(&text)?;
            if cfg.kind != kind {
                bail!("config kind {} does not match the subcommand", cfg.kind);
            }
            cfg
        }
        None => match kind {
            ExperimentKind::Rate => ExperimentConfig::desk_rate(),
            ExperimentKind::Alpha => ExperimentConfig::desk_alpha(),
            ExperimentKind::Mesh => ExperimentConfig::desk_mesh(),
        },
    };
    if args.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    let out_dir = cfg.out.clone().map(PathBuf::from).unwrap_or_else(|| args.out.clone());
    eprintln!("running {kind} experiment ({} replicates)", cfg.replicates);
    let outcome = match kind {
        ExperimentKind::Rate => run_rate_experiment(&cfg)?,
        ExperimentKind::Alpha => run_alpha_experiment(&cfg)?,
        ExperimentKind::Mesh => run_mesh_experiment(&cfg)?,
    };

    std::fs::create_dir_all(&out_dir)?;
    saapde_core::experiments::write_rows(&out_dir.join("rows.csv"), &outcome.rows)?;
    std::fs::write(out_dir.join("config_snapshot.cfg"), cfg.to_config_string())?;
    let plot = render_outcome_plot(kind, &outcome)?;
    std::fs::write(out_dir.join("plot.svg"), plot)?;

    let mut fit_text = String::new();
    print_outcome(kind, &outcome, &mut fit_text);
    std::fs::write(out_dir.join("fit.txt"), &fit_text)?;
    RunMetadata {
        command: format!("experiment {kind}"),
        seed: Some(cfg.base_seed),
        wall_s: started.elapsed().as_secs_f64(),
        extra: vec![
            ("compact_checked".into(), outcome.compact_checked.to_string()),
            ("compact_violations".into(), outcome.compact_violations.to_string()),
        ],
    }
    .write(&out_dir)?;
    println!("rows written to {}", out_dir.join("rows.csv").display());
    Ok(())
}

fn print_outcome(kind: ExperimentKind, outcome: &ExperimentOutcome, sink: &mut String) {
    let x_name = match kind {
        ExperimentKind::Rate => "N",
        ExperimentKind::Alpha => "alpha",
        ExperimentKind::Mesh => "n",
    };
    sink.push_str(&format!("{x_name},mean_chi\n"));
    for (x, mean) in &outcome.means {
        sink.push_str(&format!("{x},{mean}\n"));
    }
    match (&outcome.fit, &outcome.fit_note) {
        (Some(fit), _) => sink.push_str(&format!(
            "slope,{}\nintercept,{}\nresidual_sum,{}\npoints_used,{}\npoints_excluded,{}\n",
            fit.slope, fit.intercept, fit.residual_sum, fit.points_used, fit.points_excluded
        )),
        (None, Some(note)) => sink.push_str(&format!("fit_note,{note}\n")),
        (None, None) => {}
    }
    print!("{sink}");
}

fn render_outcome_plot(kind: ExperimentKind, outcome: &ExperimentOutcome) -> Result<String> {
    let x_of = |r: &ResultRow| match kind {
        ExperimentKind::Rate => r.sample_size as f64,
        ExperimentKind::Alpha => r.alpha,
        ExperimentKind::Mesh => r.mesh_n as f64,
    };
    let scatter: Vec<(f64, f64)> = outcome
        .rows
        .iter()
        .filter_map(|r| r.chi.map(|c| (x_of(r), c)))
        .filter(|&(_, c)| c > 0.0)
        .collect();
    let (x_label, x_base) = match kind {
        ExperimentKind::Rate => ("sample size N", svg::LogBase::Two),
        ExperimentKind::Alpha => ("regularization alpha", svg::LogBase::Ten),
        ExperimentKind::Mesh => ("mesh subdivisions n", svg::LogBase::Two),
    };
    let means: Vec<(f64, f64)> = outcome.means.iter().filter(|&&(_, m)| m > 0.0).cloned().collect();
    svg::render(&svg::PlotSpec {
        title: &format!("criticality measure over {x_label}"),
        x_label,
        y_label: "mean criticality",
        x_base,
        y_base: svg::LogBase::Ten,
        scatter: &scatter,
        means: &means,
        fit: outcome.fit.map(|f| (f.slope, f.intercept)),
    })
    .map_err(|e| anyhow!(e))
}

fn plan_command(
    constants_path: Option<&Path>,
    eps: f64,
    delta: f64,
    alpha: f64,
    out: Option<&Path>,
) -> Result<()> {
    let constants = config::constants_from_file(constants_path, alpha)?;
    let result = planner::plan(&constants, eps, delta)?;
    for note in &result.notes {
        eprintln!("warning: {note}");
    }
    let fmt_count = |c: &SampleCount| match c {
        SampleCount::Count(n) => format!("{n}"),
        SampleCount::Astronomical(x) => format!("astronomical ({x:.3e})"),
    };
    println!("quantity,value");
    println!("eps,{eps}");
    println!("delta,{delta}");
    println!("lipschitz_gradient,{}", result.lipschitz);
    println!("misfit_bound,{}", result.misfit_bound);
    println!("h1_radius,{}", result.h1_radius);
    println!("tau,{}", result.tau);
    println!("N_expectation,{}", fmt_count(&result.n_expectation));
    println!("N_tail,{}", fmt_count(&result.n_tail));
    println!("heuristic,{}", result.heuristic);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("plan.csv"), result.to_csv())?;
        println!("plan written to {}", dir.join("plan.csv").display());
    }
    Ok(())
}

fn verify_bounds(seed: u64, paper_scale: bool, out: Option<&Path>) -> Result<()> {
    let n_mc = if paper_scale { 100_000 } else { 20_000 };
    let lambdas = default_lambda_grid();
    let mut rows: Vec<CheckRow> = Vec::new();

    let rademacher = VectorSampler::Rademacher;
    let sphere = VectorSampler::UniformSphere { dim: 8, radius: 1.5 };
    let gauss = VectorSampler::TruncatedGaussian { bound: 2.0, sigma: 2.0f64.sqrt() };

    for (s, tau) in [
        (&rademacher, rademacher.claimed_tau()),
        (&sphere, sphere.claimed_tau()),
        (&gauss, gauss.claimed_tau()),
    ] {
        rows.extend(check_cosh_condition(s, tau, &lambdas, n_mc, seed));
        rows.push(check_subgaussian_equivalence(s, tau, n_mc, seed + 1));
        rows.extend(sum_mgf_check(s, tau, &lambdas, 4, n_mc, seed + 2));
    }
    for n_avg in [4usize, 16, 64] {
        let m = maxima_bounds_experiment(&rademacher, 1.0, 1, n_avg, n_mc, seed + 3);
        rows.push(m.mean_row);
        rows.extend(m.tail_rows);
    }
    let m = maxima_bounds_experiment(&sphere, sphere.claimed_tau(), 4, 16, n_mc, seed + 4);
    rows.push(m.mean_row);
    rows.extend(m.tail_rows);

    let csv = bounds_csv(&rows);
    print!("{csv}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bounds.csv"), &csv)?;
    }
    let failures = rows.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let flags = rows.iter().filter(|r| r.verdict == Verdict::Flag).count();
    eprintln!("{} checks, {} flagged, {} failed", rows.len(), flags, failures);
    if failures > 0 {
        bail!("{failures} bound checks failed");
    }
    Ok(())
}

fn verify_gradients(seed: u64) -> Result<()> {
    let disc = Arc::new(Discretization::case_study(16)?);
    let reg = RegularizerParams::without_box(0.0, 1.0)?;
    let samples = UniformSampler::new(seed).draw(4);
    let inst = SaaInstance::new(disc.clone(), reg, samples)?;
    let cells = inst.num_cells();
    let area = disc.mesh.cell_area();
    let mut rng = CounterRng::new(seed ^ 0xFD);
    let u: Vec<f64> = (0..cells).map(|_| rng.next_symmetric()).collect();
    let grad = inst.gradient(&u)?;

    println!("direction,h,fd,analytic,rel_error");
    let mut worst_best = 0.0f64;
    for dir_ix in 0..4 {
        let w: Vec<f64> = (0..cells).map(|_| rng.next_symmetric()).collect();
        let analytic = area * dot(&grad, &w);
        let mut best = f64::INFINITY;
        for &h in &[1e-2, 1e-3, 1e-4, 1e-5] {
            let up: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| ui + h * wi).collect();
            let um: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| ui - h * wi).collect();
            let fd = (inst.objective(&up)? - inst.objective(&um)?) / (2.0 * h);
            let rel = ((fd - analytic) / analytic).abs();
            best = best.min(rel);
            println!("{dir_ix},{h:e},{fd},{analytic},{rel:.3e}");
        }
        worst_best = worst_best.max(best);
    }
    eprintln!("worst best-h relative error: {worst_best:.3e}");
    if worst_best > 1e-6 {
        bail!("finite-difference agreement above 1e-6");
    }
    Ok(())
}

fn verify_stability(seed: u64) -> Result<()> {
    let disc = Discretization::case_study(32)?;
    let weight_c01 = {
        let c = planner::case_study_constants(1e-3)?;
        c.g_max.value
    };
    let constants = StabilityConstants {
        kappa_min: planner::kappa_min_case_study(),
        friedrichs: planner::friedrichs_constant(2)?,
        weight_c01,
    };
    let mut rng = CounterRng::new(seed ^ 0xAB);
    let mut sampler = UniformSampler::new(seed);
    println!("pair,state_norm,state_bound,lipschitz_lhs,lipschitz_rhs,ok");
    let mut all_ok = true;
    for pair in 0..5 {
        let xi = sampler.draw_one();
        let cells = disc.num_cells();
        let u1: Vec<f64> = (0..cells).map(|_| 5.0 * rng.next_symmetric()).collect();
        let u2: Vec<f64> = (0..cells).map(|_| 5.0 * rng.next_symmetric()).collect();
        let r = disc.check_stability(&u1, &u2, &xi, &constants)?;
        let ok = r.state_ok && r.lipschitz_ok;
        all_ok &= ok;
        println!(
            "{pair},{},{},{},{},{}",
            r.state_norm, r.state_bound, r.lipschitz_lhs, r.lipschitz_rhs, ok
        );
    }
    if !all_ok {
        bail!("a stability estimate was violated");
    }
    Ok(())
}

fn plot_command(csv: &Path, out: &Path) -> Result<()> {
    let rows = saapde_core::experiments::read_rows(csv)?;
    if rows.is_empty() {
        bail!("no rows in {}", csv.display());
    }
    let distinct = |f: &dyn Fn(&ResultRow) -> f64| -> usize {
        let mut v: Vec<u64> = rows.iter().map(|r| f(r).to_bits()).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let by_n: &dyn Fn(&ResultRow) -> f64 = &|r| r.sample_size as f64;
    let by_alpha: &dyn Fn(&ResultRow) -> f64 = &|r| r.alpha;
    let kind = if distinct(by_n) > 1 {
        ExperimentKind::Rate
    } else if distinct(by_alpha) > 1 {
        ExperimentKind::Alpha
    } else {
        ExperimentKind::Mesh
    };
    let x_of = |r: &ResultRow| match kind {
        ExperimentKind::Rate => r.sample_size as f64,
        ExperimentKind::Alpha => r.alpha,
        ExperimentKind::Mesh => r.mesh_n as f64,
    };
    let mut xs: Vec<u64> = rows.iter().map(|r| x_of(r).to_bits()).collect();
    xs.sort_unstable();
    xs.dedup();
    let mut means = Vec::new();
    for xb in xs {
        let x = f64::from_bits(xb);
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| x_of(r).to_bits() == xb)
            .filter_map(|r| r.chi)
            .collect();
        if !vals.is_empty() {
            means.push((x, vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    let fit = fit_rate(&means, 0).ok();
    let outcome = ExperimentOutcome {
        rows,
        means,
        fit,
        fit_note: None,
        compact_checked: 0,
        compact_violations: 0,
    };
    let svg_text = render_outcome_plot(kind, &outcome)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("plot.svg");
    std::fs::write(&path, svg_text)?;
    println!("plot written to {}", path.display());
    Ok(())
}
