use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gammalab::cell_problem::{convergence_scan, CellGrid, SolverOptions};
use gammalab::energy::{minimize, random_field};
use gammalab::geodesic::{sigma_h_with, GeodesicOptions};
use gammalab::harness::{
    emit_plots, evaluate, init_workers, run_gamma, run_mass, run_scaling, sigma_xi_ladder, Config, ExperimentReport,
    LadderOptions, RunContext, Scales,
};
use gammalab::potential::HomogenizedPotential;
use gammalab::profile::build_profile;
use gammalab::unfolding::identity_audit;
use gammalab::{GridField, PotentialSpec};

#[derive(Parser)]
#[command(name = "gamma", version, about = "Two-scale phase-field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize along the schedule and compare with the sharp-interface limit.
    Run(ExperimentArgs),
    /// Defect norms of recovery fields along the schedule.
    Scaling(ExperimentArgs),
    /// Mass-constrained runs with bubble repair.
    Mass(ExperimentArgs),
    /// Redraw the plots of a saved report.
    Plot {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unfolding identity audits on random fields plus the defect scaling slopes.
    UnfoldCheck {
        config: PathBuf,
        #[arg(long, default_value = "unfold_check.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Levels with more grid cells than this skip the identity audit.
        #[arg(long, default_value_t = 2_000_000)]
        max_cells: usize,
    },
    /// Relaxed cell potential over a ladder of `ξ`.
    Cellprob {
        #[arg(long, default_value = "composite{theta1=0.5,theta2=0.5,c1=1,c2=4,c3=9}")]
        potential: String,
        #[arg(long)]
        xi: Option<f64>,
        /// Comma-separated, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        ladder: Vec<f64>,
        /// Comma-separated scalar `z`; defaults to 11 points spanning the wells.
        #[arg(long, value_delimiter = ',')]
        z: Vec<f64>,
        /// Cell grid as `N1xN2`.
        #[arg(long, default_value = "32x32")]
        grid: String,
        #[arg(long, default_value_t = 1)]
        dim_n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Surface tension of `W^h` (or `W^ξ`) as JSON lines.
    Sigma {
        #[arg(long, default_value = "composite{theta1=0.5,theta2=0.5,c1=1,c2=4,c3=9}")]
        potential: String,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long, default_value_t = 1)]
        dim_m: usize,
        #[arg(long, default_value_t = 1)]
        dim_n: usize,
        #[arg(long, default_value_t = 129)]
        nodes: usize,
        /// Writes the optimizer energy trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Optimal transition profile samples as CSV.
    Profile {
        #[arg(long, default_value = "composite{theta1=0.5,theta2=0.5,c1=1,c2=4,c3=9}")]
        potential: String,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1)]
        dim_m: usize,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recovery field of one schedule level as a grid-field file.
    Recover {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// One minimization at explicit scales on the configured domain.
    Minimize(MinimizeArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Recovery,
    Random,
    File,
}

#[derive(Args)]
struct MinimizeArgs {
    config: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long, value_enum, default_value = "recovery")]
    init: Init,
    /// Initial field for `--init file`.
    #[arg(long)]
    field: Option<PathBuf>,
    /// `a`-phase fraction to hold fixed.
    #[arg(long)]
    mass: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when an acceptance predicate failed.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run(a) => experiment(a, run_gamma, "gamma"),
        Command::Scaling(a) => experiment(a, run_scaling, "scaling"),
        Command::Mass(a) => experiment(a, run_mass, "mass"),
        Command::Plot { report, out } => {
            let r = ExperimentReport::load(&report).with_context(|| format!("reading {}", report.display()))?;
            let dir = out.unwrap_or_else(|| {
                let stem = report.file_stem().map(PathBuf::from).unwrap_or_default();
                report.parent().unwrap_or(Path::new(".")).join(stem)
            });
            plots(&r, &dir)?;
            Ok(true)
        }
        Command::UnfoldCheck { config, out, seed, max_cells } => unfold_check(&config, &out, seed, max_cells),
        Command::Cellprob { potential, xi, ladder, z, grid, dim_n, out } => {
            cellprob(&potential, xi, ladder, z, &grid, dim_n, out.as_deref())
        }
        Command::Sigma { potential, xi, dim_m, dim_n, nodes, trace } => {
            sigma(&potential, xi, dim_m, dim_n, nodes, trace.as_deref())
        }
        Command::Profile { potential, eps, lambda, dim_m, samples, out } => {
            let spec: PotentialSpec = potential.parse()?;
            let p = spec.build(1, dim_m)?;
            let w = HomogenizedPotential::with_default_resolution(p.clone());
            let (a, b) = p.wells();
            let sig = gammalab::geodesic::sigma_h(&w, a, b)?;
            let prof = build_profile(&sig.curve, &w, eps, lambda)?;
            let mut csv = csv::Writer::from_writer(output(out.as_deref())?);
            let mut header = vec!["t".to_string(), "g".to_string()];
            header.extend(if dim_m == 1 { vec!["u".to_string()] } else { (0..dim_m).map(|k| format!("u{k}")).collect() });
            csv.write_record(&header)?;
            for (t, g, u) in prof.samples(samples) {
                let mut rec = vec![t.to_string(), g.to_string()];
                rec.extend(u.iter().map(f64::to_string));
                csv.write_record(&rec)?;
            }
            csv.flush()?;
            Ok(true)
        }
        Command::Recover { config, level, out } => {
            let cfg = Config::load(&config)?;
            let ctx = RunContext::new(&cfg)?;
            let s = *ctx.schedule.levels.get(level).context("level outside the schedule")?;
            let prof = ctx.profile(&s)?;
            let (geom, _) = ctx.level_geometry(&s, prof.tau)?;
            let (_, u) = ctx.recovery(&geom, &prof)?;
            u.save(&out, &ctx.a, &ctx.b)?;
            eprintln!("wrote {} cells to {}", u.len(), out.display());
            Ok(true)
        }
        Command::Minimize(a) => minimize_cmd(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn experiment(a: ExperimentArgs, run: fn(&Config) -> gammalab::Result<ExperimentReport>, kind: &str) -> Result<bool> {
    let cfg = Config::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let report = run(&cfg)?;
    let dir = a.out.or_else(|| cfg.output.dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    // One config may drive both `run` and `scaling`; keep their outputs apart.
    let name = match (&cfg.output.name, kind) {
        (Some(n), "scaling") => format!("{n}_scaling"),
        (Some(n), _) => n.clone(),
        (None, _) => kind.to_string(),
    };
    let path = dir.join(format!("{name}.csv"));
    report.save(&path)?;
    println!("report: {}", path.display());
    if !a.no_plots {
        plots(&report, &dir.join(&name))?;
    }
    let checks = evaluate(&report, &cfg.acceptance);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn plots(r: &ExperimentReport, dir: &Path) -> Result<()> {
    let out = emit_plots(r, dir)?;
    for p in &out.written {
        println!("plot: {}", p.display());
    }
    for n in &out.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn unfold_check(config: &Path, out: &Path, seed: u64, max_cells: usize) -> Result<bool> {
    let cfg = Config::load(config)?;
    let ctx = RunContext::new(&cfg)?;
    let mut csv = csv::Writer::from_path(out)?;
    csv.write_record(["test", "n", "delta", "eta", "lhs", "rhs", "abs_err", "pass"])?;
    let mut ok = true;
    for s in &ctx.schedule.levels {
        let prof = ctx.profile(s)?;
        let (geom, _) = ctx.level_geometry(s, prof.tau)?;
        if geom.len() > max_cells {
            eprintln!("level {}: {} cells, identity audit skipped", s.n, geom.len());
            continue;
        }
        let u = random_field(&geom, &ctx.a, &ctx.b, seed + s.n as u64);
        for c in identity_audit(&u, s.delta, s.eta)? {
            ok &= c.pass;
            csv.serialize((c.test, s.n, s.delta, s.eta, c.lhs, c.rhs, c.abs_err, c.pass))?;
        }
    }
    let scaling = run_scaling(&cfg)?;
    let last = ctx.schedule.levels.last().unwrap();
    for key in ["slope_d1", "slope_d2"] {
        let slope = scaling.meta_f64(key).unwrap_or(f64::NAN);
        let min = cfg.acceptance.slope_min;
        let pass = slope >= min;
        ok &= pass;
        csv.serialize((key, last.n, last.delta, last.eta, slope, min, (min - slope).max(0.0), pass))?;
    }
    csv.flush()?;
    println!("{}: {}", out.display(), if ok { "all checks pass" } else { "some checks fail" });
    Ok(ok)
}

fn parse_grid(s: &str) -> Result<CellGrid> {
    let (a, b) = s.split_once('x').context("grid must look like 32x32")?;
    Ok(CellGrid::new(a.trim().parse()?, b.trim().parse()?)?)
}

fn cellprob(
    potential: &str,
    xi: Option<f64>,
    mut ladder: Vec<f64>,
    z: Vec<f64>,
    grid: &str,
    dim_n: usize,
    out: Option<&Path>,
) -> Result<bool> {
    let spec: PotentialSpec = potential.parse()?;
    let p = spec.build(dim_n, 1)?;
    if let Some(x) = xi {
        ladder.push(x);
    }
    if ladder.is_empty() {
        bail!("give --xi or --ladder");
    }
    let (a, b) = p.wells();
    let zs: Vec<Vec<f64>> = if z.is_empty() {
        (0..11).map(|k| vec![a[0] + (b[0] - a[0]) * k as f64 / 10.0]).collect()
    } else {
        z.into_iter().map(|v| vec![v]).collect()
    };
    let opts = SolverOptions::default();
    let table = convergence_scan(&p, &zs, &ladder, parse_grid(grid)?, &opts, 2.0 * opts.tol)?;
    let mut csv = csv::Writer::from_writer(output(out)?);
    csv.write_record(["z", "xi", "W_xi", "W_h", "gap", "iters", "feasible"])?;
    for r in &table.rows {
        csv.serialize((r.z[0], r.xi, r.w_xi, r.w_h, r.gap, r.iters, r.feasible))?;
    }
    csv.flush()?;
    for (i, hi, lo) in &table.violations {
        eprintln!("monotonicity violation at z index {i}: xi {hi} -> {lo}");
    }
    Ok(table.violations.is_empty())
}

fn sigma(potential: &str, xi: Option<f64>, dim_m: usize, dim_n: usize, nodes: usize, trace: Option<&Path>) -> Result<bool> {
    let spec: PotentialSpec = potential.parse()?;
    let p = spec.build(dim_n, dim_m)?;
    let result = match xi {
        Some(x) => sigma_xi_ladder(&p, &[x], &LadderOptions::default())?.remove(0).1,
        None => {
            let w = HomogenizedPotential::with_default_resolution(p.clone());
            let (a, b) = p.wells();
            let opts = GeodesicOptions { nodes, max_nodes: nodes.max(GeodesicOptions::default().max_nodes), ..Default::default() };
            sigma_h_with(&w, a, b, &opts)?
        }
    };
    if let Some(path) = trace {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "sweep,energy")?;
        for (k, e) in result.diagnostics.trace.iter().enumerate() {
            writeln!(f, "{k},{e}")?;
        }
    }
    let line = serde_json::json!({
        "sigma": result.value,
        "method": result.method.as_str(),
        "nodes": result.curve.len(),
        "energy_trace_file": trace.map(|p| p.display().to_string()),
    });
    println!("{line}");
    Ok(true)
}

fn minimize_cmd(a: MinimizeArgs) -> Result<bool> {
    let mut cfg = Config::load(&a.config)?;
    if let Some(m) = a.mass {
        if !(m > 0.0 && m < 1.0) {
            bail!("mass fraction must lie in (0, 1)");
        }
    }
    cfg.schedule.levels = 1;
    let ctx = RunContext::new(&cfg)?;
    let s = Scales { n: 0, eps: a.eps, delta: a.delta, eta: a.eta };
    gammalab::ScaleSchedule::new(vec![s])?;
    let prof = ctx.profile(&s)?;
    let (geom, windowed) = ctx.level_geometry(&s, prof.tau)?;
    let init = match a.init {
        Init::Recovery => ctx.recovery(&geom, &prof)?.1,
        Init::Random => random_field(&geom, &ctx.a, &ctx.b, cfg.solver.seed),
        Init::File => {
            let path = a.field.context("--init file needs --field")?;
            let (u, _, _) = GridField::load(&path)?;
            if u.geometry() != geom {
                bail!("field grid does not match the configured grid");
            }
            u
        }
    };
    let opts = cfg.minimize_options(a.mass);
    let res = minimize(&init, &ctx.problem(&s, windowed), &opts)?;
    if let Some(out) = &a.out {
        res.field.save(out, &ctx.a, &ctx.b)?;
    }
    let line = serde_json::json!({
        "energy": res.breakdown.total,
        "potential": res.breakdown.potential,
        "gradient": res.breakdown.gradient,
        "iterations": res.iterations,
        "converged": res.converged,
        "cells": geom.len(),
    });
    println!("{line}");
    Ok(res.converged)
}
