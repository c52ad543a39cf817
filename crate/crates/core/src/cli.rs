//! Command-line front end: config ingestion, pipeline stages, artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::feedback::{extract_feedback, simulate_particles, ParticleReport};
use crate::fields::ControlAffineSystem;
use crate::generator::{build_rates, cfl_bound, generator_triplets, write_triplets};
use crate::geometry::Grid;
use crate::graph::{build_graph, validate_problem_hypotheses};
use crate::oracle;
use crate::transport::{self, assemble, cost_sweep, io as tio, Solution, TimeGrid};

#[derive(Debug, Parser)]
#[command(name = "setot", version, about = "Optimal transport of mass over control-affine systems on box grids")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Defaults to the hardware parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Solve even when the connectivity checks fail.
    #[arg(long, global = true)]
    pub override_hypotheses: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the connectivity report; exits nonzero when a check fails.
    CheckConnectivity,
    /// Dump drift and control rate matrices as sparse triplets.
    GeneratorDump,
    /// Solve the transport problem and write snapshots, fluxes and cost.
    Solve {
        /// Snapshots hold mass per box volume instead of box mass.
        #[arg(long)]
        as_density: bool,
    },
    /// Solve, extract the feedback law and push particles through it.
    Simulate {
        #[arg(long)]
        as_density: bool,
    },
    /// Independent solves over `sweep.horizons`.
    Sweep,
    #[command(hide = true)]
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Squared distance of a rigid translation.
    Translation {
        #[arg(required = true, num_args = 1.., allow_negative_numbers = true)]
        displacement: Vec<f64>,
    },
    /// Shoot the Grushin geodesic from a start point to (0, alpha).
    Grushin {
        #[arg(allow_negative_numbers = true)]
        x1: f64,
        #[arg(allow_negative_numbers = true)]
        x2: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        alpha: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CheckConnectivity => "check-connectivity",
            Command::GeneratorDump => "generator-dump",
            Command::Solve { .. } => "solve",
            Command::Simulate { .. } => "simulate",
            Command::Sweep => "sweep",
            Command::Oracle { .. } => "oracle",
        }
    }
}

#[derive(Debug, Serialize)]
struct StageTime {
    stage: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    threads: usize,
    status: &'static str,
    failed_stage: Option<String>,
    error: Option<String>,
    stages: Vec<StageTime>,
    results: serde_json::Map<String, serde_json::Value>,
    config: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    stage: &'a str,
    kind: &'a str,
    message: String,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Grid(_) => "grid",
        Error::UnknownScenario(_) | Error::Scenario(_) => "scenario",
        Error::OutOfDomain { .. } => "out_of_domain",
        Error::NonFinite { .. } => "non_finite",
        Error::Dimension(_) => "dimension",
        Error::Measure(_) => "measure",
        Error::Hypotheses(_) => "hypotheses",
        Error::Infeasible(_) => "infeasible",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
    }
}

/// Stage timings and results. [`Run::finish`] writes `manifest.json`
/// whatever the outcome, falling back to `./out` when the config never
/// named a directory.
struct Run {
    out: Option<PathBuf>,
    manifest: Manifest,
    stage: String,
    started: Instant,
}

impl Run {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        self.stage = name.to_string();
        let t = Instant::now();
        let out = f();
        self.manifest.stages.push(StageTime { stage: name.to_string(), seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn result(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.manifest.results.insert(key.to_string(), v);
    }

    fn dir(&self) -> Out {
        Out(self.out.clone().unwrap_or_else(|| PathBuf::from("out")))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        self.dir().create(name)
    }

    fn finish(mut self, outcome: &Result<()>) {
        self.result("wall_seconds", self.started.elapsed().as_secs_f64());
        if let Err(e) = outcome {
            self.manifest.status = "failed";
            self.manifest.failed_stage = Some(self.stage.clone());
            self.manifest.error = Some(e.to_string());
            let record = ErrorRecord { stage: &self.stage, kind: error_kind(e), message: e.to_string() };
            let json = serde_json::to_string_pretty(&record).expect("error record serializes");
            eprintln!("{json}");
            if let Ok(mut w) = self.create("error.json") {
                let _ = writeln!(w, "{json}");
            }
        }
        match self.create("manifest.json") {
            Ok(mut w) => {
                let _ = serde_json::to_writer_pretty(&mut w, &self.manifest);
                let _ = writeln!(w);
            }
            Err(e) => log::error!("cannot write manifest: {e}"),
        }
    }
}

struct Out(PathBuf);

impl Out {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.0.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(p)?))
    }
}

/// Parse arguments from the environment and run. Returns the exit code.
pub fn main_from_args() -> i32 {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    let threads = cli.global.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("thread pool already initialized: {e}");
    }
    let mut run = Run {
        out: cli.global.out.clone(),
        manifest: Manifest {
            command: cli.command.name().to_string(),
            version: env!("CARGO_PKG_VERSION"),
            threads,
            status: "ok",
            failed_stage: None,
            error: None,
            stages: Vec::new(),
            results: Default::default(),
            config: None,
        },
        stage: "config".into(),
        started: Instant::now(),
    };
    let outcome = dispatch(&cli, &mut run);
    let code = if outcome.is_ok() { 0 } else { 1 };
    run.finish(&outcome);
    code
}

fn dispatch(cli: &Cli, run: &mut Run) -> Result<()> {
    if let Command::Oracle { which } = &cli.command {
        return run.stage("oracle", || print_oracle(which));
    }
    let cfg = run.stage("config", || {
        let path = cli.global.config.as_ref().ok_or_else(|| Error::config("--config", "required"))?;
        let mut cfg = load_config(path)?;
        apply_overrides(&mut cfg, &cli.global);
        cfg.validate()?;
        Ok(cfg)
    })?;
    if run.out.is_none() {
        run.out = Some(cfg.output.clone());
    }
    fs::create_dir_all(&run.dir().0)?;
    run.manifest.config = Some(cfg.to_toml());

    match &cli.command {
        Command::CheckConnectivity => check_connectivity(&cfg, run),
        Command::GeneratorDump => generator_dump(&cfg, run),
        Command::Solve { as_density } => solve(&cfg, run, *as_density).map(|_| ()),
        Command::Simulate { as_density } => simulate(&cfg, run, *as_density),
        Command::Sweep => sweep(&cfg, run),
        Command::Oracle { .. } => unreachable!(),
    }
}

fn apply_overrides(cfg: &mut RunConfig, g: &GlobalArgs) {
    if let Some(o) = &g.out {
        cfg.output = o.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.tol {
        cfg.solver.tol = t;
    }
    if let Some(n) = g.max_iters {
        cfg.solver.max_iters = n;
    }
    if g.override_hypotheses {
        cfg.solver.override_hypotheses = true;
    }
}

fn check_connectivity(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let out = run.dir();
    let (grid, time) = (cfg.grid()?, cfg.time_grid()?);
    let system = cfg.system()?;
    let report = run.stage("connectivity", || {
        let rates = build_rates(&system, &grid, &time, cfg.quadrature_order)?;
        let graph = build_graph(&grid, &rates);
        let mut report = validate_problem_hypotheses(&graph, !rates.has_drift());
        if let Ok([(a, _), (b, _)]) = cfg.measures(&grid) {
            report.flag_measures(&a, &b);
        }
        let mut w = out.create("connectivity.txt")?;
        w.write_all(report.to_text().as_bytes())?;
        w.flush()?;
        Ok(report)
    })?;
    print!("{}", report.to_text());
    run.result("connectivity", &report);
    if report.passed {
        Ok(())
    } else {
        Err(Error::Hypotheses(report.summary()))
    }
}

fn generator_dump(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let out = run.dir();
    let (grid, time) = (cfg.grid()?, cfg.time_grid()?);
    let system = cfg.system()?;
    let rates = run.stage("rates", || build_rates(&system, &grid, &time, cfg.quadrature_order))?;
    run.stage("dump", || {
        let m = grid.len();
        for i in 0..rates.channels() {
            for (plus, tag) in [(true, "plus"), (false, "minus")] {
                let mut w = out.create(&format!("rates/control_{}_{tag}.txt", i + 1))?;
                write_triplets(&mut w, m, &generator_triplets(&grid, rates.control(i, plus)))?;
                w.flush()?;
            }
        }
        for (j, drift) in rates.drift.iter().enumerate() {
            let mut w = out.create(&format!("rates/drift_{j:04}.txt"))?;
            write_triplets(&mut w, m, &generator_triplets(&grid, drift))?;
            w.flush()?;
        }
        Ok(())
    })?;
    run.result("cfl", cfl_bound(&grid, &rates, time.dt()));
    Ok(())
}

struct Solved {
    grid: Grid,
    time: TimeGrid,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    solution: Solution,
}

fn solve(cfg: &RunConfig, run: &mut Run, as_density: bool) -> Result<Solved> {
    let out = run.dir();
    let (grid, time) = (cfg.grid()?, cfg.time_grid()?);
    let system = cfg.system()?;
    let [(mu0, _), (mu1, _)] = run.stage("measures", || cfg.measures(&grid))?;
    let problem = run.stage("assemble", || {
        let rates = build_rates(&system, &grid, &time, cfg.quadrature_order)?;
        let graph = build_graph(&grid, &rates);
        Ok(assemble(&grid, &graph, &rates, &mu0, &mu1, time)?.with_options(cfg.solver))
    })?;
    run.result("connectivity", &problem.report);
    run.result("variables", problem.variable_count());
    let solution = run.stage("solve", || problem.solve())?;
    let d = &solution.diagnostics;
    if !d.converged {
        log::warn!(
            "stopped after {} iterations without reaching tol {:e} (primal {:e}, dual {:e})",
            d.iterations,
            cfg.solver.tol,
            d.primal_residual,
            d.dual_residual
        );
    }
    println!("cost {:.8e} iterations {} converged {}", solution.cost, d.iterations, d.converged);
    run.result("cost", solution.cost);
    run.result("diagnostics", d);
    run.stage("write", || {
        for (j, mu) in solution.density.iter().enumerate() {
            let mut w = out.create(&format!("density/mu_{j:04}.csv"))?;
            tio::write_snapshot_csv(&mut w, &grid, mu, as_density)?;
            w.flush()?;
        }
        let mut w = out.create("density.bin")?;
        tio::write_binary(&mut w, &grid, &time, &solution)?;
        w.flush()?;
        let mut w = out.create("flux.csv")?;
        tio::write_flux_csv(&mut w, &solution)?;
        w.flush()?;
        let mut w = out.create("cost.csv")?;
        writeln!(w, "tf,cost,iterations,residual,converged")?;
        writeln!(w, "{},{:e},{},{:e},{}", time.tf, solution.cost, d.iterations, residual(d), d.converged)?;
        w.flush()?;
        Ok(())
    })?;
    Ok(Solved { grid, time, mu0, mu1, solution })
}

fn residual(d: &transport::Diagnostics) -> f64 {
    d.primal_residual.max(d.dual_residual).max(d.continuity_residual)
}

fn simulate(cfg: &RunConfig, run: &mut Run, as_density: bool) -> Result<()> {
    let out = run.dir();
    let s = solve(cfg, run, as_density)?;
    let system = cfg.system()?;
    let feedback = run.stage("feedback", || Ok(extract_feedback(&s.solution, system.controls(), s.grid.len())))?;
    run.stage("write_feedback", || {
        let mut w = out.create("feedback.csv")?;
        feedback.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    })?;
    let opts = cfg.particle_options();
    let report: ParticleReport = run.stage("particles", || {
        simulate_particles(&system, &s.grid, &feedback, &s.time, &s.mu0, &s.mu1, &opts)
    })?;
    println!(
        "particles {} transported fraction {:.4} (mass {:.4}), clamped {}",
        report.particles, report.transported_fraction, report.transported_mass, report.clamped
    );
    run.result("particles", &report);
    run.stage("write_particles", || {
        let mut w = out.create("particles.json")?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Error::Io(e.into()))?;
        writeln!(w)?;
        w.flush()?;
        if opts.record {
            let mut w = out.create("trajectories.csv")?;
            report.write_trajectories(&mut w, &s.time)?;
            w.flush()?;
        }
        Ok(())
    })
}

fn sweep(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let out = run.dir();
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::config("sweep", "missing [sweep] section"))?;
    let grid = cfg.grid()?;
    let system = cfg.system()?;
    let [(mu0, _), (mu1, _)] = run.stage("measures", || cfg.measures(&grid))?;
    let rows = run.stage("sweep", || {
        cost_sweep(&system, &grid, &mu0, &mu1, &sw.horizons, sw.dt, cfg.solver, cfg.quadrature_order)
    })?;
    run.stage("write", || {
        let mut w = out.create("cost.csv")?;
        writeln!(w, "tf,cost,iterations,residual,converged")?;
        for r in &rows {
            println!("tf {} cost {:.8e} iterations {} converged {}", r.tf, r.cost, r.iterations, r.converged);
            writeln!(w, "{},{:e},{},{:e},{}", r.tf, r.cost, r.iterations, r.residual, r.converged)?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.result("sweep", &rows);
    Ok(())
}

fn print_oracle(which: &OracleCommand) -> Result<()> {
    match which {
        OracleCommand::Translation { displacement } => {
            println!("{}", oracle::translation_wasserstein(displacement));
        }
        OracleCommand::Grushin { x1, x2, alpha } => {
            let g = oracle::grushin_shoot([*x1, *x2], *alpha)?;
            println!("a {:.15e}\nb {:.15e}\ncost {:.15e}\nminimizing {}", g.a, g.b, g.cost(), g.is_minimizing());
        }
    }
    Ok(())
}
