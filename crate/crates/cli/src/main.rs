mod files;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lqr_ac::experiment::{run_sweep_with, SweepRun};
use lqr_ac::numerics::to_rows;
use lqr_ac::trainer::train_with_sink;
use lqr_ac::verify::run_checks;
use lqr_ac::{Error, Execution, IterateLog, LinearEnv};
use serde::Serialize;

use files::{load_experiment, load_model, load_train_config};

#[derive(Parser)]
#[command(name = "lqr-ac", version, about = "Actor-critic experiments on stochastic LQR problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model file (JSON)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training or experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sampling and sweep runs
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analytic and statistical self-checks on a model
    Check(Common),
    /// Solve the Riccati equation and report the optimal controller
    Solve(Common),
    /// Run one training and write the per-iteration log as CSV
    Train(Common),
    /// Run a multi-horizon sweep and fit convergence slopes
    Sweep(Common),
}

/// Failure classes mapped onto process exit codes.
enum Failure {
    Verification(String),
    Config(anyhow::Error),
    Runtime(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

const CSV_HEADER: &str = "t,critic_err_sq,critic_err,actor_gap,lyapunov,rho_closed_loop,\
norm_AmBK,norm_E,norm_K,norm_theta_F,alpha_eff,beta_eff";

fn csv_row(r: &IterateLog) -> String {
    let fields = [
        r.critic_err_sq,
        r.critic_err,
        r.actor_gap,
        r.lyapunov,
        r.rho_closed_loop,
        r.norm_amb_k,
        r.norm_e,
        r.norm_k,
        r.norm_theta_f,
        r.alpha_eff,
        r.beta_eff,
    ];
    let mut s = r.t.to_string();
    for v in fields {
        s.push(',');
        s.push_str(&format!("{v:.16e}"));
    }
    s
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("missing required flag --{flag}"))
}

fn thread_pool(threads: Option<usize>) -> Result<Option<rayon_pool::Pool>> {
    rayon_pool::build(threads)
}

#[cfg(feature = "parallel")]
mod rayon_pool {
    pub type Pool = rayon::ThreadPool;

    pub fn build(threads: Option<usize>) -> anyhow::Result<Option<Pool>> {
        match threads {
            None => Ok(None),
            Some(0) => anyhow::bail!("--threads must be positive"),
            Some(n) => Ok(Some(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)),
        }
    }

    pub fn install<T: Send>(pool: &Option<Pool>, f: impl FnOnce() -> T + Send) -> T {
        match pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod rayon_pool {
    pub type Pool = ();

    pub fn build(threads: Option<usize>) -> anyhow::Result<Option<Pool>> {
        if threads == Some(0) {
            anyhow::bail!("--threads must be positive");
        }
        Ok(None)
    }

    pub fn install<T: Send>(_: &Option<Pool>, f: impl FnOnce() -> T + Send) -> T {
        f()
    }
}

fn check(c: &Common) -> Result<(), Failure> {
    let model = load_model(require(&c.model, "model")?)?;
    let checks = run_checks(&model, c.seed.unwrap_or(0))
        .map_err(|e| Failure::Runtime(format!("check suite broke down: {e}")))?;
    let mut failed = Vec::new();
    for ch in &checks {
        println!(
            "{:<4} {:<26} value {:>11.3e}  tol {:>9.1e}  {}",
            if ch.pass { "ok" } else { "FAIL" },
            ch.name,
            ch.value,
            ch.tolerance,
            ch.detail
        );
        if !ch.pass {
            failed.push(ch.name);
        }
    }
    if let Some(out) = &c.out {
        write_json(out, &checks)?;
    }
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct SolveReport {
    p: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    cost: f64,
    closed_loop_radius: f64,
    riccati_residual: f64,
    natural_grad_norm: f64,
    iterations: usize,
}

fn solve(c: &Common) -> Result<(), Failure> {
    let model = load_model(require(&c.model, "model")?)?;
    let sol = model
        .solve_riccati()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let cost = model.cost(&sol.k).map_err(|e| Failure::Runtime(e.to_string()))?;
    let g = model
        .natural_grad_g(&sol.k)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let report = SolveReport {
        p: to_rows(&sol.p),
        k: to_rows(sol.k.as_mat()),
        cost,
        closed_loop_radius: sol.radius,
        riccati_residual: sol.residual,
        natural_grad_norm: g.norm(),
        iterations: sol.iterations,
    };
    println!("P* = {}", serde_json::to_string(&report.p).map_err(anyhow::Error::from)?);
    println!("K* = {}", serde_json::to_string(&report.k).map_err(anyhow::Error::from)?);
    println!("J(K*) = {cost:.12}");
    println!("rho(A - BK*) = {:.12}", sol.radius);
    println!("riccati residual = {:.3e}", sol.residual);
    println!("|G_K*|_F = {:.3e}", report.natural_grad_norm);
    if let Some(out) = &c.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train(c: &Common) -> Result<(), Failure> {
    let model = load_model(require(&c.model, "model")?)?;
    let mut cfg = load_train_config(require(&c.config, "config")?)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = require(&c.out, "out")?;
    let pool = thread_pool(c.threads)?;
    let env = LinearEnv::from_model(&model).map_err(|e| Failure::Config(e.into()))?;

    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CSV_HEADER}").map_err(anyhow::Error::from)?;
    let mut io_err = None;
    let result = rayon_pool::install(&pool, || {
        train_with_sink(&env, &model, &cfg, Execution::Parallel, |rec| {
            if io_err.is_none() {
                if let Err(e) = writeln!(w, "{}", csv_row(rec)) {
                    io_err = Some(e);
                }
            }
        })
    });
    if let Some(e) = io_err {
        return Err(Failure::Config(anyhow::Error::from(e).context("writing CSV")));
    }
    let abort = match result {
        Ok((_, _, abort)) => abort,
        Err(e @ (Error::InvalidConfig(_) | Error::DimensionMismatch(_))) => {
            return Err(Failure::Config(e.into()))
        }
        Err(e) => return Err(Failure::Runtime(e.to_string())),
    };
    if let Some(e) = &abort {
        writeln!(w, "# status: aborted: {e}").map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    match abort {
        Some(e) => Err(Failure::Runtime(e.to_string())),
        None => Ok(()),
    }
}

fn run_csv_name(run: &SweepRun) -> String {
    format!("T{}_run{}.csv", run.t, run.run)
}

fn sweep(c: &Common) -> Result<(), Failure> {
    let mut spec = load_experiment(require(&c.config, "config")?)?;
    if let Some(seed) = c.seed {
        spec.seed = seed;
    }
    let out = require(&c.out, "out")?;
    let pool = thread_pool(c.threads)?;
    let output = rayon_pool::install(&pool, || run_sweep_with(Execution::Parallel, &spec))
        .map_err(|e| match e {
            Error::InvalidConfig(_) | Error::InvalidModel(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.to_string()),
        })?;

    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    for run in &output.runs {
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for rec in &run.log {
            text.push_str(&csv_row(rec));
            text.push('\n');
        }
        if let Some(e) = &run.abort {
            text.push_str(&format!("# status: aborted: {e}\n"));
        }
        let path = runs_dir.join(run_csv_name(run));
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(&out.join("summary.json"), &output.result)?;

    let res = &output.result;
    for s in &res.per_t {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4e}"));
        println!(
            "T = {:>6}  completed {:>3}  failed {:>3}  critic {}  actor {}",
            s.t,
            s.completed,
            s.failed,
            fmt(s.mean_critic_err_sq),
            fmt(s.mean_actor_gap)
        );
    }
    let slope = |v: Option<f64>| v.map_or("unavailable".to_string(), |x| format!("{x:.4}"));
    println!("slope critic: {}", slope(res.slope_critic));
    println!("slope actor:  {}", slope(res.slope_actor));

    let failed: usize = res.per_t.iter().map(|s| s.failed).sum();
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} of {} runs aborted; see summary.json",
            res.runs.len()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check(c) => check(c),
        Command::Solve(c) => solve(c),
        Command::Train(c) => train(c),
        Command::Sweep(c) => sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
