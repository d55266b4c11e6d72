use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

mod analyze;
mod config;
mod manifest;
mod run;
mod sweep;

use config::{parse_override, InitialState, RunConfig};

/// Nonlocal Cahn-Hilliard and porous-medium flows on finite random walk spaces.
#[derive(Parser)]
#[command(name = "rwch", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a config without time stepping; exit code 0 iff every check passes.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Validate, then integrate and write the run directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Audit a finished run directory and look for a steady state.
    Analyze {
        dir: PathBuf,
        /// Trailing steps inspected by the steady-state detector.
        #[arg(long)]
        window: Option<usize>,
        /// Rate threshold for steadiness.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the cartesian product of `--vary` axes as separate processes.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `key=v1,v2,...`, repeatable.
        #[arg(long = "vary", required = true)]
        vary: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override any config key, `a.b=value` with a JSON value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// `imex_split` or `picard`.
    #[arg(long)]
    scheme: Option<String>,
    /// Initial state preset: `two-phase-split` or `random-uniform`.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for random presets.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the manifest as JSON on stdout.
    #[arg(long)]
    json: bool,
}

impl ConfigArgs {
    /// All overrides as `(key, value)`, flags last so they win over `--set`.
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut v: Vec<(String, Value)> = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<_>>()?;
        let scalars = [
            ("tau", self.tau),
            ("t_end", self.t_end),
            ("c", self.c),
            ("delta", self.delta),
        ];
        for (k, x) in scalars {
            if let Some(x) = x {
                v.push((k.into(), json!(x)));
            }
        }
        if let Some(s) = &self.scheme {
            v.push(("scheme".into(), json!(s)));
        }
        match (&self.preset, self.seed) {
            (Some(p), seed) => v.push((
                "u0".into(),
                serde_json::to_value(InitialState::preset(p, seed)?)?,
            )),
            (None, Some(seed)) => v.push(("u0.seed".into(), json!(seed))),
            (None, None) => {}
        }
        Ok(v)
    }

    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config, &self.overrides()?)?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

fn config_error(e: anyhow::Error) -> ExitCode {
    eprintln!("config error: {e:#}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Validate { cfg: args } => {
            let cfg = match args.load() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let m = manifest::validate(&cfg);
            if args.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&m).expect("manifest serializes")
                );
            } else {
                for c in &m.checks {
                    let verdict = if c.passed { "ok  " } else { "FAIL" };
                    let residual = c.residual.map(|r| format!(" [{r:?}]")).unwrap_or_default();
                    println!("{verdict} {}{residual}: {}", c.name, c.detail);
                }
                for (name, gap) in [("gap1", m.gap1), ("gap2", m.gap2)] {
                    if let Some(g) = gap {
                        println!("{name} = {g:?}");
                    }
                }
                if let Some(l) = m.lipschitz_g {
                    println!(
                        "L_G = {:?} (analytic {:?}, L1 {:?})",
                        l.numeric, l.analytic, l.l1
                    );
                }
            }
            if m.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Cmd::Run { cfg: args } => {
            let cfg = match args.load() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run::run(&cfg, &cfg.output) {
                Ok(status) => {
                    for n in &status.notices {
                        eprintln!("notice: {n}");
                    }
                    println!(
                        "{} steps written to {}",
                        status.steps_planned,
                        cfg.output.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Analyze { dir, window, tol } => match analyze::analyze(&dir, window, tol) {
            Ok(a) => {
                for c in &a.audit.checks {
                    let verdict = if c.passed { "ok  " } else { "FAIL" };
                    let step = c
                        .worst_step
                        .map(|s| format!(" at step {s}"))
                        .unwrap_or_default();
                    println!(
                        "{verdict} {}: worst margin {:?}{step}; {}",
                        c.name, c.worst_margin, c.detail
                    );
                }
                let s = &a.asymptotics;
                println!(
                    "steady = {} (max rate {:?}, since step {})",
                    s.report.steady,
                    s.report.max_rate,
                    s.steady_since.map_or("-".into(), |k| k.to_string())
                );
                println!(
                    "predicts_mean_convergence = {}",
                    s.report.predicts_mean_convergence
                );
                if let Some(eq) = &s.report.equilibrium {
                    println!(
                        "equilibrium = {} (residual {:?})",
                        eq.is_equilibrium, eq.residual
                    );
                }
                if a.audit.passed {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Cmd::Sweep {
            cfg: args,
            vary,
            jobs,
        } => {
            let cfg = match args.load() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let axes = match vary
                .iter()
                .map(|s| sweep::parse_axis(s))
                .collect::<Result<Vec<_>>>()
            {
                Ok(a) => a,
                Err(e) => return config_error(e),
            };
            let base: Vec<String> = match args.overrides() {
                Ok(o) => o.into_iter().map(|(k, v)| format!("{k}={v}")).collect(),
                Err(e) => return config_error(e),
            };
            let exe = match std::env::current_exe() {
                Ok(p) => p,
                Err(e) => return config_error(e.into()),
            };
            match sweep::sweep(&exe, &args.config, &base, &axes, &cfg.output, jobs) {
                Ok(runs) => {
                    let failed = runs.iter().filter(|r| r.exit_code != Some(0)).count();
                    println!(
                        "{} runs, {failed} failed; summary in {}",
                        runs.len(),
                        cfg.output.join(sweep::SUMMARY).display()
                    );
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
