use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dirac_alleles::config::{parse_entries, RunConfig};
use dirac_alleles::harness::{self, HarnessError};
use dirac_alleles::presets::PRESETS;

#[derive(Parser)]
#[command(name = "dirac-alleles", version, about = "Two-locus selection-competition simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the density equation with diagnostics and the canonical ODE.
    Run(RunArgs),
    /// Seeded sweep of density and canonical runs from random starts.
    Sweep(RunArgs),
    /// Evaluate H1-H4 on the initial state and print the report.
    Check(RunArgs),
    /// List available presets.
    Presets,
}

#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Selection function, e.g. "(x+y)^2".
    #[arg(long, allow_hyphen_values = true)]
    m: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// NX[,NY]
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    tmax: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// x0,y0[:w];x1,y1[:w]
    #[arg(long, allow_hyphen_values = true)]
    ic: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    /// Extra `key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, HarnessError> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                o.push((k.into(), v.clone()));
            }
        };
        push("preset", &self.preset);
        push("m", &self.m);
        push("epsilon", &self.epsilon);
        push("t_max", &self.tmax);
        push("mode", &self.mode);
        push("ic", &self.ic);
        push("seed", &self.seed);
        push("jobs", &self.jobs);
        if let Some(g) = &self.grid {
            let (nx, ny) = g.split_once(',').unwrap_or((g, g));
            o.push(("nx".into(), nx.trim().into()));
            o.push(("ny".into(), ny.trim().into()));
        }
        if let Some(out) = &self.out {
            o.push(("out".into(), out.display().to_string()));
        }
        for kv in &self.set {
            o.extend(parse_entries(kv)?);
        }
        Ok(o)
    }

    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
                parse_entries(&text)?
            }
            None => Vec::new(),
        };
        Ok(RunConfig::resolve(&file, &self.overrides()?)?)
    }
}

// Ignores write errors so a closed pipe (e.g. `| head`) is not a panic.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn execute(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Run(a) => {
            let cfg = a.resolve()?;
            let out = harness::run_single(&cfg)?;
            if !out.hypotheses.passed("H1") {
                eprintln!("warning: H1 fails (4 sup|m| >= r); proceeding");
            }
            let (x, y) = out.final_argmax();
            say!("t = {} rho = {} argmax = ({x}, {y})", out.final_state.t, out.final_state.rho());
            say!("wrote {}", out.dir.display());
        }
        Cmd::Sweep(a) => {
            let cfg = a.resolve()?;
            let out = harness::run_sweep(&cfg)?;
            say!("{} pairs, wrote {}", out.pairs.len(), out.dir.display());
        }
        Cmd::Check(a) => {
            let cfg = a.resolve()?;
            let _ = write!(std::io::stdout(), "{}", harness::check_hypotheses(&cfg)?.to_text());
        }
        Cmd::Presets => {
            for (name, desc) in PRESETS {
                say!("{name:<18} {desc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
