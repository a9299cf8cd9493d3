use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use msgfem_cli::config::{ScenarioConfig, ScenarioKind};
use msgfem_cli::error::Result;
use msgfem_cli::{report, scenario, validate};

#[derive(Parser)]
#[command(name = "msgfem", version, about = "Multiscale spectral GFEM scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single GFEM solve with errors against the references.
    Solve(Common),
    /// Restriction eigenvalues between concentric ellipses.
    Nwidth(Common),
    /// Convergence study over the local degree.
    Study(Common),
    /// Cell problem and ε-sweep of the local eigenvalues.
    Homog(Common),
    /// Invariant suites; exits nonzero on any failure.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, kind: ScenarioKind) -> Result<(ScenarioConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        cfg.expect_kind(kind)?;
        if let Some(w) = self.workers {
            cfg.scenario.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.scenario.seed = s;
        }
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| Path::new("out").join(kind.name()));
        std::fs::create_dir_all(&out)?;
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<bool> {
    let t = Instant::now();
    let (summary, ok, out) = match cli.command {
        Command::Study(c) => {
            let (cfg, out) = c.load(ScenarioKind::ConvergenceStudy)?;
            let r = scenario::convergence_study(&cfg)?;
            report::write_study(&out, &r)?;
            (report::study_summary(&cfg, &r, t.elapsed().as_secs_f64()), !r.failed(), out)
        }
        Command::Solve(c) => {
            let (cfg, out) = c.load(ScenarioKind::Solve)?;
            let s = scenario::solve(&cfg)?;
            report::write_solve(&out, cfg.scenario.seed, &s.row, s.refs.floor)?;
            if let Some(run) = &s.run {
                if cfg.output.solution {
                    report::write_solution(&out, &s.mesh, &run.solution.field)?;
                }
                for &i in &cfg.output.basis {
                    if report::write_basis(&out, run, i)?.is_none() {
                        eprintln!("warning: no patch {i} (cover has {} patches)", run.cover.len());
                    }
                }
            }
            (report::solve_summary(&cfg, &s.row, s.refs.floor, t.elapsed().as_secs_f64()), true, out)
        }
        Command::Nwidth(c) => {
            let (cfg, out) = c.load(ScenarioKind::Nwidth)?;
            let rows = scenario::nwidth(&cfg)?;
            report::write_nwidth(&out, cfg.scenario.seed, &rows)?;
            (report::nwidth_summary(&cfg, &rows, t.elapsed().as_secs_f64()), true, out)
        }
        Command::Homog(c) => {
            let (cfg, out) = c.load(ScenarioKind::HomogSweep)?;
            let r = scenario::homog(&cfg)?;
            report::write_homog(&out, cfg.scenario.seed, &r)?;
            (report::homog_summary(&cfg, &r, t.elapsed().as_secs_f64()), true, out)
        }
        Command::Validate(c) => {
            let (cfg, out) = c.load(ScenarioKind::Validate)?;
            let r = validate::run_all(&cfg)?;
            report::write_validation(&out, cfg.scenario.seed, &r)?;
            (report::validation_summary(&r, t.elapsed().as_secs_f64()), r.passed(), out)
        }
    };
    report::write_summary(&out, &summary)?;
    print!("{summary}");
    println!("wrote {}", out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
