use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctdsim::config::demo_config;
use ctdsim::experiment::{self, HarnessError};
use ctdsim::{report, AnonymousId, HealthStatus};

/// Contact tracing simulator.
///
/// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 failed self-check.
#[derive(Debug, Parser)]
#[command(name = "harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (file for registry-dump).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured days, trace, and write logs, registry and figures.
    Simulate(Common),
    /// Label people from an event log and a list of infected ids.
    Trace {
        /// Event-log CSV as written by `simulate`.
        #[arg(long)]
        events: PathBuf,
        /// Comma-separated ids of infected people.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<String>,
        /// Labels CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the configured isolation policies on the second day.
    CaseStudy {
        #[command(flatten)]
        common: Common,
        /// Also repeat the comparison over this many consecutive seeds.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Simulate and write the converged registry snapshot CSV.
    RegistryDump(Common),
    /// Differential check of the tracing engine against the replay oracle.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        max_nodes: usize,
        #[arg(long, default_value_t = 50)]
        max_steps: u32,
        /// Optional JSON summary file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an example config (ten people, two policies).
    ExampleConfig {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("harness: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Simulate(c) => {
            let rep = experiment::run_experiment(&c.config, &c.out, c.seed)?;
            println!(
                "seed {} people {} infected {} at_risk {} -> {}",
                rep.seed,
                rep.people,
                rep.count_with(HealthStatus::Infected),
                rep.count_with(HealthStatus::AtRisk),
                c.out.display()
            );
        }
        Command::Trace { events, seeds, out } => {
            let ids = seeds
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<AnonymousId>()
                        .map_err(|e| HarnessError::Config(format!("--seeds {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let labels = experiment::trace_file(&events, &ids)?;
            let mut buf = Vec::new();
            report::write_labeling(&mut buf, &labels).map_err(|source| HarnessError::Report {
                path: out.clone().unwrap_or_else(|| "-".into()),
                source,
            })?;
            match out {
                Some(path) => fs::write(&path, buf).map_err(io_err(&path))?,
                None => print!("{}", String::from_utf8_lossy(&buf)),
            }
        }
        Command::CaseStudy { common: c, sweep } => {
            let rep = experiment::run_case_study(&c.config, &c.out, c.seed)?;
            println!("day-1 at risk: {:?}", rep.day1_at_risk);
            for p in &rep.policies {
                println!(
                    "{}: isolated {:?}, {} new at risk",
                    p.name,
                    p.quarantined,
                    p.new_at_risk_count()
                );
            }
            if let Some(n) = sweep {
                write_sweep(
                    &c,
                    &rep.policies
                        .iter()
                        .map(|p| p.name.clone())
                        .collect::<Vec<_>>(),
                    rep.seed,
                    n,
                )?;
            }
        }
        Command::RegistryDump(c) => {
            let registry = experiment::registry_dump(&c.config, &c.out, c.seed)?;
            println!(
                "{} entries -> {}",
                registry.entries().count(),
                c.out.display()
            );
        }
        Command::OracleCheck {
            cases,
            seed,
            max_nodes,
            max_steps,
            out,
        } => {
            let summary = experiment::oracle_check(cases, seed, max_nodes, max_steps);
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            if let Some(path) = &out {
                fs::write(path, json + "\n").map_err(io_err(path))?;
            }
            println!("{} cases, {} mismatches", summary.cases, summary.mismatches);
            if let Some(case) = summary.first_mismatch {
                return Err(HarnessError::Invariant(format!(
                    "engine and oracle disagree on case {case} (seed {seed})"
                )));
            }
        }
        Command::ExampleConfig { seed } => print!("{}", demo_config(seed)),
    }
    Ok(())
}

fn write_sweep(c: &Common, names: &[String], first_seed: u64, n: u64) -> Result<(), HarnessError> {
    let text = fs::read_to_string(&c.config).map_err(io_err(&c.config))?;
    let seeds: Vec<u64> = (0..n).map(|k| first_seed.wrapping_add(k)).collect();
    let rows = experiment::case_study_sweep(&text, &seeds)?;

    let path = c.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    let mut header = vec!["seed".to_owned(), "day1_at_risk".to_owned()];
    header.extend(names.iter().cloned());
    let csv_err = |e: csv::Error| HarnessError::Io {
        path: path.clone(),
        source: e.into(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for r in &rows {
        let mut rec = vec![r.seed.to_string(), r.day1_at_risk.to_string()];
        rec.extend(r.new_at_risk.iter().map(ToString::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    for (k, name) in names.iter().enumerate() {
        let mean =
            rows.iter().map(|r| r.new_at_risk[k] as f64).sum::<f64>() / rows.len().max(1) as f64;
        println!(
            "sweep {name}: mean new at risk {mean:.3} over {} seeds",
            rows.len()
        );
    }
    Ok(())
}
