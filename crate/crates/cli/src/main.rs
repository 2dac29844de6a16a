//! `zdsc`: batch harness for zero-delay source-channel mapping
//! experiments. Exit codes: 0 success, 2 config error, 3 violated
//! numerical assertion.

mod config;
mod experiment;
mod mc;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ConfigError;
use experiment::{snr_db, AssertionError};

#[derive(Parser)]
#[command(name = "zdsc", about = "Zero-delay source-channel mapping optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifact files.
    Run {
        /// Path to a key = value config file.
        config: PathBuf,
        /// Override any config key, e.g. --set rng_seed=7 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Run an experiment and Monte-Carlo-validate every final mapping.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Continuous-model sample count (>= 10000).
        #[arg(long)]
        samples: Option<usize>,
        /// Sampling seed (defaults to the config's rng_seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List preset configs, or print one by name.
    Presets {
        /// Preset name to print (omit to list all).
        name: Option<String>,
        /// Write the preset(s) to this directory instead of stdout.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else if err.downcast_ref::<AssertionError>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, sets } => {
            let runs = experiment::run_experiment(&config, &sets)?;
            for run in &runs {
                for r in &run.results {
                    println!(
                        "{}{}: D = {}, SNR = {:.3} dB",
                        r.method,
                        run.sweep_value
                            .map(|v| format!(" (sweep {v})"))
                            .unwrap_or_default(),
                        r.distortion,
                        snr_db(runs[0].instance.cfg.setting, r.distortion),
                    );
                }
            }
            Ok(())
        }
        Command::Validate { config, sets, samples, seed } => {
            let cfg = config::load(&config, &sets)?;
            let runs = experiment::run_all(&cfg)?;
            experiment::write_artifacts(&cfg, &runs)?;
            let samples = samples.unwrap_or(cfg.mc_samples);
            let mut csv = String::from(
                "sweep,method,distortion_grid,distortion_mc,stderr,delta_db,ok\n",
            );
            let mut failures = Vec::new();
            for run in &runs {
                for r in &run.results {
                    let Some(decoders) = &r.decoders else { continue };
                    let est = mc::monte_carlo_validate(
                        &run.instance.cfg,
                        &run.eval_x_grids,
                        &r.values,
                        decoders,
                        samples,
                        seed.unwrap_or(cfg.rng_seed),
                    )?;
                    let delta_db = (10.0 * (est.mean / r.distortion).log10()).abs();
                    let ok = (est.mean - r.distortion).abs() <= 3.0 * est.stderr
                        || delta_db <= 0.2;
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        run.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
                        r.method,
                        r.distortion,
                        est.mean,
                        est.stderr,
                        delta_db,
                        ok,
                    );
                    println!(
                        "{}: grid D = {}, mc D = {} ± {} ({})",
                        r.method,
                        r.distortion,
                        est.mean,
                        est.stderr,
                        if ok { "ok" } else { "MISMATCH" },
                    );
                    if !ok {
                        failures.push(r.method.clone());
                    }
                }
            }
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("validation.csv"), csv)?;
            if failures.is_empty() {
                Ok(())
            } else {
                Err(AssertionError(format!(
                    "Monte-Carlo distortion disagrees with grid distortion for: {}",
                    failures.join(", ")
                ))
                .into())
            }
        }
        Command::Presets { name, dir } => {
            match (name, dir) {
                (None, None) => {
                    for (n, _) in config::PRESETS {
                        println!("{n}");
                    }
                }
                (Some(n), None) => {
                    let text = config::preset(&n)
                        .ok_or_else(|| ConfigError(format!("unknown preset: {n}")))?;
                    print!("{text}");
                }
                (name, Some(dir)) => {
                    std::fs::create_dir_all(&dir)?;
                    for (n, text) in config::PRESETS {
                        if name.as_deref().map_or(true, |want| want == *n) {
                            std::fs::write(dir.join(format!("{n}.conf")), text)?;
                        }
                    }
                }
            }
            Ok(())
        }
    }
}
