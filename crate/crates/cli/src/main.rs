use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use npcac_cli::config::ConfigDocument;
use npcac_cli::output::write_atomic;
use npcac_cli::selftest::{self, Subjects};
use npcac_cli::{compare, preset_document, run_document, CliError};
use npcac_core::plant::PRESET_NAMES;

#[derive(Parser)]
#[command(name = "npcac", version, about = "Adaptive nonlinear predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its step table, summary and G_1 grid.
    #[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
    Run {
        #[arg(long)]
        preset: Option<String>,
        /// TOML document, JSON document, or a previous run's summary.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Step whose estimate is tabulated on the G_1 grid.
        #[arg(long)]
        snapshot_step: Option<i64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Median windowed errors of several presets over several seeds.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        presets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the built-in invariant and oracle suite.
    Selftest {
        /// Run a single named property.
        #[arg(long)]
        only: Option<String>,
    },
    /// List the built-in presets.
    Presets,
    /// Print a preset as an editable TOML document.
    ShowConfig {
        #[arg(long)]
        preset: String,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run {
            preset,
            config,
            seed,
            steps,
            out_dir,
            snapshot_step,
            quiet,
        } => {
            let mut doc = match (preset, config) {
                (Some(name), _) => preset_document(&name)?,
                (None, Some(path)) => ConfigDocument::load(&path)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            if let Some(seed) = seed {
                doc.sim.seed = seed;
            }
            if let Some(steps) = steps {
                doc.sim.steps = steps;
            }
            if let Some(step) = snapshot_step {
                doc.output.g_grid.step = step;
            }
            let outcome = run_document(&doc, &out_dir)?;
            if !quiet {
                let s = &outcome.summary;
                println!("{} seed {}: {} ({} steps, {:.3} s)", s.name, s.seed, s.status, s.steps_completed, s.wall_clock_seconds);
                for w in &s.windows {
                    println!(
                        "  steps {:>4}..={:<4} mean|e_c| = {:.6e}  mean|e_p| = {:.6e}",
                        w.first, w.last, w.mean_abs_e_c, w.mean_abs_e_p
                    );
                }
                let a = &outcome.artifacts;
                for path in [&a.steps, &a.summary, &a.grid, &a.theta].into_iter().flatten() {
                    println!("  wrote {}", path.display());
                }
            }
            if let Some(err) = &outcome.summary.error {
                return Err(CliError::Runtime(err.clone()));
            }
            Ok(0)
        }
        Command::Compare {
            presets,
            seeds,
            steps,
            json,
        } => {
            let table = compare(&presets, &seeds, steps)?;
            print!("{}", table.render());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&table).expect("comparisons always serialize");
                write_atomic(&path, text.as_bytes())?;
            }
            Ok(0)
        }
        Command::Selftest { only } => {
            let subjects = Subjects::default();
            let outcomes = match only {
                Some(name) => {
                    let p = selftest::find(&name).ok_or_else(|| CliError::Config(format!("unknown property `{name}`")))?;
                    vec![selftest::run_one(p, &subjects)]
                }
                None => selftest::run(&subjects),
            };
            let mut failed = 0;
            for o in &outcomes {
                match &o.result {
                    Ok(()) => println!("PASS {:<28} {:>8.3} s", o.name, o.elapsed.as_secs_f64()),
                    Err(msg) => {
                        failed += 1;
                        println!("FAIL {:<28} {:>8.3} s  {msg}", o.name, o.elapsed.as_secs_f64());
                    }
                }
            }
            println!("{} of {} properties passed", outcomes.len() - failed, outcomes.len());
            Ok(if failed == 0 { 0 } else { 3 })
        }
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(0)
        }
        Command::ShowConfig { preset } => {
            print!("{}", preset_document(&preset)?.to_toml());
            Ok(0)
        }
    }
}
