use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lppm::geo::{Grid, Region};
use lppm::harness::config::ConfigOverrides;
use lppm::harness::curves::DEFAULT_POINTS;
use lppm::harness::synthetic::{
    ring_route_chain, shifted_hotspots, HotspotSpec, synthesize, Mobility, SynthModel, SynthSpec,
};
use lppm::harness::{
    interpolate_curves, load_store, read_rows, run_on_store, write_rows, ExperimentConfig,
};
use lppm::metrics::Window;
use lppm::oracle::run_suites;

#[derive(Parser)]
#[command(name = "lppm", version, about = "Location-privacy mechanisms and their evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw dataset, quantize it and write a trace store.
    Ingest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and write one CSV row per (user, param, repetition, window).
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interpolate result rows onto a quality-loss grid.
    Curves {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long, default_value = "all")]
        window: Window,
        #[arg(long, default_value_t = 0.0)]
        q_min: f64,
        #[arg(long, default_value_t = 4.0)]
        q_max: f64,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a trace store from a model file or a built-in preset.
    Synth {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Also write the model used to this file.
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        users: usize,
        #[arg(long, default_value_t = 1)]
        test_traces: usize,
        #[arg(long, default_value_t = 300)]
        test_length: usize,
        #[arg(long, default_value_t = 300)]
        scarce_length: usize,
        #[arg(long, default_value_t = 3000)]
        rich_length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the brute-force property suites on random tiny instances.
    Oracle {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Training and test profiles with different hotspots on the default grid.
    ShiftedHotspots,
    /// A chain circling a fixed route on the default grid.
    RingRoute,
}

fn preset_model(preset: Preset, seed: u64) -> lppm::Result<SynthModel> {
    let region = Region::san_francisco();
    Ok(match preset {
        Preset::ShiftedHotspots => {
            let d = Grid::new(region)?.distance_matrix();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = shifted_hotspots(&d, &HotspotSpec::default(), 0.3, &mut rng)?;
            SynthModel {
                region,
                test: Mobility::Iid { profile: b },
                train: Some(Mobility::Iid { profile: a }),
            }
        }
        Preset::RingRoute => SynthModel {
            region,
            test: Mobility::Markov {
                model: ring_route_chain(&region, 2, 0.5, 0.4)?,
            },
            train: None,
        },
    })
}

fn load_config(path: Option<PathBuf>, overrides: ConfigOverrides) -> lppm::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&PathBuf>) -> lppm::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| lppm::Error::Io {
                path: p.clone(),
                source: e,
            })?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> lppm::Result<bool> {
    match cli.command {
        Command::Ingest { config, overrides, out } => {
            let cfg = load_config(config, overrides)?;
            let store = load_store(&cfg)?;
            store.save(&out)?;
            log::info!("wrote {} users to {}", store.users.len(), out.display());
        }
        Command::Run { config, overrides, out } => {
            let cfg = load_config(config, overrides)?;
            let store = load_store(&cfg)?;
            let rows = run_on_store(&cfg, &store)?;
            write_rows(&rows, output(out.as_ref())?)?;
        }
        Command::Curves {
            rows,
            window,
            q_min,
            q_max,
            points,
            out,
        } => {
            let rows = read_rows(&rows)?;
            let curve = interpolate_curves(&rows, window, q_min, q_max, points)?;
            curve.write_csv(output(out.as_ref())?)?;
        }
        Command::Synth {
            model,
            preset,
            save_model,
            users,
            test_traces,
            test_length,
            scarce_length,
            rich_length,
            seed,
            out,
        } => {
            let model = match (model, preset) {
                (Some(p), _) => SynthModel::load(&p)?,
                (None, Some(preset)) => preset_model(preset, seed)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            if let Some(p) = save_model {
                model.save(&p)?;
            }
            let spec = SynthSpec {
                users,
                test_traces,
                test_length,
                scarce_length,
                rich_length,
                seed,
            };
            synthesize(&model, &spec)?.save(&out)?;
        }
        Command::Oracle { cases, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reports = run_suites(cases, &mut rng)?;
            for r in &reports {
                println!(
                    "{} {}: {} cases, {} failures, worst violation {:.3e}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.cases,
                    r.failures,
                    r.worst_violation
                );
            }
            return Ok(reports.iter().all(|r| r.passed()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
