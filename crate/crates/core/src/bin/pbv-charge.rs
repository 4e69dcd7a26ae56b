use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pbv_charge::config::{load_config, ExperimentConfig, OutputFormat, MAX_SEED};
use pbv_charge::estimators::{
    estimate_population, fit_monoexponential, fit_power_law, fit_power_law_fixed_exponent, fit_power_law_nonlinear,
    histogram_counts, DecayWeighting, WindowFilter,
};
use pbv_charge::output::{
    read_decay_csv, read_power_csv, read_spectrum_csv, read_traces_csv, write_results, Cell, ResultBundle, RunMetadata,
    Stage, Table,
};
use pbv_charge::ple::fit_lorentzian;
use pbv_charge::reproduce::{run_reproduction, run_simulation, FigId};
use pbv_charge::{Error, Result};

#[derive(Parser)]
#[command(name = "pbv-charge", version, about = "Charge-state cycle simulator and rate estimators")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads for ensemble simulation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    Unweighted,
    Poisson,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig2,
    Fig3,
    Fig4,
    #[value(name = "fig1_ple")]
    Fig1Ple,
    Mechanism,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured pulse sequence and write traces and jumps.
    Simulate,
    /// Fit `y = A·exp(−Γt) + C` to a `t_s,signal` CSV.
    FitDecay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "unweighted")]
        weighting: Weighting,
    },
    /// Fit `Γ = c·P^n` to a `power_uW,rate_Hz[,rate_err_Hz]` CSV.
    FitPower {
        #[arg(long)]
        input: PathBuf,
        /// Fit only the coefficient with this exponent held fixed.
        #[arg(long, conflicts_with = "nonlinear")]
        fixed_exponent: Option<f64>,
        /// Direct nonlinear fit instead of log-log regression.
        #[arg(long)]
        nonlinear: bool,
    },
    /// Fit a Lorentzian to a `detuning_GHz,counts` CSV.
    Ple {
        #[arg(long)]
        input: PathBuf,
        /// Dwell per point; defaults to `scan.dwell_ms`.
        #[arg(long)]
        dwell_ms: Option<f64>,
    },
    /// Count histogram of a traces CSV.
    Histogram {
        #[arg(long)]
        input: PathBuf,
        /// Only this readout window of each trace.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Thresholded bright fraction per readout window of a traces CSV.
    Population {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `fig4.threshold`.
        #[arg(long)]
        threshold: Option<u64>,
    },
    /// Minimum photon orders for each charge transition.
    Mechanism,
    /// Regenerate one of the reference measurements.
    Reproduce {
        #[arg(value_enum)]
        fig: Figure,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error kind=usage code=2: {msg}: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={}: {msg}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut config = match &g.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = g.seed.unwrap_or(config.seed);
    if let Some(out) = g.out {
        config.output.dir = out.display().to_string();
    }
    if let Some(f) = g.format {
        config.output.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config { path: "--jobs".into(), message: e.to_string() })?;
    let bundle = pool.install(|| execute(cli.command, &config, seed))?;
    let dir = Path::new(&config.output.dir);
    let manifest = write_results(&bundle, config.output.format, dir)?;
    for f in &manifest.files {
        println!("{}  {}", f.sha256, dir.join(&f.file).display());
    }
    Ok(())
}

fn bundle(pipeline: &str, config: &ExperimentConfig, seed: u64, stages: Vec<Stage>) -> ResultBundle {
    ResultBundle {
        metadata: RunMetadata {
            pipeline: pipeline.into(),
            config_hash: config.hash(),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
        },
        stages,
        timings: Vec::new(),
    }
}

fn input_record(path: &Path) -> serde_json::Value {
    json!(path.display().to_string())
}

fn execute(command: Command, config: &ExperimentConfig, seed: u64) -> Result<ResultBundle> {
    match command {
        Command::Simulate => run_simulation(config, seed),
        Command::Reproduce { fig } => {
            let id = match fig {
                Figure::Fig2 => FigId::Fig2,
                Figure::Fig3 => FigId::Fig3,
                Figure::Fig4 => FigId::Fig4,
                Figure::Fig1Ple => FigId::Fig1Ple,
                Figure::Mechanism => FigId::Mechanism,
            };
            run_reproduction(id, config, seed)
        }
        Command::Mechanism => run_reproduction(FigId::Mechanism, config, seed),
        Command::FitDecay { input, weighting } => {
            let (t, y) = read_decay_csv(&input)?;
            let w = match weighting {
                Weighting::Unweighted => DecayWeighting::Unweighted,
                Weighting::Poisson => DecayWeighting::Poisson,
            };
            let fit = fit_monoexponential(&t, &y, w).map_err(|e| e.in_stage("decay_fit"))?;
            let value = json!({ "input": input_record(&input), "fit": fit });
            Ok(bundle("fit-decay", config, seed, vec![Stage::record("decay_fit", value)]))
        }
        Command::FitPower { input, fixed_exponent, nonlinear } => {
            let (p, g, err) = read_power_csv(&input)?;
            let fit = match (fixed_exponent, nonlinear) {
                (Some(n), _) => fit_power_law_fixed_exponent(&p, &g, err.as_deref(), n),
                (None, true) => fit_power_law_nonlinear(&p, &g, err.as_deref()),
                (None, false) => fit_power_law(&p, &g, err.as_deref()),
            }
            .map_err(|e| e.in_stage("power_fit"))?;
            let value = json!({ "input": input_record(&input), "fit": fit });
            Ok(bundle("fit-power", config, seed, vec![Stage::record("power_fit", value)]))
        }
        Command::Ple { input, dwell_ms } => {
            let spectrum = read_spectrum_csv(&input, dwell_ms.unwrap_or(config.scan.dwell_ms))?;
            let fit = fit_lorentzian(&spectrum).map_err(|e| e.in_stage("lorentz_fit"))?;
            let value = json!({ "input": input_record(&input), "fit": fit.to_json() });
            Ok(bundle("ple", config, seed, vec![Stage::record("lorentz_fit", value)]))
        }
        Command::Histogram { input, window } => {
            let traces = read_traces_csv(&input)?;
            let filter = window.map_or(WindowFilter::All, WindowFilter::Index);
            let h = histogram_counts(&traces, filter);
            let mut table = Table::new(&["count", "frequency"]);
            for (c, f) in h.frequencies.iter().enumerate() {
                table.push(vec![c.into(), (*f).into()]);
            }
            Ok(bundle("histogram", config, seed, vec![Stage::table("histogram", table)]))
        }
        Command::Population { input, threshold } => {
            let traces = read_traces_csv(&input)?;
            let threshold = threshold.unwrap_or(config.fig4.threshold);
            let n_windows = traces.iter().map(|t| t.windows.len()).max().unwrap_or(0);
            let mut table = Table::new(&["window_index", "n", "bright", "fraction", "ci_lo", "ci_hi"]);
            for k in 0..n_windows {
                let counts: Vec<u64> = traces.iter().filter_map(|t| t.windows.get(k)).map(|w| w.count).collect();
                let e = estimate_population(&counts, threshold).map_err(|e| e.in_stage("population"))?;
                let row: Vec<Cell> =
                    vec![k.into(), e.n.into(), e.bright.into(), e.fraction.into(), e.lo.into(), e.hi.into()];
                table.push(row);
            }
            Ok(bundle("population", config, seed, vec![Stage::table("population", table)]))
        }
    }
}
