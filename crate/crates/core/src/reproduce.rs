//! End-to-end pipelines that regenerate desk-scale analogues of the
//! shelving, repump, population and PLE measurements.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimators::{
    discrimination_error, fit_line, fit_monoexponential_ensemble, fit_power_law, fit_power_law_fixed_exponent,
    population_surface, FitResult, Histogram, RowStatus,
};
use crate::mechanism::{classify_dark_state, photon_order_table, ChargeState, Transition, BLUE_NM, GREEN_NM};
use crate::output::{jumps_table, spectrum_table, traces_table, Cell, ResultBundle, RunMetadata, Stage, Table, Timing};
use crate::ple::{fit_lorentzian, Spectrum};
use crate::pulse::{build_repump_sequence, build_shelving_sequence, build_three_scan_ple_sequence, PulseSpec};
use crate::rng::{derive_seed, SimSeed};
use crate::trajectory::{emit_photons, simulate_ensemble, simulate_trajectory, Ensemble, EnsembleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigId {
    Fig2,
    Fig3,
    Fig4,
    Fig1Ple,
    Mechanism,
}

impl FigId {
    pub const ALL: [FigId; 5] = [FigId::Fig2, FigId::Fig3, FigId::Fig4, FigId::Fig1Ple, FigId::Mechanism];

    pub fn as_str(self) -> &'static str {
        match self {
            FigId::Fig2 => "fig2",
            FigId::Fig3 => "fig3",
            FigId::Fig4 => "fig4",
            FigId::Fig1Ple => "fig1_ple",
            FigId::Mechanism => "mechanism",
        }
    }
}

impl fmt::Display for FigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown figure id `{s}`; expected one of fig2, fig3, fig4, fig1_ple, mechanism")))
    }
}

// Tags for derive_seed, one per kind of sub-experiment.
const TAG_PLE: u64 = 1;
const TAG_FIG2: u64 = 2;
const TAG_FIG3: u64 = 3;
const TAG_FIG4: u64 = 4;
const TAG_HIST: u64 = 5;
const TAG_SIMULATE: u64 = 6;

/// Collects stages and their wall-clock timings.
struct Recorder {
    stages: Vec<Stage>,
    timings: Vec<Timing>,
    clock: Instant,
}

impl Recorder {
    fn new() -> Self {
        Self { stages: Vec::new(), timings: Vec::new(), clock: Instant::now() }
    }

    fn push(&mut self, stage: Stage) {
        self.timings.push(Timing { stage: stage.name.clone(), seconds: self.clock.elapsed().as_secs_f64() });
        self.clock = Instant::now();
        self.stages.push(stage);
    }

    fn finish(self, pipeline: &str, config: &ExperimentConfig, seed: u64) -> ResultBundle {
        ResultBundle {
            metadata: RunMetadata {
                pipeline: pipeline.to_string(),
                config_hash: config.hash(),
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            stages: self.stages,
            timings: self.timings,
        }
    }
}

fn fit_json(fit: &FitResult) -> serde_json::Value {
    serde_json::to_value(fit).expect("fit results serialize")
}

fn opt_cell(v: Option<f64>) -> Cell {
    v.map_or(Cell::Text(String::new()), Cell::Float)
}

pub fn run_reproduction(fig: FigId, config: &ExperimentConfig, seed: u64) -> Result<ResultBundle> {
    config.validate()?;
    let mut rec = Recorder::new();
    match fig {
        FigId::Fig2 => rate_sweep(&mut rec, config, seed, Protocol::Shelving)?,
        FigId::Fig3 => rate_sweep(&mut rec, config, seed, Protocol::Repump)?,
        FigId::Fig4 => population(&mut rec, config, seed)?,
        FigId::Fig1Ple => three_scan_ple(&mut rec, config, seed)?,
        FigId::Mechanism => mechanism(&mut rec, config)?,
    }
    Ok(rec.finish(fig.as_str(), config, seed))
}

/// Runs `config.sequence` for `config.n_reps` repetitions, keeping trajectories.
pub fn simulate_config(config: &ExperimentConfig, seed: u64) -> Result<Ensemble> {
    config.validate()?;
    let seq = config.sequence.build().map_err(|e| e.in_stage("sequence"))?;
    let line = config.line_shape();
    let spec = EnsembleSpec {
        seq: &seq,
        rates: &config.rates,
        emission: &config.emission,
        line: &line,
        initial: ChargeState::NegOne,
    };
    simulate_ensemble(spec, derive_seed(seed, TAG_SIMULATE, 0), config.n_reps, true).map_err(|e| e.in_stage("simulate"))
}

/// [`simulate_config`] tabulated as photon traces and charge jumps.
pub fn run_simulation(config: &ExperimentConfig, seed: u64) -> Result<ResultBundle> {
    let mut rec = Recorder::new();
    let ens = simulate_config(config, seed)?;
    rec.push(Stage::table("traces", traces_table(&ens.traces)));
    rec.push(Stage::table("jumps", jumps_table(ens.trajectories.as_deref().unwrap_or_default())));
    Ok(rec.finish("simulate", config, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Protocol {
    Shelving,
    Repump,
}

fn window_means(ens: &Ensemble, n_windows: usize) -> (Vec<f64>, Vec<f64>) {
    let n = ens.traces.len() as f64;
    (0..n_windows)
        .map(|k| {
            let counts: Vec<f64> = ens.traces.iter().map(|t| t.windows[k].count as f64).collect();
            let mean = counts.iter().sum::<f64>() / n;
            let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        })
        .unzip()
}

/// Per-power decay (shelving) or recovery (repump) curves, mono-exponential
/// rate fits, and the rate-versus-power fits.
fn rate_sweep(rec: &mut Recorder, config: &ExperimentConfig, seed: u64, protocol: Protocol) -> Result<()> {
    let (powers, durations, n_reps, n_readout, readout, tag, names) = match protocol {
        Protocol::Shelving => {
            let f = &config.fig2;
            (&f.powers_uw, &f.durations_ms, f.n_reps, f.n_readout, f.readout, TAG_FIG2, ["decay_curves", "decay_fits"])
        }
        Protocol::Repump => {
            let f = &config.fig3;
            (&f.powers_uw, &f.durations_ms, f.n_reps, f.n_readout, f.readout, TAG_FIG3, ["recovery_curves", "recovery_fits"])
        }
    };
    let line = config.line_shape();
    let mut curves = Table::new(&["power_uW", "pulse_index", "control_time_s", "mean_count", "sem"]);
    let mut fits = Table::new(&["power_uW", "rate_Hz", "rate_err_Hz", "amplitude", "offset", "converged"]);
    let mut rates = Vec::with_capacity(powers.len());
    let mut errors = Vec::with_capacity(powers.len());
    for (i, (&power, &duration_ms)) in powers.iter().zip(durations).enumerate() {
        let control = PulseSpec::new(power, duration_ms);
        let seq = match protocol {
            Protocol::Shelving => build_shelving_sequence(n_readout, n_readout - 1, readout, control, config.fig2.green_init),
            Protocol::Repump => build_repump_sequence(n_readout, n_readout - 1, readout, control, config.fig3.blue_reset),
        }
        .map_err(|e| e.in_stage("sequence"))?;
        let spec = EnsembleSpec {
            seq: &seq,
            rates: &config.rates,
            emission: &config.emission,
            line: &line,
            initial: ChargeState::NegOne,
        };
        let ens = simulate_ensemble(spec, derive_seed(seed, tag, i as u64), n_reps, false)
            .map_err(|e| e.in_stage("simulate"))?;
        let (mean, sem) = window_means(&ens, n_readout);
        let t: Vec<f64> = (0..n_readout).map(|k| k as f64 * duration_ms * 1e-3).collect();
        for k in 0..n_readout {
            curves.push(vec![power.into(), k.into(), t[k].into(), mean[k].into(), sem[k].into()]);
        }
        let samples: Vec<Vec<f64>> = ens
            .traces
            .iter()
            .map(|tr| tr.windows.iter().map(|w| w.count as f64).collect())
            .collect();
        let fit = fit_monoexponential_ensemble(&t, &samples).map_err(|e| e.in_stage(names[1]))?;
        let (g, ge) = (fit.value("rate"), fit.stderr("rate"));
        if !(g > 0.0) || !(ge > 0.0) || !ge.is_finite() {
            return Err(Error::Fit {
                message: format!("no resolvable rate at {power} uW (rate {g}, stderr {ge})"),
                iterations: fit.iterations,
                residual_norm: fit.residual_norm,
            }
            .in_stage(names[1]));
        }
        fits.push(vec![
            power.into(),
            g.into(),
            ge.into(),
            fit.value("amplitude").into(),
            fit.value("offset").into(),
            fit.converged.into(),
        ]);
        rates.push(g);
        errors.push(ge);
    }
    rec.push(Stage::table(names[0], curves));
    rec.push(Stage::table(names[1], fits));

    let power_law = fit_power_law(powers, &rates, Some(&errors)).map_err(|e| e.in_stage("rate_vs_power"))?;
    let summary = match protocol {
        Protocol::Shelving => {
            let linear = fit_line(powers, &rates, Some(&errors)).map_err(|e| e.in_stage("rate_vs_power"))?;
            json!({
                "injected": {
                    "k_shelve": config.rates.k_shelve,
                    "shelve_exponent": config.rates.shelve_exponent,
                },
                "slope_Hz_per_uW": linear.value("slope"),
                "slope_err_Hz_per_uW": linear.stderr("slope"),
                "exponent": power_law.value("exponent"),
                "exponent_err": power_law.stderr("exponent"),
                "linear_fit": fit_json(&linear),
                "power_law_fit": fit_json(&power_law),
            })
        }
        Protocol::Repump => {
            // Recovery relaxes at (1 + ρ)·k·P^n.
            let scale = 1.0 + config.rates.leak_ratio;
            let fixed = fit_power_law_fixed_exponent(powers, &rates, Some(&errors), config.rates.repump_exponent)
                .map_err(|e| e.in_stage("rate_vs_power"))?;
            json!({
                "injected": {
                    "k_repump": config.rates.k_repump,
                    "repump_exponent": config.rates.repump_exponent,
                    "leak_ratio": config.rates.leak_ratio,
                },
                "exponent": power_law.value("exponent"),
                "exponent_err": power_law.stderr("exponent"),
                "k_repump_estimate": fixed.value("coefficient") / scale,
                "k_repump_estimate_err": fixed.stderr("coefficient") / scale,
                "power_law_fit": fit_json(&power_law),
                "fixed_exponent_fit": fit_json(&fixed),
            })
        }
    };
    rec.push(Stage::record("rate_vs_power", summary));
    Ok(())
}

/// Readout counts after `blue reset → [green(power, d)] → readout`.
fn population_counts(config: &ExperimentConfig, green: PulseSpec, seed: u64) -> Result<Vec<u64>> {
    let f = &config.fig4;
    let seq = if green.duration_ms == 0.0 {
        build_repump_sequence(1, 0, f.readout, PulseSpec::new(green.power, 1.0), f.blue_reset)
    } else {
        build_repump_sequence(2, 1, f.readout, green, f.blue_reset)
    }
    .map_err(|e| e.in_stage("sequence"))?;
    let line = config.line_shape();
    let spec = EnsembleSpec {
        seq: &seq,
        rates: &config.rates,
        emission: &config.emission,
        line: &line,
        initial: ChargeState::NegOne,
    };
    let ens = simulate_ensemble(spec, seed, f.n_windows, false).map_err(|e| e.in_stage("simulate"))?;
    Ok(ens
        .traces
        .iter()
        .map(|t| t.windows.last().map_or(0, |w| w.count))
        .collect())
}

fn histogram_table(h: &Histogram) -> Table {
    let mut t = Table::new(&["count", "frequency"]);
    for (c, f) in h.frequencies.iter().enumerate() {
        t.push(vec![c.into(), (*f).into()]);
    }
    t
}

fn population(rec: &mut Recorder, config: &ExperimentConfig, seed: u64) -> Result<()> {
    let f = &config.fig4;
    let n_d = f.durations_ms.len();
    let mut counts = Vec::with_capacity(f.powers_uw.len());
    for (i, &power) in f.powers_uw.iter().enumerate() {
        let row = f
            .durations_ms
            .iter()
            .enumerate()
            .map(|(j, &d)| population_counts(config, PulseSpec::new(power, d), derive_seed(seed, TAG_FIG4, (i * n_d + j) as u64)))
            .collect::<Result<Vec<_>>>()?;
        counts.push(row);
    }
    let surface = population_surface(&f.powers_uw, &f.durations_ms, &counts, f.threshold)
        .map_err(|e| e.in_stage("population_surface"))?;

    let mut cells = Table::new(&["power_uW", "green_ms", "n", "bright", "fraction", "ci_lo", "ci_hi"]);
    for (i, &power) in surface.powers.iter().enumerate() {
        for (j, &d) in surface.durations_ms.iter().enumerate() {
            let e = &surface.cells[i][j];
            cells.push(vec![power.into(), d.into(), e.n.into(), e.bright.into(), e.fraction.into(), e.lo.into(), e.hi.into()]);
        }
    }
    rec.push(Stage::table("population_cells", cells));

    let mut rows = Table::new(&["power_uW", "status", "under_sampled", "p_inf", "p_inf_err", "rate_Hz", "rate_err_Hz"]);
    for r in &surface.rows {
        let status = serde_json::to_value(r.status).expect("status serializes");
        let fit = r.fit.as_ref();
        rows.push(vec![
            r.power.into(),
            status.as_str().unwrap_or_default().into(),
            r.under_sampled.into(),
            opt_cell(fit.map(|f| f.value("p_inf"))),
            opt_cell(fit.map(|f| f.stderr("p_inf"))),
            opt_cell(fit.map(|f| f.value("rate"))),
            opt_cell(fit.map(|f| f.stderr("rate"))),
        ]);
    }
    rec.push(Stage::table("saturation_fits", rows));

    let bright = Histogram::from_counts(population_counts(config, f.histogram, derive_seed(seed, TAG_HIST, 0))?);
    let dark = Histogram::from_counts(population_counts(
        config,
        PulseSpec::new(f.histogram.power, 0.0),
        derive_seed(seed, TAG_HIST, 1),
    )?);
    rec.push(Stage::table("histogram_bright", histogram_table(&bright)));
    rec.push(Stage::table("histogram_dark", histogram_table(&dark)));

    let readout_ms = f.readout.duration_ms;
    let bright_mean = (config.emission.bright_rate + config.emission.background_rate) * readout_ms;
    let dark_mean = config.emission.background_rate * readout_ms;
    let (false_dark, false_bright) =
        discrimination_error(bright_mean, dark_mean, f.threshold).map_err(|e| e.in_stage("summary"))?;
    let zero_cols: Vec<usize> = (0..n_d).filter(|&j| f.durations_ms[j] == 0.0).collect();
    let (zero_n, zero_bright) = surface.cells.iter().fold((0u64, 0u64), |acc, row| {
        zero_cols.iter().fold(acc, |(n, b), &j| (n + row[j].n, b + row[j].bright))
    });
    let ok_rows = surface.rows.iter().filter(|r| r.status == RowStatus::Ok).count();
    let summary = json!({
        "threshold": f.threshold,
        "max_p_inf": surface.max_p_inf,
        "max_p_inf_power_uW": surface.max_p_inf_power,
        "saturated_rows": ok_rows,
        "steady_state_bright": 1.0 / (1.0 + config.rates.leak_ratio),
        "zero_green": {
            "n": zero_n,
            "bright": zero_bright,
            "fraction": if zero_n > 0 { Some(zero_bright as f64 / zero_n as f64) } else { None },
        },
        "analytic_false_bright": false_bright,
        "analytic_false_dark": false_dark,
        "histogram_bright": {
            "power_uW": f.histogram.power,
            "green_ms": f.histogram.duration_ms,
            "upper_mode": bright.mode_above(f.threshold + 1),
            "fraction_above_threshold": bright.fraction_above(f.threshold),
        },
        "histogram_dark": {
            "fraction_above_threshold": dark.fraction_above(f.threshold),
        },
    });
    rec.push(Stage::record("summary", summary));
    Ok(())
}

fn three_scan_ple(rec: &mut Recorder, config: &ExperimentConfig, seed: u64) -> Result<()> {
    let scan = config.scan.spec();
    let grid = scan.grid().map_err(|e| e.in_stage("sequence"))?;
    let seq = build_three_scan_ple_sequence(scan, config.scan.blue, config.scan.green, config.scan.gate_detuning_ghz)
        .map_err(|e| e.in_stage("sequence"))?;
    let sim_seed = SimSeed::new(derive_seed(seed, TAG_PLE, 0), 0);
    let traj = simulate_trajectory(&seq, &config.rates, sim_seed, ChargeState::NegOne)
        .map_err(|e| e.in_stage("simulate"))?;
    let trace = emit_photons(&traj, &seq, &config.emission, &config.line_shape(), sim_seed);

    let mut fits = Vec::with_capacity(3);
    let mut decisions = Vec::with_capacity(3);
    let mut widths = Vec::with_capacity(3);
    for (k, chunk) in trace.windows.chunks(grid.len()).enumerate() {
        let spectrum = Spectrum {
            detuning_ghz: grid.clone(),
            counts: chunk.iter().map(|w| w.count as f64).collect(),
            dwell_ms: scan.dwell_ms,
        };
        rec.push(Stage::table(&format!("spectrum_scan{}", k + 1), spectrum_table(&spectrum)));
        let (present, record) = match fit_lorentzian(&spectrum) {
            Ok(fit) => {
                widths.push(fit.peak_present.then_some(fit.line.fwhm_mhz));
                (fit.peak_present, fit.to_json())
            }
            Err(e @ Error::Fit { .. }) => {
                widths.push(None);
                (false, json!({ "peak_present": false, "error": e.to_string() }))
            }
            Err(e) => return Err(e.in_stage("ple_fits")),
        };
        decisions.push(if present { "present" } else { "absent" });
        fits.push(json!({ "scan": k + 1, "fit": record }));
    }
    rec.push(Stage::record("ple_fits", json!(fits)));
    rec.push(Stage::record(
        "summary",
        json!({
            "decisions": decisions,
            "fwhm_MHz": widths,
            "injected_fwhm_MHz": config.line.fwhm_mhz,
            "expected_peak_counts_per_dwell": config.emission.bright_rate * scan.dwell_ms,
            "final_state": traj.final_state().label(),
        }),
    ));
    Ok(())
}

fn mechanism(rec: &mut Recorder, config: &ExperimentConfig) -> Result<()> {
    let m = &config.mechanism;
    let rows = photon_order_table(&m.thresholds, m.max_order).map_err(|e| e.in_stage("mechanism"))?;
    let mut table = Table::new(&["transition", "threshold_eV", "wavelength_nm", "photon_eV", "order"]);
    for r in &rows {
        table.push(vec![
            r.transition.label().into(),
            r.threshold_ev.into(),
            r.wavelength_nm.into(),
            r.photon_ev.into(),
            r.order.to_string().into(),
        ]);
    }
    rec.push(Stage::table("photon_orders", table));
    let order_of = |t: Transition, wl: f64| {
        rows.iter()
            .find(|r| r.transition == t && r.wavelength_nm == wl)
            .map(|r| r.order)
            .expect("table covers every transition and wavelength")
    };
    let shelve = order_of(Transition::NegToNeutral, BLUE_NM);
    let repump = order_of(Transition::NeutralToNeg, GREEN_NM);
    let hypothesis = classify_dark_state(shelve, repump).map_err(|e| e.in_stage("mechanism"))?;
    rec.push(Stage::record(
        "dark_state",
        json!({
            "shelve_order_blue": shelve.to_string(),
            "repump_order_green": repump.to_string(),
            "hypothesis": format!("{hypothesis:?}"),
        }),
    ));
    Ok(())
}
