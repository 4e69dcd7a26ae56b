//! Experiment configuration documents (TOML).
//!
//! Every section except `rates` is optional and falls back to the defaults
//! below. `rates.k_repump` has no default and must always be given. Unknown
//! keys are rejected, and all errors name the offending key path.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mechanism::{TransitionThresholds, DEFAULT_MAX_ORDER};
use crate::ple::LineShape;
use crate::pulse::{PulseSpec, ScanSpec, SequenceSpec, DEFAULT_GATE_DETUNING_GHZ};
use crate::rate_model::RateParams;
use crate::trajectory::EmissionParams;

/// Largest seed a config document can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// Repump coefficient (Hz/μW²) used by the built-in configuration.
pub const DEFAULT_K_REPUMP: f64 = 0.05;

fn default_seed() -> u64 {
    1
}

fn default_n_reps() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Repetitions for the `simulate` command.
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    pub rates: RateParams,
    #[serde(default)]
    pub emission: EmissionParams,
    #[serde(default)]
    pub line: LineConfig,
    #[serde(default)]
    pub sequence: SequenceSpec,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub fig2: ShelvingSweep,
    #[serde(default)]
    pub fig3: RepumpSweep,
    #[serde(default)]
    pub fig4: PopulationGrid,
    #[serde(default)]
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            n_reps: default_n_reps(),
            rates: RateParams::new(DEFAULT_K_REPUMP),
            emission: EmissionParams::default(),
            line: LineConfig::default(),
            sequence: SequenceSpec::default(),
            scan: ScanConfig::default(),
            fig2: ShelvingSweep::default(),
            fig3: RepumpSweep::default(),
            fig4: PopulationGrid::default(),
            mechanism: MechanismConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Position and width of the resonant line; its height comes from `emission`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineConfig {
    pub center_ghz: f64,
    pub fwhm_mhz: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        Self { center_ghz: 0.0, fwhm_mhz: 38.0 }
    }
}

/// Three-scan PLE protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub step_ghz: f64,
    pub dwell_ms: f64,
    pub power_nw: f64,
    pub gate_detuning_ghz: f64,
    pub blue: PulseSpec,
    pub green: PulseSpec,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let s = ScanSpec::default();
        Self {
            start_ghz: s.start_ghz,
            stop_ghz: s.stop_ghz,
            step_ghz: s.step_ghz,
            dwell_ms: s.dwell_ms,
            power_nw: s.power_nw,
            gate_detuning_ghz: DEFAULT_GATE_DETUNING_GHZ,
            blue: PulseSpec::new(28.5, 20.0),
            green: PulseSpec::new(100.0, 20.0),
        }
    }
}

impl ScanConfig {
    pub fn spec(&self) -> ScanSpec {
        ScanSpec {
            start_ghz: self.start_ghz,
            stop_ghz: self.stop_ghz,
            step_ghz: self.step_ghz,
            dwell_ms: self.dwell_ms,
            power_nw: self.power_nw,
        }
    }
}

/// Blue-power sweep of the shelving protocol. `durations_ms[i]` is the
/// per-pulse blue duration at `powers_uw[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShelvingSweep {
    pub powers_uw: Vec<f64>,
    pub durations_ms: Vec<f64>,
    pub n_reps: usize,
    pub n_readout: usize,
    pub readout: PulseSpec,
    pub green_init: PulseSpec,
}

impl Default for ShelvingSweep {
    fn default() -> Self {
        // About 0.2 expected shelving events per pulse at k_shelve = 32.
        Self {
            powers_uw: vec![5.0, 10.0, 20.0, 28.5],
            durations_ms: vec![1.25, 0.625, 0.3125, 0.22],
            n_reps: 500,
            n_readout: 16,
            readout: PulseSpec::new(2.0, 1.0),
            green_init: PulseSpec::new(100.0, 10.0),
        }
    }
}

/// Green-power sweep of the repump protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepumpSweep {
    pub powers_uw: Vec<f64>,
    pub durations_ms: Vec<f64>,
    pub n_reps: usize,
    pub n_readout: usize,
    pub readout: PulseSpec,
    pub blue_reset: PulseSpec,
}

impl Default for RepumpSweep {
    fn default() -> Self {
        // About 0.2 expected relaxation events per pulse at k_repump = 0.05.
        Self {
            powers_uw: vec![20.0, 30.0, 40.0, 50.0],
            durations_ms: vec![8.9, 3.96, 2.22, 1.42],
            n_reps: 4000,
            n_readout: 16,
            readout: PulseSpec::new(2.0, 1.0),
            blue_reset: PulseSpec::new(28.5, 20.0),
        }
    }
}

/// Green power × duration grid for the population surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationGrid {
    pub powers_uw: Vec<f64>,
    /// Green durations; 0 means the blue reset is followed directly by readout.
    pub durations_ms: Vec<f64>,
    pub n_windows: usize,
    pub threshold: u64,
    pub readout: PulseSpec,
    pub blue_reset: PulseSpec,
    /// Green setting of the bright histogram.
    pub histogram: PulseSpec,
}

impl Default for PopulationGrid {
    fn default() -> Self {
        Self {
            powers_uw: vec![5.0, 10.0, 20.0, 50.0, 100.0],
            durations_ms: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 22.0, 50.0],
            n_windows: 1000,
            threshold: 3,
            readout: PulseSpec::new(2.0, 1.0),
            blue_reset: PulseSpec::new(28.5, 20.0),
            histogram: PulseSpec::new(50.0, 22.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismConfig {
    pub thresholds: TransitionThresholds,
    pub max_order: u32,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self { thresholds: TransitionThresholds::default(), max_order: DEFAULT_MAX_ORDER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::config("output.format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "results".into(), format: OutputFormat::Csv }
    }
}

/// Pulls the quoted field name out of serde's "missing field `x`" and
/// "unknown field `x`, expected ..." messages.
fn quoted_field(message: &str) -> Option<&str> {
    let rest = message
        .strip_prefix("missing field `")
        .or_else(|| message.strip_prefix("unknown field `"))?;
    rest.split('`').next()
}

fn join_path(parent: &str, field: &str) -> String {
    if parent.is_empty() || parent == "." {
        field.to_string()
    } else if parent == field || parent.ends_with(&format!(".{field}")) {
        parent.to_string()
    } else {
        format!("{parent}.{field}")
    }
}

/// Reads and parses a config file.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().trim().to_string()))?;
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let parent = e.path().to_string();
            let message = e.inner().message().trim().to_string();
            let path = match quoted_field(&message) {
                Some(field) => join_path(&parent, field),
                None => parent,
            };
            Error::config(path, message)
        })?;
    config.validate()?;
    Ok(config)
}

fn check_pulse(path: &str, p: &PulseSpec, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { p.duration_ms >= 0.0 } else { p.duration_ms > 0.0 };
    if !ok || !p.duration_ms.is_finite() {
        return Err(Error::config(
            format!("{path}.duration_ms"),
            format!("must be > 0, got {}", p.duration_ms),
        ));
    }
    if !(p.power >= 0.0) || !p.power.is_finite() {
        return Err(Error::config(format!("{path}.power"), format!("must be >= 0, got {}", p.power)));
    }
    Ok(())
}

fn check_positive_list(path: &str, values: &[f64], allow_zero: bool) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(path, "must not be empty"));
    }
    for (i, v) in values.iter().enumerate() {
        let ok = if allow_zero { *v >= 0.0 } else { *v > 0.0 };
        if !ok || !v.is_finite() {
            return Err(Error::config(format!("{path}[{i}]"), format!("must be {} 0, got {v}", if allow_zero { ">=" } else { ">" })));
        }
    }
    Ok(())
}

fn check_sweep(path: &str, powers: &[f64], durations: &[f64], n_reps: usize, n_readout: usize) -> Result<()> {
    check_positive_list(&format!("{path}.powers_uw"), powers, false)?;
    check_positive_list(&format!("{path}.durations_ms"), durations, false)?;
    if durations.len() != powers.len() {
        return Err(Error::config(
            format!("{path}.durations_ms"),
            format!("needs one entry per power ({}), got {}", powers.len(), durations.len()),
        ));
    }
    if n_reps == 0 {
        return Err(Error::config(format!("{path}.n_reps"), "must be >= 1"));
    }
    if n_readout < 4 {
        return Err(Error::config(format!("{path}.n_readout"), "must be >= 4 for a decay fit"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Checks every invariant, naming the first offending key.
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::config("n_reps", "must be >= 1"));
        }
        if self.seed > MAX_SEED {
            return Err(Error::config("seed", format!("must be <= {MAX_SEED} (TOML integers are 64-bit signed)")));
        }
        self.rates
            .check()
            .map_err(|(field, msg)| Error::config(format!("rates.{field}"), msg))?;
        let em = &self.emission;
        if !(em.bright_rate >= 0.0) || !em.bright_rate.is_finite() {
            return Err(Error::config("emission.bright_rate", "must be >= 0"));
        }
        if !(em.background_rate >= 0.0) || !em.background_rate.is_finite() {
            return Err(Error::config("emission.background_rate", "must be >= 0"));
        }
        if !(self.line.fwhm_mhz > 0.0) || !self.line.fwhm_mhz.is_finite() {
            return Err(Error::config("line.fwhm_mhz", format!("must be > 0, got {}", self.line.fwhm_mhz)));
        }
        if !self.line.center_ghz.is_finite() {
            return Err(Error::config("line.center_ghz", "must be finite"));
        }

        let seq = &self.sequence;
        check_pulse("sequence.readout", &seq.readout, false)?;
        check_pulse("sequence.blue", &seq.blue, false)?;
        check_pulse("sequence.green", &seq.green, false)?;
        if seq.n_readout != seq.n_control + 1 {
            return Err(Error::config(
                "sequence.n_readout",
                format!("must equal n_control + 1, got {} and {}", seq.n_readout, seq.n_control),
            ));
        }

        let scan = &self.scan;
        check_pulse("scan.blue", &scan.blue, false)?;
        check_pulse("scan.green", &scan.green, false)?;
        if !(scan.dwell_ms > 0.0) || !scan.dwell_ms.is_finite() {
            return Err(Error::config("scan.dwell_ms", format!("must be > 0, got {}", scan.dwell_ms)));
        }
        if !(scan.power_nw >= 0.0) {
            return Err(Error::config("scan.power_nw", "must be >= 0"));
        }
        if !(scan.gate_detuning_ghz >= 0.0) {
            return Err(Error::config("scan.gate_detuning_ghz", "must be >= 0"));
        }
        scan.spec().grid().map_err(|e| Error::config("scan.step_ghz", e.to_string()))?;

        let f2 = &self.fig2;
        check_sweep("fig2", &f2.powers_uw, &f2.durations_ms, f2.n_reps, f2.n_readout)?;
        check_pulse("fig2.readout", &f2.readout, false)?;
        check_pulse("fig2.green_init", &f2.green_init, false)?;
        let f3 = &self.fig3;
        check_sweep("fig3", &f3.powers_uw, &f3.durations_ms, f3.n_reps, f3.n_readout)?;
        check_pulse("fig3.readout", &f3.readout, false)?;
        check_pulse("fig3.blue_reset", &f3.blue_reset, false)?;

        let f4 = &self.fig4;
        check_positive_list("fig4.powers_uw", &f4.powers_uw, false)?;
        check_positive_list("fig4.durations_ms", &f4.durations_ms, true)?;
        if f4.n_windows == 0 {
            return Err(Error::config("fig4.n_windows", "must be >= 1"));
        }
        check_pulse("fig4.readout", &f4.readout, false)?;
        check_pulse("fig4.blue_reset", &f4.blue_reset, false)?;
        check_pulse("fig4.histogram", &f4.histogram, false)?;

        self.mechanism
            .thresholds
            .validate()
            .map_err(|e| Error::config("mechanism.thresholds", e.to_string()))?;
        if self.mechanism.max_order == 0 {
            return Err(Error::config("mechanism.max_order", "must be >= 1"));
        }
        if self.output.dir.is_empty() {
            return Err(Error::config("output.dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Resonant line at the configured position, scaled to the emission
    /// rates (counts per ms).
    pub fn line_shape(&self) -> LineShape {
        LineShape {
            center_ghz: self.line.center_ghz,
            fwhm_mhz: self.line.fwhm_mhz,
            amplitude: self.emission.bright_rate,
            background: self.emission.background_rate,
        }
    }

    /// SHA-256 (hex) of the canonical JSON form, without the `output` section.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes to JSON");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let bytes = serde_json::to_vec(&value).expect("JSON value serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[rates]\nk_repump = 0.05\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.rates.k_shelve, 32.0);
        assert_eq!(cfg.rates.leak_ratio, 0.1236);
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn missing_k_repump_names_path() {
        let err = parse_config("[rates]\nk_shelve = 30.0\n").unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "rates.k_repump"),
            other => panic!("{other}"),
        }
        match parse_config("seed = 3\n").unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "rates"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        match parse_config("[rates]\nk_repump = 0.05\nk_shelf = 1.0\n").unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "rates.k_shelf"),
            other => panic!("{other}"),
        }
        match parse_config("bogus = 1\n[rates]\nk_repump = 0.05\n").unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "bogus"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn negative_duration_names_segment() {
        let text = format!("{MINIMAL}[sequence.readout]\npower = 2.0\nduration_ms = -1.0\n");
        match parse_config(&text).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "sequence.readout.duration_ms"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invariant_violation_names_field() {
        match parse_config("[rates]\nk_repump = 0.05\nrepump_exponent = 5.0\n").unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "rates.repump_exponent"),
            other => panic!("{other}"),
        }
        match parse_config(&format!("{MINIMAL}[fig2]\ndurations_ms = [1.0]\n")).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "fig2.durations_ms"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn round_trip_is_field_exact() {
        let mut cfg = ExperimentConfig::default();
        cfg.rates.k_shelve = 31.123456789012345;
        cfg.fig4.durations_ms.push(0.1 + 0.2);
        cfg.output.format = OutputFormat::Json;
        cfg.rates.neg_two = Some(crate::rate_model::NegTwoRates {
            k_enter: 1.5,
            enter_exponent: 2.0,
            k_exit: 3.0,
            exit_exponent: 1.0,
        });
        let back = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hash_ignores_output_section() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.rates.k_shelve = 33.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(parse_config("[rates\nk_repump = 1"), Err(Error::Config { .. })));
    }
}
