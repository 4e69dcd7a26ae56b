//! Lorentzian PLE line model, simulated frequency scans and line fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::lm::{LmOptions, Problem};
use crate::mechanism::ChargeState;
use crate::pulse::{PulseSegment, PulseSequence};
use crate::rate_model::RateParams;
use crate::rng::{poisson, Purpose, SimSeed};
use crate::trajectory::simulate_trajectory;

/// Amplitude significance (in standard errors) required to call a peak present.
pub const PEAK_SIGMA: f64 = 3.0;

const REWEIGHT_PASSES: usize = 8;
/// Narrowest resolvable FWHM, in mean grid steps.
const MIN_WIDTH_STEPS: f64 = 2.0;

/// Lorentzian line. `amplitude` and `background` are in counts per dwell for
/// fitted spectra; the scan simulator reads them as counts per millisecond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineShape {
    pub center_ghz: f64,
    pub fwhm_mhz: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub background: f64,
}

impl Default for LineShape {
    fn default() -> Self {
        Self {
            center_ghz: 0.0,
            fwhm_mhz: 38.0,
            amplitude: 15.0,
            background: 0.5,
        }
    }
}

impl LineShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_mhz > 0.0) || !self.fwhm_mhz.is_finite() {
            return Err(Error::domain(format!("fwhm must be > 0, got {} MHz", self.fwhm_mhz)));
        }
        if !(self.amplitude >= 0.0) || !(self.background >= 0.0) || !self.center_ghz.is_finite() {
            return Err(Error::domain("line amplitude and background must be >= 0"));
        }
        Ok(())
    }

    fn half_width_ghz(&self) -> f64 {
        self.fwhm_mhz * 5e-4
    }

    /// Line profile normalized to 1 at the center.
    pub fn relative_response(&self, detuning_ghz: f64) -> f64 {
        let h = self.half_width_ghz();
        let d = detuning_ghz - self.center_ghz;
        h * h / (d * d + h * h)
    }
}

/// `background + amplitude·(Γ/2)² / (Δ² + (Γ/2)²)`.
pub fn lorentzian_value(line: &LineShape, detuning_ghz: f64) -> f64 {
    line.background + line.amplitude * line.relative_response(detuning_ghz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub detuning_ghz: Vec<f64>,
    /// Photon counts per point; whole numbers for simulated or measured data.
    pub counts: Vec<f64>,
    pub dwell_ms: f64,
}

impl Spectrum {
    pub fn validate(&self) -> Result<()> {
        if self.detuning_ghz.len() != self.counts.len() {
            return Err(Error::domain("detuning and counts must have equal length"));
        }
        let d = &self.detuning_ghz;
        let up = d.windows(2).all(|w| w[1] > w[0]);
        let down = d.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::domain("detuning grid must be strictly monotone"));
        }
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::domain("counts must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Charge dynamics during a scan: the center starts in `initial` and evolves
/// under the resonant laser only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeDynamics {
    pub rates: RateParams,
    pub resonant_power_nw: f64,
    pub initial: ChargeState,
}

/// Poisson counts at each grid point. The line's amplitude and background
/// are per-millisecond rates; the emitted term is scaled by the bright-state
/// occupancy during the dwell (always bright when `dynamics` is `None`).
pub fn simulate_ple_scan(
    line: &LineShape,
    grid: &[f64],
    dwell_ms: f64,
    dynamics: Option<&ChargeDynamics>,
    seed: SimSeed,
) -> Result<Spectrum> {
    line.validate()?;
    if !(dwell_ms >= 0.0) {
        return Err(Error::domain(format!("dwell must be >= 0 ms, got {dwell_ms}")));
    }
    let mut spec = Spectrum { detuning_ghz: grid.to_vec(), counts: vec![0.0; grid.len()], dwell_ms };
    spec.validate()?;
    if dwell_ms == 0.0 {
        return Ok(spec);
    }
    let occupancy: Vec<f64> = match dynamics {
        None => vec![1.0; grid.len()],
        Some(dyn_) => {
            let dwell_s = dwell_ms * 1e-3;
            let seq = PulseSequence::new(
                grid.iter()
                    .map(|&d| PulseSegment::readout(dyn_.resonant_power_nw, dwell_s, d))
                    .collect(),
            );
            let traj = simulate_trajectory(&seq, &dyn_.rates, seed, dyn_.initial)?;
            seq.timeline()
                .map(|(t0, s)| traj.bright_time(t0, t0 + s.duration) / s.duration)
                .collect()
        }
    };
    let mut rng = seed.rng(Purpose::Scan);
    for ((c, &d), occ) in spec.counts.iter_mut().zip(grid).zip(occupancy) {
        let mean = dwell_ms * (line.background + line.amplitude * line.relative_response(d) * occ);
        *c = poisson(&mut rng, mean) as f64;
    }
    Ok(spec)
}

/// Lorentzian fit of a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzFit {
    pub line: LineShape,
    pub stderr: LineShape,
    pub peak_present: bool,
    /// Fitted amplitude in units of its standard error.
    pub significance: f64,
    pub fit: FitResult,
}

impl LorentzFit {
    /// Record in the documented JSON layout.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "center_GHz": self.line.center_ghz,
            "fwhm_MHz": self.line.fwhm_mhz,
            "amplitude": self.line.amplitude,
            "background": self.line.background,
            "stderr": {
                "center_GHz": self.stderr.center_ghz,
                "fwhm_MHz": self.stderr.fwhm_mhz,
                "amplitude": self.stderr.amplitude,
                "background": self.stderr.background,
            },
            "peak_present": self.peak_present,
            "significance": self.significance,
            "converged": self.fit.converged,
            "iterations": self.fit.iterations,
            "residual_norm": self.fit.residual_norm,
        })
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Start values: center at the maximum, background at the median, amplitude
/// `max − median`, width from the contiguous run above half that height.
fn initial_guess(spec: &Spectrum) -> [f64; 4] {
    let d = &spec.detuning_ghz;
    let c = &spec.counts;
    let (imax, &cmax) = c
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty spectrum");
    let bg = median(c);
    let amp = (cmax - bg).max(0.0);
    let half = bg + 0.5 * amp;
    let mut lo = imax;
    while lo > 0 && c[lo - 1] > half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < c.len() && c[hi + 1] > half {
        hi += 1;
    }
    let step = (d[d.len() - 1] - d[0]).abs() / (d.len() - 1) as f64;
    let width = (d[hi] - d[lo]).abs() + step;
    [d[imax], width, amp, bg]
}

/// Weighted nonlinear least-squares Lorentzian fit. The first pass uses
/// Poisson weights `1 / max(count, 1)`; later passes reweight with the fitted
/// model, `1 / max(model, 1)`, until the parameters settle. Standard errors
/// are absolute. A peak is present when `amplitude > 3·stderr`.
pub fn fit_lorentzian(spec: &Spectrum) -> Result<LorentzFit> {
    spec.validate()?;
    let n = spec.counts.len();
    if n < 5 {
        return Err(Error::domain(format!("need at least 5 points, got {n}")));
    }
    let d = &spec.detuning_ghz;
    let (dmin, dmax) = (d[0].min(d[n - 1]), d[0].max(d[n - 1]));
    let min_width = MIN_WIDTH_STEPS * (dmax - dmin) / (n - 1) as f64;
    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let h = 0.5 * p[1];
        let dx = x - p[0];
        let den = dx * dx + h * h;
        let l = h * h / den;
        g[0] = p[2] * h * h * 2.0 * dx / (den * den);
        g[1] = p[2] * h * dx * dx / (den * den);
        g[2] = l;
        g[3] = 1.0;
        p[3] + p[2] * l
    };
    let opts = LmOptions { max_iterations: 1000, ..LmOptions::default() };
    let mut weights: Vec<f64> = spec.counts.iter().map(|c| 1.0 / c.max(1.0)).collect();
    let mut start = initial_guess(spec).to_vec();
    let mut out = None;
    for _ in 0..REWEIGHT_PASSES {
        let problem = Problem {
            x: d,
            y: &spec.counts,
            weights: Some(&weights),
            model,
            lower: vec![dmin, min_width, 0.0, 0.0],
            upper: vec![dmax, f64::INFINITY, f64::INFINITY, f64::INFINITY],
        };
        let pass = problem.solve(start.clone(), opts);
        if !pass.converged || pass.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit {
                message: "Lorentzian fit did not converge".into(),
                iterations: pass.iterations,
                residual_norm: pass.ssr.sqrt(),
            });
        }
        let settled = out.is_some()
            && pass.params.iter().zip(&start).all(|(a, b)| (a - b).abs() <= 1e-9 * (b.abs() + 1e-9));
        start = pass.params.clone();
        let mut g = [0.0; 4];
        weights = d.iter().map(|&x| 1.0 / model(x, &start, &mut g).max(1.0)).collect();
        out = Some(pass);
        if settled {
            break;
        }
    }
    let out = out.expect("at least one pass");
    let se = out.standard_errors(1.0);
    let p = &out.params;
    let line = LineShape { center_ghz: p[0], fwhm_mhz: p[1] * 1e3, amplitude: p[2], background: p[3] };
    let stderr = LineShape { center_ghz: se[0], fwhm_mhz: se[1] * 1e3, amplitude: se[2], background: se[3] };
    let significance = if se[2] > 0.0 && se[2].is_finite() { p[2] / se[2] } else { 0.0 };
    let peak_present = significance > PEAK_SIGMA;

    let mut fit = FitResult::new(
        &["center_ghz", "fwhm_mhz", "amplitude", "background"],
        &[line.center_ghz, line.fwhm_mhz, line.amplitude, line.background],
        &[stderr.center_ghz, stderr.fwhm_mhz, stderr.amplitude, stderr.background],
    );
    fit.residual_norm = out.ssr.sqrt();
    fit.iterations = out.iterations;
    if !peak_present {
        fit.flags.push("no_peak".into());
    }
    Ok(LorentzFit { line, stderr, peak_present, significance, fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDecision {
    pub present: bool,
    pub significance: f64,
}

/// Presence test used by the three-scan protocol. A failed fit counts as absent.
pub fn detect_peak(spec: &Spectrum) -> PeakDecision {
    match fit_lorentzian(spec) {
        Ok(f) => PeakDecision { present: f.peak_present, significance: f.significance },
        Err(_) => PeakDecision { present: false, significance: 0.0 },
    }
}
