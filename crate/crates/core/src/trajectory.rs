//! Exact jump-process simulation of the charge state under a pulse sequence,
//! and Poissonian photon counting during resonant readout windows.
//!
//! Rates are constant within a segment. Inside a segment the dwell time in
//! the current state is exponential with the total exit rate; a dwell that
//! overruns the segment end is discarded and redrawn under the next
//! segment's rates, which is exact because exponential dwells are memoryless.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::ChargeState;
use crate::ple::LineShape;
use crate::pulse::{validate, PulseSequence};
use crate::rate_model::{
    neg_two_entry_rate, neg_two_exit_rate, repump_rate, shelving_rate, Illumination, RateParams,
};
use crate::rng::{exponential, poisson, Purpose, SimSeed};

fn default_bright_rate() -> f64 {
    15.0
}
fn default_background_rate() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

/// Effective count rates during resonant readout, in counts per ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionParams {
    /// On-resonance rate from the bright state.
    #[serde(default = "default_bright_rate")]
    pub bright_rate: f64,
    /// Rate independent of the charge state.
    #[serde(default = "default_background_rate")]
    pub background_rate: f64,
    /// Scale the bright rate by the normalized line shape at the readout detuning.
    #[serde(default = "default_true")]
    pub lineshape_coupling: bool,
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            bright_rate: default_bright_rate(),
            background_rate: default_background_rate(),
            lineshape_coupling: true,
        }
    }
}

impl EmissionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bright_rate >= 0.0) || !(self.background_rate >= 0.0) {
            return Err(Error::domain("emission rates must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    /// Seconds from the start of the sequence.
    pub time: f64,
    pub state: ChargeState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargeTrajectory {
    pub initial: ChargeState,
    pub jumps: Vec<Jump>,
    /// Seconds covered by the trajectory.
    pub duration: f64,
}

impl ChargeTrajectory {
    pub fn state_at(&self, t: f64) -> ChargeState {
        let idx = self.jumps.partition_point(|j| j.time <= t);
        if idx == 0 {
            self.initial
        } else {
            self.jumps[idx - 1].state
        }
    }

    pub fn final_state(&self) -> ChargeState {
        self.jumps.last().map_or(self.initial, |j| j.state)
    }

    /// Seconds spent in the bright state within `[t0, t1]`.
    pub fn bright_time(&self, t0: f64, t1: f64) -> f64 {
        let mut idx = self.jumps.partition_point(|j| j.time <= t0);
        let mut state = if idx == 0 { self.initial } else { self.jumps[idx - 1].state };
        let mut t = t0;
        let mut acc = 0.0;
        while idx < self.jumps.len() && self.jumps[idx].time < t1 {
            let next = self.jumps[idx].time;
            if state.is_bright() {
                acc += next - t;
            }
            t = next;
            state = self.jumps[idx].state;
            idx += 1;
        }
        if state.is_bright() {
            acc += t1 - t;
        }
        acc
    }
}

/// Counts of one resonant readout window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWindow {
    pub index: usize,
    /// Seconds.
    pub t_start: f64,
    /// Seconds.
    pub t_stop: f64,
    /// GHz, resonant laser detuning during the window.
    pub detuning: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhotonTrace {
    pub windows: Vec<ReadoutWindow>,
}

impl PhotonTrace {
    pub fn counts(&self) -> Vec<u64> {
        self.windows.iter().map(|w| w.count).collect()
    }
}

/// Outgoing transitions `(destination, rate Hz)` from `state`.
fn exits(state: ChargeState, rates: &RateParams, illum: &Illumination) -> [(ChargeState, f64); 2] {
    use ChargeState::*;
    match state {
        NegOne => [
            (Neutral, shelving_rate(rates, illum)),
            (NegTwo, neg_two_entry_rate(rates, illum)),
        ],
        Neutral => [(NegOne, repump_rate(rates, illum)), (NegOne, 0.0)],
        NegTwo => [(NegOne, neg_two_exit_rate(rates, illum)), (NegOne, 0.0)],
    }
}

fn ensure_valid(seq: &PulseSequence) -> Result<()> {
    match validate(seq).first() {
        Some(v) => Err(Error::Structure(v.message.clone())),
        None => Ok(()),
    }
}

pub fn simulate_trajectory(
    seq: &PulseSequence,
    rates: &RateParams,
    seed: SimSeed,
    initial: ChargeState,
) -> Result<ChargeTrajectory> {
    ensure_valid(seq)?;
    rates.validate()?;
    let mut rng = seed.rng(Purpose::Trajectory);
    let mut state = initial;
    let mut jumps = Vec::new();
    let mut end = 0.0;
    for (start, seg) in seq.timeline() {
        end = start + seg.duration;
        let illum = seg.illumination();
        let mut t = start;
        loop {
            let out = exits(state, rates, &illum);
            let total = out[0].1 + out[1].1;
            if total <= 0.0 {
                break;
            }
            t += exponential(&mut rng, total);
            if t >= end {
                break;
            }
            state = if out[1].1 > 0.0 && rng.random::<f64>() * total >= out[0].1 {
                out[1].0
            } else {
                out[0].0
            };
            jumps.push(Jump { time: t, state });
        }
    }
    Ok(ChargeTrajectory { initial, jumps, duration: end })
}

pub fn emit_photons(
    traj: &ChargeTrajectory,
    seq: &PulseSequence,
    em: &EmissionParams,
    line: &LineShape,
    seed: SimSeed,
) -> PhotonTrace {
    let mut rng = seed.rng(Purpose::Photons);
    let mut windows = Vec::with_capacity(seq.readout_count());
    for (start, seg) in seq.timeline() {
        if !seg.is_readout() {
            continue;
        }
        let stop = start + seg.duration;
        let scale = if em.lineshape_coupling {
            line.relative_response(seg.detuning)
        } else {
            1.0
        };
        let bright_ms = traj.bright_time(start, stop) * 1e3;
        let mean = em.bright_rate * scale * bright_ms + em.background_rate * seg.duration * 1e3;
        windows.push(ReadoutWindow {
            index: windows.len(),
            t_start: start,
            t_stop: stop,
            detuning: seg.detuning,
            count: poisson(&mut rng, mean),
        });
    }
    PhotonTrace { windows }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ensemble {
    pub traces: Vec<PhotonTrace>,
    pub trajectories: Option<Vec<ChargeTrajectory>>,
}

/// Ensemble setup shared by all repetitions.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleSpec<'a> {
    pub seq: &'a PulseSequence,
    pub rates: &'a RateParams,
    pub emission: &'a EmissionParams,
    pub line: &'a LineShape,
    pub initial: ChargeState,
}

/// Runs `n_reps` repetitions, repetition `r` seeded by `(master_seed, r)`.
/// Parallel over the current rayon pool; results are in repetition order.
pub fn simulate_ensemble(
    spec: EnsembleSpec<'_>,
    master_seed: u64,
    n_reps: usize,
    keep_trajectories: bool,
) -> Result<Ensemble> {
    if n_reps == 0 {
        return Err(Error::domain("n_reps must be >= 1"));
    }
    ensure_valid(spec.seq)?;
    let runs: Vec<(PhotonTrace, Option<ChargeTrajectory>)> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = SimSeed::new(master_seed, rep);
            let traj = simulate_trajectory(spec.seq, spec.rates, seed, spec.initial)?;
            let trace = emit_photons(&traj, spec.seq, spec.emission, spec.line, seed);
            Ok((trace, keep_trajectories.then_some(traj)))
        })
        .collect::<Result<_>>()?;
    let mut traces = Vec::with_capacity(n_reps);
    let mut trajectories = keep_trajectories.then(|| Vec::with_capacity(n_reps));
    for (trace, traj) in runs {
        traces.push(trace);
        if let (Some(all), Some(t)) = (trajectories.as_mut(), traj) {
            all.push(t);
        }
    }
    Ok(Ensemble { traces, trajectories })
}
