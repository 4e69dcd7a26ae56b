//! Timed laser sequences for the shelving, repump and three-scan PLE protocols.
//!
//! Segments are single-channel: a sequence never drives the resonant and a
//! non-resonant laser at the same time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate_model::Illumination;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Resonant,
    Blue445,
    Green532,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Readout,
    Control,
    Wait,
}

/// One laser pulse. `power` is nW for `Resonant`, μW otherwise; `duration` is
/// seconds; `detuning` is GHz and only meaningful for `Resonant`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSegment {
    pub channel: Channel,
    pub power: f64,
    pub duration: f64,
    pub role: Role,
    #[serde(default)]
    pub detuning: f64,
}

impl PulseSegment {
    pub fn readout(power_nw: f64, duration_s: f64, detuning_ghz: f64) -> Self {
        Self {
            channel: Channel::Resonant,
            power: power_nw,
            duration: duration_s,
            role: Role::Readout,
            detuning: detuning_ghz,
        }
    }

    pub fn control(channel: Channel, power_uw: f64, duration_s: f64) -> Self {
        Self {
            channel,
            power: power_uw,
            duration: duration_s,
            role: Role::Control,
            detuning: 0.0,
        }
    }

    pub fn wait(duration_s: f64) -> Self {
        Self {
            channel: Channel::Off,
            power: 0.0,
            duration: duration_s,
            role: Role::Wait,
            detuning: 0.0,
        }
    }

    pub fn illumination(&self) -> Illumination {
        match self.channel {
            Channel::Resonant => Illumination::resonant(self.power),
            Channel::Blue445 => Illumination::blue(self.power),
            Channel::Green532 => Illumination::green(self.power),
            Channel::Off => Illumination::default(),
        }
    }

    pub fn is_readout(&self) -> bool {
        self.role == Role::Readout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    pub segments: Vec<PulseSegment>,
    #[serde(default = "one")]
    pub repetitions: u32,
}

fn one() -> u32 {
    1
}

impl PulseSequence {
    pub fn new(segments: Vec<PulseSegment>) -> Self {
        Self { segments, repetitions: 1 }
    }

    /// Duration of one pass through the segments, in seconds.
    pub fn pass_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.pass_duration() * f64::from(self.repetitions)
    }

    /// Segments of every repetition in playback order, with start times.
    pub fn timeline(&self) -> impl Iterator<Item = (f64, &PulseSegment)> + '_ {
        let mut t = 0.0;
        (0..self.repetitions)
            .flat_map(move |_| self.segments.iter())
            .map(move |seg| {
                let start = t;
                t += seg.duration;
                (start, seg)
            })
    }

    pub fn readout_count(&self) -> usize {
        self.segments.iter().filter(|s| s.is_readout()).count() * self.repetitions as usize
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pulse sequence is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("sequence", e.message().to_string()))
    }
}

/// Power and duration of one pulse kind, as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub power: f64,
    pub duration_ms: f64,
}

impl PulseSpec {
    pub fn new(power: f64, duration_ms: f64) -> Self {
        Self { power, duration_ms }
    }

    pub fn seconds(&self) -> f64 {
        self.duration_ms * 1e-3
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.duration_ms > 0.0) || !self.duration_ms.is_finite() {
            return Err(Error::Structure(format!(
                "{what} duration must be > 0 ms, got {}",
                self.duration_ms
            )));
        }
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::Structure(format!(
                "{what} power must be >= 0, got {}",
                self.power
            )));
        }
        Ok(())
    }
}

fn check_alternation(n_readout: usize, n_control: usize) -> Result<()> {
    if n_readout != n_control + 1 {
        return Err(Error::Structure(format!(
            "n_readout must equal n_control + 1, got {n_readout} readouts and {n_control} controls"
        )));
    }
    Ok(())
}

fn alternate(n_readout: usize, readout: &PulseSpec, control: PulseSegment) -> Vec<PulseSegment> {
    let r = PulseSegment::readout(readout.power, readout.seconds(), 0.0);
    let mut out = Vec::with_capacity(2 * n_readout);
    for i in 0..n_readout {
        if i > 0 {
            out.push(control);
        }
        out.push(r);
    }
    out
}

/// `R, B, R, B, …, R` followed by one green initialization pulse.
pub fn build_shelving_sequence(
    n_readout: usize,
    n_control: usize,
    readout: PulseSpec,
    blue: PulseSpec,
    green_init: PulseSpec,
) -> Result<PulseSequence> {
    check_alternation(n_readout, n_control)?;
    readout.check("readout")?;
    blue.check("blue")?;
    green_init.check("green")?;
    let mut segs = alternate(
        n_readout,
        &readout,
        PulseSegment::control(Channel::Blue445, blue.power, blue.seconds()),
    );
    segs.push(PulseSegment::control(Channel::Green532, green_init.power, green_init.seconds()));
    Ok(PulseSequence::new(segs))
}

/// One blue reset pulse followed by `R, G, R, G, …, R`.
pub fn build_repump_sequence(
    n_readout: usize,
    n_control: usize,
    readout: PulseSpec,
    green: PulseSpec,
    blue_reset: PulseSpec,
) -> Result<PulseSequence> {
    check_alternation(n_readout, n_control)?;
    readout.check("readout")?;
    green.check("green")?;
    blue_reset.check("blue")?;
    let mut segs = vec![PulseSegment::control(Channel::Blue445, blue_reset.power, blue_reset.seconds())];
    segs.extend(alternate(
        n_readout,
        &readout,
        PulseSegment::control(Channel::Green532, green.power, green.seconds()),
    ));
    Ok(PulseSequence::new(segs))
}

/// Resonant-laser frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    /// Magnitude of the detuning step; the sign follows `stop − start`.
    pub step_ghz: f64,
    pub dwell_ms: f64,
    pub power_nw: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            start_ghz: 4.5,
            stop_ghz: -7.2,
            step_ghz: 0.001,
            dwell_ms: 10.0,
            power_nw: 2.0,
        }
    }
}

impl ScanSpec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let span = self.stop_ghz - self.start_ghz;
        if !span.is_finite() || span == 0.0 {
            return Err(Error::domain("scan start and stop must differ"));
        }
        if !(self.step_ghz.abs() > 0.0) || self.step_ghz.abs() > span.abs() * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "scan step must lie in (0, |stop - start|], got {}",
                self.step_ghz
            )));
        }
        if !(self.dwell_ms > 0.0) {
            return Err(Error::domain(format!("dwell must be > 0 ms, got {}", self.dwell_ms)));
        }
        let step = self.step_ghz.abs() * span.signum();
        let n = (span / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.start_ghz + step * i as f64).collect())
    }

    fn segments(&self) -> Result<Vec<PulseSegment>> {
        let dwell = self.dwell_ms * 1e-3;
        Ok(self
            .grid()?
            .into_iter()
            .map(|d| PulseSegment::readout(self.power_nw, dwell, d))
            .collect())
    }
}

/// Minimum resonant detuning (GHz) while a non-resonant laser is on.
pub const DEFAULT_GATE_DETUNING_GHZ: f64 = 4.0;

/// Scan, blue control, scan, green control, scan. Each control pulse sits
/// between two scans, where the resonant laser is parked at the end of one
/// sweep or the start of the next; at least one of those must be at
/// `|Δ| >= gate_detuning`.
pub fn build_three_scan_ple_sequence(
    scan: ScanSpec,
    blue: PulseSpec,
    green: PulseSpec,
    gate_detuning: f64,
) -> Result<PulseSequence> {
    blue.check("blue")?;
    green.check("green")?;
    let points = scan.segments()?;
    let first = points.first().expect("grid is non-empty").detuning;
    let last = points.last().expect("grid is non-empty").detuning;
    if first.abs().max(last.abs()) < gate_detuning {
        return Err(Error::Gating(format!(
            "no scan endpoint reaches |detuning| >= {gate_detuning} GHz (endpoints {first}, {last})"
        )));
    }
    let mut segs = Vec::with_capacity(3 * points.len() + 2);
    segs.extend_from_slice(&points);
    segs.push(PulseSegment::control(Channel::Blue445, blue.power, blue.seconds()));
    segs.extend_from_slice(&points);
    segs.push(PulseSegment::control(Channel::Green532, green.power, green.seconds()));
    segs.extend_from_slice(&points);
    Ok(PulseSequence::new(segs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    ZeroRepetitions,
    NonPositiveDuration,
    NegativePower,
    /// Non-resonant pulse that also carries a resonant detuning.
    SimultaneousChannels,
    ReadoutNotResonant,
    /// Non-resonant pulse while the resonant laser is parked too close to resonance.
    GateTooClose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub segment: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn at(i: usize, kind: ViolationKind, message: String) -> Self {
        Self { segment: Some(i), kind, message }
    }
}

/// Structural checks; returns every violation instead of stopping at the first.
pub fn validate(seq: &PulseSequence) -> Vec<Violation> {
    let mut out = Vec::new();
    if seq.segments.is_empty() {
        out.push(Violation {
            segment: None,
            kind: ViolationKind::Empty,
            message: "sequence has no segments".into(),
        });
    }
    if seq.repetitions == 0 {
        out.push(Violation {
            segment: None,
            kind: ViolationKind::ZeroRepetitions,
            message: "repetitions must be >= 1".into(),
        });
    }
    for (i, s) in seq.segments.iter().enumerate() {
        if !(s.duration > 0.0) || !s.duration.is_finite() {
            out.push(Violation::at(
                i,
                ViolationKind::NonPositiveDuration,
                format!("segment {i}: duration must be > 0, got {}", s.duration),
            ));
        }
        if !(s.power >= 0.0) {
            out.push(Violation::at(
                i,
                ViolationKind::NegativePower,
                format!("segment {i}: power must be >= 0, got {}", s.power),
            ));
        }
        if s.channel != Channel::Resonant && s.detuning != 0.0 {
            out.push(Violation::at(
                i,
                ViolationKind::SimultaneousChannels,
                format!("segment {i}: {:?} pulse carries a resonant detuning", s.channel),
            ));
        }
        if s.role == Role::Readout && s.channel != Channel::Resonant {
            out.push(Violation::at(
                i,
                ViolationKind::ReadoutNotResonant,
                format!("segment {i}: readout on non-resonant channel {:?}", s.channel),
            ));
        }
    }
    out
}

/// Checks that every non-resonant pulse adjacent to a resonant one has a
/// neighbouring resonant detuning of at least `gate_detuning`.
pub fn gating_violations(seq: &PulseSequence, gate_detuning: f64) -> Vec<Violation> {
    let segs = &seq.segments;
    let mut out = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        if matches!(s.channel, Channel::Resonant | Channel::Off) {
            continue;
        }
        let neighbours = [i.checked_sub(1), Some(i + 1)]
            .into_iter()
            .flatten()
            .filter_map(|j| segs.get(j))
            .filter(|n| n.channel == Channel::Resonant)
            .map(|n| n.detuning.abs());
        let mut any = false;
        let mut best: f64 = 0.0;
        for d in neighbours {
            any = true;
            best = best.max(d);
        }
        if any && best < gate_detuning {
            out.push(Violation::at(
                i,
                ViolationKind::GateTooClose,
                format!("segment {i}: resonant laser parked at |Δ| = {best} GHz < {gate_detuning} GHz"),
            ));
        }
    }
    out
}

/// Config form of a pulse sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    pub n_readout: usize,
    pub n_control: usize,
    pub readout: PulseSpec,
    pub blue: PulseSpec,
    pub green: PulseSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// Blue control pulses, green initialization at the end.
    Shelving,
    /// Blue reset at the start, green control pulses.
    Repump,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            kind: SequenceKind::Shelving,
            n_readout: 16,
            n_control: 15,
            readout: PulseSpec::new(2.0, 1.0),
            blue: PulseSpec::new(10.0, 0.625),
            green: PulseSpec::new(100.0, 10.0),
        }
    }
}

impl SequenceSpec {
    pub fn build(&self) -> Result<PulseSequence> {
        match self.kind {
            SequenceKind::Shelving => {
                build_shelving_sequence(self.n_readout, self.n_control, self.readout, self.blue, self.green)
            }
            SequenceKind::Repump => {
                build_repump_sequence(self.n_readout, self.n_control, self.readout, self.green, self.blue)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn readout() -> PulseSpec {
        PulseSpec::new(2.0, 1.0)
    }

    fn channels(seq: &PulseSequence) -> Vec<Channel> {
        seq.segments.iter().map(|s| s.channel).collect()
    }

    #[test]
    fn shelving_structure() {
        let seq = build_shelving_sequence(16, 15, readout(), PulseSpec::new(10.0, 0.5), PulseSpec::new(100.0, 10.0))
            .unwrap();
        assert_eq!(seq.segments.len(), 32);
        assert_eq!(seq.readout_count(), 16);
        assert_eq!(seq.segments.last().unwrap().channel, Channel::Green532);
        assert!(validate(&seq).is_empty());

        let tiny = build_shelving_sequence(1, 0, readout(), PulseSpec::new(10.0, 0.5), PulseSpec::new(100.0, 10.0))
            .unwrap();
        assert_eq!(channels(&tiny), vec![Channel::Resonant, Channel::Green532]);

        let two = build_shelving_sequence(2, 1, readout(), PulseSpec::new(10.0, 0.5), PulseSpec::new(100.0, 10.0))
            .unwrap();
        assert_eq!(
            channels(&two),
            vec![Channel::Resonant, Channel::Blue445, Channel::Resonant, Channel::Green532]
        );
    }

    #[test]
    fn alternation_mismatch_is_structure_error() {
        let err = build_shelving_sequence(16, 16, readout(), PulseSpec::new(10.0, 0.5), PulseSpec::new(100.0, 10.0));
        assert!(matches!(err, Err(Error::Structure(_))));
        let err = build_repump_sequence(3, 1, readout(), PulseSpec::new(20.0, 1.0), PulseSpec::new(28.5, 20.0));
        assert!(matches!(err, Err(Error::Structure(_))));
    }

    #[test]
    fn repump_structure() {
        let seq = build_repump_sequence(16, 15, readout(), PulseSpec::new(20.0, 1.0), PulseSpec::new(28.5, 20.0))
            .unwrap();
        assert_eq!(seq.segments.len(), 32);
        assert_eq!(seq.segments[0].channel, Channel::Blue445);
        assert_eq!(seq.segments[0].power, 28.5);
        assert!(validate(&seq).is_empty());

        let tiny = build_repump_sequence(1, 0, readout(), PulseSpec::new(20.0, 1.0), PulseSpec::new(28.5, 20.0))
            .unwrap();
        assert_eq!(channels(&tiny), vec![Channel::Blue445, Channel::Resonant]);

        for n in 1..10 {
            let a = build_repump_sequence(n, n - 1, readout(), PulseSpec::new(20.0, 1.0), PulseSpec::new(28.5, 20.0))
                .unwrap();
            let b = build_repump_sequence(n + 1, n, readout(), PulseSpec::new(20.0, 1.0), PulseSpec::new(28.5, 20.0))
                .unwrap();
            assert_eq!(b.segments.len(), a.segments.len() + 2);
            assert_eq!(&b.segments[a.segments.len()..], &[b.segments[2], b.segments[1]]);
        }
    }

    #[test]
    fn three_scan_defaults_respect_gate() {
        let seq = build_three_scan_ple_sequence(
            ScanSpec::default(),
            PulseSpec::new(28.5, 10.0),
            PulseSpec::new(100.0, 10.0),
            DEFAULT_GATE_DETUNING_GHZ,
        )
        .unwrap();
        let n = ScanSpec::default().grid().unwrap().len();
        assert_eq!(seq.segments.len(), 3 * n + 2);
        assert_eq!(seq.segments[n].channel, Channel::Blue445);
        assert_eq!(seq.segments[2 * n + 1].channel, Channel::Green532);
        assert!(validate(&seq).is_empty());
        assert!(gating_violations(&seq, DEFAULT_GATE_DETUNING_GHZ).is_empty());
    }

    #[test]
    fn three_scan_gate_unreachable() {
        let scan = ScanSpec { start_ghz: 1.0, stop_ghz: -1.0, step_ghz: 0.01, ..Default::default() };
        let err = build_three_scan_ple_sequence(scan, PulseSpec::new(28.5, 10.0), PulseSpec::new(100.0, 10.0), 4.0);
        assert!(matches!(err, Err(Error::Gating(_))));
    }

    #[test]
    fn two_point_scan() {
        let scan = ScanSpec { start_ghz: 4.5, stop_ghz: -7.2, step_ghz: 11.7, ..Default::default() };
        let g = scan.grid().unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0], 4.5);
        assert!((g[1] + 7.2).abs() < 1e-12);
        let seq = build_three_scan_ple_sequence(scan, PulseSpec::new(28.5, 10.0), PulseSpec::new(100.0, 10.0), 4.0)
            .unwrap();
        assert_eq!(seq.segments.len(), 8);
    }

    #[test]
    fn grid_covers_default_range() {
        let g = ScanSpec::default().grid().unwrap();
        assert_eq!(g[0], 4.5);
        assert!((g.last().unwrap() + 7.2).abs() < 1e-9);
    }

    #[test]
    fn validate_flags_violations() {
        let mut seq = build_shelving_sequence(2, 1, readout(), PulseSpec::new(10.0, 0.5), PulseSpec::new(100.0, 10.0))
            .unwrap();
        seq.segments[0].duration = 0.0;
        seq.segments[1].role = Role::Readout;
        seq.segments[3].detuning = 1.0;
        let kinds: Vec<_> = validate(&seq).into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::NonPositiveDuration));
        assert!(kinds.contains(&ViolationKind::ReadoutNotResonant));
        assert!(kinds.contains(&ViolationKind::SimultaneousChannels));
        assert_eq!(validate(&PulseSequence::new(vec![]))[0].kind, ViolationKind::Empty);
    }

    #[test]
    fn gate_violation_detected() {
        let seq = PulseSequence::new(vec![
            PulseSegment::readout(2.0, 1e-3, 0.5),
            PulseSegment::control(Channel::Blue445, 10.0, 1e-3),
            PulseSegment::readout(2.0, 1e-3, 1.0),
        ]);
        assert_eq!(gating_violations(&seq, 4.0).len(), 1);
    }

    #[test]
    fn spec_builds_both_kinds() {
        let spec = SequenceSpec {
            kind: SequenceKind::Repump,
            n_readout: 4,
            n_control: 3,
            readout: readout(),
            blue: PulseSpec::new(28.5, 20.0),
            green: PulseSpec::new(20.0, 2.0),
        };
        let seq = spec.build().unwrap();
        assert_eq!(seq.segments[0].channel, Channel::Blue445);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<SequenceSpec>(&text).unwrap(), spec);
    }

    proptest! {
        #[test]
        fn builders_round_trip_and_validate(
            n in 1usize..20,
            shelving in any::<bool>(),
            rp in 0.1f64..20.0, rd in 0.01f64..5.0,
            bp in 0.0f64..100.0, bd in 0.001f64..50.0,
            gp in 0.0f64..200.0, gd in 0.001f64..50.0,
            reps in 1u32..5,
        ) {
            let r = PulseSpec::new(rp, rd);
            let b = PulseSpec::new(bp, bd);
            let g = PulseSpec::new(gp, gd);
            let mut seq = if shelving {
                build_shelving_sequence(n, n - 1, r, b, g).unwrap()
            } else {
                build_repump_sequence(n, n - 1, r, g, b).unwrap()
            };
            seq.repetitions = reps;
            prop_assert!(validate(&seq).is_empty());
            let back = PulseSequence::from_toml(&seq.to_toml()).unwrap();
            prop_assert_eq!(&back, &seq);

            let expected: f64 = seq.segments.iter().map(|s| s.duration).sum::<f64>() * f64::from(reps);
            prop_assert_eq!(seq.total_duration(), expected);
            let last = seq.timeline().last().unwrap();
            prop_assert!((last.0 + last.1.duration - expected).abs() <= 1e-9 * expected);
        }
    }
}
