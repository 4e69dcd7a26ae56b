//! Photon-count histograms and threshold discrimination of the charge state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::PhotonTrace;

/// Counts at or below this are classified dark.
pub const DEFAULT_THRESHOLD: u64 = 3;

const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrightDark {
    Bright,
    Dark,
}

/// Dark iff `count <= threshold`.
pub fn classify_state(count: u64, threshold: u64) -> BrightDark {
    if count <= threshold {
        BrightDark::Dark
    } else {
        BrightDark::Bright
    }
}

/// Which readout windows of each trace to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowFilter {
    #[default]
    All,
    Index(usize),
    Last,
}

impl WindowFilter {
    fn select(self, trace: &PhotonTrace) -> impl Iterator<Item = u64> + '_ {
        let n = trace.windows.len();
        trace
            .windows
            .iter()
            .enumerate()
            .filter(move |(i, _)| match self {
                WindowFilter::All => true,
                WindowFilter::Index(k) => *i == k,
                WindowFilter::Last => *i + 1 == n,
            })
            .map(|(_, w)| w.count)
    }
}

/// Integer-count histogram. Bin `i` covers `[edges[i], edges[i+1])`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<u64>,
    pub frequencies: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn from_counts(counts: impl IntoIterator<Item = u64>) -> Self {
        let mut frequencies: Vec<u64> = Vec::new();
        let mut total = 0;
        for c in counts {
            let c = c as usize;
            if c >= frequencies.len() {
                frequencies.resize(c + 1, 0);
            }
            frequencies[c] += 1;
            total += 1;
        }
        let edges = if frequencies.is_empty() {
            Vec::new()
        } else {
            (0..=frequencies.len() as u64).collect()
        };
        Self { edges, frequencies, total }
    }

    /// Count value of the most populated bin at or above `min_count`.
    pub fn mode_above(&self, min_count: u64) -> Option<u64> {
        self.frequencies
            .iter()
            .enumerate()
            .skip(min_count as usize)
            .max_by_key(|(i, f)| (**f, std::cmp::Reverse(*i)))
            .filter(|(_, f)| **f > 0)
            .map(|(i, _)| i as u64)
    }

    pub fn fraction_above(&self, threshold: u64) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        let above: u64 = self.frequencies.iter().skip(threshold as usize + 1).sum();
        above as f64 / self.total as f64
    }
}

pub fn histogram_counts(traces: &[PhotonTrace], filter: WindowFilter) -> Histogram {
    Histogram::from_counts(traces.iter().flat_map(|t| filter.select(t)))
}

/// Bright fraction with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub fraction: f64,
    pub lo: f64,
    pub hi: f64,
    pub threshold: u64,
    pub n: u64,
    pub bright: u64,
}

pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn estimate_population(counts: &[u64], threshold: u64) -> Result<PopulationEstimate> {
    if counts.is_empty() {
        return Err(Error::domain("population estimate needs at least one count"));
    }
    let bright = counts
        .iter()
        .filter(|&&c| classify_state(c, threshold) == BrightDark::Bright)
        .count() as u64;
    let n = counts.len() as u64;
    let fraction = bright as f64 / n as f64;
    let (lo, hi) = wilson_interval(bright, n, Z_95);
    Ok(PopulationEstimate {
        fraction,
        lo: lo.min(fraction),
        hi: hi.max(fraction),
        threshold,
        n,
        bright,
    })
}

/// `P(Poisson(mean) <= k)` by direct summation of the probability mass.
pub fn poisson_cdf(mean: f64, k: u64) -> f64 {
    if mean <= 0.0 {
        return 1.0;
    }
    let ln_mean = mean.ln();
    let mut ln_term = -mean;
    let mut acc = ln_term.exp();
    let mut i = 0u64;
    while i < k {
        i += 1;
        ln_term += ln_mean - (i as f64).ln();
        let term = ln_term.exp();
        acc += term;
        if i as f64 > mean && term < 1e-18 * acc {
            break;
        }
    }
    acc.min(1.0)
}

/// `P(Poisson(mean) > k)`, summed over the upper tail when it is the small side.
fn poisson_sf(mean: f64, k: u64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if (k as f64) < mean {
        return (1.0 - poisson_cdf(mean, k)).max(0.0);
    }
    // Beyond 2e·mean the tail is below 2^-k.
    if k as f64 >= (2.0 * std::f64::consts::E * mean).max(1100.0) {
        return 0.0;
    }
    let ln_mean = mean.ln();
    let mut ln_term = -mean;
    for i in 1..=k + 1 {
        ln_term += ln_mean - (i as f64).ln();
        if ln_term < -745.0 && i as f64 > mean {
            return 0.0;
        }
    }
    let mut acc = 0.0;
    let mut i = k + 1;
    loop {
        let term = ln_term.exp();
        acc += term;
        if term <= 1e-18 * acc || term == 0.0 {
            break;
        }
        i += 1;
        ln_term += ln_mean - (i as f64).ln();
    }
    acc
}

/// `(P(bright read as dark), P(dark read as bright))` for Poisson count
/// distributions with the given means and the `Dark iff count <= threshold` rule.
pub fn discrimination_error(bright_mean: f64, dark_mean: f64, threshold: u64) -> Result<(f64, f64)> {
    if !(bright_mean >= 0.0) || !(dark_mean >= 0.0) {
        return Err(Error::domain("means must be >= 0"));
    }
    Ok((poisson_cdf(bright_mean, threshold), poisson_sf(dark_mean, threshold)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ReadoutWindow;

    fn trace(counts: &[u64]) -> PhotonTrace {
        PhotonTrace {
            windows: counts
                .iter()
                .enumerate()
                .map(|(i, &c)| ReadoutWindow { index: i, t_start: 0.0, t_stop: 1e-3, detuning: 0.0, count: c })
                .collect(),
        }
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify_state(15, 3), BrightDark::Bright);
        assert_eq!(classify_state(0, 3), BrightDark::Dark);
        assert_eq!(classify_state(3, 3), BrightDark::Dark);
        assert_eq!(classify_state(4, 3), BrightDark::Bright);
    }

    #[test]
    fn histogram_all_zero() {
        let traces: Vec<_> = (0..1000).map(|_| trace(&[0])).collect();
        let h = histogram_counts(&traces, WindowFilter::All);
        assert_eq!(h.frequencies, vec![1000]);
        assert_eq!(h.edges, vec![0, 1]);
        assert_eq!(h.total, 1000);
    }

    #[test]
    fn histogram_filters() {
        let traces = vec![trace(&[1, 2, 7]), trace(&[0, 2, 9])];
        assert_eq!(histogram_counts(&traces, WindowFilter::Index(1)).frequencies, vec![0, 0, 2]);
        let last = histogram_counts(&traces, WindowFilter::Last);
        assert_eq!(last.total, 2);
        assert_eq!(last.frequencies.iter().sum::<u64>(), last.total);
        let none = histogram_counts(&traces, WindowFilter::Index(10));
        assert_eq!(none.total, 0);
        assert!(none.frequencies.is_empty());
    }

    #[test]
    fn population_examples() {
        let mut counts = vec![15u64; 890];
        counts.extend(std::iter::repeat(1).take(110));
        let est = estimate_population(&counts, 3).unwrap();
        assert!((est.fraction - 0.890).abs() < 1e-12);

        let est = estimate_population(&[0; 50], 3).unwrap();
        assert_eq!(est.fraction, 0.0);
        assert_eq!(est.lo, 0.0);

        let mut counts = vec![10u64; 500];
        counts.extend(std::iter::repeat(0).take(500));
        let est = estimate_population(&counts, 3).unwrap();
        assert_eq!(est.fraction, 0.5);
        assert!((est.lo - 0.469).abs() < 5e-4 && (est.hi - 0.531).abs() < 5e-4, "{est:?}");
        assert!(estimate_population(&[], 3).is_err());
    }

    #[test]
    fn discrimination_reference_values() {
        // e^{−15}(1 + 15 + 15²/2 + 15³/6) and 1 − e^{−0.5}(1 + 0.5 + 0.5²/2 + 0.5³/6)
        let fd_ref = (-15f64).exp() * (1.0 + 15.0 + 112.5 + 562.5);
        let fb_ref = 1.0 - (-0.5f64).exp() * (1.0 + 0.5 + 0.125 + 0.125 / 6.0);
        let (fd, fb) = discrimination_error(15.0, 0.5, 3).unwrap();
        assert!((fd - fd_ref).abs() < 1e-15);
        assert!((fb - fb_ref).abs() < 1e-14);
        assert!((fd - 2.11e-4).abs() < 0.01e-4);
        assert!((fb - 1.75e-3).abs() < 0.01e-3);
    }

    #[test]
    fn discrimination_limits() {
        assert_eq!(discrimination_error(7.0, 0.0, 0).unwrap().1, 0.0);
        let (fd, fb) = discrimination_error(15.0, 0.5, 10_000).unwrap();
        assert!((fd - 1.0).abs() < 1e-12);
        assert_eq!(fb, 0.0);
        let (fd, fb) = discrimination_error(15.0, 0.5, u64::MAX).unwrap();
        assert!((fd - 1.0).abs() < 1e-12);
        assert_eq!(fb, 0.0);
    }

    #[test]
    fn cdf_against_statrs() {
        use statrs::distribution::{DiscreteCDF, Poisson};
        for mean in [0.1, 0.5, 3.0, 15.0, 80.0, 400.0] {
            let d = Poisson::new(mean).unwrap();
            for k in [0u64, 1, 3, 10, 50, 300, 500] {
                let ours = poisson_cdf(mean, k);
                let theirs = d.cdf(k);
                assert!((ours - theirs).abs() < 1e-10, "mean={mean} k={k}: {ours} vs {theirs}");
                let sf = poisson_sf(mean, k);
                assert!((sf - d.sf(k)).abs() < 1e-10 * d.sf(k).max(1e-300) + 1e-15, "sf mean={mean} k={k}");
            }
        }
    }

    #[test]
    fn histogram_mode() {
        let h = Histogram::from_counts([0, 0, 0, 14, 15, 15, 16]);
        assert_eq!(h.mode_above(4), Some(15));
        assert_eq!(h.mode_above(0), Some(0));
    }
}
