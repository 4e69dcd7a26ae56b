use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use pbv_charge::estimators::{estimate_population, fit_monoexponential_ensemble, FitResult};
use pbv_charge::mechanism::ChargeState;
use pbv_charge::ple::LineShape;
use pbv_charge::pulse::{build_shelving_sequence, PulseSpec};
use pbv_charge::rate_model::RateParams;
use pbv_charge::trajectory::{simulate_ensemble, EmissionParams, EnsembleSpec};

const POWER_UW: f64 = 10.0;
const PULSE_MS: f64 = 0.625;

/// Shelving decay at 10 μW blue; the injected rate is 32 Hz/μW · 10 μW.
fn shelving_fit(seed: u64, n_reps: usize) -> FitResult {
    let seq = build_shelving_sequence(
        16,
        15,
        PulseSpec::new(2.0, 1.0),
        PulseSpec::new(POWER_UW, PULSE_MS),
        PulseSpec::new(100.0, 10.0),
    )
    .unwrap();
    let rates = RateParams::new(0.05);
    let emission = EmissionParams::default();
    let line = LineShape { center_ghz: 0.0, fwhm_mhz: 38.0, amplitude: 15.0, background: 0.5 };
    let spec = EnsembleSpec { seq: &seq, rates: &rates, emission: &emission, line: &line, initial: ChargeState::NegOne };
    let ens = simulate_ensemble(spec, seed, n_reps, false).unwrap();
    let t: Vec<f64> = (0..16).map(|k| k as f64 * PULSE_MS * 1e-3).collect();
    let samples: Vec<Vec<f64>> =
        ens.traces.iter().map(|tr| tr.windows.iter().map(|w| w.count as f64).collect()).collect();
    fit_monoexponential_ensemble(&t, &samples).unwrap()
}

#[test]
fn decay_rate_within_three_stderr() {
    let truth = 32.0 * POWER_UW;
    let trials = 100;
    let covered = (0..trials)
        .filter(|&s| {
            let fit = shelving_fit(1000 + s, 500);
            (fit.value("rate") - truth).abs() <= 3.0 * fit.stderr("rate")
        })
        .count();
    assert!(covered as f64 >= 0.95 * trials as f64, "{covered}/{trials}");
}

#[test]
fn decay_error_shrinks_as_inverse_sqrt_n() {
    let mean_err = |n: usize| (0..10).map(|s| shelving_fit(2000 + s, n).stderr("rate")).sum::<f64>() / 10.0;
    let ratio = mean_err(200) / mean_err(3200);
    // sqrt(3200 / 200) = 4
    assert!((3.2..=4.8).contains(&ratio), "{ratio}");
}

#[test]
fn wilson_interval_calibration() {
    let (bright_mean, dark_mean, f, n) = (15.0, 0.5, 0.7, 200usize);
    let bright = Poisson::new(bright_mean).unwrap();
    let dark = Poisson::new(dark_mean).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 500;
    let covered = (0..trials)
        .filter(|_| {
            let counts: Vec<u64> = (0..n)
                .map(|_| if rng.random::<f64>() < f { bright.sample(&mut rng) } else { dark.sample(&mut rng) } as u64)
                .collect();
            let e = estimate_population(&counts, 3).unwrap();
            e.lo <= f && f <= e.hi
        })
        .count();
    // Nominal 95%; three binomial sigma below is 0.92.
    assert!(covered as f64 >= 0.92 * trials as f64, "{covered}/{trials}");
}
