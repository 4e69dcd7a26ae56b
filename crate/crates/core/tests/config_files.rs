use std::path::PathBuf;

use proptest::prelude::*;

use pbv_charge::config::{load_config, parse_config, ExperimentConfig, OutputFormat, MAX_SEED};
use pbv_charge::pulse::PulseSpec;
use pbv_charge::rate_model::RateParams;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_equal_defaults() {
    let default = ExperimentConfig::default();
    assert_eq!(load_config(&configs_dir().join("default.toml")).unwrap(), default);
    let minimal = load_config(&configs_dir().join("minimal.toml")).unwrap();
    assert_eq!(minimal, default);
    assert_eq!(minimal.rates.k_shelve, 32.0);
}

fn positive() -> impl Strategy<Value = f64> {
    1e-3f64..1e3
}

prop_compose! {
    fn arb_config()(
        seed in 0..=MAX_SEED,
        n_reps in 1usize..5000,
        k_shelve in positive(),
        shelve_exponent in 0.5f64..3.0,
        k_repump in positive(),
        repump_exponent in 0.5f64..3.0,
        leak_ratio in 0.0f64..1.0,
        bright_rate in positive(),
        fwhm in 1.0f64..500.0,
        blue in (positive(), positive()),
        powers in prop::collection::vec(positive(), 2..6),
        threshold in 0u64..10,
        json in any::<bool>(),
    ) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            seed,
            n_reps,
            rates: RateParams { k_shelve, shelve_exponent, k_repump, repump_exponent, leak_ratio, ..RateParams::new(k_repump) },
            ..ExperimentConfig::default()
        };
        c.emission.bright_rate = bright_rate;
        c.line.fwhm_mhz = fwhm;
        c.sequence.blue = PulseSpec::new(blue.0, blue.1);
        c.fig2.durations_ms = powers.iter().map(|p| 10.0 / p).collect();
        c.fig2.powers_uw = powers;
        c.fig4.threshold = threshold;
        c.output.format = if json { OutputFormat::Json } else { OutputFormat::Csv };
        c
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_field_exact(c in arb_config()) {
        let text = c.to_toml();
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_content(c in arb_config(), bump in 1u64..1000) {
        let mut other = c.clone();
        other.seed = (c.seed + bump) % MAX_SEED;
        prop_assert_ne!(other.hash(), c.hash());
        let mut moved = c.clone();
        moved.output.dir = "elsewhere".into();
        prop_assert_eq!(moved.hash(), c.hash());
    }
}

#[test]
fn oversized_seed_rejected() {
    let config = ExperimentConfig { seed: MAX_SEED + 1, ..ExperimentConfig::default() };
    let err = config.validate().unwrap_err();
    assert!(err.to_string().contains("`seed`"), "{err}");
}
