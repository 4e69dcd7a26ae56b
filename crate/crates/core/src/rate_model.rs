//! Power-law transition rates of the bright/dark charge cycle and the
//! closed-form two-state master-equation solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_k_shelve() -> f64 {
    32.0
}
fn default_one() -> f64 {
    1.0
}
fn default_two() -> f64 {
    2.0
}
fn default_leak_ratio() -> f64 {
    0.1236
}

/// Rate-law coefficients. Powers are in μW except the resonant laser (nW).
///
/// Bright to dark: `k_shelve·P_blue^m + resonant_shelve_rate·P_res + ρ·repump`.
/// Dark to bright: `k_repump·P_green^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    #[serde(default = "default_k_shelve")]
    pub k_shelve: f64,
    #[serde(default = "default_one")]
    pub shelve_exponent: f64,
    /// Required in every config: there is no measured value.
    pub k_repump: f64,
    #[serde(default = "default_two")]
    pub repump_exponent: f64,
    /// Dark-leak rate as a fraction of the instantaneous repump rate.
    #[serde(default = "default_leak_ratio")]
    pub leak_ratio: f64,
    /// Hz per nW of resonant power.
    #[serde(default)]
    pub resonant_shelve_rate: f64,
    /// Optional third (-2) charge state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_two: Option<NegTwoRates>,
}

/// Rates into and out of the -2 state. Entry is driven by blue light from
/// the bright state, exit by green light back to the bright state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegTwoRates {
    pub k_enter: f64,
    pub enter_exponent: f64,
    pub k_exit: f64,
    pub exit_exponent: f64,
}

impl RateParams {
    pub fn new(k_repump: f64) -> Self {
        Self {
            k_shelve: default_k_shelve(),
            shelve_exponent: 1.0,
            k_repump,
            repump_exponent: 2.0,
            leak_ratio: default_leak_ratio(),
            resonant_shelve_rate: 0.0,
            neg_two: None,
        }
    }

    /// Returns `(field, message)` for the first violated invariant.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let coeffs = [
            ("k_shelve", self.k_shelve),
            ("k_repump", self.k_repump),
            ("leak_ratio", self.leak_ratio),
            ("resonant_shelve_rate", self.resonant_shelve_rate),
        ];
        for (name, v) in coeffs {
            if !(v >= 0.0) || !v.is_finite() {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("shelve_exponent", self.shelve_exponent),
            ("repump_exponent", self.repump_exponent),
        ] {
            if !(v > 0.0 && v <= 4.0) {
                return Err((name, format!("must lie in (0, 4], got {v}")));
            }
        }
        if let Some(nt) = &self.neg_two {
            for (name, v) in [("neg_two.k_enter", nt.k_enter), ("neg_two.k_exit", nt.k_exit)] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err((name, format!("must be finite and >= 0, got {v}")));
                }
            }
            for (name, v) in [
                ("neg_two.enter_exponent", nt.enter_exponent),
                ("neg_two.exit_exponent", nt.exit_exponent),
            ] {
                if !(v > 0.0 && v <= 4.0) {
                    return Err((name, format!("must lie in (0, 4], got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::domain(format!("rates.{field} {msg}")))
    }
}

/// Laser powers applied at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    /// μW
    pub blue_power: f64,
    /// μW
    pub green_power: f64,
    /// nW
    pub resonant_power: f64,
}

impl Illumination {
    pub fn blue(p: f64) -> Self {
        Self { blue_power: p, ..Default::default() }
    }
    pub fn green(p: f64) -> Self {
        Self { green_power: p, ..Default::default() }
    }
    pub fn resonant(p: f64) -> Self {
        Self { resonant_power: p, ..Default::default() }
    }
}

fn power_law(coeff: f64, power: f64, exponent: f64) -> f64 {
    if power <= 0.0 || coeff == 0.0 {
        0.0
    } else {
        coeff * power.powf(exponent)
    }
}

/// Dark to bright rate (Hz).
pub fn repump_rate(params: &RateParams, illum: &Illumination) -> f64 {
    power_law(params.k_repump, illum.green_power, params.repump_exponent)
}

/// Total bright to dark rate (Hz), including the repump-proportional leak.
pub fn shelving_rate(params: &RateParams, illum: &Illumination) -> f64 {
    power_law(params.k_shelve, illum.blue_power, params.shelve_exponent)
        + params.resonant_shelve_rate * illum.resonant_power.max(0.0)
        + params.leak_ratio * repump_rate(params, illum)
}

/// Bright to -2 rate (Hz); zero unless the third state is enabled.
pub fn neg_two_entry_rate(params: &RateParams, illum: &Illumination) -> f64 {
    params
        .neg_two
        .map_or(0.0, |nt| power_law(nt.k_enter, illum.blue_power, nt.enter_exponent))
}

/// -2 to bright rate (Hz).
pub fn neg_two_exit_rate(params: &RateParams, illum: &Illumination) -> f64 {
    params
        .neg_two
        .map_or(0.0, |nt| power_law(nt.k_exit, illum.green_power, nt.exit_exponent))
}

/// Stationary bright probability `b / (a + b)`.
pub fn steady_state_bright(a: f64, b: f64) -> Result<f64> {
    if a < 0.0 || b < 0.0 {
        return Err(Error::domain(format!("rates must be non-negative, got a={a}, b={b}")));
    }
    if a + b == 0.0 {
        return Err(Error::UndefinedStationary);
    }
    Ok(b / (a + b))
}

/// Bright probability after time `t` starting from `p0`:
/// `p_ss + (p0 − p_ss)·exp(−(a+b)t)`.
pub fn evolve_population(p0: f64, a: f64, b: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::domain(format!("p0 must lie in [0, 1], got {p0}")));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    if a + b == 0.0 {
        return Ok(p0);
    }
    let p_ss = steady_state_bright(a, b)?;
    let p = p_ss + (p0 - p_ss) * (-(a + b) * t).exp();
    Ok(p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blue_only(k: f64) -> RateParams {
        RateParams { k_shelve: k, ..RateParams::new(0.0) }
    }

    #[test]
    fn shelving_examples() {
        let p = blue_only(32.0);
        assert_eq!(shelving_rate(&p, &Illumination::blue(10.0)), 320.0);
        assert!((shelving_rate(&p, &Illumination::blue(28.5)) - 912.0).abs() < 1e-9);
        let full = RateParams::new(0.3);
        assert_eq!(shelving_rate(&full, &Illumination::default()), 0.0);
        assert_eq!(repump_rate(&full, &Illumination::default()), 0.0);
    }

    #[test]
    fn repump_examples() {
        let p = RateParams { k_repump: 0.05, ..RateParams::new(0.05) };
        assert!((repump_rate(&p, &Illumination::green(20.0)) - 20.0).abs() < 1e-12);
        let q = RateParams { repump_exponent: 1.81, ..RateParams::new(0.7) };
        let ratio = repump_rate(&q, &Illumination::green(40.0)) / repump_rate(&q, &Illumination::green(20.0));
        assert!((ratio - 2f64.powf(1.81)).abs() < 1e-12);
        assert!((ratio - 3.51).abs() < 0.01);
    }

    #[test]
    fn steady_state_examples() {
        assert_eq!(steady_state_bright(100.0, 300.0).unwrap(), 0.75);
        assert_eq!(steady_state_bright(0.0, 5.0).unwrap(), 1.0);
        assert!(matches!(steady_state_bright(0.0, 0.0), Err(Error::UndefinedStationary)));
    }

    #[test]
    fn leak_ceiling_from_default_ratio() {
        let p = RateParams::new(0.05);
        for green in [1.0, 10.0, 50.0, 100.0] {
            let illum = Illumination::green(green);
            let pss = steady_state_bright(shelving_rate(&p, &illum), repump_rate(&p, &illum)).unwrap();
            assert!((pss - 1.0 / 1.1236).abs() < 1e-12);
            assert!((pss - 0.8900).abs() < 1e-4);
        }
    }

    #[test]
    fn evolve_examples() {
        let pss = 0.75;
        assert!((evolve_population(pss, 100.0, 300.0, 0.37).unwrap() - pss).abs() < 1e-15);
        let half = evolve_population(0.0, 0.0, 1000.0, 693.1e-6).unwrap();
        assert!((half - 0.5).abs() < 1e-4);
        assert_eq!(evolve_population(0.3, 10.0, 20.0, 0.0).unwrap(), 0.3);
        assert_eq!(evolve_population(0.3, 0.0, 0.0, 5.0).unwrap(), 0.3);
        assert!(evolve_population(1.3, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn shelving_linear_in_blue_power() {
        let p = blue_only(32.0);
        for i in 0..100 {
            let pw = 0.37 * i as f64;
            let r1 = shelving_rate(&p, &Illumination::blue(pw));
            let r2 = shelving_rate(&p, &Illumination::blue(2.0 * pw));
            assert!((r2 - 2.0 * r1).abs() <= 1e-12 * r2.max(1.0));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = RateParams::new(0.05);
        p.repump_exponent = 4.5;
        assert!(p.validate().is_err());
        p.repump_exponent = 2.0;
        p.k_shelve = -1.0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn repump_log_slope_equals_exponent(n in 0.2f64..4.0, p1 in 0.5f64..50.0, f in 1.1f64..20.0) {
            let params = RateParams { repump_exponent: n, ..RateParams::new(0.05) };
            let r1 = repump_rate(&params, &Illumination::green(p1));
            let r2 = repump_rate(&params, &Illumination::green(p1 * f));
            let slope = (r2 / r1).ln() / f.ln();
            prop_assert!((slope - n).abs() < 1e-9);
        }

        #[test]
        fn evolve_bounded_and_monotone(p0 in 0.0f64..=1.0, a in 0.0f64..1e4, b in 0.0f64..1e4, t in 0.0f64..0.1, dt in 0.0f64..0.1) {
            let p1 = evolve_population(p0, a, b, t).unwrap();
            let p2 = evolve_population(p0, a, b, t + dt).unwrap();
            prop_assert!((0.0..=1.0).contains(&p1));
            if a + b > 0.0 {
                let pss = steady_state_bright(a, b).unwrap();
                prop_assert!((p2 - pss).abs() <= (p1 - pss).abs() + 1e-12);
            }
        }
    }
}
