//! Photon-energy budget of the charge cycle.
//!
//! Each charge transition of the center has an optical threshold energy. A
//! laser at wavelength `λ` drives it with the smallest number of photons whose
//! summed energy reaches the threshold. Comparing those orders with the
//! measured power-law exponents identifies which dark state is involved.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Photon energy times wavelength, in eV·nm.
pub const HC_EV_NM: f64 = 1239.84193;

/// Diamond band gap in eV.
pub const DIAMOND_BAND_GAP_EV: f64 = 5.47;

/// Default cap on the number of photons considered for a single transition.
pub const DEFAULT_MAX_ORDER: u32 = 2;

pub const BLUE_NM: f64 = 445.0;
pub const GREEN_NM: f64 = 532.0;

/// Charge state of the center. Only `NegOne` fluoresces under resonant excitation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChargeState {
    NegOne,
    Neutral,
    NegTwo,
}

impl ChargeState {
    pub fn is_bright(self) -> bool {
        self == ChargeState::NegOne
    }

    pub fn label(self) -> &'static str {
        match self {
            ChargeState::NegOne => "-1",
            ChargeState::Neutral => "0",
            ChargeState::NegTwo => "-2",
        }
    }
}

impl fmt::Display for ChargeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The four optically driven transitions of the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    NegToNeutral,
    NegToNegTwo,
    NeutralToNeg,
    NegTwoToNeg,
}

impl Transition {
    pub const ALL: [Transition; 4] = [
        Transition::NegToNeutral,
        Transition::NegToNegTwo,
        Transition::NeutralToNeg,
        Transition::NegTwoToNeg,
    ];

    pub fn endpoints(self) -> (ChargeState, ChargeState) {
        use ChargeState::*;
        match self {
            Transition::NegToNeutral => (NegOne, Neutral),
            Transition::NegToNegTwo => (NegOne, NegTwo),
            Transition::NeutralToNeg => (Neutral, NegOne),
            Transition::NegTwoToNeg => (NegTwo, NegOne),
        }
    }

    pub fn label(self) -> String {
        let (from, to) = self.endpoints();
        format!("{from}->{to}")
    }
}

/// Optical threshold energies (eV) of the four transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionThresholds {
    pub neg_to_neutral: f64,
    pub neg_to_negtwo: f64,
    pub neutral_to_neg: f64,
    pub negtwo_to_neg: f64,
}

impl Default for TransitionThresholds {
    fn default() -> Self {
        Self {
            neg_to_neutral: 2.6,
            neg_to_negtwo: 3.5,
            neutral_to_neg: 2.9,
            negtwo_to_neg: 2.0,
        }
    }
}

impl TransitionThresholds {
    pub fn get(&self, transition: Transition) -> f64 {
        match transition {
            Transition::NegToNeutral => self.neg_to_neutral,
            Transition::NegToNegTwo => self.neg_to_negtwo,
            Transition::NeutralToNeg => self.neutral_to_neg,
            Transition::NegTwoToNeg => self.negtwo_to_neg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Transition::ALL {
            let e = self.get(t);
            if !(e > 0.0 && e < DIAMOND_BAND_GAP_EV) {
                return Err(Error::domain(format!(
                    "threshold for {} must lie in (0, {DIAMOND_BAND_GAP_EV}) eV, got {e}",
                    t.label()
                )));
            }
        }
        Ok(())
    }
}

/// Minimal number of photons needed to drive a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhotonOrder {
    Order(u32),
    Infeasible,
}

impl PhotonOrder {
    pub fn order(self) -> Option<u32> {
        match self {
            PhotonOrder::Order(n) => Some(n),
            PhotonOrder::Infeasible => None,
        }
    }
}

impl fmt::Display for PhotonOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhotonOrder::Order(n) => write!(f, "{n}"),
            PhotonOrder::Infeasible => f.write_str("infeasible"),
        }
    }
}

/// Which charge state the dark state is, given the observed photon orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DarkStateHypothesis {
    Neutral,
    NegTwo,
    Undetermined,
}

pub fn photon_energy(wavelength_nm: f64) -> Result<f64> {
    if !(wavelength_nm > 0.0) || !wavelength_nm.is_finite() {
        return Err(Error::domain(format!(
            "wavelength must be positive, got {wavelength_nm} nm"
        )));
    }
    Ok(HC_EV_NM / wavelength_nm)
}

/// `ceil(threshold / photon_energy)`, or `Infeasible` above `max_order`.
pub fn min_photon_order(threshold_ev: f64, wavelength_nm: f64, max_order: u32) -> Result<PhotonOrder> {
    if !(threshold_ev > 0.0) || !threshold_ev.is_finite() {
        return Err(Error::domain(format!(
            "threshold must be positive, got {threshold_ev} eV"
        )));
    }
    if max_order < 1 {
        return Err(Error::domain("max_order must be at least 1"));
    }
    let photon = photon_energy(wavelength_nm)?;
    let order = (threshold_ev / photon).ceil();
    if order > f64::from(max_order) {
        Ok(PhotonOrder::Infeasible)
    } else {
        Ok(PhotonOrder::Order(order.max(1.0) as u32))
    }
}

/// Shelving is one-photon in blue and repump two-photon in green only for
/// the neutral dark state; the reverse pattern points at the -2 state.
pub fn classify_dark_state(
    shelve_order_blue: PhotonOrder,
    repump_order_green: PhotonOrder,
) -> Result<DarkStateHypothesis> {
    match (shelve_order_blue, repump_order_green) {
        (PhotonOrder::Order(1), PhotonOrder::Order(2)) => Ok(DarkStateHypothesis::Neutral),
        (PhotonOrder::Order(2), PhotonOrder::Order(1)) => Ok(DarkStateHypothesis::NegTwo),
        (PhotonOrder::Order(_), PhotonOrder::Order(_)) => Ok(DarkStateHypothesis::Undetermined),
        _ => Err(Error::domain("cannot classify dark state from an infeasible photon order")),
    }
}

/// One row of the photon-order table.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub transition: Transition,
    pub threshold_ev: f64,
    pub wavelength_nm: f64,
    pub photon_ev: f64,
    pub order: PhotonOrder,
}

/// Photon orders for every transition at both control wavelengths.
pub fn photon_order_table(thresholds: &TransitionThresholds, max_order: u32) -> Result<Vec<OrderRow>> {
    thresholds.validate()?;
    let mut rows = Vec::with_capacity(8);
    for transition in Transition::ALL {
        for wavelength_nm in [BLUE_NM, GREEN_NM] {
            let threshold_ev = thresholds.get(transition);
            rows.push(OrderRow {
                transition,
                threshold_ev,
                wavelength_nm,
                photon_ev: photon_energy(wavelength_nm)?,
                order: min_photon_order(threshold_ev, wavelength_nm, max_order)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn photon_energies() {
        assert!((photon_energy(445.0).unwrap() - 2.786).abs() < 5e-4);
        assert!((photon_energy(532.0).unwrap() - 2.331).abs() < 5e-4);
        assert!((photon_energy(HC_EV_NM).unwrap() - 1.0).abs() < 1e-12);
        assert!(photon_energy(0.0).is_err());
        assert!(photon_energy(-3.0).is_err());
    }

    #[test]
    fn orders_from_mechanism() {
        assert_eq!(min_photon_order(2.6, 445.0, 2).unwrap(), PhotonOrder::Order(1));
        assert_eq!(min_photon_order(2.9, 532.0, 2).unwrap(), PhotonOrder::Order(2));
        assert_eq!(min_photon_order(2.0, 532.0, 2).unwrap(), PhotonOrder::Order(1));
        assert_eq!(min_photon_order(3.5, 445.0, 1).unwrap(), PhotonOrder::Infeasible);
        assert!(min_photon_order(0.0, 445.0, 2).is_err());
        assert!(min_photon_order(2.0, 445.0, 0).is_err());
    }

    #[test]
    fn dark_state_logic() {
        use PhotonOrder::*;
        assert_eq!(classify_dark_state(Order(1), Order(2)).unwrap(), DarkStateHypothesis::Neutral);
        assert_eq!(classify_dark_state(Order(2), Order(1)).unwrap(), DarkStateHypothesis::NegTwo);
        assert_eq!(
            classify_dark_state(Order(1), Order(1)).unwrap(),
            DarkStateHypothesis::Undetermined
        );
        assert!(classify_dark_state(Infeasible, Order(1)).is_err());
    }

    #[test]
    fn table_has_eight_rows() {
        let rows = photon_order_table(&TransitionThresholds::default(), DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(rows.len(), 8);
    }

    #[test]
    fn thresholds_above_gap_rejected() {
        let t = TransitionThresholds {
            neg_to_negtwo: 6.0,
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn energy_strictly_decreasing_on_grid() {
        let grid: Vec<f64> = (1..400).map(|i| 200.0 + 2.5 * i as f64).collect();
        for w in grid.windows(2) {
            assert!(photon_energy(w[0]).unwrap() > photon_energy(w[1]).unwrap());
        }
    }

    #[test]
    fn order_brackets_threshold_brute_force() {
        // Smallest k with k·E >= threshold, found by counting up.
        for ti in 1..60 {
            let threshold = 0.1 * ti as f64;
            for wavelength in [300.0, 405.0, 445.0, 488.0, 532.0, 637.0, 780.0] {
                let e = HC_EV_NM / wavelength;
                let mut k = 1u32;
                while f64::from(k) * e < threshold {
                    k += 1;
                }
                let expect = if k > 3 { PhotonOrder::Infeasible } else { PhotonOrder::Order(k) };
                assert_eq!(min_photon_order(threshold, wavelength, 3).unwrap(), expect);
                if let PhotonOrder::Order(n) = expect {
                    assert!(f64::from(n) * e >= threshold);
                    assert!(f64::from(n - 1) * e < threshold);
                }
            }
        }
    }

    fn order_value(o: PhotonOrder) -> u32 {
        o.order().unwrap_or(u32::MAX)
    }

    proptest! {
        #[test]
        fn order_monotone_in_threshold(t1 in 0.1f64..5.0, dt in 0.0f64..2.0, w in 250.0f64..900.0) {
            let a = order_value(min_photon_order(t1, w, 4).unwrap());
            let b = order_value(min_photon_order(t1 + dt, w, 4).unwrap());
            prop_assert!(a <= b);
        }

        #[test]
        fn order_monotone_in_wavelength(t in 0.1f64..5.0, w1 in 250.0f64..900.0, dw in 0.0f64..300.0) {
            let a = order_value(min_photon_order(t, w1, 4).unwrap());
            let b = order_value(min_photon_order(t, w1 + dw, 4).unwrap());
            prop_assert!(a <= b);
        }
    }
}
