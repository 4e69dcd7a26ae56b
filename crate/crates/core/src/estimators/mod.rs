//! Rate, exponent and population estimators.

mod counting;
mod decay;
mod linear;
mod power_law;
mod surface;

use serde::{Deserialize, Serialize};

pub use counting::{
    classify_state, discrimination_error, estimate_population, histogram_counts, poisson_cdf, wilson_interval,
    BrightDark, Histogram, PopulationEstimate, WindowFilter, DEFAULT_THRESHOLD,
};
pub use decay::{fit_monoexponential, fit_monoexponential_ensemble, DecayWeighting};
pub use linear::fit_line;
pub use power_law::{fit_power_law, fit_power_law_fixed_exponent, fit_power_law_nonlinear};
pub use surface::{population_surface, PopulationSurface, RowStatus, SaturationRow};

/// One fitted parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

/// Outcome of any estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<Parameter>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Diagnostic notes such as `constant_signal`.
    #[serde(default)]
    pub flags: Vec<String>,
}

impl FitResult {
    pub(crate) fn new(names: &[&str], values: &[f64], stderr: &[f64]) -> Self {
        Self {
            parameters: names
                .iter()
                .zip(values)
                .zip(stderr)
                .map(|((n, &v), &e)| Parameter { name: n.to_string(), value: v, stderr: e })
                .collect(),
            residual_norm: 0.0,
            converged: true,
            iterations: 0,
            flags: Vec::new(),
        }
    }

    fn param(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; NaN when absent.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.value)
    }

    pub fn stderr(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.stderr)
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}
