use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lm::{LmOptions, Problem};

use super::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayWeighting {
    #[default]
    Unweighted,
    /// Relative weights `1 / max(y, 1)`.
    Poisson,
}

/// Least-squares fit of `y = A·exp(−Γ·t) + C` with `Γ >= 0`.
///
/// Parameters are reported as `amplitude`, `rate` (Hz when `t` is in
/// seconds) and `offset`. Standard errors are scaled by the residual
/// variance, so the weighting only sets relative point importance.
pub fn fit_monoexponential(t: &[f64], y: &[f64], weighting: DecayWeighting) -> Result<FitResult> {
    let weights: Option<Vec<f64>> = match weighting {
        DecayWeighting::Unweighted => None,
        DecayWeighting::Poisson => Some(y.iter().map(|v| 1.0 / v.max(1.0)).collect()),
    };
    fit_weighted(t, y, weights)
}

/// Unweighted fit of the mean curve of repeated measurements, where
/// `samples[r][k]` is repetition `r` at time `t[k]`.
///
/// Points of one repetition are correlated, so standard errors use the
/// sandwich covariance `(JᵀJ)⁻¹ Jᵀ Σ J (JᵀJ)⁻¹` with `Σ` the sample covariance
/// of the window means across repetitions.
pub fn fit_monoexponential_ensemble(t: &[f64], samples: &[Vec<f64>]) -> Result<FitResult> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 repetitions, got {n}")));
    }
    let m = t.len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::domain("every repetition must have one value per time point"));
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..m).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / nf).collect();
    let mut fit = fit_monoexponential(t, &mean, DecayWeighting::Unweighted)?;
    if fit.has_flag("constant_signal") {
        return Ok(fit);
    }

    let mut cov = DMatrix::<f64>::zeros(m, m);
    for s in samples {
        for i in 0..m {
            for j in 0..=i {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = cov[(i, j)] / ((nf - 1.0) * nf);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (a, g) = (fit.value("amplitude"), fit.value("rate"));
    let jac = DMatrix::from_fn(m, 3, |k, p| {
        let e = (-g * t[k]).exp();
        match p {
            0 => e,
            1 => -a * t[k] * e,
            _ => 1.0,
        }
    });
    let bread = (jac.transpose() * &jac).try_inverse();
    let errs: Vec<f64> = match bread {
        Some(b) => {
            let v = &b * jac.transpose() * &cov * &jac * &b;
            (0..3).map(|i| v[(i, i)].max(0.0).sqrt()).collect()
        }
        None => vec![f64::INFINITY; 3],
    };
    for (p, e) in fit.parameters.iter_mut().zip(errs) {
        p.stderr = e;
    }
    fit.flags.push("sandwich_errors".into());
    Ok(fit)
}

fn fit_weighted(t: &[f64], y: &[f64], weights: Option<Vec<f64>>) -> Result<FitResult> {
    const NAMES: [&str; 3] = ["amplitude", "rate", "offset"];
    if t.len() != y.len() {
        return Err(Error::domain("t and y must have equal length"));
    }
    if t.len() < 4 {
        return Err(Error::domain(format!("need at least 4 points, got {}", t.len())));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("t must be strictly increasing"));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite input"));
    }

    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if y_max - y_min <= 1e-14 * y_max.abs().max(1.0) {
        let mut fit = FitResult::new(&NAMES, &[0.0, 0.0, y[0]], &[0.0, 0.0, 0.0]);
        fit.flags.push("constant_signal".into());
        return Ok(fit);
    }

    // Rising curves are fitted with a negative amplitude.
    let rising = y[y.len() - 1] > y[0];
    let (a0, g0, c0) = if rising {
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let (a, g) = log_linear_start(t, &flipped, -y_max);
        (-a, g, y_max)
    } else {
        let (a, g) = log_linear_start(t, y, y_min);
        (a, g, y_min)
    };
    let t0 = t[0];
    let problem = Problem {
        x: t,
        y,
        weights: weights.as_deref(),
        model: move |x: f64, p: &[f64], g: &mut [f64]| {
            let e = (-p[1] * (x - t0)).exp();
            g[0] = e;
            g[1] = -p[0] * (x - t0) * e;
            g[2] = 1.0;
            p[0] * e + p[2]
        },
        lower: vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
        upper: vec![f64::INFINITY; 3],
    };
    let out = problem.solve(vec![a0, g0, c0], LmOptions::default());
    if !out.converged || out.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit {
            message: "mono-exponential fit did not converge".into(),
            iterations: out.iterations,
            residual_norm: out.ssr.sqrt(),
        });
    }
    let dof = (t.len() - 3) as f64;
    let stderr = out.standard_errors(out.ssr / dof);
    // The model is referenced to t0; shift the amplitude back to t = 0.
    let amplitude = out.params[0] * (out.params[1] * t0).exp();
    let amp_err = stderr[0] * (out.params[1] * t0).exp();
    let mut fit = FitResult::new(&NAMES, &[amplitude, out.params[1], out.params[2]], &[amp_err, stderr[1], stderr[2]]);
    fit.residual_norm = out.ssr.sqrt();
    fit.iterations = out.iterations;
    if out.params[1] == 0.0 {
        fit.flags.push("rate_at_bound".into());
    }
    Ok(fit)
}

/// Start values from a line through `ln(y − min y)` over the positive entries.
/// Returns `(amplitude at t[0], rate)`.
fn log_linear_start(t: &[f64], y: &[f64], y_min: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v - y_min > 0.0)
        .map(|(&ti, &v)| (ti - t[0], (v - y_min).ln()))
        .collect();
    let span = t[t.len() - 1] - t[0];
    let fallback = (y[0] - y_min, 1.0 / span);
    if pts.len() < 2 {
        return fallback;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return fallback;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return fallback;
    }
    ((my - slope * mx).exp(), -slope)
}
