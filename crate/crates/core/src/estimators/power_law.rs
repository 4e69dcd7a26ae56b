use crate::error::{Error, Result};
use crate::lm::{LmOptions, Problem};

use super::FitResult;

fn check_inputs(power: &[f64], rate: &[f64], rate_err: Option<&[f64]>, min_points: usize) -> Result<()> {
    if power.len() != rate.len() {
        return Err(Error::domain("power and rate lists must have equal length"));
    }
    if power.len() < min_points {
        return Err(Error::domain(format!(
            "need at least {min_points} points, got {}",
            power.len()
        )));
    }
    if let Some((p, g)) = power.iter().zip(rate).find(|(p, g)| !(**p > 0.0) || !(**g > 0.0)) {
        return Err(Error::domain(format!(
            "power and rate must be strictly positive, got P={p}, G={g}"
        )));
    }
    if let Some(err) = rate_err {
        if err.len() != rate.len() {
            return Err(Error::domain("rate_err must match rate length"));
        }
        if let Some(e) = err.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::domain(format!("rate errors must be positive, got {e}")));
        }
    }
    Ok(())
}

/// Log-space weights `(G/σ_G)²`, or unit weights when no errors are given.
fn log_weights(rate: &[f64], rate_err: Option<&[f64]>) -> Vec<f64> {
    match rate_err {
        Some(err) => rate.iter().zip(err).map(|(g, e)| (g / e).powi(2)).collect(),
        None => vec![1.0; rate.len()],
    }
}

/// Fit `G = c·P^n` by weighted linear regression of `ln G` on `ln P`.
///
/// With `rate_err`, the log-space standard deviations are `σ_G / G` and the
/// reported standard errors are absolute. Without, unit weights are used and
/// errors are scaled by the residual variance.
pub fn fit_power_law(power: &[f64], rate: &[f64], rate_err: Option<&[f64]>) -> Result<FitResult> {
    check_inputs(power, rate, rate_err, 3)?;
    let x: Vec<f64> = power.iter().map(|p| p.ln()).collect();
    let y: Vec<f64> = rate.iter().map(|g| g.ln()).collect();
    let w = log_weights(rate, rate_err);

    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * (xi - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("powers must not all be equal"));
    }
    let sxy: f64 = x.iter().zip(&y).zip(&w).map(|((xi, yi), wi)| wi * (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((xi, yi), wi)| wi * (yi - intercept - slope * xi).powi(2))
        .sum();
    let scale = if rate_err.is_some() { 1.0 } else { ssr / (x.len() - 2) as f64 };
    let var_slope = scale / sxx;
    let var_intercept = scale * (1.0 / sw + mx * mx / sxx);
    let coefficient = intercept.exp();

    let mut fit = FitResult::new(
        &["coefficient", "exponent"],
        &[coefficient, slope],
        &[coefficient * var_intercept.sqrt(), var_slope.sqrt()],
    );
    fit.residual_norm = ssr.sqrt();
    Ok(fit)
}

/// Coefficient of `G = c·P^n` with the exponent held at `exponent`.
pub fn fit_power_law_fixed_exponent(
    power: &[f64],
    rate: &[f64],
    rate_err: Option<&[f64]>,
    exponent: f64,
) -> Result<FitResult> {
    check_inputs(power, rate, rate_err, 1)?;
    let w = log_weights(rate, rate_err);
    let sw: f64 = w.iter().sum();
    let resid: Vec<f64> = power.iter().zip(rate).map(|(p, g)| g.ln() - exponent * p.ln()).collect();
    let log_c = resid.iter().zip(&w).map(|(r, wi)| r * wi).sum::<f64>() / sw;
    let ssr: f64 = resid.iter().zip(&w).map(|(r, wi)| wi * (r - log_c).powi(2)).sum();
    let scale = match (rate_err, power.len()) {
        (Some(_), _) => 1.0,
        (None, 1) => 0.0,
        (None, n) => ssr / (n - 1) as f64,
    };
    let c = log_c.exp();
    let mut fit = FitResult::new(&["coefficient", "exponent"], &[c, exponent], &[c * (scale / sw).sqrt(), 0.0]);
    fit.residual_norm = ssr.sqrt();
    fit.flags.push("exponent_fixed".into());
    Ok(fit)
}

/// Direct nonlinear least-squares fit of `G = c·P^n` in linear space, for
/// cross-checking the log-log estimate.
pub fn fit_power_law_nonlinear(power: &[f64], rate: &[f64], rate_err: Option<&[f64]>) -> Result<FitResult> {
    let start = fit_power_law(power, rate, rate_err)?;
    let weights: Option<Vec<f64>> = rate_err.map(|e| e.iter().map(|s| 1.0 / (s * s)).collect());
    let problem = Problem {
        x: power,
        y: rate,
        weights: weights.as_deref(),
        model: |p: f64, q: &[f64], g: &mut [f64]| {
            let pn = p.powf(q[1]);
            g[0] = pn;
            g[1] = q[0] * pn * p.ln();
            q[0] * pn
        },
        lower: vec![0.0, f64::NEG_INFINITY],
        upper: vec![f64::INFINITY; 2],
    };
    let out = problem.solve(
        vec![start.value("coefficient"), start.value("exponent")],
        LmOptions::default(),
    );
    if !out.converged {
        return Err(Error::Fit {
            message: "nonlinear power-law fit did not converge".into(),
            iterations: out.iterations,
            residual_norm: out.ssr.sqrt(),
        });
    }
    let scale = if rate_err.is_some() {
        1.0
    } else {
        out.ssr / (power.len() as f64 - 2.0).max(1.0)
    };
    let se = out.standard_errors(scale);
    let mut fit = FitResult::new(&["coefficient", "exponent"], &out.params, &se);
    fit.residual_norm = out.ssr.sqrt();
    fit.iterations = out.iterations;
    Ok(fit)
}
