use crate::error::{Error, Result};

use super::FitResult;

/// Weighted straight-line fit `y = slope·x + intercept`.
///
/// With `y_err` the weights are `1/σ²` and the standard errors are absolute;
/// without, unit weights and residual-scaled errors.
pub fn fit_line(x: &[f64], y: &[f64], y_err: Option<&[f64]>) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::domain("x and y must have equal length"));
    }
    if x.len() < 3 {
        return Err(Error::domain(format!("need at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite input"));
    }
    let w: Vec<f64> = match y_err {
        Some(err) => {
            if err.len() != y.len() {
                return Err(Error::domain("y_err must match y length"));
            }
            if let Some(e) = err.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
                return Err(Error::domain(format!("errors must be positive, got {e}")));
            }
            err.iter().map(|e| 1.0 / (e * e)).collect()
        }
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * (xi - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("x values must not all be equal"));
    }
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((xi, yi), wi)| wi * (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((xi, yi), wi)| wi * (yi - intercept - slope * xi).powi(2))
        .sum();
    let scale = if y_err.is_some() { 1.0 } else { ssr / (x.len() - 2) as f64 };
    let mut fit = FitResult::new(
        &["slope", "intercept"],
        &[slope, intercept],
        &[(scale / sxx).sqrt(), (scale * (1.0 / sw + mx * mx / sxx)).sqrt()],
    );
    fit.residual_norm = ssr.sqrt();
    Ok(fit)
}
