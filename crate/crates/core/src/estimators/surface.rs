//! Population versus repump power and duration, with per-power saturation
//! fits `p(t) = p∞·(1 − exp(−Γt))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmOptions, Problem};

use super::{estimate_population, FitResult, PopulationEstimate};

/// A row reaches saturation when `Γ·t_max` is at least this.
const SATURATION_DECAYS: f64 = 3.0;
/// Rows with fewer windows in any cell are flagged.
const MIN_WINDOWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Fewer than three distinct durations: the two-parameter fit is skipped.
    Skipped,
    /// Fit does not reach saturation within the sampled durations.
    Unsaturated,
    FitFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub power: f64,
    pub status: RowStatus,
    pub under_sampled: bool,
    pub fit: Option<FitResult>,
}

impl SaturationRow {
    pub fn p_inf(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.value("p_inf"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSurface {
    pub powers: Vec<f64>,
    pub durations_ms: Vec<f64>,
    /// `cells[power][duration]`
    pub cells: Vec<Vec<PopulationEstimate>>,
    pub rows: Vec<SaturationRow>,
    /// Largest `p∞` over rows with status `Ok`.
    pub max_p_inf: Option<f64>,
    pub max_p_inf_power: Option<f64>,
}

/// `counts[i][j]` holds the readout counts for `powers[i]`, `durations_ms[j]`.
pub fn population_surface(
    powers: &[f64],
    durations_ms: &[f64],
    counts: &[Vec<Vec<u64>>],
    threshold: u64,
) -> Result<PopulationSurface> {
    if counts.len() != powers.len() || counts.iter().any(|row| row.len() != durations_ms.len()) {
        return Err(Error::domain("count grid must be powers × durations"));
    }
    let mut cells = Vec::with_capacity(powers.len());
    let mut rows = Vec::with_capacity(powers.len());
    for (&power, row_counts) in powers.iter().zip(counts) {
        let row: Vec<PopulationEstimate> = row_counts
            .iter()
            .map(|c| estimate_population(c, threshold))
            .collect::<Result<_>>()?;
        let under_sampled = row_counts.iter().any(|c| c.len() < MIN_WINDOWS);
        let fractions: Vec<f64> = row.iter().map(|e| e.fraction).collect();
        rows.push(fit_row(power, durations_ms, &fractions, under_sampled));
        cells.push(row);
    }
    let best = rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok)
        .filter_map(|r| r.p_inf().map(|p| (p, r.power)))
        .fold(None, |acc: Option<(f64, f64)>, (p, pw)| match acc {
            Some((bp, _)) if bp >= p => acc,
            _ => Some((p, pw)),
        });
    Ok(PopulationSurface {
        powers: powers.to_vec(),
        durations_ms: durations_ms.to_vec(),
        cells,
        rows,
        max_p_inf: best.map(|b| b.0),
        max_p_inf_power: best.map(|b| b.1),
    })
}

fn fit_row(power: f64, durations_ms: &[f64], fractions: &[f64], under_sampled: bool) -> SaturationRow {
    let mut distinct: Vec<f64> = durations_ms.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return SaturationRow { power, status: RowStatus::Skipped, under_sampled, fit: None };
    }
    let t: Vec<f64> = durations_ms.iter().map(|d| d * 1e-3).collect();
    let t_max = t.iter().copied().fold(0.0, f64::max);
    let p0 = fractions.iter().copied().fold(0.0, f64::max).max(1e-3);
    // First duration reaching 1 − 1/e of the plateau sets the start rate.
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    let t_rise = order
        .iter()
        .find(|&&i| t[i] > 0.0 && fractions[i] >= 0.632 * p0)
        .map_or(t_max, |&i| t[i]);
    let g0 = 1.0 / t_rise.max(1e-9);

    let problem = Problem {
        x: &t,
        y: fractions,
        weights: None,
        model: |x: f64, p: &[f64], g: &mut [f64]| {
            let e = (-p[1] * x).exp();
            g[0] = 1.0 - e;
            g[1] = p[0] * x * e;
            p[0] * (1.0 - e)
        },
        lower: vec![0.0, 0.0],
        upper: vec![1.0, f64::INFINITY],
    };
    let out = problem.solve(vec![p0, g0], LmOptions::default());
    if !out.converged || out.params.iter().any(|v| !v.is_finite()) {
        return SaturationRow { power, status: RowStatus::FitFailed, under_sampled, fit: None };
    }
    let dof = (t.len() as f64 - 2.0).max(1.0);
    let se = out.standard_errors(out.ssr / dof);
    let mut fit = FitResult::new(&["p_inf", "rate"], &out.params, &se);
    fit.residual_norm = out.ssr.sqrt();
    fit.iterations = out.iterations;
    let status = if out.params[1] * t_max >= SATURATION_DECAYS {
        RowStatus::Ok
    } else {
        fit.flags.push("unsaturated".into());
        RowStatus::Unsaturated
    };
    if under_sampled {
        fit.flags.push("under_sampled".into());
    }
    SaturationRow { power, status, under_sampled, fit: Some(fit) }
}
