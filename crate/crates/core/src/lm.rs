//! Small dense Levenberg–Marquardt solver for weighted curve fits with box
//! bounds. Bounds are enforced by projecting each trial step.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative drop in the weighted SSR is below this.
    pub ftol: f64,
    /// Stop when the relative parameter step is below this.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-14,
            xtol: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `(JᵀWJ)⁻¹` at the solution, unscaled. `None` if singular.
    pub inverse_hessian: Option<DMatrix<f64>>,
    /// Weighted sum of squared residuals.
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    /// Standard errors `sqrt(scale · diag((JᵀWJ)⁻¹))`; infinite when singular.
    pub fn standard_errors(&self, scale: f64) -> Vec<f64> {
        let n = self.params.len();
        match &self.inverse_hessian {
            Some(cov) => (0..n).map(|i| (scale * cov[(i, i)]).max(0.0).sqrt()).collect(),
            None => vec![f64::INFINITY; n],
        }
    }
}

/// Curve-fitting problem: data, weights and a model with analytic gradient.
pub struct Problem<'a, F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64,
{
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Inverse variances; `None` means unit weights.
    pub weights: Option<&'a [f64]>,
    /// `model(x, params, grad) -> value`, writing ∂value/∂params into `grad`.
    pub model: F,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl<'a, F> Problem<'a, F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64,
{
    fn project(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn ssr(&self, p: &[f64]) -> f64 {
        let mut grad = vec![0.0; p.len()];
        self.x
            .iter()
            .zip(self.y)
            .enumerate()
            .map(|(i, (&x, &y))| {
                let r = y - (self.model)(x, p, &mut grad);
                self.weight(i) * r * r
            })
            .sum()
    }

    /// Returns `(JᵀWJ, JᵀWr, ssr)`.
    fn linearize(&self, p: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
        let n = p.len();
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtr = DVector::<f64>::zeros(n);
        let mut grad = vec![0.0; n];
        let mut ssr = 0.0;
        for (i, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
            let w = self.weight(i);
            let r = y - (self.model)(x, p, &mut grad);
            ssr += w * r * r;
            for a in 0..n {
                jtr[a] += w * grad[a] * r;
                for b in a..n {
                    jtj[(a, b)] += w * grad[a] * grad[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }
        (jtj, jtr, ssr)
    }

    pub fn solve(&self, initial: Vec<f64>, opts: LmOptions) -> LmOutcome {
        let n = initial.len();
        assert_eq!(self.lower.len(), n);
        assert_eq!(self.upper.len(), n);
        let mut p = initial;
        self.project(&mut p);
        let (mut jtj, mut jtr, mut ssr) = self.linearize(&p);
        let scale_y: f64 = self.y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        let mut lambda = opts.initial_lambda;
        let mut converged = false;
        let mut iterations = 0;

        while iterations < opts.max_iterations {
            iterations += 1;
            if ssr <= 1e-30 * scale_y {
                converged = true;
                break;
            }
            let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
            let mut accepted = false;
            while lambda < 1e16 {
                let mut a = jtj.clone();
                for i in 0..n {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(v, d)| v + d).collect();
                self.project(&mut trial);
                let trial_ssr = self.ssr(&trial);
                if trial_ssr.is_finite() && trial_ssr <= ssr {
                    let rel_step = p
                        .iter()
                        .zip(&trial)
                        .map(|(old, new)| (new - old).abs() / (old.abs() + 1e-12))
                        .fold(0.0, f64::max);
                    let rel_drop = (ssr - trial_ssr) / ssr.max(f64::MIN_POSITIVE);
                    p = trial;
                    (jtj, jtr, ssr) = self.linearize(&p);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel_drop < opts.ftol || rel_step < opts.xtol {
                        converged = true;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                // No downhill step at any damping: stationary point under the bounds.
                converged = true;
            }
            if converged {
                break;
            }
        }

        LmOutcome {
            inverse_hessian: jtj.try_inverse(),
            params: p,
            ssr,
            iterations,
            converged,
        }
    }
}
