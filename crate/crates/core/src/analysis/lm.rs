//! Damped Gauss–Newton (Levenberg–Marquardt) for small weighted problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) const MAX_ITERATIONS: usize = 200;
const STEP_TOL: f64 = 1e-8;

type ModelFn<'a> = dyn Fn(&[f64], f64) -> f64 + 'a;
type JacobianFn<'a> = dyn Fn(&[f64], f64, &mut [f64]) + 'a;
type ProjectFn<'a> = dyn Fn(&mut [f64]) + 'a;

pub(crate) struct Problem<'a> {
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    /// Per-point weights `1/σ`.
    pub weights: &'a [f64],
    pub model: &'a ModelFn<'a>,
    /// Analytic derivatives; central differences when absent.
    pub jacobian: Option<&'a JacobianFn<'a>>,
    /// Maps a trial parameter vector back into the feasible region.
    pub project: Option<&'a ProjectFn<'a>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub params: Vec<f64>,
    /// Covariance scaled by the reduced χ², so it does not depend on the
    /// absolute size of the error bars.
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    /// Condition number of the parameter-scaled normal matrix.
    pub condition: f64,
}

impl Solution {
    pub fn std_err(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.xs.len(),
            self.xs
                .iter()
                .zip(self.ys)
                .zip(self.weights)
                .map(|((&x, &y), &w)| (y - (self.model)(p, x)) * w),
        )
    }

    fn jacobian_matrix(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.xs.len();
        let m = p.len();
        let mut jac = DMatrix::zeros(n, m);
        let mut row = vec![0.0; m];
        match self.jacobian {
            Some(f) => {
                for (i, &x) in self.xs.iter().enumerate() {
                    f(p, x, &mut row);
                    for j in 0..m {
                        jac[(i, j)] = row[j] * self.weights[i];
                    }
                }
            }
            None => {
                let mut hi = p.to_vec();
                let mut lo = p.to_vec();
                for j in 0..m {
                    let h = 6e-6 * p[j].abs().max(1e-3);
                    hi[j] = p[j] + h;
                    lo[j] = p[j] - h;
                    for (i, &x) in self.xs.iter().enumerate() {
                        let d = ((self.model)(&hi, x) - (self.model)(&lo, x)) / (2.0 * h);
                        jac[(i, j)] = d * self.weights[i];
                    }
                    hi[j] = p[j];
                    lo[j] = p[j];
                }
            }
        }
        jac
    }
}

fn chi2(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

pub(crate) fn solve(problem: &Problem<'_>, init: &[f64]) -> Result<Solution> {
    let n = problem.xs.len();
    let m = init.len();
    if n < m {
        return Err(Error::FitInput(format!("{n} points for {m} parameters")));
    }
    let mut p = init.to_vec();
    if let Some(proj) = problem.project {
        proj(&mut p);
    }
    let mut r = problem.residuals(&p);
    let mut cost = chi2(&r);
    if !cost.is_finite() {
        return Err(Error::FitInput("model not finite at the initial guess".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let jac = problem.jacobian_matrix(&p);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if cost == 0.0 || grad.amax() <= 1e-300 {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for j in 0..m {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-300);
            }
            let Some(step) = a.clone().cholesky().map(|c| c.solve(&grad)).or_else(|| a.lu().solve(&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(proj) = problem.project {
                proj(&mut trial);
            }
            let r_trial = problem.residuals(&trial);
            let cost_trial = chi2(&r_trial);
            if cost_trial.is_finite() && cost_trial <= cost {
                let step_norm: f64 = trial
                    .iter()
                    .zip(&p)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let p_norm: f64 = p.iter().map(|a| a * a).sum::<f64>().sqrt();
                p = trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step_norm <= STEP_TOL * p_norm.max(1e-300) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual_norm: cost.sqrt(),
        });
    }

    let jac = problem.jacobian_matrix(&p);
    let jtj = jac.transpose() * &jac;
    let dof = (n - m).max(1) as f64;
    let scale = if n > m { cost / dof } else { 1.0 };
    let covariance = jtj
        .clone()
        .try_inverse()
        .map(|inv| inv * scale)
        .unwrap_or_else(|| DMatrix::from_element(m, m, f64::INFINITY));

    // condition number with parameters scaled to unit magnitude
    let mut scaled = jtj;
    for i in 0..m {
        for j in 0..m {
            scaled[(i, j)] *= p[i].abs().max(1e-12) * p[j].abs().max(1e-12);
        }
    }
    let ev = scaled.symmetric_eigenvalues();
    let max_ev = ev.iter().copied().fold(0.0, f64::max);
    let min_ev = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };

    Ok(Solution {
        params: p,
        covariance,
        residual_norm: cost.sqrt(),
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let w = vec![1.0; 10];
        let model = |p: &[f64], x: f64| p[0] * x + p[1];
        let prob = Problem {
            xs: &xs,
            ys: &ys,
            weights: &w,
            model: &model,
            jacobian: None,
            project: None,
        };
        let sol = solve(&prob, &[0.0, 0.0]).unwrap();
        assert!((sol.params[0] - 2.0).abs() < 1e-9);
        assert!((sol.params[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let xs = [1.0];
        let ys = [1.0];
        let w = [1.0];
        let model = |p: &[f64], x: f64| p[0] * x + p[1];
        let prob = Problem {
            xs: &xs,
            ys: &ys,
            weights: &w,
            model: &model,
            jacobian: None,
            project: None,
        };
        assert!(solve(&prob, &[0.0, 0.0]).is_err());
    }
}
