//! Curve fitting and post-processing of memory traces.
//!
//! Points are passed as `(x, value, err)` triples. Errors are one-sigma; an
//! all-zero error column means an unweighted fit.

mod lm;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::MemoryTrace;
use lm::{solve, Problem};

/// Corrected values above this are clipped.
pub const CORRECTION_CAP: f64 = 1.05;
/// Correction factors below this mark a checkpoint unreliable.
pub const MIN_CORRECTION_FACTOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub amplitude_err: f64,
    /// 1/e decay constant in the units of the x column; `+∞` if no decay.
    pub n_1e: f64,
    pub n_1e_err: f64,
    pub residual_norm: f64,
    pub no_decay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub center: f64,
    pub center_err: f64,
    pub width: f64,
    pub width_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub offset: f64,
    pub offset_err: f64,
    pub residual_norm: f64,
    /// No significant peak in the data.
    pub flat: bool,
}

/// `w·e^(−t/t_fast) + (1−w)·e^(−t/t_slow)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleExpFit {
    pub weight: f64,
    pub weight_err: f64,
    pub t_fast: f64,
    pub t_fast_err: f64,
    pub t_slow: f64,
    pub t_slow_err: f64,
    pub residual_norm: f64,
    /// The data carry only one timescale; `t_slow` is then meaningless.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub delta_omega_khz: f64,
    pub n_1e: f64,
    pub err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub tau_us: f64,
    pub tau_err: f64,
    pub c_khz: f64,
    pub c_err: f64,
    pub residual_norm: f64,
    /// Large values signal the (τ, C) ridge.
    pub condition_number: f64,
}

fn weights(errs: &[f64]) -> Result<Vec<f64>> {
    if errs.iter().any(|e| e.is_nan() || *e < 0.0) {
        return Err(Error::FitInput("errors must be non-negative numbers".into()));
    }
    if errs.iter().all(|e| e.is_infinite()) {
        return Err(Error::FitInput("all weights are zero".into()));
    }
    if errs.iter().all(|&e| e == 0.0) {
        return Ok(vec![1.0; errs.len()]);
    }
    let floor = errs
        .iter()
        .copied()
        .filter(|&e| e > 0.0 && e.is_finite())
        .fold(f64::INFINITY, f64::min);
    Ok(errs
        .iter()
        .map(|&e| if e == 0.0 { 1.0 / floor } else { 1.0 / e })
        .collect())
}

fn split(points: &[(f64, f64, f64)]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::FitInput("non-finite data point".into()));
    }
    let xs = points.iter().map(|p| p.0).collect();
    let ys = points.iter().map(|p| p.1).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok((xs, ys, weights(&errs)?))
}

/// Weighted linear regression `y = a + b·x`.
fn linear_regression(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<(f64, f64)> {
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        s += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = s * sxx - sx * sx;
    if s <= 0.0 || det.abs() <= 1e-300 {
        return None;
    }
    Some(((sxx * sy - sx * sxy) / det, (s * sxy - sx * sy) / det))
}

/// Log-linear estimate of `(A, k)` in `A·e^(−k·x)`.
fn log_linear_guess(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<(f64, f64)> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut lw = Vec::new();
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        if y > 0.0 {
            lx.push(x);
            ly.push(y.ln());
            lw.push((y * w).powi(2));
        }
    }
    if lx.len() < 2 {
        return None;
    }
    linear_regression(&lx, &ly, &lw).map(|(a, b)| (a.exp(), -b))
}

/// Weighted fit of `value = A·exp(−N/N₁/ₑ)` with `A ∈ (0, 1.05]`.
pub fn fit_exponential(points: &[(f64, f64, f64)]) -> Result<DecayFit> {
    if points.len() < 3 {
        return Err(Error::FitInput(format!("need at least 3 points, got {}", points.len())));
    }
    let (xs, ys, ws) = split(points)?;
    let x_span = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let (a0, k0) = log_linear_guess(&xs, &ys, &ws).unwrap_or((1.0, 1.0 / x_span));
    let init = [a0.clamp(1e-6, CORRECTION_CAP), k0.max(0.0)];

    let model = |p: &[f64], x: f64| p[0] * (-p[1] * x).exp();
    let jac = |p: &[f64], x: f64, out: &mut [f64]| {
        let e = (-p[1] * x).exp();
        out[0] = e;
        out[1] = -p[0] * x * e;
    };
    let project = |p: &mut [f64]| {
        p[0] = p[0].clamp(1e-12, CORRECTION_CAP);
        p[1] = p[1].max(0.0);
    };
    let sol = solve(
        &Problem {
            xs: &xs,
            ys: &ys,
            weights: &ws,
            model: &model,
            jacobian: Some(&jac),
            project: Some(&project),
        },
        &init,
    )?;
    let (a, k) = (sol.params[0], sol.params[1]);
    let no_decay = k * x_span <= 1e-12;
    let (n_1e, n_1e_err) = if no_decay {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (1.0 / k, sol.std_err(1) / (k * k))
    };
    Ok(DecayFit {
        amplitude: a,
        amplitude_err: sol.std_err(0),
        n_1e,
        n_1e_err,
        residual_norm: sol.residual_norm,
        no_decay,
    })
}

/// Fit of `value = A·exp(−(x−c)²/(2w²)) + offset`.
pub fn fit_gaussian_peak(points: &[(f64, f64, f64)]) -> Result<GaussianFit> {
    if points.len() < 4 {
        return Err(Error::FitInput(format!("need at least 4 points, got {}", points.len())));
    }
    let (xs, ys, ws) = split(points)?;
    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs()).max(1e-300);

    if hi - lo <= 1e-12 * scale {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        return Ok(GaussianFit {
            center: 0.5 * (x_min + x_max),
            center_err: f64::INFINITY,
            width: f64::INFINITY,
            width_err: f64::INFINITY,
            amplitude: 0.0,
            amplitude_err: 0.0,
            offset: mean,
            offset_err: 0.0,
            residual_norm: 0.0,
            flat: true,
        });
    }

    let peak = ys
        .iter()
        .enumerate()
        .fold(0, |best, (i, &y)| if y > ys[best] { i } else { best });
    let c0 = xs[peak];
    let (mut m0, mut m2) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(&ys) {
        m0 += y - lo;
        m2 += (y - lo) * (x - c0).powi(2);
    }
    let mut w0 = if m0 > 0.0 { (m2 / m0).sqrt() } else { 0.0 };
    if !(w0 > 0.0) {
        w0 = 0.25 * (x_max - x_min).max(1e-12);
    }
    let init = [hi - lo, c0, w0, lo];

    let model = |p: &[f64], x: f64| p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp() + p[3];
    let jac = |p: &[f64], x: f64, out: &mut [f64]| {
        let d = x - p[1];
        let w2 = p[2] * p[2];
        let g = (-d * d / (2.0 * w2)).exp();
        out[0] = g;
        out[1] = p[0] * g * d / w2;
        out[2] = p[0] * g * d * d / (w2 * p[2]);
        out[3] = 1.0;
    };
    let project = |p: &mut [f64]| {
        p[2] = p[2].abs().max(1e-12);
    };
    let sol = solve(
        &Problem {
            xs: &xs,
            ys: &ys,
            weights: &ws,
            model: &model,
            jacobian: Some(&jac),
            project: Some(&project),
        },
        &init,
    )?;
    let amplitude_err = sol.std_err(0);
    Ok(GaussianFit {
        amplitude: sol.params[0],
        amplitude_err,
        center: sol.params[1],
        center_err: sol.std_err(1),
        width: sol.params[2],
        width_err: sol.std_err(2),
        offset: sol.params[3],
        offset_err: sol.std_err(3),
        residual_norm: sol.residual_norm,
        flat: sol.params[0].abs() < 2.0 * amplitude_err,
    })
}

fn fit_single_decay_fixed_amplitude(xs: &[f64], ys: &[f64], ws: &[f64], t0: f64) -> Result<(f64, f64, f64)> {
    let model = |p: &[f64], x: f64| (-x / p[0]).exp();
    let jac = |p: &[f64], x: f64, out: &mut [f64]| {
        out[0] = (-x / p[0]).exp() * x / (p[0] * p[0]);
    };
    let project = |p: &mut [f64]| p[0] = p[0].abs().max(1e-12);
    let sol = solve(
        &Problem {
            xs,
            ys,
            weights: ws,
            model: &model,
            jacobian: Some(&jac),
            project: Some(&project),
        },
        &[t0],
    )?;
    Ok((sol.params[0], sol.std_err(0), sol.residual_norm))
}

/// Fit of `w·e^(−x/t_fast) + (1−w)·e^(−x/t_slow)`; the two timescales are
/// ordered after the fit.
pub fn fit_double_exponential(points: &[(f64, f64, f64)]) -> Result<DoubleExpFit> {
    if points.len() < 4 {
        return Err(Error::FitInput(format!("need at least 4 points, got {}", points.len())));
    }
    let (xs, ys, ws) = split(points)?;
    let x_max = xs.iter().copied().fold(0.0f64, f64::max).max(1e-300);

    // tail first, then the fast part from what the tail does not explain
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let half = order.len() / 2;
    let tail: Vec<usize> = order[half..].to_vec();
    let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let (b0, ks) = log_linear_guess(&pick(&tail, &xs), &pick(&tail, &ys), &pick(&tail, &ws))
        .unwrap_or((0.25, 2.0 / x_max));
    let ts0 = if ks > 0.0 { 1.0 / ks } else { x_max };
    let w0 = (1.0 - b0).clamp(0.05, 0.95);
    let head: Vec<usize> = order[..half.max(2)].to_vec();
    let resid: Vec<f64> = head.iter().map(|&i| ys[i] - b0 * (-xs[i] / ts0).exp()).collect();
    let tf0 = log_linear_guess(&pick(&head, &xs), &resid, &pick(&head, &ws))
        .and_then(|(_, k)| (k > 0.0 && 1.0 / k < ts0).then(|| 1.0 / k))
        .unwrap_or(ts0 / 10.0);

    let model = |p: &[f64], x: f64| p[0] * (-x / p[1]).exp() + (1.0 - p[0]) * (-x / p[2]).exp();
    let jac = |p: &[f64], x: f64, out: &mut [f64]| {
        let ef = (-x / p[1]).exp();
        let es = (-x / p[2]).exp();
        out[0] = ef - es;
        out[1] = p[0] * ef * x / (p[1] * p[1]);
        out[2] = (1.0 - p[0]) * es * x / (p[2] * p[2]);
    };
    let project = |p: &mut [f64]| {
        p[0] = p[0].clamp(0.0, 1.0);
        p[1] = p[1].abs().max(1e-12);
        p[2] = p[2].abs().max(1e-12);
    };
    let sol = solve(
        &Problem {
            xs: &xs,
            ys: &ys,
            weights: &ws,
            model: &model,
            jacobian: Some(&jac),
            project: Some(&project),
        },
        &[w0, tf0, ts0],
    )?;
    let (mut w, mut tf, mut ts) = (sol.params[0], sol.params[1], sol.params[2]);
    let (w_err, mut tf_err, mut ts_err) = (sol.std_err(0), sol.std_err(1), sol.std_err(2));
    if tf > ts {
        std::mem::swap(&mut tf, &mut ts);
        std::mem::swap(&mut tf_err, &mut ts_err);
        w = 1.0 - w;
    }
    let single = w > 0.98 || w < 0.02 || (ts - tf) <= 0.05 * ts || !ts_err.is_finite();
    if single {
        let guess = if w < 0.02 { ts } else { tf };
        let (t, t_err, residual_norm) = fit_single_decay_fixed_amplitude(&xs, &ys, &ws, guess)?;
        return Ok(DoubleExpFit {
            weight: 1.0,
            weight_err: 0.0,
            t_fast: t,
            t_fast_err: t_err,
            t_slow: t,
            t_slow_err: f64::INFINITY,
            residual_norm,
            degenerate: true,
        });
    }
    Ok(DoubleExpFit {
        weight: w,
        weight_err: w_err,
        t_fast: tf,
        t_fast_err: tf_err,
        t_slow: ts,
        t_slow_err: ts_err,
        residual_norm: sol.residual_norm,
        degenerate: false,
    })
}

/// Intrinsic dephasing factor `exp(−(N·t_rep/T₂*)²)` at repetition `n`.
pub fn t2star_factor(n: f64, t2_star_ms: f64, time_per_rep_us: f64) -> f64 {
    let t_ms = n * time_per_rep_us * 1e-3;
    (-(t_ms / t2_star_ms).powi(2)).exp()
}

/// Divides out intrinsic T₂* dephasing from the XY column of a trace.
pub fn correct_t2star(trace: &MemoryTrace, t2_star_ms: f64, time_per_rep_us: f64) -> Result<MemoryTrace> {
    if !(t2_star_ms > 0.0) {
        return Err(crate::error::invalid("t2_star_ms", format!("must be > 0, got {t2_star_ms}")));
    }
    if !(time_per_rep_us >= 0.0) || !time_per_rep_us.is_finite() {
        return Err(crate::error::invalid(
            "time_per_rep_us",
            format!("must be finite and >= 0, got {time_per_rep_us}"),
        ));
    }
    let mut out = trace.clone();
    for i in 0..out.len() {
        if out.status[i].empty {
            continue;
        }
        let f = t2star_factor(out.checkpoints[i] as f64, t2_star_ms, time_per_rep_us);
        if f < MIN_CORRECTION_FACTOR {
            out.status[i].unreliable = true;
        }
        out.xy_length[i] /= f;
        out.xy_err[i] /= f;
        if out.xy_length[i] > CORRECTION_CAP {
            out.xy_length[i] = CORRECTION_CAP;
            out.status[i].capped = true;
        }
    }
    Ok(out)
}

/// `ln N₁/ₑ` of the dephasing model and its derivative with respect to `u`,
/// where `u = x²/2` and `x = 2π(|Δω|+C)τ`.
fn log_n1e(u: f64) -> (f64, f64) {
    let g = (-u).exp_m1() / 2.0;
    let l = -g.ln_1p();
    let y = -l.ln();
    let dy_du = -(-u).exp() / (2.0 * (1.0 + g) * l);
    (y, dy_du)
}

/// Fit of `N₁/ₑ(Δω) = −1/ln[(1 + exp(−(2π(Δω+C)τ)²/2))/2]` in log space.
pub fn fit_scaling_model(points: &[ScalingPoint]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(Error::FitInput(format!("need at least 4 points, got {}", points.len())));
    }
    if points
        .iter()
        .any(|p| !(p.n_1e > 0.0) || !p.n_1e.is_finite() || !p.delta_omega_khz.is_finite())
    {
        return Err(Error::FitInput("N₁/ₑ values must be positive and finite".into()));
    }
    let lo = points.iter().map(|p| p.delta_omega_khz.abs()).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.delta_omega_khz.abs()).fold(0.0, f64::max);
    if !(hi >= 10.0 * lo) {
        return Err(Error::FitInput(format!(
            "Δω must span a decade, got {lo} to {hi} kHz"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.delta_omega_khz.abs()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.n_1e.ln()).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.err / p.n_1e).collect();
    let ws = weights(&errs)?;

    let k = 2.0 * PI * 1e-3;
    let model = |p: &[f64], d: f64| {
        let x = k * (d + p[1]) * p[0];
        log_n1e(x * x / 2.0).0
    };
    let jac = |p: &[f64], d: f64, out: &mut [f64]| {
        let x = k * (d + p[1]) * p[0];
        let (_, dy_du) = log_n1e(x * x / 2.0);
        out[0] = dy_du * x * x / p[0];
        out[1] = dy_du * x * k * p[0];
    };
    // keep |Δω| + C positive at every point so the model stays monotone
    let c_floor = -0.999 * lo;
    let project = |p: &mut [f64]| {
        p[0] = p[0].abs().max(1e-9);
        p[1] = p[1].max(c_floor);
    };
    let sol = solve(
        &Problem {
            xs: &xs,
            ys: &ys,
            weights: &ws,
            model: &model,
            jacobian: Some(&jac),
            project: Some(&project),
        },
        &[0.4, 10.0],
    )?;
    Ok(ScalingFit {
        tau_us: sol.params[0],
        tau_err: sol.std_err(0),
        c_khz: sol.params[1],
        c_err: sol.std_err(1),
        residual_norm: sol.residual_norm,
        condition_number: sol.condition,
    })
}
