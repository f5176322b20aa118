use std::f64::consts::PI;

use num_complex::Complex64;

/// Angular frequency in rad/μs of a cyclic frequency in kHz.
fn angular(freq_khz: f64) -> f64 {
    2.0 * PI * freq_khz * 1e-3
}

/// Per-repetition coherence factor `(1 + exp(−(2πΔω·τ)²/2))/2` of the
/// Gaussian-kick model.
pub fn per_rep_coherence_gaussian(delta_omega_khz: f64, tau_us: f64) -> f64 {
    let x = angular(delta_omega_khz) * tau_us;
    (1.0 + (-x * x / 2.0).exp()) / 2.0
}

/// Memory fidelity after `n` repetitions: `1/2 + 2^−(n+1)·(1 + e^(−(2πΔω·τ)²/2))^n`.
pub fn analytic_fidelity(delta_omega_khz: f64, tau_us: f64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let x = angular(delta_omega_khz) * tau_us;
    let ln_q = ((-x * x / 2.0).exp_m1() / 2.0).ln_1p();
    0.5 + 0.5 * (n as f64 * ln_q).exp()
}

/// Repetitions to 1/e for the offset model `Δω → |Δω| + C`; `+∞` when there
/// is no dephasing.
pub fn extended_n1e(delta_omega_khz: f64, tau_us: f64, c_khz: f64) -> f64 {
    let x = angular(delta_omega_khz.abs() + c_khz) * tau_us;
    let ln_q = ((-x * x / 2.0).exp_m1() / 2.0).ln_1p();
    if ln_q == 0.0 {
        f64::INFINITY
    } else {
        -1.0 / ln_q
    }
}

/// Two-outcome coherence multiplier with an exponentially distributed reset
/// time of mean `tau_mean_us`:
/// `½·|e^(iωτ) + (1 + iωτ_m)/(1 + ω²τ_m²)|`.
pub fn per_rep_coherence_exact(delta_omega_khz: f64, tau_us: f64, tau_mean_us: f64) -> f64 {
    let w = angular(delta_omega_khz);
    let wt = w * tau_mean_us;
    let cf = Complex64::new(1.0, wt) / (1.0 + wt * wt);
    0.5 * (Complex64::from_polar(1.0, w * tau_us) + cf).norm()
}

/// `−1/ln q` for a per-repetition coherence factor `q`.
pub fn n1e_from_factor(q: f64) -> f64 {
    if q >= 1.0 {
        f64::INFINITY
    } else {
        -1.0 / q.ln()
    }
}

/// The τ maximizing [`per_rep_coherence_exact`] on `[0, 4·τ_m]` (golden
/// section search).
pub fn optimal_tau(delta_omega_khz: f64, tau_mean_us: f64) -> f64 {
    let f = |t: f64| per_rep_coherence_exact(delta_omega_khz, t, tau_mean_us);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 4.0 * tau_mean_us);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 * tau_mean_us.max(1e-12) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
