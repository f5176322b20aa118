use nvsim_core::analysis::{
    correct_t2star, fit_double_exponential, fit_exponential, fit_gaussian_peak, fit_scaling_model, t2star_factor,
    ScalingPoint,
};
use nvsim_core::protocol::{CheckpointStatus, MemoryTrace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noise(seed: u64, n: usize, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

// Independent reference for the scaling model, evaluated the naive way.
fn scaling_oracle(dw: f64, tau: f64, c: f64) -> f64 {
    let x = 2.0 * std::f64::consts::PI * (dw + c) * 1e-3 * tau;
    -1.0 / ((1.0 + (-x * x / 2.0).exp()) / 2.0).ln()
}

#[test]
fn exponential_noiseless_round_trip() {
    let pts: Vec<_> = (0..12).map(|i| {
        let n = i as f64 * 125.0;
        (n, (-n / 500.0).exp(), 0.01)
    }).collect();
    let fit = fit_exponential(&pts).unwrap();
    assert!((fit.n_1e - 500.0).abs() / 500.0 < 1e-6, "{fit:?}");
    assert!((fit.amplitude - 1.0).abs() < 1e-6);
    assert!(!fit.no_decay);
}

#[test]
fn exponential_with_two_percent_noise() {
    let eps = noise(11, 12, 0.02);
    let pts: Vec<_> = (0..12).map(|i| {
        let n = (i + 1) as f64 * 125.0;
        let v = (-n / 500.0).exp();
        (n, v * (1.0 + eps[i]), 0.02 * v)
    }).collect();
    let fit = fit_exponential(&pts).unwrap();
    assert!((fit.n_1e - 500.0).abs() / 500.0 < 0.10, "{fit:?}");
}

#[test]
fn exponential_constant_data_is_flagged() {
    let pts: Vec<_> = (0..6).map(|i| (i as f64 * 100.0, 0.9, 0.01)).collect();
    let fit = fit_exponential(&pts).unwrap();
    assert!(fit.no_decay);
    assert!(fit.n_1e.is_infinite());
    assert!((fit.amplitude - 0.9).abs() < 1e-9);
}

#[test]
fn exponential_input_errors() {
    assert!(fit_exponential(&[(0.0, 1.0, 0.1), (1.0, 0.9, 0.1)]).is_err());
    let inf = f64::INFINITY;
    assert!(fit_exponential(&[(0.0, 1.0, inf), (1.0, 0.9, inf), (2.0, 0.8, inf)]).is_err());
    // all-zero errors fall back to an unweighted fit
    let pts: Vec<_> = (0..5).map(|i| (i as f64, (-(i as f64) / 3.0).exp(), 0.0)).collect();
    assert!((fit_exponential(&pts).unwrap().n_1e - 3.0).abs() < 1e-6);
}

#[test]
fn exponential_amplitude_is_capped() {
    let pts: Vec<_> = (0..8).map(|i| (i as f64 * 10.0, 1.3 * (-(i as f64) / 5.0).exp(), 0.01)).collect();
    let fit = fit_exponential(&pts).unwrap();
    assert!(fit.amplitude <= 1.05);
}

#[test]
fn gaussian_noiseless_peak() {
    let pts: Vec<_> = (0..15).map(|i| {
        let t = 0.1 * i as f64;
        (t, 0.3 * (-(t - 0.44f64).powi(2) / (2.0 * 0.25f64.powi(2))).exp() + 0.5, 0.01)
    }).collect();
    let fit = fit_gaussian_peak(&pts).unwrap();
    assert!((fit.center - 0.44).abs() < 1e-3, "{fit:?}");
    assert!((fit.width - 0.25).abs() < 1e-6);
    assert!((fit.amplitude - 0.3).abs() < 1e-6);
    assert!((fit.offset - 0.5).abs() < 1e-6);
    assert!(!fit.flat);
}

#[test]
fn gaussian_flat_data_is_flagged() {
    let pts: Vec<_> = (0..8).map(|i| (i as f64, 0.7, 0.01)).collect();
    let fit = fit_gaussian_peak(&pts).unwrap();
    assert!(fit.flat);
    assert!(fit.amplitude.abs() < 1e-12);
}

#[test]
fn double_exponential_round_trip_with_noise() {
    let eps = noise(3, 200, 0.005);
    let pts: Vec<_> = (0..200).map(|i| {
        let t = i as f64 * 10.0;
        let v = 0.75 * (-t / 29.0).exp() + 0.25 * (-t / 463.0).exp();
        (t, v * (1.0 + eps[i]), 0.005 * v)
    }).collect();
    let fit = fit_double_exponential(&pts).unwrap();
    assert!(!fit.degenerate);
    assert!((fit.weight - 0.75).abs() / 0.75 < 0.05, "{fit:?}");
    assert!((fit.t_fast - 29.0).abs() / 29.0 < 0.05);
    assert!((fit.t_slow - 463.0).abs() / 463.0 < 0.05);
}

#[test]
fn double_exponential_single_timescale_is_degenerate() {
    let pts: Vec<_> = (0..100).map(|i| {
        let t = i as f64 * 2.0;
        (t, (-t / 29.0).exp(), 0.0)
    }).collect();
    let fit = fit_double_exponential(&pts).unwrap();
    assert!(fit.degenerate, "{fit:?}");
    assert!((fit.weight - 1.0).abs() < 0.02);
    assert!((fit.t_fast - 29.0).abs() < 1e-3);
}

fn trace(values: &[(u64, f64)]) -> MemoryTrace {
    MemoryTrace {
        checkpoints: values.iter().map(|v| v.0).collect(),
        xy_length: values.iter().map(|v| v.1).collect(),
        xy_err: vec![0.01; values.len()],
        z_value: vec![0.0; values.len()],
        survival: vec![1.0; values.len()],
        status: vec![CheckpointStatus::default(); values.len()],
    }
}

#[test]
fn t2star_correction_examples() {
    let tr = trace(&[(0, 0.9), (500, 0.6), (1000, 0.5)]);
    assert_eq!(correct_t2star(&tr, f64::INFINITY, 5.5).unwrap(), tr);
    assert_eq!(correct_t2star(&tr, 1e9, 5.5).unwrap().xy_length, tr.xy_length);

    // N·t_rep equal to T₂*
    let tr = trace(&[(1000, 0.2)]);
    let out = correct_t2star(&tr, 5.5, 5.5).unwrap();
    assert!((out.xy_length[0] - 0.2 * std::f64::consts::E).abs() < 1e-12);

    // combined T₂* of a pair
    let tr = trace(&[(1000, 0.5)]);
    let out = correct_t2star(&tr, 10.73, 5.5).unwrap();
    let factor = (-(5.5f64 / 10.73).powi(2)).exp();
    assert!((factor - 0.769).abs() < 1e-3);
    assert!((out.xy_length[0] - 0.5 / factor).abs() < 1e-12);
    assert!((out.xy_err[0] - 0.01 / factor).abs() < 1e-12);

    assert!(correct_t2star(&tr, 0.0, 5.5).is_err());
}

#[test]
fn t2star_correction_caps_and_flags() {
    let tr = trace(&[(1000, 0.9), (3000, 0.01)]);
    let out = correct_t2star(&tr, 5.5, 5.5).unwrap();
    assert_eq!(out.xy_length[0], 1.05);
    assert!(out.status[0].capped);
    assert!(out.status[1].unreliable);
}

#[test]
fn scaling_round_trip() {
    let pts: Vec<_> = [3.5, 5.3, 11.6, 15.4, 23.7, 37.0, 48.6, 85.6]
        .iter()
        .map(|&d| ScalingPoint { delta_omega_khz: d, n_1e: scaling_oracle(d, 0.44, 15.0), err: 1.0 })
        .collect();
    let fit = fit_scaling_model(&pts).unwrap();
    assert!((fit.tau_us - 0.44).abs() / 0.44 < 1e-6, "{fit:?}");
    assert!((fit.c_khz - 15.0).abs() / 15.0 < 1e-6);
    assert!(fit.condition_number.is_finite());
}

#[test]
fn scaling_nested_zero_offset() {
    let pts: Vec<_> = [2.0, 5.0, 10.0, 20.0, 40.0]
        .iter()
        .map(|&d| ScalingPoint { delta_omega_khz: d, n_1e: scaling_oracle(d, 0.44, 0.0), err: 1.0 })
        .collect();
    let fit = fit_scaling_model(&pts).unwrap();
    assert!(fit.c_khz.abs() <= fit.c_err.max(1e-6), "{fit:?}");
    assert!((fit.tau_us - 0.44).abs() < 1e-6);
}

#[test]
fn scaling_rejects_narrow_span() {
    let pts: Vec<_> = [10.0, 12.0, 14.0, 16.0]
        .iter()
        .map(|&d| ScalingPoint { delta_omega_khz: d, n_1e: scaling_oracle(d, 0.44, 15.0), err: 1.0 })
        .collect();
    assert!(fit_scaling_model(&pts).is_err());
}

#[test]
fn scaling_with_noise() {
    let ds = [3.5, 5.3, 11.6, 15.4, 23.7, 37.0, 48.6, 85.6];
    let eps = noise(5, ds.len(), 0.05);
    let pts: Vec<_> = ds
        .iter()
        .zip(&eps)
        .map(|(&d, e)| {
            let n = scaling_oracle(d, 0.44, 15.0);
            ScalingPoint { delta_omega_khz: d, n_1e: n * (1.0 + e), err: 0.05 * n }
        })
        .collect();
    let fit = fit_scaling_model(&pts).unwrap();
    assert!((fit.tau_us - 0.44).abs() < 3.0 * fit.tau_err + 0.02, "{fit:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exponential_round_trip(a in 0.3f64..1.0, n1e in 50.0f64..3000.0) {
        let pts: Vec<_> = (0..10).map(|i| {
            let n = i as f64 * n1e / 3.0;
            (n, a * (-n / n1e).exp(), 0.01)
        }).collect();
        let fit = fit_exponential(&pts).unwrap();
        prop_assert!((fit.n_1e - n1e).abs() / n1e < 1e-6);
        prop_assert!((fit.amplitude - a).abs() / a < 1e-6);
    }

    #[test]
    fn gaussian_round_trip(c in 0.2f64..0.8, w in 0.1f64..0.4, a in 0.1f64..0.5) {
        let pts: Vec<_> = (0..21).map(|i| {
            let t = 0.05 * i as f64;
            (t, a * (-(t - c).powi(2) / (2.0 * w * w)).exp() + 0.4, 0.01)
        }).collect();
        let fit = fit_gaussian_peak(&pts).unwrap();
        prop_assert!((fit.center - c).abs() < 1e-6 * c.max(1.0));
        prop_assert!((fit.width - w).abs() / w < 1e-6);
        prop_assert!((fit.amplitude - a).abs() / a < 1e-6);
    }

    #[test]
    fn scaling_round_trip_prop(tau in 0.3f64..0.6, c in 5.0f64..25.0) {
        let pts: Vec<_> = [3.0, 6.0, 12.0, 24.0, 48.0, 90.0]
            .iter()
            .map(|&d| ScalingPoint { delta_omega_khz: d, n_1e: scaling_oracle(d, tau, c), err: 1.0 })
            .collect();
        let fit = fit_scaling_model(&pts).unwrap();
        prop_assert!((fit.tau_us - tau).abs() / tau < 1e-6);
        prop_assert!((fit.c_khz - c).abs() / c < 1e-6);
    }

    #[test]
    fn fits_ignore_order_and_error_scale(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let eps = noise(seed, 10, 0.03);
        let pts: Vec<_> = (0..10).map(|i| {
            let n = (i + 1) as f64 * 100.0;
            let v = 0.95 * (-n / 400.0).exp();
            (n, v * (1.0 + eps[i]), 0.03 * v + 0.002)
        }).collect();
        let base = fit_exponential(&pts).unwrap();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(2, 7);
        let reordered = fit_exponential(&shuffled).unwrap();
        let scaled: Vec<_> = pts.iter().map(|p| (p.0, p.1, p.2 * scale)).collect();
        let rescaled = fit_exponential(&scaled).unwrap();
        for other in [reordered, rescaled] {
            prop_assert!((other.n_1e - base.n_1e).abs() / base.n_1e < 1e-8);
            prop_assert!((other.amplitude - base.amplitude).abs() < 1e-8);
            prop_assert!((other.n_1e_err - base.n_1e_err).abs() / base.n_1e_err < 1e-6);
        }
    }

    #[test]
    fn t2star_correction_is_reversible(
        vals in proptest::collection::vec(0.0f64..0.7, 1..8),
        t2 in 3.0f64..30.0,
        rep in 1.0f64..10.0,
    ) {
        let pts: Vec<(u64, f64)> = vals.iter().enumerate().map(|(i, &v)| (i as u64 * 250, v)).collect();
        let tr = trace(&pts);
        let out = correct_t2star(&tr, t2, rep).unwrap();
        for i in 0..tr.len() {
            if out.status[i].capped { continue; }
            let back = out.xy_length[i] * t2star_factor(tr.checkpoints[i] as f64, t2, rep);
            // division then multiplication is exact to one rounding step
            prop_assert!((back - tr.xy_length[i]).abs() <= f64::EPSILON * tr.xy_length[i]);
        }
    }
}
