//! Pure-state trajectory engine.
//!
//! The electron always starts an attempt in `|0⟩`, so the whole pulse sequence
//! up to the measurement collapses to a nuclear Kraus block `⟨k|U|0⟩` per
//! outcome `k` and pulse-error pattern. Only the reset rotation depends on a
//! random duration and is applied spin by spin.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::attempt::{detuning_angle, interval_unitary, BRANCH_TOL};
use super::config::ProtocolConfig;
use crate::node::{precession, NuclearSpinParams};
use crate::pump::{ionization_probability_per_reset, ResetModel};
use crate::qcore::{ComplexOperator, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

type Mat2 = [[C64; 2]; 2];

/// `cos(θ/2)·I − i·sin(θ/2)·(n·σ)` for `n = (sin α, 0, cos α)`.
pub(crate) fn rotation_xz(sin_a: f64, cos_a: f64, angle: f64) -> Mat2 {
    let (s, c) = (angle / 2.0).sin_cos();
    [
        [C64::new(c, -s * cos_a), C64::new(0.0, -s * sin_a)],
        [C64::new(0.0, -s * sin_a), C64::new(c, s * cos_a)],
    ]
}

struct SpinAxes {
    sin_tilt: f64,
    cos_tilt: f64,
    omega0_khz: f64,
    omega_m1_khz: f64,
}

pub(crate) struct Kernel {
    nspins: usize,
    dim: usize,
    /// `[pattern][outcome]`, row-major `dim × dim`; pattern bit 1 = skipped
    /// π/2, bit 0 = skipped π.
    kraus: Vec<[Vec<C64>; 2]>,
    axes: Vec<SpinAxes>,
    detuning_sd_khz: Vec<f64>,
    p_mw: f64,
    p_reset: f64,
    p_ion: f64,
    p_flip: f64,
    reset: ResetModel,
    singlet_dephasing: bool,
    rep_period_us: f64,
    base_duration_us: f64,
}

/// Quasi-static detuning spread (kHz) that reproduces `exp(−(t/T₂*)²)`.
pub(crate) fn detuning_sd_khz(t2_star_ms: f64) -> f64 {
    std::f64::consts::SQRT_2 / (2.0 * PI * t2_star_ms)
}

impl Kernel {
    pub fn new(cfg: &ProtocolConfig, spins: &[NuclearSpinParams]) -> Self {
        let n = spins.len();
        let dim = 1usize << n;
        let first = interval_unitary(spins, &cfg.field, cfg.t_us);
        let second = interval_unitary(spins, &cfg.field, cfg.t_us - cfg.tau_us);
        let id_n = ComplexOperator::identity(dim);
        let half = ComplexOperator::ry(PI / 2.0).tensor(&id_n);
        let pi = ComplexOperator::rx(PI).tensor(&id_n);
        let id = ComplexOperator::identity(2 * dim);

        let mut kraus = Vec::with_capacity(4);
        for pattern in 0..4 {
            let p1 = if pattern & 2 != 0 { &id } else { &half };
            let p2 = if pattern & 1 != 0 { &id } else { &pi };
            let u = &(&(&second * p2) * &first) * p1;
            let block = |k: usize| {
                let mut out = vec![ZERO; dim * dim];
                for r in 0..dim {
                    for c in 0..dim {
                        out[r * dim + c] = u.get(k * dim + r, c);
                    }
                }
                out
            };
            kraus.push([block(0), block(1)]);
        }

        let axes = spins
            .iter()
            .map(|s| {
                let p = precession(s, &cfg.field);
                SpinAxes {
                    sin_tilt: p.tilt.sin(),
                    cos_tilt: p.tilt.cos(),
                    omega0_khz: p.omega0_khz,
                    omega_m1_khz: p.omega_m1_khz,
                }
            })
            .collect();
        let detuning_sd_khz = spins
            .iter()
            .map(|s| {
                if cfg.channels.intrinsic_dephasing {
                    detuning_sd_khz(s.t2_star_ms)
                } else {
                    0.0
                }
            })
            .collect();

        Self {
            nspins: n,
            dim,
            kraus,
            axes,
            detuning_sd_khz,
            p_mw: cfg.channels.mw_error_per_pulse,
            p_reset: cfg.p_reset_needed,
            p_ion: ionization_probability_per_reset(cfg.channels.ionization_n_d),
            p_flip: cfg.channels.t1_flip_per_rep,
            reset: cfg.reset,
            singlet_dephasing: cfg.singlet_dephasing,
            rep_period_us: cfg.rep_period_us,
            base_duration_us: 2.0 * cfg.t_us - cfg.tau_us,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draws the quasi-static detunings of one trajectory.
    pub fn draw_detunings<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.detuning_sd_khz
            .iter()
            .map(|&sd| {
                if sd > 0.0 {
                    Normal::new(0.0, sd).expect("finite spread").sample(rng)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn apply_single(&self, psi: &mut [C64], spin: usize, m: &Mat2) {
        let bit = 1usize << (self.nspins - 1 - spin);
        for i in 0..self.dim {
            if i & bit == 0 {
                let (a, b) = (psi[i], psi[i | bit]);
                psi[i] = m[0][0] * a + m[0][1] * b;
                psi[i | bit] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    fn apply_phase(&self, psi: &mut [C64], spin: usize, angle: f64) {
        // rz(angle) = diag(e^{−iθ/2}, e^{iθ/2})
        let bit = 1usize << (self.nspins - 1 - spin);
        let up = C64::from_polar(1.0, -angle / 2.0);
        let down = up.conj();
        for (i, a) in psi.iter_mut().enumerate() {
            *a *= if i & bit == 0 { up } else { down };
        }
    }

    /// One attempt on a normalized nuclear state. Returns the attempt duration
    /// (μs) and whether the charge state was lost. Random draws follow the
    /// order of the density-matrix reference.
    pub fn attempt<R: Rng + ?Sized>(
        &self,
        psi: &mut [C64],
        scratch: &mut [C64],
        detunings_khz: &[f64],
        rng: &mut R,
    ) -> (f64, bool) {
        let skip_half = rng.random::<f64>() < self.p_mw;
        let skip_pi = rng.random::<f64>() < self.p_mw;
        let pattern = (usize::from(skip_half) << 1) | usize::from(skip_pi);
        let mut k = usize::from(rng.random::<f64>() < self.p_reset);

        let mut norm = self.apply_kraus(pattern, k, psi, scratch);
        if norm <= BRANCH_TOL {
            k = 1 - k;
            norm = self.apply_kraus(pattern, k, psi, scratch);
        }
        let inv = 1.0 / norm.sqrt();
        for (a, s) in psi.iter_mut().zip(scratch.iter()) {
            *a = s * inv;
        }

        let mut duration = self.base_duration_us;
        let mut ionized = false;
        if k == 1 {
            let t_r = self.reset.sample_reset_time(rng) * 1e-3;
            ionized = rng.random::<f64>() < self.p_ion;
            for (i, ax) in self.axes.iter().enumerate() {
                if self.singlet_dephasing {
                    let m = rotation_xz(ax.sin_tilt, ax.cos_tilt, -2.0 * PI * ax.omega_m1_khz * t_r * 1e-3);
                    self.apply_single(psi, i, &m);
                } else {
                    self.apply_phase(psi, i, -2.0 * PI * ax.omega0_khz * t_r * 1e-3);
                }
            }
            duration += t_r;
        }
        for i in 0..self.nspins {
            if rng.random::<f64>() < self.p_flip {
                let x = [[ZERO, C64::new(1.0, 0.0)], [C64::new(1.0, 0.0), ZERO]];
                self.apply_single(psi, i, &x);
            }
        }
        for (i, &d) in detunings_khz.iter().enumerate() {
            if d != 0.0 {
                self.apply_phase(psi, i, detuning_angle(d, self.rep_period_us));
            }
        }
        (duration, ionized)
    }

    fn apply_kraus(&self, pattern: usize, k: usize, psi: &[C64], out: &mut [C64]) -> f64 {
        let m = &self.kraus[pattern][k];
        let mut norm = 0.0;
        for r in 0..self.dim {
            let row = &m[r * self.dim..(r + 1) * self.dim];
            let v: C64 = row.iter().zip(psi).map(|(a, b)| a * b).sum();
            out[r] = v;
            norm += v.norm_sqr();
        }
        norm
    }

    /// The state in the frame rotating with the bare `|0⟩` precession after
    /// `elapsed_us`.
    pub fn to_rotating_frame(&self, psi: &[C64], elapsed_us: f64, out: &mut [C64]) {
        out.copy_from_slice(psi);
        for (i, ax) in self.axes.iter().enumerate() {
            self.apply_phase(out, i, 2.0 * PI * ax.omega0_khz * elapsed_us * 1e-3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_xz_matches_operator() {
        for (tilt, angle) in [(0.0, 1.0), (0.3, -2.5), (1.2, 7.0)] {
            let m = rotation_xz(f64::sin(tilt), f64::cos(tilt), angle);
            let op = ComplexOperator::rotation([tilt.sin(), 0.0, tilt.cos()], angle);
            for r in 0..2 {
                for c in 0..2 {
                    assert!((m[r][c] - op.get(r, c)).norm() < 1e-14);
                }
            }
        }
    }
}
