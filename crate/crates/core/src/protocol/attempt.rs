use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use crate::error::{Error, Result};
use crate::node::{conditional_rotation, FieldConfig, NuclearSpinParams};
use crate::pump::ionization_probability_per_reset;
use crate::qcore::{tensor_all, ComplexOperator, DensityMatrix};

/// Below this a measurement branch is treated as impossible.
pub(crate) const BRANCH_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Zero,
    MinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub projection: Projection,
    /// Time spent in the reset (ns); zero without a reset.
    pub reset_time_ns: f64,
    pub ionized: bool,
    /// Time from the first pulse to the end of the reset (μs).
    pub duration_us: f64,
}

/// Joint propagator for a free-evolution interval: `|0⟩⟨0|⊗R₀ + |−1⟩⟨−1|⊗R₁`,
/// electron first.
pub fn interval_unitary(spins: &[NuclearSpinParams], field: &FieldConfig, duration_us: f64) -> ComplexOperator {
    let (r0, r1): (Vec<_>, Vec<_>) = spins
        .iter()
        .map(|s| conditional_rotation(s, field, duration_us))
        .unzip();
    let p0 = ComplexOperator::basis_projector(2, 0);
    let p1 = ComplexOperator::basis_projector(2, 1);
    let b0 = p0.tensor(&tensor_all(&r0));
    let b1 = p1.tensor(&tensor_all(&r1));
    b0.add(&b1).expect("blocks share a dimension")
}

/// Nuclear propagator with the electron frozen in `|0⟩`.
pub fn free_unitary(spins: &[NuclearSpinParams], field: &FieldConfig, duration_us: f64) -> ComplexOperator {
    let r0: Vec<_> = spins.iter().map(|s| conditional_rotation(s, field, duration_us).0).collect();
    tensor_all(&r0)
}

/// `−2π·δ·Δt` for a quasi-static detuning `δ` (kHz) over `Δt` (μs).
pub(crate) fn detuning_angle(detuning_khz: f64, duration_us: f64) -> f64 {
    -2.0 * PI * detuning_khz * duration_us * 1e-3
}

/// One entanglement attempt on the joint electron–nuclear state, computed
/// with full density-matrix algebra.
///
/// Random numbers are consumed in a fixed order: two pulse-error draws, the
/// outcome, then (after a reset) the reset time and the ionization draw, and
/// finally one bit-flip draw per spin.
pub fn run_attempt<R: Rng + ?Sized>(
    state: &DensityMatrix,
    cfg: &ProtocolConfig,
    spins: &[NuclearSpinParams],
    detunings_khz: &[f64],
    rng: &mut R,
) -> Result<(DensityMatrix, AttemptRecord)> {
    let mut dims = vec![2];
    dims.extend(std::iter::repeat_n(2, spins.len()));
    if state.dims() != dims.as_slice() {
        return Err(Error::DimensionMismatch {
            expected: 1 << dims.len(),
            got: state.dim(),
        });
    }
    if detunings_khz.len() != spins.len() {
        return Err(Error::DimensionMismatch {
            expected: spins.len(),
            got: detunings_khz.len(),
        });
    }
    cfg.validate()?;
    let ch = &cfg.channels;

    let skip_half = rng.random::<f64>() < ch.mw_error_per_pulse;
    let skip_pi = rng.random::<f64>() < ch.mw_error_per_pulse;

    let mut rho = state.clone();
    if !skip_half {
        rho = rho.evolve_subsystem(&ComplexOperator::ry(PI / 2.0), 0)?;
    }
    rho = rho.evolve(&interval_unitary(spins, &cfg.field, cfg.t_us))?;
    if !skip_pi {
        rho = rho.evolve_subsystem(&ComplexOperator::rx(PI), 0)?;
    }
    rho = rho.evolve(&interval_unitary(spins, &cfg.field, cfg.t_us - cfg.tau_us))?;

    let projectors = [
        crate::qcore::embed(&ComplexOperator::basis_projector(2, 0), 0, &dims)?,
        crate::qcore::embed(&ComplexOperator::basis_projector(2, 1), 0, &dims)?,
    ];
    let probs = rho.outcome_probabilities(&projectors)?;
    let mut k = usize::from(rng.random::<f64>() < cfg.p_reset_needed);
    if probs[k] <= BRANCH_TOL {
        // the electron is certainly in the other state
        k = 1 - k;
    }
    rho = rho.project(&projectors[k], probs[k], k)?;

    let mut duration_us = 2.0 * cfg.t_us - cfg.tau_us;
    let mut reset_time_ns = 0.0;
    let mut ionized = false;
    if k == 1 {
        reset_time_ns = cfg.reset.sample_reset_time(rng);
        ionized = rng.random::<f64>() < ionization_probability_per_reset(ch.ionization_n_d);
        let t_r = reset_time_ns * 1e-3;
        let u = if cfg.singlet_dephasing {
            interval_unitary(spins, &cfg.field, t_r)
        } else {
            ComplexOperator::identity(2).tensor(&free_unitary(spins, &cfg.field, t_r))
        };
        rho = rho.evolve(&u)?;
        rho = rho.evolve_subsystem(&ComplexOperator::pauli_x(), 0)?;
        duration_us += t_r;
    }

    for i in 0..spins.len() {
        if rng.random::<f64>() < ch.t1_flip_per_rep {
            rho = rho.evolve_subsystem(&ComplexOperator::pauli_x(), i + 1)?;
        }
    }
    for (i, &d) in detunings_khz.iter().enumerate() {
        if d != 0.0 {
            rho = rho.evolve_subsystem(&ComplexOperator::rz(detuning_angle(d, cfg.rep_period_us)), i + 1)?;
        }
    }

    Ok((
        rho,
        AttemptRecord {
            projection: if k == 1 { Projection::MinusOne } else { Projection::Zero },
            reset_time_ns,
            ionized,
            duration_us,
        },
    ))
}
