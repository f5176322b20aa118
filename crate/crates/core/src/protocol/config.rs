use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::node::{precession, FieldConfig, NuclearSpinParams, Parity, Register, SubspaceSpec};
use crate::pump::ResetModel;

/// Stochastic error processes applied on top of the ideal attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channels {
    /// Per-repetition, per-spin probability of a nuclear bit flip.
    pub t1_flip_per_rep: f64,
    /// Survival constant in resets; `inf` disables ionization.
    pub ionization_n_d: f64,
    /// Probability that a microwave pulse is skipped.
    pub mw_error_per_pulse: f64,
    /// Extra conditional frequency (kHz) added to the logical `|Δω|`.
    pub coupling_offset_khz: f64,
    /// Quasi-static detuning drawn from each spin's T₂*.
    pub intrinsic_dephasing: bool,
}

impl Default for Channels {
    fn default() -> Self {
        Self {
            t1_flip_per_rep: 1.0 / 4000.0,
            ionization_n_d: 2820.0,
            mw_error_per_pulse: 0.0,
            coupling_offset_khz: 15.0,
            intrinsic_dephasing: true,
        }
    }
}

impl Channels {
    /// Every channel off: the bare attempt dynamics.
    pub fn none() -> Self {
        Self {
            t1_flip_per_rep: 0.0,
            ionization_n_d: f64::INFINITY,
            mw_error_per_pulse: 0.0,
            coupling_offset_khz: 0.0,
            intrinsic_dephasing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("t1_flip_per_rep", self.t1_flip_per_rep),
            ("mw_error_per_pulse", self.mw_error_per_pulse),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        if !(self.ionization_n_d > 0.0) {
            return Err(invalid("ionization_n_d", format!("must be > 0, got {}", self.ionization_n_d)));
        }
        if !(self.coupling_offset_khz >= 0.0) || !self.coupling_offset_khz.is_finite() {
            return Err(invalid(
                "coupling_offset_khz",
                format!("must be finite and >= 0, got {}", self.coupling_offset_khz),
            ));
        }
        Ok(())
    }
}

/// Which couplings drive the conditional nuclear evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationModel {
    /// Full `A∥`, `A⊥` hyperfine tensor, including the tilted `|−1⟩` axis.
    Hyperfine,
    /// A purely parallel coupling equal to the measured `Δω`.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// First wait interval (μs).
    pub t_us: f64,
    /// Asymmetry: the second interval lasts `t − τ` (μs).
    pub tau_us: f64,
    pub n_reps: u64,
    pub reset: ResetModel,
    /// Probability that an attempt leaves the electron in `|−1⟩`.
    pub p_reset_needed: f64,
    pub checkpoints: Vec<u64>,
    pub seed: u64,
    pub channels: Channels,
    pub trajectories: usize,
    /// Wall-clock time per repetition, used for intrinsic dephasing (μs).
    pub rep_period_us: f64,
    /// Whether the nuclear spin sees the `|−1⟩` hyperfine field for the full
    /// reset duration; if not, reset time is spent as in `|0⟩`.
    pub singlet_dephasing: bool,
    pub model: SimulationModel,
    pub field: FieldConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let field = FieldConfig::default();
        Self {
            t_us: field.larmor_period_us(),
            tau_us: 0.44,
            n_reps: 500,
            reset: ResetModel::default(),
            p_reset_needed: 0.5,
            checkpoints: (0..=10).map(|i| i * 50).collect(),
            seed: 1,
            channels: Channels::default(),
            trajectories: 2000,
            rep_period_us: 5.5,
            singlet_dephasing: true,
            model: SimulationModel::Hyperfine,
            field,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_us >= 0.0) || !self.t_us.is_finite() {
            return Err(invalid("t_us", format!("must be finite and >= 0, got {}", self.t_us)));
        }
        if !(self.tau_us >= 0.0) || !self.tau_us.is_finite() {
            return Err(invalid("tau_us", format!("must be finite and >= 0, got {}", self.tau_us)));
        }
        if self.tau_us > self.t_us {
            return Err(invalid(
                "tau_us",
                format!("must not exceed t_us ({} > {})", self.tau_us, self.t_us),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_reset_needed) {
            return Err(invalid("p_reset_needed", format!("must lie in [0, 1], got {}", self.p_reset_needed)));
        }
        if self.checkpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("checkpoints", "must be sorted ascending"));
        }
        if let Some(&last) = self.checkpoints.last() {
            if last > self.n_reps {
                return Err(invalid("checkpoints", format!("{last} exceeds n_reps = {}", self.n_reps)));
            }
        }
        if self.trajectories == 0 {
            return Err(invalid("trajectories", "must be > 0"));
        }
        if !(self.rep_period_us >= 0.0) || !self.rep_period_us.is_finite() {
            return Err(invalid("rep_period_us", format!("must be finite and >= 0, got {}", self.rep_period_us)));
        }
        self.reset.validate()?;
        self.channels.validate()?;
        self.field.validate()
    }

    /// Checkpoints at `0, step, 2·step, …` up to and including `n_reps`.
    pub fn with_checkpoint_step(mut self, n_reps: u64, step: u64) -> Self {
        let step = step.max(1);
        self.n_reps = n_reps;
        self.checkpoints = (0..=n_reps / step).map(|i| i * step).collect();
        if self.checkpoints.last() != Some(&n_reps) {
            self.checkpoints.push(n_reps);
        }
        self
    }
}

/// Conditional frequency shift `ω₋₁ − ω₀` (kHz) of a spin.
pub fn conditional_shift(spin: &NuclearSpinParams, field: &FieldConfig) -> f64 {
    let p = precession(spin, field);
    p.omega_m1_khz - p.omega0_khz
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// The spins of a subspace as they enter the simulation: the chosen coupling
/// model, with the coupling offset added so that the logical `|Δ|` grows by
/// `C`.
pub fn effective_spins(cfg: &ProtocolConfig, sub: &SubspaceSpec, register: &Register) -> Result<Vec<NuclearSpinParams>> {
    let mut spins: Vec<NuclearSpinParams> = sub
        .spin_ids()
        .iter()
        .map(|&id| {
            register.get(id).map(|s| match cfg.model {
                SimulationModel::Hyperfine => *s,
                SimulationModel::Measured => s.measured_equivalent(),
            })
        })
        .collect::<Result<_>>()?;
    let c = cfg.channels.coupling_offset_khz;
    if c != 0.0 {
        let d: Vec<f64> = spins.iter().map(|s| conditional_shift(s, &cfg.field)).collect();
        match *sub {
            SubspaceSpec::Single(_) => spins[0].a_par_khz += sign(d[0]) * c,
            SubspaceSpec::Pair {
                parity: Parity::Antiparallel,
                ..
            } => {
                let s = sign(d[0] - d[1]);
                spins[0].a_par_khz += s * c / 2.0;
                spins[1].a_par_khz -= s * c / 2.0;
            }
            SubspaceSpec::Pair {
                parity: Parity::Parallel,
                ..
            } => {
                let s = sign(d[0] + d[1]);
                spins[0].a_par_khz += s * c / 2.0;
                spins[1].a_par_khz += s * c / 2.0;
            }
        }
    }
    Ok(spins)
}
