use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{effective_spins, ProtocolConfig};
use super::kernel::Kernel;
use super::trace::{CheckpointStatus, MemoryTrace};
use crate::error::{invalid, Result};
use crate::node::{logical_ket, NuclearSpinParams, Register, SubspaceSpec};
use crate::qcore::C64;

const CHUNK: usize = 64;

/// Logical state the memory is prepared in before the first attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `(|a⟩ + |b⟩)/√2`, the logical `+X` state.
    Superposition,
    /// Logical `+Z`, i.e. `|↓⟩` for a single spin.
    Up,
    Logical { theta: f64, phi: f64 },
}

impl InitialState {
    pub fn ket(&self, sub: &SubspaceSpec) -> Vec<C64> {
        let (theta, phi) = match *self {
            Self::Superposition => (std::f64::consts::FRAC_PI_2, 0.0),
            Self::Up => (0.0, 0.0),
            Self::Logical { theta, phi } => (theta, phi),
        };
        logical_ket(sub, theta, phi)
    }
}

/// Per-trajectory random stream: ChaCha8 seeded with the run seed, one
/// stream per trajectory index.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Logical Bloch components `(x, y, z)` of a nuclear state.
fn logical_bloch(psi: &[C64], (a, b): (usize, usize)) -> [f64; 3] {
    let rho_ab = psi[a] * psi[b].conj();
    [2.0 * rho_ab.re, -2.0 * rho_ab.im, psi[a].norm_sqr() - psi[b].norm_sqr()]
}

fn simulate_trajectory(
    kernel: &Kernel,
    cfg: &ProtocolConfig,
    ket: &[C64],
    basis: (usize, usize),
    index: usize,
) -> Vec<Option<[f64; 3]>> {
    let mut rng = trajectory_rng(cfg.seed, index);
    let detunings = kernel.draw_detunings(&mut rng);
    let mut psi = ket.to_vec();
    let mut scratch = vec![C64::new(0.0, 0.0); kernel.dim()];
    let mut frame = scratch.clone();
    let mut elapsed = 0.0;
    let mut out = Vec::with_capacity(cfg.checkpoints.len());
    let mut next = 0;
    let mut record = |n: u64, psi: &[C64], elapsed: f64, out: &mut Vec<Option<[f64; 3]>>, next: &mut usize| {
        while *next < cfg.checkpoints.len() && cfg.checkpoints[*next] == n {
            kernel.to_rotating_frame(psi, elapsed, &mut frame);
            out.push(Some(logical_bloch(&frame, basis)));
            *next += 1;
        }
    };
    record(0, &psi, elapsed, &mut out, &mut next);
    for n in 1..=cfg.n_reps {
        if next == cfg.checkpoints.len() {
            break;
        }
        let (dt, ionized) = kernel.attempt(&mut psi, &mut scratch, &detunings, &mut rng);
        elapsed += dt;
        if ionized {
            break;
        }
        record(n, &psi, elapsed, &mut out, &mut next);
    }
    out.resize(cfg.checkpoints.len(), None);
    out
}

#[derive(Default, Clone, Copy)]
struct Moments {
    count: usize,
    x: f64,
    y: f64,
    z: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl Moments {
    fn push(&mut self, [x, y, z]: [f64; 3]) {
        self.count += 1;
        self.x += x;
        self.y += y;
        self.z += z;
        self.xx += x * x;
        self.yy += y * y;
        self.xy += x * y;
    }

    /// Length of the mean XY vector and the standard error of the
    /// projections onto its direction.
    fn summary(&self) -> (f64, f64, f64) {
        let n = self.count as f64;
        let (mx, my) = (self.x / n, self.y / n);
        let len = mx.hypot(my);
        let (ux, uy) = if len > 0.0 { (mx / len, my / len) } else { (1.0, 0.0) };
        let mean_p = ux * mx + uy * my;
        let mean_p2 = (ux * ux * self.xx + 2.0 * ux * uy * self.xy + uy * uy * self.yy) / n;
        let err = if self.count > 1 {
            ((mean_p2 - mean_p * mean_p).max(0.0) * n / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        (len, err, self.z / n)
    }
}

/// Monte Carlo of repeated attempts on explicit spins.
///
/// `basis` gives the nuclear indices of the logical `+Z` and `−Z` states.
/// The aggregation runs in trajectory order, so the result does not depend
/// on the thread count.
pub fn run_sequence_with_spins(
    cfg: &ProtocolConfig,
    spins: &[NuclearSpinParams],
    basis: (usize, usize),
    ket: &[C64],
) -> Result<MemoryTrace> {
    cfg.validate()?;
    if spins.is_empty() {
        return Err(invalid("spins", "at least one nuclear spin required"));
    }
    let kernel = Kernel::new(cfg, spins);
    if ket.len() != kernel.dim() {
        return Err(crate::error::Error::DimensionMismatch {
            expected: kernel.dim(),
            got: ket.len(),
        });
    }
    let norm: f64 = ket.iter().map(|a| a.norm_sqr()).sum();
    let ket: Vec<C64> = ket.iter().map(|a| a / norm.sqrt()).collect();

    let m = cfg.checkpoints.len();
    let mut acc = vec![Moments::default(); m];
    let mut start = 0;
    while start < cfg.trajectories {
        let end = (start + CHUNK).min(cfg.trajectories);
        let chunk: Vec<Vec<Option<[f64; 3]>>> = (start..end)
            .into_par_iter()
            .map(|i| simulate_trajectory(&kernel, cfg, &ket, basis, i))
            .collect();
        for traj in chunk {
            for (a, v) in acc.iter_mut().zip(traj) {
                if let Some(v) = v {
                    a.push(v);
                }
            }
        }
        start = end;
    }

    let total = cfg.trajectories as f64;
    let mut trace = MemoryTrace {
        checkpoints: cfg.checkpoints.clone(),
        xy_length: Vec::with_capacity(m),
        xy_err: Vec::with_capacity(m),
        z_value: Vec::with_capacity(m),
        survival: Vec::with_capacity(m),
        status: Vec::with_capacity(m),
    };
    for a in &acc {
        trace.survival.push(a.count as f64 / total);
        if a.count == 0 {
            trace.xy_length.push(f64::NAN);
            trace.xy_err.push(f64::NAN);
            trace.z_value.push(f64::NAN);
            trace.status.push(CheckpointStatus {
                empty: true,
                ..Default::default()
            });
        } else {
            let (len, err, z) = a.summary();
            trace.xy_length.push(len.min(1.0));
            trace.xy_err.push(err);
            trace.z_value.push(z);
            trace.status.push(CheckpointStatus::default());
        }
    }
    Ok(trace)
}

/// Monte Carlo of repeated entanglement attempts on a memory subspace.
pub fn run_sequence(
    cfg: &ProtocolConfig,
    sub: &SubspaceSpec,
    register: &Register,
    initial: InitialState,
) -> Result<MemoryTrace> {
    let spins = effective_spins(cfg, sub, register)?;
    run_sequence_with_spins(cfg, &spins, sub.logical_basis(), &initial.ket(sub))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    T,
    NReps,
}

impl SweepParam {
    pub fn column(&self) -> &'static str {
        match self {
            Self::Tau => "tau_us",
            Self::T => "t_us",
            Self::NReps => "n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub xy_length: f64,
    pub xy_err: f64,
    pub z_value: f64,
    pub survival: f64,
}

/// Runs the sequence at each grid value. Every point reuses the base seed,
/// so neighbouring points share random numbers. An `n_reps` sweep is a single
/// run with the grid as checkpoints.
pub fn sweep(
    param: SweepParam,
    grid: &[f64],
    base: &ProtocolConfig,
    sub: &SubspaceSpec,
    register: &Register,
    initial: InitialState,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    let row = |value: f64, trace: &MemoryTrace, i: usize| SweepRow {
        value,
        xy_length: trace.xy_length[i],
        xy_err: trace.xy_err[i],
        z_value: trace.z_value[i],
        survival: trace.survival[i],
    };
    match param {
        SweepParam::NReps => {
            if grid.iter().any(|g| !(*g >= 0.0) || g.fract() != 0.0) {
                return Err(invalid("grid", "repetition counts must be non-negative integers"));
            }
            let mut ns: Vec<u64> = grid.iter().map(|&g| g as u64).collect();
            ns.sort_unstable();
            let cfg = ProtocolConfig {
                n_reps: *ns.last().unwrap(),
                checkpoints: ns.clone(),
                ..base.clone()
            };
            let trace = run_sequence(&cfg, sub, register, initial)?;
            Ok(ns.iter().enumerate().map(|(i, &n)| row(n as f64, &trace, i)).collect())
        }
        SweepParam::Tau | SweepParam::T => grid
            .iter()
            .map(|&v| {
                let mut cfg = ProtocolConfig {
                    checkpoints: vec![base.n_reps],
                    ..base.clone()
                };
                if param == SweepParam::Tau {
                    cfg.tau_us = v;
                } else {
                    cfg.t_us = v;
                }
                let trace = run_sequence(&cfg, sub, register, initial)?;
                Ok(row(v, &trace, 0))
            })
            .collect(),
    }
}

/// CSV with header `<param>,xy_len,xy_err,z,survival`.
pub fn sweep_to_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{},xy_len,xy_err,z,survival\n", param.column());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.value, r.xy_length, r.xy_err, r.z_value, r.survival
        ));
    }
    out
}
