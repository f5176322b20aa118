//! Entangling-attempt engine: per-attempt evolution of the electron–memory
//! state, repeated-sequence Monte Carlo and the analytic dephasing models.
//!
//! Sequence per attempt: π/2 on the electron, wait `t`, π, wait `t − τ`,
//! measure the electron, and after a `|−1⟩` outcome hold it in `|−1⟩` for the
//! sampled reset time before returning it to `|0⟩`. The phase a memory picks
//! up then differs between the two outcomes by `Δω·(t_reset − τ)`.

mod analytic;
mod attempt;
mod config;
mod kernel;
mod sequence;
mod trace;


pub use analytic::{
    analytic_fidelity, extended_n1e, n1e_from_factor, optimal_tau, per_rep_coherence_exact,
    per_rep_coherence_gaussian,
};
pub use attempt::{free_unitary, interval_unitary, run_attempt, AttemptRecord, Projection};
pub use config::{conditional_shift, effective_spins, Channels, ProtocolConfig, SimulationModel};
pub use sequence::{
    run_sequence, run_sequence_with_spins, sweep, sweep_to_csv, trajectory_rng, InitialState, SweepParam,
    SweepRow,
};
pub use trace::{CheckpointStatus, MemoryTrace};
