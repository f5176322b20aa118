//! Named experiments. Each returns its output files as `(name, contents)`;
//! nothing touches the disk here.

use nvsim_core::analysis::{correct_t2star, fit_exponential, fit_scaling_model, ScalingPoint};
use nvsim_core::node::{effective_delta_omega, subspace_t2star, Parity, Register, SubspaceSpec};
use nvsim_core::protocol::{
    extended_n1e, run_sequence, sweep, sweep_to_csv, InitialState, MemoryTrace, ProtocolConfig, SweepParam,
};
use nvsim_core::pump::{
    fit_reset_curve, integrate_rates, ionization_survival, simulate_ionization, LevelScheme, StateKind,
};
use nvsim_core::register::{Controller, ReadoutModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data::{CliError, CliResult, DataSource};

pub type Outputs = Vec<(String, String)>;

pub struct Context {
    pub cfg: ProtocolConfig,
    pub register: Register,
    pub data: DataSource,
}

pub fn parse_subspace(text: &str) -> CliResult<SubspaceSpec> {
    SubspaceSpec::parse(text).map_err(|e| CliError::Config(format!("subspace: {e}")))
}

fn check_subspace(sub: &SubspaceSpec, reg: &Register) -> CliResult<()> {
    for id in sub.spin_ids() {
        reg.get(id)?;
    }
    Ok(())
}

/// Overrides the checkpoint grid when either flag is given.
pub fn with_grid(cfg: &ProtocolConfig, n_reps: Option<u64>, step: Option<u64>) -> CliResult<ProtocolConfig> {
    if n_reps.is_none() && step.is_none() {
        return Ok(cfg.clone());
    }
    let n = n_reps.unwrap_or(cfg.n_reps);
    let step = step.unwrap_or((n / 10).max(1));
    if step == 0 {
        return Err(CliError::Config("step: must be > 0".into()));
    }
    Ok(cfg.clone().with_checkpoint_step(n, step))
}

fn t2_corrected(trace: &MemoryTrace, ctx: &Context, cfg: &ProtocolConfig, sub: &SubspaceSpec) -> CliResult<MemoryTrace> {
    let t2 = subspace_t2star(sub, &ctx.register)?;
    Ok(correct_t2star(trace, t2, cfg.rep_period_us)?)
}

fn decay_json(trace: &MemoryTrace) -> serde_json::Value {
    match fit_exponential(&trace.points()) {
        Ok(f) => json!({
            "model": "exponential",
            "params": {"amplitude": f.amplitude, "n_1e": f.n_1e},
            "errs": {"amplitude": f.amplitude_err, "n_1e": f.n_1e_err},
            "residual_norm": f.residual_norm,
            "flags": {"no_decay": f.no_decay},
        }),
        Err(e) => json!({"model": "exponential", "error": e.to_string()}),
    }
}

pub fn pump(scheme: &LevelScheme, start: StateKind, duration_ns: f64, dt_ns: f64, stride: usize) -> CliResult<Outputs> {
    let p0 = scheme.start_in(start)?;
    let traj = integrate_rates(scheme, &p0, duration_ns, dt_ns)?;
    let fit = fit_reset_curve(&traj);
    let fit = match fit {
        Ok(f) => json!({
            "model": "double_exponential",
            "params": {"weight": f.weight, "t_fast_ns": f.t_fast, "t_slow_ns": f.t_slow},
            "errs": {"weight": f.weight_err, "t_fast_ns": f.t_fast_err, "t_slow_ns": f.t_slow_err},
            "residual_norm": f.residual_norm,
            "flags": {"degenerate": f.degenerate},
        }),
        Err(e) => json!({"model": "double_exponential", "error": e.to_string()}),
    };
    Ok(vec![
        ("pump.csv".into(), traj.thinned(stride.max(1)).to_csv()),
        ("pump_fit.json".into(), pretty(&fit)),
    ])
}

pub fn dephase(ctx: &Context, sub: &SubspaceSpec, initial: InitialState, correct: bool) -> CliResult<Outputs> {
    check_subspace(sub, &ctx.register)?;
    let trace = run_sequence(&ctx.cfg, sub, &ctx.register, initial)?;
    let mut out = vec![("dephase.csv".to_string(), trace.to_csv())];
    let fitted = if correct {
        let corrected = t2_corrected(&trace, ctx, &ctx.cfg, sub)?;
        out.push(("dephase_corrected.csv".into(), corrected.to_csv()));
        corrected
    } else {
        trace
    };
    out.push(("dephase_fit.json".into(), pretty(&decay_json(&fitted))));
    Ok(out)
}

pub fn grid(from: f64, to: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0) || !(to >= from) || !from.is_finite() || !to.is_finite() {
        return Err(CliError::Config(format!("grid: need from <= to and step > 0 (got {from}, {to}, {step})")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + step * i as f64).collect())
}

pub fn sweep_experiment(
    ctx: &Context,
    param: SweepParam,
    sub: &SubspaceSpec,
    values: &[f64],
    initial: InitialState,
) -> CliResult<Outputs> {
    check_subspace(sub, &ctx.register)?;
    // fail on an invalid grid point before any work
    for &v in values {
        let mut c = ctx.cfg.clone();
        match param {
            SweepParam::Tau => c.tau_us = v,
            SweepParam::T => c.t_us = v,
            SweepParam::NReps => {}
        }
        c.validate()
            .map_err(|e| CliError::Config(format!("grid value {v}: {e}")))?;
    }
    let rows = sweep(param, values, &ctx.cfg, sub, &ctx.register, initial)?;
    let name = match param {
        SweepParam::Tau => "sweep_tau.csv",
        SweepParam::T => "sweep_t.csv",
        SweepParam::NReps => "sweep_n.csv",
    };
    Ok(vec![(name.into(), sweep_to_csv(param, &rows))])
}

pub fn dps_scan(ctx: &Context, first: u32, second: u32) -> CliResult<Outputs> {
    let subs = [
        SubspaceSpec::Single(first),
        SubspaceSpec::pair(first, second, Parity::Antiparallel)?,
        SubspaceSpec::pair(first, second, Parity::Parallel)?,
    ];
    let mut traces = String::from("subspace,n,xy_len,xy_err,z,survival\n");
    let mut fits = String::from("subspace,delta_omega_khz,n_1e,err\n");
    for sub in &subs {
        check_subspace(sub, &ctx.register)?;
        let trace = run_sequence(&ctx.cfg, sub, &ctx.register, InitialState::Superposition)?;
        for line in trace.to_csv().lines().skip(1) {
            traces.push_str(&format!("{},{line}\n", sub.label()));
        }
        let (n1e, err) = match fit_exponential(&trace.points()) {
            Ok(f) => (f.n_1e, f.n_1e_err),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let dw = effective_delta_omega(sub, &ctx.register)?;
        fits.push_str(&format!("{},{dw},{n1e},{err}\n", sub.label()));
    }
    Ok(vec![("dps_scan.csv".into(), traces), ("dps_fit.csv".into(), fits)])
}

/// N₁/ₑ of every subspace, by Monte Carlo (T₂*-corrected when intrinsic
/// dephasing is on) or from the closed-form model only.
pub fn scaling(ctx: &Context, analytic_only: bool) -> CliResult<Outputs> {
    let cfg = &ctx.cfg;
    let mut rows: Vec<(SubspaceSpec, f64)> = SubspaceSpec::enumerate(&ctx.register)
        .into_iter()
        .map(|s| Ok((s, effective_delta_omega(&s, &ctx.register)?)))
        .collect::<CliResult<_>>()?;
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    let tau = cfg.tau_us;
    let c = cfg.channels.coupling_offset_khz;
    let mut csv = String::from("subspace,delta_omega_khz,n_1e,err,model_n_1e\n");
    let mut points = Vec::new();
    for (i, (sub, dw)) in rows.iter().enumerate() {
        let model = extended_n1e(*dw, tau, c);
        let (n1e, err) = if analytic_only {
            (model, 0.0)
        } else {
            let n_reps = if model.is_finite() { (3.0 * model).round().clamp(60.0, 6000.0) as u64 } else { 6000 };
            let run_cfg = ProtocolConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            }
            .with_checkpoint_step(n_reps, (n_reps / 15).max(1));
            let mut trace = run_sequence(&run_cfg, sub, &ctx.register, InitialState::Superposition)?;
            if cfg.channels.intrinsic_dephasing {
                trace = t2_corrected(&trace, ctx, &run_cfg, sub)?;
            }
            match fit_exponential(&trace.points()) {
                Ok(f) => (f.n_1e, f.n_1e_err),
                Err(_) => (f64::NAN, f64::NAN),
            }
        };
        csv.push_str(&format!("{},{dw},{n1e},{err},{model}\n", sub.label()));
        if n1e.is_finite() && n1e > 0.0 && *dw > 0.0 {
            points.push(ScalingPoint {
                delta_omega_khz: *dw,
                n_1e: n1e,
                err: if err > 0.0 && err.is_finite() { err } else { 1.0 },
            });
        }
    }
    let fit = match fit_scaling_model(&points) {
        Ok(f) => json!({
            "model": "scaling",
            "params": {"tau_us": f.tau_us, "c_khz": f.c_khz},
            "errs": {"tau_us": f.tau_err, "c_khz": f.c_err},
            "residual_norm": f.residual_norm,
            "flags": {"condition_number": f.condition_number},
        }),
        Err(e) => json!({"model": "scaling", "error": e.to_string()}),
    };
    Ok(vec![("scaling.csv".into(), csv), ("scaling_fit.json".into(), pretty(&fit))])
}

pub fn ionization(ctx: &Context, n_max: u64, step: u64) -> CliResult<Outputs> {
    if step == 0 {
        return Err(CliError::Config("step: must be > 0".into()));
    }
    let n_d = ctx.cfg.channels.ionization_n_d;
    let checkpoints: Vec<u64> = (0..=n_max / step).map(|i| i * step).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mc = simulate_ionization(&checkpoints, n_d, ctx.cfg.trajectories, &mut rng)?;
    let mut csv = String::from("n,survival_mc,survival_model\n");
    for (n, s) in checkpoints.iter().zip(&mc) {
        csv.push_str(&format!("{n},{s},{}\n", ionization_survival(*n, n_d)));
    }
    Ok(vec![("ionization.csv".into(), csv)])
}

pub fn init_fidelity(ctx: &Context, shots: u64, ideal: bool, gate_error: Option<f64>) -> CliResult<Outputs> {
    let readout = if ideal { ReadoutModel::ideal() } else { ReadoutModel::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut csv = String::from("spin_id,f_ir,err\n");
    for id in ctx.register.ids() {
        let ctl = match (ideal, gate_error) {
            (_, Some(p)) => Controller::new(&ctx.register, readout, p)?,
            (true, None) => Controller::new(&ctx.register, readout, 0.0)?,
            (false, None) => Controller::calibrated(&ctx.register, readout, id)?,
        };
        let f = ctl.f_ir(id, shots, &mut rng)?;
        csv.push_str(&format!("{id},{},{}\n", f.value, f.err));
    }
    Ok(vec![("init_fidelity.csv".into(), csv)])
}

pub fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}
