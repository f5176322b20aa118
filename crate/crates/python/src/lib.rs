//! Python bindings. Results come back as plain dicts and lists so they drop
//! straight into numpy or pandas.

use nvsim_core::analysis::{self, ScalingPoint};
use nvsim_core::node::{self, SubspaceSpec};
use nvsim_core::protocol::{self, InitialState};
use nvsim_core::pump::{self, LevelScheme, RepumpConfig, StateKind};
use nvsim_core::register::{Controller, ReadoutModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: nvsim_core::Error) -> PyErr {
    use nvsim_core::Error as E;
    match e {
        E::InvalidParameter { .. } | E::Parse(_) | E::UnknownSpin(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn subspace(text: &str) -> PyResult<SubspaceSpec> {
    SubspaceSpec::parse(text).map_err(py_err)
}

fn initial_state(text: &str) -> PyResult<InitialState> {
    match text {
        "superposition" | "x" => Ok(InitialState::Superposition),
        "up" | "z" => Ok(InitialState::Up),
        _ => Err(PyValueError::new_err(format!("initial: expected `superposition` or `up`, got `{text}`"))),
    }
}

/// The nuclear-spin table.
#[pyclass(name = "Register", module = "nvsim", skip_from_py_object)]
#[derive(Clone)]
struct PyRegister {
    inner: node::Register,
}

#[pymethods]
impl PyRegister {
    /// The bundled five-spin table.
    #[new]
    fn new() -> Self {
        Self {
            inner: node::Register::default_table(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: node::Register::from_toml(text).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn ids(&self) -> Vec<u32> {
        self.inner.ids()
    }

    /// Labels of every single-spin and two-spin subspace.
    fn subspaces(&self) -> Vec<String> {
        SubspaceSpec::enumerate(&self.inner).iter().map(|s| s.label()).collect()
    }

    fn delta_omega(&self, subspace_label: &str) -> PyResult<f64> {
        node::effective_delta_omega(&subspace(subspace_label)?, &self.inner).map_err(py_err)
    }

    fn t2star_ms(&self, subspace_label: &str) -> PyResult<f64> {
        node::subspace_t2star(&subspace(subspace_label)?, &self.inner).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.spins.len()
    }

    fn __repr__(&self) -> String {
        format!("Register(ids={:?})", self.inner.ids())
    }
}

/// Settings of a repeated-attempt run; defaults are the bundled ones.
#[pyclass(name = "ProtocolConfig", module = "nvsim", skip_from_py_object)]
#[derive(Clone)]
struct PyProtocolConfig {
    inner: protocol::ProtocolConfig,
}

#[pymethods]
impl PyProtocolConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: protocol::ProtocolConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: protocol::ProtocolConfig =
            toml::from_str(text).map_err(|e| PyValueError::new_err(e.message().to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    /// Sets `n_reps` and checkpoints `0, step, 2·step, …, n_reps`.
    fn set_grid(&mut self, n_reps: u64, step: u64) {
        self.inner = self.inner.clone().with_checkpoint_step(n_reps, step);
    }

    /// Switches every error channel off.
    fn disable_channels(&mut self) {
        self.inner.channels = protocol::Channels::none();
    }

    #[getter]
    fn t_us(&self) -> f64 {
        self.inner.t_us
    }
    #[setter]
    fn set_t_us(&mut self, v: f64) {
        self.inner.t_us = v;
    }
    #[getter]
    fn tau_us(&self) -> f64 {
        self.inner.tau_us
    }
    #[setter]
    fn set_tau_us(&mut self, v: f64) {
        self.inner.tau_us = v;
    }
    #[getter]
    fn n_reps(&self) -> u64 {
        self.inner.n_reps
    }
    #[getter]
    fn checkpoints(&self) -> Vec<u64> {
        self.inner.checkpoints.clone()
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn trajectories(&self) -> usize {
        self.inner.trajectories
    }
    #[setter]
    fn set_trajectories(&mut self, v: usize) {
        self.inner.trajectories = v;
    }
    #[getter]
    fn p_reset_needed(&self) -> f64 {
        self.inner.p_reset_needed
    }
    #[setter]
    fn set_p_reset_needed(&mut self, v: f64) {
        self.inner.p_reset_needed = v;
    }
    #[getter]
    fn model(&self) -> &'static str {
        match self.inner.model {
            protocol::SimulationModel::Hyperfine => "hyperfine",
            protocol::SimulationModel::Measured => "measured",
        }
    }
    #[setter]
    fn set_model(&mut self, v: &str) -> PyResult<()> {
        self.inner.model = match v {
            "hyperfine" => protocol::SimulationModel::Hyperfine,
            "measured" => protocol::SimulationModel::Measured,
            _ => return Err(PyValueError::new_err(format!("model: expected `hyperfine` or `measured`, got `{v}`"))),
        };
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "ProtocolConfig(t_us={}, tau_us={}, n_reps={}, trajectories={}, seed={})",
            self.inner.t_us, self.inner.tau_us, self.inner.n_reps, self.inner.trajectories, self.inner.seed
        )
    }
}

fn register_or_default(register: Option<PyRef<'_, PyRegister>>) -> node::Register {
    register.map(|r| r.inner.clone()).unwrap_or_else(node::Register::default_table)
}

/// Monte Carlo memory trace: dict of `n`, `xy_len`, `xy_err`, `z`, `survival`.
#[pyfunction]
#[pyo3(signature = (config, subspace_label, register=None, initial="superposition", correct_t2star=false))]
fn run_sequence<'py>(
    py: Python<'py>,
    config: PyRef<'_, PyProtocolConfig>,
    subspace_label: &str,
    register: Option<PyRef<'_, PyRegister>>,
    initial: &str,
    correct_t2star: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let sub = subspace(subspace_label)?;
    let reg = register_or_default(register);
    let cfg = config.inner.clone();
    let init = initial_state(initial)?;
    let trace = py
        .detach(|| {
            let t = protocol::run_sequence(&cfg, &sub, &reg, init)?;
            if correct_t2star {
                let t2 = node::subspace_t2star(&sub, &reg)?;
                analysis::correct_t2star(&t, t2, cfg.rep_period_us)
            } else {
                Ok(t)
            }
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("n", trace.checkpoints)?;
    d.set_item("xy_len", trace.xy_length)?;
    d.set_item("xy_err", trace.xy_err)?;
    d.set_item("z", trace.z_value)?;
    d.set_item("survival", trace.survival)?;
    Ok(d)
}

#[pyfunction]
fn extended_n1e(delta_omega_khz: f64, tau_us: f64, c_khz: f64) -> f64 {
    protocol::extended_n1e(delta_omega_khz, tau_us, c_khz)
}

#[pyfunction]
fn analytic_fidelity(delta_omega_khz: f64, tau_us: f64, n: u64) -> f64 {
    protocol::analytic_fidelity(delta_omega_khz, tau_us, n)
}

fn points(x: &[f64], y: &[f64], err: Option<Vec<f64>>) -> PyResult<Vec<(f64, f64, f64)>> {
    let err = err.unwrap_or_else(|| vec![0.0; x.len()]);
    if x.len() != y.len() || x.len() != err.len() {
        return Err(PyValueError::new_err("x, y and err must have equal lengths"));
    }
    Ok(x.iter().zip(y).zip(&err).map(|((&a, &b), &c)| (a, b, c)).collect())
}

/// `A·exp(−x/n_1e)`.
#[pyfunction]
#[pyo3(signature = (x, y, err=None))]
fn fit_exponential<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>, err: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let f = analysis::fit_exponential(&points(&x, &y, err)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("amplitude", f.amplitude)?;
    d.set_item("amplitude_err", f.amplitude_err)?;
    d.set_item("n_1e", f.n_1e)?;
    d.set_item("n_1e_err", f.n_1e_err)?;
    d.set_item("residual_norm", f.residual_norm)?;
    d.set_item("no_decay", f.no_decay)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (x, y, err=None))]
fn fit_gaussian_peak<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>, err: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let f = analysis::fit_gaussian_peak(&points(&x, &y, err)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("center", f.center)?;
    d.set_item("center_err", f.center_err)?;
    d.set_item("width", f.width)?;
    d.set_item("amplitude", f.amplitude)?;
    d.set_item("offset", f.offset)?;
    d.set_item("residual_norm", f.residual_norm)?;
    d.set_item("flat", f.flat)?;
    Ok(d)
}

/// Fits `(τ, C)` of the dephasing model to `N_1/e` against `Δω`.
#[pyfunction]
#[pyo3(signature = (delta_omega_khz, n_1e, err=None))]
fn fit_scaling_model<'py>(
    py: Python<'py>,
    delta_omega_khz: Vec<f64>,
    n_1e: Vec<f64>,
    err: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let pts: Vec<ScalingPoint> = points(&delta_omega_khz, &n_1e, err)?
        .into_iter()
        .map(|(a, b, c)| ScalingPoint {
            delta_omega_khz: a,
            n_1e: b,
            err: if c > 0.0 { c } else { 1.0 },
        })
        .collect();
    let f = analysis::fit_scaling_model(&pts).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("tau_us", f.tau_us)?;
    d.set_item("tau_err", f.tau_err)?;
    d.set_item("c_khz", f.c_khz)?;
    d.set_item("c_err", f.c_err)?;
    d.set_item("residual_norm", f.residual_norm)?;
    d.set_item("condition_number", f.condition_number)?;
    Ok(d)
}

/// Level populations under the repump laser, starting in `|−1⟩`, and the
/// double-exponential fit of the reset curve.
#[pyfunction]
#[pyo3(signature = (scheme="a", duration_ns=3000.0, dt_ns=0.1, stride=10))]
fn pump_curve<'py>(py: Python<'py>, scheme: &str, duration_ns: f64, dt_ns: f64, stride: usize) -> PyResult<Bound<'py, PyDict>> {
    let config = match scheme {
        "a" | "A" => RepumpConfig::A,
        "e" | "E" => RepumpConfig::E,
        _ => return Err(PyValueError::new_err(format!("scheme: expected `a` or `e`, got `{scheme}`"))),
    };
    let scheme = LevelScheme::default_for(config);
    let p0 = scheme.start_in(StateKind::GroundM1).map_err(py_err)?;
    let traj = pump::integrate_rates(&scheme, &p0, duration_ns, dt_ns).map_err(py_err)?;
    let fit = pump::fit_reset_curve(&traj).map_err(py_err)?;
    let thin = traj.thinned(stride);
    let d = PyDict::new(py);
    d.set_item("t_ns", thin.times.clone())?;
    d.set_item("p_0", thin.kind_population(StateKind::Ground0))?;
    d.set_item("p_m1", thin.kind_population(StateKind::GroundM1))?;
    d.set_item("p_singlet", thin.kind_population(StateKind::Singlet))?;
    d.set_item("weight", fit.weight)?;
    d.set_item("t_fast_ns", fit.t_fast)?;
    d.set_item("t_slow_ns", fit.t_slow)?;
    Ok(d)
}

#[pyfunction]
fn ionization_survival(n_resets: u64, n_d: f64) -> f64 {
    pump::ionization_survival(n_resets, n_d)
}

#[pyfunction]
fn simulate_ionization(checkpoints: Vec<u64>, n_d: f64, trajectories: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pump::simulate_ionization(&checkpoints, n_d, trajectories, &mut rng).map_err(py_err)
}

fn controller<'a>(reg: &'a node::Register, spin: u32, ideal: bool, gate_error: Option<f64>) -> PyResult<Controller<'a>> {
    let readout = if ideal { ReadoutModel::ideal() } else { ReadoutModel::default() };
    match (ideal, gate_error) {
        (_, Some(p)) => Controller::new(reg, readout, p),
        (true, None) => Controller::new(reg, readout, 0.0),
        (false, None) => Controller::calibrated(reg, readout, spin),
    }
    .map_err(py_err)
}

/// Simulated initialization-and-readout fidelity of one spin:
/// `(value, err)` from `shots` tomography shots.
#[pyfunction]
#[pyo3(signature = (spin, shots=20000, seed=1, ideal=false, gate_error=None, register=None))]
fn init_fidelity(
    spin: u32,
    shots: u64,
    seed: u64,
    ideal: bool,
    gate_error: Option<f64>,
    register: Option<PyRef<'_, PyRegister>>,
) -> PyResult<(f64, f64)> {
    let reg = register_or_default(register);
    let ctl = controller(&reg, spin, ideal, gate_error)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = ctl.f_ir(spin, shots, &mut rng).map_err(py_err)?;
    Ok((e.value, e.err))
}

/// Infinite-shot limit of [`init_fidelity`].
#[pyfunction]
#[pyo3(signature = (spin, ideal=false, gate_error=None, register=None))]
fn expected_init_fidelity(spin: u32, ideal: bool, gate_error: Option<f64>, register: Option<PyRef<'_, PyRegister>>) -> PyResult<f64> {
    let reg = register_or_default(register);
    controller(&reg, spin, ideal, gate_error)?.expected_f_ir(spin).map_err(py_err)
}

/// Bloch vector of a spin after the heralded superposition initialization.
#[pyfunction]
#[pyo3(signature = (spin, seed=1, ideal=false))]
fn init_superposition(spin: u32, seed: u64, ideal: bool) -> PyResult<(f64, f64, f64)> {
    let reg = node::Register::default_table();
    let ctl = controller(&reg, spin, ideal, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = ctl.init_superposition(spin, &mut rng).map_err(py_err)?;
    let [x, y, z] = rho.bloch_vector().map_err(py_err)?;
    Ok((x, y, z))
}

#[pymodule]
fn nvsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRegister>()?;
    m.add_class::<PyProtocolConfig>()?;
    m.add_function(wrap_pyfunction!(run_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(extended_n1e, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian_peak, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaling_model, m)?)?;
    m.add_function(wrap_pyfunction!(pump_curve, m)?)?;
    m.add_function(wrap_pyfunction!(ionization_survival, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ionization, m)?)?;
    m.add_function(wrap_pyfunction!(init_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(expected_init_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(init_superposition, m)?)?;
    Ok(())
}
