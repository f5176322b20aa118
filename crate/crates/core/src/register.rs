//! Measurement-based preparation and readout of the nuclear register through
//! the electron ancilla.
//!
//! States are joint density matrices with the electron as subsystem 0 and the
//! addressed nuclear spins after it, in the order given. Conditional gates are
//! ideal `±π/2` rotations of one nucleus whose sign depends on the electron
//! state, followed by an optional depolarizing error on that nucleus.
//!
//! A click heralds the electron in `|0⟩` with the configured confidence
//! `p_state_given_click`; a missing click updates the state by Bayes' rule.
//! A repeat-until-click step restarts the whole sequence from its input state:
//! the failed attempt's nuclear state is discarded (the long readout and reset
//! randomize the nuclear phase).

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::node::{logical_ket, Parity, Register, SubspaceSpec};
use crate::qcore::{embed, ComplexOperator, DensityMatrix, C64};

/// Bound on repeat-until-click attempts.
pub const MAX_CLICK_ATTEMPTS: usize = 10_000;

/// Electron readout and reset imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutModel {
    /// Click probability for an electron in `|0⟩`.
    pub p_detect_given_bright: f64,
    /// Click probability for an electron in `|−1⟩`.
    pub p_false_bright: f64,
    pub p_state_given_click: f64,
    /// Probability that a reset leaves the electron in `|0⟩`.
    pub init_fidelity: f64,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self {
            p_detect_given_bright: 0.94,
            p_false_bright: 0.01,
            p_state_given_click: 0.99,
            init_fidelity: 0.99,
        }
    }
}

impl ReadoutModel {
    pub fn ideal() -> Self {
        Self {
            p_detect_given_bright: 1.0,
            p_false_bright: 0.0,
            p_state_given_click: 1.0,
            init_fidelity: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_detect_given_bright", self.p_detect_given_bright),
            ("p_false_bright", self.p_false_bright),
            ("p_state_given_click", self.p_state_given_click),
            ("init_fidelity", self.init_fidelity),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.p_detect_given_bright <= self.p_false_bright {
            return Err(invalid(
                "p_detect_given_bright",
                "must exceed p_false_bright for the readout to be invertible",
            ));
        }
        Ok(())
    }

    fn click_probability(&self, p0: f64) -> f64 {
        self.p_detect_given_bright * p0 + self.p_false_bright * (1.0 - p0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    MinusX,
    MinusY,
}

impl Axis {
    fn vector(self) -> [f64; 3] {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::MinusX => [-1.0, 0.0, 0.0],
            Axis::MinusY => [0.0, -1.0, 0.0],
        }
    }
}

/// What happens after a readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    RepeatUntilClick,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    ElectronReset,
    ElectronHalfPi(Axis),
    ElectronPi(Axis),
    /// `R_axis(+π/2)` on nucleus `target` if the electron is in `|0⟩`,
    /// `R_axis(−π/2)` if it is in `|−1⟩`; `positive = false` swaps the signs.
    Conditional { target: usize, axis: Axis, positive: bool },
    Readout(Branch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSequence {
    pub steps: Vec<Step>,
}

/// Result of running a sequence.
#[derive(Debug, Clone)]
pub struct Executed {
    /// Joint electron + nuclear state.
    pub state: DensityMatrix,
    /// Number of passes through the sequence (1 without repeats).
    pub attempts: usize,
    /// Outcome of the last readout, if any.
    pub last_click: Option<bool>,
}

impl GateSequence {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    /// Measurement-based preparation of `|X⟩` on one nucleus.
    pub fn superposition_init() -> Self {
        Self::new(vec![
            Step::ElectronReset,
            Step::ElectronHalfPi(Axis::Y),
            Step::Conditional {
                target: 0,
                axis: Axis::X,
                positive: true,
            },
            Step::ElectronHalfPi(Axis::X),
            Step::Readout(Branch::RepeatUntilClick),
        ])
    }

    /// Reduced swap: moves the electron `|0⟩` into nuclear `|↓⟩`.
    pub fn reduced_swap() -> Self {
        Self::new(vec![
            Step::ElectronReset,
            Step::ElectronHalfPi(Axis::Y),
            Step::Conditional {
                target: 0,
                axis: Axis::X,
                positive: true,
            },
            Step::ElectronHalfPi(Axis::X),
            Step::Conditional {
                target: 0,
                axis: Axis::Y,
                positive: true,
            },
        ])
    }

    /// Parity encoding of two nuclei starting in `|↓↓⟩`. Without the π pulse
    /// a click heralds the antiparallel state.
    pub fn parity_encoding(parity: Parity) -> Self {
        let mut steps = vec![
            Step::ElectronReset,
            Step::ElectronHalfPi(Axis::Y),
            Step::Conditional {
                target: 0,
                axis: Axis::Y,
                positive: true,
            },
            Step::Conditional {
                target: 1,
                axis: Axis::Y,
                positive: true,
            },
            Step::ElectronHalfPi(Axis::Y),
        ];
        if parity == Parity::Parallel {
            steps.push(Step::ElectronPi(Axis::X));
        }
        steps.push(Step::Readout(Branch::RepeatUntilClick));
        Self::new(steps)
    }

    /// Number of conditional gates.
    pub fn conditional_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Conditional { .. }))
            .count()
    }

    fn check(&self, nuclei: usize) -> Result<()> {
        for s in &self.steps {
            if let Step::Conditional { target, .. } = s {
                if *target >= nuclei {
                    return Err(Error::InvalidSubsystem {
                        index: *target,
                        count: nuclei,
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs the sequence on a joint state. `gate_error` is the depolarizing
    /// probability applied to the target after every conditional gate.
    pub fn execute<R: Rng + ?Sized>(
        &self,
        input: &DensityMatrix,
        readout: &ReadoutModel,
        gate_error: f64,
        rng: &mut R,
    ) -> Result<Executed> {
        readout.validate()?;
        check_gate_error(gate_error)?;
        let dims = input.dims().to_vec();
        if dims.len() < 2 || dims.iter().any(|&d| d != 2) {
            return Err(Error::InvalidState(
                "expected an electron followed by at least one nuclear qubit".into(),
            ));
        }
        self.check(dims.len() - 1)?;

        let mut attempts = 0;
        'attempt: loop {
            attempts += 1;
            if attempts > MAX_CLICK_ATTEMPTS {
                return Err(Error::NoClick(MAX_CLICK_ATTEMPTS));
            }
            let mut rho = input.clone();
            let mut last_click = None;
            for step in &self.steps {
                match *step {
                    Step::Readout(branch) => {
                        let p0 = electron_population(&rho);
                        let click = rng.random::<f64>() < readout.click_probability(p0);
                        last_click = Some(click);
                        if !click && branch == Branch::RepeatUntilClick {
                            continue 'attempt;
                        }
                        rho = condition_on_readout(&rho, readout, click)?;
                    }
                    _ => rho = apply_deterministic(&rho, step, readout, gate_error)?,
                }
            }
            return Ok(Executed {
                state: rho,
                attempts,
                last_click,
            });
        }
    }

    /// State conditioned on a click at every readout, without sampling.
    ///
    /// Equals [`Self::execute`]'s output whenever the sequence ends with a
    /// repeat-until-click readout.
    pub fn heralded(&self, input: &DensityMatrix, readout: &ReadoutModel, gate_error: f64) -> Result<DensityMatrix> {
        readout.validate()?;
        check_gate_error(gate_error)?;
        self.check(input.dims().len().saturating_sub(1))?;
        let mut rho = input.clone();
        for step in &self.steps {
            rho = match step {
                Step::Readout(_) => condition_on_readout(&rho, readout, true)?,
                _ => apply_deterministic(&rho, step, readout, gate_error)?,
            };
        }
        Ok(rho)
    }
}

fn check_gate_error(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("gate_error", format!("must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn electron_population(rho: &DensityMatrix) -> f64 {
    let half = rho.dim() / 2;
    (0..half).map(|k| rho.get(k, k).re).sum::<f64>().clamp(0.0, 1.0)
}

fn electron_projector(dims: &[usize], k: usize) -> Result<ComplexOperator> {
    embed(&ComplexOperator::basis_projector(2, k), 0, dims)
}

/// Post-readout state. After a click the electron is in `|0⟩` with
/// probability `p_state_given_click`; after no click the branches are weighted
/// by the likelihood of not clicking.
fn condition_on_readout(rho: &DensityMatrix, readout: &ReadoutModel, click: bool) -> Result<DensityMatrix> {
    let dims = rho.dims().to_vec();
    let b0 = rho.sandwich(&electron_projector(&dims, 0)?);
    let b1 = rho.sandwich(&electron_projector(&dims, 1)?);
    let p0 = b0.trace();
    let p1 = b1.trace();
    const TOL: f64 = 1e-14;
    let w0 = if click {
        // a branch of vanishing weight cannot be heralded
        match (p0 > TOL, p1 > TOL) {
            (true, true) => readout.p_state_given_click,
            (true, false) => 1.0,
            (false, true) => 0.0,
            (false, false) => return Err(Error::InvalidState("state has zero trace".into())),
        }
    } else {
        let l0 = (1.0 - readout.p_detect_given_bright) * p0;
        let l1 = (1.0 - readout.p_false_bright) * p1;
        if l0 + l1 <= TOL {
            return Err(Error::ZeroProbabilityOutcome {
                index: 1,
                probability: l0 + l1,
            });
        }
        l0 / (l0 + l1)
    };
    let n0 = if p0 > TOL { b0.scaled(1.0 / p0) } else { b0 };
    let n1 = if p1 > TOL { b1.scaled(1.0 / p1) } else { b1 };
    n0.mix(&n1, w0)
}

fn apply_deterministic(rho: &DensityMatrix, step: &Step, readout: &ReadoutModel, gate_error: f64) -> Result<DensityMatrix> {
    let dims = rho.dims().to_vec();
    match *step {
        Step::ElectronReset => {
            let nuclei: Vec<usize> = (1..dims.len()).collect();
            let rest = rho.partial_trace(&nuclei)?;
            let f = readout.init_fidelity;
            let e = DensityMatrix::basis_state(2, 0).mix(&DensityMatrix::basis_state(2, 1), f)?;
            Ok(e.tensor(&rest))
        }
        Step::ElectronHalfPi(axis) => rho.evolve_subsystem(&ComplexOperator::rotation(axis.vector(), FRAC_PI_2), 0),
        Step::ElectronPi(axis) => rho.evolve_subsystem(&ComplexOperator::rotation(axis.vector(), PI), 0),
        Step::Conditional { target, axis, positive } => {
            let angle = if positive { FRAC_PI_2 } else { -FRAC_PI_2 };
            let u = conditional_gate(&dims, target + 1, axis, angle)?;
            let out = rho.evolve(&u)?;
            depolarize(&out, target + 1, gate_error)
        }
        Step::Readout(_) => unreachable!("readout handled by the caller"),
    }
}

fn conditional_gate(dims: &[usize], index: usize, axis: Axis, angle: f64) -> Result<ComplexOperator> {
    let nuclear_dims = &dims[1..];
    let plus = embed(&ComplexOperator::rotation(axis.vector(), angle), index - 1, nuclear_dims)?;
    let minus = embed(&ComplexOperator::rotation(axis.vector(), -angle), index - 1, nuclear_dims)?;
    ComplexOperator::basis_projector(2, 0)
        .tensor(&plus)
        .add(&ComplexOperator::basis_projector(2, 1).tensor(&minus))
}

/// `(1 − p)ρ + p·(Tr_k ρ) ⊗ I/2` on subsystem `index`.
fn depolarize(rho: &DensityMatrix, index: usize, p: f64) -> Result<DensityMatrix> {
    if p == 0.0 {
        return Ok(rho.clone());
    }
    let paulis = [
        ComplexOperator::pauli_x(),
        ComplexOperator::pauli_y(),
        ComplexOperator::pauli_z(),
    ];
    let mut twirled: Option<DensityMatrix> = None;
    for (k, s) in paulis.iter().enumerate() {
        let term = rho.evolve_subsystem(s, index)?;
        twirled = Some(match twirled {
            None => term,
            Some(acc) => acc.mix(&term, k as f64 / (k as f64 + 1.0))?,
        });
    }
    let twirled = twirled.expect("three Pauli terms");
    rho.mix(&twirled, 1.0 - 0.75 * p)
}

fn nuclear_marginal(joint: &DensityMatrix) -> Result<DensityMatrix> {
    let keep: Vec<usize> = (1..joint.dims().len()).collect();
    joint.partial_trace(&keep)
}

/// Logical Pauli axis of a subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

/// Logical expectation value of a nuclear state, read from the subspace basis
/// pair `(a, b)` with `a` the `+Z` pole. Population outside the subspace
/// contributes nothing.
pub fn logical_expectation(state: &DensityMatrix, sub: &SubspaceSpec, axis: PauliAxis) -> Result<f64> {
    let dim = 1 << sub.num_spins();
    if state.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: state.dim(),
        });
    }
    let (a, b) = sub.logical_basis();
    let rab = state.get(a, b);
    Ok(match axis {
        PauliAxis::X => 2.0 * rab.re,
        PauliAxis::Y => -2.0 * rab.im,
        PauliAxis::Z => state.get(a, a).re - state.get(b, b).re,
    })
}

/// Tomography estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub err: f64,
}

/// Single-spin and pair preparation and readout with one readout model and a
/// per-gate depolarizing error.
#[derive(Debug, Clone)]
pub struct Controller<'a> {
    pub register: &'a Register,
    pub readout: ReadoutModel,
    pub gate_error: f64,
}

impl<'a> Controller<'a> {
    pub fn new(register: &'a Register, readout: ReadoutModel, gate_error: f64) -> Result<Self> {
        readout.validate()?;
        check_gate_error(gate_error)?;
        Ok(Self {
            register,
            readout,
            gate_error,
        })
    }

    /// Controller whose gate error reproduces the tabulated `f_ir` of `spin`
    /// under `readout` (zero when the readout alone already falls below it).
    pub fn calibrated(register: &'a Register, readout: ReadoutModel, spin: u32) -> Result<Self> {
        let target = register.get(spin)?.f_ir;
        let p = calibrated_gate_error(target, &readout)?;
        Self::new(register, readout, p)
    }

    fn mixed_input(nuclei: usize) -> DensityMatrix {
        let mut parts = vec![DensityMatrix::basis_state(2, 0)];
        parts.extend((0..nuclei).map(|_| DensityMatrix::maximally_mixed(vec![2])));
        DensityMatrix::product(&parts)
    }

    /// Prepares `|X⟩ = (|↓⟩ + |↑⟩)/√2` by repeat-until-click.
    pub fn init_superposition<R: Rng + ?Sized>(&self, spin: u32, rng: &mut R) -> Result<DensityMatrix> {
        self.register.get(spin)?;
        let out = GateSequence::superposition_init().execute(&Self::mixed_input(1), &self.readout, self.gate_error, rng)?;
        nuclear_marginal(&out.state)
    }

    /// Prepares `|↓⟩` with the reduced swap. Deterministic; no readout.
    pub fn init_down(&self, spin: u32) -> Result<DensityMatrix> {
        self.register.get(spin)?;
        let out = GateSequence::reduced_swap().heralded(&Self::mixed_input(1), &self.readout, self.gate_error)?;
        nuclear_marginal(&out)
    }

    /// Encodes `(|↓↓⟩ + |↑↑⟩)/√2` or `(|↑↓⟩ + |↓↑⟩)/√2` on a pair. Each try
    /// re-initializes both spins to `|↓↓⟩`.
    pub fn encode_dps<R: Rng + ?Sized>(&self, sub: &SubspaceSpec, rng: &mut R) -> Result<DensityMatrix> {
        let (first, second, parity) = match *sub {
            SubspaceSpec::Pair { first, second, parity } => (first, second, parity),
            SubspaceSpec::Single(_) => return Err(invalid("subspace", "encoding needs a pair")),
        };
        let down = [self.init_down(first)?, self.init_down(second)?];
        let input = DensityMatrix::product(&[DensityMatrix::basis_state(2, 0), down[0].clone(), down[1].clone()]);
        let out = GateSequence::parity_encoding(parity).execute(&input, &self.readout, self.gate_error, rng)?;
        nuclear_marginal(&out.state)
    }

    /// Ancilla-mediated measurement of a logical Pauli with readout
    /// correction `(f − ε)/(η − ε)`.
    ///
    /// The ancilla ends in `|0⟩` with probability `(1 + c·⟨P⟩)/2`, where the
    /// contrast `c` accounts for the electron reset error and one depolarizing
    /// conditional gate per spin of the subspace. Only the detection errors
    /// `η`, `ε` are corrected.
    pub fn tomography<R: Rng + ?Sized>(
        &self,
        state: &DensityMatrix,
        sub: &SubspaceSpec,
        axis: PauliAxis,
        shots: u64,
        rng: &mut R,
    ) -> Result<Estimate> {
        if shots == 0 {
            return Err(invalid("shots", "must be >= 1"));
        }
        let p0 = self.ancilla_bright_probability(state, sub, axis)?;
        let q = self.readout.click_probability(p0).clamp(0.0, 1.0);
        let clicks = Binomial::new(shots, q)
            .map_err(|e| invalid("shots", e.to_string()))?
            .sample(rng);
        let f = clicks as f64 / shots as f64;
        let (eta, eps) = (self.readout.p_detect_given_bright, self.readout.p_false_bright);
        let value = 2.0 * (f - eps) / (eta - eps) - 1.0;
        let err = 2.0 * (f * (1.0 - f) / shots as f64).sqrt() / (eta - eps);
        Ok(Estimate { value, err })
    }

    /// Infinite-shot limit of [`Self::tomography`].
    pub fn expected_tomography(&self, state: &DensityMatrix, sub: &SubspaceSpec, axis: PauliAxis) -> Result<f64> {
        Ok(2.0 * self.ancilla_bright_probability(state, sub, axis)? - 1.0)
    }

    fn ancilla_bright_probability(&self, state: &DensityMatrix, sub: &SubspaceSpec, axis: PauliAxis) -> Result<f64> {
        for id in sub.spin_ids() {
            self.register.get(id)?;
        }
        let value = logical_expectation(state, sub, axis)?;
        let c = readout_contrast(&self.readout, self.gate_error, sub.num_spins());
        Ok(((1.0 + c * value) / 2.0).clamp(0.0, 1.0))
    }

    /// Combined initialization and readout fidelity `⟨X|ρ|X⟩` through the
    /// full pipeline, with `shots` tomography repetitions.
    pub fn f_ir<R: Rng + ?Sized>(&self, spin: u32, shots: u64, rng: &mut R) -> Result<Estimate> {
        let rho = self.init_superposition(spin, rng)?;
        let x = self.tomography(&rho, &SubspaceSpec::Single(spin), PauliAxis::X, shots, rng)?;
        Ok(Estimate {
            value: (1.0 + x.value) / 2.0,
            err: x.err / 2.0,
        })
    }

    /// Infinite-shot `f_ir`.
    pub fn expected_f_ir(&self, spin: u32) -> Result<f64> {
        self.register.get(spin)?;
        let joint = GateSequence::superposition_init().heralded(&Self::mixed_input(1), &self.readout, self.gate_error)?;
        let rho = nuclear_marginal(&joint)?;
        Ok((1.0 + self.expected_tomography(&rho, &SubspaceSpec::Single(spin), PauliAxis::X)?) / 2.0)
    }
}

/// Tomography contrast: reset error flips the ancilla mapping, each
/// conditional gate shrinks the nuclear signal by `1 − p`.
fn readout_contrast(readout: &ReadoutModel, gate_error: f64, gates: usize) -> f64 {
    (2.0 * readout.init_fidelity - 1.0) * (1.0 - gate_error).powi(gates as i32)
}

/// Per-gate depolarizing error for which the infinite-shot `f_ir` equals
/// `target`. The signal passes one gate at preparation and one at readout, so
/// `⟨X⟩ = X₀·(1 − p)²` with `X₀` the error-free value.
pub fn calibrated_gate_error(target: f64, readout: &ReadoutModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(invalid("f_ir", format!("must lie in [0, 1], got {target}")));
    }
    readout.validate()?;
    let joint = GateSequence::superposition_init().heralded(&Controller::mixed_input(1), readout, 0.0)?;
    let rho = nuclear_marginal(&joint)?;
    let x0 = readout_contrast(readout, 0.0, 1) * logical_expectation(&rho, &SubspaceSpec::Single(0), PauliAxis::X)?;
    let want = 2.0 * target - 1.0;
    if x0 <= 0.0 || want >= x0 {
        return Ok(0.0);
    }
    Ok(1.0 - (want.max(0.0) / x0).sqrt())
}

/// Ideal logical `|X⟩` of a subspace, as a nuclear ket.
pub fn plus_x_ket(sub: &SubspaceSpec) -> Vec<C64> {
    logical_ket(sub, FRAC_PI_2, 0.0)
}
