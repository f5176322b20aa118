//! Optical reset kinetics: rate equations for the electronic levels, random
//! reset durations and charge-state (ionization) survival.
//!
//! Times are in ns and rates in 1/ns throughout this module.

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_double_exponential, DoubleExpFit};
use crate::error::{invalid, Error, Result};

const LEVEL_SCHEME_A: &str = include_str!("../data/level_scheme_a.toml");
const LEVEL_SCHEME_E: &str = include_str!("../data/level_scheme_e.toml");

/// Tolerance on `Σp = 1` for initial populations.
const NORM_TOL: f64 = 1e-9;
const UNSTABLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Ground0,
    GroundM1,
    GroundP1,
    Excited,
    Singlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelState {
    pub label: String,
    pub kind: StateKind,
}

/// Directed first-order transition `from → to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub from: String,
    pub to: String,
    pub rate_per_ns: f64,
}

/// Which excited-state pair the repump laser addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepumpConfig {
    /// A₁,₂: each excited state decays equally to `|−1⟩` and `|+1⟩`.
    A,
    /// E₁,₂: E₁ decays only to `|−1⟩`, E₂ only to `|+1⟩`.
    E,
}

/// Parameters of the default seven-level scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub config: RepumpConfig,
    pub excited_lifetime_ns: f64,
    pub singlet_lifetime_ns: f64,
    /// Singlet decay ratio to `(|0⟩, |+1⟩, |−1⟩)`.
    pub singlet_branching: [f64; 3],
    /// Spin-flipping decay of the addressed excited states straight to `|0⟩`.
    pub direct_per_ns: f64,
    /// Intersystem crossing from the addressed excited states to the singlet.
    pub isc_per_ns: f64,
    /// Laser excitation (and stimulated emission) rate.
    pub pump_per_ns: f64,
}

impl SchemeParams {
    /// Hand-tuned so that the simulated fast reset timescale at saturation is
    /// about 29 ns (A) or 48 ns (E).
    pub fn tuned(config: RepumpConfig) -> Self {
        let (direct, isc) = match config {
            RepumpConfig::A => (0.0640, 0.0080),
            RepumpConfig::E => (0.0398, 0.0040),
        };
        Self {
            config,
            excited_lifetime_ns: 10.0,
            singlet_lifetime_ns: 440.0,
            singlet_branching: [2.0, 1.0, 1.0],
            direct_per_ns: direct,
            isc_per_ns: isc,
            pump_per_ns: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelScheme {
    #[serde(rename = "state")]
    pub states: Vec<LevelState>,
    #[serde(rename = "rate", default)]
    pub rates: Vec<RateEntry>,
    #[serde(rename = "pump", default)]
    pub pump_rates: Vec<RateEntry>,
}

fn entry(from: &str, to: &str, rate: f64) -> RateEntry {
    RateEntry {
        from: from.into(),
        to: to.into(),
        rate_per_ns: rate,
    }
}

impl LevelScheme {
    pub fn new(states: Vec<LevelState>, rates: Vec<RateEntry>, pump_rates: Vec<RateEntry>) -> Result<Self> {
        let s = Self {
            states,
            rates,
            pump_rates,
        };
        s.validate()?;
        Ok(s)
    }

    /// Ground `|0⟩, |−1⟩, |+1⟩`, excited `ex0` (E_x,y), `ex_m1`/`ex_p1` (the
    /// laser-addressed pair) and the singlet `S`.
    pub fn build(p: &SchemeParams) -> Result<Self> {
        let state = |label: &str, kind| LevelState {
            label: label.into(),
            kind,
        };
        let states = vec![
            state("g0", StateKind::Ground0),
            state("gm1", StateKind::GroundM1),
            state("gp1", StateKind::GroundP1),
            state("ex0", StateKind::Excited),
            state("ex_m1", StateKind::Excited),
            state("ex_p1", StateKind::Excited),
            state("S", StateKind::Singlet),
        ];
        let total = 1.0 / p.excited_lifetime_ns;
        let radiative = total - p.direct_per_ns - p.isc_per_ns;
        if radiative < 0.0 {
            return Err(invalid(
                "direct_per_ns",
                "direct decay plus intersystem crossing exceed the excited-state decay rate",
            ));
        }
        let b = p.singlet_branching;
        let b_sum: f64 = b.iter().sum();
        if b.iter().any(|x| *x < 0.0) || !(b_sum > 0.0) {
            return Err(invalid("singlet_branching", "ratios must be non-negative and not all zero"));
        }
        let ks = 1.0 / p.singlet_lifetime_ns;

        let mut rates = vec![entry("ex0", "g0", total)];
        match p.config {
            RepumpConfig::A => {
                for ex in ["ex_m1", "ex_p1"] {
                    rates.push(entry(ex, "gm1", radiative / 2.0));
                    rates.push(entry(ex, "gp1", radiative / 2.0));
                }
            }
            RepumpConfig::E => {
                rates.push(entry("ex_m1", "gm1", radiative));
                rates.push(entry("ex_p1", "gp1", radiative));
            }
        }
        for ex in ["ex_m1", "ex_p1"] {
            rates.push(entry(ex, "g0", p.direct_per_ns));
            rates.push(entry(ex, "S", p.isc_per_ns));
        }
        rates.push(entry("S", "g0", ks * b[0] / b_sum));
        rates.push(entry("S", "gp1", ks * b[1] / b_sum));
        rates.push(entry("S", "gm1", ks * b[2] / b_sum));
        rates.retain(|r| r.rate_per_ns > 0.0);

        let pump_rates = vec![
            entry("gm1", "ex_m1", p.pump_per_ns),
            entry("ex_m1", "gm1", p.pump_per_ns),
            entry("gp1", "ex_p1", p.pump_per_ns),
            entry("ex_p1", "gp1", p.pump_per_ns),
        ];
        Self::new(states, rates, pump_rates)
    }

    /// The bundled scheme for a repump configuration.
    pub fn default_for(config: RepumpConfig) -> Self {
        let text = match config {
            RepumpConfig::A => LEVEL_SCHEME_A,
            RepumpConfig::E => LEVEL_SCHEME_E,
        };
        Self::from_toml(text).expect("bundled level scheme parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("level scheme serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.states.iter().enumerate() {
            if self.states[..i].iter().any(|o| o.label == s.label) {
                return Err(invalid("label", format!("duplicate state `{}`", s.label)));
            }
        }
        for kind in [StateKind::Ground0, StateKind::GroundM1, StateKind::GroundP1] {
            if self.states.iter().filter(|s| s.kind == kind).count() != 1 {
                return Err(invalid("kind", format!("exactly one {kind:?} state required")));
            }
        }
        for r in self.rates.iter().chain(&self.pump_rates) {
            self.index(&r.from)?;
            self.index(&r.to)?;
            if r.from == r.to {
                return Err(invalid("rate", format!("self-transition on `{}`", r.from)));
            }
            if !(r.rate_per_ns >= 0.0) || !r.rate_per_ns.is_finite() {
                return Err(invalid(
                    "rate_per_ns",
                    format!("{} -> {}: must be finite and >= 0, got {}", r.from, r.to, r.rate_per_ns),
                ));
            }
        }
        Ok(())
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| invalid("label", format!("unknown state `{label}`")))
    }

    pub fn kind_index(&self, kind: StateKind) -> Option<usize> {
        self.states.iter().position(|s| s.kind == kind)
    }

    /// Generator `G` of `dp/dt = G·p`, row-major (`G[to][from]`).
    pub fn generator(&self) -> Vec<Vec<f64>> {
        let n = self.states.len();
        let mut g = vec![vec![0.0; n]; n];
        for r in self.rates.iter().chain(&self.pump_rates) {
            let (from, to) = (self.index(&r.from).unwrap(), self.index(&r.to).unwrap());
            g[to][from] += r.rate_per_ns;
            g[from][from] -= r.rate_per_ns;
        }
        g
    }

    /// Populations with everything in the state of the given kind.
    pub fn start_in(&self, kind: StateKind) -> Result<Vec<f64>> {
        let i = self
            .kind_index(kind)
            .ok_or_else(|| invalid("kind", format!("no {kind:?} state in scheme")))?;
        let mut p = vec![0.0; self.states.len()];
        p[i] = 1.0;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTrajectory {
    pub kinds: Vec<StateKind>,
    pub times: Vec<f64>,
    /// One population vector per time point.
    pub populations: Vec<Vec<f64>>,
}

impl PopulationTrajectory {
    /// Summed population of every state of a kind, per time point.
    pub fn kind_population(&self, kind: StateKind) -> Vec<f64> {
        self.populations
            .iter()
            .map(|p| p.iter().zip(&self.kinds).filter(|(_, k)| **k == kind).map(|(x, _)| x).sum())
            .collect()
    }

    /// CSV with header `t_ns,p_0,p_m1,p_p1,p_ex,p_singlet`.
    pub fn to_csv(&self) -> String {
        let cols: Vec<Vec<f64>> = [
            StateKind::Ground0,
            StateKind::GroundM1,
            StateKind::GroundP1,
            StateKind::Excited,
            StateKind::Singlet,
        ]
        .iter()
        .map(|k| self.kind_population(*k))
        .collect();
        let mut out = String::from("t_ns,p_0,p_m1,p_p1,p_ex,p_singlet\n");
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!(
                "{t},{},{},{},{},{}\n",
                cols[0][i], cols[1][i], cols[2][i], cols[3][i], cols[4][i]
            ));
        }
        out
    }

    /// Keeps every `stride`-th point plus the last one.
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.times.len().saturating_sub(1);
        let keep: Vec<usize> = (0..self.times.len()).filter(|i| i % stride == 0 || *i == last).collect();
        Self {
            kinds: self.kinds.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            populations: keep.iter().map(|&i| self.populations[i].clone()).collect(),
        }
    }
}

fn apply(g: &[Vec<f64>], p: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(g) {
        *o = row.iter().zip(p).map(|(a, b)| a * b).sum();
    }
}

/// Fixed-step RK4 solution of `dp/dt = G·p` over `[0, duration_ns]`.
///
/// The step is shrunk slightly if needed so the grid ends exactly at
/// `duration_ns`.
pub fn integrate_rates(scheme: &LevelScheme, p0: &[f64], duration_ns: f64, dt_ns: f64) -> Result<PopulationTrajectory> {
    let n = scheme.states.len();
    if p0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p0.len(),
        });
    }
    if !(dt_ns > 0.0) || !dt_ns.is_finite() {
        return Err(invalid("dt_ns", format!("must be > 0, got {dt_ns}")));
    }
    if !(duration_ns >= 0.0) || !duration_ns.is_finite() {
        return Err(invalid("duration_ns", format!("must be >= 0, got {duration_ns}")));
    }
    let sum: f64 = p0.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL || p0.iter().any(|x| *x < 0.0) {
        return Err(invalid("p0", format!("populations must be >= 0 and sum to 1, got sum {sum}")));
    }

    let g = scheme.generator();
    let steps = (duration_ns / dt_ns).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { duration_ns / steps as f64 };
    let mut times = Vec::with_capacity(steps + 1);
    let mut pops = Vec::with_capacity(steps + 1);
    let mut p = p0.to_vec();
    times.push(0.0);
    pops.push(p.clone());

    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 1..=steps {
        apply(&g, &p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        apply(&g, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        apply(&g, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + h * k3[i];
        }
        apply(&g, &tmp, &mut k4);
        for i in 0..n {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t = step as f64 * h;
        if let Some(&bad) = p
            .iter()
            .find(|x| !(**x >= -UNSTABLE_MARGIN && **x <= 1.0 + UNSTABLE_MARGIN))
        {
            return Err(Error::UnstableStep { t_ns: t, value: bad });
        }
        times.push(t);
        pops.push(p.clone());
    }
    Ok(PopulationTrajectory {
        kinds: scheme.states.iter().map(|s| s.kind).collect(),
        times,
        populations: pops,
    })
}

/// Fits `1 − p_|0⟩(t)` with a double exponential.
pub fn fit_reset_curve(traj: &PopulationTrajectory) -> Result<DoubleExpFit> {
    let p0 = traj.kind_population(StateKind::Ground0);
    let stride = (traj.times.len() / 2000).max(1);
    let points: Vec<(f64, f64, f64)> = traj
        .times
        .iter()
        .zip(&p0)
        .step_by(stride)
        .map(|(&t, &p)| (t, 1.0 - p, 0.0))
        .collect();
    fit_double_exponential(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    Mixture,
    SingletOnly,
    Fixed,
}

/// Distribution of the time the electron spends in `|−1⟩` before a reset
/// completes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetModel {
    pub mode: ResetMode,
    pub t_fast_ns: f64,
    pub t_slow_ns: f64,
    pub weight_fast: f64,
}

impl Default for ResetModel {
    /// Singlet-limited reset with mean 440 ns.
    fn default() -> Self {
        Self {
            mode: ResetMode::SingletOnly,
            t_fast_ns: 29.0,
            t_slow_ns: 440.0,
            weight_fast: 0.75,
        }
    }
}

impl ResetModel {
    pub fn a_config() -> Self {
        Self {
            mode: ResetMode::Mixture,
            t_fast_ns: 29.0,
            t_slow_ns: 463.0,
            weight_fast: 0.75,
        }
    }

    pub fn e_config() -> Self {
        Self {
            mode: ResetMode::Mixture,
            t_fast_ns: 48.0,
            t_slow_ns: 432.0,
            weight_fast: 0.75,
        }
    }

    pub fn singlet_only(t_slow_ns: f64) -> Self {
        Self {
            mode: ResetMode::SingletOnly,
            t_slow_ns,
            ..Self::default()
        }
    }

    /// Deterministic reset of exactly `t_ns` (zero allowed).
    pub fn fixed(t_ns: f64) -> Self {
        Self {
            mode: ResetMode::Fixed,
            t_slow_ns: t_ns,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight_fast) {
            return Err(invalid("weight_fast", format!("must lie in [0, 1], got {}", self.weight_fast)));
        }
        match self.mode {
            ResetMode::Fixed => {
                if !(self.t_slow_ns >= 0.0) || !self.t_slow_ns.is_finite() {
                    return Err(invalid("t_slow_ns", format!("must be finite and >= 0, got {}", self.t_slow_ns)));
                }
            }
            _ => {
                for (name, v) in [("t_fast_ns", self.t_fast_ns), ("t_slow_ns", self.t_slow_ns)] {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(invalid(name, format!("must be finite and > 0, got {v}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mean_ns(&self) -> f64 {
        match self.mode {
            ResetMode::Mixture => self.weight_fast * self.t_fast_ns + (1.0 - self.weight_fast) * self.t_slow_ns,
            ResetMode::SingletOnly | ResetMode::Fixed => self.t_slow_ns,
        }
    }

    /// `P(reset time ≤ t)`.
    pub fn cdf(&self, t_ns: f64) -> f64 {
        if t_ns < 0.0 {
            return 0.0;
        }
        let exp_cdf = |mean: f64| -(-t_ns / mean).exp_m1();
        match self.mode {
            ResetMode::Mixture => {
                self.weight_fast * exp_cdf(self.t_fast_ns) + (1.0 - self.weight_fast) * exp_cdf(self.t_slow_ns)
            }
            ResetMode::SingletOnly => exp_cdf(self.t_slow_ns),
            ResetMode::Fixed => {
                if t_ns >= self.t_slow_ns {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample_reset_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let exp = |mean: f64, rng: &mut R| Exp::new(1.0 / mean).expect("positive rate").sample(rng);
        match self.mode {
            ResetMode::Fixed => self.t_slow_ns,
            ResetMode::SingletOnly => exp(self.t_slow_ns, rng),
            ResetMode::Mixture => {
                if rng.random::<f64>() < self.weight_fast {
                    exp(self.t_fast_ns, rng)
                } else {
                    exp(self.t_slow_ns, rng)
                }
            }
        }
    }
}

/// Probability of keeping the charge state through `n_resets` resets.
pub fn ionization_survival(n_resets: u64, n_d: f64) -> f64 {
    (-(n_resets as f64) / n_d).exp()
}

/// Per-reset ionization probability matching a survival constant `n_d`.
pub fn ionization_probability_per_reset(n_d: f64) -> f64 {
    -(-1.0 / n_d).exp_m1()
}

/// Monte Carlo survival fraction at each checkpoint: every trajectory draws
/// the reset at which it ionizes.
pub fn simulate_ionization<R: Rng + ?Sized>(
    checkpoints: &[u64],
    n_d: f64,
    trajectories: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(n_d > 0.0) {
        return Err(invalid("ionization_n_d", format!("must be > 0, got {n_d}")));
    }
    if trajectories == 0 {
        return Err(invalid("trajectories", "must be > 0"));
    }
    let geo = Geometric::new(ionization_probability_per_reset(n_d)).map_err(|e| invalid("ionization_n_d", e.to_string()))?;
    // reset index (1-based) at which the charge state is lost
    let mut lost: Vec<u64> = (0..trajectories).map(|_| geo.sample(rng).saturating_add(1)).collect();
    lost.sort_unstable();
    Ok(checkpoints
        .iter()
        .map(|&n| {
            let gone = lost.partition_point(|&k| k <= n);
            (trajectories - gone) as f64 / trajectories as f64
        })
        .collect())
}
