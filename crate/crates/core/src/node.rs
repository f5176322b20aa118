//! Physical model of the node: nuclear-spin records, conditional precession,
//! subspace couplings and intrinsic dephasing.
//!
//! Frequencies are in kHz (cyclic, i.e. ω/2π), times in μs unless a name says
//! otherwise. The nuclear basis is ordered `|↑⟩` (index 0), `|↓⟩` (index 1).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qcore::{ComplexOperator, C64};

const DEFAULT_REGISTER: &str = include_str!("../data/register.toml");

/// One row of the register table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearSpinParams {
    pub id: u32,
    pub a_par_khz: f64,
    pub a_perp_khz: f64,
    /// Measured precession-frequency difference (signed).
    pub delta_omega_khz: f64,
    pub t2_star_ms: f64,
    pub f_ir: f64,
}

impl NuclearSpinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_perp_khz >= 0.0) {
            return Err(invalid("a_perp_khz", format!("must be >= 0, got {}", self.a_perp_khz)));
        }
        if !(self.t2_star_ms > 0.0) {
            return Err(invalid("t2_star_ms", format!("must be > 0, got {}", self.t2_star_ms)));
        }
        if !(0.0..=1.0).contains(&self.f_ir) {
            return Err(invalid("f_ir", format!("must lie in [0, 1], got {}", self.f_ir)));
        }
        if !self.a_par_khz.is_finite() || !self.delta_omega_khz.is_finite() {
            return Err(invalid("a_par_khz", "couplings must be finite"));
        }
        Ok(())
    }

    /// A spin with only a parallel coupling equal to the measured Δω.
    ///
    /// Its conditional frequency shift is exactly the tabulated value, which is
    /// what the analytic dephasing models use.
    pub fn measured_equivalent(&self) -> Self {
        Self {
            a_par_khz: self.delta_omega_khz,
            a_perp_khz: 0.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Register {
    #[serde(rename = "spin")]
    pub spins: Vec<NuclearSpinParams>,
}

impl Register {
    pub fn new(spins: Vec<NuclearSpinParams>) -> Result<Self> {
        for s in &spins {
            s.validate()?;
        }
        for (i, a) in spins.iter().enumerate() {
            if spins[..i].iter().any(|b| b.id == a.id) {
                return Err(invalid("id", format!("duplicate spin id {}", a.id)));
            }
        }
        Ok(Self { spins })
    }

    /// The five-spin register shipped with the crate.
    pub fn default_table() -> Self {
        Self::from_toml(DEFAULT_REGISTER).expect("bundled register parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let reg: Register = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(reg.spins)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("register serializes")
    }

    pub fn get(&self, id: u32) -> Result<&NuclearSpinParams> {
        self.spins
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSpin(id))
    }

    pub fn ids(&self) -> Vec<u32> {
        self.spins.iter().map(|s| s.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub b_field_mt: f64,
    pub gamma_khz_per_mt: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            b_field_mt: 40.0,
            gamma_khz_per_mt: 11.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_field_mt > 0.0) {
            return Err(invalid("b_field_mt", "must be > 0"));
        }
        if !(self.gamma_khz_per_mt > 0.0) {
            return Err(invalid("gamma_khz_per_mt", "must be > 0"));
        }
        Ok(())
    }

    pub fn larmor_khz(&self) -> f64 {
        self.gamma_khz_per_mt * self.b_field_mt
    }

    /// Bare Larmor period in μs.
    pub fn larmor_period_us(&self) -> f64 {
        1e3 / self.larmor_khz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// `|↓↓⟩`, `|↑↑⟩`
    Parallel,
    /// `|↑↓⟩`, `|↓↑⟩`
    Antiparallel,
}

/// A logical qubit stored in one spin or in a two-spin subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubspaceSpec {
    Single(u32),
    Pair { first: u32, second: u32, parity: Parity },
}

impl SubspaceSpec {
    pub fn pair(first: u32, second: u32, parity: Parity) -> Result<Self> {
        if first == second {
            return Err(invalid("spin ids", "pair ids must be distinct"));
        }
        Ok(Self::Pair {
            first,
            second,
            parity,
        })
    }

    pub fn spin_ids(&self) -> Vec<u32> {
        match *self {
            Self::Single(id) => vec![id],
            Self::Pair { first, second, .. } => vec![first, second],
        }
    }

    pub fn num_spins(&self) -> usize {
        match self {
            Self::Single(_) => 1,
            Self::Pair { .. } => 2,
        }
    }

    /// Indices `(a, b)` of the logical `+Z` and `−Z` basis states in the
    /// nuclear space of [`Self::spin_ids`].
    pub fn logical_basis(&self) -> (usize, usize) {
        match self {
            // |↓⟩, |↑⟩
            Self::Single(_) => (1, 0),
            // |↓↓⟩, |↑↑⟩
            Self::Pair {
                parity: Parity::Parallel,
                ..
            } => (3, 0),
            // |↑↓⟩, |↓↑⟩
            Self::Pair {
                parity: Parity::Antiparallel,
                ..
            } => (1, 2),
        }
    }

    /// Every single spin and every (pair, parity) of a register, 5 + 20 for
    /// the default table.
    pub fn enumerate(register: &Register) -> Vec<SubspaceSpec> {
        let ids = register.ids();
        let mut out: Vec<SubspaceSpec> = ids.iter().map(|&id| Self::Single(id)).collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                out.push(Self::Pair {
                    first: a,
                    second: b,
                    parity: Parity::Antiparallel,
                });
                out.push(Self::Pair {
                    first: a,
                    second: b,
                    parity: Parity::Parallel,
                });
            }
        }
        out
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Single(id) => format!("{id}"),
            Self::Pair {
                first,
                second,
                parity: Parity::Antiparallel,
            } => format!("{first}-{second}:anti"),
            Self::Pair {
                first,
                second,
                parity: Parity::Parallel,
            } => format!("{first}-{second}:par"),
        }
    }

    /// Parses `5`, `2-3:anti` or `2-3:par`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("subspace `{text}`: expected `ID` or `ID-ID:anti|par`"));
        let text = text.trim();
        if let Some((ids, parity)) = text.split_once(':') {
            let (a, b) = ids.split_once('-').ok_or_else(bad)?;
            let a: u32 = a.trim().parse().map_err(|_| bad())?;
            let b: u32 = b.trim().parse().map_err(|_| bad())?;
            let parity = match parity.trim() {
                "anti" | "antiparallel" => Parity::Antiparallel,
                "par" | "parallel" => Parity::Parallel,
                _ => return Err(bad()),
            };
            Self::pair(a, b, parity)
        } else {
            Ok(Self::Single(text.parse().map_err(|_| bad())?))
        }
    }
}

/// Precession frequencies (kHz) and tilt of the `|−1⟩` axis (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precession {
    pub omega0_khz: f64,
    pub omega_m1_khz: f64,
    pub tilt: f64,
}

pub fn precession(spin: &NuclearSpinParams, field: &FieldConfig) -> Precession {
    let larmor = field.larmor_khz();
    let par = larmor + spin.a_par_khz;
    Precession {
        omega0_khz: larmor,
        omega_m1_khz: par.hypot(spin.a_perp_khz),
        tilt: spin.a_perp_khz.atan2(par),
    }
}

/// Nuclear propagators for the electron in `|0⟩` and in `|−1⟩`.
///
/// Generated by `H/2π = −γB·I_z + A∥·S_z·I_z + A⊥·S_z·I_x` restricted to the
/// electron eigenstate blocks, so `r0` is a rotation by `−2π·ω₀·t` about ẑ and
/// `r1` a rotation by `−2π·ω₋₁·t` about `(sin θ, 0, cos θ)`.
pub fn conditional_rotation(
    spin: &NuclearSpinParams,
    field: &FieldConfig,
    duration_us: f64,
) -> (ComplexOperator, ComplexOperator) {
    let p = precession(spin, field);
    let r0 = ComplexOperator::rz(-cycles_to_rad(p.omega0_khz, duration_us));
    let r1 = ComplexOperator::rotation(
        [p.tilt.sin(), 0.0, p.tilt.cos()],
        -cycles_to_rad(p.omega_m1_khz, duration_us),
    );
    (r0, r1)
}

/// Phase in radians accumulated at `freq_khz` over `duration_us`.
pub fn cycles_to_rad(freq_khz: f64, duration_us: f64) -> f64 {
    2.0 * PI * freq_khz * duration_us * 1e-3
}

/// Effective `|Δω|` (kHz) of a subspace from the measured column.
pub fn effective_delta_omega(sub: &SubspaceSpec, register: &Register) -> Result<f64> {
    Ok(match *sub {
        SubspaceSpec::Single(id) => register.get(id)?.delta_omega_khz.abs(),
        SubspaceSpec::Pair {
            first,
            second,
            parity,
        } => {
            let a = register.get(first)?.delta_omega_khz;
            let b = register.get(second)?.delta_omega_khz;
            match parity {
                Parity::Antiparallel => (a - b).abs(),
                Parity::Parallel => (a + b).abs(),
            }
        }
    })
}

/// `exp(−(elapsed/T₂*)²)`.
pub fn intrinsic_dephasing_factor(t2_star_ms: f64, elapsed_ms: f64) -> f64 {
    (-(elapsed_ms / t2_star_ms).powi(2)).exp()
}

/// Effective T₂* of a two-spin subspace: `1/√(1/T_i² + 1/T_j²)`.
pub fn combined_t2star(t2_i_ms: f64, t2_j_ms: f64) -> f64 {
    1.0 / ((1.0 / t2_i_ms).powi(2) + (1.0 / t2_j_ms).powi(2)).sqrt()
}

/// Effective T₂* of a subspace (ms).
pub fn subspace_t2star(sub: &SubspaceSpec, register: &Register) -> Result<f64> {
    Ok(match *sub {
        SubspaceSpec::Single(id) => register.get(id)?.t2_star_ms,
        SubspaceSpec::Pair { first, second, .. } => {
            combined_t2star(register.get(first)?.t2_star_ms, register.get(second)?.t2_star_ms)
        }
    })
}

/// Nuclear ket of a logical state `cos(θ/2)|a⟩ + e^{iφ} sin(θ/2)|b⟩`.
pub fn logical_ket(sub: &SubspaceSpec, theta: f64, phi: f64) -> Vec<C64> {
    let dim = 1 << sub.num_spins();
    let (a, b) = sub.logical_basis();
    let mut ket = vec![C64::new(0.0, 0.0); dim];
    ket[a] = C64::new((theta / 2.0).cos(), 0.0);
    ket[b] = C64::from_polar((theta / 2.0).sin(), phi);
    ket
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uncoupled() -> NuclearSpinParams {
        NuclearSpinParams {
            id: 9,
            a_par_khz: 0.0,
            a_perp_khz: 0.0,
            delta_omega_khz: 0.0,
            t2_star_ms: 10.0,
            f_ir: 1.0,
        }
    }

    #[test]
    fn default_register_matches_table() {
        let reg = Register::default_table();
        assert_eq!(reg.ids(), vec![1, 2, 3, 4, 5]);
        let s5 = reg.get(5).unwrap();
        assert_eq!(s5.delta_omega_khz, -48.6);
        assert_eq!(s5.a_perp_khz, 12.0);
        assert_eq!(reg.get(1).unwrap().f_ir, 0.89);
        assert!(matches!(reg.get(6), Err(Error::UnknownSpin(6))));
    }

    #[test]
    fn register_round_trips_through_toml() {
        let reg = Register::default_table();
        assert_eq!(Register::from_toml(&reg.to_toml()).unwrap(), reg);
    }

    #[test]
    fn register_rejects_invalid_rows() {
        let mut s = uncoupled();
        s.a_perp_khz = -1.0;
        assert!(Register::new(vec![s]).is_err());
        let mut s = uncoupled();
        s.f_ir = 1.2;
        assert!(Register::new(vec![s]).is_err());
        assert!(Register::new(vec![uncoupled(), uncoupled()]).is_err());
    }

    #[test]
    fn uncoupled_spin_precesses_at_larmor() {
        let p = precession(&uncoupled(), &FieldConfig::default());
        assert_eq!(p.omega0_khz, p.omega_m1_khz);
        assert_eq!(p.tilt, 0.0);
    }

    #[test]
    fn larmor_at_forty_millitesla() {
        let f = FieldConfig::default();
        assert_relative_eq!(f.larmor_khz(), 440.0);
        assert!((f.larmor_period_us() - 2.2727).abs() < 1e-4);
    }

    #[test]
    fn spin_one_precession() {
        let reg = Register::default_table();
        let p = precession(reg.get(1).unwrap(), &FieldConfig::default());
        assert!((p.omega_m1_khz - 432.51).abs() < 0.01, "{}", p.omega_m1_khz);
        assert!((p.tilt - 0.1275).abs() < 1e-4, "{}", p.tilt);
    }

    #[test]
    fn zero_duration_gives_identity() {
        let reg = Register::default_table();
        let (r0, r1) = conditional_rotation(reg.get(3).unwrap(), &FieldConfig::default(), 0.0);
        assert!(r0.max_abs_diff(&ComplexOperator::identity(2)) < 1e-15);
        assert!(r1.max_abs_diff(&ComplexOperator::identity(2)) < 1e-15);
    }

    #[test]
    fn full_larmor_period_uncoupled() {
        let f = FieldConfig::default();
        let (r0, r1) = conditional_rotation(&uncoupled(), &f, f.larmor_period_us());
        assert!(r0.distance_up_to_phase(&ComplexOperator::identity(2)) < 1e-10);
        assert!(r1.distance_up_to_phase(&ComplexOperator::identity(2)) < 1e-10);
    }

    #[test]
    fn effective_delta_omega_examples() {
        let reg = Register::default_table();
        assert_relative_eq!(
            effective_delta_omega(&SubspaceSpec::Single(5), &reg).unwrap(),
            48.6
        );
        let anti = SubspaceSpec::pair(2, 3, Parity::Antiparallel).unwrap();
        let par = SubspaceSpec::pair(2, 3, Parity::Parallel).unwrap();
        assert!((effective_delta_omega(&anti, &reg).unwrap() - 5.3).abs() < 1e-12);
        assert!((effective_delta_omega(&par, &reg).unwrap() - 42.1).abs() < 1e-12);
        assert!(matches!(
            effective_delta_omega(&SubspaceSpec::Single(7), &reg),
            Err(Error::UnknownSpin(7))
        ));
    }

    #[test]
    fn dephasing_factor_examples() {
        assert_eq!(intrinsic_dephasing_factor(4.0, 0.0), 1.0);
        assert_relative_eq!(intrinsic_dephasing_factor(4.0, 4.0), (-1.0f64).exp());
        assert!((intrinsic_dephasing_factor(13.0, 6.5) - 0.7788).abs() < 1e-4);
    }

    #[test]
    fn combined_t2star_examples() {
        assert_relative_eq!(combined_t2star(8.0, 8.0), 8.0 / 2f64.sqrt(), max_relative = 1e-14);
        assert!((combined_t2star(13.0, 19.0) - 10.73).abs() < 0.005);
        assert!((combined_t2star(7.0, 1e9) - 7.0).abs() < 1e-9);
    }

    #[test]
    fn enumerate_gives_twenty_five_subspaces() {
        let subs = SubspaceSpec::enumerate(&Register::default_table());
        assert_eq!(subs.len(), 25);
    }

    #[test]
    fn subspace_parse() {
        assert_eq!(SubspaceSpec::parse("5").unwrap(), SubspaceSpec::Single(5));
        assert_eq!(
            SubspaceSpec::parse("2-3:anti").unwrap(),
            SubspaceSpec::pair(2, 3, Parity::Antiparallel).unwrap()
        );
        assert!(SubspaceSpec::parse("2-2:par").is_err());
        assert!(SubspaceSpec::parse("x").is_err());
    }
}
