use nalgebra::DMatrix;
use rand::Rng;

use super::operator::{check_dim, embed, ComplexOperator, C64, ONE, ZERO};
use crate::error::{Error, Result};

/// Absolute tolerance for state invariants.
pub const STATE_TOL: f64 = 1e-9;

/// The trace is renormalized after this many evolutions.
const RENORMALIZE_EVERY: u32 = 1000;

/// A density matrix over a positional tensor product of subsystems.
///
/// Subsystem 0 is the electron wherever the node model builds states.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    mat: DMatrix<C64>,
    evolutions: u32,
}

#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    pub index: usize,
    pub probability: f64,
    pub post_state: DensityMatrix,
}

impl DensityMatrix {
    /// Validating constructor: Hermitian, unit trace, eigenvalues ≥ −1e−9.
    pub fn new(dims: Vec<usize>, mat: DMatrix<C64>) -> Result<Self> {
        let rho = Self::from_parts(dims, mat)?;
        rho.validate()?;
        Ok(rho)
    }

    fn from_parts(dims: Vec<usize>, mat: DMatrix<C64>) -> Result<Self> {
        let total: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidState("empty or zero subsystem dimension".into()));
        }
        if !mat.is_square() || mat.nrows() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: mat.nrows(),
            });
        }
        Ok(Self {
            dims,
            mat,
            evolutions: 0,
        })
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, mat: DMatrix<C64>) -> Self {
        Self {
            dims,
            mat,
            evolutions: 0,
        }
    }

    pub fn from_pure(dims: Vec<usize>, ket: &[C64]) -> Result<Self> {
        let total: usize = dims.iter().product();
        check_dim(total, ket.len())?;
        let norm2: f64 = ket.iter().map(|a| a.norm_sqr()).sum();
        if norm2 <= 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        Self::from_parts(dims, ComplexOperator::projector(ket).into_matrix())
    }

    /// `|k⟩⟨k|` of a single subsystem of dimension `dim`.
    pub fn basis_state(dim: usize, k: usize) -> Self {
        Self::from_parts_unchecked(vec![dim], ComplexOperator::basis_projector(dim, k).into_matrix())
    }

    pub fn maximally_mixed(dims: Vec<usize>) -> Self {
        let total: usize = dims.iter().product();
        let mat = DMatrix::<C64>::identity(total, total) / C64::new(total as f64, 0.0);
        Self::from_parts_unchecked(dims, mat)
    }

    /// Product state, left to right.
    pub fn product(states: &[DensityMatrix]) -> Self {
        let mut out = states[0].clone();
        for s in &states[1..] {
            out = out.tensor(s);
        }
        out
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self::from_parts_unchecked(dims, self.mat.kronecker(&other.mat))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        let adj = self.mat.adjoint();
        self.mat
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        // symmetrize so roundoff asymmetry does not leak into the eigen solver
        let h = (&self.mat + self.mat.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn purity(&self) -> f64 {
        (&self.mat * &self.mat).trace().re
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_ev:.3e}")));
        }
        Ok(())
    }

    /// `UρU†` with a unitarity check on `u`.
    pub fn evolve(&self, u: &ComplexOperator) -> Result<Self> {
        check_dim(self.dim(), u.dim())?;
        let dev = u.unitarity_deviation();
        if dev >= super::operator::UNITARY_TOL {
            return Err(Error::NotUnitary { deviation: dev });
        }
        Ok(self.evolve_unchecked(u))
    }

    pub(crate) fn evolve_unchecked(&self, u: &ComplexOperator) -> Self {
        let m = u.matrix();
        let mut out = Self {
            dims: self.dims.clone(),
            mat: m * &self.mat * m.adjoint(),
            evolutions: self.evolutions + 1,
        };
        if out.evolutions >= RENORMALIZE_EVERY {
            out.renormalize_in_place();
            out.evolutions = 0;
        }
        out
    }

    /// Applies `op` to a single subsystem.
    pub fn evolve_subsystem(&self, op: &ComplexOperator, index: usize) -> Result<Self> {
        let full = embed(op, index, &self.dims)?;
        self.evolve(&full)
    }

    fn renormalize_in_place(&mut self) {
        let tr = self.trace();
        if tr > 0.0 {
            self.mat /= C64::new(tr, 0.0);
        }
        let adj = self.mat.adjoint();
        self.mat = (&self.mat + adj) * C64::new(0.5, 0.0);
    }

    /// `K ρ K†` without normalization.
    pub(crate) fn sandwich(&self, k: &ComplexOperator) -> Self {
        let m = k.matrix();
        Self {
            dims: self.dims.clone(),
            mat: m * &self.mat * m.adjoint(),
            evolutions: self.evolutions,
        }
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            mat: &self.mat * C64::new(factor, 0.0),
            evolutions: self.evolutions,
        }
    }

    /// `w·self + (1 − w)·other`.
    pub fn mix(&self, other: &DensityMatrix, weight: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat * C64::new(weight, 0.0) + &other.mat * C64::new(1.0 - weight, 0.0),
            evolutions: self.evolutions.max(other.evolutions),
        })
    }

    pub fn expectation(&self, op: &ComplexOperator) -> Result<C64> {
        check_dim(self.dim(), op.dim())?;
        Ok((op.matrix() * &self.mat).trace())
    }

    /// Reduced state over `keep` (returned in ascending subsystem order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        let n = self.dims.len();
        if keep.is_empty() {
            return Err(Error::InvalidState("partial trace must keep at least one subsystem".into()));
        }
        for &k in keep {
            if k >= n {
                return Err(Error::InvalidSubsystem { index: k, count: n });
            }
        }
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        let traced: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();

        let strides = strides(&self.dims);
        let kept_dims: Vec<usize> = kept.iter().map(|&i| self.dims[i]).collect();
        let traced_dims: Vec<usize> = traced.iter().map(|&i| self.dims[i]).collect();
        let d_keep: usize = kept_dims.iter().product();
        let d_trace: usize = traced_dims.iter().product();

        let offset = |sub: &[usize], local: usize, local_dims: &[usize]| -> usize {
            let mut idx = 0;
            let mut rem = local;
            for (pos, &s) in sub.iter().enumerate().rev() {
                let d = local_dims[pos];
                idx += (rem % d) * strides[s];
                rem /= d;
            }
            idx
        };
        let keep_offsets: Vec<usize> = (0..d_keep).map(|a| offset(&kept, a, &kept_dims)).collect();
        let trace_offsets: Vec<usize> = (0..d_trace)
            .map(|c| offset(&traced, c, &traced_dims))
            .collect();

        let mut out = DMatrix::<C64>::zeros(d_keep, d_keep);
        for a in 0..d_keep {
            for b in 0..d_keep {
                let mut acc = ZERO;
                for &t in &trace_offsets {
                    acc += self.mat[(keep_offsets[a] + t, keep_offsets[b] + t)];
                }
                out[(a, b)] = acc;
            }
        }
        Ok(Self::from_parts_unchecked(kept_dims, out))
    }

    /// Born probabilities `tr(P_k ρ)` for a list of full-space projectors.
    pub fn outcome_probabilities(&self, projectors: &[ComplexOperator]) -> Result<Vec<f64>> {
        projectors
            .iter()
            .map(|p| Ok(self.expectation(p)?.re))
            .collect()
    }

    /// Samples a projective measurement. Projectors act on the full space.
    pub fn measure_projective<R: Rng + ?Sized>(
        &self,
        projectors: &[ComplexOperator],
        rng: &mut R,
    ) -> Result<MeasurementOutcome> {
        let probs = self.outcome_probabilities(projectors)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STATE_TOL {
            return Err(Error::IncompleteProjectors { sum });
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut index = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                index = k;
                break;
            }
        }
        let post_state = self.project(&projectors[index], probs[index], index)?;
        Ok(MeasurementOutcome {
            index,
            probability: probs[index],
            post_state,
        })
    }

    /// Projective measurement of one subsystem with subsystem-local projectors.
    pub fn measure_subsystem<R: Rng + ?Sized>(
        &self,
        index: usize,
        projectors: &[ComplexOperator],
        rng: &mut R,
    ) -> Result<MeasurementOutcome> {
        let full: Vec<ComplexOperator> = projectors
            .iter()
            .map(|p| embed(p, index, &self.dims))
            .collect::<Result<_>>()?;
        self.measure_projective(&full, rng)
    }

    /// `PρP/p`, failing if `p` vanishes.
    pub fn project(&self, projector: &ComplexOperator, probability: f64, index: usize) -> Result<Self> {
        if probability <= 1e-14 {
            return Err(Error::ZeroProbabilityOutcome { index, probability });
        }
        Ok(self.sandwich(projector).scaled(1.0 / probability))
    }

    /// Bloch vector of a single qubit.
    pub fn bloch_vector(&self) -> Result<[f64; 3]> {
        if self.dim() != 2 {
            return Err(Error::NotAQubit(self.dim()));
        }
        let r01 = self.mat[(0, 1)];
        Ok([
            2.0 * r01.re,
            -2.0 * r01.im,
            (self.mat[(0, 0)] - self.mat[(1, 1)]).re,
        ])
    }

    /// `√(x² + y²)` of the Bloch vector.
    pub fn xy_length(&self) -> Result<f64> {
        let [x, y, _] = self.bloch_vector()?;
        Ok(x.hypot(y))
    }

    /// Fidelity `⟨ψ|ρ|ψ⟩` with a pure state.
    pub fn fidelity_pure(&self, ket: &[C64]) -> Result<f64> {
        check_dim(self.dim(), ket.len())?;
        let v = nalgebra::DVector::from_column_slice(ket);
        let norm2: f64 = ket.iter().map(|a| a.norm_sqr()).sum();
        Ok(((v.adjoint() * &self.mat * &v)[(0, 0)]).re / norm2)
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Replaces subsystem `index` by `|0⟩⟨0|` after tracing it out.
    pub fn reset_subsystem(&self, index: usize) -> Result<Self> {
        let n = self.dims.len();
        if index >= n {
            return Err(Error::InvalidSubsystem { index, count: n });
        }
        if n == 1 {
            return Ok(Self::basis_state(self.dims[0], 0));
        }
        let rest: Vec<usize> = (0..n).filter(|&i| i != index).collect();
        let reduced = self.partial_trace(&rest)?;
        let fresh = Self::basis_state(self.dims[index], 0);
        if index == 0 {
            Ok(fresh.tensor(&reduced))
        } else if index == n - 1 {
            Ok(reduced.tensor(&fresh))
        } else {
            Err(Error::InvalidState("reset of an interior subsystem is unsupported".into()))
        }
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Computational-basis ket `|k⟩` in dimension `dim`.
pub fn basis_ket(dim: usize, k: usize) -> Vec<C64> {
    let mut v = vec![ZERO; dim];
    v[k] = ONE;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::operator::tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn plus() -> DensityMatrix {
        DensityMatrix::from_pure(vec![2], &[C64::new(FRAC_1_SQRT_2, 0.0); 2]).unwrap()
    }

    #[test]
    fn evolve_identity_is_noop() {
        let rho = plus();
        let out = rho.evolve(&ComplexOperator::identity(2)).unwrap();
        assert!(out.max_abs_diff(&rho) < 1e-15);
    }

    #[test]
    fn evolve_bit_flip() {
        let rho = DensityMatrix::basis_state(2, 0);
        let out = rho.evolve(&ComplexOperator::pauli_x()).unwrap();
        assert!(out.max_abs_diff(&DensityMatrix::basis_state(2, 1)) < 1e-15);
    }

    #[test]
    fn rz_quarter_turn_on_plus_points_along_y() {
        let out = plus().evolve(&ComplexOperator::rz(PI / 2.0)).unwrap();
        let b = out.bloch_vector().unwrap();
        assert!((b[0]).abs() < 1e-10 && (b[1] - 1.0).abs() < 1e-10 && b[2].abs() < 1e-10);
    }

    #[test]
    fn evolve_rejects_non_unitary_and_wrong_dim() {
        let rho = plus();
        let bad = ComplexOperator::from_real(2, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(rho.evolve(&bad), Err(Error::NotUnitary { .. })));
        assert!(matches!(
            rho.evolve(&ComplexOperator::identity(4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn partial_trace_of_product() {
        let a = plus();
        let b = DensityMatrix::basis_state(2, 1);
        let ab = a.tensor(&b);
        assert!(ab.partial_trace(&[0]).unwrap().max_abs_diff(&a) < 1e-15);
        assert!(ab.partial_trace(&[1]).unwrap().max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn partial_trace_of_bell_is_mixed() {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let bell = DensityMatrix::from_pure(vec![2, 2], &[s, ZERO, ZERO, s]).unwrap();
        let red = bell.partial_trace(&[0]).unwrap();
        assert!(red.max_abs_diff(&DensityMatrix::maximally_mixed(vec![2])) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_index() {
        let rho = DensityMatrix::maximally_mixed(vec![2, 3]);
        assert!(matches!(rho.partial_trace(&[2]), Err(Error::InvalidSubsystem { .. })));
        assert!(rho.partial_trace(&[]).is_err());
    }

    #[test]
    fn measure_eigenstate_and_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let projs = [
            ComplexOperator::basis_projector(2, 0),
            ComplexOperator::basis_projector(2, 1),
        ];
        let out = DensityMatrix::basis_state(2, 0)
            .measure_projective(&projs, &mut rng)
            .unwrap();
        assert_eq!(out.index, 0);
        assert!((out.probability - 1.0).abs() < 1e-15);
        let probs = plus().outcome_probabilities(&projs).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-15 && (probs[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn measure_rejects_incomplete_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let projs = [ComplexOperator::basis_projector(2, 0)];
        assert!(matches!(
            plus().measure_projective(&projs, &mut rng),
            Err(Error::IncompleteProjectors { .. })
        ));
    }

    #[test]
    fn measurement_frequency_matches_born_rule() {
        // cos²(θ/2) = 0.3
        let theta = 2.0 * (0.3f64).sqrt().acos();
        let ket = [C64::new((theta / 2.0).cos(), 0.0), C64::new((theta / 2.0).sin(), 0.0)];
        let rho = DensityMatrix::from_pure(vec![2], &ket).unwrap();
        let projs = [
            ComplexOperator::basis_projector(2, 0),
            ComplexOperator::basis_projector(2, 1),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| rho.measure_projective(&projs, &mut rng).unwrap().index == 0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.005, "freq {freq}");
    }

    #[test]
    fn bloch_vector_poles_and_center() {
        assert_eq!(DensityMatrix::basis_state(2, 0).bloch_vector().unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(
            DensityMatrix::maximally_mixed(vec![2]).bloch_vector().unwrap(),
            [0.0, 0.0, 0.0]
        );
        assert!(matches!(
            DensityMatrix::maximally_mixed(vec![3]).bloch_vector(),
            Err(Error::NotAQubit(3))
        ));
    }

    #[test]
    fn bloch_angle_tracks_z_rotation() {
        for k in 0..12 {
            let phi = -PI + 0.5 * k as f64;
            let b = plus().evolve(&ComplexOperator::rz(phi)).unwrap().bloch_vector().unwrap();
            assert!((b[0].hypot(b[1]) - 1.0).abs() < 1e-10);
            let ang = b[1].atan2(b[0]);
            let diff = (ang - phi).rem_euclid(2.0 * PI);
            assert!(diff < 1e-10 || (2.0 * PI - diff) < 1e-10);
        }
    }

    #[test]
    fn reset_subsystem_puts_electron_in_zero() {
        let bell = {
            let s = C64::new(FRAC_1_SQRT_2, 0.0);
            DensityMatrix::from_pure(vec![2, 2], &[s, ZERO, ZERO, s]).unwrap()
        };
        let r = bell.reset_subsystem(0).unwrap();
        let expected = DensityMatrix::basis_state(2, 0).tensor(&DensityMatrix::maximally_mixed(vec![2]));
        assert!(r.max_abs_diff(&expected) < 1e-15);
        let _ = tensor(&ComplexOperator::identity(2), &ComplexOperator::identity(2));
    }
}
