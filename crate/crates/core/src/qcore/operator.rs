use std::ops::Mul;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Tolerance used by [`ComplexOperator::is_unitary`].
pub const UNITARY_TOL: f64 = 1e-10;

/// A square complex matrix acting on a small Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexOperator {
    mat: DMatrix<C64>,
}

impl ComplexOperator {
    /// Builds an operator from row-major entries.
    pub fn new(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(Self {
            mat: DMatrix::from_row_slice(dim, dim, &entries),
        })
    }

    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        Ok(Self { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<C64>) -> Self {
        Self { mat }
    }

    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self> {
        Self::new(dim, entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn pauli_x() -> Self {
        Self::from_matrix_unchecked(DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))
    }

    pub fn pauli_y() -> Self {
        Self::from_matrix_unchecked(DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]))
    }

    pub fn pauli_z() -> Self {
        Self::from_matrix_unchecked(DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]))
    }

    /// `exp(-i angle n·σ/2)` for a unit axis `n`.
    pub fn rotation(axis: [f64; 3], angle: f64) -> Self {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (nx, ny, nz) = if norm > 0.0 {
            (axis[0] / norm, axis[1] / norm, axis[2] / norm)
        } else {
            (0.0, 0.0, 1.0)
        };
        let c = (angle / 2.0).cos();
        let s = (angle / 2.0).sin();
        // c·I − i s (nx X + ny Y + nz Z)
        let m00 = C64::new(c, -s * nz);
        let m11 = C64::new(c, s * nz);
        let m01 = C64::new(-s * ny, -s * nx);
        let m10 = C64::new(s * ny, -s * nx);
        Self::from_matrix_unchecked(DMatrix::from_row_slice(2, 2, &[m00, m01, m10, m11]))
    }

    pub fn rx(angle: f64) -> Self {
        Self::rotation([1.0, 0.0, 0.0], angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::rotation([0.0, 1.0, 0.0], angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::rotation([0.0, 0.0, 1.0], angle)
    }

    /// `|k⟩⟨k|` in dimension `dim`.
    pub fn basis_projector(dim: usize, k: usize) -> Self {
        let mut mat = DMatrix::zeros(dim, dim);
        mat[(k, k)] = ONE;
        Self { mat }
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) ket.
    pub fn projector(ket: &[C64]) -> Self {
        let norm2: f64 = ket.iter().map(|a| a.norm_sqr()).sum();
        let v = nalgebra::DVector::from_iterator(ket.len(), ket.iter().map(|a| a / norm2.sqrt()));
        Self {
            mat: &v * v.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            mat: &self.mat * factor,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            mat: &self.mat + &other.mat,
        })
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            mat: &self.mat * &other.mat,
        })
    }

    /// Kronecker product, `self` on the left.
    pub fn tensor(&self, other: &Self) -> Self {
        Self {
            mat: self.mat.kronecker(&other.mat),
        }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Max-entry distance after removing the best global phase.
    pub fn distance_up_to_phase(&self, other: &Self) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        let overlap = (other.mat.adjoint() * &self.mat).trace();
        let phase = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            ONE
        };
        self.max_abs_diff(&other.scale(phase))
    }

    /// `‖U·U† − I‖_max`.
    pub fn unitarity_deviation(&self) -> f64 {
        let prod = &self.mat * self.mat.adjoint();
        let id = DMatrix::<C64>::identity(self.dim(), self.dim());
        prod.iter()
            .zip(id.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_deviation() < UNITARY_TOL
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) < tol
    }

    /// Applies the operator to a ket.
    pub fn apply(&self, ket: &[C64]) -> Result<Vec<C64>> {
        check_dim(self.dim(), ket.len())?;
        let v = nalgebra::DVector::from_column_slice(ket);
        Ok((&self.mat * v).iter().copied().collect())
    }
}

impl Mul for &ComplexOperator {
    type Output = ComplexOperator;

    /// Panics on dimension mismatch; use [`ComplexOperator::compose`] for a checked product.
    fn mul(self, rhs: &ComplexOperator) -> ComplexOperator {
        ComplexOperator {
            mat: &self.mat * &rhs.mat,
        }
    }
}

/// Kronecker product with `a` as the left (higher-order) factor.
pub fn tensor(a: &ComplexOperator, b: &ComplexOperator) -> ComplexOperator {
    a.tensor(b)
}

/// Tensor product of a list of operators, left to right.
pub fn tensor_all(ops: &[ComplexOperator]) -> ComplexOperator {
    ops.iter()
        .skip(1)
        .fold(ops[0].clone(), |acc, op| acc.tensor(op))
}

/// Lifts `op` acting on subsystem `index` to the full space with subsystem sizes `dims`.
pub fn embed(op: &ComplexOperator, index: usize, dims: &[usize]) -> Result<ComplexOperator> {
    if index >= dims.len() {
        return Err(Error::InvalidSubsystem {
            index,
            count: dims.len(),
        });
    }
    check_dim(dims[index], op.dim())?;
    let factors: Vec<ComplexOperator> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if i == index {
                op.clone()
            } else {
                ComplexOperator::identity(d)
            }
        })
        .collect();
    Ok(tensor_all(&factors))
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
