//! Dense complex linear algebra for few-qubit states.
//!
//! Dimensions stay below a hundred, so everything is dense and exact.

mod density;
mod operator;

pub use density::{basis_ket, DensityMatrix, MeasurementOutcome, STATE_TOL};
pub use operator::{embed, tensor, tensor_all, ComplexOperator, C64, UNITARY_TOL};
