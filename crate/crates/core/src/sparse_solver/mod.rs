//! Sparse kernels, the augmented normal equations and the conjugate-gradient
//! solver.

mod cg;
mod csr;
mod system;

pub use cg::{cg_solve, CgConfig, CgOutcome, Preconditioner, SymOperator};
pub use csr::CsrMatrix;
pub(crate) use csr::{dot, norm};
pub use system::{assemble_normal_equations, assemble_rhs, precision_csr, SparseSym};
