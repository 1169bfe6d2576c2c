//! Triangular finite elements whose physical nodal bases are obtained from
//! reference ones through a per-cell transformation matrix, covering
//! Lagrange, Hermite, Morley, Argyris and Bell elements, together with the
//! assembly, solver and convergence-study machinery that exercises them.

pub mod assembly;
pub mod error;
pub mod mesh;
pub mod polyset;
pub mod quadrature;
pub mod refelem;
pub mod solver;
pub mod sparse;
pub mod study;
pub mod transform;

pub use error::{Error, Result};
pub use refelem::{Family, Jet, NodalFunctional, ReferenceElement, Tabulation};
