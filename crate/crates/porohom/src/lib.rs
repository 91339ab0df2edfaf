//! Homogenized Biot poroelasticity of periodic microstructures, with
//! spline-box shape parametrization, analytic shape sensitivities and
//! gradient-based material / two-scale design.
//!
//! The crate is organized along the pipeline:
//!
//! * [`spline`] — the design parametrization: a clamped B-spline box with
//!   periodic control-point tying, linear injectivity constraints and the
//!   design velocity fields they induce on a mesh.
//! * [`mesh`] — labeled periodic hexahedral meshes of the unit cell and the
//!   body-fitted generator for the cross-and-sphere reference pore.
//! * [`cell`] — the three periodic cell problems (elastic correctors,
//!   pressure corrector, Stokes permeability).
//! * [`homog`] — effective Biot coefficients and derived undrained constants.
//! * [`sens`] — shape derivatives of every coefficient and their assembly
//!   into gradients over the free design coordinates.
//! * [`matopt`] — the material design problems and the SLP solver with exact
//!   linear constraint handling.
//! * [`macrobiot`] — the steady macroscopic Biot problem, its adjoint, and
//!   the per-element local objectives for two-scale design.

pub mod cell;
pub mod error;
pub mod fem;
pub mod homog;
pub mod macrobiot;
pub mod matopt;
pub mod mesh;
pub mod sens;
pub mod spline;
pub mod tensor;

pub use error::{Error, Result};
