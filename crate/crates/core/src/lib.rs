//! Weighted nonlocal energies, their local limits, limit measures on the
//! sphere, first eigenvalues and Poincare constants on uniform grids.
//!
//! Every routine is generic over the scalar type (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the experiments use.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod expr;
pub mod functions;
pub mod grid;
pub mod kernels;
pub mod quadrature;
pub mod reduce;
pub mod scalar;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid = grid::Grid<f64>;
pub type GridFunction = grid::GridFunction<f64>;
pub type DomainMask = grid::DomainMask<f64>;
pub type KernelFamily = kernels::KernelFamily<f64>;
pub type KernelMember = kernels::KernelMember<f64>;
pub type LimitMeasure = kernels::LimitMeasure<f64>;
pub type ClosedForm = functions::ClosedForm<f64>;
pub type WeightFamily = weights::WeightFamily<f64>;
pub type EnergyOptions = energy::EnergyOptions<f64>;
pub type EnergyBreakdown = energy::EnergyBreakdown<f64>;
pub type EigenOptions = spectral::EigenOptions<f64>;
pub type EigenResult = spectral::EigenResult<f64>;
