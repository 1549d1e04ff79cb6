//! Spectral Galerkin solver for incompressible Navier–Stokes flow with
//! Navier slip walls, built on an eigenbasis of the Stokes operator, with a
//! verification harness for the underlying vector-calculus identities,
//! spectral properties, energy balance and limit behaviour.

pub mod analysis;
pub mod cheb;
pub mod error;
pub mod experiments;
pub mod field;
pub mod galerkin;
pub mod geometry;
pub mod helmholtz;
pub mod jet;
pub mod quadrature;
pub mod special;
pub mod spectrum;

pub use error::{Error, Result};
pub use geometry::{Domain, SlipLength};
