//! Voxel lattice Boltzmann solver for non-Newtonian blood flow through
//! vessel geometries that partially contain a porous medium (embolization
//! coil).
//!
//! The solver runs a D3Q27 single-relaxation-time scheme for the
//! volume-averaged Navier–Stokes equations: porosity-corrected equilibria,
//! Darcy–Forchheimer drag injected through Guo forcing, and a variable
//! relaxation rate following the Carreau–Yasuda viscosity of blood. Geometry
//! comes in as voxel masks plus coil wire centerlines; observables go out as
//! wall-shear-stress samples, region-averaged time series and VTK fields.

pub mod boundary;
pub mod domain;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod lattice;
pub mod observables;
pub mod porous;
pub mod rheology;
pub mod sim;
pub mod units;

pub use error::{Error, Result};
