//! Particle simulation and statistical diagnostics for the spatially
//! homogeneous Boltzmann equation without angular cutoff.

pub mod collision;
pub mod error;
pub mod fft3;
pub mod levy;
pub mod measure;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod support;
pub mod vec3;

pub use collision::{CollisionAngles, CrossSection, Frame};
pub use error::{Error, Result};
pub use measure::EmpiricalMeasure;
pub use sde::{CoupledPath, InitialLaw, ParticleSystem, Scheme, SimConfig, Snapshot};
pub use stats::{BesovEstimate, EntropyEstimate, GridDensity, GridSpec};
pub use vec3::Vec3;
