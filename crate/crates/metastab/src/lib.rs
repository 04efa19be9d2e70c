//! Metastability toolkit for three modified 2D Ising models on a finite
//! torus: anisotropic couplings, next-nearest-neighbor attraction, and an
//! alternating row field.
//!
//! The crate has three layers:
//! - exact droplet theory ([`theory`]): critical lengths, activation energy,
//!   protocritical/critical droplet enumeration and the transition-time
//!   prefactor in closed form;
//! - a brute-force landscape oracle ([`landscape`]) that computes the same
//!   quantities from first principles on small tori;
//! - a rejection-free continuous-time Glauber simulator ([`kmc`]) for
//!   sampling transition times at scale.

pub mod lattice;
pub mod model;
pub mod landscape;
pub mod theory;

pub use lattice::{SpinConfiguration, Torus};
pub use model::{ModelKind, ModelParams};
pub use theory::CriticalGeometry;
