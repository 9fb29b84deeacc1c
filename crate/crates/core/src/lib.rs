//! Numerical laboratory for a rigid pseudoconvex domain in C³ built over a
//! Wermer-type set.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: the spiral enumeration of Gaussian integers and the square
//!   frames `S_n`, `T_n`, `S̃_n`.
//! * [`wermer`]: branches of `Σ ε_j √(z − a_j)`, analytic continuation,
//!   monodromy, certified ε-schedules and the α/κ/θ functionals.
//! * [`potential`]: the level-m potential `φ_m`, the defining function `Ψ`,
//!   domain membership and the q(n)/c(n) calibrations.
//! * [`profile`]: the convex profile ρ (piecewise-affine, mollified, plus t²).
//! * [`disks`]: holomorphic disk functionals (β, δ(n), Harnack localisation,
//!   large-disk exclusion search).
//! * [`kobayashi`] and [`harmonic`]: Kobayashi pseudometric brackets,
//!   walk-on-spheres harmonic measure, antipeak checks and the mean-value
//!   certificate.
//! * [`pipeline`]: configuration, the end-to-end domain build, audits and
//!   persisted artifacts.

pub mod disks;
pub mod error;
pub mod harmonic;
pub mod kobayashi;
pub mod lattice;
pub mod pipeline;
pub mod potential;
pub mod profile;
pub mod quadrature;
pub mod seeds;
pub mod wermer;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// A point of the complex plane. Coordinates are dimensionless.
pub type ComplexPoint = Complex64;

pub use disks::HoloDisk;
pub use lattice::RegionId;
pub use potential::{DomainParams, SublevelRegion};
pub use profile::ConvexProfile;
pub use wermer::{BranchSignature, ContinuationPath, EpsilonSchedule};
