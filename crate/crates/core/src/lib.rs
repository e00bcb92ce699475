//! Design and characterization toolkit for laterally excited bulk acoustic
//! wave resonators with electrodes recessed into a piezoelectric film.
//!
//! The design side computes resonance/antiresonance dispersion, coupling and
//! energy confinement of one IDT period with a 2.5D piezoelectric finite
//! element model ([`fem`], [`dispersion`]). The characterization side turns
//! two-port Touchstone measurements into admittance and fits a modified
//! Butterworth–Van Dyke circuit ([`rfio`], [`mbvd`]).

pub mod error;
pub mod linalg;
pub mod materials;
pub mod mesh;

pub mod dispersion;
pub mod fem;
pub mod mbvd;
pub mod parallel;
pub mod rfio;

pub use error::{Error, Result};
