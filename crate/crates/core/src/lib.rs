//! Numerical laboratory for the 3:1 mean-motion resonance of the planar
//! circular restricted three-body problem.

pub mod coords;
pub mod dynamics;
pub mod error;
pub mod homoclinic;
pub mod integrate;
pub mod linalg;
pub mod manifold;
pub mod melnikov;
pub mod porbit;
pub mod quad;
pub mod roots;
pub mod section;
pub mod skewshift;

pub use error::{Error, Result};
