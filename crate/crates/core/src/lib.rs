//! Structured matrix nearness problems solved as Riemannian optimization of a
//! regularized least-squares inner oracle.

pub mod error;
pub mod io;
pub mod linalg;
pub mod manifolds;
pub mod oracle;
pub mod outer;
pub mod problems;
pub mod trust_region;

pub use error::{Error, Result};
