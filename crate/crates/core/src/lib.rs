pub mod error;
pub mod hilbert;
pub mod invariants;
mod linalg;
pub mod liouvillian;
pub mod ode;
pub mod pointer;
pub mod scenario;
pub mod vibronic;

pub use error::{Error, Result};
