//! Graph selectors for exact and Lipschitz-exact Lagrangians in `T*T^n`,
//! and the weak-KAM objects (critical value, Aubry and Mañé sets, maximal
//! invariant sets) they give access to.

pub mod error;
pub mod expr;
pub mod fourier;
pub mod front;
pub mod hull;
pub mod hamiltonian;
pub mod lagrangian;
pub mod linalg;
pub mod numeric;
pub mod dynamics;
pub mod weakkam;
pub mod persistence;
pub mod selector;

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, ParseError, Result};
pub use hamiltonian::{CotangentPoint, HamiltonianSpec, Tangent, TonelliReport};
