//! Numerical laboratory for modulated wave packets in symmetric hyperbolic systems.

pub mod ansatz;
pub mod audit;
pub mod error;
pub mod dispersion;
pub mod grid;
pub mod harness;
pub mod multipacket;
pub mod nls;
pub mod solver;
pub mod system;

pub use error::{Error, Result};
pub use grid::{PeriodicGrid, Spectral, StateField};
pub use system::{SystemSpec, WavePacketIC};
