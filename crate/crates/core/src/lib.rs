//! Emitters coupled to extended-SSH photonic lattices.
//!
//! The model is a bipartite chain with alternating first-neighbour hoppings
//! `J1`, `J1'` and alternating third-neighbour hoppings `J3`, `J3'`. Quantum
//! emitters couple to one or several lattice sites. The crate covers the band
//! structure and topology of the bath, finite-chain spectra, emitter
//! self-energies, qubit-photon bound states, disorder statistics, real-time
//! dynamics and the design of Floquet drive schedules that synthesize the
//! hoppings in a cavity array.
//!
//! Numerical kernels are generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the CLI and the statistics code use.

pub mod bloch;
pub mod boundstate;
pub mod chain;
pub mod cli;
pub mod coupling;
pub mod disorder_ensemble;
pub mod dynamics;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ModelParams = bloch::ModelParams<f64>;
pub type BandScan = bloch::BandScan<f64>;
pub type LatticeSpec = chain::LatticeSpec<f64>;
pub type DisorderSpec = chain::DisorderSpec<f64>;
pub type RealSpaceHamiltonian = chain::RealSpaceHamiltonian<f64>;
pub type EdgeStateSet = chain::EdgeStateSet<f64>;
pub type EmitterSpec = coupling::EmitterSpec<f64>;
pub type SelfEnergyCurve = coupling::SelfEnergyCurve<f64>;
pub type BoundState = boundstate::BoundState<f64>;
pub type RootReport = boundstate::RootReport<f64>;
