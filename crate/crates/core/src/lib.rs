//! Simulation and protocol library for a proof-of-entanglement (PoE) consortium
//! blockchain.
//!
//! Quantum servers distribute entangled photon pairs to clients, who certify the
//! entanglement with a loss-tolerant EPR-steering witness whose measurement
//! settings are tethered to a candidate block hash. Certified blocks are then
//! committed by a delegated BFT round among the winning servers.
//!
//! Module map:
//!
//! - [`qstate`]: Born-rule sampling of Werner-state photon pairs with channel loss.
//! - [`steering`]: measurement strategies, the bound `C_n(eta)`, and witness evaluation.
//! - [`poe`]: the interactive mining session, certificates and offline verification.
//! - [`chain`]: candidate blocks, validation and the append-only chain store.
//! - [`qsa`]: decoy-state challenge/response client authentication.
//! - [`consensus`]: winner election and speaker/delegate voting.
//! - [`netsim`]: the deterministic discrete-event harness tying it all together.
//! - [`energy`]: energy, throughput and service-radius arithmetic.

pub mod chain;
pub mod codec;
pub mod consensus;
pub mod digest;
pub mod energy;
pub mod error;
pub mod netsim;
pub mod poe;
pub mod qsa;
pub mod qstate;
pub mod rng;
pub mod steering;

pub use digest::Digest;
pub use error::{Error, Result};
pub use rng::RandomStream;
