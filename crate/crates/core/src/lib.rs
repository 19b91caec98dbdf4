//! Deterministic simulation lab for DARE-style partially synchronous
//! Byzantine consensus: the protocols, a discrete-event network simulator,
//! adversary scripts and an experiment runner.

pub mod agreement;
pub mod baseline;
pub mod crypto;
pub mod dare;
pub mod darestark;
pub mod disperser;
pub mod erasure;
pub mod harness;
pub mod model;
pub mod retriever;
pub mod scenario;
pub mod simnet;
pub mod sync;
pub mod vector;
