//! Verifiable remote-storage auditing.
//!
//! The library has five layers, each usable on its own:
//!
//! * [`crypto`]: domain-separated hashing, deterministic index sampling,
//!   and Ed25519 signatures.
//! * [`pdp`]: RSA-based provable data possession with homomorphic tags.
//!   A verifier holding only a short public key can check that a prover
//!   still stores specific data blocks, with proofs whose size does not
//!   depend on how much data is challenged.
//! * [`protocol`]: the audit protocol built on top of the tags. Files are
//!   split into chunks, chunks are assigned to storage nodes by hash
//!   sampling, per-round challenges are derived from a shared random seed,
//!   and possession proofs are signed and verified against a node registry.
//! * [`ledger`]: an append-only chain of blocks carrying join, store and
//!   reward transactions, with escrow accounting and full replay
//!   verification.
//! * [`netsim`]: a deterministic single-threaded discrete-event simulator
//!   that drives the whole protocol over many rounds, models latency and
//!   several adversary behaviours, and reports coverage and reward
//!   statistics.

pub mod crypto;
pub mod ledger;
pub mod netsim;
pub mod pdp;
pub mod protocol;
pub mod wire;
