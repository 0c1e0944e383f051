//! Deterministic simulator of speculative loop vectorization with selective
//! replay (SRV), together with the machinery needed to study its side-channel
//! behavior at desk scale: a small gadget DSL, a vectorizer with several
//! dependence-handling strategies, a byte-mask dependence tracker, a
//! multi-level cache with a coarse jittered timer, a leakage-assertion (MLD)
//! engine, and an attack-scenario library with a mitigation matrix.
//!
//! The crate is example-first: see `examples/` for one runnable demo per
//! capability, and the `srv-sim` binary for a thin scenario runner.

pub mod attacks;
pub mod cli;
pub mod error;
pub mod gen;
pub mod isa;
pub mod lsu;
pub mod memhier;
pub mod mld;
pub mod pipeline;
pub mod trace;
pub mod vectorize;

pub use error::SimError;
