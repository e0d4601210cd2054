//! reflect-steer: latent reflection directions in language-model activations.
//!
//! The library extracts "reflection" directions from hidden states via
//! contrastive instruction sets, ranks new candidate trigger instructions by
//! their alignment with those directions, and intervenes on activations at
//! inference time to enhance or inhibit reflective reasoning. A fully
//! deterministic reference backend makes every mechanism testable at desk
//! scale; real-model adapters plug in through the [`backend::Backend`] trait.
//!
//! The pipeline, end to end:
//!
//! 1. Load a dataset of reasoning problems whose chain-of-thought carries a
//!    deliberately injected error ([`corpus`]).
//! 2. Append instructions from three reflection levels (0 = direct answer,
//!    1 = neutral continuation, 2 = explicit reflection cue) and capture the
//!    hidden state at the instruction's final token ([`backend`]).
//! 3. Average per instruction, difference across levels to get steering
//!    vectors, persist them ([`steering`]).
//! 4. Rank vocabulary candidates by cosine alignment with a steering vector
//!    to discover new trigger instructions ([`discovery`]).
//! 5. Evaluate: three-level accuracy, discovered-instruction accuracy on a
//!    held-out split, and enhancement/inhibition layer sweeps ([`harness`]).
//!
//! The `reflect-steer` binary drives the same steps from a config file via
//! `extract`, `discover`, `evaluate` and `report` subcommands; the crate's
//! `examples/` directory shows each capability as a runnable program.

// Indexed loops in the numeric kernels are intentional: the summation order
// is pinned by the reproducibility contract and the index form keeps it
// visible.
#![allow(clippy::needless_range_loop)]

pub mod backend;
pub mod config;
pub mod corpus;
pub mod discovery;
pub mod error;
pub mod harness;
pub mod pipeline;
pub mod steering;

mod rng;

pub use error::{Error, Result};
