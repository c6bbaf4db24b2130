//! Desk-scale instruction-driven voice design.
//!
//! The crate turns natural-language voice descriptions into discrete speech
//! tokens through a small autoregressive model that is trained jointly on
//! instruction text, intermediate attribute tokens, and speech tokens. A
//! synthetic, exactly invertible token oracle stands in for a neural codec so
//! that instruction following is measurable without any audio stack.
//!
//! Modules:
//! - [`schema`] — the voice-attribute universe and quantile discretization
//! - [`corpus`] — synthetic instruction/speech-token corpus with an invertible oracle
//! - [`sequencer`] — vocabulary, training sequences, and inference prompts
//! - [`model`] — decoder-only transformer, training, generation, gradient checks
//! - [`rag`] — embedding repository and cosine top-k retrieval grounding
//! - [`eval`] — oracle-based accuracy reports and the ablation harness

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod rag;
pub mod rng;
pub mod schema;
pub mod sequencer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
