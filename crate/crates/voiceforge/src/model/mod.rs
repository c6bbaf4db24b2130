//! Small decoder-only autoregressive transformer trained from scratch.
//!
//! Submodules: [`math`] (scalar kernels), [`net`] (forward/backward),
//! [`train`] (Adam loop), [`generate`] (decoding with an optional structural
//! guard), [`gradcheck`] (finite-difference verification), [`checkpoint`]
//! (binary persistence).

pub mod checkpoint;
pub mod generate;
pub mod gradcheck;
pub mod math;
pub mod net;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use generate::{generate, DecodeMode};
pub use gradcheck::{grad_check, GradCheckReport};
pub use net::{ModelConfig, ParamLayout, Params};
pub use train::{train, AdamState, TrainConfig, TracePoint, TrainReport};

use crate::sequencer::{TokenSequence, Vocabulary};
use crate::Result;

/// A model instance: config, vocabulary, parameters, and the number of
/// training steps applied so far.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Params<f32>,
    pub step: u64,
}

impl Model {
    /// Fresh model with seeded Gaussian init.
    pub fn new(config: ModelConfig) -> Result<Model> {
        let vocab = config.vocabulary()?;
        let layout = ParamLayout::new(&config);
        let params = Params::init(&config, &layout);
        Ok(Model {
            config,
            vocab,
            params,
            step: 0,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    /// Per-position logits over the vocabulary, shape `[len(ids), vocab]`.
    pub fn forward(&self, ids: &[u32]) -> Result<Vec<f32>> {
        let layout = self.layout();
        Ok(net::forward_cached(&self.config, &layout, &self.params, ids)?.logits)
    }

    /// Normalized weighted cross entropy of one sequence.
    pub fn loss(&self, seq: &TokenSequence) -> Result<f64> {
        let layout = self.layout();
        net::loss_only(&self.config, &layout, &self.params, seq)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.arrays.iter().map(|a| a.len()).sum()
    }
}
