//! Model-backend contract: tokenize, capture residual-stream activations,
//! and generate with an optional single-point activation intervention.
//!
//! "Activation" here means the residual-stream state at a block's output;
//! layer 0 is the embedding output and layer `l >= 1` is the output of block
//! `l`. Real-model adapters must bind the same convention (or document the
//! hook point they use in their descriptor's `model_id`).

pub mod reference;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use reference::ReferenceBackend;

/// Static facts about a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_id: String,
    /// Number of blocks; valid layer indices are 0..=num_layers.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: u32,
    /// Marker string whose token ends generation and serves as the
    /// intrinsic-reflection instruction.
    pub eos_marker: String,
    /// Where "activation" is read within a block. Adapters must name the
    /// hook point they bind; the reference backend reads block outputs.
    pub hook_point: String,
}

/// One hidden-state vector at (sample, instruction, layer, position).
///
/// Backends fill `layer`, `position` and `vector`; callers that know the
/// provenance attach `sample_id` and `instruction` via [`ActivationRecord::with_labels`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub sample_id: String,
    pub instruction: String,
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f64>,
}

impl ActivationRecord {
    pub fn with_labels(mut self, sample_id: &str, instruction: &str) -> Self {
        self.sample_id = sample_id.to_string();
        self.instruction = instruction.to_string();
        self
    }
}

/// A single-point additive intervention: during the prompt's forward pass the
/// state at (layer, position) becomes `state + scale * delta`, once. The
/// modified state persists through the cached context for all subsequent
/// decoding steps; it is not re-applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub layer: usize,
    pub position: usize,
    pub delta: Vec<f64>,
    pub scale: f64,
}

impl InterventionSpec {
    pub fn new(layer: usize, position: usize, delta: Vec<f64>) -> Self {
        Self {
            layer,
            position,
            delta,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Check layer/position/shape against a descriptor and a prompt length.
    pub fn validate(&self, descriptor: &BackendDescriptor, prompt_len: usize) -> Result<()> {
        if self.layer > descriptor.num_layers {
            return Err(Error::LayerOutOfRange {
                layer: self.layer,
                max: descriptor.num_layers,
            });
        }
        if self.position >= prompt_len {
            return Err(Error::PositionOutOfRange {
                position: self.position,
                len: prompt_len,
            });
        }
        if self.delta.len() != descriptor.hidden_dim {
            return Err(Error::DimMismatch {
                got: self.delta.len(),
                expected: descriptor.hidden_dim,
            });
        }
        if !self.scale.is_finite() || self.delta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(
                "intervention contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Eos,
    MaxTokens,
}

/// Greedy-decoded continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub finished_reason: FinishReason,
}

/// The backend contract.
///
/// An instance processes one request at a time; callers needing parallelism
/// create independent instances. All methods are deterministic: equal inputs
/// produce bitwise-equal outputs, with fixed summation order.
pub trait Backend: Send {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Deterministic tokenization. Backends with a restricted alphabet must
    /// name the offending character in the error.
    fn tokenize(&self, text: &str) -> Result<Vec<u32>>;

    /// Inverse of `tokenize` for in-alphabet texts; errors on out-of-range ids.
    fn detokenize(&self, ids: &[u32]) -> Result<String>;

    /// One record per requested layer at `position`, labels left empty.
    /// Layer 0 is the embedding output; layer `l >= 1` the output of block `l`.
    fn capture_activations(
        &self,
        prompt: &str,
        layers: &[usize],
        position: usize,
    ) -> Result<Vec<ActivationRecord>>;

    /// Same as [`Backend::capture_activations`] with an intervention applied
    /// during the forward pass.
    fn capture_with_intervention(
        &self,
        prompt: &str,
        layers: &[usize],
        position: usize,
        intervention: &InterventionSpec,
    ) -> Result<Vec<ActivationRecord>>;

    /// Greedy decoding (argmax per step, ties to the lowest token id),
    /// stopping at the eos marker or `max_new_tokens`. The intervention, if
    /// present, is applied once during the prompt's forward pass.
    fn generate(
        &self,
        prompt: &str,
        max_new_tokens: usize,
        intervention: Option<&InterventionSpec>,
    ) -> Result<GenerationResult>;

    /// Token strings of the full vocabulary (candidate-pool source).
    fn vocab(&self) -> Vec<String>;

    /// Input-embedding vector for a token string. Multi-token strings map to
    /// the mean of their token embeddings.
    fn input_embedding(&self, token: &str) -> Result<Vec<f64>>;
}
