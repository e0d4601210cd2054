//! Fully deterministic reference backend: a desk-scale stand-in for a real
//! LLM so all steering mechanics are testable without one.
//!
//! Architecture:
//! - Byte-level tokenizer over bytes 0-255 plus three specials
//!   (pad=256, bos=257, eos=258), so the vocabulary size is 259. The marker
//!   strings `[PAD]`, `[BOS]`, `[EOS]` tokenize to the special ids.
//! - Embedding `E`: V x d_model.
//! - Block `l` (l = 1..=L): `x_t = tanh(W_l x_t' + U_l m_t' + b_l)` where
//!   `x_t'` is the previous layer's state at position t and `m_t'` is the
//!   causal prefix mean `(1/t) * sum_{s<=t} x_s'` of the previous layer.
//!   The prefix-mean term mixes context causally, so interventions propagate
//!   to later layers and later positions.
//! - Logits = `E^T x_last` at the final layer.
//!
//! Evaluation order is part of the contract (bitwise reproducibility):
//! `acc = sum_j W[i][j] x[j]` (j ascending), then `acc += sum_j U[i][j] m[j]`
//! (j ascending), then `acc += b[i]`, then `tanh`; `m[j] = sums[j] / t`.
//!
//! Parameters come from the seeded generator in [`crate::rng`], filled in a
//! fixed order: `E` row-major, then per layer `W` row-major, `U` row-major,
//! `b`. Each 64-bit output z maps to `((z >> 11) * 2^-53 - 0.5) / sqrt(d_model)`.

use std::sync::Arc;

use crate::backend::{
    ActivationRecord, Backend, BackendDescriptor, FinishReason, GenerationResult, InterventionSpec,
};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const PAD_ID: u32 = 256;
pub const BOS_ID: u32 = 257;
pub const EOS_ID: u32 = 258;
pub const VOCAB_SIZE: u32 = 259;

const MARKERS: [(&str, u32); 3] = [("[PAD]", PAD_ID), ("[BOS]", BOS_ID), ("[EOS]", EOS_ID)];

#[derive(Debug)]
struct LayerParams {
    w: Vec<f64>, // d x d, row-major
    u: Vec<f64>, // d x d, row-major
    b: Vec<f64>, // d
}

#[derive(Debug)]
struct Params {
    embedding: Vec<f64>, // V x d, row-major
    layers: Vec<LayerParams>,
}

/// Deterministic reference backend. Cloning shares the parameter arrays.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    descriptor: BackendDescriptor,
    params: Arc<Params>,
}

impl ReferenceBackend {
    /// Build the reference network. Identical (seed, num_layers, d_model)
    /// yields identical parameters on every platform.
    pub fn new(seed: u64, num_layers: usize, d_model: usize) -> Result<Self> {
        if num_layers < 1 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        if d_model < 2 || !d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_model must be even and >= 2, got {d_model}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let scale = 1.0 / (d_model as f64).sqrt();
        let mut draw = move || (rng.next_unit() - 0.5) * scale;

        let v = VOCAB_SIZE as usize;
        let mut embedding = Vec::with_capacity(v * d_model);
        for _ in 0..v * d_model {
            embedding.push(draw());
        }
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let w = (0..d_model * d_model).map(|_| draw()).collect();
            let u = (0..d_model * d_model).map(|_| draw()).collect();
            let b = (0..d_model).map(|_| draw()).collect();
            layers.push(LayerParams { w, u, b });
        }

        Ok(Self {
            descriptor: BackendDescriptor {
                model_id: format!("reference-seed{seed}-L{num_layers}-d{d_model}"),
                num_layers,
                hidden_dim: d_model,
                vocab_size: VOCAB_SIZE,
                eos_marker: "[EOS]".to_string(),
                hook_point: "block_output".to_string(),
            },
            params: Arc::new(params_checked(embedding, layers)),
        })
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    fn embedding_row(&self, id: u32) -> &[f64] {
        let d = self.descriptor.hidden_dim;
        let off = id as usize * d;
        &self.params.embedding[off..off + d]
    }

    fn forward<'a>(
        &'a self,
        tokens: &[u32],
        intervention: Option<&'a InterventionSpec>,
    ) -> ForwardPass<'a> {
        let mut pass = ForwardPass::new(self, intervention);
        for &t in tokens {
            pass.push_token(t);
        }
        pass
    }

    fn check_layers(&self, layers: &[usize]) -> Result<Vec<usize>> {
        let mut sorted: Vec<usize> = layers.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &l in &sorted {
            if l > self.descriptor.num_layers {
                return Err(Error::LayerOutOfRange {
                    layer: l,
                    max: self.descriptor.num_layers,
                });
            }
        }
        Ok(sorted)
    }

    fn capture_inner(
        &self,
        prompt: &str,
        layers: &[usize],
        position: usize,
        intervention: Option<&InterventionSpec>,
    ) -> Result<Vec<ActivationRecord>> {
        let tokens = self.tokenize(prompt)?;
        if position >= tokens.len() {
            return Err(Error::PositionOutOfRange {
                position,
                len: tokens.len(),
            });
        }
        let layers = self.check_layers(layers)?;
        if let Some(iv) = intervention {
            iv.validate(&self.descriptor, tokens.len())?;
        }
        let pass = self.forward(&tokens, intervention);
        Ok(layers
            .into_iter()
            .map(|layer| ActivationRecord {
                sample_id: String::new(),
                instruction: String::new(),
                layer,
                position,
                vector: pass.states[layer][position].clone(),
            })
            .collect())
    }
}

fn params_checked(embedding: Vec<f64>, layers: Vec<LayerParams>) -> Params {
    debug_assert!(embedding.iter().all(|x| x.is_finite()));
    Params { embedding, layers }
}

/// Incremental forward state. Both capture and generation run through this
/// single code path so summation order never diverges.
struct ForwardPass<'a> {
    backend: &'a ReferenceBackend,
    intervention: Option<&'a InterventionSpec>,
    /// states[layer][position][dim], layer 0 = embeddings.
    states: Vec<Vec<Vec<f64>>>,
    /// Per-layer running sums over processed positions.
    sums: Vec<Vec<f64>>,
    positions: usize,
}

impl<'a> ForwardPass<'a> {
    fn new(backend: &'a ReferenceBackend, intervention: Option<&'a InterventionSpec>) -> Self {
        let n_layers = backend.descriptor.num_layers;
        let d = backend.descriptor.hidden_dim;
        Self {
            backend,
            intervention,
            states: vec![Vec::new(); n_layers + 1],
            sums: vec![vec![0.0; d]; n_layers + 1],
            positions: 0,
        }
    }

    fn apply_intervention(&self, x: &mut [f64], layer: usize, position: usize) {
        if let Some(iv) = self.intervention {
            if iv.layer == layer && iv.position == position {
                for (xi, di) in x.iter_mut().zip(&iv.delta) {
                    *xi += iv.scale * di;
                }
            }
        }
    }

    fn push_token(&mut self, token: u32) {
        let d = self.backend.descriptor.hidden_dim;
        let p = self.positions;
        let count = (p + 1) as f64;

        let mut x = self.backend.embedding_row(token).to_vec();
        self.apply_intervention(&mut x, 0, p);
        for j in 0..d {
            self.sums[0][j] += x[j];
        }
        self.states[0].push(x);

        for (idx, layer) in self.backend.params.layers.iter().enumerate() {
            let l = idx + 1;
            let prev = &self.states[l - 1][p];
            let mut x = vec![0.0; d];
            for i in 0..d {
                let mut acc = 0.0;
                let w_row = &layer.w[i * d..(i + 1) * d];
                for j in 0..d {
                    acc += w_row[j] * prev[j];
                }
                let u_row = &layer.u[i * d..(i + 1) * d];
                for j in 0..d {
                    acc += u_row[j] * (self.sums[l - 1][j] / count);
                }
                acc += layer.b[i];
                x[i] = acc.tanh();
            }
            self.apply_intervention(&mut x, l, p);
            for j in 0..d {
                self.sums[l][j] += x[j];
            }
            self.states[l].push(x);
        }
        self.positions += 1;
    }

    /// Final-layer logits at the last processed position.
    fn logits(&self) -> Vec<f64> {
        let d = self.backend.descriptor.hidden_dim;
        let last = self.states[self.backend.descriptor.num_layers]
            .last()
            .expect("at least one position");
        let mut logits = Vec::with_capacity(VOCAB_SIZE as usize);
        for v in 0..VOCAB_SIZE as usize {
            let row = &self.backend.params.embedding[v * d..(v + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * last[j];
            }
            logits.push(acc);
        }
        logits
    }
}

/// Argmax with ties broken by the lowest token id.
pub(crate) fn greedy_pick(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &x) in logits.iter().enumerate().skip(1) {
        if x > logits[best] {
            best = i;
        }
    }
    best as u32
}

impl Backend for ReferenceBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let bytes = text.as_bytes();
        let mut ids = Vec::with_capacity(bytes.len());
        let mut i = 0;
        'outer: while i < bytes.len() {
            for (marker, id) in MARKERS {
                if bytes[i..].starts_with(marker.as_bytes()) {
                    ids.push(id);
                    i += marker.len();
                    continue 'outer;
                }
            }
            ids.push(bytes[i] as u32);
            i += 1;
        }
        Ok(ids)
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            if id < 256 {
                bytes.push(id as u8);
            } else if let Some((marker, _)) = MARKERS.iter().find(|(_, m)| *m == id) {
                bytes.extend_from_slice(marker.as_bytes());
            } else {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: VOCAB_SIZE,
                });
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn capture_activations(
        &self,
        prompt: &str,
        layers: &[usize],
        position: usize,
    ) -> Result<Vec<ActivationRecord>> {
        self.capture_inner(prompt, layers, position, None)
    }

    fn capture_with_intervention(
        &self,
        prompt: &str,
        layers: &[usize],
        position: usize,
        intervention: &InterventionSpec,
    ) -> Result<Vec<ActivationRecord>> {
        self.capture_inner(prompt, layers, position, Some(intervention))
    }

    fn generate(
        &self,
        prompt: &str,
        max_new_tokens: usize,
        intervention: Option<&InterventionSpec>,
    ) -> Result<GenerationResult> {
        if max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        let tokens = self.tokenize(prompt)?;
        if tokens.is_empty() {
            return Err(Error::EmptyInput("prompt"));
        }
        if let Some(iv) = intervention {
            iv.validate(&self.descriptor, tokens.len())?;
        }
        let mut pass = self.forward(&tokens, intervention);
        let mut generated = Vec::new();
        let mut finished = FinishReason::MaxTokens;
        for _ in 0..max_new_tokens {
            let next = greedy_pick(&pass.logits());
            if next == EOS_ID {
                finished = FinishReason::Eos;
                break;
            }
            generated.push(next);
            pass.push_token(next);
        }
        let text = self.detokenize(&generated)?;
        Ok(GenerationResult {
            text,
            token_ids: generated,
            finished_reason: finished,
        })
    }

    fn vocab(&self) -> Vec<String> {
        let mut out: Vec<String> = (0u8..=255)
            .map(|b| String::from_utf8_lossy(&[b]).into_owned())
            .collect();
        out.extend(MARKERS.iter().map(|(m, _)| m.to_string()));
        out
    }

    fn input_embedding(&self, token: &str) -> Result<Vec<f64>> {
        let ids = self.tokenize(token)?;
        if ids.is_empty() {
            return Err(Error::EmptyInput("token"));
        }
        let d = self.descriptor.hidden_dim;
        let mut acc = vec![0.0; d];
        for &id in &ids {
            let row = self.embedding_row(id);
            for j in 0..d {
                acc[j] += row[j];
            }
        }
        let n = ids.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        Ok(acc)
    }
}
