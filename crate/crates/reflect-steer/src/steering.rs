//! Steering-vector math: per-instruction mean activations, level-to-level
//! steering vectors, candidate vectors for new instructions, cosine
//! similarity, and the persistent vector store.
//!
//! All accumulation is 64-bit with a fixed order (records sorted by sample
//! id, mean lists in their given order), so results are reproducible
//! regardless of the backend's compute precision. Steering vectors are
//! stored unnormalized and applied with scale 1.0 by default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::ActivationRecord;
use crate::error::{Error, Result};

pub const STORE_FORMAT_VERSION: i64 = 1;

/// Mean activation for one instruction at one layer, averaged over the
/// training samples at the instruction's final token position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionMean {
    pub instruction: String,
    pub layer: usize,
    pub values: Vec<f64>,
    pub n_samples: usize,
}

/// Provenance carried by every steering vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorMetadata {
    pub model_id: String,
    pub n_samples: usize,
    pub source_instructions: Vec<String>,
    pub target_instructions: Vec<String>,
    /// Left unset by the extract pipeline so reruns are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

/// A direction in activation space from a source condition to a target
/// condition at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub source_label: String,
    pub target_label: String,
    pub layer: usize,
    pub values: Vec<f64>,
    pub metadata: VectorMetadata,
}

/// Compute the componentwise mean of activation records for one instruction
/// at one layer, one record per training sample. Summation runs in sample-id
/// order.
pub fn instruction_mean(records: &[ActivationRecord]) -> Result<InstructionMean> {
    let first = records
        .first()
        .ok_or(Error::EmptyInput("activation records"))?;
    for r in records {
        if r.instruction != first.instruction {
            return Err(Error::MixedRecords {
                what: "instruction",
                a: first.instruction.clone(),
                b: r.instruction.clone(),
            });
        }
        if r.layer != first.layer {
            return Err(Error::MixedRecords {
                what: "layer",
                a: first.layer.to_string(),
                b: r.layer.to_string(),
            });
        }
        if r.vector.len() != first.vector.len() {
            return Err(Error::LengthMismatch {
                a: first.vector.len(),
                b: r.vector.len(),
            });
        }
    }
    let mut order: Vec<&ActivationRecord> = records.iter().collect();
    order.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for pair in order.windows(2) {
        if pair[0].sample_id == pair[1].sample_id {
            return Err(Error::DuplicateRecord(pair[0].sample_id.clone()));
        }
    }
    let d = first.vector.len();
    let mut acc = vec![0.0f64; d];
    for r in &order {
        for j in 0..d {
            acc[j] += r.vector[j];
        }
    }
    let n = order.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(InstructionMean {
        instruction: first.instruction.clone(),
        layer: first.layer,
        values: acc,
        n_samples: order.len(),
    })
}

fn check_mean_list(means: &[InstructionMean], layer: usize) -> Result<usize> {
    if means.is_empty() {
        return Err(Error::EmptyInput("instruction means"));
    }
    let d = means[0].values.len();
    let n = means[0].n_samples;
    let mut seen = std::collections::BTreeSet::new();
    for m in means {
        if m.layer != layer {
            return Err(Error::LayerMismatch {
                expected: layer,
                got: m.layer,
            });
        }
        if m.values.len() != d {
            return Err(Error::LengthMismatch {
                a: d,
                b: m.values.len(),
            });
        }
        if m.n_samples != n {
            return Err(Error::UnequalSampleCounts {
                a: n,
                b: m.n_samples,
            });
        }
        if !seen.insert(m.instruction.as_str()) {
            return Err(Error::DuplicateInstruction(m.instruction.clone()));
        }
    }
    Ok(d)
}

/// Mean of a list of instruction means, in list order.
fn mean_of_means(means: &[InstructionMean], d: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; d];
    for m in means {
        for j in 0..d {
            acc[j] += m.values[j];
        }
    }
    let n = means.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    acc
}

/// Steering vector from the source condition to the target condition at one
/// layer: the average over all (target, source) instruction pairs of the
/// mean-activation differences, which collapses to
/// `mean(target means) - mean(source means)`.
pub fn steering_vector(
    source_means: &[InstructionMean],
    target_means: &[InstructionMean],
    layer: usize,
    source_label: &str,
    target_label: &str,
    model_id: &str,
) -> Result<SteeringVector> {
    let d_a = check_mean_list(source_means, layer)?;
    let d_b = check_mean_list(target_means, layer)?;
    if d_a != d_b {
        return Err(Error::LengthMismatch { a: d_a, b: d_b });
    }
    if source_means[0].n_samples != target_means[0].n_samples {
        return Err(Error::UnequalSampleCounts {
            a: source_means[0].n_samples,
            b: target_means[0].n_samples,
        });
    }
    let mean_a = mean_of_means(source_means, d_a);
    let mean_b = mean_of_means(target_means, d_a);
    let values: Vec<f64> = mean_b.iter().zip(&mean_a).map(|(b, a)| b - a).collect();
    Ok(SteeringVector {
        source_label: source_label.to_string(),
        target_label: target_label.to_string(),
        layer,
        values,
        metadata: VectorMetadata {
            model_id: model_id.to_string(),
            n_samples: source_means[0].n_samples,
            source_instructions: source_means.iter().map(|m| m.instruction.clone()).collect(),
            target_instructions: target_means.iter().map(|m| m.instruction.clone()).collect(),
            created_at: None,
        },
    })
}

/// Steering vector of a single candidate instruction relative to a source
/// condition: `candidate mean - mean(source means)`.
pub fn candidate_vector(
    candidate: &InstructionMean,
    source_means: &[InstructionMean],
    source_label: &str,
    model_id: &str,
) -> Result<SteeringVector> {
    let d = check_mean_list(source_means, candidate.layer)?;
    if candidate.values.len() != d {
        return Err(Error::LengthMismatch {
            a: candidate.values.len(),
            b: d,
        });
    }
    let mean_a = mean_of_means(source_means, d);
    let values: Vec<f64> = candidate
        .values
        .iter()
        .zip(&mean_a)
        .map(|(c, a)| c - a)
        .collect();
    Ok(SteeringVector {
        source_label: source_label.to_string(),
        target_label: candidate.instruction.clone(),
        layer: candidate.layer,
        values,
        metadata: VectorMetadata {
            model_id: model_id.to_string(),
            n_samples: candidate.n_samples,
            source_instructions: source_means.iter().map(|m| m.instruction.clone()).collect(),
            target_instructions: vec![candidate.instruction.clone()],
            created_at: None,
        },
    })
}

/// Cosine similarity. Zero-norm inputs are an error, never a silent 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            a: u.len(),
            b: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::EmptyInput("vector"));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for j in 0..u.len() {
        dot += u[j] * v[j];
        nu += u[j] * u[j];
        nv += v[j] * v[j];
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// On-disk collection of means and steering vectors for one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    pub format_version: i64,
    pub model_id: String,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub means: Vec<InstructionMean>,
    pub steering: Vec<SteeringVector>,
}

impl VectorStore {
    pub fn new(model_id: &str, hidden_dim: usize, num_layers: usize) -> Self {
        Self {
            format_version: STORE_FORMAT_VERSION,
            model_id: model_id.to_string(),
            hidden_dim,
            num_layers,
            means: Vec::new(),
            steering: Vec::new(),
        }
    }

    /// Look up a steering vector by labels and layer.
    pub fn steering_for(
        &self,
        source_label: &str,
        target_label: &str,
        layer: usize,
    ) -> Result<&SteeringVector> {
        self.steering
            .iter()
            .find(|s| {
                s.source_label == source_label && s.target_label == target_label && s.layer == layer
            })
            .ok_or_else(|| Error::MissingVector {
                source_label: source_label.to_string(),
                target_label: target_label.to_string(),
                layer,
            })
    }

    pub fn mean_for(&self, instruction: &str, layer: usize) -> Option<&InstructionMean> {
        self.means
            .iter()
            .find(|m| m.instruction == instruction && m.layer == layer)
    }

    /// Enforce the store invariants: one hidden dim throughout, and unique
    /// (labels, layer) keys.
    fn check_integrity(&self) -> Result<()> {
        let mut mean_keys = std::collections::BTreeSet::new();
        for m in &self.means {
            if m.values.len() != self.hidden_dim {
                return Err(Error::MixedHiddenDim {
                    a: self.hidden_dim,
                    b: m.values.len(),
                });
            }
            if !mean_keys.insert((m.instruction.as_str(), m.layer)) {
                return Err(Error::DuplicateStoreKey(format!(
                    "mean {:?} at layer {}",
                    m.instruction, m.layer
                )));
            }
        }
        let mut steering_keys = std::collections::BTreeSet::new();
        for s in &self.steering {
            if s.values.len() != self.hidden_dim {
                return Err(Error::MixedHiddenDim {
                    a: self.hidden_dim,
                    b: s.values.len(),
                });
            }
            if !steering_keys.insert((s.source_label.as_str(), s.target_label.as_str(), s.layer)) {
                return Err(Error::DuplicateStoreKey(format!(
                    "steering {}->{} at layer {}",
                    s.source_label, s.target_label, s.layer
                )));
            }
        }
        Ok(())
    }
}

/// Write a store as a pretty-printed JSON document. Floats use the shortest
/// round-trip representation, so save/load is exact and files are diffable.
pub fn save_store(store: &VectorStore, path: &Path) -> Result<()> {
    store.check_integrity()?;
    let text = serde_json::to_string_pretty(store).expect("store serialization");
    fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_store(path: &Path) -> Result<VectorStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    // Probe the version first so mismatches are reported by number, not as a
    // schema error.
    #[derive(Deserialize)]
    struct Probe {
        format_version: i64,
    }
    let probe: Probe = serde_json::from_str(&text).map_err(|e| Error::MalformedStore {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if probe.format_version != STORE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: probe.format_version,
            supported: STORE_FORMAT_VERSION,
        });
    }
    let store: VectorStore = serde_json::from_str(&text).map_err(|e| Error::MalformedStore {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    store.check_integrity()?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(sample: &str, instruction: &str, layer: usize, vector: Vec<f64>) -> ActivationRecord {
        ActivationRecord {
            sample_id: sample.to_string(),
            instruction: instruction.to_string(),
            layer,
            position: 0,
            vector,
        }
    }

    fn mean(instruction: &str, layer: usize, values: Vec<f64>, n: usize) -> InstructionMean {
        InstructionMean {
            instruction: instruction.to_string(),
            layer,
            values,
            n_samples: n,
        }
    }

    #[test]
    fn two_point_mean() {
        let recs = vec![
            record("a", "Wait", 1, vec![1.0, 3.0]),
            record("b", "Wait", 1, vec![3.0, 5.0]),
        ];
        let m = instruction_mean(&recs).unwrap();
        assert_eq!(m.values, vec![2.0, 4.0]);
        assert_eq!(m.n_samples, 2);
    }

    #[test]
    fn single_record_mean_is_identity() {
        let recs = vec![record("a", "Wait", 1, vec![0.5, -0.25])];
        assert_eq!(instruction_mean(&recs).unwrap().values, vec![0.5, -0.25]);
    }

    #[test]
    fn mean_rejects_mixed_and_empty_and_duplicate() {
        assert!(instruction_mean(&[]).is_err());
        let mixed_instr = vec![
            record("a", "Wait", 1, vec![0.0]),
            record("b", "Check", 1, vec![0.0]),
        ];
        assert!(instruction_mean(&mixed_instr).is_err());
        let mixed_layer = vec![
            record("a", "Wait", 1, vec![0.0]),
            record("b", "Wait", 2, vec![0.0]),
        ];
        assert!(instruction_mean(&mixed_layer).is_err());
        let dup = vec![
            record("a", "Wait", 1, vec![0.0]),
            record("a", "Wait", 1, vec![1.0]),
        ];
        assert!(matches!(
            instruction_mean(&dup),
            Err(Error::DuplicateRecord(_))
        ));
    }

    #[test]
    fn mean_matches_naive_pass_on_reference_records() {
        // Five reference-backend records for "Wait" at layer 2, checked
        // against a separate accumulate-and-divide pass over the same
        // records.
        use crate::backend::{Backend, ReferenceBackend};
        let backend = ReferenceBackend::new(3, 3, 8).unwrap();
        let records: Vec<ActivationRecord> = (0..5)
            .map(|i| {
                let prompt = format!("sample {i} text. Wait");
                let n = backend.tokenize(&prompt).unwrap().len();
                backend
                    .capture_activations(&prompt, &[2], n - 1)
                    .unwrap()
                    .remove(0)
                    .with_labels(&format!("s{i}"), "Wait")
            })
            .collect();
        let got = instruction_mean(&records).unwrap();
        assert_eq!(got.n_samples, 5);
        let mut naive = vec![0.0f64; 8];
        for r in &records {
            for j in 0..8 {
                naive[j] += r.vector[j];
            }
        }
        for v in &mut naive {
            *v /= 5.0;
        }
        assert_eq!(got.values, naive);
    }

    #[test]
    fn mean_sums_in_sample_id_order() {
        // Same multiset of records, different list order: identical result.
        let a = vec![
            record("s1", "Wait", 0, vec![0.1, 0.2]),
            record("s2", "Wait", 0, vec![0.3, 0.4]),
            record("s3", "Wait", 0, vec![0.5, 0.6]),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(instruction_mean(&a).unwrap(), instruction_mean(&b).unwrap());
    }

    #[test]
    fn singleton_steering_difference() {
        let a = [mean("Answer", 0, vec![0.0, 0.0], 1)];
        let b = [mean("Wait", 0, vec![1.0, 2.0], 1)];
        let sv = steering_vector(&a, &b, 0, "0", "2", "m").unwrap();
        assert_eq!(sv.values, vec![1.0, 2.0]);
        assert_eq!(sv.source_label, "0");
        assert_eq!(sv.target_label, "2");
    }

    #[test]
    fn identical_sides_give_zero_vector() {
        let a = [
            mean("x", 0, vec![1.0, -1.0], 2),
            mean("y", 0, vec![2.0, 0.5], 2),
        ];
        let b = [
            mean("p", 0, vec![1.0, -1.0], 2),
            mean("q", 0, vec![2.0, 0.5], 2),
        ];
        let sv = steering_vector(&a, &b, 0, "a", "b", "m").unwrap();
        assert_eq!(sv.values, vec![0.0, 0.0]);
    }

    #[test]
    fn double_sum_small_case() {
        // I_a means {(0,0),(2,2)}, I_b means {(1,1),(3,5)}:
        // (1/4) * sum of pairwise differences = (1, 2).
        let a = [
            mean("a1", 0, vec![0.0, 0.0], 1),
            mean("a2", 0, vec![2.0, 2.0], 1),
        ];
        let b = [
            mean("b1", 0, vec![1.0, 1.0], 1),
            mean("b2", 0, vec![3.0, 5.0], 1),
        ];
        let sv = steering_vector(&a, &b, 0, "a", "b", "m").unwrap();
        assert_eq!(sv.values, vec![1.0, 2.0]);
        // brute-force enumeration of all four pairs
        let mut acc = [0.0, 0.0];
        for bm in &b {
            for am in &a {
                for j in 0..2 {
                    acc[j] += bm.values[j] - am.values[j];
                }
            }
        }
        for j in 0..2 {
            assert!((acc[j] / 4.0 - sv.values[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn steering_rejects_layer_mismatch_and_unequal_counts() {
        let a = [mean("a", 0, vec![0.0], 1)];
        let b_wrong_layer = [mean("b", 1, vec![0.0], 1)];
        assert!(steering_vector(&a, &b_wrong_layer, 0, "a", "b", "m").is_err());
        let b_wrong_n = [mean("b", 0, vec![0.0], 3)];
        assert!(matches!(
            steering_vector(&a, &b_wrong_n, 0, "a", "b", "m"),
            Err(Error::UnequalSampleCounts { .. })
        ));
        assert!(steering_vector(&[], &a, 0, "a", "b", "m").is_err());
    }

    #[test]
    fn candidate_vector_cases() {
        let a = [mean("a", 3, vec![1.0, 1.0], 1)];
        let cand = mean("Verify", 3, vec![2.0, 2.0], 1);
        let sv = candidate_vector(&cand, &a, "0", "m").unwrap();
        assert_eq!(sv.values, vec![1.0, 1.0]);
        assert_eq!(sv.target_label, "Verify");

        let a2 = [
            mean("a1", 3, vec![0.0, 0.0], 1),
            mean("a2", 3, vec![2.0, 2.0], 1),
        ];
        let cand2 = mean("c", 3, vec![4.0, 0.0], 1);
        let sv2 = candidate_vector(&cand2, &a2, "0", "m").unwrap();
        assert_eq!(sv2.values, vec![3.0, -1.0]);

        // candidate equal to mean of the source side: zero vector
        let cand3 = mean("c", 3, vec![1.0, 1.0], 1);
        assert_eq!(
            candidate_vector(&cand3, &a2, "0", "m").unwrap().values,
            vec![0.0, 0.0]
        );

        let cand_wrong_layer = mean("c", 4, vec![0.0, 0.0], 1);
        assert!(candidate_vector(&cand_wrong_layer, &a2, "0", "m").is_err());
    }

    #[test]
    fn cosine_basic_values() {
        let v = vec![1.0, 2.0, 3.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_norm_and_mismatch() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_similarity(&[], &[]).is_err());
    }

    fn store_with(dim: usize) -> VectorStore {
        let mut store = VectorStore::new("m", dim, 2);
        store.means.push(mean("Wait", 0, vec![0.25; dim], 4));
        store.means.push(mean("Check", 1, vec![-0.5; dim], 4));
        store.means.push(mean("#", 1, vec![0.125; dim], 4));
        store.steering.push(SteeringVector {
            source_label: "0".into(),
            target_label: "2".into(),
            layer: 1,
            values: (0..dim).map(|i| i as f64 * 0.1 - 0.3).collect(),
            metadata: VectorMetadata {
                model_id: "m".into(),
                n_samples: 4,
                source_instructions: vec!["Answer".into()],
                target_instructions: vec!["Wait".into()],
                created_at: None,
            },
        });
        store
    }

    #[test]
    fn store_roundtrip_exact() {
        let store = store_with(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        save_store(&store, &path).unwrap();
        let loaded = load_store(&path).unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn store_load_rejects_truncation_and_version() {
        let store = store_with(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        save_store(&store, &path).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_store(&path),
            Err(Error::MalformedStore { .. })
        ));

        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&path, bumped).unwrap();
        assert!(matches!(
            load_store(&path),
            Err(Error::VersionMismatch {
                found: 9,
                supported: 1
            })
        ));
    }

    #[test]
    fn store_save_refuses_duplicate_keys() {
        let mut store = store_with(3);
        store.means.push(store.means[0].clone());
        let dir = tempfile::tempdir().unwrap();
        let err = save_store(&store, &dir.path().join("s.json")).unwrap_err();
        assert!(matches!(err, Error::DuplicateStoreKey(_)));

        let mut store = store_with(3);
        store.steering.push(store.steering[0].clone());
        let err = save_store(&store, &dir.path().join("s.json")).unwrap_err();
        assert!(matches!(err, Error::DuplicateStoreKey(_)));
    }

    #[test]
    fn store_save_refuses_mixed_dims() {
        let mut store = store_with(3);
        store.means.push(mean("Odd", 0, vec![0.0; 5], 4));
        let dir = tempfile::tempdir().unwrap();
        let err = save_store(&store, &dir.path().join("s.json")).unwrap_err();
        assert!(matches!(err, Error::MixedHiddenDim { .. }));
    }

    #[test]
    fn missing_vector_error_names_pair_and_layer() {
        let store = store_with(2);
        let err = store.steering_for("1", "2", 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1->2") && msg.contains("layer 0"), "{msg}");
    }
}
