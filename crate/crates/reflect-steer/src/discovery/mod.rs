//! Discovery of new reflection-trigger instructions: build a normalized
//! candidate pool from a vocabulary, rank candidates by cosine alignment
//! with a reflection steering vector, and select top-k candidates for
//! held-out evaluation. Includes the input-embedding-similarity baseline.

mod stem;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::steering::{candidate_vector, cosine_similarity, InstructionMean, SteeringVector};

pub use stem::porter_stem;

/// Lowercase + Porter stem; the normalized form used for exclusion and
/// deduplication.
pub fn normalize_token(token: &str) -> String {
    porter_stem(&token.to_lowercase())
}

/// Mid-depth default for the discovery layer: floor(2L/5). Always overridable.
pub fn default_discovery_layer(num_layers: usize) -> usize {
    2 * num_layers / 5
}

/// How the input-embedding baseline aggregates similarity over the reference
/// instruction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

/// Pool-construction knobs beyond the fixed alphabetic/length filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolOptions {
    /// Cap on pool size; candidate means cost one forward pass per
    /// (sample, candidate), so the pool is bounded.
    pub max_tokens: usize,
    pub baseline_aggregation: Aggregation,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            max_tokens: 2000,
            baseline_aggregation: Aggregation::Max,
        }
    }
}

/// Record of the filters a pool was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_length: usize,
    pub alphabetic_only: bool,
    pub stripped_markers: Vec<String>,
    pub max_tokens: usize,
    pub baseline_aggregation: Aggregation,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub token: String,
    pub normalized: String,
}

/// Candidate instructions that passed the filters, deduplicated by stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub entries: Vec<PoolEntry>,
    pub filter_config: FilterConfig,
}

/// Word-boundary markers stripped (at most one) from the front of a token.
const BOUNDARY_MARKERS: [&str; 3] = ["\u{0120}", "\u{2581}", " "];

/// Build the candidate pool from a vocabulary: strip one leading
/// word-boundary marker, keep purely alphabetic tokens of length >= 2,
/// drop members of the exclusion set and anything sharing a normalized form
/// with one, deduplicate by normalized form (first in vocab order wins).
pub fn build_candidate_pool(
    vocab: &[String],
    exclusions: &BTreeSet<String>,
    options: &PoolOptions,
) -> Result<CandidatePool> {
    if vocab.is_empty() {
        return Err(Error::EmptyInput("vocabulary"));
    }
    let excluded_norms: BTreeSet<String> = exclusions.iter().map(|e| normalize_token(e)).collect();

    let mut entries = Vec::new();
    let mut seen_tokens: BTreeSet<&str> = BTreeSet::new();
    let mut seen_norms: BTreeSet<String> = BTreeSet::new();
    for raw in vocab {
        let mut token = raw.as_str();
        for marker in BOUNDARY_MARKERS {
            if let Some(stripped) = token.strip_prefix(marker) {
                token = stripped;
                break;
            }
        }
        if token.len() < 2 || !token.bytes().all(|b| b.is_ascii_alphabetic()) {
            continue;
        }
        if exclusions.contains(token) {
            continue;
        }
        let normalized = normalize_token(token);
        if excluded_norms.contains(&normalized) {
            continue;
        }
        if !seen_tokens.insert(token) || seen_norms.contains(&normalized) {
            continue;
        }
        seen_norms.insert(normalized.clone());
        entries.push(PoolEntry {
            token: token.to_string(),
            normalized,
        });
        if entries.len() == options.max_tokens {
            break;
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(CandidatePool {
        entries,
        filter_config: FilterConfig {
            min_length: 2,
            alphabetic_only: true,
            stripped_markers: BOUNDARY_MARKERS.iter().map(|m| m.to_string()).collect(),
            max_tokens: options.max_tokens,
            baseline_aggregation: options.baseline_aggregation,
            excluded: exclusions.iter().cloned().collect(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    Steering,
    InputEmbedding,
}

impl fmt::Display for RankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMethod::Steering => write!(f, "steering"),
            RankMethod::InputEmbedding => write!(f, "input_embedding"),
        }
    }
}

/// One candidate with its alignment score. Ranks are a permutation 1..n
/// within a (layer, method) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub token: String,
    pub layer: usize,
    pub similarity: f64,
    pub rank: usize,
    pub method: RankMethod,
}

/// A ranking plus the tokens that had to be skipped (recorded, never silent).
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub scores: Vec<CandidateScore>,
    pub warnings: Vec<String>,
}

fn sort_and_rank(mut scored: Vec<CandidateScore>) -> Vec<CandidateScore> {
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("finite similarity")
            .then_with(|| a.token.cmp(&b.token))
    });
    for (i, s) in scored.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    scored
}

/// Rank pool candidates by the cosine similarity between each candidate's
/// steering vector (relative to the source-level means) and the target
/// steering vector. Descending similarity, ties broken lexicographically.
pub fn rank_candidates(
    pool: &CandidatePool,
    candidate_means: &BTreeMap<String, InstructionMean>,
    source_means: &[InstructionMean],
    target: &SteeringVector,
) -> Result<Ranking> {
    let mut scored = Vec::with_capacity(pool.entries.len());
    let mut warnings = Vec::new();
    for entry in &pool.entries {
        let mean = match candidate_means.get(&entry.token) {
            Some(m) => m,
            None => {
                warnings.push(format!("no candidate mean for {:?}; skipped", entry.token));
                continue;
            }
        };
        if mean.layer != target.layer {
            return Err(Error::LayerMismatch {
                expected: target.layer,
                got: mean.layer,
            });
        }
        let cand_vec = candidate_vector(mean, source_means, &target.source_label, "")?;
        let similarity = match cosine_similarity(&cand_vec.values, &target.values) {
            Ok(s) => s,
            Err(Error::ZeroNorm) => {
                warnings.push(format!(
                    "zero-norm candidate vector for {:?}; skipped",
                    entry.token
                ));
                continue;
            }
            Err(e) => return Err(e),
        };
        scored.push(CandidateScore {
            token: entry.token.clone(),
            layer: target.layer,
            similarity,
            rank: 0,
            method: RankMethod::Steering,
        });
    }
    Ok(Ranking {
        scores: sort_and_rank(scored),
        warnings,
    })
}

/// Baseline: rank pool candidates by input-embedding similarity to the
/// reference instruction set, aggregated per the pool's configuration.
pub fn rank_by_input_embedding<F>(
    pool: &CandidatePool,
    embedding_lookup: F,
    reference_tokens: &[String],
    layer: usize,
) -> Result<Ranking>
where
    F: Fn(&str) -> Result<Vec<f64>>,
{
    if reference_tokens.is_empty() {
        return Err(Error::EmptyInput("reference tokens"));
    }
    let reference_embeds: Vec<Vec<f64>> = reference_tokens
        .iter()
        .map(|t| embedding_lookup(t))
        .collect::<Result<_>>()?;

    let mut scored = Vec::with_capacity(pool.entries.len());
    let mut warnings = Vec::new();
    'entries: for entry in &pool.entries {
        let embed = match embedding_lookup(&entry.token) {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("no embedding for {:?}: {e}; skipped", entry.token));
                continue;
            }
        };
        let mut sims = Vec::with_capacity(reference_embeds.len());
        for r in &reference_embeds {
            match cosine_similarity(&embed, r) {
                Ok(s) => sims.push(s),
                Err(Error::ZeroNorm) => {
                    warnings.push(format!(
                        "zero-norm embedding for {:?}; skipped",
                        entry.token
                    ));
                    continue 'entries;
                }
                Err(e) => return Err(e),
            }
        }
        let similarity = match pool.filter_config.baseline_aggregation {
            Aggregation::Max => sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
        };
        scored.push(CandidateScore {
            token: entry.token.clone(),
            layer,
            similarity,
            rank: 0,
            method: RankMethod::InputEmbedding,
        });
    }
    Ok(Ranking {
        scores: sort_and_rank(scored),
        warnings,
    })
}

/// Top-k tokens by rank, deduplicated by normalized form (the
/// highest-similarity representative survives). Returns all tokens with a
/// warning when fewer than k remain.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    pub tokens: Vec<String>,
    pub warning: Option<String>,
}

pub fn select_top_k(scores: &[CandidateScore], k: usize) -> Result<TopKSelection> {
    if k < 1 {
        return Err(Error::Config("top-k must be >= 1".into()));
    }
    let mut tokens = Vec::new();
    let mut seen_norms = BTreeSet::new();
    for score in scores {
        if !seen_norms.insert(normalize_token(&score.token)) {
            continue;
        }
        tokens.push(score.token.clone());
        if tokens.len() == k {
            break;
        }
    }
    let warning = (tokens.len() < k).then(|| {
        format!(
            "requested top-{k} but only {} distinct candidates remain",
            tokens.len()
        )
    });
    Ok(TopKSelection { tokens, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_vocab(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    fn exclusions(tokens: &[&str]) -> BTreeSet<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    fn pool_of(tokens: &[&str]) -> CandidatePool {
        build_candidate_pool(&to_vocab(tokens), &BTreeSet::new(), &PoolOptions::default()).unwrap()
    }

    fn mean(instruction: &str, layer: usize, values: Vec<f64>) -> InstructionMean {
        InstructionMean {
            instruction: instruction.to_string(),
            layer,
            values,
            n_samples: 1,
        }
    }

    #[test]
    fn pool_filters_and_exclusions() {
        let pool = build_candidate_pool(
            &to_vocab(&["Wait", "Await", "run3", "Verify"]),
            &exclusions(&["Wait"]),
            &PoolOptions::default(),
        )
        .unwrap();
        let tokens: Vec<&str> = pool.entries.iter().map(|e| e.token.as_str()).collect();
        assert_eq!(tokens, ["Await", "Verify"]);
    }

    #[test]
    fn pool_keeps_camel_case_alphabetic() {
        let pool = pool_of(&["ConfigureAwait", "ok2go"]);
        assert_eq!(pool.entries.len(), 1);
        assert_eq!(pool.entries[0].token, "ConfigureAwait");
    }

    #[test]
    fn pool_strips_one_boundary_marker() {
        let pool = pool_of(&["\u{0120}Verify", "\u{2581}Check", " Look"]);
        let tokens: Vec<&str> = pool.entries.iter().map(|e| e.token.as_str()).collect();
        assert_eq!(tokens, ["Verify", "Check", "Look"]);
    }

    #[test]
    fn pool_dedupes_by_stem() {
        let pool = pool_of(&["Checks", "checking", "Verify"]);
        let tokens: Vec<&str> = pool.entries.iter().map(|e| e.token.as_str()).collect();
        assert_eq!(tokens, ["Checks", "Verify"]);
    }

    #[test]
    fn pool_excludes_by_normalized_form() {
        let pool = build_candidate_pool(
            &to_vocab(&["waiting", "Verify"]),
            &exclusions(&["Wait"]),
            &PoolOptions::default(),
        )
        .unwrap();
        let tokens: Vec<&str> = pool.entries.iter().map(|e| e.token.as_str()).collect();
        assert_eq!(tokens, ["Verify"]);
    }

    #[test]
    fn pool_cap_and_empty_errors() {
        let options = PoolOptions {
            max_tokens: 2,
            ..PoolOptions::default()
        };
        let pool = build_candidate_pool(&to_vocab(&["aa", "bb", "cc"]), &BTreeSet::new(), &options)
            .unwrap();
        assert_eq!(pool.entries.len(), 2);

        let err = build_candidate_pool(
            &to_vocab(&["x1", "9z", "a"]),
            &BTreeSet::new(),
            &PoolOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyPool));
    }

    fn target(layer: usize, values: Vec<f64>) -> SteeringVector {
        SteeringVector {
            source_label: "0".into(),
            target_label: "2".into(),
            layer,
            values,
            metadata: crate::steering::VectorMetadata {
                model_id: "m".into(),
                n_samples: 1,
                source_instructions: vec![],
                target_instructions: vec![],
                created_at: None,
            },
        }
    }

    #[test]
    fn rank_self_alignment_and_orthogonality() {
        let pool = pool_of(&["selfsame", "orthogonal", "opposite"]);
        let source = [mean("Answer", 3, vec![1.0, 1.0])];
        let t = target(3, vec![1.0, 0.0]);
        let mut means = BTreeMap::new();
        // candidate vector = mean - (1,1)
        means.insert("selfsame".to_string(), mean("selfsame", 3, vec![2.0, 1.0])); // (1,0) -> cos 1
        means.insert(
            "orthogonal".to_string(),
            mean("orthogonal", 3, vec![1.0, 2.0]),
        ); // (0,1) -> cos 0
        means.insert("opposite".to_string(), mean("opposite", 3, vec![0.0, 1.0])); // (-1,0) -> cos -1
        let ranking = rank_candidates(&pool, &means, &source, &t).unwrap();
        assert!(ranking.warnings.is_empty());
        assert_eq!(ranking.scores[0].token, "selfsame");
        assert!((ranking.scores[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(ranking.scores[0].rank, 1);
        assert_eq!(ranking.scores[1].token, "orthogonal");
        assert!(ranking.scores[1].similarity.abs() < 1e-12);
        assert_eq!(ranking.scores[2].token, "opposite");
    }

    #[test]
    fn rank_skips_missing_means_with_warning() {
        let pool = pool_of(&["known", "unknown"]);
        let source = [mean("Answer", 0, vec![0.0, 0.0])];
        let t = target(0, vec![1.0, 0.0]);
        let mut means = BTreeMap::new();
        means.insert("known".to_string(), mean("known", 0, vec![1.0, 0.0]));
        let ranking = rank_candidates(&pool, &means, &source, &t).unwrap();
        assert_eq!(ranking.scores.len(), 1);
        assert_eq!(ranking.warnings.len(), 1);
        assert!(ranking.warnings[0].contains("unknown"));
    }

    #[test]
    fn ranks_are_a_permutation() {
        let tokens: Vec<String> = (0..20)
            .map(|i| format!("tok{}x{}", i, "q".repeat(i % 3)))
            .collect();
        let vocab: Vec<String> = tokens
            .iter()
            .map(|t| t.replace(char::is_numeric, "z"))
            .collect();
        let pool = build_candidate_pool(&vocab, &BTreeSet::new(), &PoolOptions::default()).unwrap();
        let source = [mean("Answer", 0, vec![0.0, 0.0])];
        let t = target(0, vec![1.0, 0.5]);
        let mut means = BTreeMap::new();
        let mut rng = crate::rng::SplitMix64::new(11);
        for e in &pool.entries {
            means.insert(
                e.token.clone(),
                mean(
                    &e.token,
                    0,
                    vec![rng.next_unit() - 0.5, rng.next_unit() - 0.5],
                ),
            );
        }
        let ranking = rank_candidates(&pool, &means, &source, &t).unwrap();
        let mut ranks: Vec<usize> = ranking.scores.iter().map(|s| s.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=ranking.scores.len()).collect::<Vec<_>>());
        for pair in ranking.scores.windows(2) {
            assert!(pair[0].similarity >= pair[1].similarity);
        }
    }

    #[test]
    fn input_embedding_baseline() {
        let pool = pool_of(&["same", "other"]);
        let refs = vec!["Wait".to_string()];
        let lookup = |token: &str| -> crate::Result<Vec<f64>> {
            Ok(match token {
                "Wait" => vec![1.0, 0.0],
                "same" => vec![2.0, 0.0],
                "other" => vec![0.0, 3.0],
                _ => vec![1.0, 1.0],
            })
        };
        let ranking = rank_by_input_embedding(&pool, lookup, &refs, 5).unwrap();
        assert_eq!(ranking.scores[0].token, "same");
        assert!((ranking.scores[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(ranking.scores[0].method, RankMethod::InputEmbedding);
        assert_eq!(ranking.scores[0].layer, 5);
    }

    #[test]
    fn input_embedding_ties_break_lexicographically() {
        let pool = pool_of(&["zeta", "alpha"]);
        let refs = vec!["Wait".to_string()];
        let lookup = |_: &str| -> crate::Result<Vec<f64>> { Ok(vec![1.0, 0.0]) };
        let ranking = rank_by_input_embedding(&pool, lookup, &refs, 0).unwrap();
        assert_eq!(ranking.scores[0].token, "alpha");
        assert_eq!(ranking.scores[1].token, "zeta");
    }

    #[test]
    fn max_aggregation_over_reference_set() {
        let options = PoolOptions {
            baseline_aggregation: Aggregation::Max,
            ..PoolOptions::default()
        };
        let pool = build_candidate_pool(&to_vocab(&["probe"]), &BTreeSet::new(), &options).unwrap();
        let refs = vec!["aa".to_string(), "bb".to_string()];
        let lookup = |token: &str| -> crate::Result<Vec<f64>> {
            Ok(match token {
                "aa" => vec![1.0, 0.0],
                "bb" => vec![0.0, 1.0],
                _ => vec![1.0, 0.0], // probe aligns with aa, orthogonal to bb
            })
        };
        let ranking = rank_by_input_embedding(&pool, lookup, &refs, 0).unwrap();
        assert!((ranking.scores[0].similarity - 1.0).abs() < 1e-12);
    }

    fn score(token: &str, similarity: f64, rank: usize) -> CandidateScore {
        CandidateScore {
            token: token.to_string(),
            layer: 0,
            similarity,
            rank,
            method: RankMethod::Steering,
        }
    }

    #[test]
    fn top_k_prefix_and_dedup() {
        let scores = vec![score("a", 0.9, 1), score("b", 0.8, 2), score("c", 0.7, 3)];
        let sel = select_top_k(&scores, 2).unwrap();
        assert_eq!(sel.tokens, ["a", "b"]);
        assert!(sel.warning.is_none());

        // first two share a stem: the later one is skipped
        let scores = vec![
            score("Check", 0.9, 1),
            score("Checks", 0.8, 2),
            score("Verify", 0.7, 3),
        ];
        let sel = select_top_k(&scores, 2).unwrap();
        assert_eq!(sel.tokens, ["Check", "Verify"]);
    }

    #[test]
    fn top_k_saturation_warns() {
        let scores = vec![score("a", 0.9, 1)];
        let sel = select_top_k(&scores, 5).unwrap();
        assert_eq!(sel.tokens, ["a"]);
        assert!(sel.warning.is_some());
        assert!(select_top_k(&scores, 0).is_err());
    }

    #[test]
    fn default_layer_formula() {
        assert_eq!(default_discovery_layer(36), 14);
        assert_eq!(default_discovery_layer(4), 1);
        assert_eq!(default_discovery_layer(5), 2);
    }
}
