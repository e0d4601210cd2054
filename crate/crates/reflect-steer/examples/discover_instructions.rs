//! Discover new reflection-trigger candidates: filter a word list into a
//! normalized candidate pool, compute each candidate's steering vector
//! relative to the no-reflection condition, and rank candidates by cosine
//! alignment with the 0->2 reflection direction. The input-embedding
//! baseline is ranked alongside for comparison.
//!
//! Run: cargo run --example discover_instructions

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use reflect_steer::backend::{Backend, ReferenceBackend};
use reflect_steer::corpus::{
    assemble_prompt, load_dataset, make_split, InstructionSets, ReflectionLevel, SeparatorPolicy,
};
use reflect_steer::discovery::{
    build_candidate_pool, rank_by_input_embedding, rank_candidates, select_top_k, PoolOptions,
};
use reflect_steer::steering::{instruction_mean, steering_vector, InstructionMean};

const LAYER: usize = 1; // floor(2L/5) for L = 4
const POOL_CAP: usize = 48;
const TOP_K: usize = 5;

fn main() -> reflect_steer::Result<()> {
    let backend = ReferenceBackend::new(0, 4, 16)?;
    let data_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let dataset = load_dataset(&data_dir.join("gsm8k_adv_tiny.jsonl"))?;
    let split = make_split(&dataset.samples, 0.5, 7)?;
    let train: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| split.train_ids.contains(&s.id))
        .cloned()
        .collect();

    let sets = InstructionSets::defaults();
    let mean_of = |instruction: &str| -> reflect_steer::Result<InstructionMean> {
        let mut records = Vec::new();
        for sample in &train {
            let prompt =
                assemble_prompt(&backend, sample, instruction, SeparatorPolicy::SingleSpace)?;
            records.push(
                backend
                    .capture_activations(&prompt.text, &[LAYER], prompt.instruction_token_index)?
                    .remove(0)
                    .with_labels(&sample.id, instruction),
            );
        }
        instruction_mean(&records)
    };

    let level_means = |level: ReflectionLevel| -> reflect_steer::Result<Vec<InstructionMean>> {
        sets.set(level)
            .instructions
            .iter()
            .map(|i| mean_of(i))
            .collect()
    };
    let source_means = level_means(ReflectionLevel::NO_REFLECTION)?;
    let target_means = level_means(ReflectionLevel::TRIGGERED)?;
    let target = steering_vector(&source_means, &target_means, LAYER, "0", "2", "example")?;

    let words =
        std::fs::read_to_string(data_dir.join("candidate_tokens.txt")).expect("bundled word list");
    let vocab: Vec<String> = words.lines().map(|l| l.trim().to_string()).collect();
    let exclusions: BTreeSet<String> = sets
        .all_instructions()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pool = build_candidate_pool(
        &vocab,
        &exclusions,
        &PoolOptions {
            max_tokens: POOL_CAP,
            ..PoolOptions::default()
        },
    )?;
    println!(
        "candidate pool: {} tokens (cap {POOL_CAP})",
        pool.entries.len()
    );

    let mut candidate_means: BTreeMap<String, InstructionMean> = BTreeMap::new();
    for entry in &pool.entries {
        candidate_means.insert(entry.token.clone(), mean_of(&entry.token)?);
    }

    let steering_ranking = rank_candidates(&pool, &candidate_means, &source_means, &target)?;
    let embed_ranking = rank_by_input_embedding(
        &pool,
        |token| backend.input_embedding(token),
        &sets.set(ReflectionLevel::TRIGGERED).instructions,
        LAYER,
    )?;

    for (title, ranking) in [
        ("steering-vector alignment", &steering_ranking),
        ("input-embedding baseline", &embed_ranking),
    ] {
        println!("\ntop 10 by {title} (layer {LAYER}):");
        println!("{:>4}  {:<16} {:>10}", "rank", "token", "cosine");
        for score in ranking.scores.iter().take(10) {
            println!(
                "{:>4}  {:<16} {:>10.4}",
                score.rank, score.token, score.similarity
            );
        }
    }

    let selected = select_top_k(&steering_ranking.scores, TOP_K)?;
    println!(
        "\ntop-{TOP_K} after stem deduplication: {}",
        selected.tokens.join(", ")
    );
    if let Some(warning) = selected.warning {
        println!("note: {warning}");
    }
    Ok(())
}
