//! Extract reflection steering vectors from the bundled adversarial dataset
//! on the deterministic reference backend, and persist them as a vector
//! store.
//!
//! Walks the core mechanics end to end: load -> split -> assemble prompts ->
//! capture activations at the instruction's final token -> per-instruction
//! means -> level-to-level steering vectors -> save.
//!
//! Run: cargo run --example extract_vectors

use std::collections::BTreeMap;
use std::path::Path;

use reflect_steer::backend::{Backend, ReferenceBackend};
use reflect_steer::corpus::{
    assemble_prompt, load_dataset, make_split, InstructionSets, ReflectionLevel, SeparatorPolicy,
};
use reflect_steer::steering::{
    instruction_mean, save_store, steering_vector, InstructionMean, VectorStore,
};

fn main() -> reflect_steer::Result<()> {
    let backend = ReferenceBackend::new(0, 4, 16)?;
    let descriptor = backend.descriptor().clone();
    println!(
        "backend {} ({} layers, hidden dim {}, vocab {})",
        descriptor.model_id, descriptor.num_layers, descriptor.hidden_dim, descriptor.vocab_size
    );

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/gsm8k_adv_tiny.jsonl");
    let dataset = load_dataset(&data)?;
    let split = make_split(&dataset.samples, 0.5, 7)?;
    let train: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| split.train_ids.contains(&s.id))
        .cloned()
        .collect();
    println!(
        "{} samples loaded, {} in the training split",
        dataset.samples.len(),
        train.len()
    );

    let sets = InstructionSets::defaults();
    let layers: Vec<usize> = (0..=descriptor.num_layers).collect();

    // Mean activation per (instruction, layer) at the instruction's final
    // token, averaged over the training samples.
    let mut means: BTreeMap<(String, usize), InstructionMean> = BTreeMap::new();
    for set in sets.iter() {
        for instruction in &set.instructions {
            let mut records_by_layer: BTreeMap<usize, Vec<_>> = BTreeMap::new();
            for sample in &train {
                let prompt =
                    assemble_prompt(&backend, sample, instruction, SeparatorPolicy::SingleSpace)?;
                for record in backend.capture_activations(
                    &prompt.text,
                    &layers,
                    prompt.instruction_token_index,
                )? {
                    records_by_layer
                        .entry(record.layer)
                        .or_default()
                        .push(record.with_labels(&sample.id, instruction));
                }
            }
            for (layer, records) in records_by_layer {
                means.insert((instruction.clone(), layer), instruction_mean(&records)?);
            }
        }
    }
    println!("computed {} instruction means", means.len());

    let mut store = VectorStore::new(
        &descriptor.model_id,
        descriptor.hidden_dim,
        descriptor.num_layers,
    );
    store.means = means.values().cloned().collect();

    let level_means = |level: ReflectionLevel, layer: usize| -> Vec<InstructionMean> {
        sets.set(level)
            .instructions
            .iter()
            .map(|i| means[&(i.clone(), layer)].clone())
            .collect()
    };
    println!("\nsteering vector norms by layer:");
    println!(
        "{:>6} {:>12} {:>12} {:>12}",
        "layer", "0->2", "1->2", "0->1"
    );
    for &layer in &layers {
        let mut norms = Vec::new();
        for (a, b) in [(0u8, 2u8), (1, 2), (0, 1)] {
            let vector = steering_vector(
                &level_means(ReflectionLevel::new(a)?, layer),
                &level_means(ReflectionLevel::new(b)?, layer),
                layer,
                &a.to_string(),
                &b.to_string(),
                &descriptor.model_id,
            )?;
            let norm: f64 = vector.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(norm);
            store.steering.push(vector);
        }
        println!(
            "{layer:>6} {:>12.6} {:>12.6} {:>12.6}",
            norms[0], norms[1], norms[2]
        );
    }

    let out = std::env::temp_dir().join("reflect_steer_example_store.json");
    save_store(&store, &out)?;
    println!(
        "\nsaved {} means and {} steering vectors to {}",
        store.means.len(),
        store.steering.len(),
        out.display()
    );
    Ok(())
}
