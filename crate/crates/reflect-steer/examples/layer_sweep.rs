//! Sweep an intervention across every layer: enhance the "Answer" condition
//! with the 0->2 direction and inhibit the "Wait" condition with its
//! reverse, reporting accuracy per layer next to the no-intervention
//! baseline.
//!
//! Run: cargo run --example layer_sweep

use std::collections::BTreeMap;
use std::path::Path;

use reflect_steer::backend::{Backend, ReferenceBackend};
use reflect_steer::corpus::{
    assemble_prompt, load_dataset, make_split, InstructionSets, ReflectionLevel, SeparatorPolicy,
};
use reflect_steer::harness::{run_layer_sweep, Direction, EvalOptions};
use reflect_steer::steering::{instruction_mean, steering_vector, InstructionMean, VectorStore};

fn main() -> reflect_steer::Result<()> {
    let backend = ReferenceBackend::new(0, 4, 16)?;
    let descriptor = backend.descriptor().clone();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/gsm8k_adv_tiny.jsonl");
    let dataset = load_dataset(&data)?;
    let split = make_split(&dataset.samples, 0.5, 7)?;
    let partition = |ids: &std::collections::BTreeSet<String>| -> Vec<_> {
        dataset
            .samples
            .iter()
            .filter(|s| ids.contains(&s.id))
            .cloned()
            .collect()
    };
    let train = partition(&split.train_ids);
    let test = partition(&split.test_ids);

    // Build a store holding the 0->2 vector at every layer.
    let sets = InstructionSets::defaults();
    let layers: Vec<usize> = (0..=descriptor.num_layers).collect();
    let mean_of = |instruction: &str, layer: usize| -> reflect_steer::Result<InstructionMean> {
        let mut records = Vec::new();
        for sample in &train {
            let prompt =
                assemble_prompt(&backend, sample, instruction, SeparatorPolicy::SingleSpace)?;
            records.push(
                backend
                    .capture_activations(&prompt.text, &[layer], prompt.instruction_token_index)?
                    .remove(0)
                    .with_labels(&sample.id, instruction),
            );
        }
        instruction_mean(&records)
    };
    let mut store = VectorStore::new(
        &descriptor.model_id,
        descriptor.hidden_dim,
        descriptor.num_layers,
    );
    for &layer in &layers {
        let level_means = |level: ReflectionLevel| -> reflect_steer::Result<Vec<InstructionMean>> {
            sets.set(level)
                .instructions
                .iter()
                .map(|i| mean_of(i, layer))
                .collect()
        };
        store.steering.push(steering_vector(
            &level_means(ReflectionLevel::NO_REFLECTION)?,
            &level_means(ReflectionLevel::TRIGGERED)?,
            layer,
            "0",
            "2",
            &descriptor.model_id,
        )?);
    }

    let opts = EvalOptions {
        max_new_tokens: 24,
        dataset: "gsm8k_adv_tiny".into(),
        workers: 2,
        ..EvalOptions::default()
    };
    let sweeps = [("Answer", Direction::Enhance), ("Wait", Direction::Inhibit)];
    for (instruction, direction) in sweeps {
        let sweep = run_layer_sweep(
            &backend,
            &test,
            ("0", "2"),
            instruction,
            direction,
            &layers,
            &store,
            &BTreeMap::new(),
            &opts,
        )?;
        println!(
            "\n{} {:?} via 0->2 (baseline without intervention: {:.3})",
            direction, instruction, sweep.baseline_no_intervention
        );
        println!("{:>6} {:>10}", "layer", "accuracy");
        for (layer, accuracy) in sweep.layers.iter().zip(&sweep.accuracies) {
            println!("{layer:>6} {accuracy:>10.3}");
        }
    }
    Ok(())
}
