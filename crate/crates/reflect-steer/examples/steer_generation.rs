//! Steer a single generation: compare a baseline continuation against the
//! same prompt with the 0->2 reflection direction added (enhancement) and
//! subtracted (inhibition) at the instruction's final token.
//!
//! Steering applies the raw vector (scale 1.0) by default. On the tiny
//! reference network the extracted directions are short, so this example
//! also sweeps the optional scale knob until the greedy continuation
//! visibly changes.
//!
//! Run: cargo run --example steer_generation

use std::path::Path;

use reflect_steer::backend::{Backend, InterventionSpec, ReferenceBackend};
use reflect_steer::corpus::{
    assemble_prompt, load_dataset, make_split, InstructionSets, ReflectionLevel, SeparatorPolicy,
};
use reflect_steer::steering::{instruction_mean, steering_vector, InstructionMean};

const LAYER: usize = 1;
const MAX_NEW_TOKENS: usize = 32;

fn main() -> reflect_steer::Result<()> {
    let backend = ReferenceBackend::new(0, 4, 16)?;
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/gsm8k_adv_tiny.jsonl");
    let dataset = load_dataset(&data)?;
    let split = make_split(&dataset.samples, 0.5, 7)?;
    let train: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| split.train_ids.contains(&s.id))
        .cloned()
        .collect();

    // Steering vector 0->2 at the chosen layer, from the training split.
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
    let source_means: Vec<InstructionMean> = sets
        .set(ReflectionLevel::NO_REFLECTION)
        .instructions
        .iter()
        .map(|i| mean_of(i))
        .collect::<reflect_steer::Result<_>>()?;
    let target_means: Vec<InstructionMean> = sets
        .set(ReflectionLevel::TRIGGERED)
        .instructions
        .iter()
        .map(|i| mean_of(i))
        .collect::<reflect_steer::Result<_>>()?;
    let direction = steering_vector(&source_means, &target_means, LAYER, "0", "2", "example")?;
    let norm: f64 = direction.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("reflection direction 0->2 at layer {LAYER}, norm {norm:.4}");

    // A held-out sample with the no-reflection instruction appended.
    let sample = dataset
        .samples
        .iter()
        .find(|s| split.test_ids.contains(&s.id))
        .expect("test split is non-empty");
    let prompt = assemble_prompt(&backend, sample, "Answer", SeparatorPolicy::SingleSpace)?;
    println!(
        "\nsample {} (ground truth {}), prompt tail: ...{}",
        sample.id,
        sample.ground_truth,
        &prompt.text[prompt.text.len().saturating_sub(48)..]
    );

    let baseline = backend.generate(&prompt.text, MAX_NEW_TOKENS, None)?;
    println!(
        "\nbaseline tokens: {:?} ...",
        &baseline.token_ids[..8.min(baseline.token_ids.len())]
    );

    for (label, sign) in [("enhance (+0->2)", 1.0), ("inhibit (-0->2)", -1.0)] {
        println!("\n{label}:");
        for scale in [1.0, 5.0, 25.0, 125.0] {
            let spec = InterventionSpec::new(
                LAYER,
                prompt.instruction_token_index,
                direction.values.clone(),
            )
            .with_scale(sign * scale);
            let steered = backend.generate(&prompt.text, MAX_NEW_TOKENS, Some(&spec))?;
            let changed = steered.token_ids != baseline.token_ids;
            let head = &steered.token_ids[..8.min(steered.token_ids.len())];
            println!("  scale {scale:>6.1}: changed={changed:<5}  tokens {head:?} ...");
            if changed {
                break;
            }
        }
    }
    Ok(())
}
