//! Run the three-level accuracy suite on the held-out split: every
//! instruction from the no-reflection, intrinsic, and triggered sets is
//! evaluated as a plain condition and averaged per level.
//!
//! (On the random reference network the accuracies are near zero; the point
//! here is the protocol and the aggregation, which carry over unchanged to a
//! real-model adapter.)
//!
//! Run: cargo run --example three_level_eval

use std::path::Path;

use reflect_steer::backend::ReferenceBackend;
use reflect_steer::corpus::{load_dataset, make_split, InstructionSets};
use reflect_steer::harness::{run_three_level_suite, EvalOptions};

fn main() -> reflect_steer::Result<()> {
    let backend = ReferenceBackend::new(0, 4, 16)?;
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/gsm8k_adv_tiny.jsonl");
    let dataset = load_dataset(&data)?;
    let split = make_split(&dataset.samples, 0.5, 7)?;
    let test: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| split.test_ids.contains(&s.id))
        .cloned()
        .collect();
    println!("evaluating {} held-out samples", test.len());

    let sets = InstructionSets::defaults();
    let opts = EvalOptions {
        max_new_tokens: 24,
        dataset: "gsm8k_adv_tiny".into(),
        workers: 2,
        ..EvalOptions::default()
    };
    let report = run_three_level_suite(&backend, &test, &sets, &opts)?;

    println!("\n{:<16} {:>6} {:>10}", "instruction", "n", "accuracy");
    for result in &report.per_instruction {
        println!(
            "{:<16} {:>6} {:>10.3}",
            result.condition.instruction, result.n, result.accuracy
        );
    }
    println!("\nper-level averages:");
    for (level, average) in &report.level_averages {
        let name = match level {
            0 => "no reflection",
            1 => "intrinsic",
            _ => "triggered",
        };
        println!("  level {level} ({name:<13}): {average:.3}");
    }
    Ok(())
}
