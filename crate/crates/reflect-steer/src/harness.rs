//! Experiment harness: evaluate instruction conditions (with or without an
//! activation intervention), run the three-level accuracy suite, sweep an
//! intervention across layers, and aggregate everything into plot-ready CSVs
//! plus a per-sample response archive.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, InterventionSpec};
use crate::corpus::{
    assemble_prompt, score_response, AdversarialSample, InstructionSets, ReflectionLevel,
    ScoreMode, SeparatorPolicy,
};
use crate::error::{Error, Result};
use crate::steering::VectorStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Enhance,
    Inhibit,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Enhance => write!(f, "enhance"),
            Direction::Inhibit => write!(f, "inhibit"),
        }
    }
}

/// Intervention half of a condition: which steering pair, at which layer,
/// pushed forward or reversed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionChoice {
    pub source_label: String,
    pub target_label: String,
    pub layer: usize,
    pub direction: Direction,
}

/// One evaluation condition: a base instruction appended to every prompt,
/// optionally combined with an activation intervention at the instruction's
/// final token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub instruction: String,
    pub intervention: Option<InterventionChoice>,
}

impl Condition {
    pub fn plain(instruction: &str) -> Self {
        Self {
            instruction: instruction.to_string(),
            intervention: None,
        }
    }

    pub fn intervene(
        instruction: &str,
        source_label: &str,
        target_label: &str,
        layer: usize,
        direction: Direction,
    ) -> Self {
        Self {
            instruction: instruction.to_string(),
            intervention: Some(InterventionChoice {
                source_label: source_label.to_string(),
                target_label: target_label.to_string(),
                layer,
                direction,
            }),
        }
    }

    /// Stable label used in reports and archive paths.
    pub fn label(&self) -> String {
        match &self.intervention {
            None => format!("plain:{}", self.instruction),
            Some(iv) => format!(
                "intervene:{}:{}to{}:{}:L{}",
                self.instruction, iv.source_label, iv.target_label, iv.direction, iv.layer
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub correct: bool,
    pub response: String,
}

/// Accuracy of one condition over a sample set, with per-sample responses
/// kept so failures stay inspectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub condition: Condition,
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub per_sample: Vec<SampleOutcome>,
}

/// Shared evaluation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_new_tokens: usize,
    pub separator: SeparatorPolicy,
    pub score_mode: ScoreMode,
    pub dataset: String,
    /// Worker threads for per-sample fan-out; results are identical for any
    /// value (order-fixed reduction over sample ids).
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 256,
            separator: SeparatorPolicy::SingleSpace,
            score_mode: ScoreMode::NumericContains,
            dataset: String::new(),
            workers: 1,
        }
    }
}

/// Resolve the intervention delta for a (pair, direction) from the store:
/// enhance applies the stored source->target vector, inhibit applies its
/// exact negation (the reverse-direction identity).
pub fn resolve_delta(
    store: &VectorStore,
    source_label: &str,
    target_label: &str,
    layer: usize,
    direction: Direction,
) -> Result<Vec<f64>> {
    let vector = store.steering_for(source_label, target_label, layer)?;
    Ok(match direction {
        Direction::Enhance => vector.values.clone(),
        Direction::Inhibit => vector.values.iter().map(|x| -x).collect(),
    })
}

fn condition_delta(
    condition: &Condition,
    store: Option<&VectorStore>,
) -> Result<Option<(Vec<f64>, usize)>> {
    match &condition.intervention {
        None => Ok(None),
        Some(iv) => {
            let store = store.ok_or_else(|| {
                Error::Config("intervention condition requires a vector store".into())
            })?;
            let delta = resolve_delta(
                store,
                &iv.source_label,
                &iv.target_label,
                iv.layer,
                iv.direction,
            )?;
            Ok(Some((delta, iv.layer)))
        }
    }
}

fn eval_one<B: Backend + ?Sized>(
    backend: &B,
    sample: &AdversarialSample,
    condition: &Condition,
    delta: Option<(&[f64], usize)>,
    opts: &EvalOptions,
) -> Result<SampleOutcome> {
    let prompt = assemble_prompt(backend, sample, &condition.instruction, opts.separator)?;
    let spec = delta.map(|(values, layer)| {
        InterventionSpec::new(layer, prompt.instruction_token_index, values.to_vec())
    });
    let generation = backend.generate(&prompt.text, opts.max_new_tokens, spec.as_ref())?;
    let correct = score_response(&generation.text, &sample.ground_truth, opts.score_mode)?;
    Ok(SampleOutcome {
        sample_id: sample.id.clone(),
        correct,
        response: generation.text,
    })
}

fn finish_result(
    condition: &Condition,
    dataset: &str,
    per_sample: Vec<SampleOutcome>,
) -> EvalResult {
    let n = per_sample.len();
    let correct = per_sample.iter().filter(|s| s.correct).count();
    EvalResult {
        condition: condition.clone(),
        dataset: dataset.to_string(),
        n,
        accuracy: if n == 0 {
            0.0
        } else {
            correct as f64 / n as f64
        },
        per_sample,
    }
}

/// Evaluate one condition over a sample set. Samples are processed in
/// sample-id order; accuracy is the exact fraction of correct outcomes.
pub fn evaluate_condition<B: Backend + ?Sized>(
    backend: &B,
    samples: &[AdversarialSample],
    condition: &Condition,
    store: Option<&VectorStore>,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let delta = condition_delta(condition, store)?;
    let mut ordered: Vec<&AdversarialSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let per_sample: Vec<SampleOutcome> = ordered
        .iter()
        .map(|s| {
            eval_one(
                backend,
                s,
                condition,
                delta.as_ref().map(|(d, l)| (d.as_slice(), *l)),
                opts,
            )
        })
        .collect::<Result<_>>()?;

    Ok(finish_result(condition, &opts.dataset, per_sample))
}

/// Same contract as [`evaluate_condition`], fanning samples out over
/// `opts.workers` independent clones of the backend. The reduction is fixed
/// in sample-id order, so results are identical for any worker count.
pub fn evaluate_condition_parallel<B>(
    backend: &B,
    samples: &[AdversarialSample],
    condition: &Condition,
    store: Option<&VectorStore>,
    opts: &EvalOptions,
) -> Result<EvalResult>
where
    B: Backend + Clone + Sync,
{
    if opts.workers <= 1 || samples.len() <= 1 {
        return evaluate_condition(backend, samples, condition, store, opts);
    }
    let delta = condition_delta(condition, store)?;
    let mut ordered: Vec<&AdversarialSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let workers = opts.workers.min(ordered.len());
    let mut slots: Vec<Option<Result<SampleOutcome>>> = Vec::new();
    slots.resize_with(ordered.len(), || None);

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let worker_backend = backend.clone();
            let ordered = &ordered;
            let delta = &delta;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut idx = w;
                while idx < ordered.len() {
                    let res = eval_one(
                        &worker_backend,
                        ordered[idx],
                        condition,
                        delta.as_ref().map(|(d, l)| (d.as_slice(), *l)),
                        opts,
                    );
                    out.push((idx, res));
                    idx += workers;
                }
                out
            }));
        }
        for handle in handles {
            for (idx, res) in handle.join().expect("worker panicked") {
                slots[idx] = Some(res);
            }
        }
    });

    let per_sample: Vec<SampleOutcome> = slots
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect::<Result<_>>()?;
    Ok(finish_result(condition, &opts.dataset, per_sample))
}

/// Three-level suite: every instruction evaluated as a plain condition, plus
/// unweighted per-level averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelReport {
    pub per_instruction: Vec<EvalResult>,
    pub level_averages: BTreeMap<u8, f64>,
}

pub fn run_three_level_suite<B>(
    backend: &B,
    samples: &[AdversarialSample],
    sets: &InstructionSets,
    opts: &EvalOptions,
) -> Result<ThreeLevelReport>
where
    B: Backend + Clone + Sync,
{
    let mut per_instruction = Vec::new();
    let mut level_averages = BTreeMap::new();
    for level in [
        ReflectionLevel::NO_REFLECTION,
        ReflectionLevel::INTRINSIC,
        ReflectionLevel::TRIGGERED,
    ] {
        let set = sets.set(level);
        let mut acc_sum = 0.0;
        for instruction in &set.instructions {
            let result = evaluate_condition_parallel(
                backend,
                samples,
                &Condition::plain(instruction),
                None,
                opts,
            )?;
            acc_sum += result.accuracy;
            per_instruction.push(result);
        }
        level_averages.insert(level.value(), acc_sum / set.instructions.len() as f64);
    }
    Ok(ThreeLevelReport {
        per_instruction,
        level_averages,
    })
}

/// One intervention swept across layers, with the no-intervention baseline
/// and (when available) per-level plain averages for context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub base_instruction: String,
    pub source_label: String,
    pub target_label: String,
    pub direction: Direction,
    pub layers: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub baseline_no_intervention: f64,
    pub level_averages: BTreeMap<u8, f64>,
    pub per_layer: Vec<EvalResult>,
    pub baseline_eval: EvalResult,
}

impl SweepResult {
    /// Stable name used for the sweep CSV file.
    pub fn name(&self) -> String {
        format!(
            "{}_{}to{}_{}",
            self.direction, self.source_label, self.target_label, self.base_instruction
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_layer_sweep<B>(
    backend: &B,
    samples: &[AdversarialSample],
    pair: (&str, &str),
    base_instruction: &str,
    direction: Direction,
    layers: &[usize],
    store: &VectorStore,
    level_averages: &BTreeMap<u8, f64>,
    opts: &EvalOptions,
) -> Result<SweepResult>
where
    B: Backend + Clone + Sync,
{
    if layers.is_empty() {
        return Err(Error::EmptyInput("sweep layers"));
    }
    // Fail fast when any requested layer lacks its vector.
    for &layer in layers {
        store.steering_for(pair.0, pair.1, layer)?;
    }
    let baseline_eval = evaluate_condition_parallel(
        backend,
        samples,
        &Condition::plain(base_instruction),
        None,
        opts,
    )?;
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut accuracies = Vec::with_capacity(layers.len());
    for &layer in layers {
        let condition = Condition::intervene(base_instruction, pair.0, pair.1, layer, direction);
        let result = evaluate_condition_parallel(backend, samples, &condition, Some(store), opts)?;
        accuracies.push(result.accuracy);
        per_layer.push(result);
    }
    Ok(SweepResult {
        base_instruction: base_instruction.to_string(),
        source_label: pair.0.to_string(),
        target_label: pair.1.to_string(),
        direction,
        layers: layers.to_vec(),
        accuracies,
        baseline_no_intervention: baseline_eval.accuracy,
        level_averages: level_averages.clone(),
        per_layer,
        baseline_eval,
    })
}

/// An evaluation grouped under a label (e.g. the discovery method that
/// selected the instruction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEval {
    pub label: String,
    pub result: EvalResult,
}

/// Everything one evaluation run produced, in the shape the report writer
/// (and `results.json`) consumes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunResults {
    pub three_level: Option<ThreeLevelReport>,
    /// Extra plain-condition evaluations (e.g. discovered instructions).
    pub extra_evals: Vec<LabeledEval>,
    /// Per-label average accuracy over the extra evaluations.
    pub extra_averages: BTreeMap<String, f64>,
    pub sweeps: Vec<SweepResult>,
}

impl RunResults {
    pub fn is_empty(&self) -> bool {
        self.three_level.is_none() && self.extra_evals.is_empty() && self.sweeps.is_empty()
    }
}

/// Filesystem-safe slug: alphanumerics and '_' pass through, every other
/// byte becomes '-' plus two hex digits (collision-free and reversible).
pub fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for b in text.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' {
            out.push(b as char);
        } else {
            out.push('-');
            out.push_str(&format!("{b:02x}"));
        }
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_row(w: &mut csv::Writer<fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))
}

fn eval_row(result: &EvalResult) -> Vec<String> {
    let (layer, direction) = match &result.condition.intervention {
        Some(iv) => (iv.layer.to_string(), iv.direction.to_string()),
        None => (String::new(), String::new()),
    };
    vec![
        result.condition.label(),
        result.condition.instruction.clone(),
        layer,
        direction,
        result.n.to_string(),
        result.accuracy.to_string(),
    ]
}

/// Write summary.csv, levels.csv, one sweep_<name>.csv per sweep, and the
/// response archive (one text file per condition and sample). Re-running
/// over identical inputs produces byte-identical files.
pub fn aggregate_report(results: &RunResults, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::EmptyInput("results"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();

    let all_evals: Vec<&EvalResult> = results
        .three_level
        .iter()
        .flat_map(|t| t.per_instruction.iter())
        .chain(results.extra_evals.iter().map(|e| &e.result))
        .chain(
            results
                .sweeps
                .iter()
                .flat_map(|s| std::iter::once(&s.baseline_eval).chain(s.per_layer.iter())),
        )
        .collect();

    let summary_path = out_dir.join("summary.csv");
    {
        let mut w = csv_writer(&summary_path)?;
        write_row(
            &mut w,
            &summary_path,
            &[
                "condition",
                "instruction",
                "layer",
                "direction",
                "n",
                "accuracy",
            ]
            .map(String::from),
        )?;
        for result in &all_evals {
            write_row(&mut w, &summary_path, &eval_row(result))?;
        }
        w.flush()
            .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    }
    written.push(summary_path);

    if let Some(three_level) = &results.three_level {
        let levels_path = out_dir.join("levels.csv");
        let mut w = csv_writer(&levels_path)?;
        write_row(
            &mut w,
            &levels_path,
            &["level", "average_accuracy"].map(String::from),
        )?;
        for (level, avg) in &three_level.level_averages {
            write_row(&mut w, &levels_path, &[level.to_string(), avg.to_string()])?;
        }
        w.flush()
            .map_err(|e| Error::io(levels_path.display().to_string(), e))?;
        written.push(levels_path);
    }

    for sweep in &results.sweeps {
        let path = out_dir.join(format!("sweep_{}.csv", slug(&sweep.name())));
        let mut w = csv_writer(&path)?;
        write_row(
            &mut w,
            &path,
            &[
                "layer",
                "accuracy",
                "baseline_no_intervention",
                "avg_I0",
                "avg_I1",
                "avg_I2",
            ]
            .map(String::from),
        )?;
        let avg = |level: u8| {
            sweep
                .level_averages
                .get(&level)
                .map(|a| a.to_string())
                .unwrap_or_default()
        };
        for (layer, accuracy) in sweep.layers.iter().zip(&sweep.accuracies) {
            write_row(
                &mut w,
                &path,
                &[
                    layer.to_string(),
                    accuracy.to_string(),
                    sweep.baseline_no_intervention.to_string(),
                    avg(0),
                    avg(1),
                    avg(2),
                ],
            )?;
        }
        w.flush()
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }

    // Response archive: responses/<condition>/<sample>.txt
    let responses_dir = out_dir.join("responses");
    for result in &all_evals {
        let dir = responses_dir.join(slug(&result.condition.label()));
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for outcome in &result.per_sample {
            let path = dir.join(format!("{}.txt", slug(&outcome.sample_id)));
            fs::write(&path, &outcome.response)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);
        }
    }

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ReferenceBackend;
    use crate::steering::{SteeringVector, VectorMetadata};

    fn sample(id: &str, cot: &str, truth: &str) -> AdversarialSample {
        AdversarialSample {
            id: id.to_string(),
            question: "What is the answer?".to_string(),
            flawed_cot: cot.to_string(),
            ground_truth: truth.to_string(),
            source: "test".to_string(),
        }
    }

    fn samples() -> Vec<AdversarialSample> {
        vec![
            sample("s1", "The value 7 is wrong.", "7"),
            sample("s2", "Take 12 and stop.", "12"),
            sample("s3", "It is 900.", "900"),
        ]
    }

    fn backend() -> ReferenceBackend {
        ReferenceBackend::new(0, 3, 8).unwrap()
    }

    fn opts() -> EvalOptions {
        EvalOptions {
            max_new_tokens: 8,
            dataset: "test".to_string(),
            ..EvalOptions::default()
        }
    }

    fn store_with_vector(values: Vec<f64>, layer: usize) -> VectorStore {
        let mut store = VectorStore::new("reference-seed0-L3-d8", 8, 3);
        store.steering.push(SteeringVector {
            source_label: "0".into(),
            target_label: "2".into(),
            layer,
            values,
            metadata: VectorMetadata {
                model_id: store.model_id.clone(),
                n_samples: 1,
                source_instructions: vec!["Answer".into()],
                target_instructions: vec!["Wait".into()],
                created_at: None,
            },
        });
        store
    }

    #[test]
    fn accuracy_is_exact_fraction() {
        let backend = backend();
        let result = evaluate_condition(
            &backend,
            &samples(),
            &Condition::plain("Wait"),
            None,
            &opts(),
        )
        .unwrap();
        assert_eq!(result.n, 3);
        let correct = result.per_sample.iter().filter(|s| s.correct).count();
        assert_eq!(result.accuracy, correct as f64 / 3.0);
    }

    #[test]
    fn zero_delta_matches_plain_sample_for_sample() {
        let backend = backend();
        let store = store_with_vector(vec![0.0; 8], 1);
        let plain = evaluate_condition(
            &backend,
            &samples(),
            &Condition::plain("Wait"),
            None,
            &opts(),
        )
        .unwrap();
        let condition = Condition::intervene("Wait", "0", "2", 1, Direction::Enhance);
        let steered =
            evaluate_condition(&backend, &samples(), &condition, Some(&store), &opts()).unwrap();
        for (a, b) in plain.per_sample.iter().zip(&steered.per_sample) {
            assert_eq!(a.response, b.response);
            assert_eq!(a.correct, b.correct);
        }
        assert_eq!(plain.accuracy, steered.accuracy);
    }

    #[test]
    fn inhibit_delta_is_exact_negation_of_enhance() {
        let store = store_with_vector(vec![0.5, -1.25, 3.0, 0.0, -0.5, 2.0, 1.0, -2.0], 2);
        let enhance = resolve_delta(&store, "0", "2", 2, Direction::Enhance).unwrap();
        let inhibit = resolve_delta(&store, "0", "2", 2, Direction::Inhibit).unwrap();
        for (e, i) in enhance.iter().zip(&inhibit) {
            assert_eq!(*i, -*e);
        }
    }

    #[test]
    fn missing_vector_names_pair_and_layer() {
        let backend = backend();
        let store = store_with_vector(vec![0.0; 8], 1);
        let condition = Condition::intervene("Wait", "1", "2", 0, Direction::Enhance);
        let err = evaluate_condition(&backend, &samples(), &condition, Some(&store), &opts())
            .unwrap_err();
        assert!(matches!(err, Error::MissingVector { .. }));
    }

    #[test]
    fn condition_isolation_order_free() {
        let backend = backend();
        let conditions = [Condition::plain("Wait"), Condition::plain("Answer")];
        let forward: Vec<EvalResult> = conditions
            .iter()
            .map(|c| evaluate_condition(&backend, &samples(), c, None, &opts()).unwrap())
            .collect();
        let backward: Vec<EvalResult> = conditions
            .iter()
            .rev()
            .map(|c| evaluate_condition(&backend, &samples(), c, None, &opts()).unwrap())
            .collect();
        assert_eq!(forward[0], backward[1]);
        assert_eq!(forward[1], backward[0]);
    }

    #[test]
    fn parallel_matches_sequential() {
        let backend = backend();
        let sequential = evaluate_condition(
            &backend,
            &samples(),
            &Condition::plain("Check"),
            None,
            &opts(),
        )
        .unwrap();
        for workers in [2, 3, 8] {
            let mut par_opts = opts();
            par_opts.workers = workers;
            let parallel = evaluate_condition_parallel(
                &backend,
                &samples(),
                &Condition::plain("Check"),
                None,
                &par_opts,
            )
            .unwrap();
            assert_eq!(parallel, sequential, "workers={workers}");
        }
    }

    #[test]
    fn three_level_averages_are_means() {
        let backend = backend();
        let sets = InstructionSets::defaults();
        let report = run_three_level_suite(&backend, &samples(), &sets, &opts()).unwrap();
        assert_eq!(report.per_instruction.len(), 9);
        for level in 0..=2u8 {
            let level_set = sets.set(ReflectionLevel::new(level).unwrap());
            let sum: f64 = report
                .per_instruction
                .iter()
                .filter(|r| level_set.instructions.contains(&r.condition.instruction))
                .map(|r| r.accuracy)
                .sum();
            let expected = sum / level_set.instructions.len() as f64;
            assert_eq!(report.level_averages[&level], expected);
        }
    }

    #[test]
    fn sweep_shapes_and_zero_vector_flatness() {
        let backend = backend();
        let mut store = store_with_vector(vec![0.0; 8], 0);
        for layer in 1..=3 {
            let mut v = store.steering[0].clone();
            v.layer = layer;
            store.steering.push(v);
        }
        let averages = BTreeMap::from([(0u8, 0.1), (1u8, 0.2), (2u8, 0.3)]);
        let sweep = run_layer_sweep(
            &backend,
            &samples(),
            ("0", "2"),
            "Wait",
            Direction::Enhance,
            &[0, 1, 2, 3],
            &store,
            &averages,
            &opts(),
        )
        .unwrap();
        assert_eq!(sweep.layers.len(), sweep.accuracies.len());
        // all-zero vectors: flat curve equal to the no-intervention baseline
        for acc in &sweep.accuracies {
            assert_eq!(*acc, sweep.baseline_no_intervention);
        }
    }

    #[test]
    fn sweep_fails_fast_on_missing_layer() {
        let backend = backend();
        let store = store_with_vector(vec![0.0; 8], 0);
        let err = run_layer_sweep(
            &backend,
            &samples(),
            ("0", "2"),
            "Wait",
            Direction::Enhance,
            &[0, 1],
            &store,
            &BTreeMap::new(),
            &opts(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingVector { layer: 1, .. }));
    }

    #[test]
    fn report_files_and_idempotence() {
        let backend = backend();
        let sets = InstructionSets::defaults();
        let three_level = run_three_level_suite(&backend, &samples(), &sets, &opts()).unwrap();
        let results = RunResults {
            three_level: Some(three_level),
            ..RunResults::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let written = aggregate_report(&results, dir.path()).unwrap();
        assert!(written.iter().any(|p| p.ends_with("summary.csv")));
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 10); // header + 9 conditions
        let levels = fs::read_to_string(dir.path().join("levels.csv")).unwrap();
        assert_eq!(levels.lines().count(), 4);

        // archive exists per (condition, sample)
        let archive = dir
            .path()
            .join("responses")
            .join(slug("plain:Wait"))
            .join("s1.txt");
        assert!(archive.exists());

        // levels.csv averages agree with accuracies recomputed from the
        // emitted per-condition rows.
        let sets = InstructionSets::defaults();
        let mut by_instruction: BTreeMap<String, f64> = BTreeMap::new();
        for line in summary.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            by_instruction.insert(fields[1].to_string(), fields[5].parse().unwrap());
        }
        for line in levels.lines().skip(1) {
            let (level, avg) = line.split_once(',').unwrap();
            let level: u8 = level.parse().unwrap();
            let set = sets.set(ReflectionLevel::new(level).unwrap());
            let expected: f64 = set
                .instructions
                .iter()
                .map(|i| by_instruction[i])
                .sum::<f64>()
                / set.instructions.len() as f64;
            assert_eq!(avg.parse::<f64>().unwrap(), expected);
        }

        // byte-identical rerun
        let before: Vec<(PathBuf, Vec<u8>)> = written
            .iter()
            .map(|p| (p.clone(), fs::read(p).unwrap()))
            .collect();
        aggregate_report(&results, dir.path()).unwrap();
        for (path, bytes) in before {
            assert_eq!(fs::read(&path).unwrap(), bytes, "{}", path.display());
        }
    }

    #[test]
    fn report_rejects_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(aggregate_report(&RunResults::default(), dir.path()).is_err());
    }

    #[test]
    fn slug_is_collision_free_for_distinct_symbols() {
        assert_ne!(slug("#"), slug("%"));
        assert_eq!(slug("Wait"), "Wait");
        assert_eq!(slug("[EOS]"), "-5bEOS-5d");
    }
}
