//! Config-driven pipeline behind the CLI subcommands: extract steering
//! vectors, discover new instructions, evaluate conditions, and re-render
//! reports. Every step is idempotent for a fixed config: reruns produce
//! byte-identical outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::backend::{Backend, InterventionSpec, ReferenceBackend};
use crate::config::{parse_pair, BackendConfig, RunConfig};
use crate::corpus::{
    assemble_prompt, load_dataset, make_split, AdversarialSample, InstructionSets, SplitSpec,
};
use crate::discovery::{
    build_candidate_pool, default_discovery_layer, rank_by_input_embedding, rank_candidates,
    select_top_k, CandidatePool, PoolOptions, RankMethod, Ranking,
};
use crate::error::{Error, Result};
use crate::harness::{
    aggregate_report, evaluate_condition_parallel, run_layer_sweep, run_three_level_suite,
    Condition, EvalOptions, LabeledEval, RunResults,
};
use crate::steering::{
    instruction_mean, load_store, save_store, steering_vector, InstructionMean, VectorStore,
};

pub const STORE_FILE: &str = "vectors.json";
pub const SPLIT_FILE: &str = "split.json";
pub const RANKINGS_FILE: &str = "rankings.csv";
pub const SELECTED_FILE: &str = "selected_tokens.csv";
pub const RESULTS_FILE: &str = "results.json";

fn build_reference_backend(config: &BackendConfig) -> Result<ReferenceBackend> {
    match config {
        BackendConfig::Reference {
            seed,
            num_layers,
            hidden_dim,
        } => ReferenceBackend::new(*seed, *num_layers, *hidden_dim),
        BackendConfig::External { model_id, .. } => Err(Error::ExternalBackendUnavailable {
            model_id: model_id.clone(),
        }),
    }
}

fn load_samples(config: &RunConfig) -> Result<(Vec<AdversarialSample>, Vec<String>)> {
    let loaded = load_dataset(&config.dataset.path)?;
    Ok((loaded.samples, loaded.skipped))
}

/// Use the split persisted by `extract` when present, otherwise recompute it
/// (identical by determinism for a fixed config).
fn split_for(config: &RunConfig, samples: &[AdversarialSample]) -> Result<SplitSpec> {
    let path = config.output.dir.join(SPLIT_FILE);
    if path.exists() {
        let split = SplitSpec::load(&path)?;
        let ids: BTreeSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        for id in split.train_ids.iter().chain(&split.test_ids) {
            if !ids.contains(id.as_str()) {
                return Err(Error::Config(format!(
                    "split {} references sample {id:?} which is not in the dataset; \
                     re-run extract",
                    path.display()
                )));
            }
        }
        Ok(split)
    } else {
        make_split(samples, config.split.train_fraction, config.split.seed)
    }
}

fn subset_sorted(samples: &[AdversarialSample], ids: &BTreeSet<String>) -> Vec<AdversarialSample> {
    let mut subset: Vec<AdversarialSample> = samples
        .iter()
        .filter(|s| ids.contains(&s.id))
        .cloned()
        .collect();
    subset.sort_by(|a, b| a.id.cmp(&b.id));
    subset
}

fn dataset_name(config: &RunConfig) -> String {
    config
        .dataset
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn eval_options(config: &RunConfig) -> EvalOptions {
    EvalOptions {
        max_new_tokens: config.max_new_tokens(),
        separator: config.evaluate.separator,
        score_mode: config.dataset.kind.score_mode(),
        dataset: dataset_name(config),
        workers: config.output.parallel,
    }
}

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.output.dir)
        .map_err(|e| Error::io(config.output.dir.display().to_string(), e))
}

/// Capture the mean activation of `instruction` at `layers` over the
/// training samples, at the instruction's final token position.
fn means_for_instruction(
    backend: &ReferenceBackend,
    train: &[AdversarialSample],
    instruction: &str,
    layers: &[usize],
    config: &RunConfig,
) -> Result<Vec<InstructionMean>> {
    let mut per_layer: BTreeMap<usize, Vec<crate::backend::ActivationRecord>> = BTreeMap::new();
    for sample in train {
        let prompt = assemble_prompt(backend, sample, instruction, config.evaluate.separator)?;
        let records =
            backend.capture_activations(&prompt.text, layers, prompt.instruction_token_index)?;
        for record in records {
            per_layer
                .entry(record.layer)
                .or_default()
                .push(record.with_labels(&sample.id, instruction));
        }
    }
    per_layer
        .values()
        .map(|recs| instruction_mean(recs))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExtractSummary {
    pub store_path: PathBuf,
    pub split_path: PathBuf,
    pub n_train: usize,
    pub n_instructions: usize,
    pub n_means: usize,
    pub n_steering: usize,
    pub skipped: Vec<String>,
}

/// Capture activations for every (train sample, instruction, layer), build
/// instruction means and all requested steering vectors, and persist the
/// store and the split.
pub fn extract(config: &RunConfig) -> Result<ExtractSummary> {
    let backend = build_reference_backend(&config.backend)?;
    let descriptor = backend.descriptor().clone();
    let (samples, skipped) = load_samples(config)?;
    let split = make_split(&samples, config.split.train_fraction, config.split.seed)?;
    let train = subset_sorted(&samples, &split.train_ids);
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let sets = config.instruction_sets()?;
    let layers = config.extract_layers(descriptor.num_layers);

    let mut store = VectorStore::new(
        &descriptor.model_id,
        descriptor.hidden_dim,
        descriptor.num_layers,
    );
    let mut means_by_key: BTreeMap<(String, usize), InstructionMean> = BTreeMap::new();
    let mut n_instructions = 0;
    for set in sets.iter() {
        for instruction in &set.instructions {
            n_instructions += 1;
            for mean in means_for_instruction(&backend, &train, instruction, &layers, config)? {
                means_by_key.insert((instruction.clone(), mean.layer), mean.clone());
                store.means.push(mean);
            }
        }
    }

    for pair in &config.extract.pairs {
        let (a, b) = parse_pair(pair)?;
        for &layer in &layers {
            let collect = |level: crate::corpus::ReflectionLevel| -> Vec<InstructionMean> {
                sets.set(level)
                    .instructions
                    .iter()
                    .filter_map(|i| means_by_key.get(&(i.clone(), layer)).cloned())
                    .collect()
            };
            let means_a = collect(a);
            let means_b = collect(b);
            store.steering.push(steering_vector(
                &means_a,
                &means_b,
                layer,
                &a.to_string(),
                &b.to_string(),
                &descriptor.model_id,
            )?);
        }
    }

    ensure_out_dir(config)?;
    let store_path = config.output.dir.join(STORE_FILE);
    save_store(&store, &store_path)?;
    let split_path = config.output.dir.join(SPLIT_FILE);
    split.save(&split_path)?;

    Ok(ExtractSummary {
        store_path,
        split_path,
        n_train: train.len(),
        n_instructions,
        n_means: store.means.len(),
        n_steering: store.steering.len(),
        skipped,
    })
}

fn load_store_checked(config: &RunConfig, backend: &ReferenceBackend) -> Result<VectorStore> {
    let path = config.output.dir.join(STORE_FILE);
    let store = load_store(&path)?;
    let model_id = &backend.descriptor().model_id;
    if &store.model_id != model_id {
        return Err(Error::Config(format!(
            "store {} was extracted with backend {:?}, config builds {:?}",
            path.display(),
            store.model_id,
            model_id
        )));
    }
    Ok(store)
}

fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Candidate means at one layer, fanned out over worker threads; the
/// reduction is fixed in pool order so results are identical for any width.
fn candidate_means(
    backend: &ReferenceBackend,
    pool: &CandidatePool,
    train: &[AdversarialSample],
    layer: usize,
    config: &RunConfig,
) -> Result<BTreeMap<String, InstructionMean>> {
    let workers = config.output.parallel.clamp(1, pool.entries.len().max(1));
    let mut slots: Vec<Option<Result<InstructionMean>>> = Vec::new();
    slots.resize_with(pool.entries.len(), || None);

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let worker_backend = backend.clone();
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut idx = w;
                while idx < pool.entries.len() {
                    let token = &pool.entries[idx].token;
                    let res =
                        means_for_instruction(&worker_backend, train, token, &[layer], config)
                            .map(|mut v| v.remove(0));
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

    let mut means = BTreeMap::new();
    for (entry, slot) in pool.entries.iter().zip(slots) {
        means.insert(entry.token.clone(), slot.expect("slot filled")?);
    }
    Ok(means)
}

#[derive(Debug, Clone)]
pub struct DiscoverSummary {
    pub rankings_path: PathBuf,
    pub selected_path: PathBuf,
    pub layer: usize,
    pub pool_size: usize,
    pub selected_steering: Vec<String>,
    pub selected_embedding: Vec<String>,
    pub warnings: Vec<String>,
}

/// Rank candidate instructions against the configured steering pair and the
/// input-embedding baseline; write rankings and top-k selections.
pub fn discover(config: &RunConfig) -> Result<DiscoverSummary> {
    let backend = build_reference_backend(&config.backend)?;
    let store = load_store_checked(config, &backend)?;
    let (samples, _) = load_samples(config)?;
    let split = split_for(config, &samples)?;
    let train = subset_sorted(&samples, &split.train_ids);
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let sets = config.instruction_sets()?;
    let num_layers = backend.descriptor().num_layers;
    let layer = config
        .discovery
        .layer
        .unwrap_or_else(|| default_discovery_layer(num_layers));
    if layer > num_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            max: num_layers,
        });
    }

    let (a, b) = parse_pair(&config.discovery.pair)?;
    let target = store
        .steering_for(&a.to_string(), &b.to_string(), layer)?
        .clone();
    let means_a: Vec<InstructionMean> = sets
        .set(a)
        .instructions
        .iter()
        .map(|i| {
            store.mean_for(i, layer).cloned().ok_or_else(|| {
                Error::Config(format!("store has no mean for {i:?} at layer {layer}"))
            })
        })
        .collect::<Result<_>>()?;

    let vocab = match &config.discovery.vocab_path {
        Some(path) => read_vocab(path)?,
        None => backend.vocab(),
    };
    let exclusions: BTreeSet<String> = sets
        .all_instructions()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pool = build_candidate_pool(
        &vocab,
        &exclusions,
        &PoolOptions {
            max_tokens: config.discovery.pool_cap,
            baseline_aggregation: config.discovery.baseline_aggregation,
        },
    )?;

    let means = candidate_means(&backend, &pool, &train, layer, config)?;
    let steering_ranking = rank_candidates(&pool, &means, &means_a, &target)?;
    let reference_tokens = sets
        .set(crate::corpus::ReflectionLevel::TRIGGERED)
        .instructions
        .clone();
    let embed_ranking = rank_by_input_embedding(
        &pool,
        |token| backend.input_embedding(token),
        &reference_tokens,
        layer,
    )?;

    let steering_selection = select_top_k(&steering_ranking.scores, config.discovery.top_k)?;
    let embed_selection = select_top_k(&embed_ranking.scores, config.discovery.top_k)?;

    let mut warnings = Vec::new();
    warnings.extend(steering_ranking.warnings.iter().cloned());
    warnings.extend(embed_ranking.warnings.iter().cloned());
    warnings.extend(steering_selection.warning.iter().cloned());
    warnings.extend(embed_selection.warning.iter().cloned());

    ensure_out_dir(config)?;
    let rankings_path = config.output.dir.join(RANKINGS_FILE);
    write_rankings(
        &rankings_path,
        &[
            (&steering_ranking, &steering_selection.tokens),
            (&embed_ranking, &embed_selection.tokens),
        ],
    )?;
    let selected_path = config.output.dir.join(SELECTED_FILE);
    write_selected(
        &selected_path,
        &[
            (RankMethod::Steering, &steering_selection.tokens),
            (RankMethod::InputEmbedding, &embed_selection.tokens),
        ],
    )?;

    Ok(DiscoverSummary {
        rankings_path,
        selected_path,
        layer,
        pool_size: pool.entries.len(),
        selected_steering: steering_selection.tokens,
        selected_embedding: embed_selection.tokens,
        warnings,
    })
}

fn write_rankings(path: &Path, rankings: &[(&Ranking, &Vec<String>)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e));
    w.write_record(["method", "layer", "token", "similarity", "rank", "selected"])
        .map_err(io_err)?;
    for (ranking, selected) in rankings {
        for score in &ranking.scores {
            w.write_record([
                score.method.to_string(),
                score.layer.to_string(),
                score.token.clone(),
                score.similarity.to_string(),
                score.rank.to_string(),
                selected.contains(&score.token).to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_selected(path: &Path, selections: &[(RankMethod, &Vec<String>)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e));
    w.write_record(["method", "token"]).map_err(io_err)?;
    for (method, tokens) in selections {
        for token in tokens.iter() {
            w.write_record([method.to_string(), token.clone()])
                .map_err(io_err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_selected(path: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
        if record.len() >= 2 {
            out.push((record[0].to_string(), record[1].to_string()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub results_path: PathBuf,
    pub report_files: Vec<PathBuf>,
    pub level_averages: BTreeMap<u8, f64>,
    pub extra_averages: BTreeMap<String, f64>,
    pub n_sweeps: usize,
    /// Number of samples exercised by the zero-delta self-check, when run.
    pub self_check: Option<usize>,
}

/// Run the configured evaluations on the held-out split: the three-level
/// suite, previously discovered instructions, and layer sweeps. Writes raw
/// results plus the report files.
pub fn evaluate(config: &RunConfig, self_check: bool) -> Result<EvaluateSummary> {
    let backend = build_reference_backend(&config.backend)?;
    let (samples, _) = load_samples(config)?;
    let split = split_for(config, &samples)?;
    let test = subset_sorted(&samples, &split.test_ids);
    if test.is_empty() {
        return Err(Error::EmptyInput("test split"));
    }
    let sets = config.instruction_sets()?;
    let opts = eval_options(config);

    let checked = if self_check {
        Some(run_self_check(&backend, &test, &sets, config)?)
    } else {
        None
    };

    let three_level = if config.evaluate.three_level {
        Some(run_three_level_suite(&backend, &test, &sets, &opts)?)
    } else {
        None
    };

    let mut extra_evals = Vec::new();
    let mut extra_averages = BTreeMap::new();
    if config.evaluate.include_discovered {
        let selected_path = config.output.dir.join(SELECTED_FILE);
        if !selected_path.exists() {
            return Err(Error::Config(format!(
                "include_discovered is set but {} does not exist; run discover first",
                selected_path.display()
            )));
        }
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (method, token) in read_selected(&selected_path)? {
            let result = evaluate_condition_parallel(
                &backend,
                &test,
                &Condition::plain(&token),
                None,
                &opts,
            )?;
            let entry = sums.entry(method.clone()).or_insert((0.0, 0));
            entry.0 += result.accuracy;
            entry.1 += 1;
            extra_evals.push(LabeledEval {
                label: method,
                result,
            });
        }
        for (method, (sum, count)) in sums {
            extra_averages.insert(method, sum / count as f64);
        }
    }

    let mut sweeps = Vec::new();
    if !config.evaluate.sweeps.is_empty() {
        let store = load_store_checked(config, &backend)?;
        let level_averages = three_level
            .as_ref()
            .map(|t| t.level_averages.clone())
            .unwrap_or_default();
        for sweep_config in &config.evaluate.sweeps {
            let (a, b) = parse_pair(&sweep_config.pair)?;
            sweeps.push(run_layer_sweep(
                &backend,
                &test,
                (&a.to_string(), &b.to_string()),
                &sweep_config.instruction,
                sweep_config.direction,
                &sweep_config.layers,
                &store,
                &level_averages,
                &opts,
            )?);
        }
    }

    let results = RunResults {
        three_level,
        extra_evals,
        extra_averages: extra_averages.clone(),
        sweeps,
    };

    ensure_out_dir(config)?;
    let results_path = config.output.dir.join(RESULTS_FILE);
    let text = serde_json::to_string_pretty(&results).expect("results serialization");
    fs::write(&results_path, text + "\n")
        .map_err(|e| Error::io(results_path.display().to_string(), e))?;
    let report_files = aggregate_report(&results, &config.output.dir)?;

    Ok(EvaluateSummary {
        results_path,
        report_files,
        level_averages: results
            .three_level
            .as_ref()
            .map(|t| t.level_averages.clone())
            .unwrap_or_default(),
        extra_averages,
        n_sweeps: results.sweeps.len(),
        self_check: checked,
    })
}

/// End-to-end zero-delta neutrality check: a zero-vector intervention must
/// reproduce the baseline continuation token-for-token.
fn run_self_check(
    backend: &ReferenceBackend,
    test: &[AdversarialSample],
    sets: &InstructionSets,
    config: &RunConfig,
) -> Result<usize> {
    let instruction = &sets
        .set(crate::corpus::ReflectionLevel::TRIGGERED)
        .instructions[0];
    let hidden_dim = backend.descriptor().hidden_dim;
    let checked = test.iter().take(5);
    let mut n = 0;
    for sample in checked {
        let prompt = assemble_prompt(backend, sample, instruction, config.evaluate.separator)?;
        let baseline = backend.generate(&prompt.text, config.max_new_tokens(), None)?;
        let zero = InterventionSpec::new(0, prompt.instruction_token_index, vec![0.0; hidden_dim]);
        let steered = backend.generate(&prompt.text, config.max_new_tokens(), Some(&zero))?;
        if baseline.token_ids != steered.token_ids {
            return Err(Error::SelfCheck(format!(
                "zero-delta intervention changed the continuation for sample {:?}",
                sample.id
            )));
        }
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub report_files: Vec<PathBuf>,
}

/// Re-render report files from a previous evaluation's raw results.
pub fn report(config: &RunConfig) -> Result<ReportSummary> {
    let results_path = config.output.dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&results_path)
        .map_err(|e| Error::io(results_path.display().to_string(), e))?;
    let results: RunResults = serde_json::from_str(&text).map_err(|e| Error::MalformedStore {
        path: results_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let report_files = aggregate_report(&results, &config.output.dir)?;
    Ok(ReportSummary { report_files })
}
