//! Adversarial reasoning corpora: dataset ingestion, instruction-conditioned
//! prompt assembly, flexible exact-match scoring, and train/test splitting.
//!
//! A dataset is UTF-8 JSONL, one record per line, with fields `id`,
//! `question`, `flawed_cot`, `ground_truth` and an optional `source` tag.
//! The flawed chain-of-thought carries a deliberately injected error; scoring
//! asks whether a response recovers the correct answer anyway.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// One reasoning problem with a deliberately flawed chain-of-thought.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarialSample {
    pub id: String,
    pub question: String,
    pub flawed_cot: String,
    pub ground_truth: String,
    #[serde(default)]
    pub source: String,
}

/// Reflection level: 0 = no reflection, 1 = intrinsic, 2 = triggered.
/// The ordering is meaningful; steering pairs contrast a lower level with a
/// higher one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ReflectionLevel(u8);

impl ReflectionLevel {
    pub const NO_REFLECTION: ReflectionLevel = ReflectionLevel(0);
    pub const INTRINSIC: ReflectionLevel = ReflectionLevel(1);
    pub const TRIGGERED: ReflectionLevel = ReflectionLevel(2);

    pub fn new(value: u8) -> Result<Self> {
        if value <= 2 {
            Ok(ReflectionLevel(value))
        } else {
            Err(Error::Config(format!(
                "reflection level must be 0, 1 or 2, got {value}"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for ReflectionLevel {
    type Error = Error;
    fn try_from(value: u8) -> Result<Self> {
        ReflectionLevel::new(value)
    }
}

impl From<ReflectionLevel> for u8 {
    fn from(level: ReflectionLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for ReflectionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A reflection level plus its instruction strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub level: ReflectionLevel,
    pub instructions: Vec<String>,
}

impl InstructionSet {
    pub fn new(level: ReflectionLevel, instructions: Vec<String>) -> Result<Self> {
        if instructions.is_empty() {
            return Err(Error::EmptyInput("instruction set"));
        }
        let mut seen = BTreeSet::new();
        for instr in &instructions {
            if instr.is_empty() {
                return Err(Error::EmptyInstruction);
            }
            if !seen.insert(instr.clone()) {
                return Err(Error::DuplicateInstruction(instr.clone()));
            }
        }
        Ok(Self {
            level,
            instructions,
        })
    }
}

/// The three instruction sets of one configuration. Each instruction belongs
/// to exactly one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSets {
    sets: [InstructionSet; 3],
}

impl InstructionSets {
    pub fn new(
        level0: InstructionSet,
        level1: InstructionSet,
        level2: InstructionSet,
    ) -> Result<Self> {
        let sets = [level0, level1, level2];
        for (i, set) in sets.iter().enumerate() {
            if set.level.value() as usize != i {
                return Err(Error::Config(format!(
                    "instruction set at slot {i} declares level {}",
                    set.level
                )));
            }
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for set in &sets {
            for instr in &set.instructions {
                if !seen.insert(instr) {
                    return Err(Error::DuplicateInstruction(instr.clone()));
                }
            }
        }
        Ok(Self { sets })
    }

    /// The default instruction sets for the three levels.
    pub fn defaults() -> Self {
        let mk = |level, instrs: &[&str]| InstructionSet {
            level,
            instructions: instrs.iter().map(|s| s.to_string()).collect(),
        };
        Self {
            sets: [
                mk(
                    ReflectionLevel::NO_REFLECTION,
                    &["Answer", "Result", "Output"],
                ),
                mk(ReflectionLevel::INTRINSIC, &["[EOS]", "#", "%"]),
                mk(
                    ReflectionLevel::TRIGGERED,
                    &["Wait", "Alternatively", "Check"],
                ),
            ],
        }
    }

    pub fn set(&self, level: ReflectionLevel) -> &InstructionSet {
        &self.sets[level.value() as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &InstructionSet> {
        self.sets.iter()
    }

    /// Every instruction string across the three sets.
    pub fn all_instructions(&self) -> Vec<&str> {
        self.sets
            .iter()
            .flat_map(|s| s.instructions.iter().map(String::as_str))
            .collect()
    }
}

/// Whitespace policy between the flawed chain-of-thought and the appended
/// instruction. Chat templates may want `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparatorPolicy {
    #[default]
    SingleSpace,
    None,
}

/// A fully assembled prompt, with the token index where activations are read
/// and interventions applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub sample_id: String,
    pub instruction: String,
    pub text: String,
    /// Index of the instruction's final token in the backend's tokenization.
    pub instruction_token_index: usize,
}

/// Train/test partition over sample ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl SplitSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct File<'a> {
            format_version: i64,
            train_ids: &'a BTreeSet<String>,
            test_ids: &'a BTreeSet<String>,
        }
        let doc = File {
            format_version: 1,
            train_ids: &self.train_ids,
            test_ids: &self.test_ids,
        };
        let text = serde_json::to_string_pretty(&doc).expect("split serialization");
        fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            format_version: i64,
            train_ids: BTreeSet<String>,
            test_ids: BTreeSet<String>,
        }
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: File = serde_json::from_str(&text).map_err(|e| Error::MalformedStore {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if doc.format_version != 1 {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                supported: 1,
            });
        }
        Ok(SplitSpec {
            train_ids: doc.train_ids,
            test_ids: doc.test_ids,
        })
    }
}

/// Result of loading a dataset: well-formed samples plus per-record
/// diagnostics for rejected lines.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub samples: Vec<AdversarialSample>,
    /// One entry per rejected record, naming the line number.
    pub skipped: Vec<String>,
}

/// Load a JSONL dataset. Records missing a required field (or with an empty
/// `flawed_cot`/`ground_truth`) are rejected with a line-numbered diagnostic;
/// a duplicate id aborts the load.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: AdversarialSample = match serde_json::from_str(&line) {
            Ok(s) => s,
            Err(e) => {
                skipped.push(format!("line {line_no}: {e}"));
                continue;
            }
        };
        if sample.flawed_cot.is_empty() {
            skipped.push(format!("line {line_no}: empty flawed_cot"));
            continue;
        }
        if sample.ground_truth.is_empty() {
            skipped.push(format!("line {line_no}: empty ground_truth"));
            continue;
        }
        if !seen_ids.insert(sample.id.clone()) {
            return Err(Error::DuplicateSampleId {
                path: path.display().to_string(),
                id: sample.id,
                line: line_no,
            });
        }
        samples.push(sample);
    }

    Ok(LoadedDataset { samples, skipped })
}

/// Build the full prompt for a (sample, instruction) pair and resolve the
/// instruction's final token index under the backend's tokenizer.
///
/// Layout: question preamble, then the flawed chain-of-thought, then the
/// separator and the appended instruction. Sample text is never altered
/// outside the appended suffix.
pub fn assemble_prompt<B: Backend + ?Sized>(
    backend: &B,
    sample: &AdversarialSample,
    instruction: &str,
    separator: SeparatorPolicy,
) -> Result<PromptInstance> {
    if instruction.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let sep = match separator {
        SeparatorPolicy::SingleSpace => " ",
        SeparatorPolicy::None => "",
    };
    let text = format!(
        "Answer the question: {}\nPlease always end your response with the final numerical answer.\nLet's solve this step by step ... {}{}{}",
        sample.question, sample.flawed_cot, sep, instruction
    );
    let tokens = backend.tokenize(&text)?;
    debug_assert!(!tokens.is_empty());
    Ok(PromptInstance {
        sample_id: sample.id.clone(),
        instruction: instruction.to_string(),
        text,
        instruction_token_index: tokens.len() - 1,
    })
}

/// Scoring mode for [`score_response`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Response is correct iff it contains a number exactly matching the
    /// ground truth after canonicalization.
    #[default]
    NumericContains,
    /// Response is correct iff the trimmed ground-truth string occurs
    /// verbatim (for non-numeric answers).
    LiteralContains,
}

/// Extract every maximal numeric token from `text`, canonicalized:
/// thousands separators removed, trailing fractional zeros trimmed,
/// leading integer zeros dropped.
///
/// A sign is absorbed only when it is not preceded by a digit, so
/// `"180-135"` yields `["180", "135"]`, not a negative number.
pub fn extract_numbers(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let sign_ok = (b == b'+' || b == b'-')
            && (i == 0 || !bytes[i - 1].is_ascii_digit())
            && i + 1 < bytes.len()
            && bytes[i + 1].is_ascii_digit();
        if !sign_ok && !b.is_ascii_digit() {
            i += 1;
            continue;
        }
        let digits_start = if sign_ok { i + 1 } else { i };
        let (token, end) = scan_numeric_token(bytes, digits_start);
        let signed = if sign_ok && b == b'-' {
            format!("-{token}")
        } else {
            token
        };
        out.push(canonicalize_parsed(&signed));
        i = end;
    }
    out
}

/// Scan one numeric token starting at a digit: digit run, optional
/// comma-separated thousands groups, optional decimal part. Returns the raw
/// token (signless) and the index one past its end.
fn scan_numeric_token(bytes: &[u8], start: usize) -> (String, usize) {
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let lead_len = i - start;
    let mut token: Vec<u8> = bytes[start..i].to_vec();

    // Thousands groups apply only after a 1-3 digit lead; each group is a
    // comma plus exactly three digits not followed by a fourth.
    if (1..=3).contains(&lead_len) {
        while bytes.len() - i >= 4
            && bytes[i] == b','
            && bytes[i + 1].is_ascii_digit()
            && bytes[i + 2].is_ascii_digit()
            && bytes[i + 3].is_ascii_digit()
            && (i + 4 >= bytes.len() || !bytes[i + 4].is_ascii_digit())
        {
            token.extend_from_slice(&bytes[i + 1..i + 4]);
            i += 4;
        }
    }

    // Decimal part: a dot with at least one digit after it.
    if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
        token.push(b'.');
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            token.push(bytes[i]);
            i += 1;
        }
    }

    (String::from_utf8(token).expect("ascii digits"), i)
}

/// Canonicalize a separator-free numeric string (optional leading '-').
fn canonicalize_parsed(raw: &str) -> String {
    let (neg, digits) = match raw.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, raw),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((a, b)) => (a, Some(b)),
        None => (digits, None),
    };
    let int_trimmed = int_part.trim_start_matches('0');
    let int_canon = if int_trimmed.is_empty() {
        "0"
    } else {
        int_trimmed
    };
    let frac_canon = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut body = String::from(int_canon);
    if !frac_canon.is_empty() {
        body.push('.');
        body.push_str(frac_canon);
    }
    if neg && body != "0" {
        format!("-{body}")
    } else {
        body
    }
}

/// Canonicalize a string that must be exactly one numeric token (used for
/// ground truths). Returns `None` when the input is not numeric.
pub fn canonicalize_number(s: &str) -> Option<String> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    let found = extract_numbers(t);
    if found.len() != 1 {
        return None;
    }
    // The single token must cover the whole trimmed input (tolerating the
    // stripped '+' sign), not just a substring of it.
    let bytes = t.as_bytes();
    let body = t.strip_prefix('+').unwrap_or(t);
    let consumed_from = if bytes[0] == b'+' { 1 } else { 0 };
    let (raw, end) = if body.starts_with('-') {
        let (tok, end) = scan_numeric_token(t.as_bytes(), consumed_from + 1);
        (format!("-{tok}"), end)
    } else {
        scan_numeric_token(t.as_bytes(), consumed_from)
    };
    if end != t.len() || raw.trim_start_matches('-').is_empty() {
        return None;
    }
    Some(found.into_iter().next().unwrap())
}

/// Flexible exact-match scoring.
pub fn score_response(response: &str, ground_truth: &str, mode: ScoreMode) -> Result<bool> {
    match mode {
        ScoreMode::NumericContains => {
            let target =
                canonicalize_number(ground_truth).ok_or_else(|| Error::NonNumericGroundTruth {
                    value: ground_truth.to_string(),
                })?;
            Ok(extract_numbers(response).contains(&target))
        }
        ScoreMode::LiteralContains => Ok(response.contains(ground_truth.trim())),
    }
}

/// Deterministic train/test split. A pure function of the dataset's ids,
/// the fraction, and the seed; file order does not matter.
pub fn make_split(
    dataset: &[AdversarialSample],
    train_fraction: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::BadTrainFraction(train_fraction));
    }
    let mut ids: Vec<&str> = dataset.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut ids);
    let n = ids.len();
    // Round half up: |train - fraction*n| <= 0.5 < 1.
    let n_train = (train_fraction * n as f64 + 0.5).floor() as usize;
    let train_ids: BTreeSet<String> = ids[..n_train].iter().map(|s| s.to_string()).collect();
    let test_ids: BTreeSet<String> = ids[n_train..].iter().map(|s| s.to_string()).collect();
    Ok(SplitSpec {
        train_ids,
        test_ids,
    })
}
