//! Stage wiring: synthesize -> score -> build-dataset, plus evaluation,
//! scaling reports, and loss verification. Stages hand off through
//! line-delimited JSON archives stamped with the config hash.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::{ClientError, GenerationRequest, ModelClient};
use crate::config::{DatasetMode, PipelineConfig};
use crate::corpus::{self, Corpus, WhitespaceEstimator};
use crate::dataset::{self, DatasetManifest, ValidationReport};
use crate::eval::{self, EvalRecord, EvalTask, GoldSampleSet, ScalingCurve};
use crate::losses::{self, LossReport, TokenLogProbs};
use crate::prompts::{render_prompt, PromptStrategy};
use crate::scoring::{self, SampleSet, ScoredSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("archive {path} was produced under config hash {found}, current config is {expected}; pass --force to override")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("archive {path} is missing its header line")]
    MissingHeader { path: PathBuf },
    #[error("malformed archive record at {path}:{line}: {source}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("requested {requested} examples but the corpus has only {available} questions")]
    NotEnoughQuestions { requested: usize, available: usize },
    #[error("loss input file must contain at least two sequences (chosen, rejected), found {0}")]
    NotEnoughSequences(usize),
    #[error("eval task {0} has no sibling task manifest ({1})")]
    MissingTaskManifest(PathBuf, PathBuf),
}

impl PipelineError {
    /// Exit code contract: 2 for backend failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Client(_) => 2,
            PipelineError::Scoring(scoring::ScoringError::Client(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ArchiveHeader {
    kind: String,
    config_hash: String,
    seed: u64,
}

fn write_header(writer: &mut impl Write, path: &Path, hash: &str, seed: u64) -> Result<(), PipelineError> {
    let header = ArchiveHeader {
        kind: "header".to_string(),
        config_hash: hash.to_string(),
        seed,
    };
    writeln!(writer, "{}", serde_json::to_string(&header).unwrap()).map_err(io_err(path))
}

fn read_archive<T: DeserializeOwned>(
    path: &Path,
    expected_hash: &str,
    force: bool,
) -> Result<(ArchiveHeader, Vec<T>), PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: ArchiveHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str(&line).map_err(|source| PipelineError::MalformedRecord {
                path: path.to_path_buf(),
                line: 1,
                source,
            })?
        }
        None => return Err(PipelineError::MissingHeader { path: path.to_path_buf() }),
    };
    if header.config_hash != expected_hash && !force {
        return Err(PipelineError::HashMismatch {
            path: path.to_path_buf(),
            expected: expected_hash.to_string(),
            found: header.config_hash,
        });
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| PipelineError::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        records.push(record);
    }
    Ok((header, records))
}

/// Stable per-question seed so resume never shifts downstream randomness.
fn question_seed(master_seed: u64, question_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(question_id.as_bytes());
    u64::from_le_bytes(hasher.finalize()[..8].try_into().unwrap())
}

/// Samples N outputs per question and appends one `GoldSampleSet` line per
/// question to the archive. Questions already present in the archive are
/// skipped, making interrupted runs resumable.
pub fn cmd_synthesize(
    config: &PipelineConfig,
    client: &ModelClient,
    out: &Path,
    force: bool,
) -> Result<usize, PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let corpus = corpus::load_corpus(&config.corpus)?;
    let requested = config.synthesis.n_examples;
    if requested > corpus.questions.len() {
        return Err(PipelineError::NotEnoughQuestions {
            requested,
            available: corpus.questions.len(),
        });
    }

    let mut completed: HashSet<String> = HashSet::new();
    if out.exists() {
        let (_, existing): (_, Vec<GoldSampleSet>) = read_archive(out, &hash, force)?;
        completed = existing
            .into_iter()
            .map(|s| s.samples.question_id)
            .collect();
    }

    let fresh = completed.is_empty() && !out.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(io_err(out))?;
    let mut writer = BufWriter::new(file);
    if fresh {
        write_header(&mut writer, out, &hash, config.synthesis.seed)?;
    }

    let mut written = 0usize;
    for question in corpus.questions.iter().take(requested) {
        if completed.contains(&question.id) {
            continue;
        }
        let set = synthesize_one(config, client, &corpus, question)?;
        writeln!(writer, "{}", serde_json::to_string(&set).unwrap()).map_err(io_err(out))?;
        written += 1;
    }
    writer.flush().map_err(io_err(out))?;
    Ok(written)
}

fn synthesize_one(
    config: &PipelineConfig,
    client: &ModelClient,
    corpus: &Corpus,
    question: &crate::corpus::QuestionRecord,
) -> Result<GoldSampleSet, PipelineError> {
    let seed = question_seed(config.synthesis.seed, &question.id);
    let (lo, hi) = config.synthesis.context_token_range;
    // Budget drawn deterministically from the question seed.
    let target_tokens = lo + (seed % (hi - lo + 1) as u64) as usize;
    let context = corpus::assemble_context(
        question,
        corpus,
        target_tokens,
        seed,
        &WhitespaceEstimator,
    )?;
    let mut prompt = render_prompt(
        PromptStrategy::PlanAndSolve,
        &context.rendered_text,
        &question.question,
    )
    .expect("non-empty question");
    prompt.question_id = question.id.clone();

    let result = client.sample_outputs(&GenerationRequest {
        prompt: prompt.clone(),
        n_samples: config.synthesis.n_samples,
        temperature: config.synthesis.temperature,
        max_output_tokens: config.synthesis.max_output_tokens,
        seed: Some(seed),
    })?;

    Ok(GoldSampleSet {
        samples: SampleSet {
            question_id: question.id.clone(),
            question: question.question.clone(),
            prompt,
            outputs: result.outputs,
            seed,
        },
        gold_answer: question.gold_answer.clone(),
    })
}

/// Scores every archived sample set with the configured utility metric.
pub fn cmd_score(
    config: &PipelineConfig,
    client: &ModelClient,
    archive: &Path,
    out: &Path,
    force: bool,
) -> Result<usize, PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let (header, sets): (_, Vec<GoldSampleSet>) = read_archive(archive, &hash, force)?;

    let file = File::create(out).map_err(io_err(out))?;
    let mut writer = BufWriter::new(file);
    write_header(&mut writer, out, &hash, header.seed)?;
    let mut written = 0usize;
    for set in &sets {
        let scored = scoring::mbr_scores(
            &set.samples,
            config.scoring.utility,
            Some(client),
            config.scoring.matrix_cap,
        )?;
        writeln!(writer, "{}", serde_json::to_string(&scored).unwrap()).map_err(io_err(out))?;
        written += 1;
    }
    writer.flush().map_err(io_err(out))?;
    Ok(written)
}

/// Builds the configured dataset kind from a scored archive and validates
/// the serialized file before returning.
pub fn cmd_build_dataset(
    config: &PipelineConfig,
    scored_archive: &Path,
    out: Option<&Path>,
    force: bool,
) -> Result<(DatasetManifest, ValidationReport), PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let (header, sets): (_, Vec<ScoredSet>) = read_archive(scored_archive, &hash, force)?;
    let out = out.unwrap_or(&config.dataset.output);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }

    let base_manifest = DatasetManifest {
        n_examples: 0,
        n_samples_per_example: config.synthesis.n_samples,
        context_token_range: config.synthesis.context_token_range,
        temperature: config.synthesis.temperature,
        utility: config.scoring.utility.describe().to_string(),
        creation_seed: header.seed,
        config_hash: hash,
        skipped: Default::default(),
    };

    let manifest = match config.dataset.mode {
        DatasetMode::Sft => {
            let outcome = dataset::build_sft_dataset(&sets);
            let mut m = base_manifest;
            m.skipped = outcome.skipped;
            dataset::serialize_dataset(&outcome.examples, m, out)?
        }
        DatasetMode::Preference => {
            let outcome = dataset::build_preference_dataset(&sets, header.seed);
            let mut m = base_manifest;
            m.skipped = outcome.skipped;
            dataset::serialize_dataset(&outcome.examples, m, out)?
        }
    };

    let report = dataset::validate_dataset(out)?;
    Ok((manifest, report))
}

#[derive(Debug, Deserialize)]
struct TaskManifest {
    name: String,
    #[serde(default)]
    strategy: Option<PromptStrategy>,
    #[serde(default)]
    target_tokens: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct TaskResult {
    pub name: String,
    pub aggregate: f64,
    pub token_stats: eval::TokenStats,
    pub records: Vec<EvalRecord>,
}

fn load_task(config: &PipelineConfig, path: &Path) -> Result<EvalTask, PipelineError> {
    let manifest_path = path.with_extension("task.json");
    if !manifest_path.exists() {
        return Err(PipelineError::MissingTaskManifest(
            path.to_path_buf(),
            manifest_path,
        ));
    }
    let manifest: TaskManifest = serde_json::from_reader(
        File::open(&manifest_path).map_err(io_err(&manifest_path))?,
    )
    .map_err(|source| PipelineError::MalformedRecord {
        path: manifest_path.clone(),
        line: 0,
        source,
    })?;

    let corpus = corpus::load_corpus(path)?;
    let target = manifest.target_tokens.unwrap_or(config.eval.target_tokens);
    let seed = manifest.seed.unwrap_or(0);
    let mut items = Vec::with_capacity(corpus.questions.len());
    for question in &corpus.questions {
        let context = corpus::assemble_context(
            question,
            &corpus,
            target,
            question_seed(seed, &question.id),
            &WhitespaceEstimator,
        )?;
        items.push(eval::EvalItem {
            question_id: question.id.clone(),
            question: question.question.clone(),
            context: context.rendered_text,
            gold_answer: question.gold_answer.clone(),
            gold_aliases: Vec::new(),
        });
    }
    Ok(EvalTask {
        name: manifest.name,
        items,
        strategy: manifest.strategy.unwrap_or(config.eval.strategy),
    })
}

/// Evaluates every configured task and writes one JSON result file.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    client: &ModelClient,
    out: &Path,
) -> Result<Vec<TaskResult>, PipelineError> {
    config.validate()?;
    let mut results = Vec::new();
    for task_path in &config.eval.tasks {
        let task = load_task(config, task_path)?;
        let (records, aggregate) = eval::run_eval(
            &task,
            client,
            config.eval.temperature,
            config.eval.max_output_tokens,
        )?;
        results.push(TaskResult {
            name: task.name,
            aggregate,
            token_stats: eval::output_token_stats(&records)?,
            records,
        });
    }
    let file = File::create(out).map_err(io_err(out))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &results)
        .map_err(|e| PipelineError::Io {
            path: out.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    Ok(results)
}

/// Oracle/MBR scaling analysis over a sample archive.
pub fn cmd_scaling(
    config: &PipelineConfig,
    client: &ModelClient,
    archive: &Path,
    ns: &[usize],
    out: &Path,
    force: bool,
) -> Result<ScalingCurve, PipelineError> {
    config.validate()?;
    let hash = config.hash();
    let (_, sets): (_, Vec<GoldSampleSet>) = read_archive(archive, &hash, force)?;
    let curve = eval::scaling_analysis(&sets, ns, config.scoring.utility, Some(client), None)?;
    eval::report(&curve, &[], out)?;
    Ok(curve)
}

#[derive(Debug, Deserialize)]
struct LogProbLine {
    sequence_id: String,
    logprobs: Vec<f64>,
}

/// Reads chosen and rejected token log-probabilities (first two records of
/// the file) and verifies the combined objective.
pub fn cmd_losses(path: &Path, beta: f64) -> Result<LossReport, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut sequences = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogProbLine =
            serde_json::from_str(&line).map_err(|source| PipelineError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                source,
            })?;
        sequences.push(TokenLogProbs::new(parsed.sequence_id, parsed.logprobs)?);
    }
    if sequences.len() < 2 {
        return Err(PipelineError::NotEnoughSequences(sequences.len()));
    }
    Ok(losses::orpo_loss(&sequences[0], &sequences[1], beta)?)
}

/// Reads a sample archive back for tests and downstream tooling.
pub fn read_sample_archive(
    config: &PipelineConfig,
    path: &Path,
    force: bool,
) -> Result<Vec<GoldSampleSet>, PipelineError> {
    let (_, sets) = read_archive(path, &config.hash(), force)?;
    Ok(sets)
}
