//! Monte-Carlo Minimum Bayes Risk scoring over a sample set, with pluggable
//! pairwise utility metrics, plus the baseline selectors (random selection,
//! reference-free self-evaluation, oracle).
//!
//! Each sampled output y is scored by the mean utility u(y, y*) against all
//! N sampled outputs, including itself; the highest-scoring output is the
//! MBR decoding output.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, EmbeddingVector, ModelClient};
use crate::prompts::{self, PromptError, RenderedPrompt};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("sample set must contain at least one output")]
    EmptySampleSet,
    #[error("no embedding available for output {0}")]
    MissingEmbedding(usize),
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("metric {0:?} requires a model client")]
    ClientRequired(&'static str),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One question's N sampled reasoning trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSet {
    pub question_id: String,
    pub question: String,
    pub prompt: RenderedPrompt,
    pub outputs: Vec<String>,
    pub seed: u64,
}

/// Pairwise utility metric u(y, y*) with range [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityMetric {
    Rouge1,
    Rouge2,
    RougeL,
    EmbeddingSim,
    BertScoreF1,
    ReferenceBasedSelfEval,
}

impl UtilityMetric {
    pub fn describe(self) -> &'static str {
        match self {
            UtilityMetric::Rouge1 => "rouge-1",
            UtilityMetric::Rouge2 => "rouge-2",
            UtilityMetric::RougeL => "rouge-l",
            UtilityMetric::EmbeddingSim => "embedding-sim",
            UtilityMetric::BertScoreF1 => "bertscore-f1",
            UtilityMetric::ReferenceBasedSelfEval => "reference-based-self-eval",
        }
    }
}

/// Per-output MBR scores with the winning index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredSet {
    pub question_id: String,
    pub prompt_text: String,
    pub outputs: Vec<String>,
    pub scores: Vec<f64>,
    pub utility: String,
    pub selected_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility_matrix: Option<Vec<Vec<f64>>>,
    /// Set when any metric call failed; that pair scored 0.
    pub degraded: bool,
    pub seed: u64,
}

impl ScoredSet {
    pub fn selected_output(&self) -> &str {
        &self.outputs[self.selected_index]
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// ROUGE F1 over lowercased whitespace tokens: n-gram multiset overlap for
/// variants 1 and 2, longest common subsequence for L. Returns 0 when
/// either side has no tokens.
pub fn rouge_f(candidate: &str, reference: &str, variant: RougeVariant) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    match variant {
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let cand_grams = ngram_counts(&cand, n);
            let ref_grams = ngram_counts(&refr, n);
            let cand_total: usize = cand_grams.values().sum();
            let ref_total: usize = ref_grams.values().sum();
            if cand_total == 0 || ref_total == 0 {
                return 0.0;
            }
            let overlap: usize = cand_grams
                .iter()
                .map(|(gram, &c)| c.min(*ref_grams.get(gram).unwrap_or(&0)))
                .sum();
            f1(
                overlap as f64 / cand_total as f64,
                overlap as f64 / ref_total as f64,
            )
        }
        RougeVariant::L => {
            let lcs = lcs_len(&cand, &refr) as f64;
            f1(lcs / cand.len() as f64, lcs / refr.len() as f64)
        }
    }
}

/// Maps a cosine/inner-product value from [-1, 1] into [0, 1].
fn unit_interval(similarity: f64) -> f64 {
    (similarity.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Inner product of two unit embedding vectors, mapped into [0, 1].
pub fn embedding_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    unit_interval(a.dot(b))
}

/// BERTScore-style greedy matching over token embeddings: recall is the
/// mean over reference tokens of the best cosine against candidate tokens,
/// precision symmetric, F1 the harmonic mean. Cosines are mapped into
/// [0, 1] the same way as sentence similarities.
pub fn bertscore_f1(
    candidate_tokens: &[EmbeddingVector],
    reference_tokens: &[EmbeddingVector],
) -> Result<f64, ScoringError> {
    if candidate_tokens.is_empty() || reference_tokens.is_empty() {
        return Err(ScoringError::EmptySequence);
    }
    let best = |from: &[EmbeddingVector], against: &[EmbeddingVector]| -> f64 {
        from.iter()
            .map(|t| {
                against
                    .iter()
                    .map(|u| unit_interval(t.dot(u)))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let recall = best(reference_tokens, candidate_tokens);
    let precision = best(candidate_tokens, reference_tokens);
    Ok(f1(precision, recall))
}

/// Model-judged utility: asks whether y and y* give the same answer,
/// mapping True to 1 and False to 0.
pub fn reference_based_self_eval_utility(
    question: &str,
    y: &str,
    y_star: &str,
    client: &ModelClient,
) -> Result<f64, ScoringError> {
    let prompt = prompts::render_reference_based_eval(question, y_star, y)?;
    let reply = client.complete_once(&prompt)?;
    Ok(if prompts::parse_true_false(&reply)? { 1.0 } else { 0.0 })
}

fn argmax_lowest_tie(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

struct MatrixBuild {
    matrix: Vec<Vec<f64>>,
    degraded: bool,
}

fn pairwise_matrix(
    samples: &SampleSet,
    utility: UtilityMetric,
    client: Option<&ModelClient>,
) -> Result<MatrixBuild, ScoringError> {
    let n = samples.outputs.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut degraded = false;

    match utility {
        UtilityMetric::Rouge1 | UtilityMetric::Rouge2 | UtilityMetric::RougeL => {
            let variant = match utility {
                UtilityMetric::Rouge1 => RougeVariant::One,
                UtilityMetric::Rouge2 => RougeVariant::Two,
                _ => RougeVariant::L,
            };
            for i in 0..n {
                for j in 0..n {
                    matrix[i][j] = rouge_f(&samples.outputs[i], &samples.outputs[j], variant);
                }
            }
        }
        UtilityMetric::EmbeddingSim => {
            let client = client.ok_or(ScoringError::ClientRequired("embedding-sim"))?;
            let vectors = client.embed(&samples.outputs)?;
            for i in 0..n {
                for j in 0..n {
                    matrix[i][j] = embedding_similarity(&vectors[i], &vectors[j]);
                }
            }
        }
        UtilityMetric::BertScoreF1 => {
            let client = client.ok_or(ScoringError::ClientRequired("bertscore-f1"))?;
            let token_lists: Vec<Vec<String>> =
                samples.outputs.iter().map(|o| tokenize(o)).collect();
            // Embed each unique token once.
            let mut unique: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            for tokens in &token_lists {
                for t in tokens {
                    if !index.contains_key(t) {
                        index.insert(t.clone(), unique.len());
                        unique.push(t.clone());
                    }
                }
            }
            let vectors = if unique.is_empty() {
                Vec::new()
            } else {
                client.embed(&unique)?
            };
            let embedded: Vec<Vec<EmbeddingVector>> = token_lists
                .iter()
                .map(|tokens| tokens.iter().map(|t| vectors[index[t]].clone()).collect())
                .collect();
            for i in 0..n {
                for j in 0..n {
                    match bertscore_f1(&embedded[i], &embedded[j]) {
                        Ok(u) => matrix[i][j] = u,
                        Err(_) => {
                            matrix[i][j] = 0.0;
                            degraded = true;
                        }
                    }
                }
            }
        }
        UtilityMetric::ReferenceBasedSelfEval => {
            let client = client.ok_or(ScoringError::ClientRequired("reference-based-self-eval"))?;
            for i in 0..n {
                for j in 0..n {
                    if samples.outputs[i] == samples.outputs[j] {
                        // Identical strings trivially agree; skip the call.
                        matrix[i][j] = 1.0;
                        continue;
                    }
                    match reference_based_self_eval_utility(
                        &samples.question,
                        &samples.outputs[i],
                        &samples.outputs[j],
                        client,
                    ) {
                        Ok(u) => matrix[i][j] = u,
                        Err(_) => {
                            matrix[i][j] = 0.0;
                            degraded = true;
                        }
                    }
                }
            }
        }
    }

    Ok(MatrixBuild { matrix, degraded })
}

/// Scores every output by its mean pairwise utility against all N outputs
/// (diagonal included) and selects the argmax, ties to the lowest index.
pub fn mbr_scores(
    samples: &SampleSet,
    utility: UtilityMetric,
    client: Option<&ModelClient>,
    matrix_cap: usize,
) -> Result<ScoredSet, ScoringError> {
    let n = samples.outputs.len();
    if n == 0 {
        return Err(ScoringError::EmptySampleSet);
    }
    let MatrixBuild { matrix, degraded } = pairwise_matrix(samples, utility, client)?;
    let scores: Vec<f64> = matrix
        .iter()
        .map(|row| row.iter().sum::<f64>() / n as f64)
        .collect();
    let selected_index = argmax_lowest_tie(&scores);
    Ok(ScoredSet {
        question_id: samples.question_id.clone(),
        prompt_text: samples.prompt.text.clone(),
        outputs: samples.outputs.clone(),
        scores,
        utility: utility.describe().to_string(),
        selected_index,
        utility_matrix: (n <= matrix_cap).then_some(matrix),
        degraded,
        seed: samples.seed,
    })
}

/// Seeded uniform baseline selector.
pub fn select_random(samples: &SampleSet, seed: u64) -> Result<usize, ScoringError> {
    let n = samples.outputs.len();
    if n == 0 {
        return Err(ScoringError::EmptySampleSet);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(rng.gen_range(0..n))
}

/// Reference-free baseline: each output rated once on the 1-5 scale by the
/// model itself, mapped to [0, 1]. Unparseable ratings score 0 and mark
/// the set degraded.
pub fn reference_free_scores(
    samples: &SampleSet,
    context: &str,
    question: &str,
    client: &ModelClient,
) -> Result<ScoredSet, ScoringError> {
    let n = samples.outputs.len();
    if n == 0 {
        return Err(ScoringError::EmptySampleSet);
    }
    let mut scores = Vec::with_capacity(n);
    let mut degraded = false;
    for output in &samples.outputs {
        let prompt = prompts::render_reference_free_eval(context, question, output)?;
        let reply = client.complete_once(&prompt)?;
        match prompts::parse_rating(&reply) {
            Ok(rating) => scores.push(rating as f64 / 5.0),
            Err(_) => {
                scores.push(0.0);
                degraded = true;
            }
        }
    }
    let selected_index = argmax_lowest_tie(&scores);
    Ok(ScoredSet {
        question_id: samples.question_id.clone(),
        prompt_text: samples.prompt.text.clone(),
        outputs: samples.outputs.clone(),
        scores,
        utility: "reference-free-self-eval".to_string(),
        selected_index,
        utility_matrix: None,
        degraded,
        seed: samples.seed,
    })
}

/// Returns the lowest index whose output contains the gold answer under
/// SubEM normalization, and whether any output does.
pub fn oracle_select(samples: &SampleSet, gold_answer: &str) -> (usize, u8) {
    for (i, output) in samples.outputs.iter().enumerate() {
        if crate::eval::subem(output, gold_answer) == 1 {
            return (i, 1);
        }
    }
    (0, 0)
}
