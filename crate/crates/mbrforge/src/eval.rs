//! SubEM evaluation harness over long-context QA tasks, output-token
//! statistics, and the oracle/MBR scaling analysis.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{GenerationRequest, ModelClient};
use crate::prompts::{render_prompt, PromptStrategy};
use crate::scoring::{mbr_scores, oracle_select, SampleSet, UtilityMetric};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task contains no records")]
    EmptyTask,
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("scaling curve has no points")]
    EmptyCurve,
    #[error("sample set {set_id:?} has {available} outputs, {requested} requested")]
    InsufficientSamples {
        set_id: String,
        available: usize,
        requested: usize,
    },
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
}

/// One question ready for evaluation: pre-assembled context plus gold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub question_id: String,
    pub question: String,
    pub context: String,
    pub gold_answer: String,
    /// Optional aliases; any match scores 1.
    #[serde(default)]
    pub gold_aliases: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EvalTask {
    pub name: String,
    pub items: Vec<EvalItem>,
    pub strategy: PromptStrategy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub prediction: String,
    pub gold_answer: String,
    pub subem: u8,
    pub output_tokens: usize,
    /// Set when the generation failed; the record scores 0.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub ns: Vec<usize>,
    pub oracle_scores: Vec<f64>,
    pub mbr_scores: Vec<f64>,
    pub greedy_score: Option<f64>,
}

fn normalize_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Substring exact match: 1 iff the normalized gold answer occurs in the
/// normalized prediction. Normalization lowercases, collapses whitespace
/// runs, and strips punctuation from the ends of the gold.
pub fn subem(prediction: &str, gold: &str) -> u8 {
    let gold = normalize_text(gold);
    let gold = gold.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    if gold.is_empty() {
        return 0;
    }
    u8::from(normalize_text(prediction).contains(gold))
}

fn subem_any(prediction: &str, item: &EvalItem) -> u8 {
    if subem(prediction, &item.gold_answer) == 1 {
        return 1;
    }
    item.gold_aliases
        .iter()
        .any(|alias| subem(prediction, alias) == 1)
        .into()
}

/// Runs one prediction per record (greedy by default) and aggregates
/// 100 x mean SubEM. Failed generations score 0 with an error flag
/// instead of aborting the run.
pub fn run_eval(
    task: &EvalTask,
    client: &ModelClient,
    temperature: f64,
    max_output_tokens: usize,
) -> Result<(Vec<EvalRecord>, f64), EvalError> {
    if task.items.is_empty() {
        return Err(EvalError::EmptyTask);
    }
    let mut records = Vec::with_capacity(task.items.len());
    for item in &task.items {
        let prompt = render_prompt(task.strategy, &item.context, &item.question)
            .expect("non-empty question");
        let request = GenerationRequest {
            prompt,
            n_samples: 1,
            temperature,
            max_output_tokens,
            seed: None,
        };
        let record = match client.sample_outputs(&request) {
            Ok(result) => {
                let prediction = result.outputs.into_iter().next().unwrap();
                EvalRecord {
                    question_id: item.question_id.clone(),
                    subem: subem_any(&prediction, item),
                    output_tokens: result.output_token_counts[0],
                    gold_answer: item.gold_answer.clone(),
                    prediction,
                    error: None,
                }
            }
            Err(err) => EvalRecord {
                question_id: item.question_id.clone(),
                prediction: String::new(),
                gold_answer: item.gold_answer.clone(),
                subem: 0,
                output_tokens: 0,
                error: Some(err.to_string()),
            },
        };
        records.push(record);
    }
    let aggregate = aggregate_subem(&records);
    Ok((records, aggregate))
}

pub fn aggregate_subem(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    100.0 * records.iter().map(|r| r.subem as usize).sum::<usize>() as f64 / records.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub mean: f64,
    pub median: f64,
    pub max: usize,
}

pub fn output_token_stats(records: &[EvalRecord]) -> Result<TokenStats, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut counts: Vec<usize> = records.iter().map(|r| r.output_tokens).collect();
    counts.sort_unstable();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let median = if counts.len() % 2 == 1 {
        counts[counts.len() / 2] as f64
    } else {
        (counts[counts.len() / 2 - 1] + counts[counts.len() / 2]) as f64 / 2.0
    };
    Ok(TokenStats {
        mean,
        median,
        max: *counts.last().unwrap(),
    })
}

/// A sample set paired with its gold answer, the unit of the scaling
/// analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldSampleSet {
    pub samples: SampleSet,
    pub gold_answer: String,
}

/// For each N, truncates every set to its first N outputs and measures the
/// oracle hit rate and the SubEM of the MBR-selected output.
pub fn scaling_analysis(
    sets: &[GoldSampleSet],
    ns: &[usize],
    utility: UtilityMetric,
    client: Option<&ModelClient>,
    greedy_score: Option<f64>,
) -> Result<ScalingCurve, EvalError> {
    if sets.is_empty() || ns.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    for set in sets {
        let available = set.samples.outputs.len();
        if let Some(&max_n) = ns.iter().max() {
            if max_n > available {
                return Err(EvalError::InsufficientSamples {
                    set_id: set.samples.question_id.clone(),
                    available,
                    requested: max_n,
                });
            }
        }
    }

    let mut oracle_scores = Vec::with_capacity(ns.len());
    let mut mbr_rates = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut oracle_hits = 0usize;
        let mut mbr_hits = 0usize;
        for set in sets {
            let mut truncated = set.samples.clone();
            truncated.outputs.truncate(n);
            let (_, hit) = oracle_select(&truncated, &set.gold_answer);
            oracle_hits += hit as usize;
            let scored = mbr_scores(&truncated, utility, client, 0)?;
            mbr_hits += subem(scored.selected_output(), &set.gold_answer) as usize;
        }
        oracle_scores.push(oracle_hits as f64 / sets.len() as f64);
        mbr_rates.push(mbr_hits as f64 / sets.len() as f64);
    }

    Ok(ScalingCurve {
        ns: ns.to_vec(),
        oracle_scores,
        mbr_scores: mbr_rates,
        greedy_score,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub curve: ScalingCurve,
    pub subem_normalization: String,
    pub n_records: usize,
}

/// Writes a JSON report, a plain-text table, and an SVG line chart of the
/// scaling curves next to `path`.
pub fn report(
    curve: &ScalingCurve,
    records: &[EvalRecord],
    path: &Path,
) -> Result<EvalReport, EvalError> {
    if curve.ns.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    let report = EvalReport {
        curve: curve.clone(),
        subem_normalization: "lowercase, collapse whitespace runs, strip gold edge punctuation"
            .to_string(),
        n_records: records.len(),
    };
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &report)
        .map_err(std::io::Error::other)?;

    let mut table = String::from("N\toracle\tmbr\n");
    for (i, n) in curve.ns.iter().enumerate() {
        table.push_str(&format!(
            "{n}\t{:.4}\t{:.4}\n",
            curve.oracle_scores[i], curve.mbr_scores[i]
        ));
    }
    if let Some(greedy) = curve.greedy_score {
        table.push_str(&format!("greedy\t{greedy:.4}\n"));
    }
    let mut tfile = BufWriter::new(File::create(path.with_extension("txt"))?);
    tfile.write_all(table.as_bytes())?;

    let svg = render_svg(curve);
    let mut sfile = BufWriter::new(File::create(path.with_extension("svg"))?);
    sfile.write_all(svg.as_bytes())?;
    Ok(report)
}

fn render_svg(curve: &ScalingCurve) -> String {
    let width = 480.0;
    let height = 320.0;
    let margin = 40.0;
    let max_n = *curve.ns.iter().max().unwrap() as f64;
    let x = |n: usize| margin + (n as f64 / max_n) * (width - 2.0 * margin);
    let y = |v: f64| height - margin - v * (height - 2.0 * margin);
    let polyline = |values: &[f64], color: &str| {
        let points: Vec<String> = curve
            .ns
            .iter()
            .zip(values)
            .map(|(&n, &v)| format!("{:.1},{:.1}", x(n), y(v)))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        )
    };
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\
         <line x1=\"{margin}\" y1=\"{y0}\" x2=\"{xr}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{y0}\" stroke=\"black\"/>\
         {oracle}{mbr}\
         <text x=\"{margin}\" y=\"20\" font-size=\"12\">oracle (blue) vs mbr (red) hit rate by N</text>\
         </svg>",
        y0 = height - margin,
        xr = width - margin,
        oracle = polyline(&curve.oracle_scores, "blue"),
        mbr = polyline(&curve.mbr_scores, "red"),
    )
}
