//! Corpus loading and long-context assembly.
//!
//! A corpus is a line-delimited JSON file holding documents and multi-hop
//! questions. Contexts are built by mixing each question's supporting
//! documents with randomly sampled distractors up to a token budget.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("question {question_id:?} references missing document id {doc_id:?}")]
    DanglingReference { question_id: String, doc_id: String },
    #[error("question {question_id:?} violates invariant: {reason}")]
    InvalidQuestion { question_id: String, reason: String },
    #[error("document {doc_id:?} violates invariant: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub supporting_doc_ids: Vec<String>,
    #[serde(default)]
    pub distractor_pool_ids: Vec<String>,
}

/// One assembled long context for a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub question_id: String,
    pub ordered_doc_ids: Vec<String>,
    pub rendered_text: String,
    pub token_estimate: usize,
    pub target_tokens: usize,
    pub seed: u64,
    pub over_budget: bool,
}

/// Token-count proxy used to hit the context budget.
///
/// Exact subword counts are not required; any deterministic estimator that
/// is monotone under concatenation and returns 0 for "" will do.
pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;
}

/// Default heuristic: whitespace-separated tokens times 1.3, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceEstimator;

impl TokenEstimator for WhitespaceEstimator {
    fn estimate(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words as f64 * 1.3).ceil() as usize
    }
}

/// Convenience wrapper around the default estimator.
pub fn estimate_tokens(text: &str) -> usize {
    WhitespaceEstimator.estimate(text)
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CorpusLine {
    Document(Document),
    Question(QuestionRecord),
}

/// An in-memory corpus with an id index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub questions: Vec<QuestionRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn document(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.documents[i])
    }
}

/// Loads a line-delimited JSON corpus and verifies referential integrity.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut corpus = Corpus::default();
    let mut question_ids = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusLine = serde_json::from_str(&line).map_err(|source| {
            CorpusError::Malformed {
                line: line_no,
                source,
            }
        })?;
        match record {
            CorpusLine::Document(doc) => {
                if doc.id.is_empty() || doc.text.is_empty() {
                    return Err(CorpusError::InvalidDocument {
                        doc_id: doc.id,
                        reason: "id and text must be non-empty".into(),
                    });
                }
                if corpus.index.contains_key(&doc.id) {
                    return Err(CorpusError::DuplicateId {
                        id: doc.id,
                        line: line_no,
                    });
                }
                corpus.index.insert(doc.id.clone(), corpus.documents.len());
                corpus.documents.push(doc);
            }
            CorpusLine::Question(q) => {
                if !question_ids.insert(q.id.clone()) {
                    return Err(CorpusError::DuplicateId {
                        id: q.id,
                        line: line_no,
                    });
                }
                corpus.questions.push(q);
            }
        }
    }

    for q in &corpus.questions {
        if q.supporting_doc_ids.is_empty() {
            return Err(CorpusError::InvalidQuestion {
                question_id: q.id.clone(),
                reason: "supporting_doc_ids must be non-empty".into(),
            });
        }
        if q.gold_answer.is_empty() {
            return Err(CorpusError::InvalidQuestion {
                question_id: q.id.clone(),
                reason: "gold_answer must be non-empty".into(),
            });
        }
        let supporting: HashSet<&str> = q.supporting_doc_ids.iter().map(String::as_str).collect();
        for id in q.supporting_doc_ids.iter().chain(&q.distractor_pool_ids) {
            if corpus.index.get(id).is_none() {
                return Err(CorpusError::DanglingReference {
                    question_id: q.id.clone(),
                    doc_id: id.clone(),
                });
            }
        }
        if q.distractor_pool_ids
            .iter()
            .any(|id| supporting.contains(id.as_str()))
        {
            return Err(CorpusError::InvalidQuestion {
                question_id: q.id.clone(),
                reason: "distractor pool overlaps supporting docs".into(),
            });
        }
    }

    Ok(corpus)
}

fn render_block(doc: &Document) -> String {
    format!("Title: {}\n{}", doc.title, doc.text)
}

/// Assembles a context for one question: all supporting documents plus
/// seeded-random distractors greedily added while they fit the budget,
/// shuffled together.
///
/// Supporting documents are always included; if they alone exceed the
/// budget the result is flagged `over_budget`.
pub fn assemble_context(
    question: &QuestionRecord,
    corpus: &Corpus,
    target_tokens: usize,
    seed: u64,
    estimator: &dyn TokenEstimator,
) -> Result<AssembledContext, CorpusError> {
    assert!(target_tokens > 0, "target_tokens must be positive");

    let resolve = |id: &String| -> Result<&Document, CorpusError> {
        corpus.document(id).ok_or_else(|| CorpusError::DanglingReference {
            question_id: question.id.clone(),
            doc_id: id.clone(),
        })
    };

    let mut selected: Vec<&Document> = Vec::new();
    let mut token_estimate = 0usize;
    for id in &question.supporting_doc_ids {
        let doc = resolve(id)?;
        token_estimate += estimator.estimate(&render_block(doc));
        selected.push(doc);
    }
    let over_budget = token_estimate > target_tokens;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pool: Vec<&String> = question.distractor_pool_ids.iter().collect();
    pool.shuffle(&mut rng);
    for id in pool {
        let doc = resolve(id)?;
        let cost = estimator.estimate(&render_block(doc));
        if token_estimate + cost <= target_tokens {
            token_estimate += cost;
            selected.push(doc);
        }
    }

    selected.shuffle(&mut rng);

    let rendered_text = selected
        .iter()
        .map(|d| render_block(d))
        .collect::<Vec<_>>()
        .join("\n\n");
    let ordered_doc_ids = selected.iter().map(|d| d.id.clone()).collect();

    Ok(AssembledContext {
        question_id: question.id.clone(),
        ordered_doc_ids,
        rendered_text,
        token_estimate,
        target_tokens,
        seed,
        over_budget,
    })
}
