//! Builds SFT and preference training datasets from scored sample sets and
//! serializes them as line-delimited JSON with a sibling manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoredSet;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("manifest not found next to {0}")]
    MissingManifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

fn user_message(content: &str) -> Vec<ChatMessage> {
    vec![ChatMessage {
        role: "user".to_string(),
        content: content.to_string(),
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: String,
    pub prompt: Vec<ChatMessage>,
    pub response: String,
    pub meta: SftMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub utility: String,
    pub seed: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub id: String,
    pub prompt: Vec<ChatMessage>,
    pub chosen: String,
    pub rejected: String,
    pub meta: PreferenceMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMeta {
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub rejected_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_examples: usize,
    pub n_samples_per_example: usize,
    pub context_token_range: (usize, usize),
    pub temperature: f64,
    pub utility: String,
    pub creation_seed: u64,
    pub config_hash: String,
    /// Reason -> count of scored sets that produced no example.
    pub skipped: BTreeMap<String, usize>,
}

#[derive(Debug)]
pub struct BuildOutcome<T> {
    pub examples: Vec<T>,
    pub skipped: BTreeMap<String, usize>,
}

impl<T> Default for BuildOutcome<T> {
    fn default() -> Self {
        BuildOutcome {
            examples: Vec::new(),
            skipped: BTreeMap::new(),
        }
    }
}

/// One SFT example per non-degraded set: the prompt and its MBR-selected
/// output.
pub fn build_sft_dataset(scored_sets: &[ScoredSet]) -> BuildOutcome<SftExample> {
    let mut outcome = BuildOutcome::default();
    for set in scored_sets {
        if set.degraded {
            *outcome.skipped.entry("degraded".to_string()).or_default() += 1;
            continue;
        }
        outcome.examples.push(SftExample {
            id: set.question_id.clone(),
            prompt: user_message(&set.prompt_text),
            response: set.selected_output().to_string(),
            meta: SftMeta {
                utility: set.utility.clone(),
                seed: set.seed,
                score: set.scores[set.selected_index],
            },
        });
    }
    outcome
}

/// One preference pair per usable set: chosen is the MBR winner, rejected
/// is drawn seeded-uniformly from the bottom half of outputs by score rank
/// (excluding anything string-equal to the chosen output). Sets where no
/// distinct rejected output exists are skipped, never fabricated.
pub fn build_preference_dataset(
    scored_sets: &[ScoredSet],
    seed: u64,
) -> BuildOutcome<PreferenceExample> {
    let mut outcome = BuildOutcome::default();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for set in scored_sets {
        if set.degraded {
            *outcome.skipped.entry("degraded".to_string()).or_default() += 1;
            continue;
        }
        let n = set.outputs.len();
        let chosen = set.selected_output();

        // Rank ascending by score, index as tie-break, and keep the bottom
        // half as rejected candidates.
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by(|&a, &b| {
            set.scores[a]
                .partial_cmp(&set.scores[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        let candidates: Vec<usize> = ranked
            .into_iter()
            .take(n / 2)
            .filter(|&i| set.outputs[i] != chosen)
            .collect();

        if candidates.is_empty() {
            *outcome
                .skipped
                .entry("no_distinct_rejected".to_string())
                .or_default() += 1;
            continue;
        }
        let rejected_index = candidates[rng.gen_range(0..candidates.len())];
        outcome.examples.push(PreferenceExample {
            id: set.question_id.clone(),
            prompt: user_message(&set.prompt_text),
            chosen: chosen.to_string(),
            rejected: set.outputs[rejected_index].clone(),
            meta: PreferenceMeta {
                chosen_score: set.scores[set.selected_index],
                rejected_score: set.scores[rejected_index],
                rejected_index,
                seed,
            },
        });
    }
    outcome
}

fn manifest_path(dataset_path: &Path) -> PathBuf {
    let mut name = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".to_string());
    name.push_str(".manifest.json");
    dataset_path.with_file_name(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one JSON record per line plus a sibling manifest file.
pub fn serialize_dataset<T: Serialize>(
    examples: &[T],
    mut manifest: DatasetManifest,
    path: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    for example in examples {
        let line = serde_json::to_string(example).expect("serializable example");
        writeln!(writer, "{line}").map_err(io_err(path))?;
    }
    writer.flush().map_err(io_err(path))?;

    manifest.n_examples = examples.len();
    let mpath = manifest_path(path);
    let mfile = File::create(&mpath).map_err(io_err(&mpath))?;
    serde_json::to_writer_pretty(BufWriter::new(mfile), &manifest)
        .map_err(|e| DatasetError::Io {
            path: mpath.clone(),
            source: std::io::Error::other(e),
        })?;
    Ok(manifest)
}

/// One invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
    pub manifest_count_matches: bool,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.manifest_count_matches
    }
}

/// Re-parses every line of a serialized dataset, re-checks the type
/// invariants, and cross-checks the manifest count.
pub fn validate_dataset(path: &Path) -> Result<ValidationReport, DatasetError> {
    let mpath = manifest_path(path);
    let manifest: DatasetManifest = {
        let file = File::open(&mpath).map_err(|_| DatasetError::MissingManifest(mpath.clone()))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|source| DatasetError::Malformed {
            line: 0,
            source,
        })?
    };

    let file = File::open(path).map_err(io_err(path))?;
    let mut violations = Vec::new();
    let mut records = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        // Try preference first; fall back to SFT.
        if let Ok(pref) = serde_json::from_str::<PreferenceExample>(&line) {
            if pref.chosen == pref.rejected {
                violations.push(Violation {
                    line: line_no,
                    message: "chosen equals rejected".to_string(),
                });
            }
            if pref.meta.chosen_score < pref.meta.rejected_score {
                violations.push(Violation {
                    line: line_no,
                    message: "chosen_score below rejected_score".to_string(),
                });
            }
            continue;
        }
        match serde_json::from_str::<SftExample>(&line) {
            Ok(sft) => {
                if sft.response.is_empty() {
                    violations.push(Violation {
                        line: line_no,
                        message: "empty response".to_string(),
                    });
                }
            }
            Err(source) => return Err(DatasetError::Malformed { line: line_no, source }),
        }
    }

    Ok(ValidationReport {
        records,
        manifest_count_matches: records == manifest.n_examples,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(id: &str, outputs: &[&str], scores: &[f64], degraded: bool) -> ScoredSet {
        let scores = scores.to_vec();
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        ScoredSet {
            question_id: id.into(),
            prompt_text: format!("prompt for {id}"),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            scores,
            utility: "rouge-l".into(),
            selected_index: best,
            utility_matrix: None,
            degraded,
            seed: 0,
        }
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            n_examples: 0,
            n_samples_per_example: 4,
            context_token_range: (4096, 31744),
            temperature: 0.7,
            utility: "rouge-l".into(),
            creation_seed: 0,
            config_hash: "deadbeef".into(),
            skipped: BTreeMap::new(),
        }
    }

    #[test]
    fn sft_skips_degraded() {
        let sets = vec![
            scored("a", &["x", "y"], &[0.9, 0.1], false),
            scored("b", &["x", "y"], &[0.9, 0.1], true),
            scored("c", &["x", "y"], &[0.1, 0.9], false),
        ];
        let outcome = build_sft_dataset(&sets);
        assert_eq!(outcome.examples.len(), 2);
        assert_eq!(outcome.skipped["degraded"], 1);
        assert_eq!(outcome.examples[1].response, "y");
    }

    #[test]
    fn sft_empty_input() {
        assert!(build_sft_dataset(&[]).examples.is_empty());
    }

    #[test]
    fn preference_rejected_from_bottom_half() {
        let sets = vec![scored(
            "a",
            &["best", "bad1", "mid", "bad2"],
            &[0.9, 0.2, 0.4, 0.1],
            false,
        )];
        for seed in 0..20 {
            let outcome = build_preference_dataset(&sets, seed);
            let ex = &outcome.examples[0];
            assert_eq!(ex.chosen, "best");
            assert!(ex.rejected == "bad1" || ex.rejected == "bad2", "{}", ex.rejected);
            assert!(ex.meta.chosen_score >= ex.meta.rejected_score);
        }
    }

    #[test]
    fn preference_all_identical_skipped() {
        let sets = vec![scored("a", &["s", "s", "s", "s"], &[1.0, 1.0, 1.0, 1.0], false)];
        let outcome = build_preference_dataset(&sets, 1);
        assert!(outcome.examples.is_empty());
        assert_eq!(outcome.skipped["no_distinct_rejected"], 1);
    }

    #[test]
    fn preference_deterministic_for_seed() {
        let sets = vec![scored(
            "a",
            &["best", "bad1", "mid", "bad2"],
            &[0.9, 0.2, 0.4, 0.1],
            false,
        )];
        let a = build_preference_dataset(&sets, 5);
        let b = build_preference_dataset(&sets, 5);
        assert_eq!(a.examples, b.examples);
    }

    #[test]
    fn serialize_validate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        let sets = vec![
            scored("a", &["best", "bad", "worse", "meh"], &[0.9, 0.2, 0.1, 0.5], false),
            scored("b", &["top", "low", "lower", "ok"], &[0.8, 0.3, 0.2, 0.6], false),
        ];
        let outcome = build_preference_dataset(&sets, 3);
        let written = serialize_dataset(&outcome.examples, manifest(), &path).unwrap();
        assert_eq!(written.n_examples, 2);

        let report = validate_dataset(&path).unwrap();
        assert!(report.is_clean(), "{report:?}");

        // Field-for-field round trip.
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<PreferenceExample> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, outcome.examples);
    }

    #[test]
    fn validate_flags_corrupted_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        let sets = vec![scored("a", &["best", "bad", "x", "y"], &[0.9, 0.2, 0.3, 0.4], false)];
        let outcome = build_preference_dataset(&sets, 3);
        serialize_dataset(&outcome.examples, manifest(), &path).unwrap();

        // Corrupt: make chosen equal rejected on line 1.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut record: PreferenceExample = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        record.rejected = record.chosen.clone();
        std::fs::write(&path, format!("{}\n", serde_json::to_string(&record).unwrap())).unwrap();

        let report = validate_dataset(&path).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].line, 1);
        assert!(report.violations[0].message.contains("chosen equals rejected"));
    }

    #[test]
    fn validate_detects_manifest_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let sets = vec![scored("a", &["x", "y"], &[0.9, 0.1], false)];
        let outcome = build_sft_dataset(&sets);
        let mut m = serialize_dataset(&outcome.examples, manifest(), &path).unwrap();
        m.n_examples += 1;
        std::fs::write(
            manifest_path(&path),
            serde_json::to_string(&m).unwrap(),
        )
        .unwrap();
        let report = validate_dataset(&path).unwrap();
        assert!(!report.manifest_count_matches);
    }
}
