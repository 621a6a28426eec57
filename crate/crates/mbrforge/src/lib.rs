//! Self-supervised training data for long-context reasoning: sample many
//! reasoning trajectories per question, score them by Monte-Carlo Minimum
//! Bayes Risk consensus, and emit SFT or preference datasets. Also ships
//! the SubEM evaluation harness, oracle/MBR scaling analysis, and numeric
//! verification of the fine-tuning objectives.

pub mod client;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod losses;
pub mod pipeline;
pub mod prompts;
pub mod scoring;
