//! Prompt templates for sampling and self-evaluation, plus parsers for the
//! structured responses they ask for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("argument {0:?} must be non-empty")]
    EmptyArgument(&'static str),
    #[error("no well-formed rating \"[[n]]\" with n in 1..=5 found")]
    NoRating,
    #[error("response contains neither a \"True\" nor a \"False\" token")]
    Unparseable,
}

/// The five prompting strategies for long-context reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStrategy {
    Default,
    DirectAnswer,
    StepByStep,
    FactAndReflection,
    PlanAndSolve,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 5] = [
        PromptStrategy::Default,
        PromptStrategy::DirectAnswer,
        PromptStrategy::StepByStep,
        PromptStrategy::FactAndReflection,
        PromptStrategy::PlanAndSolve,
    ];

    /// The instruction sentence appended after the question, if any.
    fn instruction(self) -> Option<&'static str> {
        match self {
            PromptStrategy::Default => None,
            PromptStrategy::DirectAnswer => Some("Let's answer the question directly."),
            PromptStrategy::StepByStep => Some("Let's think step by step."),
            PromptStrategy::FactAndReflection => Some(
                "Let's first identify the relevant information from the long context and \
                 list it. Then, carry out step-by-step reasoning based on that information, \
                 and finally, provide the answer.",
            ),
            PromptStrategy::PlanAndSolve => Some(
                "Let's first understand the problem and devise a plan to solve it. Then, \
                 let's carry out the plan and solve the problem step-by-step.",
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub strategy: PromptStrategy,
    pub question_id: String,
}

/// Renders a sampling prompt: context, blank line, question, then the
/// strategy's instruction sentence on its own line (Default has none).
pub fn render_prompt(
    strategy: PromptStrategy,
    context_text: &str,
    question: &str,
) -> Result<RenderedPrompt, PromptError> {
    if question.is_empty() {
        return Err(PromptError::EmptyArgument("question"));
    }
    let text = match strategy.instruction() {
        None => format!("{context_text}\n\n{question}"),
        Some(instruction) => format!("{context_text}\n\n{question}\n{instruction}"),
    };
    Ok(RenderedPrompt {
        text,
        strategy,
        question_id: String::new(),
    })
}

/// Renders the reference-free self-evaluation prompt: rate a predicted
/// response from 1 to 5 given the context and question.
pub fn render_reference_free_eval(
    context: &str,
    question: &str,
    prediction: &str,
) -> Result<RenderedPrompt, PromptError> {
    for (name, value) in [
        ("context", context),
        ("question", question),
        ("prediction", prediction),
    ] {
        if value.is_empty() {
            return Err(PromptError::EmptyArgument(name));
        }
    }
    let text = format!(
        "[Context]\n{context}\n\n[Question]\n{question}\n\n[Predicted Response]\n{prediction}\n\n\
         Please evaluate the correctness of the predicted response based on the context and \
         the question. Begin your evaluation by providing a brief explanation. Be as objective \
         as possible. After giving your explanation, you must rate the response on a scale \
         from 1 to 5, following this format exactly: \"[[rating]]\". For example, \
         \"Rating: [[3]]\"."
    );
    Ok(RenderedPrompt {
        text,
        strategy: PromptStrategy::Default,
        question_id: String::new(),
    })
}

/// Renders the reference-based self-evaluation prompt: decide whether two
/// responses give the same answer, replying "True" or "False".
pub fn render_reference_based_eval(
    question: &str,
    reference: &str,
    prediction: &str,
) -> Result<RenderedPrompt, PromptError> {
    for (name, value) in [
        ("question", question),
        ("reference", reference),
        ("prediction", prediction),
    ] {
        if value.is_empty() {
            return Err(PromptError::EmptyArgument(name));
        }
    }
    let text = format!(
        "Here is a question along with two responses: one is the reference response, and the \
         other is the predicted response. Please determine whether the two responses provide \
         the same answer to the question. Respond with \"True\" or \"False\" directly.\n\n\
         [Question]\n{question}\n\n[Reference Response]\n{reference}\n\n\
         [Predicted Response]\n{prediction}"
    );
    Ok(RenderedPrompt {
        text,
        strategy: PromptStrategy::Default,
        question_id: String::new(),
    })
}

/// Extracts the rating from the last "[[n]]" with n in 1..=5.
///
/// Models often restate the scale before the final verdict, so the last
/// in-range match wins.
pub fn parse_rating(response_text: &str) -> Result<u8, PromptError> {
    let re = regex::Regex::new(r"\[\[(\d+)\]\]").unwrap();
    re.captures_iter(response_text)
        .filter_map(|c| c[1].parse::<u8>().ok())
        .filter(|n| (1..=5).contains(n))
        .last()
        .ok_or(PromptError::NoRating)
}

/// Finds the first standalone "true"/"false" token, case-insensitive,
/// with surrounding punctuation trimmed.
pub fn parse_true_false(response_text: &str) -> Result<bool, PromptError> {
    for token in response_text.split_whitespace() {
        let word = token.trim_matches(|c: char| c.is_ascii_punctuation());
        if word.eq_ignore_ascii_case("true") {
            return Ok(true);
        }
        if word.eq_ignore_ascii_case("false") {
            return Ok(false);
        }
    }
    Err(PromptError::Unparseable)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_context_and_question_only() {
        let p = render_prompt(PromptStrategy::Default, "C", "Q").unwrap();
        assert_eq!(p.text, "C\n\nQ");
    }

    #[test]
    fn step_by_step_appends_instruction() {
        let p = render_prompt(PromptStrategy::StepByStep, "C", "Q").unwrap();
        assert_eq!(p.text, "C\n\nQ\nLet's think step by step.");
    }

    #[test]
    fn plan_and_solve_ending() {
        let p = render_prompt(PromptStrategy::PlanAndSolve, "C", "Q").unwrap();
        assert!(p
            .text
            .ends_with("carry out the plan and solve the problem step-by-step."));
    }

    #[test]
    fn every_strategy_contains_context_and_question_once() {
        for strategy in PromptStrategy::ALL {
            let p = render_prompt(strategy, "UNIQUE_CTX", "UNIQUE_QST").unwrap();
            assert_eq!(p.text.matches("UNIQUE_CTX").count(), 1);
            assert_eq!(p.text.matches("UNIQUE_QST").count(), 1);
        }
    }

    #[test]
    fn empty_question_rejected() {
        assert_eq!(
            render_prompt(PromptStrategy::Default, "C", "").unwrap_err(),
            PromptError::EmptyArgument("question")
        );
    }

    #[test]
    fn reference_free_layout() {
        let p = render_reference_free_eval("ctx", "q", "pred").unwrap();
        assert!(p.text.contains("[Context]\nctx"));
        assert!(p.text.contains("[Question]\nq"));
        assert!(p.text.contains("[Predicted Response]\npred"));
        assert!(p.text.contains("For example, \"Rating: [[3]]\""));
    }

    #[test]
    fn reference_free_empty_question_rejected() {
        assert!(render_reference_free_eval("ctx", "", "pred").is_err());
    }

    #[test]
    fn reference_based_layout() {
        let p = render_reference_based_eval("q", "ref", "pred").unwrap();
        assert!(p.text.contains("[Reference Response]\nref"));
        assert!(p.text.contains("[Predicted Response]\npred"));
        assert!(p.text.contains("Respond with \"True\" or \"False\" directly."));
    }

    #[test]
    fn reference_based_placeholders_verbatim() {
        let p = render_reference_based_eval("q\"{}", "<ref>", "p&p").unwrap();
        assert!(p.text.contains("q\"{}"));
        assert!(p.text.contains("<ref>"));
        assert!(p.text.contains("p&p"));
    }

    #[test]
    fn reference_based_empty_reference_rejected() {
        assert!(render_reference_based_eval("q", "", "pred").is_err());
    }

    #[test]
    fn rating_simple() {
        assert_eq!(parse_rating("Rating: [[3]]").unwrap(), 3);
    }

    #[test]
    fn rating_takes_last_in_range() {
        assert_eq!(parse_rating("scale [[2]] ... final: [[4]]").unwrap(), 4);
    }

    #[test]
    fn rating_out_of_range_rejected() {
        assert_eq!(parse_rating("Rating: [[7]]").unwrap_err(), PromptError::NoRating);
    }

    #[test]
    fn rating_round_trip_all_values() {
        for k in 1..=5u8 {
            let text = format!("after deliberation: [[{k}]]");
            assert_eq!(parse_rating(&text).unwrap(), k);
        }
    }

    #[test]
    fn true_false_parsing() {
        assert!(parse_true_false("True").unwrap());
        assert!(!parse_true_false("false.").unwrap());
        assert!(parse_true_false("The answer is \"TRUE\"!").unwrap());
        assert_eq!(
            parse_true_false("maybe").unwrap_err(),
            PromptError::Unparseable
        );
    }
}
