//! Final SQL prediction from the selected examples.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SchemaDb, TestCase};
use crate::generation::schema_slots;
use crate::llm::{LlmClient, LlmError, ModelParams, Stage};
use crate::prompts::{build_inference_prompt, format_examples, ExampleBlock, PromptError};
use crate::scoring::ScoredExample;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no SQL statement found in model output")]
pub struct ExtractionFailed;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    Ok,
    InferenceFailed,
    /// An upstream stage failed for this case; no completion was attempted.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub test_case_id: usize,
    pub sql: String,
    pub n_examples_used: usize,
    pub fallback_used: bool,
    pub raw_response: String,
    pub status: PredictionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)(?:```|$)").expect("fence"));
static START: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(select|with|insert)\b").expect("start"));

/// Pulls the first SQL statement out of a model reply, as one line without
/// a trailing semicolon.
pub fn extract_sql(raw: &str) -> Result<String, ExtractionFailed> {
    let text = raw.replace("\r\n", "\n");
    let body = match FENCE.captures(&text) {
        Some(c) if START.is_match(&c[1]) => c[1].to_string(),
        _ => text.replace("```", ""),
    };
    let start = START.find(&body).ok_or(ExtractionFailed)?.start();
    let rest = &body[start..];
    let mut end = rest.len();
    let mut quote: Option<char> = None;
    let mut prev_newline = false;
    for (i, c) in rest.char_indices() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' | '`' => quote = Some(c),
            ';' => {
                end = i;
                break;
            }
            '\n' if prev_newline => {
                end = i;
                break;
            }
            _ => {}
        }
        if c == '\n' {
            prev_newline = true;
        } else if !c.is_whitespace() {
            prev_newline = false;
        }
    }
    let sql = rest[..end].split_whitespace().collect::<Vec<_>>().join(" ");
    if sql.is_empty() {
        Err(ExtractionFailed)
    } else {
        Ok(sql)
    }
}

/// Parseable selected examples, best first (ties to the lower ordinal).
pub fn ordered_selection(scored: &[ScoredExample]) -> Vec<&ScoredExample> {
    let mut chosen: Vec<&ScoredExample> = scored.iter().filter(|s| s.selected && s.example.parse_ok).collect();
    chosen.sort_by(|a, b| {
        b.score
            .rel
            .total_cmp(&a.score.rel)
            .then(a.example.ordinal.cmp(&b.example.ordinal))
    });
    chosen
}

pub fn inference_prompt(
    case: &TestCase,
    db: &SchemaDb,
    selected: &[&ScoredExample],
    include_reasoning: bool,
) -> Result<String, PromptError> {
    let blocks: Vec<ExampleBlock<'_>> = selected
        .iter()
        .map(|s| ExampleBlock {
            question: &s.example.question,
            sql: &s.example.sql,
            reasoning: &s.example.reasoning_path,
        })
        .collect();
    let (tables, fks) = schema_slots(db);
    build_inference_prompt(&tables, &fks, &case.question, &format_examples(&blocks, include_reasoning))
}

/// One completion at the configured (normally zero) temperature over the
/// examples in `scored` that are selected.
pub fn infer_sql(
    client: &LlmClient,
    params: &ModelParams,
    case: &TestCase,
    db: &SchemaDb,
    scored: &[ScoredExample],
    include_reasoning: bool,
    fallback_used: bool,
) -> Result<Prediction, InferenceError> {
    let selected = ordered_selection(scored);
    let prompt = inference_prompt(case, db, &selected, include_reasoning)?;
    let raw = client.complete(&params.request(Stage::Inference, prompt))?;
    let mut p = Prediction {
        test_case_id: case.id,
        sql: String::new(),
        n_examples_used: selected.len(),
        fallback_used,
        raw_response: raw,
        status: PredictionStatus::Ok,
        error: None,
    };
    match extract_sql(&p.raw_response) {
        Ok(sql) => p.sql = sql,
        Err(e) => {
            p.status = PredictionStatus::InferenceFailed;
            p.error = Some(e.to_string());
        }
    }
    Ok(p)
}
