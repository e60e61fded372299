//! Schema linking and self-generated example triplets.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{render_foreign_keys, render_tables, SchemaDb, TestCase};
use crate::eval::sketch::parse_query;
use crate::llm::{LlmClient, LlmError, ModelParams, Stage};
use crate::prompts::{build_generation_prompt, build_schema_linking_prompt, PromptError};

/// Foreign-key slot text for a database without foreign keys.
pub const NO_FOREIGN_KEYS: &str = "(none)";

pub const DEFAULT_EXAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no parseable example in model output")]
    Failed { raw: String },
    #[error("example count must be positive")]
    ZeroExamples,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaLinking {
    pub test_case_id: usize,
    pub linked_elements: String,
    pub referenced_tables: Vec<String>,
    /// The model returned nothing usable.
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedExample {
    pub test_case_id: usize,
    pub ordinal: usize,
    pub question: String,
    pub sql: String,
    pub reasoning_path: String,
    pub parse_ok: bool,
    /// Model output kept for audit on examples that did not parse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl GeneratedExample {
    pub fn stub(test_case_id: usize, ordinal: usize, raw: &str) -> Self {
        GeneratedExample {
            test_case_id,
            ordinal,
            question: String::new(),
            sql: String::new(),
            reasoning_path: String::new(),
            parse_ok: false,
            raw: Some(raw.to_string()),
        }
    }
}

/// `(tables, foreign_keys)` prompt slots for a database.
pub fn schema_slots(db: &SchemaDb) -> (String, String) {
    let tables = render_tables(db).trim_end().to_string();
    let fks = render_foreign_keys(db).trim_end().to_string();
    let fks = if fks.is_empty() { NO_FOREIGN_KEYS.to_string() } else { fks };
    (tables, fks)
}

/// Table names mentioned as whole identifier tokens, in schema order.
pub fn referenced_tables(summary: &str, db: &SchemaDb) -> Vec<String> {
    let tokens: Vec<String> = summary
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    db.table_names()
        .filter(|name| tokens.iter().any(|t| *t == name.to_lowercase()))
        .map(str::to_string)
        .collect()
}

pub fn link_schema(
    client: &LlmClient,
    params: &ModelParams,
    case: &TestCase,
    db: &SchemaDb,
) -> Result<SchemaLinking, GenerationError> {
    let (tables, fks) = schema_slots(db);
    let prompt = build_schema_linking_prompt(&tables, &fks, &case.question)?;
    let reply = client.complete(&params.request(Stage::Generation, prompt))?;
    let summary = reply.trim().to_string();
    Ok(SchemaLinking {
        test_case_id: case.id,
        referenced_tables: referenced_tables(&summary, db),
        failed: summary.is_empty(),
        linked_elements: summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Question,
    Sql,
    Reasoning,
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?im)^[ \t>]*(?:#+[ \t]*)?(?:[-*][ \t]+)?(?:\*\*|__)?[ \t]*(?:(?:example[ \t]*)?\d+[ \t]*[.):\-][ \t]*)?(?:\*\*|__)?[ \t]*(similar[ \t]+questions?|sql[ \t]+query|sql|reasoning[ \t]+path|reasoning)[ \t]*(?:\d+)?[ \t]*(?:\*\*|__)?[ \t]*:[ \t]*(?:\*\*|__)?",
    )
    .expect("header regex")
});

static NOISE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[ \t>#*_\-]*(?:(?:example|question)[ \t]*)?\d*[ \t]*[.):]?[ \t]*[*_]*[ \t]*$").expect("noise regex")
});

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)```").expect("fence regex"));

fn field_of(label: &str) -> Field {
    let l = label.to_lowercase();
    if l.starts_with("similar") {
        Field::Question
    } else if l.starts_with("sql") {
        Field::Sql
    } else {
        Field::Reasoning
    }
}

/// Drops separator/numbering lines around a field body.
fn trim_noise(body: &str) -> String {
    let lines: Vec<&str> = body.lines().collect();
    let keep = |l: &&str| !NOISE_LINE.is_match(l);
    let start = lines.iter().position(keep).unwrap_or(lines.len());
    let end = lines.iter().rposition(keep).map_or(start, |i| i + 1);
    lines[start..end.max(start)].join("\n").trim().to_string()
}

/// First paragraph only, so trailing chatter after the last block is dropped.
fn clean_text(body: &str) -> String {
    let text = trim_noise(body);
    let para = text.split("\n\n").next().unwrap_or("");
    para.trim_matches(|c| c == '*' || c == '_').trim().to_string()
}

fn clean_sql(body: &str) -> String {
    let inner = match FENCE.captures(body) {
        Some(c) => c[1].to_string(),
        None => body.replace("```", ""),
    };
    trim_noise(&inner)
        .trim()
        .trim_start_matches('`')
        .trim_end_matches('`')
        .trim()
        .trim_end_matches(';')
        .trim()
        .to_string()
}

/// Triplets in document order. A block whose headers appear out of order is
/// skipped; a triplet with any empty field is dropped.
pub fn parse_example_blocks(raw: &str) -> Vec<(String, String, String)> {
    let text = raw.replace("\r\n", "\n");
    let headers: Vec<(Field, usize, usize)> = HEADER
        .captures_iter(&text)
        .map(|c| {
            let whole = c.get(0).expect("match");
            (field_of(&c[1]), whole.start(), whole.end())
        })
        .collect();
    let mut out = Vec::new();
    let mut pending: (Option<String>, Option<String>) = (None, None);
    for (i, &(field, _, body_start)) in headers.iter().enumerate() {
        let body_end = headers.get(i + 1).map_or(text.len(), |h| h.1);
        let body = &text[body_start..body_end];
        match (field, &pending) {
            (Field::Question, _) => pending = (Some(clean_text(body)), None),
            (Field::Sql, (Some(_), None)) => pending.1 = Some(clean_sql(body)),
            (Field::Reasoning, (Some(q), Some(s))) => {
                let r = clean_text(body);
                if !q.is_empty() && !s.is_empty() && !r.is_empty() {
                    out.push((q.clone(), s.clone(), r));
                }
                pending = (None, None);
            }
            _ => pending = (None, None),
        }
    }
    out
}

/// One completion, parsed into exactly `n` examples: parsed triplets first,
/// then `parse_ok = false` stubs so ordinals stay dense.
pub fn generate_examples(
    client: &LlmClient,
    params: &ModelParams,
    case: &TestCase,
    db: &SchemaDb,
    schema_linking: &str,
    n: usize,
) -> Result<Vec<GeneratedExample>, GenerationError> {
    if n == 0 {
        return Err(GenerationError::ZeroExamples);
    }
    let (tables, fks) = schema_slots(db);
    let prompt = build_generation_prompt(schema_linking, &tables, &fks, &case.question)?;
    let raw = client.complete(&params.request(Stage::Generation, prompt))?;
    examples_from_reply(case.id, &raw, n)
}

pub fn examples_from_reply(test_case_id: usize, raw: &str, n: usize) -> Result<Vec<GeneratedExample>, GenerationError> {
    let triplets = parse_example_blocks(raw);
    if triplets.is_empty() {
        return Err(GenerationError::Failed { raw: raw.to_string() });
    }
    let mut out: Vec<GeneratedExample> = triplets
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(ordinal, (question, sql, reasoning_path))| {
            let parse_ok = parse_query(&sql).is_ok();
            GeneratedExample {
                test_case_id,
                ordinal,
                question,
                sql,
                reasoning_path,
                parse_ok,
                raw: (!parse_ok).then(|| raw.to_string()),
            }
        })
        .collect();
    while out.len() < n {
        out.push(GeneratedExample::stub(test_case_id, out.len(), raw));
    }
    Ok(out)
}
