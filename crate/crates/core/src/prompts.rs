//! Prompt construction by single-pass slot filling.
//!
//! Templates live under `templates/` and are compiled in. Slots are written
//! `{name}`; filling walks the template once, so a slot value that happens to
//! contain template syntax or header text is copied through untouched.

use std::fmt::Write as _;

use thiserror::Error;

/// Bumped whenever a template file changes.
pub const TEMPLATE_VERSION: &str = "1";

/// Rendered in place of the example list when nothing was selected.
pub const NO_EXAMPLES: &str = "(no examples)";

const GENERATION: &str = include_str!("../templates/example_generation.txt");
const FILTERING: &str = include_str!("../templates/example_filtering.txt");
const INFERENCE: &str = include_str!("../templates/final_inference.txt");
const LINKING: &str = include_str!("../templates/schema_linking.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template slot `{0}` requires a non-empty value")]
    MissingSlot(String),
    #[error("template has no slot named `{0}`")]
    UnknownSlot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptStage {
    SchemaLinking,
    ExampleGeneration,
    ExampleFiltering,
    FinalInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub stage: PromptStage,
    pub body: &'static str,
    pub slot_names: Vec<&'static str>,
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn split_segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}').map(|c| open + c) else { break };
        let name = &rest[open + 1..close];
        if !is_slot_name(name) {
            out.push(Segment::Literal(&rest[..=open]));
            rest = &rest[open + 1..];
            continue;
        }
        if open > 0 {
            out.push(Segment::Literal(&rest[..open]));
        }
        out.push(Segment::Slot(name));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    out
}

impl PromptTemplate {
    pub fn new(stage: PromptStage) -> Self {
        let body = match stage {
            PromptStage::SchemaLinking => LINKING,
            PromptStage::ExampleGeneration => GENERATION,
            PromptStage::ExampleFiltering => FILTERING,
            PromptStage::FinalInference => INFERENCE,
        };
        let mut slot_names = Vec::new();
        for seg in split_segments(body) {
            if let Segment::Slot(name) = seg {
                if !slot_names.contains(&name) {
                    slot_names.push(name);
                }
            }
        }
        PromptTemplate {
            stage,
            body,
            slot_names,
        }
    }

    pub fn segments(&self) -> Vec<Segment<'static>> {
        split_segments(self.body)
    }

    /// Fills every slot. `optional` names may receive empty values.
    pub fn fill(&self, values: &[(&str, &str)], optional: &[&str]) -> Result<String, PromptError> {
        for (name, _) in values {
            if !self.slot_names.contains(name) {
                return Err(PromptError::UnknownSlot(name.to_string()));
            }
        }
        let mut out = String::with_capacity(self.body.len() + 256);
        for seg in self.segments() {
            match seg {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(name) => {
                    let value = values
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, v)| *v)
                        .unwrap_or("");
                    if value.trim().is_empty() && !optional.contains(&name) {
                        return Err(PromptError::MissingSlot(name.to_string()));
                    }
                    out.push_str(&normalize_newlines(value));
                }
            }
        }
        Ok(out)
    }
}

fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n")
}

pub fn build_schema_linking_prompt(tables: &str, fks: &str, question: &str) -> Result<String, PromptError> {
    PromptTemplate::new(PromptStage::SchemaLinking).fill(
        &[("tables", tables), ("foreign_keys", fks), ("question", question)],
        &[],
    )
}

/// `schema_linking` may be empty (schema-linking ablation).
pub fn build_generation_prompt(
    schema_linking: &str,
    tables: &str,
    fks: &str,
    question: &str,
) -> Result<String, PromptError> {
    PromptTemplate::new(PromptStage::ExampleGeneration).fill(
        &[
            ("schema_linking", schema_linking),
            ("tables", tables),
            ("foreign_keys", fks),
            ("question", question),
        ],
        &["schema_linking"],
    )
}

pub fn build_filtering_prompt(
    test_question: &str,
    similar_question: &str,
    reasoning_path: &str,
) -> Result<String, PromptError> {
    PromptTemplate::new(PromptStage::ExampleFiltering).fill(
        &[
            ("question", test_question),
            ("similar_question", similar_question),
            ("reasoning_path", reasoning_path),
        ],
        &[],
    )
}

/// An empty `filtered_examples` renders the [`NO_EXAMPLES`] sentinel.
pub fn build_inference_prompt(
    tables: &str,
    fks: &str,
    question: &str,
    filtered_examples: &str,
) -> Result<String, PromptError> {
    let examples = if filtered_examples.trim().is_empty() {
        NO_EXAMPLES
    } else {
        filtered_examples
    };
    PromptTemplate::new(PromptStage::FinalInference).fill(
        &[
            ("tables", tables),
            ("foreign_keys", fks),
            ("question", question),
            ("filtered_examples", examples),
        ],
        &[],
    )
}

/// An example as it appears inside the final-inference prompt.
#[derive(Debug, Clone, Copy)]
pub struct ExampleBlock<'a> {
    pub question: &'a str,
    pub sql: &'a str,
    pub reasoning: &'a str,
}

/// Numbered `Example k:` blocks, in the order given. Without reasoning the
/// `Reasoning:` line is left out entirely.
pub fn format_examples(examples: &[ExampleBlock<'_>], include_reasoning: bool) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "Example {}:\nQuestion: {}\nSQL: {}", i + 1, ex.question.trim(), ex.sql.trim());
        if include_reasoning {
            let _ = write!(out, "\nReasoning: {}", ex.reasoning.trim());
        }
    }
    out
}
