//! Execution accuracy, exact match, difficulty buckets and report tables.

pub mod difficulty;
pub mod exec;
pub mod report;
pub mod sketch;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SchemaDb, TestCase};

pub use difficulty::{classify_difficulty, features, Difficulty, DifficultyRules, Features};
pub use exec::{execute_at, has_top_level_order_by, Cell, ResultTable, FLOAT_TOLERANCE};
pub use report::{aggregate, BucketStats, Report};
pub use sketch::{canonical_sql, canonicalize, SketchError, SqlSketch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("gold query is invalid: {0}")]
    GoldInvalid(String),
    #[error("execution error: {0}")]
    Execution(String),
    #[error("query exceeded {0} ms")]
    Timeout(u64),
    #[error("write statement rejected: {0}")]
    WriteRejected(String),
    #[error("database {0} has no sqlite file")]
    MissingDatabase(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub test_case_id: usize,
    pub ex: bool,
    pub em: bool,
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
    #[serde(default)]
    pub gold_invalid: bool,
    #[serde(default)]
    pub fallback_used: bool,
}

fn db_path(db: &SchemaDb) -> Result<&Path, EvalError> {
    match &db.sqlite_path {
        Some(p) if p.exists() => Ok(p),
        _ => Err(EvalError::MissingDatabase(db.db_id.clone())),
    }
}

/// Runs `sql` read-only against the database file of `db`.
pub fn execute(sql: &str, db: &SchemaDb, timeout_ms: u64) -> Result<ResultTable, EvalError> {
    execute_at(db_path(db)?, sql, timeout_ms)
}

fn compare(pred: &ResultTable, gold: &ResultTable, ordered: bool) -> bool {
    if ordered {
        pred.same_sequence(gold)
    } else {
        pred.same_multiset(gold)
    }
}

/// Result-set equality. A failing prediction is simply `false`; a failing
/// gold query is [`EvalError::GoldInvalid`].
pub fn execution_match(pred: &str, gold: &str, db: &SchemaDb, timeout_ms: u64) -> Result<bool, EvalError> {
    let path = db_path(db)?;
    let gold_rows = execute_at(path, gold, timeout_ms).map_err(|e| EvalError::GoldInvalid(e.to_string()))?;
    Ok(match execute_at(path, pred, timeout_ms) {
        Ok(rows) => compare(&rows, &gold_rows, has_top_level_order_by(gold)),
        Err(_) => false,
    })
}

/// Sketch equality after canonicalization. An unparseable prediction is
/// `false`; an unparseable gold query is [`EvalError::GoldInvalid`].
pub fn exact_match(pred: &str, gold: &str) -> Result<bool, EvalError> {
    let gold = SqlSketch::from_sql(gold).map_err(|e| EvalError::GoldInvalid(e.to_string()))?;
    Ok(SqlSketch::from_sql(pred).is_ok_and(|p| p == gold))
}

/// Grades one prediction. Never fails: problems land in `diagnostics`, and
/// gold-side problems set `gold_invalid`.
pub fn evaluate_case(
    case: &TestCase,
    pred: &str,
    db: &SchemaDb,
    rules: &DifficultyRules,
    timeout_ms: u64,
    fallback_used: bool,
) -> EvalOutcome {
    let mut out = EvalOutcome {
        test_case_id: case.id,
        ex: false,
        em: false,
        difficulty: Difficulty::Extra,
        diagnostics: None,
        gold_invalid: false,
        fallback_used,
    };
    match classify_difficulty(&case.gold_sql, rules) {
        Ok(d) => out.difficulty = d,
        Err(e) => {
            out.gold_invalid = true;
            out.diagnostics = Some(format!("gold parse: {e}"));
            return out;
        }
    }
    let path = match db_path(db) {
        Ok(p) => p,
        Err(e) => {
            out.gold_invalid = true;
            out.diagnostics = Some(e.to_string());
            return out;
        }
    };
    let gold_rows = match execute_at(path, &case.gold_sql, timeout_ms) {
        Ok(r) => r,
        Err(e) => {
            out.gold_invalid = true;
            out.diagnostics = Some(format!("gold execution: {e}"));
            return out;
        }
    };
    if pred.trim().is_empty() {
        out.diagnostics = Some("empty prediction".into());
        return out;
    }
    match execute_at(path, pred, timeout_ms) {
        Ok(rows) => out.ex = compare(&rows, &gold_rows, has_top_level_order_by(&case.gold_sql)),
        Err(e) => out.diagnostics = Some(e.to_string()),
    }
    out.em = exact_match(pred, &case.gold_sql).unwrap_or(false);
    if !out.em && out.diagnostics.is_none() && SqlSketch::from_sql(pred).is_err() {
        out.diagnostics = Some("prediction does not parse".into());
    }
    out
}
