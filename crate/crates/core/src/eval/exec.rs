use std::cmp::Ordering;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::Serialize;

use super::EvalError;

/// Absolute tolerance for numeric cells.
pub const FLOAT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Int(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    /// Total order used to sort rows for multiset comparison.
    fn order(&self, other: &Cell) -> Ordering {
        match (self.as_number(), other.as_number()) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            _ => match (self, other) {
                (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
                (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
                _ => self.rank().cmp(&other.rank()),
            },
        }
    }

    /// Equality with numeric tolerance; NULL only equals NULL.
    pub fn matches(&self, other: &Cell) -> bool {
        match (self.as_number(), other.as_number()) {
            (Some(a), Some(b)) => (a - b).abs() <= FLOAT_TOLERANCE || a == b,
            _ => match (self, other) {
                (Cell::Null, Cell::Null) => true,
                (Cell::Text(a), Cell::Text(b)) => a == b,
                (Cell::Blob(a), Cell::Blob(b)) => a == b,
                _ => false,
            },
        }
    }
}

fn row_order(a: &[Cell], b: &[Cell]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.order(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn rows_match(a: &[Vec<Cell>], b: &[Vec<Cell>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(ra, rb)| ra.len() == rb.len() && ra.iter().zip(rb).all(|(x, y)| x.matches(y)))
}

/// Query output. `rows` keeps execution order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub columns: usize,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn ordered_rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    fn sorted_rows(&self) -> Vec<Vec<Cell>> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| row_order(a, b));
        rows
    }

    /// Order-sensitive comparison.
    pub fn same_sequence(&self, other: &ResultTable) -> bool {
        self.columns == other.columns && rows_match(&self.rows, &other.rows)
    }

    /// Multiset comparison.
    pub fn same_multiset(&self, other: &ResultTable) -> bool {
        self.columns == other.columns && rows_match(&self.sorted_rows(), &other.sorted_rows())
    }
}

/// Opens `path` read-only and runs one statement with a wall-clock budget.
/// Statements that could write are refused before stepping.
pub fn execute_at(path: &Path, sql: &str, timeout_ms: u64) -> Result<ResultTable, EvalError> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )
    .map_err(|e| EvalError::Execution(format!("opening {}: {e}", path.display())))?;
    let started = Instant::now();
    let budget = Duration::from_millis(timeout_ms);
    conn.progress_handler(1000, Some(move || started.elapsed() > budget))
        .map_err(|e| EvalError::Execution(e.to_string()))?;

    let trimmed = sql.trim().trim_end_matches(';').trim();
    let mut stmt = conn
        .prepare(trimmed)
        .map_err(|e| EvalError::Execution(e.to_string()))?;
    if !stmt.readonly() {
        return Err(EvalError::WriteRejected(format!("{trimmed:.60}")));
    }
    let columns = stmt.column_count();
    let mut rows = Vec::new();
    let mut cursor = stmt.query([]).map_err(|e| classify(e, started, budget))?;
    loop {
        match cursor.next() {
            Ok(Some(row)) => {
                let mut out = Vec::with_capacity(columns);
                for i in 0..columns {
                    let cell = match row.get_ref(i).map_err(|e| EvalError::Execution(e.to_string()))? {
                        ValueRef::Null => Cell::Null,
                        ValueRef::Integer(v) => Cell::Int(v),
                        ValueRef::Real(v) => Cell::Real(v),
                        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                        ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
                    };
                    out.push(cell);
                }
                rows.push(out);
            }
            Ok(None) => break,
            Err(e) => return Err(classify(e, started, budget)),
        }
    }
    Ok(ResultTable { columns, rows })
}

fn classify(e: rusqlite::Error, started: Instant, budget: Duration) -> EvalError {
    let interrupted = matches!(
        &e,
        rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted
    );
    if interrupted || started.elapsed() > budget {
        EvalError::Timeout(budget.as_millis() as u64)
    } else {
        EvalError::Execution(e.to_string())
    }
}

/// Whether the top-level statement ends in an `ORDER BY` (outside any
/// parentheses and string literals).
pub fn has_top_level_order_by(sql: &str) -> bool {
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut words: Vec<(i32, String)> = Vec::new();
    let mut current = String::new();
    for c in sql.chars() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' | '`' => quote = Some(c),
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if c.is_alphanumeric() || c == '_' {
            current.push(c.to_ascii_uppercase());
        } else if !current.is_empty() {
            words.push((depth, std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        words.push((depth, current));
    }
    words
        .windows(2)
        .any(|w| w[0].0 == 0 && w[1].0 == 0 && w[0].1 == "ORDER" && w[1].1 == "BY")
}
