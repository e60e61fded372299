//! Spider-format benchmark ingestion.
//!
//! Reads `tables.json` and `dev.json`/`train.json` as distributed and turns
//! them into immutable [`SchemaDb`] and [`TestCase`] values. Physical
//! identifiers (`*_original` fields) are kept so that rendered schemas match
//! what SQLite actually executes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} at line {line}, column {column} (byte offset {offset}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("schema integrity error in database `{db_id}`: {detail}")]
    SchemaIntegrity { db_id: String, detail: String },
    #[error("test cases reference unknown databases: {}", offenders.join(", "))]
    UnknownDatabase { offenders: Vec<String> },
    #[error("test case {index} is invalid: {detail}")]
    InvalidCase { index: usize, detail: String },
}

/// Spider's column type vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Number,
    Time,
    Boolean,
    Others,
}

impl ColumnType {
    /// Maps a raw type string; anything outside the vocabulary becomes `Others`.
    pub fn from_spider(raw: &str) -> (Self, bool) {
        match raw.trim().to_ascii_lowercase().as_str() {
            "text" => (ColumnType::Text, true),
            "number" => (ColumnType::Number, true),
            "time" => (ColumnType::Time, true),
            "boolean" => (ColumnType::Boolean, true),
            "others" => (ColumnType::Others, true),
            _ => (ColumnType::Others, false),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Number => "number",
            ColumnType::Time => "time",
            ColumnType::Boolean => "boolean",
            ColumnType::Others => "others",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

/// A (table index, column index) pair into [`SchemaDb::tables`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child: ColumnRef,
    pub parent: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDb {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    pub foreign_keys: Vec<ForeignKey>,
    pub primary_keys: Vec<ColumnRef>,
    /// Present only when `<db_dir>/<db_id>/<db_id>.sqlite` existed at load time.
    pub sqlite_path: Option<PathBuf>,
}

impl SchemaDb {
    pub fn column(&self, r: ColumnRef) -> Option<(&TableDef, &ColumnDef)> {
        let table = self.tables.get(r.table)?;
        Some((table, table.columns.get(r.column)?))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|t| t.name.as_str())
    }

    /// Checks every structural invariant: unique table names, unique column
    /// names per table, in-bounds column refs for keys.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let integrity = |detail: String| DatasetError::SchemaIntegrity {
            db_id: self.db_id.clone(),
            detail,
        };
        let mut seen = HashSet::new();
        for table in &self.tables {
            if !seen.insert(table.name.to_lowercase()) {
                return Err(integrity(format!("duplicate table name `{}`", table.name)));
            }
            let mut cols = HashSet::new();
            for col in &table.columns {
                if !cols.insert(col.name.to_lowercase()) {
                    return Err(integrity(format!(
                        "duplicate column `{}` in table `{}`",
                        col.name, table.name
                    )));
                }
            }
        }
        for fk in &self.foreign_keys {
            for end in [fk.child, fk.parent] {
                if self.column(end).is_none() {
                    return Err(integrity(format!(
                        "foreign key endpoint ({}, {}) does not name a column",
                        end.table, end.column
                    )));
                }
            }
        }
        for pk in &self.primary_keys {
            if self.column(*pk).is_none() {
                return Err(integrity(format!(
                    "primary key ({}, {}) does not name a column",
                    pk.table, pk.column
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: usize,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawKey {
    Single(i64),
    Composite(Vec<i64>),
}

#[derive(Debug, Deserialize)]
struct RawSchema {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    foreign_keys: Vec<(i64, i64)>,
    #[serde(default)]
    primary_keys: Vec<RawKey>,
}

#[derive(Debug, Deserialize)]
struct RawCase {
    db_id: String,
    question: String,
    query: String,
}

fn read_file(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, DatasetError> {
    serde_json::from_str(text).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        let offset = text
            .split_inclusive('\n')
            .take(line.saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + column.saturating_sub(1);
        DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            offset,
            message: e.to_string(),
        }
    })
}

fn convert_schema(raw: RawSchema, db_dir: &Path) -> Result<SchemaDb, DatasetError> {
    let integrity = |detail: String| DatasetError::SchemaIntegrity {
        db_id: raw.db_id.clone(),
        detail,
    };
    if raw.column_types.len() != raw.column_names_original.len() {
        return Err(integrity(format!(
            "{} column names but {} column types",
            raw.column_names_original.len(),
            raw.column_types.len()
        )));
    }

    let mut tables: Vec<TableDef> = raw
        .table_names_original
        .iter()
        .map(|name| TableDef {
            name: name.clone(),
            columns: Vec::new(),
        })
        .collect();

    // Global Spider column index -> ColumnRef. Index 0 is the `*` pseudo-column.
    let mut global: HashMap<i64, ColumnRef> = HashMap::new();
    for (idx, ((table_idx, name), raw_ty)) in raw
        .column_names_original
        .iter()
        .zip(&raw.column_types)
        .enumerate()
    {
        if *table_idx < 0 {
            continue;
        }
        let table = tables
            .get_mut(*table_idx as usize)
            .ok_or_else(|| integrity(format!("column `{name}` names missing table {table_idx}")))?;
        let (ty, known) = ColumnType::from_spider(raw_ty);
        if !known {
            log::warn!(
                "{}: unknown column type `{raw_ty}` for `{}.{name}`, using `others`",
                raw.db_id,
                table.name
            );
        }
        global.insert(
            idx as i64,
            ColumnRef {
                table: *table_idx as usize,
                column: table.columns.len(),
            },
        );
        table.columns.push(ColumnDef {
            name: name.clone(),
            ty,
        });
    }

    let lookup = |idx: i64, what: &str| {
        global
            .get(&idx)
            .copied()
            .ok_or_else(|| integrity(format!("dangling {what} column index {idx}")))
    };
    let mut foreign_keys = Vec::with_capacity(raw.foreign_keys.len());
    for (child, parent) in &raw.foreign_keys {
        foreign_keys.push(ForeignKey {
            child: lookup(*child, "foreign key")?,
            parent: lookup(*parent, "foreign key")?,
        });
    }
    let mut primary_keys = Vec::new();
    for key in &raw.primary_keys {
        match key {
            RawKey::Single(i) => primary_keys.push(lookup(*i, "primary key")?),
            RawKey::Composite(parts) => {
                for i in parts {
                    primary_keys.push(lookup(*i, "primary key")?);
                }
            }
        }
    }

    let candidate = db_dir.join(&raw.db_id).join(format!("{}.sqlite", raw.db_id));
    let sqlite_path = if candidate.is_file() {
        Some(candidate)
    } else {
        log::warn!("{}: no database file at {}", raw.db_id, candidate.display());
        None
    };

    let db = SchemaDb {
        db_id: raw.db_id,
        tables,
        foreign_keys,
        primary_keys,
        sqlite_path,
    };
    db.validate()?;
    Ok(db)
}

/// Loads every schema in a Spider `tables.json`.
pub fn load_schemas(tables_file: &Path, db_dir: &Path) -> Result<Vec<SchemaDb>, DatasetError> {
    let text = read_file(tables_file)?;
    let raw: Vec<RawSchema> = parse_json(tables_file, &text)?;
    raw.into_iter().map(|r| convert_schema(r, db_dir)).collect()
}

/// Loads questions in file order with ids `0..n`.
pub fn load_testcases(
    questions_file: &Path,
    schemas: &[SchemaDb],
) -> Result<Vec<TestCase>, DatasetError> {
    let text = read_file(questions_file)?;
    let raw: Vec<RawCase> = parse_json(questions_file, &text)?;
    let known: HashSet<&str> = schemas.iter().map(|s| s.db_id.as_str()).collect();
    let offenders: BTreeSet<String> = raw
        .iter()
        .filter(|c| !known.contains(c.db_id.as_str()))
        .map(|c| c.db_id.clone())
        .collect();
    if !offenders.is_empty() {
        return Err(DatasetError::UnknownDatabase {
            offenders: offenders.into_iter().collect(),
        });
    }
    raw.into_iter()
        .enumerate()
        .map(|(id, c)| {
            if c.question.trim().is_empty() {
                return Err(DatasetError::InvalidCase {
                    index: id,
                    detail: "empty question".into(),
                });
            }
            if c.query.trim().is_empty() {
                return Err(DatasetError::InvalidCase {
                    index: id,
                    detail: "empty gold SQL".into(),
                });
            }
            Ok(TestCase {
                id,
                db_id: c.db_id,
                question: c.question,
                gold_sql: c.query,
            })
        })
        .collect()
}

/// One line per table: `table(col:type, ...)`.
pub fn render_tables(db: &SchemaDb) -> String {
    let mut out = String::new();
    for table in &db.tables {
        let cols: Vec<String> = table
            .columns
            .iter()
            .map(|c| format!("{}:{}", c.name, c.ty.as_str()))
            .collect();
        let _ = writeln!(out, "{}({})", table.name, cols.join(", "));
    }
    out
}

/// One line per foreign key: `child_table.col -> parent_table.col`.
pub fn render_foreign_keys(db: &SchemaDb) -> String {
    let mut out = String::new();
    for fk in &db.foreign_keys {
        let (Some((ct, cc)), Some((pt, pc))) = (db.column(fk.child), db.column(fk.parent)) else {
            continue;
        };
        let _ = writeln!(out, "{}.{} -> {}.{}", ct.name, cc.name, pt.name, pc.name);
    }
    out
}

/// Tables followed by foreign keys. Pure and byte-stable.
pub fn render_schema(db: &SchemaDb) -> String {
    let mut out = render_tables(db);
    out.push_str(&render_foreign_keys(db));
    out
}

/// Writes the normalized `schemas.norm.json` snapshot.
pub fn write_normalized(path: &Path, schemas: &[SchemaDb]) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(schemas).expect("schemas serialize");
    fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a snapshot written by [`write_normalized`], re-checking invariants.
pub fn read_normalized(path: &Path) -> Result<Vec<SchemaDb>, DatasetError> {
    let text = read_file(path)?;
    let schemas: Vec<SchemaDb> = parse_json(path, &text)?;
    for s in &schemas {
        s.validate()?;
    }
    Ok(schemas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const TWO_TABLES: &str = r#"[{
        "db_id": "concert_singer",
        "table_names_original": ["singer", "concert"],
        "table_names": ["singer", "concert"],
        "column_names_original": [[-1, "*"], [0, "Singer_ID"], [0, "Name"], [1, "concert_ID"], [1, "Singer_ID"]],
        "column_names": [[-1, "*"], [0, "singer id"], [0, "name"], [1, "concert id"], [1, "singer id"]],
        "column_types": ["text", "number", "text", "number", "number"],
        "foreign_keys": [[4, 1]],
        "primary_keys": [1, 3]
    }]"#;

    fn write_tmp(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    #[test]
    fn two_table_fixture_resolves_foreign_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), "tables.json", TWO_TABLES);
        let schemas = load_schemas(&path, dir.path()).unwrap();
        assert_eq!(schemas.len(), 1);
        let db = &schemas[0];
        assert_eq!(db.tables.len(), 2);
        assert_eq!(db.foreign_keys.len(), 1);
        let (ct, cc) = db.column(db.foreign_keys[0].child).unwrap();
        let (pt, pc) = db.column(db.foreign_keys[0].parent).unwrap();
        assert_eq!((ct.name.as_str(), cc.name.as_str()), ("concert", "Singer_ID"));
        assert_eq!((pt.name.as_str(), pc.name.as_str()), ("singer", "Singer_ID"));
        assert_eq!(db.primary_keys.len(), 2);
        assert!(db.sqlite_path.is_none());
    }

    #[test]
    fn empty_array_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), "tables.json", "[]");
        assert!(load_schemas(&path, dir.path()).unwrap().is_empty());
        let q = write_tmp(dir.path(), "dev.json", "[]");
        assert!(load_testcases(&q, &[]).unwrap().is_empty());
    }

    #[test]
    fn malformed_json_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), "tables.json", "[\n  {\"db_id\": }\n]");
        match load_schemas(&path, dir.path()) {
            Err(DatasetError::Parse { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert!(offset > 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_foreign_key_names_db() {
        let dir = tempfile::tempdir().unwrap();
        let body = TWO_TABLES.replace("[[4, 1]]", "[[4, 99]]");
        let path = write_tmp(dir.path(), "tables.json", &body);
        let err = load_schemas(&path, dir.path()).unwrap_err();
        assert!(matches!(&err, DatasetError::SchemaIntegrity { db_id, .. } if db_id == "concert_singer"));
    }

    #[test]
    fn unknown_type_maps_to_others() {
        let dir = tempfile::tempdir().unwrap();
        let body = TWO_TABLES.replacen("\"text\", \"number\", \"text\"", "\"text\", \"number\", \"varchar\"", 1);
        let path = write_tmp(dir.path(), "tables.json", &body);
        let db = &load_schemas(&path, dir.path()).unwrap()[0];
        assert_eq!(db.tables[0].columns[1].ty, ColumnType::Others);
    }

    #[test]
    fn duplicate_table_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = TWO_TABLES.replace("[\"singer\", \"concert\"],\n        \"table_names\"", "[\"singer\", \"SINGER\"],\n        \"table_names\"");
        let path = write_tmp(dir.path(), "tables.json", &body);
        assert!(matches!(
            load_schemas(&path, dir.path()),
            Err(DatasetError::SchemaIntegrity { .. })
        ));
    }

    #[test]
    fn sqlite_path_populated_when_present() {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join("database");
        fs::create_dir_all(db_dir.join("concert_singer")).unwrap();
        fs::write(db_dir.join("concert_singer/concert_singer.sqlite"), b"").unwrap();
        let path = write_tmp(dir.path(), "tables.json", TWO_TABLES);
        let db = &load_schemas(&path, &db_dir).unwrap()[0];
        assert!(db.sqlite_path.as_ref().unwrap().ends_with("concert_singer.sqlite"));
    }

    #[test]
    fn three_cases_keep_order_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), "tables.json", TWO_TABLES);
        let schemas = load_schemas(&path, dir.path()).unwrap();
        let q = write_tmp(
            dir.path(),
            "dev.json",
            r#"[
              {"db_id": "concert_singer", "question": "q0", "query": "SELECT 1"},
              {"db_id": "concert_singer", "question": "q1", "query": "SELECT 2"},
              {"db_id": "concert_singer", "question": "q2", "query": "SELECT 3"}
            ]"#,
        );
        let cases = load_testcases(&q, &schemas).unwrap();
        let got: Vec<(usize, &str)> = cases.iter().map(|c| (c.id, c.question.as_str())).collect();
        assert_eq!(got, vec![(0, "q0"), (1, "q1"), (2, "q2")]);
    }

    #[test]
    fn unknown_db_lists_offenders() {
        let dir = tempfile::tempdir().unwrap();
        let q = write_tmp(
            dir.path(),
            "dev.json",
            r#"[{"db_id": "b", "question": "q", "query": "SELECT 1"},
                {"db_id": "a", "question": "q", "query": "SELECT 1"},
                {"db_id": "b", "question": "q", "query": "SELECT 1"}]"#,
        );
        match load_testcases(&q, &[]) {
            Err(DatasetError::UnknownDatabase { offenders }) => assert_eq!(offenders, vec!["a", "b"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_single_table() {
        let db = SchemaDb {
            db_id: "x".into(),
            tables: vec![TableDef {
                name: "singer".into(),
                columns: vec![
                    ColumnDef { name: "name".into(), ty: ColumnType::Text },
                    ColumnDef { name: "age".into(), ty: ColumnType::Number },
                ],
            }],
            foreign_keys: vec![],
            primary_keys: vec![],
            sqlite_path: None,
        };
        assert_eq!(render_schema(&db), "singer(name:text, age:number)\n");
    }

    #[test]
    fn render_empty_schema() {
        let db = SchemaDb {
            db_id: "x".into(),
            tables: vec![],
            foreign_keys: vec![],
            primary_keys: vec![],
            sqlite_path: None,
        };
        assert_eq!(render_schema(&db), "");
    }

    #[test]
    fn render_two_tables_with_fk() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), "tables.json", TWO_TABLES);
        let db = &load_schemas(&path, dir.path()).unwrap()[0];
        let golden = "singer(Singer_ID:number, Name:text)\n\
                      concert(concert_ID:number, Singer_ID:number)\n\
                      concert.Singer_ID -> singer.Singer_ID\n";
        assert_eq!(render_schema(db), golden);
    }
}
