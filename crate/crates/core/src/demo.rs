//! A self-contained Spider-format fixture with a scripted backend.
//!
//! Two databases (`concert_singer` with three tables, `pets_1` with one),
//! five questions, and canned model replies for every stage. Replies are
//! arranged so the default run exercises threshold selection, a judge reply
//! that never parses, a short generation, the top-k fallback, and an
//! inference answer that depends on how many examples were shown.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rusqlite::Connection;
use serde_json::{json, Value};

use crate::llm::{ScriptRule, ScriptedBackend, Stage};
use crate::pipeline::{BackendConfig, RunConfig};

pub struct Fixture {
    pub root: PathBuf,
    pub tables_file: PathBuf,
    pub questions_file: PathBuf,
    pub db_dir: PathBuf,
    pub script_file: PathBuf,
}

impl Fixture {
    /// Scripted-backend configuration over this fixture.
    pub fn config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(
            self.tables_file.clone(),
            self.questions_file.clone(),
            self.db_dir.clone(),
            BackendConfig::Scripted {
                script: self.script_file.clone(),
            },
        );
        cfg.parallelism = 2;
        cfg.timeout_ms = 5_000;
        cfg
    }

    pub fn sqlite(&self, db_id: &str) -> PathBuf {
        self.db_dir.join(db_id).join(format!("{db_id}.sqlite"))
    }
}

pub const CONCERT_SINGER_DDL: &str = "
CREATE TABLE stadium (stadium_id INTEGER PRIMARY KEY, name TEXT, location TEXT, capacity INTEGER);
CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER, net_worth REAL);
CREATE TABLE concert (concert_id INTEGER PRIMARY KEY, concert_name TEXT, stadium_id INTEGER REFERENCES stadium(stadium_id),
                      singer_id INTEGER REFERENCES singer(singer_id), year INTEGER);
INSERT INTO stadium VALUES (1, 'Raith Rovers', 'Kirkcaldy', 10104), (2, 'Ayr United', 'Ayr', 11998),
                           (3, 'Balmoor', 'Peterhead', 4000), (4, 'Glebe Park', 'Brechin', 3960);
INSERT INTO singer VALUES (1, 'Joe Sharp', 'Netherlands', 52, 30.0), (2, 'Timbaland', 'United States', 32, 85.5),
                          (3, 'Justin Brown', 'France', 29, 12.25), (4, 'Rose White', 'France', 41, 20.0),
                          (5, 'John Nizinik', 'France', 43, 7.5), (6, 'Tribal King', 'France', 25, NULL);
INSERT INTO concert VALUES (1, 'Auditions', 1, 2, 2014), (2, 'Super bootcamp', 2, 3, 2014), (3, 'Home Visits', 2, 4, 2015),
                           (4, 'Week 1', 3, 1, 2014), (5, 'Week 2', 2, 5, 2015), (6, 'Week 3', 1, 3, 2015);
";

pub const PETS_DDL: &str = "
CREATE TABLE pets (pet_id INTEGER PRIMARY KEY, pet_type TEXT, weight REAL, age INTEGER);
INSERT INTO pets VALUES (1, 'dog', 12.0, 3), (2, 'cat', 3.5, 5), (3, 'dog', 9.5, 1), (4, 'cat', 4.0, 2), (5, 'dog', 20.5, 7);
";

/// `(db_id, question, gold)` in dataset order.
pub const CASES: [(&str, &str, &str); 5] = [
    ("concert_singer", "How many singers do we have?", "SELECT count(*) FROM singer"),
    (
        "concert_singer",
        "List the names of singers from France in descending order of age.",
        "SELECT name FROM singer WHERE country = 'France' ORDER BY age DESC",
    ),
    (
        "concert_singer",
        "Show the stadium name and the number of concerts in each stadium.",
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
    ),
    (
        "concert_singer",
        "Which singers are older than the average age of all singers?",
        "SELECT name FROM singer WHERE age > (SELECT avg(age) FROM singer)",
    ),
    ("pets_1", "What is the average weight of dogs?", "SELECT avg(weight) FROM pets WHERE pet_type = 'dog'"),
];

fn tables_json() -> Value {
    json!([
        {
            "db_id": "concert_singer",
            "table_names_original": ["stadium", "singer", "concert"],
            "table_names": ["stadium", "singer", "concert"],
            "column_names_original": [
                [-1, "*"],
                [0, "stadium_id"], [0, "name"], [0, "location"], [0, "capacity"],
                [1, "singer_id"], [1, "name"], [1, "country"], [1, "age"], [1, "net_worth"],
                [2, "concert_id"], [2, "concert_name"], [2, "stadium_id"], [2, "singer_id"], [2, "year"]
            ],
            "column_names": [
                [-1, "*"],
                [0, "stadium id"], [0, "name"], [0, "location"], [0, "capacity"],
                [1, "singer id"], [1, "name"], [1, "country"], [1, "age"], [1, "net worth"],
                [2, "concert id"], [2, "concert name"], [2, "stadium id"], [2, "singer id"], [2, "year"]
            ],
            "column_types": ["text", "number", "text", "text", "number", "number", "text", "text", "number", "number",
                             "number", "text", "number", "number", "number"],
            "foreign_keys": [[12, 1], [13, 5]],
            "primary_keys": [1, 5, 10]
        },
        {
            "db_id": "pets_1",
            "table_names_original": ["pets"],
            "table_names": ["pets"],
            "column_names_original": [[-1, "*"], [0, "pet_id"], [0, "pet_type"], [0, "weight"], [0, "age"]],
            "column_names": [[-1, "*"], [0, "pet id"], [0, "pet type"], [0, "weight"], [0, "age"]],
            "column_types": ["text", "number", "text", "number", "number"],
            "foreign_keys": [],
            "primary_keys": [1]
        }
    ])
}

/// Generated triplet `j` for case `i`.
fn triplet(i: usize, j: usize) -> (String, String, String) {
    const COUNTRIES: [&str; 10] = [
        "France", "Netherlands", "United States", "Spain", "Italy", "Germany", "Japan", "Brazil", "Canada", "Norway",
    ];
    const PETS: [&str; 10] = ["dog", "cat", "bird", "fish", "hamster", "rabbit", "snake", "turtle", "ferret", "lizard"];
    match i {
        0 => (
            format!("How many singers are older than {}?", 20 + j),
            format!("SELECT count(*) FROM singer WHERE age > {}", 20 + j),
            "Filter the singer table by age, then count the remaining rows with count(*).".into(),
        ),
        1 => (
            format!("List the names of singers from {} ordered by age descending.", COUNTRIES[j]),
            format!("SELECT name FROM singer WHERE country = '{}' ORDER BY age DESC", COUNTRIES[j]),
            "Filter singer by country, project the name column, and sort by age in descending order.".into(),
        ),
        2 => (
            format!("Show each stadium name and the number of concerts held there in {}.", 2010 + j),
            format!(
                "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = {} GROUP BY T1.stadium_id",
                2010 + j
            ),
            "Join concert to stadium on stadium_id, keep one year, group by stadium, and count concerts per group.".into(),
        ),
        3 => (
            format!("Which singers from {} are younger than the average singer age?", COUNTRIES[j]),
            format!(
                "SELECT name FROM singer WHERE country = '{}' AND age < (SELECT avg(age) FROM singer)",
                COUNTRIES[j]
            ),
            "Compute the average age in a subquery, then filter singers by country and compare their age to it.".into(),
        ),
        _ => (
            format!("What is the average age of every {}?", PETS[j]),
            format!("SELECT avg(age) FROM pets WHERE pet_type = '{}'", PETS[j]),
            "Filter pets by pet_type and average the age column.".into(),
        ),
    }
}

/// Number of generated blocks per case; case 3 comes up short.
fn block_count(i: usize) -> usize {
    if i == 3 {
        7
    } else {
        10
    }
}

fn generation_reply(i: usize) -> String {
    let mut out = String::new();
    for j in 0..block_count(i) {
        let (q, sql, r) = triplet(i, j);
        if i == 2 {
            out.push_str(&format!(
                "Example {}:\n**Similar Question:** {q}\n**SQL query:**\n```sql\n{sql};\n```\n**Reasoning Path:** {r}\n\n",
                j + 1
            ));
        } else {
            out.push_str(&format!("## Similar Question: {q}\n## SQL query: {sql}\n## Reasoning Path: {r}\n\n"));
        }
    }
    if i == 3 {
        out.push_str("These examples should cover the main variations.\n");
    }
    out
}

/// Judge components for example `j` of case `i`; `None` means an unusable
/// reply.
pub fn judge_scores(i: usize, j: usize) -> Option<(u32, u32, u32)> {
    Some(match i {
        0 if j == 9 => return None,
        0 if j < 5 => (9, 9, 9),
        0 => (6, 7, 5),
        1 if j < 3 => (10, 9, 8),
        1 => (7, 7, 6),
        2 if j < 4 => (8, 8, 8),
        2 if j < 7 => (7, 9, 8),
        2 => (5, 5, 5),
        3 if j < 2 => (8, 9, 10),
        3 => (4, 4, 4),
        _ => (3 + (j % 3) as u32, 5, 2),
    })
}

fn judge_reply(i: usize, j: usize) -> String {
    match judge_scores(i, j) {
        None => "great example!".into(),
        Some((s, a, r)) if (i + j).is_multiple_of(3) => format!("Semantic: {s}\nStructural: {a}\nReasoning: {r}"),
        Some((s, a, r)) if (i + j) % 3 == 1 => format!("{s}, {a}, {r}"),
        Some((s, a, r)) => format!(
            "**Reasoning Path Similarity**: {r}/10\n**Semantic Similarity of Questions**: {s}/10\n**Keyword & Structural Similarity**: {a}/10"
        ),
    }
}

/// Final answers: with at least three examples shown, zero-shot, and with
/// one or two examples.
fn inference_replies(i: usize) -> (String, String, String) {
    let gold = CASES[i].2;
    match i {
        0 => (format!("```sql\n{gold};\n```"), gold.into(), gold.into()),
        1 => (
            format!("SQL: {gold};"),
            "SELECT name FROM singer WHERE country = 'France'".into(),
            gold.into(),
        ),
        2 => (
            gold.into(),
            "SELECT name, count(*) FROM stadium GROUP BY stadium_id".into(),
            gold.into(),
        ),
        3 => (
            gold.into(),
            "SELECT name FROM singer WHERE age > 30".into(),
            "SELECT name FROM singer WHERE age > (SELECT avg(age) FROM singer WHERE country = 'Netherlands')".into(),
        ),
        _ => (gold.into(), gold.into(), gold.into()),
    }
}

/// The scripted backend behind the fixture.
pub fn fixture_backend() -> ScriptedBackend {
    let mut b = ScriptedBackend::new();
    let rule = |stage, contains: Vec<String>, absent: Vec<String>, response: String| ScriptRule {
        stage: Some(stage),
        contains,
        absent,
        response,
    };
    for (i, (db_id, question, _)) in CASES.iter().enumerate() {
        let tables = if *db_id == "pets_1" {
            "Tables: pets. Columns: pets.pet_type, pets.weight."
        } else {
            match i {
                2 => "Tables: concert, stadium. Columns: stadium.name, concert.stadium_id. Foreign keys: concert.stadium_id -> stadium.stadium_id.",
                _ => "Tables: singer. Columns: singer.name, singer.age, singer.country.",
            }
        };
        b = b
            .with_rule(rule(
                Stage::Generation,
                vec!["do not write any SQL".into(), format!("## Question: {question}\n")],
                vec![],
                tables.into(),
            ))
            .with_rule(rule(
                Stage::Generation,
                vec!["ten similar questions".into(), format!("## Question: {question}\n")],
                vec![],
                generation_reply(i),
            ));
        for j in 0..block_count(i) {
            let (q, _, _) = triplet(i, j);
            b = b.with_rule(rule(
                Stage::Scoring,
                vec![format!("## Similar Question: {q}\n")],
                vec![],
                judge_reply(i, j),
            ));
        }
        let (many, zero, few) = inference_replies(i);
        let asked = format!("##Question: {question}\n");
        b = b
            .with_rule(rule(Stage::Inference, vec![asked.clone(), "(no examples)".into()], vec![], zero))
            .with_rule(rule(Stage::Inference, vec![asked.clone(), "Example 3:".into()], vec![], many))
            .with_rule(rule(Stage::Inference, vec![asked], vec![], few));
    }
    b
}

fn build_db(path: &Path, ddl: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    if path.exists() {
        fs::remove_file(path)?;
    }
    let conn = Connection::open(path).map_err(io::Error::other)?;
    conn.execute_batch(ddl).map_err(io::Error::other)
}

/// Writes the fixture under `root` (created if needed).
pub fn write_fixture(root: &Path) -> io::Result<Fixture> {
    fs::create_dir_all(root)?;
    let fx = Fixture {
        root: root.to_path_buf(),
        tables_file: root.join("tables.json"),
        questions_file: root.join("dev.json"),
        db_dir: root.join("database"),
        script_file: root.join("script.json"),
    };
    fs::write(&fx.tables_file, serde_json::to_string_pretty(&tables_json())? + "\n")?;
    let cases: Vec<Value> = CASES
        .iter()
        .map(|(db, q, sql)| json!({"db_id": db, "question": q, "query": sql}))
        .collect();
    fs::write(&fx.questions_file, serde_json::to_string_pretty(&cases)? + "\n")?;
    build_db(&fx.sqlite("concert_singer"), CONCERT_SINGER_DDL)?;
    build_db(&fx.sqlite("pets_1"), PETS_DDL)?;
    fs::write(&fx.script_file, serde_json::to_string_pretty(&fixture_backend())? + "\n")?;
    Ok(fx)
}
