#![allow(dead_code)]

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rusqlite::types::Value;
use rusqlite::Connection;
use synthshot::dataset::{ColumnDef, ColumnType, SchemaDb, TableDef};
use synthshot::demo::CONCERT_SINGER_DDL;

/// 30 queries over the concert/singer/stadium and pets schemas.
pub const EM_CORPUS: [&str; 30] = [
    "SELECT count(*) FROM singer",
    "SELECT name, country, age FROM singer ORDER BY age DESC",
    "SELECT avg(age), min(age), max(age) FROM singer WHERE country = 'France'",
    "SELECT name FROM singer WHERE age > 40",
    "SELECT DISTINCT country FROM singer WHERE age > 20",
    "SELECT country, count(*) FROM singer GROUP BY country",
    "SELECT country FROM singer GROUP BY country HAVING count(*) > 1",
    "SELECT name, capacity FROM stadium WHERE capacity BETWEEN 5000 AND 10000",
    "SELECT location, name FROM stadium ORDER BY capacity DESC LIMIT 1",
    "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
    "SELECT T2.name FROM concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id WHERE T1.year = 2014",
    "SELECT name FROM singer WHERE singer_id NOT IN (SELECT singer_id FROM concert)",
    "SELECT name FROM singer WHERE age > (SELECT avg(age) FROM singer)",
    "SELECT name FROM stadium WHERE stadium_id IN (SELECT stadium_id FROM concert WHERE year = 2015)",
    "SELECT concert_name, year FROM concert WHERE year = 2014 OR year = 2015",
    "SELECT name FROM singer WHERE country = 'France' AND age < 30",
    "SELECT name FROM singer WHERE name LIKE '%Brown%'",
    "SELECT country FROM singer WHERE age > 40 INTERSECT SELECT country FROM singer WHERE age < 30",
    "SELECT name FROM stadium EXCEPT SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id",
    "SELECT name FROM singer WHERE country = 'Netherlands' UNION SELECT name FROM singer WHERE age < 30",
    "SELECT count(DISTINCT country) FROM singer",
    "SELECT sum(capacity), avg(capacity) FROM stadium",
    "SELECT year, count(*) FROM concert GROUP BY year ORDER BY count(*) DESC LIMIT 1",
    "SELECT T1.name, T3.concert_name FROM singer AS T1 JOIN concert AS T3 ON T1.singer_id = T3.singer_id JOIN stadium AS T2 ON T3.stadium_id = T2.stadium_id WHERE T2.capacity > 10000",
    "SELECT name FROM singer ORDER BY net_worth DESC LIMIT 3",
    "SELECT avg(weight) FROM pets WHERE pet_type = 'dog'",
    "SELECT pet_type, max(weight) FROM pets GROUP BY pet_type",
    "SELECT count(*) FROM pets WHERE age > 2 AND weight < 10",
    "SELECT pet_id FROM pets WHERE weight > (SELECT min(weight) FROM pets WHERE pet_type = 'cat')",
    "SELECT name FROM singer WHERE net_worth IS NULL",
];

/// `(query, same query with two projection items swapped)`.
pub const EM_REORDERED: [(&str, &str); 5] = [
    ("SELECT name, country, age FROM singer ORDER BY age DESC", "SELECT age, name, country FROM singer ORDER BY age DESC"),
    ("SELECT avg(age), min(age), max(age) FROM singer WHERE country = 'France'", "SELECT max(age), avg(age), min(age) FROM singer WHERE country = 'France'"),
    ("SELECT country, count(*) FROM singer GROUP BY country", "SELECT count(*), country FROM singer GROUP BY country"),
    ("SELECT location, name FROM stadium ORDER BY capacity DESC LIMIT 1", "SELECT name, location FROM stadium ORDER BY capacity DESC LIMIT 1"),
    ("SELECT pet_type, max(weight) FROM pets GROUP BY pet_type", "SELECT max(weight), pet_type FROM pets GROUP BY pet_type"),
];

/// `(query, same query with one literal changed)`.
pub const EM_LITERAL_CHANGED: [(&str, &str); 6] = [
    ("SELECT name FROM singer WHERE age > 40", "SELECT name FROM singer WHERE age > 41"),
    ("SELECT name FROM singer WHERE country = 'France' AND age < 30", "SELECT name FROM singer WHERE country = 'Spain' AND age < 30"),
    ("SELECT name FROM singer WHERE name LIKE '%Brown%'", "SELECT name FROM singer WHERE name LIKE '%brown%'"),
    ("SELECT location, name FROM stadium ORDER BY capacity DESC LIMIT 1", "SELECT location, name FROM stadium ORDER BY capacity DESC LIMIT 2"),
    ("SELECT avg(weight) FROM pets WHERE pet_type = 'dog'", "SELECT avg(weight) FROM pets WHERE pet_type = 'cat'"),
    ("SELECT concert_name, year FROM concert WHERE year = 2014 OR year = 2015", "SELECT concert_name, year FROM concert WHERE year = 2014 OR year = 2016"),
];

/// Rewrites whitespace runs and flips the case of words outside quotes.
pub fn perturb(sql: &str, rng: &mut impl Rng) -> String {
    const SPACES: [&str; 4] = [" ", "  ", "\n", "\t "];
    let mut out = String::new();
    let mut quote: Option<char> = None;
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String, rng: &mut dyn rand::RngCore| {
        if !word.is_empty() {
            let w = match rng.random_range(0..3) {
                0 => word.to_uppercase(),
                1 => word.to_lowercase(),
                _ => word.clone(),
            };
            out.push_str(&w);
            word.clear();
        }
    };
    let mut chars = sql.chars().peekable();
    while let Some(c) = chars.next() {
        if let Some(q) = quote {
            out.push(c);
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => {
                flush(&mut word, &mut out, rng);
                quote = Some(c);
                out.push(c);
            }
            c if c.is_whitespace() => {
                flush(&mut word, &mut out, rng);
                while chars.peek().is_some_and(|n| n.is_whitespace()) {
                    chars.next();
                }
                out.push_str(SPACES[rng.random_range(0..SPACES.len())]);
            }
            c if c.is_alphanumeric() || c == '_' => word.push(c),
            _ => {
                flush(&mut word, &mut out, rng);
                out.push(c);
            }
        }
    }
    flush(&mut word, &mut out, rng);
    if rng.random_bool(0.5) {
        out = format!("\n  {out}  \n");
    }
    out
}

/// `(pred, gold, expected EX)` on the concert/singer/stadium fixture.
pub const EX_PAIRS: [(&str, &str, bool); 20] = [
    ("SELECT count(singer_id) FROM singer", "SELECT count(*) FROM singer", true),
    ("SELECT name FROM singer WHERE NOT age <= 40", "SELECT name FROM singer WHERE age > 40", true),
    ("SELECT name FROM singer WHERE country IN ('France')", "SELECT name FROM singer WHERE country = 'France'", true),
    (
        "SELECT name FROM stadium WHERE stadium_id IN (SELECT stadium_id FROM concert WHERE year = 2014)",
        "SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = 2014",
        true,
    ),
    ("SELECT sum(age) * 1.0 / count(*) FROM singer", "SELECT avg(age) FROM singer", true),
    ("SELECT capacity FROM stadium ORDER BY capacity DESC LIMIT 1", "SELECT max(capacity) FROM stadium", true),
    ("SELECT name, age FROM singer ORDER BY -age", "SELECT name, age FROM singer ORDER BY age DESC", true),
    (
        "SELECT country, count(*) FROM singer GROUP BY country ORDER BY count(*) DESC",
        "SELECT country, count(*) FROM singer GROUP BY country",
        true,
    ),
    ("SELECT country FROM singer GROUP BY country", "SELECT DISTINCT country FROM singer", true),
    ("SELECT name FROM singer WHERE singer_id = 6", "SELECT name FROM singer WHERE net_worth IS NULL", true),
    (
        "SELECT name FROM stadium WHERE capacity >= 4000 AND capacity <= 11000",
        "SELECT name FROM stadium WHERE capacity BETWEEN 4000 AND 11000",
        true,
    ),
    ("SELECT total(net_worth) FROM singer", "SELECT sum(net_worth) FROM singer", true),
    ("SELECT name FROM singer WHERE age > 41", "SELECT name FROM singer WHERE age > 40", false),
    ("SELECT count(*) FROM concert", "SELECT count(*) FROM concert WHERE year = 2014", false),
    ("SELECT name FROM singer WHERE country = 'france'", "SELECT name FROM singer WHERE country = 'France'", false),
    (
        "SELECT avg(age) FROM singer WHERE net_worth IS NOT NULL",
        "SELECT avg(age) FROM singer",
        false,
    ),
    ("SELECT name FROM singer ORDER BY age ASC", "SELECT name FROM singer ORDER BY age DESC", false),
    ("SELECT name FROM singer ORDER BY age DESC LIMIT 2", "SELECT name FROM singer ORDER BY age DESC LIMIT 3", false),
    (
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id HAVING count(*) > 1",
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        false,
    ),
    ("SELECT min(net_worth) FROM singer", "SELECT max(net_worth) FROM singer", false),
];

/// Builds the concert fixture at `path` with every table's rows inserted
/// in a random order.
pub fn shuffled_concert_db(path: &Path, rng: &mut impl Rng) {
    let src = Connection::open_in_memory().unwrap();
    src.execute_batch(CONCERT_SINGER_DDL).unwrap();
    let _ = std::fs::remove_file(path);
    let dst = Connection::open(path).unwrap();
    dst.execute_batch("PRAGMA foreign_keys = OFF").unwrap();
    let mut stmt = src
        .prepare("SELECT name, sql FROM sqlite_master WHERE type = 'table' ORDER BY name")
        .unwrap();
    let tables: Vec<(String, String)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))
        .unwrap()
        .map(Result::unwrap)
        .collect();
    for (_, ddl) in &tables {
        dst.execute_batch(ddl).unwrap();
    }
    for (name, _) in tables {
        let mut q = src.prepare(&format!("SELECT * FROM {name}")).unwrap();
        let width = q.column_count();
        let mut rows: Vec<Vec<Value>> = q
            .query_map([], |r| (0..width).map(|i| r.get::<_, Value>(i)).collect())
            .unwrap()
            .map(Result::unwrap)
            .collect();
        rows.shuffle(rng);
        let marks = vec!["?"; width].join(", ");
        let mut ins = dst.prepare(&format!("INSERT INTO {name} VALUES ({marks})")).unwrap();
        for row in rows {
            ins.execute(rusqlite::params_from_iter(row)).unwrap();
        }
    }
}

/// Minimal schema record pointing at an SQLite file.
pub fn schema_at(db_id: &str, path: &Path) -> SchemaDb {
    SchemaDb {
        db_id: db_id.into(),
        tables: vec![TableDef {
            name: "singer".into(),
            columns: vec![ColumnDef {
                name: "name".into(),
                ty: ColumnType::Text,
            }],
        }],
        foreign_keys: vec![],
        primary_keys: vec![],
        sqlite_path: Some(path.to_path_buf()),
    }
}

/// Relevance values whose census matches the reference generation counts:
/// 61 at 0, 94 at 1, then 302 / 505 / 772 / 1811 / 6795 at 3 / 5 / 7 / 9 / 10.
pub fn census_corpus() -> Vec<f64> {
    let mut v = Vec::with_capacity(10_340);
    for (value, n) in [(0.0, 61), (1.0, 94), (3.0, 302), (5.0, 505), (7.0, 772), (9.0, 1811), (10.0, 6795)] {
        v.extend(std::iter::repeat_n(value, n));
    }
    v
}

/// Reference `(threshold, retained, filtered %)` rows, percentages truncated
/// to two decimals.
pub const CENSUS_TABLE: [(f64, usize, f64); 6] = [
    (0.0, 10340, 0.0),
    (2.0, 10185, 1.50),
    (4.0, 9883, 4.41),
    (6.0, 9378, 9.30),
    (8.0, 8606, 16.76),
    (10.0, 6795, 34.28),
];
