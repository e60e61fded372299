//! Execution match and difficulty buckets on the fixture database.

use synthshot::dataset::{load_schemas, TestCase};
use synthshot::demo::write_fixture;
use synthshot::eval::{classify_difficulty, evaluate_case, execute, execution_match, DifficultyRules};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(dir.path()).unwrap();
    let schemas = load_schemas(&fx.tables_file, &fx.db_dir).unwrap();
    let db = &schemas[0];

    let gold = "SELECT name FROM singer WHERE country = 'France' ORDER BY age DESC";
    println!("{:?}", execute(gold, db, 1000).unwrap().rows);
    for pred in [
        "SELECT name FROM singer WHERE country IN ('France') ORDER BY age DESC",
        "SELECT name FROM singer WHERE country = 'France' ORDER BY age",
        "SELECT name FROM singer WHERE country = 'France'",
    ] {
        println!("{:<5} {pred}", execution_match(pred, gold, db, 1000).unwrap());
    }
    // Without ORDER BY in the gold, row order is ignored.
    println!(
        "{}",
        execution_match("SELECT name FROM singer ORDER BY name", "SELECT name FROM singer", db, 1000).unwrap()
    );
    // Connections are read-only; a failing prediction simply does not match.
    if let Err(e) = execute("DELETE FROM singer", db, 1000) {
        println!("rejected: {e}");
    }
    println!("{}", execution_match("DELETE FROM singer", gold, db, 1000).unwrap());

    let rules = DifficultyRules::default();
    for q in [
        "SELECT count(*) FROM singer",
        "SELECT country, count(*) FROM singer GROUP BY country ORDER BY count(*) DESC",
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = 2014 AND T2.capacity > 5000 GROUP BY T1.stadium_id",
        "SELECT name FROM singer WHERE age > (SELECT avg(age) FROM singer) INTERSECT SELECT name FROM singer WHERE country = 'France' ORDER BY name",
    ] {
        println!("{:<6} {q}", classify_difficulty(q, &rules).unwrap().as_str());
    }

    let case = TestCase { id: 0, db_id: db.db_id.clone(), question: "French singers by age".into(), gold_sql: gold.into() };
    let outcome = evaluate_case(&case, "SELECT name FROM singer WHERE country = 'France' ORDER BY age DESC", db, &rules, 1000, false);
    println!("{}", serde_json::to_string(&outcome).unwrap());
}
