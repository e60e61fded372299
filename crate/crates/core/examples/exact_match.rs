//! Canonical SQL and exact-match comparisons.

use synthshot::eval::{canonical_sql, exact_match, SqlSketch};

fn main() {
    let gold = "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id";
    println!("canonical: {}", canonical_sql(gold).unwrap());

    for pred in [
        "select  count(*), t2.NAME from concert as t1 join stadium as t2 on t2.stadium_id = t1.stadium_id group by t1.stadium_id",
        "SELECT stadium.name, count(*) FROM concert JOIN stadium ON concert.stadium_id = stadium.stadium_id GROUP BY concert.stadium_id",
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T2.name",
        "SELECT T2.name, sum(1) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
    ] {
        println!("{:<5} {pred}", exact_match(pred, gold).unwrap());
    }

    let sketch = SqlSketch::from_sql("SELECT name FROM singer WHERE age > (SELECT avg(age) FROM singer) ORDER BY age DESC").unwrap();
    println!("{}", serde_json::to_string_pretty(&sketch).unwrap());
}
