//! Parses a messy generation reply into (question, SQL, reasoning) triplets.

use synthshot::generation::examples_from_reply;

const REPLY: &str = "Sure! Here are the examples.

## Similar Question: How many singers are from France?
## SQL query: SELECT count(*) FROM singer WHERE country = 'France'
## Reasoning Path: Filter singer by country and count the rows.

Example 2:
**Similar Question:** Which stadiums hosted a concert in 2015?
**SQL query:**
```sql
SELECT DISTINCT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = 2015;
```
**Reasoning Path:** Join concert with stadium, keep 2015, and deduplicate names.

## Similar Question: List singers by net worth.
## SQL query: SELEC name FROM singer ORDER BY net_worth
## Reasoning Path: Sort by net worth.

I hope these help!";

fn main() {
    let examples = examples_from_reply(0, REPLY, 10).unwrap();
    for e in &examples {
        if e.question.is_empty() {
            println!("#{} stub (nothing parsed)", e.ordinal);
        } else {
            println!("#{} parse_ok={} {:?}\n    {}\n    {}", e.ordinal, e.parse_ok, e.question, e.sql, e.reasoning_path);
        }
    }
    println!("{} parsed, {} usable", examples.iter().filter(|e| !e.question.is_empty()).count(), examples.iter().filter(|e| e.parse_ok).count());
}
