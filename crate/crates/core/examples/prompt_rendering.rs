//! Renders the four stage prompts for one fixture question.

use synthshot::dataset::load_schemas;
use synthshot::demo::write_fixture;
use synthshot::generation::schema_slots;
use synthshot::prompts::{
    build_filtering_prompt, build_generation_prompt, build_inference_prompt, build_schema_linking_prompt,
    format_examples, ExampleBlock,
};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(dir.path()).unwrap();
    let schemas = load_schemas(&fx.tables_file, &fx.db_dir).unwrap();
    let db = &schemas[0];
    let (tables, fks) = schema_slots(db);
    let question = "Show the stadium name and the number of concerts in each stadium.";

    println!("==== schema linking ====\n{}", build_schema_linking_prompt(&tables, &fks, question).unwrap());
    let linking = "Tables: concert, stadium. Columns: stadium.name, concert.stadium_id.";
    println!("==== example generation ====\n{}", build_generation_prompt(linking, &tables, &fks, question).unwrap());
    println!(
        "==== filtering ====\n{}",
        build_filtering_prompt(
            question,
            "Show each stadium name and the number of concerts held there in 2014.",
            "Join concert to stadium, filter by year, group by stadium and count."
        )
        .unwrap()
    );

    let examples = [ExampleBlock {
        question: "Show each stadium name and the number of concerts held there in 2014.",
        sql: "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = 2014 GROUP BY T1.stadium_id",
        reasoning: "Join concert to stadium, filter by year, group by stadium and count.",
    }];
    println!(
        "==== final inference ====\n{}",
        build_inference_prompt(&tables, &fks, question, &format_examples(&examples, true)).unwrap()
    );
    println!(
        "==== final inference, no examples ====\n{}",
        build_inference_prompt(&tables, &fks, question, "").unwrap()
    );
}
