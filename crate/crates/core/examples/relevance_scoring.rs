//! Judge replies to relevance scores, threshold selection and the top-k
//! fallback.

use std::sync::Arc;

use synthshot::generation::GeneratedExample;
use synthshot::llm::{LlmClient, ModelParams, ScriptedBackend, Stage};
use synthshot::scoring::{combine, parse_judge_reply, score_examples, WeightConfig};

fn main() {
    let equal = WeightConfig::equal();
    for (s, a, r) in [(10.0, 10.0, 10.0), (7.0, 9.0, 8.0), (6.0, 3.0, 2.0)] {
        println!("({s}, {a}, {r}) -> {:.2}", combine(s, a, r, &equal).unwrap());
    }
    let semantic_only = WeightConfig::new(1.0, 0.0, 0.0).unwrap();
    println!("semantic only: {}", combine(6.0, 3.0, 2.0, &semantic_only).unwrap());

    // Judges answer in whatever shape they like.
    for reply in [
        "Semantic: 8\nStructural: 9\nReasoning: 10",
        "**Semantic Similarity**: 7/10, **Keyword & Structural Similarity**: 6/10, **Reasoning Path Similarity**: 9/10",
        "8, 8, 7",
        "looks good to me",
    ] {
        println!("{:?} <- {reply:?}", parse_judge_reply(reply));
    }

    let examples: Vec<GeneratedExample> = (0..4)
        .map(|i| GeneratedExample {
            test_case_id: 0,
            ordinal: i,
            question: format!("How many singers are older than {}?", 30 + i),
            sql: format!("SELECT count(*) FROM singer WHERE age > {}", 30 + i),
            reasoning_path: "Filter by age, then count.".into(),
            parse_ok: true,
            raw: None,
        })
        .collect();
    let backend = ScriptedBackend::new()
        .on(Stage::Scoring, &["older than 30?"], "9, 8, 9")
        .on(Stage::Scoring, &["older than 31?"], "6, 7, 5")
        .on(Stage::Scoring, &["older than 32?"], "3, 4, 2")
        .on(Stage::Scoring, &["older than 33?"], "8, 8, 8");
    let client = LlmClient::new(Arc::new(backend), None);
    let params = ModelParams::new("judge", 0.0);

    for theta in [8.0, 9.5] {
        let (scored, fired) =
            score_examples(&client, &params, "How many singers do we have?", &examples, &equal, theta, Some(3)).unwrap();
        println!("\ntheta {theta} (fallback fired: {fired})");
        for s in scored {
            println!(
                "  #{} rel {:.2} selected {} {}",
                s.example.ordinal,
                s.score.rel,
                s.selected,
                if s.fallback { "(fallback)" } else { "" }
            );
        }
    }
}
