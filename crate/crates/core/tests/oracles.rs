mod common;

use rand::rngs::StdRng;
use rand::SeedableRng;

use common::{schema_at, shuffled_concert_db, EM_CORPUS, EM_LITERAL_CHANGED, EM_REORDERED, EX_PAIRS};
use synthshot::eval::{canonical_sql, exact_match, execution_match, has_top_level_order_by};

#[test]
fn em_corpus_parses_and_is_a_fixpoint() {
    for q in EM_CORPUS {
        let c = canonical_sql(q).unwrap_or_else(|e| panic!("{q}: {e}"));
        assert_eq!(canonical_sql(&c).unwrap(), c, "{q}");
        assert!(exact_match(q, q).unwrap());
        assert!(exact_match(&c, q).unwrap(), "{q}");
    }
}

#[test]
fn em_reorder_and_literal_edits() {
    for (a, b) in EM_REORDERED {
        assert!(exact_match(b, a).unwrap(), "{b}");
    }
    for (a, b) in EM_LITERAL_CHANGED {
        assert!(!exact_match(b, a).unwrap(), "{b}");
    }
}

#[test]
fn em_distinct_corpus_queries_differ() {
    for (i, a) in EM_CORPUS.iter().enumerate() {
        for b in &EM_CORPUS[i + 1..] {
            assert!(!exact_match(a, b).unwrap(), "{a} == {b}");
        }
    }
}

#[test]
fn ex_pairs_grade_as_expected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sqlite");
    let mut rng = StdRng::seed_from_u64(0);
    shuffled_concert_db(&path, &mut rng);
    let db = schema_at("concert_singer", &path);
    for (pred, gold, want) in EX_PAIRS {
        assert_eq!(execution_match(pred, gold, &db, 2000).unwrap(), want, "{pred} vs {gold}");
        assert!(execution_match(gold, gold, &db, 2000).unwrap(), "{gold}");
    }
}

#[test]
fn ex_is_invariant_to_storage_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sqlite");
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..25 {
        shuffled_concert_db(&path, &mut rng);
        let db = schema_at("concert_singer", &path);
        for (pred, gold, want) in EX_PAIRS {
            assert_eq!(execution_match(pred, gold, &db, 2000).unwrap(), want, "{pred} vs {gold}");
        }
    }
}

#[test]
fn order_sensitive_pairs_are_the_ordered_golds() {
    let ordered: Vec<&str> = EX_PAIRS.iter().map(|p| p.1).filter(|g| has_top_level_order_by(g)).collect();
    assert_eq!(ordered.len(), 3);
    assert!(!has_top_level_order_by("SELECT name FROM (SELECT name FROM singer ORDER BY age)"));
    assert!(!has_top_level_order_by("SELECT 'ORDER BY' FROM singer"));
}
