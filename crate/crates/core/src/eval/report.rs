//! Per-difficulty accuracy grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Difficulty, EvalOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub label: String,
    pub count: usize,
    pub ex_correct: usize,
    pub em_correct: usize,
    /// Percentages; `None` for an empty bucket.
    pub ex: Option<f64>,
    pub em: Option<f64>,
}

impl BucketStats {
    fn new(label: &str, outcomes: &[&EvalOutcome]) -> Self {
        let count = outcomes.len();
        let ex_correct = outcomes.iter().filter(|o| o.ex).count();
        let em_correct = outcomes.iter().filter(|o| o.em).count();
        let pct = |k: usize| (count > 0).then(|| 100.0 * k as f64 / count as f64);
        BucketStats {
            label: label.to_string(),
            count,
            ex_correct,
            em_correct,
            ex: pct(ex_correct),
            em: pct(em_correct),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// easy, medium, hard, extra, all
    pub buckets: Vec<BucketStats>,
    pub graded: usize,
    pub gold_invalid: usize,
    pub fallback_cases: usize,
    pub fallback_rate: Option<f64>,
}

/// Gold-invalid outcomes are counted separately and left out of every
/// percentage.
pub fn aggregate(outcomes: &[EvalOutcome]) -> Report {
    let graded: Vec<&EvalOutcome> = outcomes.iter().filter(|o| !o.gold_invalid).collect();
    let mut buckets: Vec<BucketStats> = Difficulty::ALL
        .iter()
        .map(|d| {
            let members: Vec<&EvalOutcome> = graded.iter().copied().filter(|o| o.difficulty == *d).collect();
            BucketStats::new(d.as_str(), &members)
        })
        .collect();
    buckets.push(BucketStats::new("all", &graded));
    let fallback_cases = graded.iter().filter(|o| o.fallback_used).count();
    Report {
        buckets,
        graded: graded.len(),
        gold_invalid: outcomes.len() - graded.len(),
        fallback_cases,
        fallback_rate: (!graded.is_empty()).then(|| 100.0 * fallback_cases as f64 / graded.len() as f64),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

impl Report {
    pub fn overall(&self) -> &BucketStats {
        self.buckets.last().expect("report always has an overall bucket")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for b in &self.buckets {
            let _ = write!(out, "{:>9}", b.label);
        }
        out.push('\n');
        type Row = (&'static str, fn(&BucketStats) -> String);
        let rows: [Row; 3] = [
            ("count", |b| b.count.to_string()),
            ("EX", |b| cell(b.ex)),
            ("EM", |b| cell(b.em)),
        ];
        for (name, f) in rows {
            let _ = write!(out, "{name:<8}");
            for b in &self.buckets {
                let _ = write!(out, "{:>9}", f(b));
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "\ngraded {}  gold-invalid {}  fallback {} ({})",
            self.graded,
            self.gold_invalid,
            self.fallback_cases,
            self.fallback_rate.map_or_else(|| "-".to_string(), |r| format!("{r:.1}%"))
        );
        out
    }
}
