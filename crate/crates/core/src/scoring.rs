//! Judge-assigned components, the weighted relevance score, and threshold
//! selection.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::GeneratedExample;
use crate::llm::{LlmClient, LlmError, ModelParams, Stage};
use crate::prompts::{build_filtering_prompt, PromptError};

pub const DEFAULT_THETA: f64 = 8.0;
pub const DEFAULT_FALLBACK_K: usize = 3;
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("component {0} outside [0, 10]")]
    ComponentRange(f64),
    #[error("threshold {0} outside [0, 10]")]
    Threshold(f64),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self::equal()
    }
}

impl WeightConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ScoringError> {
        let w = WeightConfig { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn equal() -> Self {
        WeightConfig {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let parts = [self.alpha, self.beta, self.gamma];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ScoringError::InvalidWeights(format!("{parts:?} must be finite and non-negative")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ScoringError::InvalidWeights(format!("{parts:?} sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let f = |x: f64| {
            if (x - 1.0 / 3.0).abs() < 1e-12 {
                "1/3".to_string()
            } else {
                format!("{x}")
            }
        };
        format!("({}, {}, {})", f(self.alpha), f(self.beta), f(self.gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub s_semantic: f64,
    pub a_structural: f64,
    pub r_reasoning: f64,
    pub rel: f64,
}

impl RelevanceScore {
    pub fn new(s: f64, a: f64, r: f64, w: &WeightConfig) -> Result<Self, ScoringError> {
        Ok(RelevanceScore {
            s_semantic: s,
            a_structural: a,
            r_reasoning: r,
            rel: combine(s, a, r, w)?,
        })
    }

    pub fn reweighted(&self, w: &WeightConfig) -> Result<Self, ScoringError> {
        Self::new(self.s_semantic, self.a_structural, self.r_reasoning, w)
    }
}

/// `alpha*s + beta*a + gamma*r`. Equal weights take the plain mean so
/// integer sums divisible by three come out exact; results within 1e-9 of
/// an integer snap to it, and the value is held inside [0, 10] against
/// rounding only.
pub fn combine(s: f64, a: f64, r: f64, w: &WeightConfig) -> Result<f64, ScoringError> {
    w.validate()?;
    for c in [s, a, r] {
        if !(0.0..=10.0).contains(&c) {
            return Err(ScoringError::ComponentRange(c));
        }
    }
    let rel = if w.alpha == w.beta && w.beta == w.gamma {
        (s + a + r) / 3.0
    } else {
        w.alpha * s + w.beta * a + w.gamma * r
    };
    let nearest = rel.round();
    let rel = if (rel - nearest).abs() < 1e-9 { nearest } else { rel };
    Ok(rel.clamp(0.0, 10.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub example: GeneratedExample,
    pub score: RelevanceScore,
    pub selected: bool,
    /// Judge reply unusable twice, or the example itself did not parse.
    #[serde(default)]
    pub scoring_failed: bool,
    /// Selected by the top-k fallback rather than the threshold.
    #[serde(default)]
    pub fallback: bool,
}

static LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(semantic|structural|keyword|reasoning)").expect("label regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("number regex"));
static RUBRIC_NOISE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\(\s*up\s+to\s+10\s+points\s*\)|/\s*10\b|out\s+of\s+10\b").expect("noise regex")
});

fn in_range(x: f64) -> Option<f64> {
    (0.0..=10.0).contains(&x).then_some(x)
}

/// Reads `(s, a, r)` from a judge reply: labeled values in any order, else
/// the first three numbers in [0, 10].
pub fn parse_judge_reply(reply: &str) -> Option<(f64, f64, f64)> {
    let text = RUBRIC_NOISE.replace_all(reply, " ");
    let mut slots: [Option<f64>; 3] = [None; 3];
    for line in text.lines() {
        let Some(m) = LABEL.find(line) else { continue };
        let idx = match m.as_str().to_lowercase().as_str() {
            "semantic" => 0,
            "reasoning" => 2,
            _ => 1,
        };
        if slots[idx].is_some() {
            continue;
        }
        slots[idx] = NUMBER
            .find(&line[m.end()..])
            .and_then(|n| n.as_str().parse::<f64>().ok())
            .and_then(in_range);
    }
    if let [Some(s), Some(a), Some(r)] = slots {
        return Some((s, a, r));
    }
    let nums: Vec<f64> = NUMBER
        .find_iter(&text)
        .filter_map(|n| n.as_str().parse::<f64>().ok())
        .filter_map(in_range)
        .take(3)
        .collect();
    match nums.as_slice() {
        [s, a, r] => Some((*s, *a, *r)),
        _ => None,
    }
}

/// Judge verdict for one example; `failed` means two unusable replies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub s: f64,
    pub a: f64,
    pub r: f64,
    pub failed: bool,
}

/// One judge call, retried once (as a distinct cache entry) when the reply
/// has no readable scores.
pub fn judge_components(
    client: &LlmClient,
    params: &ModelParams,
    test_question: &str,
    ex: &GeneratedExample,
) -> Result<Judgement, ScoringError> {
    let prompt = build_filtering_prompt(test_question, &ex.question, &ex.reasoning_path)?;
    for attempt in 0..2 {
        let reply = client.complete(&params.request(Stage::Scoring, prompt.clone()).with_attempt(attempt))?;
        if let Some((s, a, r)) = parse_judge_reply(&reply) {
            return Ok(Judgement { s, a, r, failed: false });
        }
        log::warn!("case {} example {}: unreadable judge reply", ex.test_case_id, ex.ordinal);
    }
    Ok(Judgement {
        s: 0.0,
        a: 0.0,
        r: 0.0,
        failed: true,
    })
}

/// Marks `selected = rel >= theta`. Order and length are preserved.
pub fn filter_by_threshold(mut scored: Vec<ScoredExample>, theta: f64) -> Result<Vec<ScoredExample>, ScoringError> {
    if !(0.0..=10.0).contains(&theta) {
        return Err(ScoringError::Threshold(theta));
    }
    for s in &mut scored {
        s.selected = s.score.rel >= theta;
        s.fallback = false;
    }
    Ok(scored)
}

/// Number of scores at or above `theta`.
pub fn retained(rels: &[f64], theta: f64) -> usize {
    rels.iter().filter(|r| **r >= theta).count()
}

/// When nothing is selected, selects the `k` best parseable examples
/// (ties to the lower ordinal). Returns whether it fired.
pub fn fallback_selection(scored: &mut [ScoredExample], k: usize) -> bool {
    if scored.iter().any(|s| s.selected) {
        return false;
    }
    let mut order: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].example.parse_ok).collect();
    if order.is_empty() || k == 0 {
        return false;
    }
    order.sort_by(|&i, &j| {
        scored[j]
            .score
            .rel
            .total_cmp(&scored[i].score.rel)
            .then(scored[i].example.ordinal.cmp(&scored[j].example.ordinal))
    });
    for &i in order.iter().take(k) {
        scored[i].selected = true;
        scored[i].fallback = true;
    }
    true
}

/// Judges every parseable example of one case, combines, filters, and
/// applies the fallback if enabled. Returns the scored list and whether the
/// fallback fired.
pub fn score_examples(
    client: &LlmClient,
    params: &ModelParams,
    test_question: &str,
    examples: &[GeneratedExample],
    weights: &WeightConfig,
    theta: f64,
    fallback_k: Option<usize>,
) -> Result<(Vec<ScoredExample>, bool), ScoringError> {
    let mut scored = Vec::with_capacity(examples.len());
    for ex in examples {
        let j = if ex.parse_ok {
            judge_components(client, params, test_question, ex)?
        } else {
            Judgement {
                s: 0.0,
                a: 0.0,
                r: 0.0,
                failed: true,
            }
        };
        scored.push(ScoredExample {
            example: ex.clone(),
            score: RelevanceScore::new(j.s, j.a, j.r, weights)?,
            selected: false,
            scoring_failed: j.failed,
            fallback: false,
        });
    }
    let mut scored = filter_by_threshold(scored, theta)?;
    let fired = fallback_k.is_some_and(|k| fallback_selection(&mut scored, k));
    Ok((scored, fired))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use std::sync::Arc;

    fn eq() -> WeightConfig {
        WeightConfig::equal()
    }

    fn ex(ordinal: usize, parse_ok: bool) -> GeneratedExample {
        GeneratedExample {
            test_case_id: 0,
            ordinal,
            question: format!("q{ordinal}"),
            sql: "SELECT 1".into(),
            reasoning_path: "r".into(),
            parse_ok,
            raw: None,
        }
    }

    fn scored(rels: &[f64]) -> Vec<ScoredExample> {
        rels.iter()
            .enumerate()
            .map(|(i, &rel)| ScoredExample {
                example: ex(i, true),
                score: RelevanceScore {
                    s_semantic: rel,
                    a_structural: rel,
                    r_reasoning: rel,
                    rel,
                },
                selected: false,
                scoring_failed: false,
                fallback: false,
            })
            .collect()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(combine(10.0, 10.0, 10.0, &eq()).unwrap(), 10.0);
        assert_eq!(combine(7.0, 9.0, 8.0, &eq()).unwrap(), 8.0);
        assert!((combine(6.0, 3.0, 2.0, &eq()).unwrap() - 11.0 / 3.0).abs() < 1e-12);
        let proj = WeightConfig::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(combine(6.5, 3.0, 2.0, &proj).unwrap(), 6.5);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(WeightConfig::new(0.33, 0.33, 0.33).is_err());
        assert!(WeightConfig::new(0.5, 0.5, 0.0).is_ok());
        assert!(WeightConfig::new(1.5, -0.5, 0.0).is_err());
        assert!(combine(11.0, 0.0, 0.0, &eq()).is_err());
    }

    #[test]
    fn judge_reply_formats() {
        assert_eq!(
            parse_judge_reply("Semantic: 10 Structural: 10 Reasoning: 10"),
            Some((10.0, 10.0, 10.0))
        );
        assert_eq!(parse_judge_reply("7, 9, 8"), Some((7.0, 9.0, 8.0)));
        assert_eq!(
            parse_judge_reply("**Reasoning Path Similarity**: 8/10\n**Semantic Similarity**: 7/10\n**Keyword & Structural Similarity** (up to 10 points): 9"),
            Some((7.0, 9.0, 8.0))
        );
        assert_eq!(parse_judge_reply("great example!"), None);
        assert_eq!(parse_judge_reply("scores: 12, 40"), None);
    }

    #[test]
    fn unreadable_twice_is_flagged_zero() {
        let c = LlmClient::new(Arc::new(ScriptedBackend::new().on(Stage::Scoring, &[], "great example!")), None);
        let j = judge_components(&c, &ModelParams::new("m", 0.0), "q", &ex(0, true)).unwrap();
        assert!(j.failed);
        assert_eq!((j.s, j.a, j.r), (0.0, 0.0, 0.0));
        assert_eq!(c.backend_calls(), 2);
    }

    #[test]
    fn threshold_is_inclusive() {
        let out = filter_by_threshold(scored(&[10.0, 8.0, 7.9]), 8.0).unwrap();
        assert_eq!(out.iter().map(|s| s.selected).collect::<Vec<_>>(), [true, true, false]);
        assert!(filter_by_threshold(scored(&[0.0, 3.0]), 0.0).unwrap().iter().all(|s| s.selected));
        assert!(filter_by_threshold(scored(&[1.0]), 10.5).is_err());
    }

    #[test]
    fn fallback_picks_top_k_ties_by_ordinal() {
        let mut s = filter_by_threshold(scored(&[5.0, 7.0, 6.0, 7.0, 1.0]), 8.0).unwrap();
        assert!(fallback_selection(&mut s, 3));
        let picked: Vec<usize> = s.iter().filter(|x| x.selected).map(|x| x.example.ordinal).collect();
        assert_eq!(picked, [1, 2, 3]);
        assert!(s.iter().filter(|x| x.selected).all(|x| x.fallback));
    }

    #[test]
    fn fallback_noop_and_cap() {
        let mut s = filter_by_threshold(scored(&[9.0, 1.0]), 8.0).unwrap();
        let before = s.clone();
        assert!(!fallback_selection(&mut s, 3));
        assert_eq!(s, before);
        let mut two = filter_by_threshold(scored(&[1.0, 2.0]), 8.0).unwrap();
        assert!(fallback_selection(&mut two, 3));
        assert!(two.iter().all(|x| x.selected));
    }

    #[test]
    fn score_examples_skips_unparsed_and_falls_back() {
        let c = LlmClient::new(Arc::new(ScriptedBackend::new().on(Stage::Scoring, &[], "7, 9, 8")), None);
        let exs = [ex(0, true), ex(1, false)];
        let (out, fired) =
            score_examples(&c, &ModelParams::new("m", 0.0), "q", &exs, &eq(), 9.0, Some(3)).unwrap();
        assert!(fired);
        assert_eq!(c.backend_calls(), 1);
        assert!(out[0].selected && out[0].score.rel == 8.0);
        assert!(!out[1].selected && out[1].scoring_failed);
    }
}
