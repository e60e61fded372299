//! Difficulty buckets from feature counts of the gold query.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Expr, GroupByExpr, Query, Select, SetExpr, Visit, Visitor};

use super::sketch::{conjuncts_of, parse_query, SketchError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
        }
    }
}

/// Inclusive upper bounds on the component count for each bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyRules {
    pub easy_max: usize,
    pub medium_max: usize,
    pub hard_max: usize,
}

impl Default for DifficultyRules {
    fn default() -> Self {
        DifficultyRules {
            easy_max: 1,
            medium_max: 3,
            hard_max: 5,
        }
    }
}

impl DifficultyRules {
    pub fn bucket(&self, count: usize) -> Difficulty {
        if count <= self.easy_max {
            Difficulty::Easy
        } else if count <= self.medium_max {
            Difficulty::Medium
        } else if count <= self.hard_max {
            Difficulty::Hard
        } else {
            Difficulty::Extra
        }
    }
}

/// Raw feature counts, summed over every select block in the statement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Features {
    pub joins: usize,
    pub aggregates: usize,
    pub nested_selects: usize,
    pub set_ops: usize,
    pub group_by: bool,
    pub order_by: bool,
    pub multi_conjunct_where: bool,
}

impl Features {
    pub fn component_count(&self) -> usize {
        self.joins
            + self.aggregates
            + self.nested_selects
            + self.set_ops
            + usize::from(self.group_by)
            + usize::from(self.order_by)
            + usize::from(self.multi_conjunct_where)
    }
}

const AGGREGATES: &[&str] = &["count", "sum", "avg", "min", "max"];

struct Counter {
    f: Features,
    queries: usize,
}

impl Counter {
    fn select(&mut self, s: &Select) {
        self.f.joins += s.from.iter().map(|t| t.joins.len()).sum::<usize>();
        if s.from.len() > 1 {
            self.f.joins += s.from.len() - 1;
        }
        match &s.group_by {
            GroupByExpr::All(_) => self.f.group_by = true,
            GroupByExpr::Expressions(v, _) if !v.is_empty() => self.f.group_by = true,
            _ => {}
        }
        if s.selection.as_ref().is_some_and(|w| conjuncts_of(w).len() > 1) {
            self.f.multi_conjunct_where = true;
        }
    }

    fn set_expr(&mut self, e: &SetExpr) {
        match e {
            SetExpr::Select(s) => self.select(s),
            SetExpr::SetOperation { left, right, .. } => {
                self.f.set_ops += 1;
                self.set_expr(left);
                self.set_expr(right);
            }
            _ => {}
        }
    }
}

impl Visitor for Counter {
    type Break = ();

    fn pre_visit_query(&mut self, q: &Query) -> ControlFlow<()> {
        self.queries += 1;
        if q.order_by.is_some() {
            self.f.order_by = true;
        }
        self.set_expr(&q.body);
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, e: &Expr) -> ControlFlow<()> {
        if let Expr::Function(f) = e {
            let name = f.name.to_string().to_lowercase();
            if AGGREGATES.contains(&name.as_str()) {
                self.f.aggregates += 1;
            }
        }
        ControlFlow::Continue(())
    }
}

pub fn features(sql: &str) -> Result<Features, SketchError> {
    let q = parse_query(sql)?;
    let mut c = Counter {
        f: Features::default(),
        queries: 0,
    };
    let _ = q.visit(&mut c);
    c.f.nested_selects = c.queries.saturating_sub(1);
    Ok(c.f)
}

pub fn classify_difficulty(gold: &str, rules: &DifficultyRules) -> Result<Difficulty, SketchError> {
    Ok(rules.bucket(features(gold)?.component_count()))
}
