//! Clause-level canonical form of a SQL query, used for exact match.
//!
//! Canonicalization runs on the parsed AST:
//! - identifiers and function names are lowercased;
//! - table aliases are replaced by the table they name and then dropped;
//! - projection aliases are substituted into `ORDER BY`/`HAVING`, then dropped;
//! - a column qualifier equal to a select's only table is removed;
//! - double-quoted bare identifiers become string literals (SQLite reads
//!   Spider's `"%w%"` that way);
//! - operands of `=`/`<>` are ordered, and conjunct lists, projection items
//!   and group keys are sorted.
//!
//! The result is rendered back to text and re-canonicalized until stable, so
//! parsing the canonical text always yields an equal [`SqlSketch`].

use std::collections::HashMap;
use std::ops::ControlFlow;

use serde::Serialize;
use sqlparser::ast::{
    BinaryOperator, Expr, GroupByExpr, Ident, JoinConstraint, JoinOperator, LimitClause, ObjectName,
    ObjectNamePart, OrderBy, OrderByKind, OrderBySort, Query, Select, SelectItem, SetExpr, SetOperator,
    SetQuantifier, Statement, TableFactor, Value, Visit, VisitMut, Visitor, VisitorMut,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SketchError {
    #[error("SQL parse error: {0}")]
    Parse(String),
    #[error("expected exactly one query statement, found {0}")]
    NotAQuery(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelectSketch {
    pub distinct: bool,
    pub items: Vec<String>,
    pub from: Vec<String>,
    pub join_conditions: Vec<String>,
    pub where_conjuncts: Vec<String>,
    pub group_by: Vec<String>,
    pub having: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Block {
    Select(SelectSketch),
    Nested(Box<SqlSketch>),
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrderKey {
    pub expr: String,
    pub descending: bool,
}

/// Clause map of one statement. Set-valued clauses are stored sorted, so
/// derived equality is order-insensitive there and order-sensitive for
/// `order_by` and the compound chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SqlSketch {
    pub ctes: Vec<String>,
    pub head: Block,
    /// `(operator, block)` pairs following `head`, e.g. `("UNION", ...)`.
    pub compound: Vec<(String, Block)>,
    pub order_by: Vec<OrderKey>,
    pub limit: Option<String>,
    pub offset: Option<String>,
    /// Deepest subquery nesting; 0 for a flat query.
    pub depth: usize,
}

/// Parses a single query statement.
pub fn parse_query(sql: &str) -> Result<Query, SketchError> {
    let statements =
        Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| SketchError::Parse(e.to_string()))?;
    match statements.as_slice() {
        [Statement::Query(q)] => Ok((**q).clone()),
        [] => Err(SketchError::NotAQuery("no statement".into())),
        [other] => Err(SketchError::NotAQuery(format!("{:.40}", other.to_string()))),
        many => Err(SketchError::NotAQuery(format!("{} statements", many.len()))),
    }
}

const RESERVED: &[&str] = &[
    "all", "and", "as", "asc", "between", "by", "case", "check", "create", "cross", "default", "delete", "desc",
    "distinct", "drop", "else", "end", "except", "exists", "foreign", "from", "full", "group", "having", "in",
    "index", "inner", "insert", "intersect", "into", "is", "join", "key", "left", "like", "limit", "natural",
    "not", "null", "offset", "on", "or", "order", "outer", "primary", "references", "right", "select", "set",
    "table", "then", "union", "unique", "update", "using", "values", "when", "where",
];

fn normalize_ident(id: &mut Ident) {
    id.value = id.value.to_lowercase();
    let simple = id
        .value
        .chars()
        .enumerate()
        .all(|(i, c)| c == '_' || c.is_ascii_lowercase() || (i > 0 && c.is_ascii_digit()))
        && !id.value.is_empty();
    id.quote_style = if simple && !RESERVED.contains(&id.value.as_str()) {
        None
    } else {
        Some('`')
    };
}

fn object_last(name: &ObjectName) -> String {
    name.0
        .last()
        .and_then(ObjectNamePart::as_ident)
        .map(|i| i.value.clone())
        .unwrap_or_else(|| name.to_string())
}

fn split_conjuncts(e: Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            split_conjuncts(*left, out);
            split_conjuncts(*right, out);
        }
        Expr::Nested(inner) => match *inner {
            Expr::BinaryOp {
                op: BinaryOperator::And,
                ..
            }
            | Expr::Nested(_) => split_conjuncts(*inner, out),
            other => out.push(other),
        },
        other => out.push(other),
    }
}

pub(crate) fn conjuncts_of(e: &Expr) -> Vec<Expr> {
    let mut out = Vec::new();
    split_conjuncts(e.clone(), &mut out);
    out
}

fn sorted_and(e: Expr) -> Expr {
    let mut parts = Vec::new();
    split_conjuncts(e, &mut parts);
    parts.sort_by_cached_key(|p| p.to_string());
    parts
        .into_iter()
        .map(|p| match p {
            Expr::BinaryOp {
                op: BinaryOperator::Or | BinaryOperator::Xor,
                ..
            } => Expr::Nested(Box::new(p)),
            p => p,
        })
        .reduce(|acc, p| Expr::BinaryOp {
            left: Box::new(acc),
            op: BinaryOperator::And,
            right: Box::new(p),
        })
        .expect("at least one conjunct")
}

/// Rewrites column references inside one select scope.
struct ScopeRewrite<'a> {
    depth: usize,
    aliases: &'a HashMap<String, String>,
    single_table: Option<&'a str>,
    projection: &'a HashMap<String, Expr>,
}

impl VisitorMut for ScopeRewrite<'_> {
    type Break = ();

    fn pre_visit_query(&mut self, _q: &mut Query) -> ControlFlow<()> {
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _q: &mut Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn post_visit_expr(&mut self, expr: &mut Expr) -> ControlFlow<()> {
        if let Expr::CompoundIdentifier(parts) = expr {
            if parts.len() == 2 {
                if let Some(table) = self.aliases.get(&parts[0].value) {
                    parts[0].value = table.clone();
                    normalize_ident(&mut parts[0]);
                }
                if self.depth == 0 && self.single_table == Some(parts[0].value.as_str()) {
                    *expr = Expr::Identifier(parts[1].clone());
                }
            }
        }
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        if let Expr::Identifier(id) = expr {
            if let Some(e) = self.projection.get(&id.value) {
                *expr = e.clone();
            }
        }
        if let Expr::BinaryOp {
            left,
            op: BinaryOperator::Eq | BinaryOperator::NotEq,
            right,
        } = expr
        {
            if left.to_string() > right.to_string() {
                std::mem::swap(left, right);
            }
        }
        ControlFlow::Continue(())
    }
}

fn rewrite<T: VisitMut>(node: &mut T, scope: &mut ScopeRewrite<'_>) {
    let _ = node.visit(scope);
}

fn relations(sel: &Select) -> Vec<&TableFactor> {
    sel.from
        .iter()
        .flat_map(|twj| std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation)))
        .collect()
}

fn canonicalize_select(sel: &mut Select, order_by: Option<&mut OrderBy>) {
    let mut aliases = HashMap::new();
    for twj in &mut sel.from {
        for factor in std::iter::once(&mut twj.relation).chain(twj.joins.iter_mut().map(|j| &mut j.relation)) {
            if let TableFactor::Table { name, alias, .. } = factor {
                if let Some(a) = alias.take() {
                    aliases.insert(a.name.value.clone(), object_last(name));
                }
            }
        }
    }
    let rels = relations(sel);
    let single_table = match rels.as_slice() {
        [TableFactor::Table { name, .. }] => Some(object_last(name)),
        _ => None,
    };

    let mut projection_aliases = HashMap::new();
    for item in &mut sel.projection {
        if let SelectItem::ExprWithAlias { expr, alias } = item {
            projection_aliases.insert(alias.value.clone(), expr.clone());
            *item = SelectItem::UnnamedExpr(expr.clone());
        }
    }

    let no_projection = HashMap::new();
    let mut scope = ScopeRewrite {
        depth: 0,
        aliases: &aliases,
        single_table: single_table.as_deref(),
        projection: &no_projection,
    };
    rewrite(&mut sel.projection, &mut scope);
    if let Some(sel_expr) = sel.selection.as_mut() {
        rewrite(sel_expr, &mut scope);
    }
    if let GroupByExpr::Expressions(exprs, _) = &mut sel.group_by {
        rewrite(exprs, &mut scope);
        exprs.sort_by_cached_key(|e| e.to_string());
    }
    for twj in &mut sel.from {
        for join in &mut twj.joins {
            if let Some(JoinConstraint::On(e)) = join_constraint_mut(&mut join.join_operator) {
                rewrite(e, &mut scope);
                *e = sorted_and(e.clone());
            }
        }
    }

    // Projection aliases are only meaningful in HAVING and ORDER BY.
    let mut late_scope = ScopeRewrite {
        projection: &projection_aliases,
        ..scope
    };
    if let Some(h) = sel.having.as_mut() {
        rewrite(h, &mut late_scope);
        *h = sorted_and(h.clone());
    }
    if let Some(ob) = order_by {
        rewrite(ob, &mut late_scope);
    }

    if let Some(sel_expr) = sel.selection.take() {
        sel.selection = Some(sorted_and(sel_expr));
    }
    sel.projection.sort_by_cached_key(|i| i.to_string());
}

fn join_constraint_mut(op: &mut JoinOperator) -> Option<&mut JoinConstraint> {
    match op {
        JoinOperator::Join(c)
        | JoinOperator::Inner(c)
        | JoinOperator::Left(c)
        | JoinOperator::LeftOuter(c)
        | JoinOperator::Right(c)
        | JoinOperator::RightOuter(c)
        | JoinOperator::FullOuter(c)
        | JoinOperator::CrossJoin(c)
        | JoinOperator::Semi(c)
        | JoinOperator::LeftSemi(c)
        | JoinOperator::RightSemi(c)
        | JoinOperator::Anti(c)
        | JoinOperator::LeftAnti(c)
        | JoinOperator::RightAnti(c) => Some(c),
        _ => None,
    }
}

fn join_constraint(op: &JoinOperator) -> Option<&JoinConstraint> {
    match op {
        JoinOperator::Join(c)
        | JoinOperator::Inner(c)
        | JoinOperator::Left(c)
        | JoinOperator::LeftOuter(c)
        | JoinOperator::Right(c)
        | JoinOperator::RightOuter(c)
        | JoinOperator::FullOuter(c)
        | JoinOperator::CrossJoin(c)
        | JoinOperator::Semi(c)
        | JoinOperator::LeftSemi(c)
        | JoinOperator::RightSemi(c)
        | JoinOperator::Anti(c)
        | JoinOperator::LeftAnti(c)
        | JoinOperator::RightAnti(c) => Some(c),
        _ => None,
    }
}

/// Canonicalizes the selects of a set-expression chain, leftmost first,
/// without entering parenthesized sub-queries (those are handled as their
/// own query). Query-level `ORDER BY` goes with the leftmost select.
fn canonicalize_chain(e: &mut SetExpr, order_by: &mut Option<&mut OrderBy>) {
    match e {
        SetExpr::Select(s) => canonicalize_select(s, order_by.take()),
        SetExpr::SetOperation { left, right, .. } => {
            canonicalize_chain(left, order_by);
            canonicalize_chain(right, order_by);
        }
        _ => {}
    }
}

struct Canon;

impl VisitorMut for Canon {
    type Break = ();

    fn pre_visit_expr(&mut self, expr: &mut Expr) -> ControlFlow<()> {
        if let Expr::Identifier(id) = expr {
            if id.quote_style == Some('"') {
                *expr = Expr::value(Value::SingleQuotedString(id.value.clone()));
            }
        }
        ControlFlow::Continue(())
    }

    fn post_visit_ident(&mut self, id: &mut Ident) -> ControlFlow<()> {
        normalize_ident(id);
        ControlFlow::Continue(())
    }

    fn post_visit_relation(&mut self, name: &mut ObjectName) -> ControlFlow<()> {
        for part in &mut name.0 {
            if let ObjectNamePart::Identifier(id) = part {
                normalize_ident(id);
            }
        }
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, q: &mut Query) -> ControlFlow<()> {
        let mut order_by = q.order_by.as_mut();
        canonicalize_chain(&mut q.body, &mut order_by);
        ControlFlow::Continue(())
    }
}

fn canonicalize_once(q: &mut Query) {
    let _ = q.visit(&mut Canon);
}

/// Canonical AST and its rendered text.
pub fn canonicalize(sql: &str) -> Result<(Query, String), SketchError> {
    let mut q = parse_query(sql)?;
    canonicalize_once(&mut q);
    let mut text = q.to_string();
    for _ in 0..4 {
        let mut again = parse_query(&text)?;
        canonicalize_once(&mut again);
        let next = again.to_string();
        if next == text {
            return Ok((again, text));
        }
        q = again;
        text = next;
    }
    Ok((q, text))
}

pub fn canonical_sql(sql: &str) -> Result<String, SketchError> {
    canonicalize(sql).map(|(_, text)| text)
}

struct DepthProbe {
    current: usize,
    max: usize,
}

impl Visitor for DepthProbe {
    type Break = ();
    fn pre_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.current += 1;
        self.max = self.max.max(self.current);
        ControlFlow::Continue(())
    }
    fn post_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.current -= 1;
        ControlFlow::Continue(())
    }
}

fn strings_sorted<'a>(items: impl Iterator<Item = &'a Expr>) -> Vec<String> {
    let mut v: Vec<String> = items.map(|e| e.to_string()).collect();
    v.sort();
    v
}

fn select_sketch(sel: &Select) -> SelectSketch {
    let mut items: Vec<String> = sel.projection.iter().map(|i| i.to_string()).collect();
    items.sort();
    let mut from: Vec<String> = relations(sel)
        .into_iter()
        .map(|f| match f {
            TableFactor::Table { name, .. } => name.to_string(),
            other => other.to_string(),
        })
        .collect();
    from.sort();
    let mut join_conditions = Vec::new();
    for twj in &sel.from {
        for join in &twj.joins {
            match join_constraint(&join.join_operator) {
                Some(JoinConstraint::On(e)) => {
                    join_conditions.extend(conjuncts_of(e).iter().map(|c| c.to_string()))
                }
                Some(JoinConstraint::Using(cols)) => join_conditions.push(format!(
                    "USING({})",
                    cols.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
                )),
                Some(JoinConstraint::Natural) => join_conditions.push("NATURAL".into()),
                _ => {}
            }
        }
    }
    join_conditions.sort();
    let where_conjuncts = sel
        .selection
        .as_ref()
        .map(|e| strings_sorted(conjuncts_of(e).iter()))
        .unwrap_or_default();
    let having = sel
        .having
        .as_ref()
        .map(|e| strings_sorted(conjuncts_of(e).iter()))
        .unwrap_or_default();
    let group_by = match &sel.group_by {
        GroupByExpr::Expressions(exprs, _) => strings_sorted(exprs.iter()),
        GroupByExpr::All(_) => vec!["ALL".into()],
    };
    SelectSketch {
        distinct: sel.distinct.is_some(),
        items,
        from,
        join_conditions,
        where_conjuncts,
        group_by,
        having,
    }
}

fn set_op_label(op: &SetOperator, q: &SetQuantifier) -> String {
    let q = q.to_string();
    if q.is_empty() {
        op.to_string()
    } else {
        format!("{op} {q}")
    }
}

fn flatten(e: &SetExpr, out: &mut Vec<(Option<String>, Block)>) {
    match e {
        SetExpr::SetOperation {
            left,
            op,
            set_quantifier,
            right,
        } => {
            flatten(left, out);
            let start = out.len();
            flatten(right, out);
            out[start].0 = Some(set_op_label(op, set_quantifier));
        }
        SetExpr::Select(s) => out.push((None, Block::Select(select_sketch(s)))),
        SetExpr::Query(q) => out.push((None, Block::Nested(Box::new(sketch_of(q))))),
        other => out.push((None, Block::Other(other.to_string()))),
    }
}

fn sketch_of(q: &Query) -> SqlSketch {
    let mut blocks = Vec::new();
    flatten(&q.body, &mut blocks);
    let mut iter = blocks.into_iter();
    let head = iter.next().map(|(_, b)| b).unwrap_or(Block::Other(String::new()));
    let compound = iter.map(|(op, b)| (op.unwrap_or_default(), b)).collect();
    let order_by = match &q.order_by {
        Some(OrderBy {
            kind: OrderByKind::Expressions(exprs),
            ..
        }) => exprs
            .iter()
            .map(|o| OrderKey {
                expr: o.expr.to_string(),
                descending: matches!(o.options.sort, Some(OrderBySort::Desc)),
            })
            .collect(),
        Some(other) => vec![OrderKey {
            expr: other.to_string(),
            descending: false,
        }],
        None => Vec::new(),
    };
    let (limit, offset) = match &q.limit_clause {
        Some(LimitClause::LimitOffset { limit, offset, .. }) => (
            limit.as_ref().map(|l| l.to_string()),
            offset.as_ref().map(|o| o.value.to_string()),
        ),
        Some(LimitClause::OffsetCommaLimit { offset, limit }) => {
            (Some(limit.to_string()), Some(offset.to_string()))
        }
        None => (None, None),
    };
    let ctes = q
        .with
        .as_ref()
        .map(|w| w.cte_tables.iter().map(|c| c.to_string()).collect())
        .unwrap_or_default();
    let mut probe = DepthProbe { current: 0, max: 0 };
    let _ = q.visit(&mut probe);
    SqlSketch {
        ctes,
        head,
        compound,
        order_by,
        limit,
        offset,
        depth: probe.max.saturating_sub(1),
    }
}

impl SqlSketch {
    pub fn from_sql(sql: &str) -> Result<Self, SketchError> {
        let (q, _) = canonicalize(sql)?;
        Ok(sketch_of(&q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sk(sql: &str) -> SqlSketch {
        SqlSketch::from_sql(sql).unwrap()
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        assert_eq!(sk("SELECT name FROM singer"), sk("select   NAME\n from SINGER ;"));
    }

    #[test]
    fn projection_order_ignored() {
        assert_eq!(sk("SELECT a, b FROM t"), sk("SELECT b, a FROM t"));
    }

    #[test]
    fn literal_change_detected() {
        assert_ne!(sk("SELECT a FROM t WHERE x > 5"), sk("SELECT a FROM t WHERE x > 6"));
        assert_ne!(sk("SELECT a FROM t WHERE n = 'Bob'"), sk("SELECT a FROM t WHERE n = 'bob'"));
    }

    #[test]
    fn aliases_resolved() {
        let a = sk("SELECT T2.name FROM concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id WHERE T1.year = 2014");
        let b = sk("SELECT singer.name FROM concert JOIN singer ON singer.singer_id = concert.singer_id WHERE concert.year = 2014");
        assert_eq!(a, b);
        assert!(matches!(&a.head, Block::Select(s) if s.from == vec!["concert", "singer"]));
    }

    #[test]
    fn single_table_qualifier_dropped() {
        assert_eq!(sk("SELECT singer.name FROM singer"), sk("SELECT name FROM singer"));
        assert_eq!(sk("SELECT s.name FROM singer AS s"), sk("SELECT name FROM singer"));
    }

    #[test]
    fn projection_alias_substituted_in_order_by() {
        assert_eq!(
            sk("SELECT country, count(*) AS n FROM singer GROUP BY country ORDER BY n DESC"),
            sk("SELECT country, COUNT(*) FROM singer GROUP BY country ORDER BY count(*) DESC")
        );
    }

    #[test]
    fn conjunct_order_and_equality_direction_ignored() {
        assert_eq!(
            sk("SELECT a FROM t WHERE x = 1 AND y > 2"),
            sk("SELECT a FROM t WHERE y > 2 AND 1 = x")
        );
    }

    #[test]
    fn order_by_is_sequence() {
        assert_ne!(
            sk("SELECT a FROM t ORDER BY a, b"),
            sk("SELECT a FROM t ORDER BY b, a")
        );
        assert_ne!(sk("SELECT a FROM t ORDER BY a"), sk("SELECT a FROM t ORDER BY a DESC"));
    }

    #[test]
    fn double_quoted_value_is_string_literal() {
        assert_eq!(
            sk(r#"SELECT a FROM t WHERE d LIKE "%w%""#),
            sk("SELECT a FROM t WHERE d LIKE '%w%'")
        );
    }

    #[test]
    fn or_conjunct_keeps_precedence_through_fixpoint() {
        let sql = "SELECT a FROM t WHERE (x = 1 OR y = 2) AND z = 3";
        let text = canonical_sql(sql).unwrap();
        assert_eq!(sk(&text), sk(sql));
        assert_eq!(canonical_sql(&text).unwrap(), text);
    }

    #[test]
    fn set_operations_and_depth() {
        let s = sk("SELECT name FROM singer WHERE age > (SELECT avg(age) FROM singer) UNION SELECT name FROM concert");
        assert_eq!(s.compound.len(), 1);
        assert_eq!(s.compound[0].0, "UNION");
        assert_eq!(s.depth, 1);
        assert_eq!(sk("SELECT 1").depth, 0);
    }

    #[test]
    fn rejects_non_queries() {
        assert!(matches!(SqlSketch::from_sql("DROP TABLE t"), Err(SketchError::NotAQuery(_))));
        assert!(matches!(SqlSketch::from_sql("SELEC nonsense"), Err(SketchError::Parse(_))));
        assert!(SqlSketch::from_sql("SELECT 1; SELECT 2").is_err());
    }
}
