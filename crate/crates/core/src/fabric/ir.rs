//! Engine-agnostic plan nodes.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::Value;
use super::FabricError;
use crate::embedding::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    MetaProbe,
    Scan,
    Aggregate,
    VectorSearch,
    Infer,
    Merge,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::MetaProbe => "meta_probe",
            OpKind::Scan => "scan",
            OpKind::Aggregate => "aggregate",
            OpKind::VectorSearch => "vector_search",
            OpKind::Infer => "infer",
            OpKind::Merge => "merge",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFn {
    Avg,
    Count,
    /// Population variance.
    Var,
}

/// The aggregated quantity: a column, or the difference of two timestamp columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldExpr {
    Column(String),
    Diff { later: String, earlier: String },
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldExpr::Column(c) => f.write_str(c),
            FieldExpr::Diff { later, earlier } => write!(f, "{later} - {earlier}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Conjunction of column comparisons; empty means "all rows".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Predicate {
    pub clauses: Vec<(String, CmpOp, Value)>,
}

impl Predicate {
    pub fn all() -> Self {
        Predicate::default()
    }

    pub fn eq(column: impl Into<String>, value: impl Into<Value>) -> Self {
        Predicate { clauses: vec![(column.into(), CmpOp::Eq, value.into())] }
    }

    pub fn and(mut self, column: impl Into<String>, op: CmpOp, value: impl Into<Value>) -> Self {
        self.clauses.push((column.into(), op, value.into()));
        self
    }

    /// Parses `col op literal [and col op literal ...]`, where literals are
    /// single-quoted text or numbers. Empty input or `true` means all rows.
    pub fn parse(input: &str) -> Result<Self, FabricError> {
        let trimmed = input.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("true") {
            return Ok(Predicate::all());
        }
        let bad = |why: &str| FabricError::MalformedPredicate(format!("{why}: `{input}`"));
        let mut clauses = Vec::new();
        for clause in split_and(trimmed) {
            let clause = clause.trim();
            let (pos, op) = ["!=", "<=", ">=", "=", "<", ">"]
                .iter()
                .filter_map(|sym| clause.find(sym).map(|p| (p, *sym)))
                .min_by_key(|(p, sym)| (*p, std::cmp::Reverse(sym.len())))
                .ok_or_else(|| bad("missing comparison"))?;
            let column = clause[..pos].trim();
            let literal = clause[pos + op.len()..].trim();
            if column.is_empty() || !column.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(bad("bad column name"));
            }
            let value = if let Some(inner) = literal.strip_prefix('\'') {
                let text = inner.strip_suffix('\'').ok_or_else(|| bad("unterminated string"))?;
                if text.contains('\'') {
                    return Err(bad("stray quote"));
                }
                Value::Text(text.to_string())
            } else {
                literal
                    .parse::<f64>()
                    .map(Value::Float)
                    .map_err(|_| bad("literal is neither quoted text nor a number"))?
            };
            let op = match op {
                "=" => CmpOp::Eq,
                "!=" => CmpOp::Ne,
                "<" => CmpOp::Lt,
                "<=" => CmpOp::Le,
                ">" => CmpOp::Gt,
                _ => CmpOp::Ge,
            };
            clauses.push((column.to_string(), op, value));
        }
        Ok(Predicate { clauses })
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.clauses.iter().map(|(c, _, _)| c.as_str())
    }

    /// Evaluates against a row accessor. Unknown columns are reported by the caller.
    pub fn matches<'a, F>(&self, get: F) -> bool
    where
        F: Fn(&str) -> Option<&'a Value>,
    {
        self.clauses.iter().all(|(col, op, lit)| match get(col) {
            Some(v) => v.compare(*op, lit),
            None => false,
        })
    }
}

fn split_and(s: &str) -> Vec<&str> {
    let lower = s.to_ascii_lowercase();
    let mut parts = Vec::new();
    let mut start = 0;
    let mut in_quote = false;
    let bytes = lower.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\'' {
            in_quote = !in_quote;
        } else if !in_quote && lower[i..].starts_with(" and ") {
            parts.push(&s[start..i]);
            start = i + 5;
            i += 5;
            continue;
        }
        i += 1;
    }
    parts.push(&s[start..]);
    parts
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return f.write_str("true");
        }
        for (i, (c, op, v)) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{c} {} {}", op.symbol(), v.literal())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum NodeKind {
    MetaProbe { source: String, name_pattern: String },
    Scan { source: String, table: String, predicate: Predicate, limit: Option<usize> },
    Aggregate { input: Box<PlanNode>, group_key: String, agg: AggFn, field: FieldExpr },
    VectorSearch { source: String, query_embedding: Embedding, query_text: String, k: usize },
    Infer { source: String, model_id: String, input: String },
    Merge { children: Vec<PlanNode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub node_id: String,
    pub kind: NodeKind,
    /// Results may only be reused for a textually identical node.
    pub requires_exact: bool,
}

impl PlanNode {
    pub fn new(node_id: impl Into<String>, kind: NodeKind) -> Self {
        let requires_exact = matches!(kind, NodeKind::Scan { .. } | NodeKind::Aggregate { .. });
        PlanNode { node_id: node_id.into(), kind, requires_exact }
    }

    pub fn op_kind(&self) -> OpKind {
        match self.kind {
            NodeKind::MetaProbe { .. } => OpKind::MetaProbe,
            NodeKind::Scan { .. } => OpKind::Scan,
            NodeKind::Aggregate { .. } => OpKind::Aggregate,
            NodeKind::VectorSearch { .. } => OpKind::VectorSearch,
            NodeKind::Infer { .. } => OpKind::Infer,
            NodeKind::Merge { .. } => OpKind::Merge,
        }
    }

    /// The source a single-engine node targets; `None` for `Merge`.
    pub fn source(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::MetaProbe { source, .. }
            | NodeKind::Scan { source, .. }
            | NodeKind::VectorSearch { source, .. }
            | NodeKind::Infer { source, .. } => Some(source),
            NodeKind::Aggregate { input, .. } => input.source(),
            NodeKind::Merge { .. } => None,
        }
    }

    /// Engine-neutral textual form, independent of `node_id`.
    pub fn canonical(&self) -> String {
        match &self.kind {
            NodeKind::MetaProbe { source, name_pattern } => {
                format!("meta_probe {source} like '{name_pattern}'")
            }
            NodeKind::Scan { source, table, predicate, limit } => {
                let mut s = format!("scan {source}.{table} where {predicate}");
                if let Some(n) = limit {
                    s.push_str(&format!(" limit {n}"));
                }
                s
            }
            NodeKind::Aggregate { input, group_key, agg, field } => {
                let agg = match agg {
                    AggFn::Avg => "avg",
                    AggFn::Count => "count",
                    AggFn::Var => "var",
                };
                format!("aggregate {agg}({field}) by {group_key} from ({})", input.canonical())
            }
            NodeKind::VectorSearch { source, query_text, k, .. } => {
                format!("vector_search {source} k={k} near '{query_text}'")
            }
            NodeKind::Infer { source, model_id, input } => {
                format!("infer {source}/{model_id} on '{input}'")
            }
            NodeKind::Merge { children } => {
                let inner: Vec<String> = children.iter().map(PlanNode::canonical).collect();
                format!("merge [{}]", inner.join(", "))
            }
        }
    }

    /// Checks the structural rules: `Aggregate` wraps exactly one `Scan`,
    /// only `Merge` has several children, and node ids are unique.
    pub fn validate(&self) -> Result<(), FabricError> {
        let mut seen = std::collections::BTreeSet::new();
        self.validate_inner(&mut seen)
    }

    fn validate_inner<'a>(&'a self, seen: &mut std::collections::BTreeSet<&'a str>) -> Result<(), FabricError> {
        if !seen.insert(self.node_id.as_str()) {
            return Err(FabricError::InvalidPlan(format!("duplicate node id `{}`", self.node_id)));
        }
        match &self.kind {
            NodeKind::Aggregate { input, .. } => {
                if !matches!(input.kind, NodeKind::Scan { .. }) {
                    return Err(FabricError::InvalidPlan("aggregate input must be a scan".into()));
                }
                input.validate_inner(seen)
            }
            NodeKind::Merge { children } => {
                for c in children {
                    c.validate_inner(seen)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// SQL `LIKE` with `%` (any run) and `_` (one char), case-insensitive.
pub fn like(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.to_lowercase().chars().collect();
    let t: Vec<char> = text.to_lowercase().chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '%' {
        pi += 1;
    }
    pi == p.len()
}
