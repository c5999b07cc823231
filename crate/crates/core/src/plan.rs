//! Compilation of query trees into single-operator execution plans.
//!
//! Emission is depth-first, left to right. Sibling branches are fully emitted
//! before the INTERSECT/UNION that combines them, and negated branches feed a
//! SUBTRACT placed after the positive combination.

use std::collections::BTreeSet;
use std::fmt::{self, Write};

use serde_json::{json, Value};
use thiserror::Error;

use crate::kg::{EntityId, RelationId};
use crate::query::QueryAst;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("unsupported structure: query compiles to no operator step")]
    Unsupported,
    #[error("step index {0} out of range")]
    BadIndex(usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum StepKind {
    Project,
    Intersect,
    Union,
    Subtract,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Project => "PROJECT",
            Self::Intersect => "INTERSECT",
            Self::Union => "UNION",
            Self::Subtract => "SUBTRACT",
        }
    }

    fn code(self) -> char {
        match self {
            Self::Project => 'P',
            Self::Intersect => 'I',
            Self::Union => 'U',
            Self::Subtract => 'S',
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SourceRef {
    Literal(BTreeSet<EntityId>),
    Step(usize),
}

impl fmt::Display for SourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Literal(set) => write!(f, "{{{}}}", join_ids(set.iter())),
            Self::Step(i) => write!(f, "#{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StepOp {
    Project {
        source: SourceRef,
        relation: RelationId,
    },
    Intersect(Vec<SourceRef>),
    Union(Vec<SourceRef>),
    Subtract {
        base: SourceRef,
        removed: SourceRef,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub index: usize,
    pub op: StepOp,
}

impl Step {
    pub fn kind(&self) -> StepKind {
        match self.op {
            StepOp::Project { .. } => StepKind::Project,
            StepOp::Intersect(_) => StepKind::Intersect,
            StepOp::Union(_) => StepKind::Union,
            StepOp::Subtract { .. } => StepKind::Subtract,
        }
    }

    /// Arguments in positional order (subtract: base, then removed).
    pub fn sources(&self) -> Vec<&SourceRef> {
        match &self.op {
            StepOp::Project { source, .. } => vec![source],
            StepOp::Intersect(s) | StepOp::Union(s) => s.iter().collect(),
            StepOp::Subtract { base, removed } => vec![base, removed],
        }
    }

    pub fn relation(&self) -> Option<RelationId> {
        match self.op {
            StepOp::Project { relation, .. } => Some(relation),
            _ => None,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {}", self.index, self.kind())?;
        match &self.op {
            StepOp::Project { source, relation } => {
                write!(f, " source={source} relation={relation}")
            }
            StepOp::Intersect(s) | StepOp::Union(s) => {
                let parts: Vec<String> = s.iter().map(ToString::to_string).collect();
                write!(f, " sources={}", parts.join(","))
            }
            StepOp::Subtract { base, removed } => write!(f, " base={base} removed={removed}"),
        }
    }
}

/// Topologically ordered steps; the last step is the output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    steps: Vec<Step>,
}

impl Plan {
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn output(&self) -> usize {
        self.steps.len() - 1
    }

    /// All literal entities, in step order, deduplicated.
    pub fn anchors(&self) -> BTreeSet<EntityId> {
        self.steps
            .iter()
            .flat_map(|s| s.sources())
            .filter_map(|s| match s {
                SourceRef::Literal(set) => Some(set.iter().copied()),
                SourceRef::Step(_) => None,
            })
            .flatten()
            .collect()
    }

    /// Canonical signature of step `index`. Literals render as sorted id
    /// lists, references expand to the referenced step's signature, and
    /// INTERSECT/UNION sort their argument signatures.
    pub fn signature(&self, index: usize) -> Result<String, PlanError> {
        if index >= self.steps.len() {
            return Err(PlanError::BadIndex(index));
        }
        Ok(self.signatures()[index].clone())
    }

    /// Signatures of every step, in plan order.
    pub fn signatures(&self) -> Vec<String> {
        let mut sigs: Vec<String> = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let arg = |s: &SourceRef| match s {
                SourceRef::Literal(set) => format!("{{{}}}", join_ids(set.iter())),
                SourceRef::Step(i) => format!("({})", sigs[*i]),
            };
            let code = step.kind().code();
            let sig = match &step.op {
                StepOp::Project { source, relation } => {
                    format!("{code}|{relation}|{}", arg(source))
                }
                StepOp::Intersect(s) | StepOp::Union(s) => {
                    let mut parts: Vec<String> = s.iter().map(arg).collect();
                    parts.sort();
                    format!("{code}|[{}]", parts.join(";"))
                }
                StepOp::Subtract { base, removed } => {
                    format!("{code}|{};{}", arg(base), arg(removed))
                }
            };
            sigs.push(sig);
        }
        sigs
    }

    /// One line per step.
    pub fn pretty_print(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = writeln!(out, "{s}");
        }
        out
    }

    /// Structured per-step records for tooling.
    pub fn to_records(&self) -> Vec<Value> {
        let sigs = self.signatures();
        self.steps
            .iter()
            .zip(sigs)
            .map(|(s, sig)| {
                let src = |r: &SourceRef| match r {
                    SourceRef::Literal(set) => {
                        json!({"literal": set.iter().map(|e| e.label()).collect::<Vec<_>>()})
                    }
                    SourceRef::Step(i) => json!({"step": i}),
                };
                let mut rec = json!({
                    "index": s.index,
                    "kind": s.kind().name(),
                    "signature": sig,
                    "output": s.index == self.output(),
                });
                let obj = rec.as_object_mut().unwrap();
                match &s.op {
                    StepOp::Project { source, relation } => {
                        obj.insert("source".into(), src(source));
                        obj.insert("relation".into(), json!(relation.label()));
                    }
                    StepOp::Intersect(v) | StepOp::Union(v) => {
                        obj.insert("sources".into(), Value::Array(v.iter().map(src).collect()));
                    }
                    StepOp::Subtract { base, removed } => {
                        obj.insert("base".into(), src(base));
                        obj.insert("removed".into(), src(removed));
                    }
                }
                rec
            })
            .collect()
    }
}

fn join_ids<'a>(ids: impl Iterator<Item = &'a EntityId>) -> String {
    ids.map(|e| e.label()).collect::<Vec<_>>().join(",")
}

/// Compiles a validated query tree. A bare anchor produces no step and is
/// rejected.
pub fn compile(ast: &QueryAst) -> Result<Plan, PlanError> {
    let mut steps = Vec::new();
    match emit(ast, &mut steps) {
        SourceRef::Step(_) => Ok(Plan { steps }),
        SourceRef::Literal(_) => Err(PlanError::Unsupported),
    }
}

fn push(steps: &mut Vec<Step>, op: StepOp) -> SourceRef {
    let index = steps.len();
    steps.push(Step { index, op });
    SourceRef::Step(index)
}

fn emit(ast: &QueryAst, steps: &mut Vec<Step>) -> SourceRef {
    match ast {
        QueryAst::Anchor(e) => SourceRef::Literal(BTreeSet::from([*e])),
        QueryAst::Projection(child, relation) => {
            let source = emit(child, steps);
            push(
                steps,
                StepOp::Project {
                    source,
                    relation: *relation,
                },
            )
        }
        QueryAst::Union(children) => {
            let sources = children.iter().map(|c| emit(c, steps)).collect();
            push(steps, StepOp::Union(sources))
        }
        QueryAst::Intersection(branches) => {
            let mut positive = Vec::new();
            let mut negative = Vec::new();
            for b in branches {
                let src = emit(&b.query, steps);
                if b.negated {
                    negative.push(src);
                } else {
                    positive.push(src);
                }
            }
            let mut acc = if positive.len() == 1 {
                positive.pop().unwrap()
            } else {
                push(steps, StepOp::Intersect(positive))
            };
            for removed in negative {
                acc = push(steps, StepOp::Subtract { base: acc, removed });
            }
            acc
        }
    }
}
