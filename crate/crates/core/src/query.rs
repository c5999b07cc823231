//! Query model: the fourteen benchmark query shapes, their JSON encoding,
//! exact evaluation, and seeded instance generation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kg::{EntityId, GraphError, GraphSplit, KnowledgeGraph, RelationId};

pub type AnswerSet = BTreeSet<EntityId>;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed query: {0}")]
    Malformed(String),
    #[error("unknown query type {0:?}")]
    UnknownTag(String),
    #[error("declared type {declared} does not match structure ({actual})")]
    TagMismatch { declared: QueryType, actual: String },
    #[error("unsupported structure")]
    Unsupported,
    #[error("negation outside an intersection")]
    MisplacedNegation,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("count must be at least 1")]
    ZeroCount,
    #[error(
        "retry budget exhausted for {query_type}: produced {produced} of {requested} instances"
    )]
    BudgetExhausted {
        query_type: QueryType,
        produced: usize,
        requested: usize,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryType {
    P1,
    P2,
    P3,
    I2,
    I3,
    Ip,
    Pi,
    U2,
    Up,
    In2,
    In3,
    Inp,
    Pin,
    Pni,
}

impl QueryType {
    pub const ALL: [QueryType; 14] = [
        Self::P1,
        Self::P2,
        Self::P3,
        Self::I2,
        Self::I3,
        Self::Ip,
        Self::Pi,
        Self::U2,
        Self::Up,
        Self::In2,
        Self::In3,
        Self::Inp,
        Self::Pin,
        Self::Pni,
    ];

    /// Column order of the negation-free report table.
    pub const TYPICAL: [QueryType; 9] = [
        Self::P1,
        Self::P2,
        Self::P3,
        Self::I2,
        Self::I3,
        Self::Ip,
        Self::Pi,
        Self::U2,
        Self::Up,
    ];

    /// Column order of the negation report table.
    pub const NEGATION: [QueryType; 5] = [Self::In2, Self::In3, Self::Inp, Self::Pin, Self::Pni];

    pub fn tag(self) -> &'static str {
        match self {
            Self::P1 => "1p",
            Self::P2 => "2p",
            Self::P3 => "3p",
            Self::I2 => "2i",
            Self::I3 => "3i",
            Self::Ip => "ip",
            Self::Pi => "pi",
            Self::U2 => "2u",
            Self::Up => "up",
            Self::In2 => "2in",
            Self::In3 => "3in",
            Self::Inp => "inp",
            Self::Pin => "pin",
            Self::Pni => "pni",
        }
    }

    pub fn has_negation(self) -> bool {
        Self::NEGATION.contains(&self)
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QueryType {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| QueryError::UnknownTag(s.to_string()))
    }
}

impl Serialize for QueryType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for QueryType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum QueryAst {
    Anchor(EntityId),
    Projection(Box<QueryAst>, RelationId),
    Intersection(Vec<Branch>),
    Union(Vec<QueryAst>),
}

/// Child of an intersection, possibly negated.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Branch {
    pub query: QueryAst,
    pub negated: bool,
}

impl Branch {
    pub fn pos(query: QueryAst) -> Self {
        Self {
            query,
            negated: false,
        }
    }

    pub fn neg(query: QueryAst) -> Self {
        Self {
            query,
            negated: true,
        }
    }
}

impl QueryAst {
    pub fn anchor(e: EntityId) -> Self {
        Self::Anchor(e)
    }

    pub fn project(self, r: RelationId) -> Self {
        Self::Projection(Box::new(self), r)
    }

    /// Projection chain of `relations.len()` hops from `anchor`.
    pub fn chain(anchor: EntityId, relations: &[RelationId]) -> Self {
        relations
            .iter()
            .fold(Self::Anchor(anchor), |q, &r| q.project(r))
    }

    /// Checks arity and the "at least one positive branch" rule, recursively.
    pub fn validate(&self) -> Result<(), QueryError> {
        match self {
            Self::Anchor(_) => Ok(()),
            Self::Projection(child, _) => child.validate(),
            Self::Intersection(branches) => {
                if branches.len() < 2 {
                    return Err(QueryError::Malformed(
                        "intersection needs at least two children".into(),
                    ));
                }
                if branches.iter().all(|b| b.negated) {
                    return Err(QueryError::Malformed(
                        "intersection needs a non-negated child".into(),
                    ));
                }
                branches.iter().try_for_each(|b| b.query.validate())
            }
            Self::Union(children) => {
                if children.len() < 2 {
                    return Err(QueryError::Malformed(
                        "union needs at least two children".into(),
                    ));
                }
                children.iter().try_for_each(QueryAst::validate)
            }
        }
    }

    /// Errors if any anchor or relation lies outside the graph's id space.
    pub fn check_ids(&self, graph: &KnowledgeGraph) -> Result<(), GraphError> {
        match self {
            Self::Anchor(e) => graph.check_entity(*e),
            Self::Projection(child, r) => {
                graph.check_relation(*r)?;
                child.check_ids(graph)
            }
            Self::Intersection(bs) => bs.iter().try_for_each(|b| b.query.check_ids(graph)),
            Self::Union(cs) => cs.iter().try_for_each(|c| c.check_ids(graph)),
        }
    }

    /// Nested-array encoding used in query files.
    pub fn to_json(&self) -> Value {
        match self {
            Self::Anchor(e) => json!(["A", e.label()]),
            Self::Projection(child, r) => json!(["P", child.to_json(), r.label()]),
            Self::Union(cs) => {
                let mut v = vec![json!("U")];
                v.extend(cs.iter().map(QueryAst::to_json));
                Value::Array(v)
            }
            Self::Intersection(bs) => {
                let mut v = vec![json!("I")];
                v.extend(bs.iter().map(|b| json!([b.query.to_json(), b.negated])));
                Value::Array(v)
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, QueryError> {
        let ast = Self::from_json_unchecked(v)?;
        ast.validate()?;
        Ok(ast)
    }

    fn from_json_unchecked(v: &Value) -> Result<Self, QueryError> {
        let malformed = |m: &str| QueryError::Malformed(m.to_string());
        let arr = v
            .as_array()
            .ok_or_else(|| malformed("node must be an array"))?;
        let (head, rest) = arr.split_first().ok_or_else(|| malformed("empty node"))?;
        let label = |v: &Value| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| malformed("label must be a string"))
        };
        match head.as_str() {
            Some("A") => match rest {
                [e] => Ok(Self::Anchor(label(e)?.parse()?)),
                _ => Err(malformed("anchor takes one entity label")),
            },
            Some("P") => match rest {
                [child, r] => Ok(Self::from_json_unchecked(child)?.project(label(r)?.parse()?)),
                _ => Err(malformed("projection takes a child and a relation label")),
            },
            Some("U") => Ok(Self::Union(
                rest.iter()
                    .map(Self::from_json_unchecked)
                    .collect::<Result<_, _>>()?,
            )),
            Some("I") => Ok(Self::Intersection(
                rest.iter()
                    .map(|b| match b.as_array().map(Vec::as_slice) {
                        Some([q, Value::Bool(neg)]) => Ok(Branch {
                            query: Self::from_json_unchecked(q)?,
                            negated: *neg,
                        }),
                        _ => Err(malformed("intersection child must be [ast, bool]")),
                    })
                    .collect::<Result<_, _>>()?,
            )),
            Some("N") => Err(QueryError::MisplacedNegation),
            _ => Err(malformed("unknown node kind")),
        }
    }

    /// Anchor entities in depth-first order.
    pub fn anchors(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        self.collect_anchors(&mut out);
        out
    }

    fn collect_anchors(&self, out: &mut Vec<EntityId>) {
        match self {
            Self::Anchor(e) => out.push(*e),
            Self::Projection(c, _) => c.collect_anchors(out),
            Self::Intersection(bs) => bs.iter().for_each(|b| b.query.collect_anchors(out)),
            Self::Union(cs) => cs.iter().for_each(|c| c.collect_anchors(out)),
        }
    }

    fn is_1p(&self) -> bool {
        matches!(self, Self::Projection(c, _) if matches!(**c, Self::Anchor(_)))
    }

    fn is_2p(&self) -> bool {
        matches!(self, Self::Projection(c, _) if c.is_1p())
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

/// Matches `ast` against the fourteen standard templates. Branch order inside
/// intersections and unions does not matter.
pub fn classify(ast: &QueryAst) -> Result<QueryType, QueryError> {
    use QueryAst::*;
    let t = match ast {
        Anchor(_) => None,
        Projection(child, _) => match &**child {
            Anchor(_) => Some(QueryType::P1),
            c if c.is_1p() => Some(QueryType::P2),
            c if c.is_2p() => Some(QueryType::P3),
            Intersection(_) => match classify(child)? {
                QueryType::I2 => Some(QueryType::Ip),
                QueryType::In2 => Some(QueryType::Inp),
                _ => None,
            },
            Union(_) => match classify(child)? {
                QueryType::U2 => Some(QueryType::Up),
                _ => None,
            },
            _ => None,
        },
        Union(cs) if cs.len() == 2 && cs.iter().all(QueryAst::is_1p) => Some(QueryType::U2),
        Union(_) => None,
        Intersection(bs) => {
            let neg: Vec<&QueryAst> = bs.iter().filter(|b| b.negated).map(|b| &b.query).collect();
            let pos: Vec<&QueryAst> = bs.iter().filter(|b| !b.negated).map(|b| &b.query).collect();
            let all_1p = |v: &[&QueryAst]| v.iter().all(|q| q.is_1p());
            match (pos.as_slice(), neg.as_slice()) {
                (p, []) if p.len() == 2 && all_1p(p) => Some(QueryType::I2),
                (p, []) if p.len() == 3 && all_1p(p) => Some(QueryType::I3),
                ([a, b], []) if (a.is_2p() && b.is_1p()) || (a.is_1p() && b.is_2p()) => {
                    Some(QueryType::Pi)
                }
                ([a], [n]) if a.is_1p() && n.is_1p() => Some(QueryType::In2),
                (p, [n]) if p.len() == 2 && all_1p(p) && n.is_1p() => Some(QueryType::In3),
                ([a], [n]) if a.is_2p() && n.is_1p() => Some(QueryType::Pin),
                ([a], [n]) if a.is_1p() && n.is_2p() => Some(QueryType::Pni),
                _ => None,
            }
        }
    };
    t.ok_or(QueryError::Unsupported)
}

/// A parsed query line: identifier, declared type and validated structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub query_type: QueryType,
    pub ast: QueryAst,
}

impl Query {
    pub fn to_record(&self) -> Value {
        json!({"id": self.id, "type": self.query_type.tag(), "ast": self.ast.to_json()})
    }
}

/// Parses one query-file record `{"id", "type", "ast"}` and checks that the
/// structure matches the declared type.
pub fn parse_query(record: &str) -> Result<Query, QueryError> {
    let v: Value = serde_json::from_str(record)?;
    parse_query_value(&v)
}

pub fn parse_query_value(v: &Value) -> Result<Query, QueryError> {
    let field = |k: &str| {
        v.get(k)
            .ok_or_else(|| QueryError::Malformed(format!("missing field {k:?}")))
    };
    let id = field("id")?
        .as_str()
        .ok_or_else(|| QueryError::Malformed("id must be a string".into()))?
        .to_string();
    let query_type: QueryType = field("type")?
        .as_str()
        .ok_or_else(|| QueryError::Malformed("type must be a string".into()))?
        .parse()?;
    let ast = QueryAst::from_json(field("ast")?)?;
    match classify(&ast) {
        Ok(actual) if actual == query_type => Ok(Query {
            id,
            query_type,
            ast,
        }),
        Ok(actual) => Err(QueryError::TagMismatch {
            declared: query_type,
            actual: actual.tag().to_string(),
        }),
        Err(_) => Err(QueryError::TagMismatch {
            declared: query_type,
            actual: "unsupported structure".to_string(),
        }),
    }
}

/// Parses a whole query file, one record per non-blank line.
pub fn parse_query_file(text: &str) -> Result<Vec<Query>, (usize, QueryError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_query(l).map_err(|e| (i + 1, e)))
        .collect()
}

/// Easy/hard answers for one query id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub id: String,
    pub easy: AnswerSet,
    pub hard: AnswerSet,
}

pub fn parse_answer_record(record: &str) -> Result<AnswerRecord, QueryError> {
    let rec: AnswerRecord = serde_json::from_str(record)?;
    if !rec.easy.is_disjoint(&rec.hard) {
        return Err(QueryError::Malformed(format!(
            "{}: easy and hard answers overlap",
            rec.id
        )));
    }
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryInstance {
    pub query: Query,
    pub easy: AnswerSet,
    pub hard: AnswerSet,
}

impl QueryInstance {
    /// Easy answers come from the observed graph, hard answers are the full
    /// graph's answers that are not easy.
    pub fn from_split(query: Query, split: &GraphSplit) -> Result<Self, QueryError> {
        let easy = eval_brute_force(&query.ast, &split.observed)?;
        let full = eval_brute_force(&query.ast, &split.full)?;
        let hard = full.difference(&easy).copied().collect();
        Ok(Self { query, easy, hard })
    }

    pub fn answer_record(&self) -> AnswerRecord {
        AnswerRecord {
            id: self.query.id.clone(),
            easy: self.easy.clone(),
            hard: self.hard.clone(),
        }
    }
}

/// Reference semantics. Projection scans the raw triple list rather than the
/// adjacency index so it stays independent of the executor's lookup path.
pub fn eval_brute_force(ast: &QueryAst, graph: &KnowledgeGraph) -> Result<AnswerSet, GraphError> {
    ast.check_ids(graph)?;
    Ok(eval_rec(ast, graph))
}

fn eval_rec(ast: &QueryAst, graph: &KnowledgeGraph) -> AnswerSet {
    match ast {
        QueryAst::Anchor(e) => AnswerSet::from([*e]),
        QueryAst::Projection(child, r) => {
            let src = eval_rec(child, graph);
            graph
                .triples()
                .iter()
                .filter(|t| t.relation == *r && src.contains(&t.head))
                .map(|t| t.tail)
                .collect()
        }
        QueryAst::Union(cs) => cs.iter().flat_map(|c| eval_rec(c, graph)).collect(),
        QueryAst::Intersection(bs) => {
            let mut acc: Option<AnswerSet> = None;
            for b in bs.iter().filter(|b| !b.negated) {
                let s = eval_rec(&b.query, graph);
                acc = Some(match acc {
                    None => s,
                    Some(a) => a.intersection(&s).copied().collect(),
                });
            }
            let mut acc = acc.unwrap_or_default();
            for b in bs.iter().filter(|b| b.negated) {
                let s = eval_rec(&b.query, graph);
                acc.retain(|e| !s.contains(e));
            }
            acc
        }
    }
}

/// Samples a query of the given shape by walking backwards from a random
/// target entity, so every projection on the walk has a successor in `graph`.
/// Negated branches are walked back from an independently drawn entity.
pub fn sample_query<R: Rng>(
    graph: &KnowledgeGraph,
    qt: QueryType,
    rng: &mut R,
) -> Option<QueryAst> {
    let targets: Vec<EntityId> = (0..graph.entity_count())
        .map(EntityId::new)
        .filter(|&e| graph.in_edges(e).next().is_some())
        .collect();
    let target = *targets.choose(rng)?;
    let other = *targets.choose(rng)?;
    let chain = |rng: &mut R, t: EntityId, depth: usize| walk_back(graph, rng, t, depth);
    let step_back = |rng: &mut R, t: EntityId| -> Option<(EntityId, RelationId)> {
        let edges: Vec<_> = graph.in_edges(t).collect();
        edges.choose(rng).map(|e| (e.head, e.relation))
    };
    use QueryType::*;
    let ast = match qt {
        P1 => chain(rng, target, 1)?,
        P2 => chain(rng, target, 2)?,
        P3 => chain(rng, target, 3)?,
        I2 => QueryAst::Intersection(vec![
            Branch::pos(chain(rng, target, 1)?),
            Branch::pos(chain(rng, target, 1)?),
        ]),
        I3 => QueryAst::Intersection(vec![
            Branch::pos(chain(rng, target, 1)?),
            Branch::pos(chain(rng, target, 1)?),
            Branch::pos(chain(rng, target, 1)?),
        ]),
        Ip => {
            let (mid, r) = step_back(rng, target)?;
            QueryAst::Intersection(vec![
                Branch::pos(chain(rng, mid, 1)?),
                Branch::pos(chain(rng, mid, 1)?),
            ])
            .project(r)
        }
        Pi => QueryAst::Intersection(vec![
            Branch::pos(chain(rng, target, 2)?),
            Branch::pos(chain(rng, target, 1)?),
        ]),
        U2 => QueryAst::Union(vec![chain(rng, target, 1)?, chain(rng, target, 1)?]),
        Up => {
            let (mid, r) = step_back(rng, target)?;
            QueryAst::Union(vec![chain(rng, mid, 1)?, chain(rng, mid, 1)?]).project(r)
        }
        In2 => QueryAst::Intersection(vec![
            Branch::pos(chain(rng, target, 1)?),
            Branch::neg(chain(rng, other, 1)?),
        ]),
        In3 => QueryAst::Intersection(vec![
            Branch::pos(chain(rng, target, 1)?),
            Branch::pos(chain(rng, target, 1)?),
            Branch::neg(chain(rng, other, 1)?),
        ]),
        Inp => {
            let (mid, r) = step_back(rng, target)?;
            QueryAst::Intersection(vec![
                Branch::pos(chain(rng, mid, 1)?),
                Branch::neg(chain(rng, other, 1)?),
            ])
            .project(r)
        }
        Pin => QueryAst::Intersection(vec![
            Branch::pos(chain(rng, target, 2)?),
            Branch::neg(chain(rng, other, 1)?),
        ]),
        Pni => QueryAst::Intersection(vec![
            Branch::neg(chain(rng, other, 2)?),
            Branch::pos(chain(rng, target, 1)?),
        ]),
    };
    Some(ast)
}

fn walk_back<R: Rng>(
    graph: &KnowledgeGraph,
    rng: &mut R,
    target: EntityId,
    depth: usize,
) -> Option<QueryAst> {
    let mut relations = Vec::with_capacity(depth);
    let mut node = target;
    for _ in 0..depth {
        let edges: Vec<_> = graph.in_edges(node).collect();
        let e = edges.choose(rng)?;
        relations.push(e.relation);
        node = e.head;
    }
    relations.reverse();
    Some(QueryAst::chain(node, &relations))
}

/// Generation knobs. `retry_factor` bounds attempts at `retry_factor * count`.
#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub retry_factor: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { retry_factor: 100 }
    }
}

/// Generates `count` instances of one type. Walks use the full graph;
/// instances with no hard answers, or whose observed answers are not full
/// answers (possible under negation), are resampled.
pub fn generate_instances(
    split: &GraphSplit,
    qt: QueryType,
    count: usize,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Vec<QueryInstance>, QueryError> {
    if count == 0 {
        return Err(QueryError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(QueryType::ALL.iter().position(|&t| t == qt).unwrap() as u64);
    let budget = opts.retry_factor.saturating_mul(count).max(1);
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let Some(ast) = sample_query(&split.full, qt, &mut rng) else {
            continue;
        };
        let query = Query {
            id: format!("{}-{:05}", qt.tag(), out.len()),
            query_type: qt,
            ast,
        };
        let inst = QueryInstance::from_split(query, split)?;
        if inst.hard.is_empty() {
            continue;
        }
        let full = eval_brute_force(&inst.query.ast, &split.full)?;
        if !inst.easy.is_subset(&full) {
            continue;
        }
        out.push(inst);
    }
    if out.len() < count {
        return Err(QueryError::BudgetExhausted {
            query_type: qt,
            produced: out.len(),
            requested: count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{tiny_kg, tiny_kg_triples};
    use crate::kg::Triple;

    fn e(i: u32) -> EntityId {
        EntityId(i)
    }
    fn r(i: u32) -> RelationId {
        RelationId(i)
    }
    fn set(ids: &[u32]) -> AnswerSet {
        ids.iter().map(|&i| e(i)).collect()
    }

    #[test]
    fn parse_examples() {
        let q = parse_query(r#"{"id":"q","type":"2p","ast":["P",["P",["A","e0"],"r0"],"r1"]}"#)
            .unwrap();
        assert_eq!(q.query_type, QueryType::P2);
        assert_eq!(q.ast, QueryAst::chain(e(0), &[r(0), r(1)]));
        let q = parse_query(
            r#"{"id":"q","type":"2i","ast":["I",[["P",["A","e0"],"r0"],false],[["P",["A","e4"],"r0"],false]]}"#,
        )
        .unwrap();
        assert_eq!(q.query_type, QueryType::I2);
        assert!(matches!(
            parse_query(r#"{"id":"q","type":"2p","ast":["A","e0"]}"#),
            Err(QueryError::TagMismatch { .. })
        ));
        assert!(matches!(
            parse_query(r#"{"id":"q","type":"9x","ast":["A","e0"]}"#),
            Err(QueryError::UnknownTag(_))
        ));
        assert!(matches!(
            parse_query(r#"{"id":"q","type":"1p","ast":["N",["P",["A","e0"],"r0"]]}"#),
            Err(QueryError::MisplacedNegation)
        ));
        assert!(parse_query(
            r#"{"id":"q","type":"2in","ast":["I",[["P",["A","e0"],"r0"],true],[["P",["A","e1"],"r0"],true]]}"#
        )
        .is_err());
    }

    #[test]
    fn json_round_trip() {
        let ast = QueryAst::Intersection(vec![
            Branch::pos(QueryAst::chain(e(0), &[r(0), r(1)])),
            Branch::neg(QueryAst::chain(e(3), &[r(1)])),
        ]);
        assert_eq!(QueryAst::from_json(&ast.to_json()).unwrap(), ast);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            classify(&QueryAst::chain(e(0), &[r(0), r(0), r(0)])).unwrap(),
            QueryType::P3
        );
        let two_in = QueryAst::Intersection(vec![
            Branch::pos(QueryAst::chain(e(0), &[r(0)])),
            Branch::neg(QueryAst::chain(e(1), &[r(1)])),
        ]);
        assert_eq!(classify(&two_in).unwrap(), QueryType::In2);
        let three_u = QueryAst::Union(vec![
            QueryAst::chain(e(0), &[r(0)]),
            QueryAst::chain(e(1), &[r(0)]),
            QueryAst::chain(e(2), &[r(0)]),
        ]);
        assert!(matches!(classify(&three_u), Err(QueryError::Unsupported)));
        assert!(classify(&QueryAst::Anchor(e(0))).is_err());
        assert!(classify(&QueryAst::chain(e(0), &[r(0); 4])).is_err());
    }

    #[test]
    fn brute_force_on_tiny_kg() {
        let g = tiny_kg();
        let two_p = QueryAst::chain(e(0), &[r(0), r(1)]);
        assert_eq!(eval_brute_force(&two_p, &g).unwrap(), set(&[3, 4]));
        let two_i = QueryAst::Intersection(vec![
            Branch::pos(QueryAst::chain(e(0), &[r(0)])),
            Branch::pos(QueryAst::chain(e(4), &[r(0)])),
        ]);
        assert!(eval_brute_force(&two_i, &g).unwrap().is_empty());
        let two_in = QueryAst::Intersection(vec![
            Branch::pos(QueryAst::chain(e(0), &[r(0)])),
            Branch::neg(QueryAst::chain(e(1), &[r(1)])),
        ]);
        assert_eq!(eval_brute_force(&two_in, &g).unwrap(), set(&[1, 2]));
        assert!(eval_brute_force(&QueryAst::chain(e(9), &[r(0)]), &g).is_err());
    }

    #[test]
    fn easy_hard_split_from_held_out_triple() {
        let full = tiny_kg();
        let kept: Vec<Triple> = tiny_kg_triples()
            .into_iter()
            .filter(|t| *t != Triple::new(e(2), r(1), e(4)))
            .collect();
        let observed = KnowledgeGraph::build(full.abstraction().clone(), kept).unwrap();
        let split = GraphSplit::from_graphs(full, observed);
        let q = Query {
            id: "q".into(),
            query_type: QueryType::P1,
            ast: QueryAst::chain(e(2), &[r(1)]),
        };
        let inst = QueryInstance::from_split(q, &split).unwrap();
        assert_eq!(inst.easy, set(&[3]));
        assert_eq!(inst.hard, set(&[4]));
    }

    #[test]
    fn generation_needs_held_out_triples() {
        let split = GraphSplit::from_graphs(tiny_kg(), tiny_kg());
        let err = generate_instances(&split, QueryType::P1, 1, 0, &Default::default()).unwrap_err();
        assert!(matches!(
            err,
            QueryError::BudgetExhausted {
                produced: 0,
                requested: 1,
                ..
            }
        ));
        assert!(matches!(
            generate_instances(&split, QueryType::P1, 0, 0, &Default::default()),
            Err(QueryError::ZeroCount)
        ));
    }

    #[test]
    fn sampled_queries_have_declared_shape() {
        let g = tiny_kg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for qt in QueryType::ALL {
            for _ in 0..20 {
                if let Some(ast) = sample_query(&g, qt, &mut rng) {
                    assert_eq!(classify(&ast).unwrap(), qt);
                }
            }
        }
    }
}
