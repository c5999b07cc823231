//! Triple store with abstracted identifiers.
//!
//! Surface names of entities and relations are replaced by dense ids whose
//! canonical labels are `e<N>` and `r<N>`. Ids are assigned in ascending
//! lexicographic order of the surface strings, so the mapping does not depend
//! on the order of lines in the input files.
//!
//! Triples are kept sorted by `(head, relation, tail)` together with a
//! tail-ordered permutation. Both act as CSR-style indexes: the forward list for
//! `(head, relation)` and the backward list for `(tail, relation)` are
//! contiguous, ascending slices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("{split}: line {line}: expected 3 tab-separated fields, found {fields}")]
    Malformed {
        split: String,
        line: usize,
        fields: usize,
    },
    #[error("{split}: line {line}: empty field")]
    EmptyField { split: String, line: usize },
    #[error("{split}: no triples")]
    NoTriples { split: String },
    #[error("entity {0} out of range (entity count {1})")]
    EntityOutOfRange(EntityId, usize),
    #[error("relation {0} out of range (relation count {1})")]
    RelationOutOfRange(RelationId, usize),
    #[error("unknown surface form {0:?}")]
    UnknownSurface(String),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
}

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            pub fn new(index: usize) -> Self {
                Self(u32::try_from(index).expect("id index exceeds u32"))
            }

            pub fn index(self) -> usize {
                self.0 as usize
            }

            /// Canonical label, e.g. `e12`.
            pub fn label(self) -> String {
                self.to_string()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = GraphError;

            /// Accepts only canonical labels: the prefix followed by decimal
            /// digits without leading zeros.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_label(s, $prefix)
                    .map($name)
                    .ok_or_else(|| GraphError::InvalidLabel(s.to_string()))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

id_type!(EntityId, "e");
id_type!(RelationId, "r");

fn parse_label(s: &str, prefix: &str) -> Option<u32> {
    let digits = s.strip_prefix(prefix)?;
    if digits.is_empty()
        || !digits.bytes().all(|b| b.is_ascii_digit())
        || (digits.len() > 1 && digits.starts_with('0'))
    {
        return None;
    }
    digits.parse().ok()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A triple still expressed in surface strings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// Parses a triple file body. Blank lines are skipped; every other line must
/// hold exactly three non-empty TAB-separated fields.
pub fn parse_triple_lines(text: &str, split: &str) -> Result<Vec<RawTriple>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraphError::Malformed {
                split: split.to_string(),
                line: i + 1,
                fields: fields.len(),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::EmptyField {
                split: split.to_string(),
                line: i + 1,
            });
        }
        out.push(RawTriple {
            head: fields[0].to_string(),
            relation: fields[1].to_string(),
            tail: fields[2].to_string(),
        });
    }
    Ok(out)
}

/// Bijection between surface strings and ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abstraction {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, u32>,
    relation_index: HashMap<String, u32>,
}

impl Abstraction {
    /// Builds the map from every surface form mentioned by `triples`, sorting
    /// entities and relations independently.
    pub fn from_raw<'a>(triples: impl IntoIterator<Item = &'a RawTriple>) -> Self {
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for t in triples {
            entities.insert(t.head.as_str());
            entities.insert(t.tail.as_str());
            relations.insert(t.relation.as_str());
        }
        Self::from_names(
            entities.into_iter().map(str::to_string).collect(),
            relations.into_iter().map(str::to_string).collect(),
        )
    }

    /// Surface form equals the canonical label. Used for graphs built
    /// directly from ids.
    pub fn identity(entity_count: usize, relation_count: usize) -> Self {
        Self::from_names(
            (0..entity_count)
                .map(|i| EntityId::new(i).label())
                .collect(),
            (0..relation_count)
                .map(|i| RelationId::new(i).label())
                .collect(),
        )
    }

    fn from_names(entities: Vec<String>, relations: Vec<String>) -> Self {
        let entity_index = entities
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let relation_index = relations
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self {
            entities,
            relations,
            entity_index,
            relation_index,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, surface: &str) -> Result<EntityId, GraphError> {
        self.entity_index
            .get(surface)
            .map(|&i| EntityId(i))
            .ok_or_else(|| GraphError::UnknownSurface(surface.to_string()))
    }

    pub fn relation_id(&self, surface: &str) -> Result<RelationId, GraphError> {
        self.relation_index
            .get(surface)
            .map(|&i| RelationId(i))
            .ok_or_else(|| GraphError::UnknownSurface(surface.to_string()))
    }

    pub fn entity_surface(&self, id: EntityId) -> Result<&str, GraphError> {
        self.entities
            .get(id.index())
            .map(String::as_str)
            .ok_or(GraphError::EntityOutOfRange(id, self.entities.len()))
    }

    pub fn relation_surface(&self, id: RelationId) -> Result<&str, GraphError> {
        self.relations
            .get(id.index())
            .map(String::as_str)
            .ok_or(GraphError::RelationOutOfRange(id, self.relations.len()))
    }

    fn resolve(&self, raw: &RawTriple) -> Result<Triple, GraphError> {
        Ok(Triple::new(
            self.entity_id(&raw.head)?,
            self.relation_id(&raw.relation)?,
            self.entity_id(&raw.tail)?,
        ))
    }

    /// Writes `<surface>\t<label>` lines, entities first, then relations.
    pub fn write_map<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, s) in self.entities.iter().enumerate() {
            writeln!(w, "{}\t{}", s, EntityId::new(i))?;
        }
        for (i, s) in self.relations.iter().enumerate() {
            writeln!(w, "{}\t{}", s, RelationId::new(i))?;
        }
        Ok(())
    }
}

/// Immutable triple store. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    abstraction: Arc<Abstraction>,
    /// Sorted by (head, relation, tail), no duplicates.
    triples: Vec<Triple>,
    /// `triples[head_offsets[e]..head_offsets[e + 1]]` are the out-edges of `e`.
    head_offsets: Vec<usize>,
    /// Indexes into `triples`, sorted by (tail, relation, head).
    by_tail: Vec<u32>,
    tail_offsets: Vec<usize>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.abstraction == other.abstraction && self.triples == other.triples
    }
}

impl KnowledgeGraph {
    pub fn build(
        abstraction: Arc<Abstraction>,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self, GraphError> {
        let n_ent = abstraction.entity_count();
        let n_rel = abstraction.relation_count();
        let mut triples: Vec<Triple> = triples.into_iter().collect();
        for t in &triples {
            for e in [t.head, t.tail] {
                if e.index() >= n_ent {
                    return Err(GraphError::EntityOutOfRange(e, n_ent));
                }
            }
            if t.relation.index() >= n_rel {
                return Err(GraphError::RelationOutOfRange(t.relation, n_rel));
            }
        }
        triples.sort_unstable();
        triples.dedup();

        let head_offsets = offsets(n_ent, triples.iter().map(|t| t.head.index()));
        let mut by_tail: Vec<u32> = (0..triples.len() as u32).collect();
        by_tail.sort_unstable_by_key(|&i| {
            let t = triples[i as usize];
            (t.tail, t.relation, t.head)
        });
        let tail_offsets = offsets(
            n_ent,
            by_tail.iter().map(|&i| triples[i as usize].tail.index()),
        );
        Ok(Self {
            abstraction,
            triples,
            head_offsets,
            by_tail,
            tail_offsets,
        })
    }

    /// Graph over ids only; surface forms are the canonical labels.
    pub fn from_ids(
        entity_count: usize,
        relation_count: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self, GraphError> {
        Self::build(
            Arc::new(Abstraction::identity(entity_count, relation_count)),
            triples,
        )
    }

    pub fn entity_count(&self) -> usize {
        self.abstraction.entity_count()
    }

    pub fn relation_count(&self) -> usize {
        self.abstraction.relation_count()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// All triples, ascending by (head, relation, tail).
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn abstraction(&self) -> &Arc<Abstraction> {
        &self.abstraction
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    pub fn check_entity(&self, e: EntityId) -> Result<(), GraphError> {
        if e.index() < self.entity_count() {
            Ok(())
        } else {
            Err(GraphError::EntityOutOfRange(e, self.entity_count()))
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<(), GraphError> {
        if r.index() < self.relation_count() {
            Ok(())
        } else {
            Err(GraphError::RelationOutOfRange(r, self.relation_count()))
        }
    }

    /// Sorted neighbor list of `entity` along `relation`.
    pub fn neighbors(
        &self,
        entity: EntityId,
        relation: RelationId,
        direction: Direction,
    ) -> Result<Vec<EntityId>, GraphError> {
        self.check_entity(entity)?;
        self.check_relation(relation)?;
        Ok(match direction {
            Direction::Forward => self.tails(entity, relation).map(|t| t.tail).collect(),
            Direction::Backward => self.heads(entity, relation).map(|t| t.head).collect(),
        })
    }

    /// Out-edges of `head` along `relation`, ascending by tail. Ids must be in
    /// range.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> impl Iterator<Item = &Triple> {
        let out = self.out_edges(head);
        let lo = out.partition_point(|t| t.relation < relation);
        let hi = out.partition_point(|t| t.relation <= relation);
        out[lo..hi].iter()
    }

    /// In-edges of `tail` along `relation`, ascending by head.
    pub fn heads(&self, tail: EntityId, relation: RelationId) -> impl Iterator<Item = &Triple> {
        let inc = self.in_edge_indexes(tail);
        let lo = inc.partition_point(|&i| self.triples[i as usize].relation < relation);
        let hi = inc.partition_point(|&i| self.triples[i as usize].relation <= relation);
        inc[lo..hi].iter().map(|&i| &self.triples[i as usize])
    }

    /// Out-edges of `head`, ascending by (relation, tail).
    pub fn out_edges(&self, head: EntityId) -> &[Triple] {
        let e = head.index();
        &self.triples[self.head_offsets[e]..self.head_offsets[e + 1]]
    }

    /// In-edges of `tail`, ascending by (relation, head).
    pub fn in_edges(&self, tail: EntityId) -> impl Iterator<Item = &Triple> {
        self.in_edge_indexes(tail)
            .iter()
            .map(|&i| &self.triples[i as usize])
    }

    fn in_edge_indexes(&self, tail: EntityId) -> &[u32] {
        let e = tail.index();
        &self.by_tail[self.tail_offsets[e]..self.tail_offsets[e + 1]]
    }

    pub fn entity_id(&self, surface: &str) -> Result<EntityId, GraphError> {
        self.abstraction.entity_id(surface)
    }

    pub fn relation_id(&self, surface: &str) -> Result<RelationId, GraphError> {
        self.abstraction.relation_id(surface)
    }

    pub fn entity_surface(&self, id: EntityId) -> Result<&str, GraphError> {
        self.abstraction.entity_surface(id)
    }

    pub fn relation_surface(&self, id: RelationId) -> Result<&str, GraphError> {
        self.abstraction.relation_surface(id)
    }
}

fn offsets(n: usize, keys: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut off = vec![0usize; n + 1];
    for k in keys {
        off[k + 1] += 1;
    }
    for i in 0..n {
        off[i + 1] += off[i];
    }
    off
}

/// Ingests one triple file body into a self-contained graph.
pub fn ingest_triples(text: &str, split: &str) -> Result<KnowledgeGraph, GraphError> {
    let raw = parse_triple_lines(text, split)?;
    if raw.is_empty() {
        return Err(GraphError::NoTriples {
            split: split.to_string(),
        });
    }
    let abstraction = Arc::new(Abstraction::from_raw(&raw));
    let triples = raw
        .iter()
        .map(|t| abstraction.resolve(t))
        .collect::<Result<Vec<_>, _>>()?;
    KnowledgeGraph::build(abstraction, triples)
}

/// Full graph plus the observed (incomplete) graph visible at answer time.
#[derive(Debug, Clone)]
pub struct GraphSplit {
    pub full: KnowledgeGraph,
    pub observed: KnowledgeGraph,
}

impl GraphSplit {
    /// `full` is the union of all splits; `observed` is train, plus valid
    /// when `observe_valid` is set. Both share one abstraction map.
    pub fn from_raw(
        train: &[RawTriple],
        valid: &[RawTriple],
        test: &[RawTriple],
        observe_valid: bool,
    ) -> Result<Self, GraphError> {
        if train.is_empty() {
            return Err(GraphError::NoTriples {
                split: "train".to_string(),
            });
        }
        let abstraction = Arc::new(Abstraction::from_raw(train.iter().chain(valid).chain(test)));
        let resolve = |raw: &[RawTriple]| {
            raw.iter()
                .map(|t| abstraction.resolve(t))
                .collect::<Result<Vec<_>, _>>()
        };
        let train_ids = resolve(train)?;
        let valid_ids = resolve(valid)?;
        let test_ids = resolve(test)?;
        let mut observed_ids = train_ids.clone();
        if observe_valid {
            observed_ids.extend(&valid_ids);
        }
        let full_ids = train_ids.into_iter().chain(valid_ids).chain(test_ids);
        Ok(Self {
            full: KnowledgeGraph::build(abstraction.clone(), full_ids)?,
            observed: KnowledgeGraph::build(abstraction, observed_ids)?,
        })
    }

    /// Split over id-built graphs. `observed` must use the same id space.
    pub fn from_graphs(full: KnowledgeGraph, observed: KnowledgeGraph) -> Self {
        Self { full, observed }
    }
}
