//! Query-aware k-hop neighborhood retrieval.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::kg::{EntityId, GraphError, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrieveError {
    #[error("empty seed set")]
    EmptySeeds,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid retrieval config: {0}")]
    Config(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalConfig {
    pub k_hops: usize,
    /// `usize::MAX` disables the cap.
    pub max_triples: usize,
    pub relation_priority: bool,
    pub expand_intermediates: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_hops: 1,
            max_triples: 64,
            relation_priority: true,
            expand_intermediates: true,
        }
    }
}

impl RetrievalConfig {
    pub fn unbounded(k_hops: usize) -> Self {
        Self {
            k_hops,
            max_triples: usize::MAX,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k_hops == 0 {
            return Err(RetrieveError::Config("k_hops must be at least 1"));
        }
        if self.max_triples == 0 {
            return Err(RetrieveError::Config("max_triples must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceBundle {
    pub triples: Vec<Triple>,
    pub seeds: BTreeSet<EntityId>,
    pub truncated: bool,
}

/// Breadth-first expansion from `seeds` over both edge directions. A triple
/// sits at hop `min(dist(head), dist(tail)) + 1` and is kept when that is at
/// most `k_hops`. Candidates are ordered by (relation match first, hop, triple
/// ids) and cut at `max_triples`.
pub fn retrieve(
    graph: &KnowledgeGraph,
    seeds: &BTreeSet<EntityId>,
    relations: &BTreeSet<RelationId>,
    config: &RetrievalConfig,
) -> Result<EvidenceBundle, RetrieveError> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(RetrieveError::EmptySeeds);
    }
    for &s in seeds {
        graph.check_entity(s)?;
    }

    let mut dist: HashMap<EntityId, usize> = seeds.iter().map(|&s| (s, 0)).collect();
    let mut hop_of: HashMap<Triple, usize> = HashMap::new();
    let mut frontier: Vec<EntityId> = seeds.iter().copied().collect();
    for depth in 0..config.k_hops {
        let mut next = Vec::new();
        for &node in &frontier {
            for t in graph.out_edges(node).iter().chain(graph.in_edges(node)) {
                hop_of.entry(*t).or_insert(depth + 1);
                for other in [t.head, t.tail] {
                    if let std::collections::hash_map::Entry::Vacant(v) = dist.entry(other) {
                        v.insert(depth + 1);
                        next.push(other);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_unstable();
        frontier = next;
    }

    let mut candidates: Vec<(bool, usize, Triple)> = hop_of
        .into_iter()
        .map(|(t, hop)| {
            let off_query = config.relation_priority && !relations.contains(&t.relation);
            (off_query, hop, t)
        })
        .collect();
    candidates.sort_unstable();
    let truncated = candidates.len() > config.max_triples;
    candidates.truncate(config.max_triples);
    Ok(EvidenceBundle {
        triples: candidates.into_iter().map(|(_, _, t)| t).collect(),
        seeds: seeds.clone(),
        truncated,
    })
}

/// Seeds for the next step: the previous answers when intermediate expansion
/// is on, otherwise nothing (the caller falls back to the anchors).
pub fn reseed(previous: &BTreeSet<EntityId>, config: &RetrievalConfig) -> BTreeSet<EntityId> {
    if config.expand_intermediates {
        previous.clone()
    } else {
        BTreeSet::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::tiny_kg;

    fn t(h: u32, r: u32, tl: u32) -> Triple {
        Triple::new(EntityId(h), RelationId(r), EntityId(tl))
    }
    fn ents(ids: &[u32]) -> BTreeSet<EntityId> {
        ids.iter().map(|&i| EntityId(i)).collect()
    }
    fn rels(ids: &[u32]) -> BTreeSet<RelationId> {
        ids.iter().map(|&i| RelationId(i)).collect()
    }

    #[test]
    fn one_hop_from_e0() {
        let cfg = RetrievalConfig {
            k_hops: 1,
            max_triples: 64,
            ..Default::default()
        };
        let b = retrieve(&tiny_kg(), &ents(&[0]), &rels(&[0]), &cfg).unwrap();
        assert_eq!(b.triples, vec![t(0, 0, 1), t(0, 0, 2)]);
        assert!(!b.truncated);
    }

    #[test]
    fn two_hop_capped_prefers_matching_relation() {
        let cfg = RetrievalConfig {
            k_hops: 2,
            max_triples: 2,
            ..Default::default()
        };
        let b = retrieve(&tiny_kg(), &ents(&[0]), &rels(&[1]), &cfg).unwrap();
        assert_eq!(b.triples, vec![t(1, 1, 3), t(2, 1, 3)]);
        assert!(b.truncated);
    }

    #[test]
    fn leaf_entity_sees_incoming_edge() {
        let b = retrieve(
            &tiny_kg(),
            &ents(&[5]),
            &rels(&[1]),
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert_eq!(b.triples, vec![t(4, 0, 5)]);
        assert!(!b.truncated);
    }

    #[test]
    fn without_priority_order_is_by_hop() {
        let cfg = RetrievalConfig {
            k_hops: 2,
            max_triples: 2,
            relation_priority: false,
            ..Default::default()
        };
        let b = retrieve(&tiny_kg(), &ents(&[0]), &rels(&[1]), &cfg).unwrap();
        assert_eq!(b.triples, vec![t(0, 0, 1), t(0, 0, 2)]);
    }

    #[test]
    fn empty_seeds_and_bad_config() {
        let g = tiny_kg();
        assert_eq!(
            retrieve(
                &g,
                &BTreeSet::new(),
                &rels(&[0]),
                &RetrievalConfig::default()
            ),
            Err(RetrieveError::EmptySeeds)
        );
        let cfg = RetrievalConfig {
            k_hops: 0,
            ..Default::default()
        };
        assert!(matches!(
            retrieve(&g, &ents(&[0]), &rels(&[0]), &cfg),
            Err(RetrieveError::Config(_))
        ));
        assert!(retrieve(&g, &ents(&[42]), &rels(&[0]), &RetrievalConfig::default()).is_err());
    }

    #[test]
    fn reseed_follows_flag() {
        let on = RetrievalConfig::default();
        let off = RetrievalConfig {
            expand_intermediates: false,
            ..Default::default()
        };
        assert_eq!(reseed(&ents(&[3, 4]), &on), ents(&[3, 4]));
        assert!(reseed(&ents(&[3]), &off).is_empty());
        assert!(reseed(&ents(&[]), &on).is_empty());
    }
}
