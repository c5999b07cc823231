//! Small graphs for tests, examples and self-checks.

use rand::Rng;

use crate::kg::{EntityId, GraphSplit, KnowledgeGraph, RelationId, Triple};

/// Six entities, two relations:
/// `(e0,r0,e1) (e0,r0,e2) (e1,r1,e3) (e2,r1,e3) (e2,r1,e4) (e4,r0,e5)`.
pub fn tiny_kg() -> KnowledgeGraph {
    KnowledgeGraph::from_ids(6, 2, tiny_kg_triples()).expect("fixture is valid")
}

pub fn tiny_kg_triples() -> Vec<Triple> {
    [
        (0, 0, 1),
        (0, 0, 2),
        (1, 1, 3),
        (2, 1, 3),
        (2, 1, 4),
        (4, 0, 5),
    ]
    .into_iter()
    .map(|(h, r, t)| Triple::new(EntityId(h), RelationId(r), EntityId(t)))
    .collect()
}

/// The same fixture as tab-separated surface lines (`e0\tr0\te1`, ...).
pub fn tiny_kg_tsv() -> String {
    tiny_kg_triples()
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail))
        .collect()
}

/// Uniformly random graph with the given id space and up to `triples` edges
/// (duplicates collapse).
pub fn random_graph<R: Rng>(
    rng: &mut R,
    entities: usize,
    relations: usize,
    triples: usize,
) -> KnowledgeGraph {
    let ts: Vec<Triple> = (0..triples)
        .map(|_| {
            Triple::new(
                EntityId::new(rng.random_range(0..entities)),
                RelationId::new(rng.random_range(0..relations)),
                EntityId::new(rng.random_range(0..entities)),
            )
        })
        .collect();
    KnowledgeGraph::from_ids(entities, relations, ts).expect("ids drawn in range")
}

/// Random full graph with an observed subgraph keeping each triple with
/// probability `keep`.
pub fn random_split<R: Rng>(
    rng: &mut R,
    entities: usize,
    relations: usize,
    triples: usize,
    keep: f64,
) -> GraphSplit {
    let full = random_graph(rng, entities, relations, triples);
    let kept: Vec<Triple> = full
        .triples()
        .iter()
        .copied()
        .filter(|_| rng.random_bool(keep))
        .collect();
    let observed = KnowledgeGraph::build(full.abstraction().clone(), kept).expect("subset");
    GraphSplit::from_graphs(full, observed)
}
