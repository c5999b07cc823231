use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rog_core::eval::{filtered_rank, mrr, rank_query, AbsentPolicy, Rank};
use rog_core::evidence::{
    parse_answer, parse_evidence, render_prompt, serialize_evidence, PromptTemplate,
};
use rog_core::exec::{aggregate_votes, EvidenceExecutor, ExactExecutor, Executor, StepCache};
use rog_core::fixtures::{random_graph, random_split};
use rog_core::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use rog_core::plan::{compile, SourceRef};
use rog_core::query::{eval_brute_force, sample_query, Branch, QueryAst, QueryType};
use rog_core::retrieve::{retrieve, RetrievalConfig};

fn triples_strategy(ne: u32, nr: u32, max: usize) -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec((0..ne, 0..nr, 0..ne), 0..max).prop_map(|v| {
        v.into_iter()
            .map(|(h, r, t)| Triple::new(EntityId(h), RelationId(r), EntityId(t)))
            .collect()
    })
}

fn graph(triples: &[Triple]) -> KnowledgeGraph {
    KnowledgeGraph::from_ids(12, 3, triples.iter().copied()).unwrap()
}

proptest! {
    #[test]
    fn indexes_agree_with_triple_set(ts in triples_strategy(12, 3, 60)) {
        let g = graph(&ts);
        let unique: BTreeSet<Triple> = ts.iter().copied().collect();
        prop_assert_eq!(g.triple_count(), unique.len());
        for t in &unique {
            prop_assert!(g.neighbors(t.head, t.relation, Direction::Forward).unwrap().contains(&t.tail));
            prop_assert!(g.neighbors(t.tail, t.relation, Direction::Backward).unwrap().contains(&t.head));
        }
        for e in 0..12 {
            for r in 0..3 {
                let (e, r) = (EntityId(e), RelationId(r));
                let fwd = g.neighbors(e, r, Direction::Forward).unwrap();
                let want: Vec<EntityId> = unique.iter().filter(|t| t.head == e && t.relation == r).map(|t| t.tail).collect();
                prop_assert_eq!(&fwd, &want);
                let bwd = g.neighbors(e, r, Direction::Backward).unwrap();
                let want: Vec<EntityId> = unique.iter().filter(|t| t.tail == e && t.relation == r).map(|t| t.head).collect();
                prop_assert_eq!(&bwd, &want);
            }
        }
        // Rebuilding from the stored triples is idempotent.
        let again = KnowledgeGraph::build(g.abstraction().clone(), g.triples().iter().copied()).unwrap();
        prop_assert_eq!(again, g);
    }

    #[test]
    fn negation_free_eval_is_monotone(
        base in triples_strategy(12, 3, 40),
        extra in triples_strategy(12, 3, 20),
        seed in any::<u64>(),
    ) {
        let small = graph(&base);
        let all: Vec<Triple> = base.iter().chain(&extra).copied().collect();
        let big = graph(&all);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for qt in QueryType::TYPICAL {
            if let Some(ast) = sample_query(&big, qt, &mut rng) {
                let a = eval_brute_force(&ast, &small).unwrap();
                let b = eval_brute_force(&ast, &big).unwrap();
                prop_assert!(a.is_subset(&b), "{qt}: {ast}");
            }
        }
    }

    #[test]
    fn set_nodes_are_order_insensitive(ts in triples_strategy(12, 3, 50), seed in any::<u64>()) {
        let g = graph(&ts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for qt in [QueryType::I3, QueryType::In3, QueryType::U2, QueryType::Pi, QueryType::Pni] {
            let Some(ast) = sample_query(&g, qt, &mut rng) else { continue };
            let flipped = match &ast {
                QueryAst::Intersection(bs) => QueryAst::Intersection(bs.iter().rev().cloned().collect()),
                QueryAst::Union(cs) => QueryAst::Union(cs.iter().rev().cloned().collect()),
                other => other.clone(),
            };
            prop_assert_eq!(eval_brute_force(&ast, &g).unwrap(), eval_brute_force(&flipped, &g).unwrap());
            let (p, q) = (compile(&ast).unwrap(), compile(&flipped).unwrap());
            prop_assert_eq!(p.signature(p.output()).unwrap(), q.signature(q.output()).unwrap());
        }
    }

    #[test]
    fn plans_are_acyclic_reachable_and_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 20, 3, 80);
        for qt in QueryType::ALL {
            let Some(ast) = sample_query(&g, qt, &mut rng) else { continue };
            let plan = compile(&ast).unwrap();
            prop_assert_eq!(plan.pretty_print(), compile(&ast).unwrap().pretty_print());
            let mut reachable = vec![false; plan.len()];
            reachable[plan.output()] = true;
            for step in plan.steps().iter().rev() {
                for src in step.sources() {
                    if let SourceRef::Step(k) = src {
                        prop_assert!(*k < step.index);
                        if reachable[step.index] {
                            reachable[*k] = true;
                        }
                    }
                }
            }
            prop_assert!(reachable.iter().all(|&r| r), "{}", plan.pretty_print());
        }
    }

    #[test]
    fn retrieval_is_pure_capped_and_sufficient(
        seed in any::<u64>(),
        k in 1usize..3,
        cap in 1usize..20,
        priority in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 15, 3, 60);
        let seeds: BTreeSet<EntityId> = [EntityId(0), EntityId(7)].into();
        let rels: BTreeSet<RelationId> = [RelationId(1)].into();
        let cfg = RetrievalConfig { k_hops: k, max_triples: cap, relation_priority: priority, expand_intermediates: true };
        let a = retrieve(&g, &seeds, &rels, &cfg).unwrap();
        let b = retrieve(&g, &seeds, &rels, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.triples.len() <= cap);
        let uncapped = retrieve(&g, &seeds, &rels, &RetrievalConfig { max_triples: usize::MAX, ..cfg.clone() }).unwrap();
        prop_assert_eq!(a.truncated, uncapped.triples.len() > cap);
        prop_assert_eq!(&uncapped.triples[..a.triples.len()], &a.triples[..]);
        let unique: BTreeSet<_> = uncapped.triples.iter().collect();
        prop_assert_eq!(unique.len(), uncapped.triples.len());
        if priority && uncapped.triples.iter().any(|t| rels.contains(&t.relation)) {
            prop_assert!(rels.contains(&a.triples[0].relation));
        }
        for s in &seeds {
            for r in 0..3 {
                for t in g.tails(*s, RelationId(r)) {
                    prop_assert!(uncapped.triples.contains(t));
                }
            }
        }
    }

    #[test]
    fn evidence_round_trips(seed in any::<u64>(), cap in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 15, 3, 60);
        let cfg = RetrievalConfig { k_hops: 2, max_triples: cap, ..Default::default() };
        let bundle = retrieve(&g, &[EntityId(3)].into(), &[RelationId(0)].into(), &cfg).unwrap();
        let s = serialize_evidence(&bundle);
        prop_assert_eq!(parse_evidence(&s.text).unwrap(), bundle.triples.clone());
        prop_assert_eq!(&serialize_evidence(&bundle), &s);
        let plan = compile(&QueryAst::chain(EntityId(3), &[RelationId(0)])).unwrap();
        let tpl = PromptTemplate::default();
        let p1 = render_prompt(&tpl, &plan.steps()[0], &s, &Default::default()).unwrap();
        let p2 = render_prompt(&tpl, &plan.steps()[0], &s, &Default::default()).unwrap();
        prop_assert_eq!(p1.text, p2.text);
    }

    #[test]
    fn parse_answer_inverts_the_list_format(ids in prop::collection::vec(0u32..1000, 0..30), noise in prop::collection::vec("[a-zA-Z ,.]{1,12}", 0..5)) {
        let mut dedup = Vec::new();
        for i in ids { let e = EntityId(i); if !dedup.contains(&e) { dedup.push(e); } }
        let text: String = dedup.iter().map(|e| format!("{e}\n")).collect();
        let a = parse_answer(&text);
        prop_assert_eq!(&a.entities, &dedup);
        prop_assert_eq!(a.violations, 0);

        let noisy: Vec<&str> = noise.iter().map(String::as_str).filter(|s| !s.trim().is_empty() && s.trim() != "NONE").collect();
        let mixed = format!("{text}{}", noisy.join("\n"));
        let b = parse_answer(&mixed);
        prop_assert_eq!(&b.entities, &dedup);
        prop_assert_eq!(b.violations, noisy.len());
        let unique: BTreeSet<_> = b.entities.iter().collect();
        prop_assert_eq!(unique.len(), b.entities.len());
    }

    #[test]
    fn filtered_rank_ignores_easy_insertions(
        n in 2usize..12,
        pos in any::<prop::sample::Index>(),
        insert_at in any::<prop::sample::Index>(),
    ) {
        let cands: Vec<EntityId> = (0..n as u32).map(EntityId).collect();
        let target = cands[pos.index(n)];
        let none = BTreeSet::new();
        let base = filtered_rank(&cands, target, &none, &none).unwrap();
        let easy_e = EntityId(500);
        let mut with_easy = cands.clone();
        with_easy.insert(insert_at.index(pos.index(n) + 1), easy_e);
        let easy: BTreeSet<_> = [easy_e].into();
        prop_assert_eq!(filtered_rank(&with_easy, target, &easy, &none).unwrap(), base);
    }

    #[test]
    fn exact_hard_list_gives_harmonic_mrr(hard in prop::collection::btree_set(0u32..50, 1..10), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let hard: BTreeSet<EntityId> = hard.into_iter().map(EntityId).collect();
        let mut cands: Vec<EntityId> = hard.iter().copied().collect();
        cands.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let recs = rank_query("q", &cands, &BTreeSet::new(), &hard, 100).unwrap();
        let mut ranks: Vec<usize> = recs.iter().map(|r| match r.rank { Rank::At(p) => p, Rank::Absent => 0 }).collect();
        ranks.sort();
        // Other hard answers are filtered, so every hard answer ranks first.
        prop_assert!(ranks.iter().all(|&r| r == 1));
        prop_assert!((mrr(&recs, AbsentPolicy::Zero).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mrr_is_bounded_and_order_free(ranks in prop::collection::vec(prop::option::of(1usize..50), 1..30)) {
        let mut recs: Vec<_> = ranks.iter().map(|r| rog_core::eval::RankRecord {
            query_id: "q".into(),
            answer: EntityId(0),
            rank: r.map_or(Rank::Absent, Rank::At),
            worst_rank: 50,
        }).collect();
        let a = mrr(&recs, AbsentPolicy::Zero).unwrap();
        recs.reverse();
        let b = mrr(&recs, AbsentPolicy::Zero).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(mrr(&recs, AbsentPolicy::WorstCase).unwrap() >= a - 1e-12);
    }

    #[test]
    fn raising_threshold_never_adds(outputs in prop::collection::vec(prop::collection::vec(0u32..15, 0..10), 1..6)) {
        let lists: Vec<Vec<EntityId>> = outputs.into_iter().map(|v| v.into_iter().map(EntityId).collect()).collect();
        for t in 1..lists.len() {
            let lo: BTreeSet<_> = aggregate_votes(&lists, t).into_iter().map(|(e, _)| e).collect();
            let hi: BTreeSet<_> = aggregate_votes(&lists, t + 1).into_iter().map(|(e, _)| e).collect();
            prop_assert!(hi.is_subset(&lo));
        }
    }
}

#[test]
fn exact_and_evidence_agree_with_brute_force() {
    let tpl = PromptTemplate::default();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = random_split(&mut rng, 30, 4, 150, 0.8);
        let cache = StepCache::new();
        let ex = Executor::new(&split.observed, RetrievalConfig::unbounded(1), &tpl);
        let cached =
            Executor::new(&split.observed, RetrievalConfig::unbounded(1), &tpl).with_cache(&cache);
        let exact = ExactExecutor::new(&split.observed);
        for qt in QueryType::ALL {
            for _ in 0..10 {
                let Some(ast) = sample_query(&split.full, qt, &mut rng) else {
                    continue;
                };
                let plan = compile(&ast).unwrap();
                let want = eval_brute_force(&ast, &split.observed).unwrap();
                let a = ex.execute_plan(&plan, &exact).unwrap();
                let b = ex.execute_plan(&plan, &EvidenceExecutor).unwrap();
                let c = cached.execute_plan(&plan, &EvidenceExecutor).unwrap();
                assert_eq!(a.answers.as_set(), want, "{qt} {ast}");
                assert_eq!(b.answers.as_set(), want, "{qt} {ast}");
                assert_eq!(c.answers.as_set(), want, "{qt} {ast}");
            }
        }
    }
}

#[test]
fn negated_anchor_branch_compiles_to_subtract_of_literal() {
    let ast = QueryAst::Intersection(vec![
        Branch::pos(QueryAst::chain(EntityId(0), &[RelationId(0)])),
        Branch::neg(QueryAst::Anchor(EntityId(1))),
    ]);
    let g = rog_core::fixtures::tiny_kg();
    let plan = compile(&ast).unwrap();
    assert_eq!(plan.len(), 2);
    let tpl = PromptTemplate::default();
    let run = Executor::new(&g, RetrievalConfig::default(), &tpl)
        .execute_plan(&plan, &ExactExecutor::new(&g))
        .unwrap();
    assert_eq!(run.answers.as_set(), eval_brute_force(&ast, &g).unwrap());
}
