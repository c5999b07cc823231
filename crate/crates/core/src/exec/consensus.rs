//! Majority voting over several agents answering the same step.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use super::{
    resolve_inputs, AnswerList, Answerer, BackendError, ExecutionTrace, Executor, Prep, RunError,
    StepRequest, StepTrace,
};
use crate::kg::EntityId;
use crate::plan::Plan;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ConsensusMode {
    /// Vote on every step and feed the agreed set forward.
    PerStep,
    /// Run agents independently and vote on final answers only.
    FinalOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub agents: usize,
    /// Minimum votes for inclusion.
    pub threshold: usize,
    pub mode: ConsensusMode,
}

impl ConsensusConfig {
    /// Strict majority of `agents`.
    pub fn majority(agents: usize) -> Self {
        Self {
            agents,
            threshold: agents / 2 + 1,
            mode: ConsensusMode::PerStep,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.agents == 0 || self.threshold == 0 || self.threshold > self.agents {
            return Err(BackendError::Config(format!(
                "consensus needs 1 <= threshold ({}) <= agents ({})",
                self.threshold, self.agents
            )));
        }
        Ok(())
    }
}

/// Entities with at least `threshold` votes, ordered by votes descending, then
/// by earliest position in any agent's list, then by id.
pub fn aggregate_votes(outputs: &[Vec<EntityId>], threshold: usize) -> Vec<(EntityId, usize)> {
    let mut tally: HashMap<EntityId, (usize, usize)> = HashMap::new();
    for list in outputs {
        let mut seen = BTreeSet::new();
        for (pos, &e) in list.iter().enumerate() {
            if !seen.insert(e) {
                continue;
            }
            let entry = tally.entry(e).or_insert((0, pos));
            entry.0 += 1;
            entry.1 = entry.1.min(pos);
        }
    }
    let mut kept: Vec<(EntityId, usize, usize)> = tally
        .into_iter()
        .filter(|(_, (votes, _))| *votes >= threshold)
        .map(|(e, (votes, first))| (e, votes, first))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    kept.into_iter().map(|(e, v, _)| (e, v)).collect()
}

/// Share of the agents' combined candidates that not every agent produced.
fn disagreement(outputs: &[Vec<EntityId>]) -> f64 {
    let union: BTreeSet<EntityId> = outputs.iter().flatten().copied().collect();
    if union.is_empty() {
        return 0.0;
    }
    let unanimous = aggregate_votes(outputs, outputs.len()).len();
    1.0 - unanimous as f64 / union.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusStep {
    pub index: usize,
    pub signature: String,
    pub agent_outputs: Vec<AnswerList>,
    pub aggregated: AnswerList,
    pub disagreement: f64,
    pub cache_hit: bool,
}

#[derive(Clone, Debug)]
pub struct ConsensusOutcome {
    pub answers: AnswerList,
    /// Per-step votes; in final-only mode a single entry for the output step.
    pub steps: Vec<ConsensusStep>,
    pub agent_traces: Vec<ExecutionTrace>,
}

impl Executor<'_> {
    pub fn consensus_execute(
        &self,
        plan: &Plan,
        agents: &[&dyn Answerer],
        config: &ConsensusConfig,
    ) -> Result<ConsensusOutcome, RunError> {
        let fail = |step: usize, source| RunError {
            step,
            source,
            partial: ExecutionTrace::default(),
        };
        config.validate().map_err(|e| fail(0, e))?;
        if agents.len() != config.agents {
            return Err(fail(
                0,
                BackendError::Config(format!(
                    "expected {} agents, got {}",
                    config.agents,
                    agents.len()
                )),
            ));
        }
        match config.mode {
            ConsensusMode::PerStep => self.consensus_per_step(plan, agents, config.threshold),
            ConsensusMode::FinalOnly => self.consensus_final(plan, agents, config.threshold),
        }
    }

    fn consensus_per_step(
        &self,
        plan: &Plan,
        agents: &[&dyn Answerer],
        threshold: usize,
    ) -> Result<ConsensusOutcome, RunError> {
        let sigs = plan.signatures();
        let anchors = plan.anchors();
        let consumes = agents.iter().any(|a| a.info().consumes_evidence);
        let provenance = format!("consensus({})", agents.len());
        let mut outputs: Vec<AnswerList> = Vec::new();
        let mut steps = Vec::new();
        let mut traces = vec![ExecutionTrace::default(); agents.len()];

        for step in plan.steps() {
            let start = Instant::now();
            let sig = &sigs[step.index];
            let inputs = resolve_inputs(step, &outputs);
            let fail = |source, traces: &[ExecutionTrace]| RunError {
                step: step.index,
                source,
                partial: traces.first().cloned().unwrap_or_default(),
            };

            if let Some(hit) = self.cache.and_then(|c| c.get(sig)) {
                steps.push(ConsensusStep {
                    index: step.index,
                    signature: sig.clone(),
                    agent_outputs: Vec::new(),
                    aggregated: hit.clone(),
                    disagreement: 0.0,
                    cache_hit: true,
                });
                outputs.push(hit);
                continue;
            }

            let prep = self
                .prepare(step, &inputs, &outputs, &anchors, consumes)
                .map_err(|e| fail(e, &traces))?;
            let (agent_outputs, evidence_triples, truncated) = match &prep {
                Prep::ShortCircuit => {
                    (vec![AnswerList::empty(&provenance); agents.len()], 0, false)
                }
                Prep::Ready(prepared) => {
                    let request = StepRequest {
                        step,
                        signature: sig,
                        inputs: &inputs,
                        evidence: prepared.as_ref().map(|p| &p.evidence),
                        prompt: prepared.as_ref().map(|p| &p.prompt),
                    };
                    let mut outs = Vec::with_capacity(agents.len());
                    for agent in agents {
                        outs.push(agent.answer_step(&request).map_err(|e| fail(e, &traces))?);
                    }
                    let (n, t) = prepared
                        .as_ref()
                        .map_or((0, false), |p| (p.evidence.triple_count, p.truncated));
                    (outs, n, t)
                }
            };
            let called = matches!(prep, Prep::Ready(_));
            for (trace, out) in traces.iter_mut().zip(&agent_outputs) {
                trace.steps.push(StepTrace {
                    index: step.index,
                    kind: step.kind(),
                    signature: sig.clone(),
                    evidence_triples,
                    truncated,
                    inputs: inputs.clone(),
                    output: out.clone(),
                    cache_hit: false,
                    backend_called: called,
                    wall_time: start.elapsed(),
                });
            }
            let lists: Vec<Vec<EntityId>> =
                agent_outputs.iter().map(|a| a.entities.clone()).collect();
            let voted = aggregate_votes(&lists, threshold);
            let mut aggregated = AnswerList::new(voted.into_iter().map(|(e, _)| e), &provenance);
            aggregated.violations = agent_outputs.iter().map(|a| a.violations).sum();
            let aggregated = match self.cache {
                Some(c) => c.insert(sig, aggregated),
                None => aggregated,
            };
            steps.push(ConsensusStep {
                index: step.index,
                signature: sig.clone(),
                disagreement: disagreement(&lists),
                agent_outputs,
                aggregated: aggregated.clone(),
                cache_hit: false,
            });
            outputs.push(aggregated);
        }
        let answers = outputs
            .pop()
            .unwrap_or_else(|| AnswerList::empty(&provenance));
        Ok(ConsensusOutcome {
            answers,
            steps,
            agent_traces: traces,
        })
    }

    fn consensus_final(
        &self,
        plan: &Plan,
        agents: &[&dyn Answerer],
        threshold: usize,
    ) -> Result<ConsensusOutcome, RunError> {
        // Agents run independently; a shared signature cache would merge them.
        let solo = Executor {
            graph: self.graph,
            retrieval: self.retrieval.clone(),
            template: self.template,
            cache: None,
        };
        let mut finals = Vec::with_capacity(agents.len());
        let mut traces = Vec::with_capacity(agents.len());
        for agent in agents {
            let run = solo.execute_plan(plan, *agent)?;
            finals.push(run.answers);
            traces.push(run.trace);
        }
        let lists: Vec<Vec<EntityId>> = finals.iter().map(|a| a.entities.clone()).collect();
        let provenance = format!("consensus-final({})", agents.len());
        let answers = AnswerList::new(
            aggregate_votes(&lists, threshold)
                .into_iter()
                .map(|(e, _)| e),
            provenance,
        );
        let out = plan.output();
        Ok(ConsensusOutcome {
            steps: vec![ConsensusStep {
                index: out,
                signature: plan.signatures().swap_remove(out),
                disagreement: disagreement(&lists),
                agent_outputs: finals,
                aggregated: answers.clone(),
                cache_hit: false,
            }],
            answers,
            agent_traces: traces,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::PromptTemplate;
    use crate::exec::{BackendInfo, ExactExecutor};
    use crate::fixtures::tiny_kg;
    use crate::kg::RelationId;
    use crate::plan::compile;
    use crate::query::QueryAst;
    use crate::retrieve::RetrievalConfig;

    fn ids(v: &[u32]) -> Vec<EntityId> {
        v.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn hand_voted_example() {
        let outs = [ids(&[3, 4]), ids(&[3]), ids(&[3, 5])];
        assert_eq!(aggregate_votes(&outs, 2), vec![(EntityId(3), 3)]);
        let loose: Vec<EntityId> = aggregate_votes(&outs, 1)
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        assert_eq!(loose, ids(&[3, 4, 5]));
        assert!((disagreement(&outs) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ordering_uses_first_appearance_then_id() {
        let outs = [ids(&[9, 1]), ids(&[1, 9]), ids(&[7])];
        let order: Vec<EntityId> = aggregate_votes(&outs, 1)
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        assert_eq!(order, ids(&[1, 9, 7]));
    }

    #[test]
    fn config_bounds() {
        assert_eq!(ConsensusConfig::majority(3).threshold, 2);
        assert_eq!(ConsensusConfig::majority(4).threshold, 3);
        assert!(ConsensusConfig::majority(0).validate().is_err());
        let bad = ConsensusConfig {
            agents: 2,
            threshold: 3,
            mode: ConsensusMode::PerStep,
        };
        assert!(bad.validate().is_err());
    }

    struct Fixed(Vec<EntityId>);
    impl Answerer for Fixed {
        fn info(&self) -> BackendInfo {
            BackendInfo {
                name: "fixed".into(),
                consumes_evidence: false,
            }
        }
        fn answer_step(&self, _: &StepRequest<'_>) -> Result<AnswerList, BackendError> {
            Ok(AnswerList::new(self.0.clone(), "fixed"))
        }
    }

    #[test]
    fn per_step_votes_feed_forward() {
        let g = tiny_kg();
        let tpl = PromptTemplate::default();
        let ex = Executor::new(&g, RetrievalConfig::default(), &tpl);
        let plan = compile(&QueryAst::chain(EntityId(0), &[RelationId(0)])).unwrap();
        let (a, b, c) = (Fixed(ids(&[3, 4])), Fixed(ids(&[3])), Fixed(ids(&[3, 5])));
        let agents: [&dyn Answerer; 3] = [&a, &b, &c];
        let out = ex
            .consensus_execute(&plan, &agents, &ConsensusConfig::majority(3))
            .unwrap();
        assert_eq!(out.answers.entities, ids(&[3]));
        assert_eq!(out.agent_traces.len(), 3);
        assert_eq!(out.steps[0].agent_outputs.len(), 3);

        let final_only = ConsensusConfig {
            mode: ConsensusMode::FinalOnly,
            ..ConsensusConfig::majority(3)
        };
        let out = ex.consensus_execute(&plan, &agents, &final_only).unwrap();
        assert_eq!(out.answers.entities, ids(&[3]));
    }

    #[test]
    fn identical_agents_match_single_run() {
        let g = tiny_kg();
        let tpl = PromptTemplate::default();
        let ex = Executor::new(&g, RetrievalConfig::default(), &tpl);
        let exact = ExactExecutor::new(&g);
        let plan = compile(&QueryAst::chain(
            EntityId(0),
            &[RelationId(0), RelationId(1)],
        ))
        .unwrap();
        let single = ex.execute_plan(&plan, &exact).unwrap();
        let agents: [&dyn Answerer; 3] = [&exact, &exact, &exact];
        let out = ex
            .consensus_execute(&plan, &agents, &ConsensusConfig::majority(3))
            .unwrap();
        assert_eq!(out.answers.entities, single.answers.entities);
        assert!(out.steps.iter().all(|s| s.disagreement == 0.0));
    }
}
