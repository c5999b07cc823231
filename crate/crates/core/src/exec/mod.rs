//! Step-by-step plan execution against pluggable answerer backends.
//!
//! Each step resolves its argument sets (literals or earlier outputs), checks
//! the signature-keyed cache, retrieves evidence around the step's entities
//! for backends that consume it, and asks the backend for an answer list.
//! Every executed step is recorded in an [`ExecutionTrace`].

mod backends;
mod consensus;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::RwLock;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;

use crate::evidence::{
    placeholder, render_prompt, serialize_evidence, EvidenceError, PromptTemplate,
    SerializedEvidence, StepPrompt,
};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::plan::{Plan, SourceRef, Step, StepKind, StepOp};
use crate::retrieve::{reseed, retrieve, RetrievalConfig, RetrieveError};

pub use backends::{
    apply_set_op, exact_answer_step, parse_script, EvidenceExecutor, ExactExecutor, LlmConfig,
    RemoteLlm, ScriptedBackend, ENDPOINT_ENV, TOKEN_ENV,
};
pub use consensus::{
    aggregate_votes, ConsensusConfig, ConsensusMode, ConsensusOutcome, ConsensusStep,
};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("endpoint returned status {status} after {attempts} attempts")]
    Status { status: u16, attempts: usize },
    #[error("malformed response envelope: {0}")]
    Envelope(String),
    #[error("no scripted output for signature {0:?}")]
    MissingScript(String),
    #[error("backend needs evidence but none was supplied")]
    NoEvidence,
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Retrieval(#[from] RetrieveError),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Ordered, duplicate-free candidate list produced for one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerList {
    pub entities: Vec<EntityId>,
    pub provenance: String,
    pub violations: usize,
    pub explicit_none: bool,
}

impl AnswerList {
    /// Drops repeated ids, keeping first occurrences.
    pub fn new(
        entities: impl IntoIterator<Item = EntityId>,
        provenance: impl Into<String>,
    ) -> Self {
        let mut seen = BTreeSet::new();
        Self {
            entities: entities.into_iter().filter(|e| seen.insert(*e)).collect(),
            provenance: provenance.into(),
            violations: 0,
            explicit_none: false,
        }
    }

    pub fn empty(provenance: impl Into<String>) -> Self {
        Self::new([], provenance)
    }

    pub fn as_set(&self) -> BTreeSet<EntityId> {
        self.entities.iter().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackendInfo {
    pub name: String,
    pub consumes_evidence: bool,
}

/// Everything a backend may look at when answering one step.
#[derive(Debug)]
pub struct StepRequest<'a> {
    pub step: &'a Step,
    pub signature: &'a str,
    /// Resolved argument sets, positionally matching [`Step::sources`].
    pub inputs: &'a [Vec<EntityId>],
    pub evidence: Option<&'a SerializedEvidence>,
    pub prompt: Option<&'a StepPrompt>,
}

pub trait Answerer: Send + Sync {
    fn info(&self) -> BackendInfo;

    fn answer_step(&self, request: &StepRequest<'_>) -> Result<AnswerList, BackendError>;
}

/// Signature-keyed store of step outputs. Concurrent readers; the first write
/// for a signature wins and later writes return the stored list.
#[derive(Debug, Default)]
pub struct StepCache {
    map: RwLock<HashMap<String, AnswerList>>,
}

impl StepCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, signature: &str) -> Option<AnswerList> {
        self.map.read().unwrap().get(signature).cloned()
    }

    pub fn insert(&self, signature: &str, answer: AnswerList) -> AnswerList {
        self.map
            .write()
            .unwrap()
            .entry(signature.to_string())
            .or_insert(answer)
            .clone()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub index: usize,
    pub kind: StepKind,
    pub signature: String,
    pub evidence_triples: usize,
    pub truncated: bool,
    pub inputs: Vec<Vec<EntityId>>,
    pub output: AnswerList,
    pub cache_hit: bool,
    pub backend_called: bool,
    pub wall_time: Duration,
}

impl StepTrace {
    /// Structured record; wall time is left out so traces stay reproducible.
    pub fn to_record(&self, query_id: &str) -> Value {
        let labels = |ids: &[EntityId]| ids.iter().map(|e| e.label()).collect::<Vec<_>>();
        json!({
            "query": query_id,
            "step": self.index,
            "kind": self.kind.name(),
            "signature": self.signature,
            "evidence_triples": self.evidence_triples,
            "truncated": self.truncated,
            "inputs": self.inputs.iter().map(|s| labels(s)).collect::<Vec<_>>(),
            "output": labels(&self.output.entities),
            "provenance": self.output.provenance,
            "violations": self.output.violations,
            "explicit_none": self.output.explicit_none,
            "cache_hit": self.cache_hit,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecutionTrace {
    pub steps: Vec<StepTrace>,
}

impl ExecutionTrace {
    pub fn backend_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.backend_called).count()
    }

    pub fn to_records(&self, query_id: &str) -> Vec<Value> {
        self.steps.iter().map(|s| s.to_record(query_id)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub answers: AnswerList,
    pub trace: ExecutionTrace,
}

/// A failed run with the steps completed before the failure.
#[derive(Debug)]
pub struct RunError {
    pub step: usize,
    pub source: BackendError,
    pub partial: ExecutionTrace,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}", self.step, self.source)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Shared execution settings. `graph` is the observed graph evidence is
/// retrieved from.
pub struct Executor<'a> {
    pub graph: &'a KnowledgeGraph,
    pub retrieval: RetrievalConfig,
    pub template: &'a PromptTemplate,
    pub cache: Option<&'a StepCache>,
}

/// Evidence and prompt prepared once per step and shared by all agents.
struct Prepared {
    evidence: SerializedEvidence,
    truncated: bool,
    prompt: StepPrompt,
}

enum Prep {
    /// Every argument set is empty; the step's answer is empty.
    ShortCircuit,
    Ready(Option<Prepared>),
}

impl<'a> Executor<'a> {
    pub fn new(
        graph: &'a KnowledgeGraph,
        retrieval: RetrievalConfig,
        template: &'a PromptTemplate,
    ) -> Self {
        Self {
            graph,
            retrieval,
            template,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: &'a StepCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn execute_plan(&self, plan: &Plan, backend: &dyn Answerer) -> Result<Execution, RunError> {
        let sigs = plan.signatures();
        let anchors = plan.anchors();
        let consumes = backend.info().consumes_evidence;
        let mut outputs: Vec<AnswerList> = Vec::with_capacity(plan.len());
        let mut trace = ExecutionTrace::default();

        for step in plan.steps() {
            let start = Instant::now();
            let sig = &sigs[step.index];
            let inputs = resolve_inputs(step, &outputs);
            let fail = |source: BackendError, trace: &ExecutionTrace| RunError {
                step: step.index,
                source,
                partial: trace.clone(),
            };

            if let Some(hit) = self.cache.and_then(|c| c.get(sig)) {
                trace.steps.push(StepTrace {
                    index: step.index,
                    kind: step.kind(),
                    signature: sig.clone(),
                    evidence_triples: 0,
                    truncated: false,
                    inputs,
                    output: hit.clone(),
                    cache_hit: true,
                    backend_called: false,
                    wall_time: start.elapsed(),
                });
                outputs.push(hit);
                continue;
            }

            let prep = self
                .prepare(step, &inputs, &outputs, &anchors, consumes)
                .map_err(|e| fail(e, &trace))?;
            let (answer, evidence_triples, truncated, called) = match prep {
                Prep::ShortCircuit => (AnswerList::empty(backend.info().name), 0, false, false),
                Prep::Ready(prepared) => {
                    let request = StepRequest {
                        step,
                        signature: sig,
                        inputs: &inputs,
                        evidence: prepared.as_ref().map(|p| &p.evidence),
                        prompt: prepared.as_ref().map(|p| &p.prompt),
                    };
                    let answer = backend.answer_step(&request).map_err(|e| fail(e, &trace))?;
                    let (n, t) = prepared
                        .as_ref()
                        .map_or((0, false), |p| (p.evidence.triple_count, p.truncated));
                    (answer, n, t, true)
                }
            };
            let answer = match self.cache {
                Some(c) => c.insert(sig, answer),
                None => answer,
            };
            trace.steps.push(StepTrace {
                index: step.index,
                kind: step.kind(),
                signature: sig.clone(),
                evidence_triples,
                truncated,
                inputs,
                output: answer.clone(),
                cache_hit: false,
                backend_called: called,
                wall_time: start.elapsed(),
            });
            outputs.push(answer);
        }

        let answers = outputs
            .pop()
            .unwrap_or_else(|| AnswerList::empty("empty plan"));
        Ok(Execution { answers, trace })
    }

    fn prepare(
        &self,
        step: &Step,
        inputs: &[Vec<EntityId>],
        outputs: &[AnswerList],
        anchors: &BTreeSet<EntityId>,
        consumes: bool,
    ) -> Result<Prep, BackendError> {
        if inputs.iter().all(Vec::is_empty) {
            return Ok(Prep::ShortCircuit);
        }
        if !consumes {
            return Ok(Prep::Ready(None));
        }
        let seeds = match &step.op {
            StepOp::Project {
                source: SourceRef::Literal(set),
                ..
            } => set.clone(),
            _ => {
                let produced: BTreeSet<EntityId> = inputs.iter().flatten().copied().collect();
                reseed(&produced, &self.retrieval)
            }
        };
        let seeds = if seeds.is_empty() {
            anchors.clone()
        } else {
            seeds
        };
        let relations = step.relation().into_iter().collect();
        let bundle = match retrieve(self.graph, &seeds, &relations, &self.retrieval) {
            Ok(b) => b,
            Err(RetrieveError::EmptySeeds) => return Ok(Prep::ShortCircuit),
            Err(e) => return Err(e.into()),
        };
        let evidence = serialize_evidence(&bundle);
        let bindings: BTreeMap<String, Vec<EntityId>> = step
            .sources()
            .into_iter()
            .filter_map(|s| match s {
                SourceRef::Step(k) => Some((placeholder(*k), outputs[*k].entities.clone())),
                SourceRef::Literal(_) => None,
            })
            .collect();
        let prompt = render_prompt(self.template, step, &evidence, &bindings)?;
        Ok(Prep::Ready(Some(Prepared {
            evidence,
            truncated: bundle.truncated,
            prompt,
        })))
    }
}

fn resolve_inputs(step: &Step, outputs: &[AnswerList]) -> Vec<Vec<EntityId>> {
    step.sources()
        .into_iter()
        .map(|s| match s {
            SourceRef::Literal(set) => set.iter().copied().collect(),
            SourceRef::Step(k) => outputs[*k].entities.clone(),
        })
        .collect()
}
