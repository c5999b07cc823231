use std::collections::{BTreeSet, HashMap};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{AnswerList, Answerer, BackendError, BackendInfo, StepRequest};
use crate::evidence::{parse_answer, parse_evidence};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::plan::{Step, StepOp};

pub const ENDPOINT_ENV: &str = "ROG_LLM_ENDPOINT";
pub const TOKEN_ENV: &str = "ROG_LLM_TOKEN";

/// INTERSECT / UNION / SUBTRACT over resolved sets, ascending by id. Returns
/// `None` for PROJECT.
pub fn apply_set_op(step: &Step, inputs: &[Vec<EntityId>]) -> Option<Vec<EntityId>> {
    let sets: Vec<BTreeSet<EntityId>> =
        inputs.iter().map(|v| v.iter().copied().collect()).collect();
    let out: BTreeSet<EntityId> = match &step.op {
        StepOp::Project { .. } => return None,
        StepOp::Intersect(_) => {
            let (first, rest) = sets.split_first()?;
            first
                .iter()
                .filter(|e| rest.iter().all(|s| s.contains(e)))
                .copied()
                .collect()
        }
        StepOp::Union(_) => sets.into_iter().flatten().collect(),
        StepOp::Subtract { .. } => match sets.as_slice() {
            [base, removed] => base.difference(removed).copied().collect(),
            _ => return None,
        },
    };
    Some(out.into_iter().collect())
}

/// Reference operator semantics over `graph`; evidence is ignored.
pub fn exact_answer_step(
    step: &Step,
    graph: &KnowledgeGraph,
    inputs: &[Vec<EntityId>],
) -> Vec<EntityId> {
    match &step.op {
        StepOp::Project { relation, .. } => {
            let out: BTreeSet<EntityId> = inputs[0]
                .iter()
                .filter(|e| {
                    e.index() < graph.entity_count() && relation.index() < graph.relation_count()
                })
                .flat_map(|&e| graph.tails(e, *relation).map(|t| t.tail))
                .collect();
            out.into_iter().collect()
        }
        _ => apply_set_op(step, inputs).unwrap_or_default(),
    }
}

/// Symbolic executor with full access to one graph.
pub struct ExactExecutor<'g> {
    graph: &'g KnowledgeGraph,
}

impl<'g> ExactExecutor<'g> {
    pub fn new(graph: &'g KnowledgeGraph) -> Self {
        Self { graph }
    }
}

impl Answerer for ExactExecutor<'_> {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "exact".into(),
            consumes_evidence: false,
        }
    }

    fn answer_step(&self, r: &StepRequest<'_>) -> Result<AnswerList, BackendError> {
        Ok(AnswerList::new(
            exact_answer_step(r.step, self.graph, r.inputs),
            "exact",
        ))
    }
}

/// A perfectly grounded reasoner: projections may only follow triples that
/// appear in the step's serialized evidence.
pub struct EvidenceExecutor;

impl Answerer for EvidenceExecutor {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "evidence".into(),
            consumes_evidence: true,
        }
    }

    fn answer_step(&self, r: &StepRequest<'_>) -> Result<AnswerList, BackendError> {
        if let Some(out) = apply_set_op(r.step, r.inputs) {
            return Ok(AnswerList::new(out, "evidence"));
        }
        let StepOp::Project { relation, .. } = &r.step.op else {
            unreachable!("set operations handled above")
        };
        let evidence = r.evidence.ok_or(BackendError::NoEvidence)?;
        let sources: BTreeSet<EntityId> = r.inputs[0].iter().copied().collect();
        let out: BTreeSet<EntityId> = parse_evidence(&evidence.text)?
            .into_iter()
            .filter(|t| t.relation == *relation && sources.contains(&t.head))
            .map(|t| t.tail)
            .collect();
        Ok(AnswerList::new(out, "evidence"))
    }
}

#[derive(Deserialize)]
struct ScriptLine {
    signature: String,
    output: String,
}

/// Parses a replay script: one `{"signature": ..., "output": ...}` object per
/// line. Later lines override earlier ones.
pub fn parse_script(text: &str) -> Result<HashMap<String, String>, (usize, serde_json::Error)> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScriptLine = serde_json::from_str(line).map_err(|e| (i + 1, e))?;
        map.insert(rec.signature, rec.output);
    }
    Ok(map)
}

/// Replays canned raw model outputs keyed by step signature.
pub struct ScriptedBackend {
    outputs: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(outputs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            outputs: outputs.into_iter().collect(),
        }
    }
}

impl Answerer for ScriptedBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "scripted".into(),
            consumes_evidence: false,
        }
    }

    fn answer_step(&self, r: &StepRequest<'_>) -> Result<AnswerList, BackendError> {
        let raw = self
            .outputs
            .get(r.signature)
            .ok_or_else(|| BackendError::MissingScript(r.signature.to_string()))?;
        Ok(parsed_list(raw, "scripted", None))
    }
}

fn parsed_list(raw: &str, provenance: &str, entity_count: Option<usize>) -> AnswerList {
    let parsed = parse_answer(raw);
    let mut violations = parsed.violations;
    let entities: Vec<EntityId> = parsed
        .entities
        .into_iter()
        .filter(|e| match entity_count {
            Some(n) if e.index() >= n => {
                violations += 1;
                false
            }
            _ => true,
        })
        .collect();
    AnswerList {
        violations,
        explicit_none: parsed.explicit_none,
        ..AnswerList::new(entities, provenance)
    }
}

#[derive(Clone, Debug)]
pub struct LlmConfig {
    pub endpoint: String,
    pub token: Option<String>,
    /// Total attempts per step, including the first.
    pub attempts: usize,
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Ids at or above this bound are dropped and counted as violations.
    pub entity_count: Option<usize>,
    /// Extra fields merged into every request object.
    pub options: Map<String, Value>,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
            entity_count: None,
            options: Map::new(),
        }
    }

    /// Endpoint and token from `ROG_LLM_ENDPOINT` / `ROG_LLM_TOKEN`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())?;
        let mut cfg = Self::new(endpoint);
        cfg.token = std::env::var(TOKEN_ENV).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct Envelope {
    text: String,
}

/// HTTP backend: POSTs `{"prompt": ...}` and reads `{"text": ...}`.
pub struct RemoteLlm {
    config: LlmConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl RemoteLlm {
    pub fn new(config: LlmConfig) -> Result<Self, BackendError> {
        if config.endpoint.is_empty() {
            return Err(BackendError::Config("no endpoint configured".into()));
        }
        if config.attempts == 0 || config.max_in_flight == 0 {
            return Err(BackendError::Config(
                "attempts and max_in_flight must be at least 1".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Semaphore {
            free: Mutex::new(config.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(Self {
            config,
            agent,
            slots,
        })
    }

    /// Sends one prompt and returns the raw response text.
    pub fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut body = self.config.options.clone();
        body.insert("prompt".into(), Value::String(prompt.to_string()));
        let body = Value::Object(body);
        let mut last = BackendError::Transport {
            attempts: 0,
            message: "no attempt made".into(),
        };
        for attempt in 1..=self.config.attempts {
            if attempt > 1 {
                thread::sleep(self.config.backoff * (1 << (attempt - 2).min(16)));
            }
            let _permit = self.slots.acquire();
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(token) = &self.config.token {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) if resp.status().is_success() => {
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| BackendError::Envelope(e.to_string()))?;
                    let env: Envelope = serde_json::from_str(&text)
                        .map_err(|e| BackendError::Envelope(e.to_string()))?;
                    return Ok(env.text);
                }
                Ok(resp) => {
                    last = BackendError::Status {
                        status: resp.status().as_u16(),
                        attempts: attempt,
                    };
                }
                Err(e) => {
                    last = BackendError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    };
                }
            }
            log::warn!("llm request attempt {attempt} failed: {last}");
        }
        Err(last)
    }
}

impl Answerer for RemoteLlm {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "llm".into(),
            consumes_evidence: true,
        }
    }

    fn answer_step(&self, r: &StepRequest<'_>) -> Result<AnswerList, BackendError> {
        let prompt = r.prompt.ok_or(BackendError::NoEvidence)?;
        let raw = self.complete(&prompt.text)?;
        Ok(parsed_list(&raw, "llm", self.config.entity_count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::tiny_kg;
    use crate::kg::RelationId;
    use crate::plan::{compile, SourceRef};
    use crate::query::QueryAst;

    fn ids(v: &[u32]) -> Vec<EntityId> {
        v.iter().map(|&i| EntityId(i)).collect()
    }

    fn step(op: StepOp) -> Step {
        Step { index: 0, op }
    }

    #[test]
    fn exact_step_semantics() {
        let g = tiny_kg();
        let lit = SourceRef::Literal(BTreeSet::from([EntityId(0)]));
        let p = step(StepOp::Project {
            source: lit.clone(),
            relation: RelationId(0),
        });
        assert_eq!(exact_answer_step(&p, &g, &[ids(&[0])]), ids(&[1, 2]));
        let i = step(StepOp::Intersect(vec![
            SourceRef::Step(0),
            SourceRef::Step(1),
        ]));
        assert_eq!(
            exact_answer_step(&i, &g, &[ids(&[1, 2]), ids(&[2, 5])]),
            ids(&[2])
        );
        let s = step(StepOp::Subtract {
            base: SourceRef::Step(0),
            removed: SourceRef::Step(1),
        });
        assert_eq!(
            exact_answer_step(&s, &g, &[ids(&[1, 2]), vec![]]),
            ids(&[1, 2])
        );
        let u = step(StepOp::Union(vec![SourceRef::Step(0), SourceRef::Step(1)]));
        assert_eq!(
            exact_answer_step(&u, &g, &[ids(&[4, 1]), ids(&[2])]),
            ids(&[1, 2, 4])
        );
    }

    #[test]
    fn evidence_executor_is_limited_to_evidence() {
        use crate::evidence::serialize_evidence;
        use crate::retrieve::{retrieve, RetrievalConfig};
        let g = tiny_kg();
        let plan = compile(&QueryAst::chain(EntityId(0), &[RelationId(0)])).unwrap();
        let seeds = BTreeSet::from([EntityId(0)]);
        let rels = BTreeSet::from([RelationId(0)]);
        let run = |cap: usize| {
            let cfg = RetrievalConfig {
                max_triples: cap,
                ..Default::default()
            };
            let ev = serialize_evidence(&retrieve(&g, &seeds, &rels, &cfg).unwrap());
            let inputs = [ids(&[0])];
            let req = StepRequest {
                step: &plan.steps()[0],
                signature: "",
                inputs: &inputs,
                evidence: Some(&ev),
                prompt: None,
            };
            EvidenceExecutor.answer_step(&req).unwrap().entities
        };
        assert_eq!(run(64), ids(&[1, 2]));
        assert_eq!(run(1), ids(&[1]));
    }

    #[test]
    fn scripted_outputs() {
        let plan = compile(&QueryAst::chain(EntityId(0), &[RelationId(0)])).unwrap();
        let sig = plan.signature(0).unwrap();
        let inputs = [ids(&[0])];
        let req = StepRequest {
            step: &plan.steps()[0],
            signature: &sig,
            inputs: &inputs,
            evidence: None,
            prompt: None,
        };
        let b = ScriptedBackend::new([(sig.clone(), "e3".to_string())]);
        assert_eq!(b.answer_step(&req).unwrap().entities, ids(&[3]));
        let b = ScriptedBackend::new([(sig.clone(), "NONE".to_string())]);
        let out = b.answer_step(&req).unwrap();
        assert!(out.entities.is_empty() && out.explicit_none);
        let b = ScriptedBackend::new([]);
        assert!(matches!(
            b.answer_step(&req),
            Err(BackendError::MissingScript(_))
        ));
    }

    #[test]
    fn script_file_parsing() {
        let m = parse_script("{\"signature\":\"a\",\"output\":\"e1\"}\n\n{\"signature\":\"b\",\"output\":\"NONE\"}\n")
            .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(parse_script("{\"signature\":1}").unwrap_err().0, 1);
    }

    #[test]
    fn out_of_range_ids_are_violations() {
        let l = parsed_list("e1\ne9\nfoo", "llm", Some(6));
        assert_eq!(l.entities, ids(&[1]));
        assert_eq!(l.violations, 2);
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let mut cfg = LlmConfig::new("http://127.0.0.1:9/v1");
        cfg.backoff = Duration::from_millis(1);
        cfg.timeout = Duration::from_secs(2);
        let llm = RemoteLlm::new(cfg).unwrap();
        match llm.complete("hi") {
            Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RemoteLlm::new(LlmConfig::new("")).is_err());
    }
}
