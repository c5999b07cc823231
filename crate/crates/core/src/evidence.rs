//! Evidence rendering, per-step prompts and parsing of constrained answers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg::{EntityId, RelationId, Triple};
use crate::plan::{SourceRef, Step, StepKind, StepOp};
use crate::retrieve::EvidenceBundle;

pub const TRIPLES_HEADER: &str = "Triples:";
pub const ADJACENCY_HEADER: &str = "Adjacency:";
pub const NONE_TOKEN: &str = "NONE";

/// Default prompt asset shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/prompt_template_v1.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("evidence line {line}: {msg}")]
    BadEvidence { line: usize, msg: String },
    #[error("evidence is missing the {0:?} header")]
    MissingHeader(&'static str),
    #[error("template line {line}: {msg}")]
    BadTemplate { line: usize, msg: String },
    #[error("template is missing section [{0}]")]
    MissingSection(String),
    #[error("template is missing slot {{{0}}}")]
    MissingSlot(&'static str),
    #[error("no binding for placeholder {0}")]
    MissingBinding(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerializedEvidence {
    pub text: String,
    pub triple_count: usize,
}

/// Renders a triple section in bundle order followed by adjacency lines
/// grouped by head and relation in ascending id order.
pub fn serialize_evidence(bundle: &EvidenceBundle) -> SerializedEvidence {
    let mut text = String::from(TRIPLES_HEADER);
    for t in &bundle.triples {
        let _ = write!(text, "\n{t}");
    }
    text.push('\n');
    text.push_str(ADJACENCY_HEADER);
    let mut adjacency: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>> = BTreeMap::new();
    for t in &bundle.triples {
        adjacency
            .entry((t.head, t.relation))
            .or_default()
            .insert(t.tail);
    }
    let mut current: Option<EntityId> = None;
    for ((head, relation), tails) in &adjacency {
        let tails: Vec<String> = tails.iter().map(|e| e.label()).collect();
        if current == Some(*head) {
            let _ = write!(text, "; {relation} -> {}", tails.join(","));
        } else {
            let _ = write!(text, "\n{head}: {relation} -> {}", tails.join(","));
            current = Some(*head);
        }
    }
    SerializedEvidence {
        text,
        triple_count: bundle.triples.len(),
    }
}

/// Recovers the triple list from serialized evidence. Lines before the triple
/// header are ignored so the function also accepts a whole prompt.
pub fn parse_evidence(text: &str) -> Result<Vec<Triple>, EvidenceError> {
    let mut lines = text.lines().enumerate();
    if !lines.by_ref().any(|(_, l)| l == TRIPLES_HEADER) {
        return Err(EvidenceError::MissingHeader(TRIPLES_HEADER));
    }
    let mut triples = Vec::new();
    for (i, line) in lines.by_ref() {
        if line == ADJACENCY_HEADER {
            return Ok(triples);
        }
        triples.push(
            parse_triple_line(line).ok_or_else(|| EvidenceError::BadEvidence {
                line: i + 1,
                msg: format!("expected \"(<head>, <relation>, <tail>)\", found {line:?}"),
            })?,
        );
    }
    Err(EvidenceError::MissingHeader(ADJACENCY_HEADER))
}

fn parse_triple_line(line: &str) -> Option<Triple> {
    let inner = line.strip_prefix('(')?.strip_suffix(')')?;
    let mut parts = inner.split(", ");
    let t = Triple::new(
        parts.next()?.parse().ok()?,
        parts.next()?.parse().ok()?,
        parts.next()?.parse().ok()?,
    );
    parts.next().is_none().then_some(t)
}

/// Versioned prompt asset: per-operator instruction sentences, the output
/// format sentence and the layout template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    instructions: BTreeMap<String, String>,
    format: String,
    body: String,
    hash: String,
}

const SLOTS: [&str; 4] = ["instruction", "evidence", "arguments", "format"];
const OPTIONAL_SLOTS: [&str; 1] = ["exemplars"];

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("shipped template is valid")
    }
}

impl PromptTemplate {
    /// Parses a prompt asset. `#` lines outside sections are comments.
    pub fn parse(asset: &str) -> Result<Self, EvidenceError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, line) in asset.lines().enumerate() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if sections.contains_key(name) {
                    return Err(EvidenceError::BadTemplate {
                        line: i + 1,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                sections.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
                continue;
            }
            match &current {
                Some(name) => sections.get_mut(name).unwrap().push(line),
                None if line.starts_with('#') || line.trim().is_empty() => {}
                None => {
                    return Err(EvidenceError::BadTemplate {
                        line: i + 1,
                        msg: "content outside a section".into(),
                    })
                }
            }
        }
        let mut take = |name: &str| {
            sections
                .remove(name)
                .map(|lines| lines.join("\n").trim_end_matches('\n').to_string())
                .ok_or_else(|| EvidenceError::MissingSection(name.to_string()))
        };
        let mut instructions = BTreeMap::new();
        for kind in [
            StepKind::Project,
            StepKind::Intersect,
            StepKind::Union,
            StepKind::Subtract,
        ] {
            let text = take(&format!("instruction.{}", kind.name()))?;
            instructions.insert(kind.name().to_string(), text);
        }
        let format = take("format")?;
        let body = take("template")?;
        let used = template_slots(&body)?;
        for slot in SLOTS {
            if !used.contains(slot) {
                return Err(EvidenceError::MissingSlot(slot));
            }
        }
        if let Some(extra) = sections.keys().next() {
            return Err(EvidenceError::BadTemplate {
                line: 0,
                msg: format!("unknown section [{extra}]"),
            });
        }
        Ok(Self {
            instructions,
            format,
            body,
            hash: hex::encode(Sha256::digest(asset.as_bytes())),
        })
    }

    /// SHA-256 of the asset bytes, recorded in run reports.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn instruction(&self, kind: StepKind) -> &str {
        &self.instructions[kind.name()]
    }

    fn fill(&self, values: &BTreeMap<&str, &str>) -> String {
        let mut lines = Vec::new();
        for line in self.body.split('\n') {
            let trimmed = line.trim();
            // A line holding only an empty optional slot is dropped.
            if OPTIONAL_SLOTS.iter().any(|s| {
                trimmed == format!("{{{s}}}") && values.get(s).is_none_or(|v| v.is_empty())
            }) {
                continue;
            }
            let mut rendered = String::new();
            substitute(line, values, &mut rendered);
            lines.push(rendered);
        }
        lines.join("\n")
    }
}

/// Slot names used by a template body; `{{` and `}}` escape braces.
fn template_slots(body: &str) -> Result<BTreeSet<String>, EvidenceError> {
    let mut used = BTreeSet::new();
    for (i, line) in body.split('\n').enumerate() {
        let mut rest = line;
        while let Some(pos) = rest.find(['{', '}']) {
            let tail = &rest[pos..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                rest = &tail[2..];
                continue;
            }
            let bad = |msg: &str| EvidenceError::BadTemplate {
                line: i + 1,
                msg: msg.to_string(),
            };
            if tail.starts_with('}') {
                return Err(bad("unmatched '}'"));
            }
            let end = tail.find('}').ok_or_else(|| bad("unterminated slot"))?;
            let name = &tail[1..end];
            if !SLOTS.contains(&name) && !OPTIONAL_SLOTS.contains(&name) {
                return Err(bad(&format!("unknown slot {{{name}}}")));
            }
            used.insert(name.to_string());
            rest = &tail[end + 1..];
        }
    }
    Ok(used)
}

fn substitute(line: &str, values: &BTreeMap<&str, &str>, out: &mut String) {
    let mut rest = line;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else {
            // Slots were validated at parse time.
            let end = tail.find('}').unwrap_or(tail.len() - 1);
            out.push_str(values.get(&tail[1..end]).copied().unwrap_or(""));
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPrompt {
    pub text: String,
    pub step_index: usize,
    /// Placeholder (`SET_<k>`) to the cached set it denotes.
    pub bindings: BTreeMap<String, Vec<EntityId>>,
}

pub fn placeholder(step: usize) -> String {
    format!("SET_{step}")
}

fn id_list(ids: &[EntityId]) -> String {
    if ids.is_empty() {
        return NONE_TOKEN.to_string();
    }
    ids.iter().map(|e| e.label()).collect::<Vec<_>>().join(",")
}

/// Fills the template for one step. Every cached set the step references must
/// be bound; bound sets are inlined in the argument block.
pub fn render_prompt(
    template: &PromptTemplate,
    step: &Step,
    evidence: &SerializedEvidence,
    bindings: &BTreeMap<String, Vec<EntityId>>,
) -> Result<StepPrompt, EvidenceError> {
    let mut used = BTreeMap::new();
    let mut name = |src: &SourceRef| -> Result<String, EvidenceError> {
        match src {
            SourceRef::Literal(set) => {
                Ok(set.iter().map(|e| e.label()).collect::<Vec<_>>().join(","))
            }
            SourceRef::Step(i) => {
                let key = placeholder(*i);
                let ids = bindings
                    .get(&key)
                    .ok_or_else(|| EvidenceError::MissingBinding(key.clone()))?;
                used.insert(key.clone(), ids.clone());
                Ok(key)
            }
        }
    };
    let mut args = String::new();
    match &step.op {
        StepOp::Project { source, relation } => {
            let _ = write!(args, "source: {}\nrelation: {relation}", name(source)?);
        }
        StepOp::Intersect(srcs) | StepOp::Union(srcs) => {
            let names = srcs.iter().map(&mut name).collect::<Result<Vec<_>, _>>()?;
            let _ = write!(args, "sets: {}", names.join(", "));
        }
        StepOp::Subtract { base, removed } => {
            let _ = write!(args, "base: {}\nremoved: {}", name(base)?, name(removed)?);
        }
    }
    for (key, ids) in &used {
        let _ = write!(args, "\n{key}: {}", id_list(ids));
    }
    let values = BTreeMap::from([
        ("instruction", template.instruction(step.kind())),
        ("evidence", evidence.text.as_str()),
        ("arguments", args.as_str()),
        ("format", template.format.as_str()),
        ("exemplars", ""),
    ]);
    Ok(StepPrompt {
        text: template.fill(&values),
        step_index: step.index,
        bindings: used,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ParsedAnswer {
    pub entities: Vec<EntityId>,
    pub violations: usize,
    pub explicit_none: bool,
}

/// Parses a newline-separated list of entity labels. `NONE` counts as an
/// explicit empty answer only when it is the sole non-empty line; otherwise it
/// is a violation like any other non-label line.
pub fn parse_answer(raw: &str) -> ParsedAnswer {
    let content: Vec<&str> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if content == [NONE_TOKEN] {
        return ParsedAnswer {
            explicit_none: true,
            ..Default::default()
        };
    }
    let mut seen = BTreeSet::new();
    let mut out = ParsedAnswer::default();
    for line in content {
        match line.parse::<EntityId>() {
            Ok(e) => {
                if seen.insert(e) {
                    out.entities.push(e);
                }
            }
            Err(_) => out.violations += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::compile;
    use crate::query::{Branch, QueryAst};

    fn t(h: u32, r: u32, tl: u32) -> Triple {
        Triple::new(EntityId(h), RelationId(r), EntityId(tl))
    }
    fn bundle(ts: Vec<Triple>) -> EvidenceBundle {
        EvidenceBundle {
            triples: ts,
            seeds: BTreeSet::new(),
            truncated: false,
        }
    }

    #[test]
    fn serialize_examples() {
        let s = serialize_evidence(&bundle(vec![t(0, 0, 1), t(0, 0, 2)]));
        assert_eq!(
            s.text,
            "Triples:\n(e0, r0, e1)\n(e0, r0, e2)\nAdjacency:\ne0: r0 -> e1,e2"
        );
        assert_eq!(s.triple_count, 2);

        let s = serialize_evidence(&bundle(vec![]));
        assert_eq!(s.text, "Triples:\nAdjacency:");
        assert_eq!(s.triple_count, 0);

        let s = serialize_evidence(&bundle(vec![t(4, 0, 5)]));
        assert_eq!(s.text, "Triples:\n(e4, r0, e5)\nAdjacency:\ne4: r0 -> e5");
    }

    #[test]
    fn adjacency_groups_relations_per_head() {
        let s = serialize_evidence(&bundle(vec![
            t(2, 1, 4),
            t(0, 0, 1),
            t(2, 0, 1),
            t(2, 1, 3),
        ]));
        assert!(s
            .text
            .ends_with("Adjacency:\ne0: r0 -> e1\ne2: r0 -> e1; r1 -> e3,e4"));
        assert_eq!(
            parse_evidence(&s.text).unwrap(),
            vec![t(2, 1, 4), t(0, 0, 1), t(2, 0, 1), t(2, 1, 3)]
        );
    }

    #[test]
    fn parse_evidence_errors() {
        assert_eq!(
            parse_evidence("nothing"),
            Err(EvidenceError::MissingHeader(TRIPLES_HEADER))
        );
        assert!(matches!(
            parse_evidence("Triples:\n(e0, r0)\nAdjacency:"),
            Err(EvidenceError::BadEvidence { line: 2, .. })
        ));
        assert_eq!(
            parse_evidence("Triples:\n(e0, r0, e1)"),
            Err(EvidenceError::MissingHeader(ADJACENCY_HEADER))
        );
    }

    #[test]
    fn project_prompt_lists_literal_arguments() {
        let plan = compile(&QueryAst::chain(EntityId(0), &[RelationId(0)])).unwrap();
        let ev = serialize_evidence(&bundle(vec![t(0, 0, 1)]));
        let p = render_prompt(
            &PromptTemplate::default(),
            &plan.steps()[0],
            &ev,
            &BTreeMap::new(),
        )
        .unwrap();
        assert!(p.text.starts_with("Execute one PROJECT operation"));
        assert!(p
            .text
            .contains("Evidence:\nTriples:\n(e0, r0, e1)\nAdjacency:"));
        assert!(p.text.contains("source: e0\nrelation: r0"));
        assert!(p.text.ends_with(
            "Output format: output entity identifiers, one per line; output NONE if the answer set is empty"
        ));
        assert!(p.bindings.is_empty());
    }

    #[test]
    fn intersect_prompt_inlines_bound_sets() {
        let ast = QueryAst::Intersection(vec![
            Branch::pos(QueryAst::chain(EntityId(0), &[RelationId(0)])),
            Branch::pos(QueryAst::chain(EntityId(4), &[RelationId(0)])),
        ]);
        let plan = compile(&ast).unwrap();
        let ev = serialize_evidence(&bundle(vec![]));
        let bindings = BTreeMap::from([
            ("SET_0".to_string(), vec![EntityId(1), EntityId(2)]),
            ("SET_1".to_string(), vec![EntityId(2)]),
        ]);
        let tpl = PromptTemplate::default();
        let p = render_prompt(&tpl, &plan.steps()[2], &ev, &bindings).unwrap();
        assert!(p
            .text
            .contains("sets: SET_0, SET_1\nSET_0: e1,e2\nSET_1: e2"));
        assert_eq!(p.bindings.len(), 2);

        let partial = BTreeMap::from([("SET_0".to_string(), vec![EntityId(1)])]);
        assert_eq!(
            render_prompt(&tpl, &plan.steps()[2], &ev, &partial),
            Err(EvidenceError::MissingBinding("SET_1".into()))
        );
    }

    #[test]
    fn template_validation() {
        let minimal = "[instruction.PROJECT]\np\n[instruction.INTERSECT]\ni\n[instruction.UNION]\nu\n\
                       [instruction.SUBTRACT]\ns\n[format]\nf\n[template]\n{instruction}|{evidence}|{arguments}|{format} {{x}}";
        let tpl = PromptTemplate::parse(minimal).unwrap();
        let values = BTreeMap::from([
            ("instruction", "I"),
            ("evidence", "E"),
            ("arguments", "A"),
            ("format", "F"),
        ]);
        assert_eq!(tpl.fill(&values), "I|E|A|F {x}");
        assert_eq!(tpl.hash().len(), 64);

        let no_args = minimal.replace("|{arguments}", "");
        assert_eq!(
            PromptTemplate::parse(&no_args),
            Err(EvidenceError::MissingSlot("arguments"))
        );
        let unknown = minimal.replace("{format}", "{format}{bogus}");
        assert!(matches!(
            PromptTemplate::parse(&unknown),
            Err(EvidenceError::BadTemplate { .. })
        ));
        let missing = minimal.replace("[format]\nf\n", "");
        assert_eq!(
            PromptTemplate::parse(&missing),
            Err(EvidenceError::MissingSection("format".into()))
        );
    }

    #[test]
    fn parse_answer_examples() {
        let a = parse_answer("e3\ne4\ne3\n");
        assert_eq!(a.entities, vec![EntityId(3), EntityId(4)]);
        assert_eq!(a.violations, 0);

        let a = parse_answer("NONE");
        assert!(a.explicit_none);
        assert!(a.entities.is_empty());

        let a = parse_answer("The answer is e3\ne4");
        assert_eq!(a.entities, vec![EntityId(4)]);
        assert_eq!(a.violations, 1);

        let a = parse_answer("NONE\ne2");
        assert!(!a.explicit_none);
        assert_eq!(a.entities, vec![EntityId(2)]);
        assert_eq!(a.violations, 1);

        let a = parse_answer("  e1  \n\n\te01\n");
        assert_eq!(a.entities, vec![EntityId(1)]);
        assert_eq!(a.violations, 1);
    }
}
