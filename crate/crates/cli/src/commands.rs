use std::collections::BTreeSet;
use std::io::Write;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde_json::{json, Value};

use rog_core::config::{BackendKind, GraphChoice, RunConfig};
use rog_core::eval::{rank_query, render_table, Layout, ReportBuilder};
use rog_core::exec::{
    parse_script, Answerer, ConsensusConfig, ConsensusStep, EvidenceExecutor, ExactExecutor,
    ExecutionTrace, Executor, LlmConfig, RemoteLlm, ScriptedBackend, StepCache, ENDPOINT_ENV,
    TOKEN_ENV,
};
use rog_core::plan::compile;
use rog_core::query::{generate_instances, GenerateOptions, Query};
use rog_core::{EntityId, GraphSplit, QueryType};

use crate::files::{self, Prediction, Status};
use crate::Outcome;

pub fn ingest(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let split = files::load_split(cfg)?;
    let g = &split.full;
    let map = files::out_file(cfg, files::ABSTRACTION_MAP)?;
    let mut body = Vec::new();
    g.abstraction().write_map(&mut body)?;
    files::write(&map, std::str::from_utf8(&body)?)?;
    writeln!(
        out,
        "{} entities, {} relations, {} triples",
        g.entity_count(),
        g.relation_count(),
        g.triple_count()
    )?;
    writeln!(out, "observed: {} triples", split.observed.triple_count())?;
    writeln!(out, "abstraction map: {}", map.display())?;
    Ok(Outcome::Success)
}

pub fn gen_queries(
    cfg: &RunConfig,
    types: &[QueryType],
    count: usize,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    if count == 0 {
        bail!("--count must be at least 1");
    }
    let split = files::load_split(cfg)?;
    let opts = GenerateOptions {
        retry_factor: cfg.retry_factor,
    };
    let mut queries = String::new();
    let mut answers = String::new();
    for &qt in types {
        let instances = generate_instances(&split, qt, count, cfg.seed, &opts)?;
        queries += &files::jsonl(instances.iter().map(|i| i.query.to_record()));
        answers += &files::jsonl(instances.iter().map(|i| i.answer_record()));
        log::info!("generated {count} {qt} queries");
    }
    let (qp, ap) = (files::query_path(cfg), files::answer_path(cfg));
    files::write(&qp, &queries)?;
    files::write(&ap, &answers)?;
    writeln!(
        out,
        "{} queries written to {}",
        count * types.len(),
        qp.display()
    )?;
    writeln!(out, "answers written to {}", ap.display())?;
    Ok(Outcome::Success)
}

pub fn show_plans(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let queries = files::load_queries(cfg)?;
    let mut records = Vec::with_capacity(queries.len());
    for q in &queries {
        let plan = compile(&q.ast).with_context(|| format!("query {}", q.id))?;
        writeln!(out, "{} ({})\n{}", q.id, q.query_type, plan.pretty_print())?;
        records.push(json!({"id": q.id, "type": q.query_type.tag(), "steps": plan.to_records()}));
    }
    files::write(&files::out_file(cfg, files::PLANS)?, &files::jsonl(records))?;
    Ok(Outcome::Success)
}

fn llm_backend(cfg: &RunConfig, entity_count: usize) -> anyhow::Result<RemoteLlm> {
    let endpoint = cfg
        .llm_endpoint
        .clone()
        .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
        .ok_or_else(|| anyhow!("backend llm needs `llm_endpoint` or {ENDPOINT_ENV}"))?;
    let mut llm = LlmConfig::new(endpoint);
    llm.token = std::env::var(TOKEN_ENV).ok().filter(|s| !s.is_empty());
    llm.attempts = cfg.llm_attempts;
    llm.backoff = cfg.llm_backoff;
    llm.timeout = cfg.llm_timeout;
    llm.max_in_flight = cfg.llm_max_in_flight;
    llm.entity_count = Some(entity_count);
    Ok(RemoteLlm::new(llm)?)
}

fn build_backend<'g>(
    cfg: &RunConfig,
    split: &'g GraphSplit,
) -> anyhow::Result<Box<dyn Answerer + 'g>> {
    Ok(match cfg.backend {
        BackendKind::Exact => Box::new(ExactExecutor::new(match cfg.exact_graph {
            GraphChoice::Full => &split.full,
            GraphChoice::Observed => &split.observed,
        })),
        BackendKind::Evidence => Box::new(EvidenceExecutor),
        BackendKind::Llm => Box::new(llm_backend(cfg, split.full.entity_count())?),
        BackendKind::Scripted => {
            let path = cfg
                .script_file
                .as_ref()
                .ok_or_else(|| anyhow!("backend scripted needs `script_file`"))?;
            let script = parse_script(&files::read(path)?)
                .map_err(|(line, e)| anyhow!("{}:{line}: {e}", path.display()))?;
            Box::new(ScriptedBackend::new(script))
        }
    })
}

fn model_name(cfg: &RunConfig) -> String {
    match cfg.consensus_agents {
        1 => cfg.backend.name().to_string(),
        n => format!("{}-x{n}", cfg.backend.name()),
    }
}

struct QueryRun {
    prediction: Prediction,
    trace: Vec<Value>,
    timings: Vec<(usize, Duration)>,
    backend_calls: usize,
}

fn consensus_records(id: &str, steps: &[ConsensusStep]) -> Vec<Value> {
    let labels = |ids: &[EntityId]| ids.iter().map(|e| e.label()).collect::<Vec<_>>();
    steps
        .iter()
        .map(|s| {
            json!({
                "query": id,
                "step": s.index,
                "signature": s.signature,
                "agents": s.agent_outputs.iter().map(|a| labels(&a.entities)).collect::<Vec<_>>(),
                "output": labels(&s.aggregated.entities),
                "disagreement": s.disagreement,
                "cache_hit": s.cache_hit,
            })
        })
        .collect()
}

fn timings(trace: &ExecutionTrace) -> Vec<(usize, Duration)> {
    trace.steps.iter().map(|s| (s.index, s.wall_time)).collect()
}

fn run_query(q: &Query, ex: &Executor<'_>, backend: &dyn Answerer, cfg: &RunConfig) -> QueryRun {
    let mut prediction = Prediction {
        id: q.id.clone(),
        query_type: q.query_type.tag().to_string(),
        status: Status::Ok,
        answers: Vec::new(),
        error: None,
    };
    let plan = match compile(&q.ast) {
        Ok(p) => p,
        Err(e) => {
            prediction.status = Status::Failed;
            prediction.error = Some(e.to_string());
            return QueryRun {
                prediction,
                trace: Vec::new(),
                timings: Vec::new(),
                backend_calls: 0,
            };
        }
    };
    let (result, trace, timings, calls) = if cfg.consensus_agents > 1 {
        let agents = vec![backend; cfg.consensus_agents];
        let consensus = ConsensusConfig {
            agents: cfg.consensus_agents,
            threshold: cfg.consensus_threshold(),
            mode: cfg.consensus_mode,
        };
        match ex.consensus_execute(&plan, &agents, &consensus) {
            Ok(o) => {
                let calls = o
                    .agent_traces
                    .iter()
                    .map(ExecutionTrace::backend_calls)
                    .sum();
                let t = o.agent_traces.first().map(timings).unwrap_or_default();
                (Ok(o.answers), consensus_records(&q.id, &o.steps), t, calls)
            }
            Err(e) => {
                let (t, calls) = (timings(&e.partial), e.partial.backend_calls());
                (Err(e.to_string()), e.partial.to_records(&q.id), t, calls)
            }
        }
    } else {
        match ex.execute_plan(&plan, backend) {
            Ok(run) => (
                Ok(run.answers),
                run.trace.to_records(&q.id),
                timings(&run.trace),
                run.trace.backend_calls(),
            ),
            Err(e) => (
                Err(e.to_string()),
                e.partial.to_records(&q.id),
                timings(&e.partial),
                e.partial.backend_calls(),
            ),
        }
    };
    match result {
        Ok(answers) => prediction.answers = answers.entities,
        Err(msg) => {
            log::warn!("query {} failed: {msg}", q.id);
            prediction.status = Status::Failed;
            prediction.error = Some(msg);
        }
    }
    QueryRun {
        prediction,
        trace,
        timings,
        backend_calls: calls,
    }
}

pub fn run(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let split = files::load_split(cfg)?;
    let queries = files::load_queries(cfg)?;
    for q in &queries {
        q.ast
            .check_ids(&split.full)
            .with_context(|| format!("query {}", q.id))?;
    }
    let template = files::load_template(cfg)?;
    // Backend construction validates endpoint and script settings up front.
    let backend = build_backend(cfg, &split)?;
    let cache = StepCache::new();
    let mut ex = Executor::new(&split.observed, cfg.retrieval.clone(), &template);
    if cfg.cache {
        ex = ex.with_cache(&cache);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    let runs: Vec<QueryRun> = pool.install(|| {
        queries
            .par_iter()
            .map(|q| run_query(q, &ex, backend.as_ref(), cfg))
            .collect()
    });

    let failed = runs
        .iter()
        .filter(|r| r.prediction.status == Status::Failed)
        .count();
    let calls: usize = runs.iter().map(|r| r.backend_calls).sum();
    files::write(
        &files::out_file(cfg, files::PREDICTIONS)?,
        &files::jsonl(runs.iter().map(|r| &r.prediction)),
    )?;
    files::write(
        &files::out_file(cfg, files::TRACE)?,
        &files::jsonl(runs.iter().flat_map(|r| &r.trace)),
    )?;
    files::write(
        &files::out_file(cfg, files::TIMINGS)?,
        &files::jsonl(runs.iter().flat_map(|r| {
            r.timings.iter().map(|(step, t)| {
                json!({"query": r.prediction.id, "step": step, "wall_ms": t.as_secs_f64() * 1e3})
            })
        })),
    )?;
    let retrieval = &cfg.retrieval;
    let summary = json!({
        "dataset": cfg.dataset,
        "model": model_name(cfg),
        "backend": cfg.backend.name(),
        "entities": split.full.entity_count(),
        "template_hash": template.hash(),
        "queries": runs.len(),
        "failed": failed,
        "backend_calls": calls,
        "retrieval": {
            "k_hops": retrieval.k_hops,
            "max_triples": (retrieval.max_triples != usize::MAX).then_some(retrieval.max_triples),
            "relation_priority": retrieval.relation_priority,
            "expand_intermediates": retrieval.expand_intermediates,
        },
        "consensus": {
            "agents": cfg.consensus_agents,
            "threshold": cfg.consensus_threshold(),
        },
        "seed": cfg.seed,
    });
    files::write(
        &files::out_file(cfg, files::RUN_SUMMARY)?,
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    writeln!(
        out,
        "{} queries, {failed} failed, {calls} backend calls",
        runs.len()
    )?;
    Ok(if failed > 0 {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let answers = files::load_answers(cfg)?;
    let predictions = files::load_predictions(cfg)?;
    let summary = files::load_summary(cfg)?;
    let entity_count = summary["entities"]
        .as_u64()
        .ok_or_else(|| anyhow!("run summary lacks an entity count"))?
        as usize;
    let model = summary["model"]
        .as_str()
        .unwrap_or(cfg.backend.name())
        .to_string();

    let predicted: BTreeSet<&str> = predictions.iter().map(|p| p.id.as_str()).collect();
    if predicted.len() != predictions.len() {
        bail!("duplicate ids in {}", files::PREDICTIONS);
    }
    if let Some(id) = predicted.iter().find(|id| !answers.contains_key(**id)) {
        bail!("prediction {id} has no answer record");
    }
    if let Some(id) = answers.keys().find(|id| !predicted.contains(id.as_str())) {
        bail!("answer record {id} has no prediction");
    }

    let mut builder = ReportBuilder::default();
    for p in &predictions {
        let qt: QueryType = p.query_type.parse()?;
        let rec = &answers[&p.id];
        let records = rank_query(&p.id, &p.answers, &rec.easy, &rec.hard, entity_count)
            .with_context(|| format!("prediction {}", p.id))?;
        builder.add_query(
            &cfg.dataset,
            &model,
            qt,
            records,
            p.status == Status::Failed,
        );
    }
    let report = builder.finish(cfg.absent);
    let mut text = String::new();
    for layout in [Layout::Typical, Layout::Negation] {
        if report.has_any(layout) {
            if !text.is_empty() {
                text.push('\n');
            }
            text += &render_table(&report, layout);
        }
    }
    files::write(&files::out_file(cfg, files::REPORT_TEXT)?, &text)?;
    files::write(
        &files::out_file(cfg, files::REPORT_RECORDS)?,
        &files::jsonl(report.records()),
    )?;
    write!(out, "{text}")?;
    Ok(Outcome::Success)
}
