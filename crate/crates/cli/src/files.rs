use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use rog_core::config::RunConfig;
use rog_core::evidence::PromptTemplate;
use rog_core::kg::{parse_triple_lines, GraphSplit, RawTriple};
use rog_core::query::{parse_answer_record, parse_query_file, AnswerRecord, Query};
use rog_core::EntityId;

pub const PREDICTIONS: &str = "predictions.jsonl";
pub const TRACE: &str = "trace.jsonl";
pub const TIMINGS: &str = "timings.jsonl";
pub const RUN_SUMMARY: &str = "run.json";
pub const PLANS: &str = "plans.jsonl";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_RECORDS: &str = "report.jsonl";
pub const ABSTRACTION_MAP: &str = "abstraction.tsv";

pub fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_split(path: Option<&PathBuf>, split: &str) -> anyhow::Result<Vec<RawTriple>> {
    match path {
        Some(p) => {
            parse_triple_lines(&read(p)?, split).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(Vec::new()),
    }
}

pub fn load_split(cfg: &RunConfig) -> anyhow::Result<GraphSplit> {
    let train = cfg
        .train
        .as_ref()
        .ok_or_else(|| anyhow!("config key `train` is not set"))?;
    let train = read_split(Some(train), "train")?;
    let valid = read_split(cfg.valid.as_ref(), "valid")?;
    let test = read_split(cfg.test.as_ref(), "test")?;
    Ok(GraphSplit::from_raw(
        &train,
        &valid,
        &test,
        cfg.observe_valid,
    )?)
}

pub fn query_path(cfg: &RunConfig) -> PathBuf {
    cfg.query_file
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("queries.jsonl"))
}

pub fn answer_path(cfg: &RunConfig) -> PathBuf {
    cfg.answer_file
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("answers.jsonl"))
}

pub fn load_queries(cfg: &RunConfig) -> anyhow::Result<Vec<Query>> {
    let path = query_path(cfg);
    let queries = parse_query_file(&read(&path)?)
        .map_err(|(line, e)| anyhow!("{}:{line}: {e}", path.display()))?;
    if queries.is_empty() {
        bail!("{} contains no queries", path.display());
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = queries.iter().find(|q| !seen.insert(q.id.as_str())) {
        bail!("{}: duplicate query id {}", path.display(), dup.id);
    }
    Ok(queries)
}

pub fn load_answers(cfg: &RunConfig) -> anyhow::Result<BTreeMap<String, AnswerRecord>> {
    let path = answer_path(cfg);
    let mut out = BTreeMap::new();
    for (i, line) in read(&path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            parse_answer_record(line).map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        if out.contains_key(&rec.id) {
            bail!(
                "{}:{}: duplicate answer id {}",
                path.display(),
                i + 1,
                rec.id
            );
        }
        out.insert(rec.id.clone(), rec);
    }
    if out.is_empty() {
        bail!("{} contains no answer records", path.display());
    }
    Ok(out)
}

pub fn load_template(cfg: &RunConfig) -> anyhow::Result<PromptTemplate> {
    match &cfg.prompt_template {
        Some(p) => PromptTemplate::parse(&read(p)?).with_context(|| format!("in {}", p.display())),
        None => Ok(PromptTemplate::default()),
    }
}

pub fn out_file(cfg: &RunConfig, name: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg.out_dir.join(name))
}

pub fn write(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    records
        .into_iter()
        .map(|r| serde_json::to_string(&r).expect("records serialize") + "\n")
        .collect()
}

/// One line of the predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(rename = "type")]
    pub query_type: String,
    pub status: Status,
    pub answers: Vec<EntityId>,
    pub error: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

pub fn load_predictions(cfg: &RunConfig) -> anyhow::Result<Vec<Prediction>> {
    let path = cfg.out_dir.join(PREDICTIONS);
    read(&path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

pub fn load_summary(cfg: &RunConfig) -> anyhow::Result<Value> {
    let path = cfg.out_dir.join(RUN_SUMMARY);
    serde_json::from_str(&read(&path)?).with_context(|| format!("in {}", path.display()))
}
