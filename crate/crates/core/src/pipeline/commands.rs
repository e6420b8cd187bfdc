use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};

use super::*;
use crate::embedding::{CatalogStore, PersonaRecord, PersonaSet};
use crate::metrics::{mean_percentile, top_k, MetricReport, RetrievalResult};
use crate::tournament::{label_set, read_labels, seed_bracket, LabelSetOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub split: Split,
    pub labels_path: PathBuf,
    pub entrants: usize,
    pub labelled: usize,
    pub ran: usize,
    pub skipped: usize,
    pub comparisons: usize,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBudget {
    pub split: Split,
    pub personas: usize,
    pub already_labelled: usize,
    pub entrants: usize,
    pub byes: usize,
    pub comparisons_per_persona: usize,
    pub comparisons: usize,
}

fn label_inputs(config: &RunConfig, split: Split) -> Result<(PathBuf, Vec<String>, PersonaSet, usize), PipelineError> {
    let labels_path = config
        .labels_path(split)
        .ok_or_else(|| PipelineError::Config(format!("paths.labels_{} is not set", split.name())))?
        .to_path_buf();
    let catalog = load_catalog(config)?;
    let personas = load_personas(config, split, catalog.dim())?;
    let mut entrants = catalog.ids().to_vec();
    if let Some(n) = config.label.entrants {
        if n < 2 || n > entrants.len() {
            return Err(PipelineError::Config(format!(
                "label.entrants must lie in 2..={}, got {n}",
                entrants.len()
            )));
        }
        entrants.truncate(n);
    }
    Ok((labels_path, entrants, personas, catalog.dim()))
}

/// Comparison budget of a `label` run; calls no teacher and writes nothing.
pub fn dry_run_labels(config: &RunConfig, split: Option<Split>) -> Result<LabelBudget, PipelineError> {
    config.validate()?;
    let split = split.unwrap_or(config.label.split);
    let (labels_path, entrants, personas, _) = label_inputs(config, split)?;
    let done: std::collections::HashSet<String> = if labels_path.exists() {
        read_labels(&labels_path)?.into_iter().map(|l| l.persona_id).collect()
    } else {
        Default::default()
    };
    let pending = personas.records().iter().filter(|p| !done.contains(&p.id)).count();
    let n = entrants.len();
    Ok(LabelBudget {
        split,
        personas: personas.len(),
        already_labelled: personas.len() - pending,
        entrants: n,
        byes: seed_bracket(n).byes.len(),
        comparisons_per_persona: n - 1,
        comparisons: pending * (n - 1),
    })
}

/// Runs a tournament for every persona of the split that has no label yet.
pub fn label(config: &RunConfig, split: Option<Split>) -> Result<LabelReport, PipelineError> {
    config.validate()?;
    let split = split.unwrap_or(config.label.split);
    let (labels_path, entrants, personas, dim) = label_inputs(config, split)?;
    if let Some(parent) = labels_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let teacher = TeacherStack::build(config, dim)?;
    let options = LabelSetOptions {
        parallelism: config.label.parallelism,
        shuffle_seed: config.label.shuffle.then_some(config.seed),
        labels_path: labels_path.clone(),
        bracket_path: config
            .label
            .brackets
            .then(|| labels_path.with_extension("brackets.jsonl")),
    };
    let outcome = label_set(personas.records(), &entrants, teacher.teacher(), &options)?;
    info!(
        "labelled {} personas ({} already done), {} comparisons",
        outcome.ran, outcome.skipped, outcome.comparisons
    );
    Ok(LabelReport {
        split,
        labels_path,
        entrants: entrants.len(),
        labelled: outcome.labels.len(),
        ran: outcome.ran,
        skipped: outcome.skipped,
        comparisons: outcome.comparisons,
        cache_hits: teacher.cache_hits(),
    })
}

/// The best checkpoint if training produced one, else the latest, else the
/// initial student.
fn trained_student(config: &RunConfig) -> Result<(CatalogStore, String), PipelineError> {
    let out = &config.paths.output_dir;
    for name in [BEST_DIR, CHECKPOINT_DIR] {
        if let Some(dir) = find_checkpoint(&out.join(name)) {
            let store = CatalogStore::load(&dir.join(EMBEDDINGS_FILE))
                .map_err(|e| PipelineError::Invalid(format!("{}: {e}", dir.display())))?;
            return Ok((store, dir.display().to_string()));
        }
    }
    Ok((initial_student(config)?, "initial".to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub report_path: PathBuf,
    pub student: String,
}

/// Scores a label set against the trained student and writes the report.
pub fn eval(config: &RunConfig, split: Option<Split>) -> Result<EvalOutcome, PipelineError> {
    config.validate()?;
    let split = split.unwrap_or(config.eval.split);
    let labels_path = config
        .labels_path(split)
        .ok_or_else(|| PipelineError::Config(format!("paths.labels_{} is not set", split.name())))?;
    let labels =
        read_labels(labels_path).map_err(|e| PipelineError::Config(format!("{}: {e}", labels_path.display())))?;
    let (store, student) = trained_student(config)?;
    let personas = load_personas(config, split, store.dim())?;
    let report = mean_percentile(&labels, &store, &personas).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let out = &config.paths.output_dir;
    fs::create_dir_all(out)?;
    let report_path = out.join(format!("report_{}.json", split.name()));
    write_json_pretty(&report_path, &report)?;
    Ok(EvalOutcome {
        report,
        report_path,
        student,
    })
}

/// Finds a persona by id, or else by exact text, in any configured split.
pub fn resolve_persona(config: &RunConfig, query: &str, dim: usize) -> Result<PersonaRecord, PipelineError> {
    let mut sets = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        if config.personas_path(split).is_some() {
            sets.push(load_personas(config, split, dim)?);
        }
    }
    if let Some(p) = sets.iter().find_map(|s| s.get(query)) {
        return Ok(p.clone());
    }
    sets.iter()
        .flat_map(|s| s.records())
        .find(|p| p.text == query)
        .cloned()
        .ok_or_else(|| PipelineError::Invalid(format!("unknown persona `{query}`")))
}

/// Top-`k` catalog images for one persona under the trained student.
pub fn retrieve(config: &RunConfig, query: &str, k: usize) -> Result<RetrievalResult, PipelineError> {
    config.validate()?;
    let (store, _) = trained_student(config)?;
    let persona = resolve_persona(config, query, store.dim())?;
    let scores = store
        .score_all(&persona)
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    top_k(&scores, store.ids(), k).map_err(|e| PipelineError::Invalid(e.to_string()))
}
