//! Training, labelling, evaluation and retrieval driven by one config file.

mod commands;
mod config;
mod train;
mod world;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::{CatalogStore, PersonaSet};
use crate::rng;
use crate::teacher::{
    CachedTeacher, HttpTeacher, ReplayTeacher, SyntheticTeacher, Teacher, TeacherError, TeacherRanking, TeacherRequest,
};
use crate::tournament::TournamentError;

pub use commands::{dry_run_labels, eval, label, resolve_persona, retrieve, EvalOutcome, LabelBudget, LabelReport};
pub use config::{EvalConfig, InitMode, LabelConfig, Paths, RunConfig, Split, StudentInit, TeacherConfig};
pub use train::{dry_run, train, DryRunReport, StepRecord, TrainOptions, TrainOutcome, TrainState};
pub use world::{write_world, WorldSpec};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const BEST_DIR: &str = "best";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const STATE_FILE: &str = "train_state.json";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const RANKINGS_FILE: &str = "rankings.jsonl";
/// Present while a training run is interrupted and can be resumed.
pub const RESUME_MARKER: &str = "RESUMABLE";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("teacher failure{}: {source}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Teacher {
        step: Option<u64>,
        #[source]
        source: TeacherError,
    },
    #[error("step {step} aborted: {message} (rerun with --resume)")]
    Aborted { step: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Teacher { .. } => 3,
            PipelineError::Aborted { .. } => 4,
            PipelineError::Invalid(_) | PipelineError::Io(_) => 1,
        }
    }
}

impl From<TournamentError> for PipelineError {
    fn from(e: TournamentError) -> Self {
        match e {
            TournamentError::Teacher { source, .. } => PipelineError::Teacher { step: None, source },
            other => PipelineError::Invalid(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

/// The configured teacher, optionally behind the persistent cache.
pub struct TeacherStack {
    cached: Option<CachedTeacher<Box<dyn Teacher>>>,
    plain: Option<Box<dyn Teacher>>,
}

impl TeacherStack {
    pub fn build(config: &RunConfig, catalog_dim: usize) -> Result<Self, PipelineError> {
        let inner: Box<dyn Teacher> = match &config.teacher {
            TeacherConfig::Synthetic { hidden_dim, tau, seed } => Box::new(SyntheticTeacher::new(
                hidden_dim.unwrap_or(catalog_dim),
                *tau,
                seed.unwrap_or(config.seed),
            )),
            TeacherConfig::Http(h) => Box::new(HttpTeacher::new(h.clone()).map_err(config_err)?),
            TeacherConfig::Replay { log, teacher_id } => {
                Box::new(ReplayTeacher::open(log, teacher_id.as_deref()).map_err(config_err)?)
            }
        };
        let inner: Box<dyn Teacher> = match &config.paths.image_refs {
            Some(template) => Box::new(WithImageRefs {
                inner,
                template: template.clone(),
            }),
            None => inner,
        };
        Ok(match &config.paths.teacher_cache {
            Some(path) => {
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                let cached =
                    CachedTeacher::open(inner, path).map_err(|source| PipelineError::Teacher { step: None, source })?;
                if cached.corrupt_lines() > 0 {
                    log::warn!(
                        "teacher cache {}: ignored {} unreadable lines",
                        path.display(),
                        cached.corrupt_lines()
                    );
                }
                Self {
                    cached: Some(cached),
                    plain: None,
                }
            }
            None => Self {
                cached: None,
                plain: Some(inner),
            },
        })
    }

    pub fn teacher(&self) -> &dyn Teacher {
        match (&self.cached, &self.plain) {
            (Some(c), _) => c,
            (None, Some(p)) => p.as_ref(),
            (None, None) => unreachable!("teacher stack is never empty"),
        }
    }

    pub fn cache_hits(&self) -> u64 {
        self.cached.as_ref().map_or(0, |c| c.hits())
    }
}

/// Fills in image references from a per-id template.
struct WithImageRefs {
    inner: Box<dyn Teacher>,
    template: String,
}

impl Teacher for WithImageRefs {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        if !request.image_refs.is_empty() {
            return self.inner.rank(request);
        }
        let mut request = request.clone();
        request.image_refs = request
            .candidates
            .iter()
            .map(|id| self.template.replace("{id}", id))
            .collect();
        self.inner.rank(&request)
    }

    fn max_parallel(&self) -> usize {
        self.inner.max_parallel()
    }
}

pub(crate) fn load_catalog(config: &RunConfig) -> Result<CatalogStore, PipelineError> {
    CatalogStore::load(&config.paths.catalog)
        .map_err(|e| config_err(format!("{}: {e}", config.paths.catalog.display())))
}

/// The starting student: the imported catalog or seeded random unit rows.
pub(crate) fn initial_student(config: &RunConfig) -> Result<CatalogStore, PipelineError> {
    let catalog = load_catalog(config)?;
    match config.student_init.mode {
        InitMode::Import => Ok(catalog),
        InitMode::RandomUnit => {
            let mut stream = rng::substream(config.seed, rng::STREAM_INIT, 0);
            CatalogStore::random_unit(catalog.ids().to_vec(), catalog.dim(), &mut stream).map_err(config_err)
        }
    }
}

pub(crate) fn load_personas(config: &RunConfig, split: Split, dim: usize) -> Result<PersonaSet, PipelineError> {
    let path = config
        .personas_path(split)
        .ok_or_else(|| config_err(format!("paths.personas_{} is not set", split.name())))?;
    PersonaSet::load(path, Some(dim), config.seed).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Checkpoint directory that holds a complete save, if any. A save is
/// complete once its state file exists, since that is written last.
pub(crate) fn find_checkpoint(dir: &Path) -> Option<PathBuf> {
    [dir.to_path_buf(), sibling(dir, "tmp"), sibling(dir, "old")]
        .into_iter()
        .find(|d| d.join(STATE_FILE).is_file())
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    dir.with_file_name(name)
}

/// Fills a fresh directory through `write` and swaps it in for `dir`.
pub(crate) fn replace_dir<F>(dir: &Path, write: F) -> Result<(), PipelineError>
where
    F: FnOnce(&Path) -> Result<(), PipelineError>,
{
    let tmp = sibling(dir, "tmp");
    let old = sibling(dir, "old");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    write(&tmp)?;
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    if dir.exists() {
        fs::rename(dir, &old)?;
    }
    fs::rename(&tmp, dir)?;
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    Ok(())
}

pub(crate) fn remove_checkpoint_dirs(dir: &Path) -> Result<(), PipelineError> {
    for d in [dir.to_path_buf(), sibling(dir, "tmp"), sibling(dir, "old")] {
        if d.exists() {
            fs::remove_dir_all(&d)?;
        }
    }
    Ok(())
}

pub(crate) fn write_json_pretty<S: Serialize>(path: &Path, value: &S) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn append_jsonl<S: Serialize>(path: &Path, values: &[S]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v).map_err(|e| PipelineError::Invalid(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

/// Rewrites a JSON Lines file keeping only the parseable lines `keep` accepts.
pub(crate) fn filter_jsonl<T, F>(path: &Path, keep: F) -> Result<usize, PipelineError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> bool,
{
    if !path.exists() {
        return Ok(0);
    }
    let mut kept = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        match serde_json::from_str::<T>(&line) {
            Ok(v) if keep(&v) => {
                kept.extend_from_slice(line.as_bytes());
                kept.push(b'\n');
            }
            _ => {}
        }
    }
    let n = kept.iter().filter(|&&b| b == b'\n').count();
    fs::write(path, kept)?;
    Ok(n)
}
