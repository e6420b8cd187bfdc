use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::optimizer::AdamWConfig;
use crate::sampler::SamplerConfig;
use crate::teacher::HttpTeacherConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// `PDE1` catalog file; supplies the ids, the dimension and (for
    /// `import` init) the starting student.
    pub catalog: PathBuf,
    #[serde(default)]
    pub personas_train: Option<PathBuf>,
    #[serde(default)]
    pub personas_val: Option<PathBuf>,
    #[serde(default)]
    pub personas_test: Option<PathBuf>,
    #[serde(default)]
    pub labels_val: Option<PathBuf>,
    #[serde(default)]
    pub labels_test: Option<PathBuf>,
    /// Append-only teacher cache shared by `train` and `label`.
    #[serde(default)]
    pub teacher_cache: Option<PathBuf>,
    /// Image reference handed to the teacher, with `{id}` replaced by the
    /// image id, e.g. `/data/images/{id}.jpg`. Unset means the bare id.
    #[serde(default)]
    pub image_refs: Option<String>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Start from the vectors stored in the catalog file.
    #[default]
    Import,
    /// Replace every row with a seeded random unit vector.
    RandomUnit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentInit {
    #[serde(default)]
    pub mode: InitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TeacherConfig {
    /// Hidden-utility teacher; `hidden_dim` defaults to the catalog dimension
    /// and `seed` to the run seed.
    Synthetic {
        #[serde(default)]
        hidden_dim: Option<usize>,
        #[serde(default)]
        tau: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Http(HttpTeacherConfig),
    /// Serves answers from a recorded ranking log only.
    Replay {
        log: PathBuf,
        #[serde(default)]
        teacher_id: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    #[default]
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

fn default_cadence() -> u64 {
    1
}
fn default_patience() -> u32 {
    5
}
fn test_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Validate every `cadence` optimizer steps.
    #[serde(default = "default_cadence")]
    pub cadence: u64,
    /// Validation rounds without improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: u32,
    /// Split scored by the `eval` command.
    #[serde(default = "test_split")]
    pub split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cadence: default_cadence(),
            patience: default_patience(),
            split: test_split(),
        }
    }
}

fn default_label_parallelism() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    #[serde(default)]
    pub split: Split,
    /// Use only the first `entrants` catalog images as tournament entrants.
    #[serde(default)]
    pub entrants: Option<usize>,
    /// Shuffle each persona's bracket with a seed derived from the run seed.
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default = "default_label_parallelism")]
    pub parallelism: usize,
    /// Also write the full bracket of every tournament.
    #[serde(default)]
    pub brackets: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            split: Split::Val,
            entrants: None,
            shuffle: false,
            parallelism: default_label_parallelism(),
            brackets: false,
        }
    }
}

fn default_max_steps() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub student_init: StudentInit,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub label: LabelConfig,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.catalog);
        resolve(base, &mut p.output_dir);
        for opt in [
            &mut p.personas_train,
            &mut p.personas_val,
            &mut p.personas_test,
            &mut p.labels_val,
            &mut p.labels_test,
            &mut p.teacher_cache,
        ] {
            if let Some(path) = opt.as_mut() {
                resolve(base, path);
            }
        }
        if let TeacherConfig::Replay { log, .. } = &mut self.teacher {
            resolve(base, log);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.sampler
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.eval.cadence == 0 {
            return Err(PipelineError::Config("eval.cadence must be at least 1".into()));
        }
        if self.label.parallelism == 0 {
            return Err(PipelineError::Config("label.parallelism must be at least 1".into()));
        }
        match &self.teacher {
            TeacherConfig::Synthetic { hidden_dim, tau, .. } => {
                if !(*tau >= 0.0 && tau.is_finite()) {
                    return Err(PipelineError::Config(
                        "teacher.tau must be finite and non-negative".into(),
                    ));
                }
                if matches!(hidden_dim, Some(d) if *d < 2) {
                    return Err(PipelineError::Config("teacher.hidden_dim must be at least 2".into()));
                }
            }
            TeacherConfig::Http(h) => {
                if h.url.is_empty() || h.max_parallel == 0 {
                    return Err(PipelineError::Config(
                        "teacher.url must be set and max_parallel positive".into(),
                    ));
                }
                if !h.prompt_template.contains("{candidates}") {
                    return Err(PipelineError::Config(
                        "prompt_template must contain {candidates}".into(),
                    ));
                }
            }
            TeacherConfig::Replay { .. } => {}
        }
        Ok(())
    }

    pub fn personas_path(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => self.paths.personas_train.as_deref(),
            Split::Val => self.paths.personas_val.as_deref(),
            Split::Test => self.paths.personas_test.as_deref(),
        }
    }

    pub fn labels_path(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => None,
            Split::Val => self.paths.labels_val.as_deref(),
            Split::Test => self.paths.labels_test.as_deref(),
        }
    }
}
