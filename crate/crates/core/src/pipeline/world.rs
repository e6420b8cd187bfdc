use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::*;
use crate::embedding::{CatalogStore, PersonaRecord, PersonaSet};
use crate::optimizer::AdamWConfig;
use crate::sampler::SamplerConfig;

/// Shape of a synthetic world: a hidden-utility teacher plus persona and
/// catalog files it can be distilled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub dim: usize,
    pub train_personas: usize,
    pub val_personas: usize,
    pub test_personas: usize,
    pub images: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            train_personas: 200,
            val_personas: 20,
            test_personas: 20,
            images: 512,
            tau: 0.0,
            seed: 0,
        }
    }
}

fn write_personas(path: &Path, prefix: &str, n: usize, teacher: &SyntheticTeacher) -> Result<(), PipelineError> {
    let records = (0..n)
        .map(|i| {
            let id = format!("{prefix}{i:04}");
            let text = format!("synthetic persona {prefix}{i}");
            let v = teacher.persona_vector(&id);
            PersonaRecord::new(id, text, &v)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    PersonaSet::new(records)
        .and_then(|s| s.save(path))
        .map_err(|e| PipelineError::Invalid(e.to_string()))
}

/// Writes `catalog.bin`, the three persona files and a `config.json` that
/// trains a random-unit student against the world's own teacher. The persona
/// embeddings are the teacher's hidden persona vectors, so a perfect student
/// exists. Returns the config as loaded from disk.
pub fn write_world(dir: &Path, spec: &WorldSpec) -> Result<RunConfig, PipelineError> {
    if spec.dim < 2 || spec.images < 2 || spec.train_personas == 0 {
        return Err(PipelineError::Config(
            "world needs dim >= 2, images >= 2 and train personas".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let teacher = SyntheticTeacher::new(spec.dim, spec.tau, spec.seed);
    let ids: Vec<String> = (0..spec.images).map(|i| format!("img{i:05}")).collect();
    let mut stream = rng::substream(spec.seed, "catalog-import", 0);
    let catalog =
        CatalogStore::random_unit(ids, spec.dim, &mut stream).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    catalog
        .save(&dir.join("catalog.bin"))
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    write_personas(&dir.join("personas_train.jsonl"), "tr", spec.train_personas, &teacher)?;
    write_personas(&dir.join("personas_val.jsonl"), "va", spec.val_personas, &teacher)?;
    write_personas(&dir.join("personas_test.jsonl"), "te", spec.test_personas, &teacher)?;

    let config = RunConfig {
        paths: Paths {
            catalog: PathBuf::from("catalog.bin"),
            personas_train: Some(PathBuf::from("personas_train.jsonl")),
            personas_val: (spec.val_personas > 0).then(|| PathBuf::from("personas_val.jsonl")),
            personas_test: (spec.test_personas > 0).then(|| PathBuf::from("personas_test.jsonl")),
            labels_val: (spec.val_personas > 0).then(|| PathBuf::from("labels_val.jsonl")),
            labels_test: (spec.test_personas > 0).then(|| PathBuf::from("labels_test.jsonl")),
            teacher_cache: Some(PathBuf::from("teacher_cache.jsonl")),
            image_refs: None,
            output_dir: PathBuf::from("run"),
        },
        student_init: StudentInit {
            mode: InitMode::RandomUnit,
        },
        sampler: SamplerConfig::default(),
        optimizer: AdamWConfig::default(),
        teacher: TeacherConfig::Synthetic {
            hidden_dim: Some(spec.dim),
            tau: spec.tau,
            seed: Some(spec.seed),
        },
        eval: EvalConfig::default(),
        label: LabelConfig::default(),
        max_steps: 50,
        seed: spec.seed,
    };
    let path = dir.join("config.json");
    write_json_pretty(&path, &config)?;
    RunConfig::load(&path)
}
