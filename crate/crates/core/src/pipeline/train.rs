use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::*;
use crate::embedding::{CatalogStore, PersonaSet};
use crate::loss::{batch_loss_grad, RankedGroup};
use crate::metrics::mean_percentile;
use crate::optimizer::{AdamWState, EarlyStopper, StopDecision};
use crate::sampler::sample_step;
use crate::teacher::{rank_many, TeacherRequest};
use crate::tournament::{read_labels, LabelRecord};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: bool,
    /// Return after this many steps in the current process without marking
    /// the run finished, as if it had been killed there.
    pub halt_after: Option<u64>,
    /// Checked between steps; once set, training saves and returns
    /// `Aborted` so the run can be resumed.
    pub interrupt: Option<Arc<AtomicBool>>,
}

/// `train_state.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
    /// Sampling substream name; the next step draws from index `step`.
    pub rng_stream: String,
    pub early_stop: EarlyStopper,
    pub initial_metric: Option<f64>,
    pub last_metric: Option<f64>,
    /// Ranking requests issued so far, cache hits included.
    pub teacher_calls: u64,
    pub stopped: bool,
    pub stop_reason: Option<String>,
}

/// One line of `run_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based index of the optimizer step.
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub groups: usize,
    pub micro_batches: usize,
    /// Cumulative ranking requests.
    pub teacher_calls: u64,
    /// Requests of this step answered from the cache.
    pub cache_hits: u64,
    pub val_metric: Option<f64>,
    pub improved: bool,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Records written by this call.
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub best: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DryRunReport {
    pub catalog_size: usize,
    pub dim: usize,
    pub train_personas: usize,
    pub validation_personas: Option<usize>,
    pub validation_labels: Option<usize>,
    pub teacher: String,
    pub groups_per_step: usize,
    pub group_size: usize,
    pub teacher_calls_per_step: usize,
    pub accumulation_steps: u32,
    pub micro_batches_per_step: usize,
    pub groups_per_micro_batch: usize,
    pub nominal_micro_batch: usize,
    pub max_steps: u64,
    pub max_teacher_calls: u64,
}

/// Groups per micro-batch when a step's groups are spread over the
/// configured accumulation steps.
fn micro_batch_len(groups: usize, accumulation: u32) -> usize {
    groups.div_ceil(accumulation.max(1) as usize).max(1)
}

struct Validation {
    personas: PersonaSet,
    labels: Vec<LabelRecord>,
}

fn load_validation(config: &RunConfig, dim: usize) -> Result<Option<Validation>, PipelineError> {
    let Some(labels_path) = config.labels_path(Split::Val) else {
        return Ok(None);
    };
    if !labels_path.is_file() {
        return Err(PipelineError::Config(format!(
            "validation labels {} not found; run `label` first",
            labels_path.display()
        )));
    }
    let personas = load_personas(config, Split::Val, dim)?;
    let labels = read_labels(labels_path).map_err(|e| PipelineError::Config(e.to_string()))?;
    if labels.is_empty() {
        return Err(PipelineError::Config(format!(
            "{} holds no labels",
            labels_path.display()
        )));
    }
    Ok(Some(Validation { personas, labels }))
}

fn teacher_kind(config: &RunConfig) -> String {
    match &config.teacher {
        TeacherConfig::Synthetic { tau, .. } => format!("synthetic (tau {tau})"),
        TeacherConfig::Http(h) => format!("http {}", h.url),
        TeacherConfig::Replay { log, .. } => format!("replay {}", log.display()),
    }
}

/// Validates the config and inputs and reports the per-step budget. Touches
/// no teacher and writes nothing.
pub fn dry_run(config: &RunConfig) -> Result<DryRunReport, PipelineError> {
    config.validate()?;
    let store = initial_student(config)?;
    let train = load_personas(config, Split::Train, store.dim())?;
    let validation = load_validation(config, store.dim())?;
    let groups = config.sampler.groups_for(train.len());
    let per_micro = micro_batch_len(groups, config.optimizer.accumulation_steps);
    Ok(DryRunReport {
        catalog_size: store.len(),
        dim: store.dim(),
        train_personas: train.len(),
        validation_personas: validation.as_ref().map(|v| v.personas.len()),
        validation_labels: validation.as_ref().map(|v| v.labels.len()),
        teacher: teacher_kind(config),
        groups_per_step: groups,
        group_size: config.sampler.group_size,
        teacher_calls_per_step: groups,
        accumulation_steps: config.optimizer.accumulation_steps,
        micro_batches_per_step: groups.div_ceil(per_micro),
        groups_per_micro_batch: per_micro,
        nominal_micro_batch: config.optimizer.micro_batch,
        max_steps: config.max_steps,
        max_teacher_calls: config.max_steps * groups as u64,
    })
}

fn save_checkpoint(
    dir: &Path,
    store: &CatalogStore,
    opt: &AdamWState,
    state: &TrainState,
) -> Result<(), PipelineError> {
    replace_dir(dir, |tmp| {
        store
            .save(&tmp.join(EMBEDDINGS_FILE))
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        opt.save(&tmp.join(OPTIMIZER_FILE), store.len())
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        write_json_pretty(&tmp.join(STATE_FILE), state)
    })
}

fn load_checkpoint(
    dir: &Path,
    catalog_ids: &[String],
) -> Result<(CatalogStore, AdamWState, TrainState), PipelineError> {
    let bad = |e: String| PipelineError::Invalid(format!("checkpoint {}: {e}", dir.display()));
    let store = CatalogStore::load(&dir.join(EMBEDDINGS_FILE)).map_err(|e| bad(e.to_string()))?;
    if store.ids() != catalog_ids {
        return Err(bad("image ids differ from the configured catalog".into()));
    }
    let (opt, count) = AdamWState::load(&dir.join(OPTIMIZER_FILE)).map_err(|e| bad(e.to_string()))?;
    if count != store.len() || opt.dim() != store.dim() {
        return Err(bad("optimizer state shape does not match the embeddings".into()));
    }
    let state: TrainState = read_json(&dir.join(STATE_FILE))?;
    Ok((store, opt, state))
}

struct Run<'a> {
    config: &'a RunConfig,
    out: PathBuf,
    train: PersonaSet,
    validation: Option<Validation>,
    teacher: TeacherStack,
    store: CatalogStore,
    opt: AdamWState,
    state: TrainState,
}

impl Run<'_> {
    fn validate_now(&self) -> Result<Option<f64>, PipelineError> {
        match &self.validation {
            Some(v) => mean_percentile(&v.labels, &self.store, &v.personas)
                .map(|r| Some(r.mean))
                .map_err(|e| PipelineError::Invalid(format!("validation: {e}"))),
            None => Ok(None),
        }
    }

    fn save_best(&self) -> Result<(), PipelineError> {
        save_checkpoint(&self.out.join(BEST_DIR), &self.store, &self.opt, &self.state)
    }

    fn abort(&self, step: u64, e: impl std::fmt::Display) -> PipelineError {
        PipelineError::Aborted {
            step,
            message: e.to_string(),
        }
    }

    /// Runs optimizer step `state.step`; on error nothing of it is persisted.
    fn step(&mut self) -> Result<StepRecord, PipelineError> {
        let k = self.state.step;
        let started = Instant::now();
        let hits_before = self.teacher.cache_hits();

        let mut stream = rng::substream(self.config.seed, &self.state.rng_stream, k);
        let records = self.train.records();
        let groups =
            sample_step(records, &self.store, &self.config.sampler, &mut stream).map_err(|e| self.abort(k, e))?;

        let ids = self.store.ids();
        let requests: Vec<TeacherRequest> = groups
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let p = &records[g.persona];
                let candidates = g.rows.iter().map(|&r| ids[r].clone()).collect();
                TeacherRequest::new(p.id.clone(), p.text.clone(), candidates).with_step(k, gi as u64)
            })
            .collect();
        let teacher = self.teacher.teacher();
        let answers = rank_many(teacher, &requests, teacher.max_parallel());
        let mut ranked = Vec::with_capacity(answers.len());
        for (req, answer) in requests.into_iter().zip(answers) {
            let answer = answer.map_err(|source| PipelineError::Teacher { step: Some(k), source })?;
            ranked.push(RankedGroup {
                persona_id: req.persona_id,
                candidates: req.candidates,
                ranking: answer.ranking,
                teacher: answer.teacher_id,
                step: k,
            });
        }

        let per_micro = micro_batch_len(ranked.len(), self.config.optimizer.accumulation_steps);
        let mut loss = 0.0;
        let mut micro_batches = 0;
        for chunk in ranked.chunks(per_micro) {
            let batch = batch_loss_grad(chunk, &self.train, &self.store).map_err(|e| self.abort(k, e))?;
            loss += batch.loss;
            self.opt.accumulate(&batch.grad).map_err(|e| self.abort(k, e))?;
            micro_batches += 1;
        }
        let lr = self
            .opt
            .apply_step(&mut self.store, &self.config.optimizer, true)
            .map_err(|e| self.abort(k, e))?;
        self.store.refresh();

        self.state.step = k + 1;
        self.state.teacher_calls += ranked.len() as u64;
        let mut improved = false;
        let mut val_metric = None;
        if self.state.step.is_multiple_of(self.config.eval.cadence) {
            val_metric = self.validate_now()?;
            if let Some(m) = val_metric {
                self.state.last_metric = Some(m);
                let (better, decision) = self.state.early_stop.update(m, self.state.step);
                improved = better;
                if decision == StopDecision::Stop {
                    self.state.stopped = true;
                    self.state.stop_reason = Some("early-stop".into());
                }
            }
        }
        if !self.state.stopped && self.state.step >= self.config.max_steps {
            self.state.stopped = true;
            self.state.stop_reason = Some("max-steps".into());
        }

        let record = StepRecord {
            step: k,
            loss: loss / ranked.len().max(1) as f64,
            lr,
            groups: ranked.len(),
            micro_batches,
            teacher_calls: self.state.teacher_calls,
            cache_hits: self.teacher.cache_hits() - hits_before,
            val_metric,
            improved,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        append_jsonl(&self.out.join(RANKINGS_FILE), &ranked)?;
        if improved {
            self.save_best()?;
        }
        append_jsonl(&self.out.join(RUN_LOG_FILE), std::slice::from_ref(&record))?;
        save_checkpoint(&self.out.join(CHECKPOINT_DIR), &self.store, &self.opt, &self.state)?;
        Ok(record)
    }
}

fn write_marker(path: &Path, step: u64, e: &PipelineError) -> Result<(), PipelineError> {
    let note = serde_json::json!({"step": step, "error": e.to_string()});
    fs::write(path, format!("{note}\n"))?;
    Ok(())
}

/// Trains until early stop or `max_steps`, checkpointing after every step.
pub fn train(config: &RunConfig, options: &TrainOptions) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let catalog = load_catalog(config)?;
    let dim = catalog.dim();
    let train = load_personas(config, Split::Train, dim)?;
    let validation = load_validation(config, dim)?;
    let teacher = TeacherStack::build(config, dim)?;

    let out = config.paths.output_dir.clone();
    fs::create_dir_all(&out)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let existing = if options.resume {
        find_checkpoint(&ckpt_dir)
    } else {
        None
    };
    if options.resume && existing.is_none() {
        warn!("no checkpoint under {}; starting from scratch", out.display());
    }

    let fresh_state = || TrainState {
        step: 0,
        seed: config.seed,
        rng_stream: rng::STREAM_SAMPLING.to_string(),
        early_stop: EarlyStopper::new(config.eval.patience),
        initial_metric: None,
        last_metric: None,
        teacher_calls: 0,
        stopped: false,
        stop_reason: None,
    };

    let mut run = match existing {
        Some(dir) => {
            let (store, opt, state) = load_checkpoint(&dir, catalog.ids())?;
            if state.seed != config.seed {
                return Err(PipelineError::Config(format!(
                    "checkpoint was trained with seed {}, config has {}",
                    state.seed, config.seed
                )));
            }
            let done = state.step;
            filter_jsonl::<StepRecord, _>(&out.join(RUN_LOG_FILE), |r| r.step < done)?;
            filter_jsonl::<RankedGroup, _>(&out.join(RANKINGS_FILE), |r| r.step < done)?;
            info!("resuming from {} at step {done}", dir.display());
            if dir != ckpt_dir {
                save_checkpoint(&ckpt_dir, &store, &opt, &state)?;
            }
            Run {
                config,
                out: out.clone(),
                train,
                validation,
                teacher,
                store,
                opt,
                state,
            }
        }
        None => {
            remove_checkpoint_dirs(&ckpt_dir)?;
            remove_checkpoint_dirs(&out.join(BEST_DIR))?;
            for f in [RUN_LOG_FILE, RANKINGS_FILE] {
                let p = out.join(f);
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
            let store = initial_student(config)?;
            let mut run = Run {
                config,
                out: out.clone(),
                train,
                validation,
                opt: AdamWState::new(dim),
                store,
                teacher,
                state: fresh_state(),
            };
            if let Some(m) = run.validate_now()? {
                info!("initial validation mean percentile {m:.3}");
                run.state.initial_metric = Some(m);
                run.state.last_metric = Some(m);
                run.state.early_stop.update(m, 0);
                run.save_best()?;
            }
            if config.max_steps == 0 {
                run.state.stopped = true;
                run.state.stop_reason = Some("max-steps".into());
            }
            save_checkpoint(&ckpt_dir, &run.store, &run.opt, &run.state)?;
            run
        }
    };

    let marker = out.join(RESUME_MARKER);
    let mut records = Vec::new();
    let mut ran = 0u64;
    while !run.state.stopped && run.state.step < config.max_steps {
        if options.halt_after.is_some_and(|h| ran >= h) {
            break;
        }
        if options.interrupt.as_ref().is_some_and(|f| f.load(Ordering::SeqCst)) {
            let e = run.abort(run.state.step, "interrupted");
            write_marker(&marker, run.state.step, &e)?;
            return Err(e);
        }
        match run.step() {
            Ok(record) => {
                info!(
                    "step {} loss {:.6} lr {:.3e} calls {} hits {}{}",
                    record.step,
                    record.loss,
                    record.lr,
                    record.teacher_calls,
                    record.cache_hits,
                    record.val_metric.map(|m| format!(" val {m:.3}")).unwrap_or_default()
                );
                records.push(record);
                ran += 1;
            }
            Err(e) => {
                write_marker(&marker, run.state.step, &e)?;
                return Err(e);
            }
        }
    }
    if run.state.stopped && marker.exists() {
        fs::remove_file(&marker)?;
    }
    if let Some(reason) = &run.state.stop_reason {
        info!("stopped after {} steps ({reason})", run.state.step);
    }
    let best = out.join(BEST_DIR);
    Ok(TrainOutcome {
        state: run.state,
        records,
        checkpoint: ckpt_dir,
        best: find_checkpoint(&best).map(|_| best),
    })
}
