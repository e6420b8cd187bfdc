//! AdamW over the raw catalog rows with gradient accumulation, a per-step
//! exponential learning-rate decay, and patience-based early stopping.
//!
//! ```text
//! lr_t   = lr0 · decay^t                      (t = completed steps)
//! m      = β1·m + (1-β1)·g
//! v      = β2·v + (1-β2)·g²
//! θ     -= lr_t·λ·θ + lr_t · m̂ / (√v̂ + ε)     (m̂, v̂ bias-corrected with t+1)
//! ```
//!
//! Moments live only for rows that have received a gradient. Each step
//! updates every such row, which matches dense AdamW because untouched rows
//! have zero moments. Parameters and moments are rounded onto the f32 grid
//! after every step so that checkpoints reproduce the state exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::{self, to_f32_grid, FormatError, Header, OPTIMIZER_MAGIC};
use crate::embedding::{CatalogStore, EmbeddingError};
use crate::loss::SparseGradient;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("gradient row {row} has dimension {found}, expected {expected}")]
    ShapeMismatch { row: usize, expected: usize, found: usize },
    #[error("gradient row {row} is outside the catalog of {count} rows")]
    RowOutOfRange { row: usize, count: usize },
    #[error("optimizer step requested after {done} of {required} accumulation steps")]
    PrematureStep { done: u32, required: u32 },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn default_lr0() -> f64 {
    1e-6
}
fn default_decay() -> f64 {
    0.95
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_accumulation() -> u32 {
    10
}
fn default_micro_batch() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_accumulation")]
    pub accumulation_steps: u32,
    /// Nominal groups per micro-batch; reported by dry runs.
    #[serde(default = "default_micro_batch")]
    pub micro_batch: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr0: default_lr0(),
            decay: default_decay(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
            accumulation_steps: default_accumulation(),
            micro_batch: default_micro_batch(),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.accumulation_steps == 0 || self.micro_batch == 0 {
            return bad("accumulation_steps and micro_batch must be at least 1");
        }
        Ok(())
    }
}

/// Learning rate for the step that follows `t` completed steps.
pub fn lr_at(t: u64, config: &AdamWConfig) -> f64 {
    config.lr0 * config.decay.powi(t.min(i32::MAX as u64) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    dim: usize,
    pub m: BTreeMap<usize, Vec<f64>>,
    pub v: BTreeMap<usize, Vec<f64>>,
    /// Completed optimizer steps.
    pub t: u64,
    pub buffer: SparseGradient,
    pub micro_steps: u32,
}

impl AdamWState {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            buffer: SparseGradient::default(),
            micro_steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds one micro-batch gradient into the buffer.
    pub fn accumulate(&mut self, grad: &SparseGradient) -> Result<(), OptimizerError> {
        for (&row, g) in &grad.rows {
            if g.len() != self.dim {
                return Err(OptimizerError::ShapeMismatch {
                    row,
                    expected: self.dim,
                    found: g.len(),
                });
            }
        }
        for (&row, g) in &grad.rows {
            self.buffer.add_row(row, g);
        }
        self.micro_steps += 1;
        Ok(())
    }

    /// Applies one AdamW update from the accumulated buffer. Fails with
    /// `PrematureStep` unless the accumulation is complete or `flush` is set.
    pub fn apply_step(
        &mut self,
        store: &mut CatalogStore,
        config: &AdamWConfig,
        flush: bool,
    ) -> Result<f64, OptimizerError> {
        if !flush && self.micro_steps < config.accumulation_steps {
            return Err(OptimizerError::PrematureStep {
                done: self.micro_steps,
                required: config.accumulation_steps,
            });
        }
        if store.dim() != self.dim {
            return Err(OptimizerError::ShapeMismatch {
                row: 0,
                expected: self.dim,
                found: store.dim(),
            });
        }
        if let Some((&row, _)) = self.buffer.rows.range(store.len()..).next() {
            return Err(OptimizerError::RowOutOfRange {
                row,
                count: store.len(),
            });
        }

        let lr = lr_at(self.t, config);
        let step = (self.t + 1) as i32;
        let bc1 = 1.0 - config.beta1.powi(step);
        let bc2 = 1.0 - config.beta2.powi(step);
        let dim = self.dim;

        let buffer = std::mem::take(&mut self.buffer);
        for &row in buffer.rows.keys() {
            self.m.entry(row).or_insert_with(|| vec![0.0; dim]);
            self.v.entry(row).or_insert_with(|| vec![0.0; dim]);
        }

        let mut updated: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&row, m) in self.m.iter_mut() {
            let v = self.v.get_mut(&row).expect("m and v share rows");
            let g = buffer.get(row);
            let theta = store.raw_row(row);
            let mut next = Vec::with_capacity(dim);
            for d in 0..dim {
                let gd = g.map_or(0.0, |g| g[d]);
                m[d] = to_f32_grid(config.beta1 * m[d] + (1.0 - config.beta1) * gd);
                v[d] = to_f32_grid(config.beta2 * v[d] + (1.0 - config.beta2) * gd * gd);
                let m_hat = m[d] / bc1;
                let v_hat = v[d] / bc2;
                let decayed = theta[d] - lr * config.weight_decay * theta[d];
                next.push(decayed - lr * m_hat / (v_hat.sqrt() + config.eps));
            }
            updated.insert(row, next);
        }
        if config.weight_decay > 0.0 {
            for row in 0..store.len() {
                if updated.contains_key(&row) {
                    continue;
                }
                let theta = store.raw_row(row);
                let next: Vec<f64> = theta.iter().map(|&x| x - lr * config.weight_decay * x).collect();
                updated.insert(row, next);
            }
        }
        for (row, mut next) in updated {
            for x in next.iter_mut() {
                *x = to_f32_grid(*x);
            }
            store.set_raw_row(row, &next)?;
        }
        self.micro_steps = 0;
        self.t += 1;
        Ok(lr)
    }

    /// Serializes the moments as two dense `count × dim` matrices followed by
    /// the u64 step counter.
    pub fn to_bytes(&self, count: usize) -> Result<Vec<u8>, OptimizerError> {
        let header = Header { count, dim: self.dim };
        let mut out = Vec::with_capacity(12 + 2 * count * self.dim * 4 + 8);
        binfmt::write_header(&mut out, OPTIMIZER_MAGIC, header)?;
        for moments in [&self.m, &self.v] {
            let mut dense = vec![0.0; count * self.dim];
            for (&row, vals) in moments {
                if row >= count {
                    return Err(OptimizerError::RowOutOfRange { row, count });
                }
                dense[row * self.dim..(row + 1) * self.dim].copy_from_slice(vals);
            }
            binfmt::write_matrix(&mut out, &dense)?;
        }
        out.extend_from_slice(&self.t.to_le_bytes());
        Ok(out)
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Rows whose moments are all
    /// zero are left out; they behave identically to untouched rows.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), OptimizerError> {
        let mut r = binfmt::Reader::new(bytes);
        let header = r.header(OPTIMIZER_MAGIC)?;
        let m_dense = r.matrix(header)?;
        let v_dense = r.matrix(header)?;
        let t = r.u64()?;
        r.finish()?;
        let mut state = Self::new(header.dim);
        state.t = t;
        for row in 0..header.count {
            let span = row * header.dim..(row + 1) * header.dim;
            let (m, v) = (&m_dense[span.clone()], &v_dense[span]);
            if m.iter().chain(v).any(|&x| x != 0.0) {
                state.m.insert(row, m.to_vec());
                state.v.insert(row, v.to_vec());
            }
        }
        Ok((state, header.count))
    }

    pub fn save(&self, path: &Path, count: usize) -> Result<(), OptimizerError> {
        fs::write(path, self.to_bytes(count)?).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, usize), OptimizerError> {
        let bytes = fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

fn default_patience() -> u32 {
    5
}

/// Maximizing early stopper. A metric must strictly exceed the best seen so
/// far to count as an improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    #[serde(default = "default_patience")]
    pub patience: u32,
    pub best_metric: Option<f64>,
    /// Tag (optimizer step) at which the best metric was observed.
    pub best_tag: Option<u64>,
    pub steps_since_best: u32,
}

impl EarlyStopper {
    pub fn new(patience: u32) -> Self {
        Self {
            patience,
            best_metric: None,
            best_tag: None,
            steps_since_best: 0,
        }
    }

    /// Returns whether `metric` is a new best, and whether to stop.
    pub fn update(&mut self, metric: f64, tag: u64) -> (bool, StopDecision) {
        let improved = match self.best_metric {
            None => true,
            Some(best) => metric > best,
        };
        if improved {
            self.best_metric = Some(metric);
            self.best_tag = Some(tag);
            self.steps_since_best = 0;
        } else {
            self.steps_since_best += 1;
        }
        let decision = if self.steps_since_best >= self.patience && !improved {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        (improved, decision)
    }
}
