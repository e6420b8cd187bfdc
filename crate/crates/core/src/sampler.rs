//! Preference-aligned candidate sampling.
//!
//! For each persona the current student scores the whole catalog; the score
//! range `[a, b]` is cut into contiguous bins and every candidate group mixes
//! draws from each bin, so the teacher always sees a few strong matches next
//! to clear distractors.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{CatalogStore, EmbeddingError, PersonaRecord, ScoreVector};

/// Score ranges narrower than this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("catalog of {catalog} images cannot fill a group of {group}")]
    CatalogTooSmall { catalog: usize, group: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("empty persona pool")]
    NoPersonas,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// How the configured cut coefficients map onto the score range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinMode {
    /// Cut `k` sits at `a + c_k (b - a)`.
    Mirrored,
    /// Cut `k` sits at `c_k a + (1 - c_k) b`, i.e. at fraction `1 - c_k`;
    /// the cuts are then sorted ascending.
    LiteralSorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPolicy {
    PreferenceAligned,
    Uniform,
}

fn default_cuts() -> Vec<f64> {
    vec![0.7, 0.9, 0.95]
}
fn default_mode() -> BinMode {
    BinMode::Mirrored
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinConfig {
    #[serde(default = "default_cuts")]
    pub cuts: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: BinMode,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            cuts: default_cuts(),
            mode: default_mode(),
        }
    }
}

impl BinConfig {
    /// Cut positions as fractions of the way from `a` to `b`, ascending.
    pub fn fractions(&self) -> Vec<f64> {
        let mut f: Vec<f64> = match self.mode {
            BinMode::Mirrored => self.cuts.clone(),
            BinMode::LiteralSorted => self.cuts.iter().map(|c| 1.0 - c).collect(),
        };
        f.sort_by(f64::total_cmp);
        f
    }
}

fn default_plan() -> Vec<usize> {
    vec![1, 1, 1, 2]
}
fn default_group_size() -> usize {
    5
}
fn default_groups_per_step() -> usize {
    1000
}
fn default_policy() -> SamplingPolicy {
    SamplingPolicy::PreferenceAligned
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default)]
    pub bins: BinConfig,
    /// Draws per bin, lowest-relevance bin first.
    #[serde(default = "default_plan")]
    pub plan: Vec<usize>,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_groups_per_step")]
    pub groups_per_step: usize,
    /// When set, every training persona gets this many groups per step and
    /// `groups_per_step` is ignored.
    #[serde(default)]
    pub groups_per_persona: Option<usize>,
    #[serde(default = "default_policy")]
    pub policy: SamplingPolicy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            bins: BinConfig::default(),
            plan: default_plan(),
            group_size: default_group_size(),
            groups_per_step: default_groups_per_step(),
            groups_per_persona: None,
            policy: default_policy(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.plan.len() != self.bins.cuts.len() + 1 {
            return bad(format!(
                "plan has {} entries but {} cuts define {} bins",
                self.plan.len(),
                self.bins.cuts.len(),
                self.bins.cuts.len() + 1
            ));
        }
        if self.plan.iter().sum::<usize>() != self.group_size {
            return bad(format!(
                "plan {:?} does not sum to group_size {}",
                self.plan, self.group_size
            ));
        }
        if self.bins.cuts.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("cuts must lie in [0, 1]".into());
        }
        if self.groups_per_step == 0 && self.groups_per_persona.is_none() {
            return bad("groups_per_step must be positive".into());
        }
        Ok(())
    }

    /// Groups drawn per step for a training pool of `personas` personas.
    pub fn groups_for(&self, personas: usize) -> usize {
        match self.groups_per_persona {
            Some(n) => n * personas,
            None => self.groups_per_step,
        }
    }
}

/// Catalog rows of one persona split into ordered score bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPartition {
    pub persona_id: String,
    pub low: f64,
    pub high: f64,
    /// Interior cut points, ascending. Bin `k` covers `[cuts[k-1], cuts[k])`
    /// and the top bin is closed at `high`.
    pub cuts: Vec<f64>,
    /// Catalog rows per bin, lowest scores first.
    pub bins: Vec<Vec<usize>>,
    /// Set when the score range collapsed and every row sits in the top bin.
    pub degenerate: bool,
}

impl BinPartition {
    pub fn sizes(&self) -> Vec<usize> {
        self.bins.iter().map(Vec::len).collect()
    }

    pub fn catalog_size(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }
}

pub fn compute_bins(scores: &ScoreVector, config: &BinConfig) -> BinPartition {
    let fractions = config.fractions();
    let n_bins = fractions.len() + 1;
    let (mut low, mut high) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in &scores.scores {
        low = low.min(s);
        high = high.max(s);
    }
    let mut bins = vec![Vec::new(); n_bins];
    if scores.scores.is_empty() || high - low < DEGENERATE_RANGE {
        bins[n_bins - 1] = (0..scores.len()).collect();
        return BinPartition {
            persona_id: scores.persona_id.clone(),
            low,
            high,
            cuts: vec![high; fractions.len()],
            bins,
            degenerate: true,
        };
    }
    let width = high - low;
    let cuts: Vec<f64> = fractions.iter().map(|f| low + f * width).collect();
    for (row, &s) in scores.scores.iter().enumerate() {
        let k = cuts.partition_point(|&c| c <= s);
        bins[k].push(row);
    }
    BinPartition {
        persona_id: scores.persona_id.clone(),
        low,
        high,
        cuts,
        bins,
        degenerate: false,
    }
}

/// How many rows each bin contributes: the plan where possible, with any
/// shortfall taken from the nearest bin that still has rows, trying the
/// higher-relevance neighbour before the lower one at each distance.
pub fn allocate_draws(sizes: &[usize], plan: &[usize]) -> Vec<usize> {
    let n = sizes.len();
    let mut alloc: Vec<usize> = sizes.iter().zip(plan).map(|(&s, &p)| s.min(p)).collect();
    let deficits: Vec<usize> = plan.iter().zip(&alloc).map(|(&p, &a)| p - a).collect();
    for (k, &shortfall) in deficits.iter().enumerate() {
        let mut deficit = shortfall;
        let mut dist = 1;
        while deficit > 0 && dist < n {
            for nb in [k.checked_add(dist).filter(|&j| j < n), k.checked_sub(dist)]
                .into_iter()
                .flatten()
            {
                let take = deficit.min(sizes[nb] - alloc[nb]);
                alloc[nb] += take;
                deficit -= take;
            }
            dist += 1;
        }
    }
    alloc
}

/// Draws one candidate group (catalog rows) from a partition.
pub fn sample_group<R: Rng + ?Sized>(
    partition: &BinPartition,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<usize>, SamplerError> {
    let catalog = partition.catalog_size();
    if catalog < config.group_size {
        return Err(SamplerError::CatalogTooSmall {
            catalog,
            group: config.group_size,
        });
    }
    let alloc = allocate_draws(&partition.sizes(), &config.plan);
    let mut group = Vec::with_capacity(config.group_size);
    for (bin, &count) in partition.bins.iter().zip(&alloc) {
        for i in index::sample(rng, bin.len(), count) {
            group.push(bin[i]);
        }
    }
    group.shuffle(rng);
    Ok(group)
}

/// Uniform draws without replacement, ignoring scores.
pub fn sample_uniform<R: Rng + ?Sized>(
    catalog: usize,
    group_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SamplerError> {
    if catalog < group_size {
        return Err(SamplerError::CatalogTooSmall {
            catalog,
            group: group_size,
        });
    }
    Ok(index::sample(rng, catalog, group_size).into_vec())
}

/// One candidate group for one persona (index into the persona pool).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledGroup {
    pub persona: usize,
    pub rows: Vec<usize>,
}

/// Draws a step's candidate groups. Personas are drawn uniformly with
/// replacement (or round-robin with `groups_per_persona`); each distinct
/// persona is partitioned once against the current student.
pub fn sample_step<R: Rng + ?Sized>(
    personas: &[PersonaRecord],
    store: &CatalogStore,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<SampledGroup>, SamplerError> {
    if personas.is_empty() {
        return Err(SamplerError::NoPersonas);
    }
    if store.len() < config.group_size {
        return Err(SamplerError::CatalogTooSmall {
            catalog: store.len(),
            group: config.group_size,
        });
    }
    let picks: Vec<usize> = match config.groups_per_persona {
        Some(n) => (0..personas.len()).flat_map(|p| std::iter::repeat_n(p, n)).collect(),
        None => (0..config.groups_per_step)
            .map(|_| rng.random_range(0..personas.len()))
            .collect(),
    };

    let partitions: HashMap<usize, BinPartition> = match config.policy {
        SamplingPolicy::Uniform => HashMap::new(),
        SamplingPolicy::PreferenceAligned => {
            let mut distinct = picks.clone();
            distinct.sort_unstable();
            distinct.dedup();
            distinct
                .par_iter()
                .map(|&p| {
                    let scores = store.score_all(&personas[p])?;
                    Ok((p, compute_bins(&scores, &config.bins)))
                })
                .collect::<Result<_, SamplerError>>()?
        }
    };

    picks
        .into_iter()
        .map(|p| {
            let rows = match config.policy {
                SamplingPolicy::Uniform => sample_uniform(store.len(), config.group_size, rng)?,
                SamplingPolicy::PreferenceAligned => sample_group(&partitions[&p], config, rng)?,
            };
            Ok(SampledGroup { persona: p, rows })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(scores: &[f64]) -> ScoreVector {
        ScoreVector {
            persona_id: "p".into(),
            scores: scores.to_vec(),
        }
    }

    fn partition_with_sizes(sizes: &[usize]) -> BinPartition {
        let mut next = 0;
        let bins = sizes
            .iter()
            .map(|&s| {
                let b: Vec<usize> = (next..next + s).collect();
                next += s;
                b
            })
            .collect();
        BinPartition {
            persona_id: "p".into(),
            low: 0.0,
            high: 1.0,
            cuts: vec![0.7, 0.9, 0.95],
            bins,
            degenerate: false,
        }
    }

    #[test]
    fn unit_range_cuts() {
        let p = compute_bins(&sv(&[0.0, 1.0]), &BinConfig::default());
        let expected = [0.7, 0.9, 0.95];
        for (c, e) in p.cuts.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_bins() {
        let p = compute_bins(&sv(&[0.0, 0.5, 0.8, 0.96]), &BinConfig::default());
        for (c, e) in p.cuts.iter().zip([0.672, 0.864, 0.912]) {
            assert!((c - e).abs() < 1e-12);
        }
        assert_eq!(p.sizes(), vec![2, 1, 0, 1]);
        assert_eq!(p.bins[3], vec![3]);
    }

    #[test]
    fn literal_sorted_mode() {
        let cfg = BinConfig {
            mode: BinMode::LiteralSorted,
            ..Default::default()
        };
        let f = cfg.fractions();
        for (c, e) in f.iter().zip([0.05, 0.1, 0.3]) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_scores_are_degenerate() {
        let p = compute_bins(&sv(&[0.3; 6]), &BinConfig::default());
        assert!(p.degenerate);
        assert_eq!(p.sizes(), vec![0, 0, 0, 6]);
    }

    #[test]
    fn allocation_follows_plan_and_spills_upward() {
        assert_eq!(allocate_draws(&[100, 100, 100, 100], &[1, 1, 1, 2]), vec![1, 1, 1, 2]);
        assert_eq!(allocate_draws(&[10, 10, 0, 10], &[1, 1, 1, 2]), vec![1, 1, 0, 3]);
        // top bin empty: it can only spill downward
        assert_eq!(allocate_draws(&[10, 10, 10, 0], &[1, 1, 1, 2]), vec![1, 1, 3, 0]);
        // a single-row top bin forces a second-nearest spill
        assert_eq!(allocate_draws(&[10, 0, 0, 1], &[1, 1, 1, 2]), vec![4, 0, 0, 1]);
        assert_eq!(allocate_draws(&[0, 0, 0, 9], &[1, 1, 1, 2]), vec![0, 0, 0, 5]);
    }

    #[test]
    fn group_draws_match_plan() {
        let p = partition_with_sizes(&[100, 100, 100, 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_group(&p, &SamplerConfig::default(), &mut rng).unwrap();
        let mut per_bin = [0; 4];
        for r in &g {
            per_bin[r / 100] += 1;
        }
        assert_eq!(per_bin, [1, 1, 1, 2]);
        let mut sorted = g.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);

        let again = sample_group(&p, &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn too_small_catalog() {
        let p = partition_with_sizes(&[1, 1, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_group(&p, &SamplerConfig::default(), &mut rng),
            Err(SamplerError::CatalogTooSmall { catalog: 4, group: 5 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            plan: vec![1, 1, 1, 1],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let parsed: SamplerConfig = serde_json::from_str(
            r#"{"bins": {"mode": "literal-sorted"}, "policy": "uniform", "groups_per_step": 200}"#,
        )
        .unwrap();
        assert_eq!(parsed.bins.mode, BinMode::LiteralSorted);
        assert_eq!(parsed.policy, SamplingPolicy::Uniform);
        assert_eq!(parsed.groups_per_step, 200);
    }
}
