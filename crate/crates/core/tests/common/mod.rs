#![allow(dead_code)]

pub mod stub;

use std::fs;
use std::path::{Path, PathBuf};

use prefdistill_core::pipeline::{self, RunConfig, Split, WorldSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random permutation of 1..=n as per-candidate ranks.
pub fn random_ranking(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    use rand::seq::SliceRandom;
    let mut r: Vec<u32> = (1..=n as u32).collect();
    r.shuffle(rng);
    r
}

/// Reference loss written from the definition with no shared code: cosine
/// scores, logistic preference of the better-ranked item, summed
/// cross-entropy over all pairs.
pub fn oracle_loss(persona: &[f64], raws: &[Vec<f64>], ranking: &[u32]) -> f64 {
    let pn = persona.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scores: Vec<f64> = raws
        .iter()
        .map(|v| {
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            persona.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (pn * vn)
        })
        .collect();
    let mut total = 0.0;
    for i in 0..raws.len() {
        for j in (i + 1)..raws.len() {
            let p = 1.0 / (1.0 + (-(scores[i] - scores[j])).exp());
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            total += if ranking[i] < ranking[j] {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            };
        }
    }
    total
}

/// Central finite differences of [`oracle_loss`] with respect to every raw
/// coordinate.
pub fn oracle_grad(persona: &[f64], raws: &[Vec<f64>], ranking: &[u32], h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(raws.len());
    for c in 0..raws.len() {
        let mut row = Vec::with_capacity(raws[c].len());
        for d in 0..raws[c].len() {
            let mut plus = raws.to_vec();
            let mut minus = raws.to_vec();
            plus[c][d] += h;
            minus[c][d] -= h;
            row.push((oracle_loss(persona, &plus, ranking) - oracle_loss(persona, &minus, ranking)) / (2.0 * h));
        }
        out.push(row);
    }
    out
}

pub fn world_spec(dim: usize, train: usize, val: usize, images: usize, seed: u64) -> WorldSpec {
    WorldSpec {
        dim,
        train_personas: train,
        val_personas: val,
        test_personas: val,
        images,
        tau: 0.0,
        seed,
    }
}

/// Writes a synthetic world under `dir`, labels its validation split, and
/// returns the config with `edit` applied (and written back to disk).
pub fn labelled_world(dir: &Path, spec: &WorldSpec, edit: impl FnOnce(&mut RunConfig)) -> RunConfig {
    let mut config = pipeline::write_world(dir, spec).expect("world");
    edit(&mut config);
    pipeline::label(&config, Some(Split::Val)).expect("labels");
    save_config(dir, &config);
    config
}

pub fn save_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

pub fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Run log lines with the wall-clock field removed.
pub fn run_log_without_time(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

/// Every artifact a deterministic run must reproduce exactly.
pub fn run_artifacts(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for dir in ["checkpoint", "best"] {
        for f in [
            "embeddings.bin",
            "embeddings.manifest.json",
            "optimizer.bin",
            "train_state.json",
        ] {
            let p = out.join(dir).join(f);
            files.push((format!("{dir}/{f}"), read(&p)));
        }
    }
    files.push(("rankings.jsonl".into(), read(&out.join("rankings.jsonl"))));
    let log = serde_json::to_vec(&run_log_without_time(&out.join("run_log.jsonl"))).unwrap();
    files.push(("run_log.jsonl (no wall_ms)".into(), log));
    files
}

pub fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}
