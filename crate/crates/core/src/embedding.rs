//! Persona and catalog embeddings, the bilinear relevance score, and the
//! `PDE1` embedding file format.
//!
//! The trainable student is the matrix of raw (pre-normalization) image
//! vectors. Scores always go through the row-normalized view, so scaling a
//! raw row by a positive constant never changes any score.
//!
//! Raw values are kept on the f32 grid (the file precision) while all
//! arithmetic runs in f64, which makes checkpoints exact.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::{self, FormatError, Header, EMBEDDING_MAGIC};
use crate::rng;

/// Rows with a Euclidean norm below this are treated as the zero vector.
pub const MIN_NORM: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector norm {0:e} is below the zero-vector threshold")]
    ZeroVector(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("embedding dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("normalized cache is stale; call refresh() first")]
    StaleCache,
    #[error("{path}:{line}: {source}")]
    BadLine {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("persona `{0}` has no embedding and no dimension was supplied")]
    MissingEmbedding(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EmbeddingError {
    /// Maps the binary-format failures onto the embedding error surface.
    pub fn is_truncated(&self) -> bool {
        matches!(self, EmbeddingError::Format(FormatError::TruncatedFile { .. }))
    }

    pub fn is_bad_magic(&self) -> bool {
        matches!(self, EmbeddingError::Format(FormatError::BadMagic { .. }))
    }
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Euclidean norm, summed left to right.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Dot product with a fixed left-to-right summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n.is_nan() || n < MIN_NORM {
        return Err(EmbeddingError::ZeroVector(n));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Relevance of an image for a persona: the dot product of two unit vectors.
pub fn score(persona: &[f64], image: &[f64]) -> Result<f64> {
    if persona.len() != image.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: persona.len(),
            found: image.len(),
        });
    }
    Ok(dot(persona, image))
}

/// Draws a uniformly distributed unit vector whose components lie on the f32 grid.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n < 1e-6 {
            continue;
        }
        return v.iter().map(|x| binfmt::to_f32_grid(x / n)).collect();
    }
}

/// Scores of one persona against every catalog row, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub persona_id: String,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// A persona with its frozen, unit-normalized text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaRecord {
    pub id: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

impl PersonaRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, embedding: &[f64]) -> Result<Self> {
        if embedding.len() < 2 {
            return Err(EmbeddingError::DimensionTooSmall(embedding.len()));
        }
        Ok(Self {
            id: id.into(),
            text: text.into(),
            embedding: normalize(embedding)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PersonaLine {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
}

/// An ordered, id-indexed collection of personas.
#[derive(Debug, Clone, Default)]
pub struct PersonaSet {
    records: Vec<PersonaRecord>,
    index: HashMap<String, usize>,
}

impl PersonaSet {
    pub fn new(records: Vec<PersonaRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let dim = records.first().map(|r| r.embedding.len());
        for (i, r) in records.iter().enumerate() {
            if let Some(d) = dim {
                if r.embedding.len() != d {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: d,
                        found: r.embedding.len(),
                    });
                }
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { records, index })
    }

    /// Reads a JSON Lines persona file. Personas without an embedding get a
    /// seeded random unit vector keyed by their id, which needs `dim`.
    pub fn load(path: &Path, dim: Option<usize>, seed: u64) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: PersonaLine = serde_json::from_str(&line).map_err(|source| EmbeddingError::BadLine {
                path: path.to_path_buf(),
                line: lineno + 1,
                source,
            })?;
            let embedding: Vec<f64> = match parsed.embedding {
                Some(e) => e.into_iter().map(f64::from).collect(),
                None => {
                    let d = dim.ok_or_else(|| EmbeddingError::MissingEmbedding(parsed.id.clone()))?;
                    let mut stream = rng::keyed_stream(seed, "persona-embedding", &parsed.id);
                    random_unit(&mut stream, d)
                }
            };
            if let Some(d) = dim {
                if embedding.len() != d {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: d,
                        found: embedding.len(),
                    });
                }
            }
            records.push(PersonaRecord::new(parsed.id, parsed.text, &embedding)?);
        }
        Self::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            let line = PersonaLine {
                id: r.id.clone(),
                text: r.text.clone(),
                embedding: Some(r.embedding.iter().map(|&x| x as f32).collect()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&PersonaRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[PersonaRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.embedding.len())
    }
}

/// JSON sidecar written next to every `PDE1` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub ids: Vec<String>,
    pub dim: usize,
    pub count: usize,
    pub normalized: bool,
}

/// `catalog.bin` -> `catalog.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// The image catalog: ids in canonical order, trainable raw rows, and the
/// cached unit-normalized view.
#[derive(Debug, Clone)]
pub struct CatalogStore {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    raw: Vec<f64>,
    normalized: Vec<f64>,
    dirty: Vec<bool>,
}

impl CatalogStore {
    pub fn new(ids: Vec<String>, dim: usize, raw: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(EmbeddingError::DimensionTooSmall(dim));
        }
        if ids.is_empty() {
            return Err(EmbeddingError::EmptyCatalog);
        }
        if raw.len() != ids.len() * dim {
            return Err(EmbeddingError::CountMismatch {
                expected: ids.len() * dim,
                found: raw.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        let mut store = Self {
            normalized: vec![0.0; raw.len()],
            dirty: vec![true; ids.len()],
            ids,
            index,
            dim,
            raw,
        };
        for i in 0..store.len() {
            let row = store.raw_row(i);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite(i));
            }
            let n = norm(row);
            if n < MIN_NORM {
                return Err(EmbeddingError::ZeroVector(n));
            }
        }
        store.refresh();
        Ok(store)
    }

    /// A store whose rows are seeded random unit vectors.
    pub fn random_unit<R: Rng + ?Sized>(ids: Vec<String>, dim: usize, rng: &mut R) -> Result<Self> {
        let mut raw = Vec::with_capacity(ids.len() * dim);
        for _ in 0..ids.len() {
            raw.extend(random_unit(rng, dim));
        }
        Self::new(ids, dim, raw)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn raw_matrix(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    /// The cached unit row. Only meaningful when the row is not dirty.
    pub fn normalized_row(&self, i: usize) -> &[f64] {
        debug_assert!(!self.dirty[i], "row {i} read while dirty");
        &self.normalized[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_fresh(&self) -> bool {
        !self.dirty.iter().any(|&d| d)
    }

    /// Replaces a raw row and marks it dirty. A row whose norm falls below
    /// [`MIN_NORM`] is rescaled to exactly that norm along its direction
    /// (or along the previous direction if it is exactly zero).
    pub fn set_raw_row(&mut self, i: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        let n = norm(values);
        let dim = self.dim;
        // clamped rows land slightly above the threshold so that they stay
        // valid after rounding onto the f32 grid
        let target = MIN_NORM * (1.0 + 1e-6);
        let row: Vec<f64> = if n >= MIN_NORM {
            values.to_vec()
        } else if n > 0.0 {
            values.iter().map(|x| binfmt::to_f32_grid(x / n * target)).collect()
        } else {
            let old = self.raw_row(i);
            let on = norm(old);
            old.iter().map(|x| binfmt::to_f32_grid(x / on * target)).collect()
        };
        self.raw[i * dim..(i + 1) * dim].copy_from_slice(&row);
        self.dirty[i] = true;
        Ok(())
    }

    /// Recomputes the normalized view for every dirty row.
    pub fn refresh(&mut self) {
        let dim = self.dim;
        for i in 0..self.ids.len() {
            if !self.dirty[i] {
                continue;
            }
            let row = &self.raw[i * dim..(i + 1) * dim];
            let n = norm(row);
            for (dst, &x) in self.normalized[i * dim..(i + 1) * dim].iter_mut().zip(row) {
                *dst = x / n;
            }
            self.dirty[i] = false;
        }
    }

    /// Scores one persona against the whole catalog. Rows are independent so
    /// the parallel scan produces the same bits as a sequential loop.
    pub fn score_all(&self, persona: &PersonaRecord) -> Result<ScoreVector> {
        self.score_all_vec(&persona.id, &persona.embedding)
    }

    pub fn score_all_vec(&self, persona_id: &str, embedding: &[f64]) -> Result<ScoreVector> {
        if self.ids.is_empty() {
            return Err(EmbeddingError::EmptyCatalog);
        }
        if embedding.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                found: embedding.len(),
            });
        }
        if !self.is_fresh() {
            return Err(EmbeddingError::StaleCache);
        }
        let scores = self
            .normalized
            .par_chunks(self.dim)
            .map(|row| dot(embedding, row))
            .collect();
        Ok(ScoreVector {
            persona_id: persona_id.to_string(),
            scores,
        })
    }

    /// Writes the `PDE1` binary and its JSON manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bin = Vec::with_capacity(12 + self.raw.len() * 4);
        binfmt::write_header(
            &mut bin,
            EMBEDDING_MAGIC,
            Header {
                count: self.len(),
                dim: self.dim,
            },
        )?;
        binfmt::write_matrix(&mut bin, &self.raw)?;
        fs::write(path, &bin)?;

        let normalized = self.raw.chunks(self.dim).all(|row| {
            let n = row
                .iter()
                .map(|&x| (x as f32) as f64)
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            (n - 1.0).abs() <= 1e-6
        });
        let manifest = Manifest {
            ids: self.ids.clone(),
            dim: self.dim,
            count: self.len(),
            normalized,
        };
        let mut text = serde_json::to_string(&manifest)?;
        text.push('\n');
        fs::write(manifest_path(path), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
        let mut reader = binfmt::Reader::new(&bytes);
        let header = reader.header(EMBEDDING_MAGIC)?;
        if header.dim != manifest.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: manifest.dim,
                found: header.dim,
            });
        }
        if header.count != manifest.count || manifest.ids.len() != manifest.count {
            return Err(EmbeddingError::CountMismatch {
                expected: manifest.ids.len(),
                found: header.count,
            });
        }
        let raw = reader.matrix(header)?;
        reader.finish()?;
        Self::new(manifest.ids, header.dim, raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!(close(v[0], 0.6, 1e-12) && close(v[1], 0.8, 1e-12));
        let unit = [0.0, 0.0, 0.0, 1.0];
        assert_eq!(normalize(&unit).unwrap(), unit.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<f64> = (0..7).map(|_| rng.random::<f64>() - 0.5).collect();
        let once = normalize(&r).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!(close(*a, *b, 1e-12));
        }
        assert!(close(norm(&once), 1.0, 1e-12));
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(EmbeddingError::ZeroVector(_))));
        assert!(matches!(normalize(&[1e-9, 0.0]), Err(EmbeddingError::ZeroVector(_))));
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score(&[1.0, 0.0], &[0.6, 0.8]).unwrap(), 0.6);
        assert!(matches!(
            score(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn score_all_self_and_negation() {
        let e = normalize(&[0.3, -0.2, 0.9]).unwrap();
        let neg: Vec<f64> = e.iter().map(|x| -x).collect();
        let mut raw = e.clone();
        raw.extend(&neg);
        let store = CatalogStore::new(vec!["a".into(), "b".into()], 3, raw).unwrap();
        let p = PersonaRecord::new("p", "", &e).unwrap();
        let s = store.score_all(&p).unwrap();
        assert!(close(s.scores[0], 1.0, 1e-12));
        assert!(close(s.scores[1], -1.0, 1e-12));

        let single = CatalogStore::new(vec!["x".into()], 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(single.score_all(&p).unwrap().len(), 1);
    }

    #[test]
    fn score_all_matches_row_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ids: Vec<String> = (0..16).map(|i| format!("img{i}")).collect();
        let store = CatalogStore::random_unit(ids, 4, &mut rng).unwrap();
        let p = PersonaRecord::new("p", "", &random_unit(&mut rng, 4)).unwrap();
        let s = store.score_all(&p).unwrap();
        for i in 0..store.len() {
            let row = store.normalized_row(i);
            let mut acc = 0.0;
            for (a, b) in p.embedding.iter().zip(row) {
                acc += a * b;
            }
            assert_eq!(s.scores[i], acc);
        }
    }

    #[test]
    fn stale_cache_and_empty_persona_dim() {
        let mut store = CatalogStore::new(vec!["a".into()], 2, vec![1.0, 0.0]).unwrap();
        store.set_raw_row(0, &[0.0, 2.0]).unwrap();
        let p = PersonaRecord::new("p", "", &[1.0, 0.0]).unwrap();
        assert!(matches!(store.score_all(&p), Err(EmbeddingError::StaleCache)));
        store.refresh();
        assert!(close(store.score_all(&p).unwrap().scores[0], 0.0, 1e-12));
        let q = PersonaRecord::new("q", "", &[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            store.score_all(&q),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn refresh_keeps_cache_coherent_and_clamps_small_rows() {
        let mut store = CatalogStore::new(vec!["a".into(), "b".into()], 2, vec![3.0, 4.0, 1.0, 0.0]).unwrap();
        store.set_raw_row(0, &[1e-10, 0.0]).unwrap();
        store.set_raw_row(1, &[0.0, 0.0]).unwrap();
        store.refresh();
        for i in 0..2 {
            let n = norm(store.raw_row(i));
            assert!((MIN_NORM..MIN_NORM * 1.001).contains(&n));
        }
        assert!(close(store.normalized_row(1)[0], 1.0, 1e-6));
        for i in 0..2 {
            let n = store.normalized_row(i);
            assert!(close(norm(n), 1.0, 1e-6));
            assert!(close(dot(n, store.raw_row(i)), norm(store.raw_row(i)), 1e-6));
        }
    }

    #[test]
    fn constructor_errors() {
        assert!(matches!(
            CatalogStore::new(vec!["a".into(), "a".into()], 2, vec![1.0; 4]),
            Err(EmbeddingError::DuplicateId(_))
        ));
        assert!(matches!(
            CatalogStore::new(vec![], 2, vec![]),
            Err(EmbeddingError::EmptyCatalog)
        ));
        assert!(matches!(
            CatalogStore::new(vec!["a".into()], 2, vec![0.0, 0.0]),
            Err(EmbeddingError::ZeroVector(_))
        ));
        assert!(matches!(
            CatalogStore::new(vec!["a".into()], 1, vec![1.0]),
            Err(EmbeddingError::DimensionTooSmall(1))
        ));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cat.bin");
        let store = CatalogStore::new(vec!["a".into(), "b".into()], 3, vec![1.0, 2.0, 3.0, -0.5, 0.25, 4.0]).unwrap();
        store.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 12 + 6 * 4);
        assert_eq!(&bytes[..4], b"PDE1");
        let loaded = CatalogStore::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.raw_matrix(), store.raw_matrix());
        assert_eq!(loaded.ids(), store.ids());

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(CatalogStore::load(&path).unwrap_err().is_truncated());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(CatalogStore::load(&path).unwrap_err().is_bad_magic());

        fs::write(&path, &bytes).unwrap();
        fs::write(
            manifest_path(&path),
            r#"{"ids":["a","a"],"dim":3,"count":2,"normalized":false}"#,
        )
        .unwrap();
        assert!(matches!(CatalogStore::load(&path), Err(EmbeddingError::DuplicateId(_))));
        fs::write(
            manifest_path(&path),
            r#"{"ids":["a","b"],"dim":4,"count":2,"normalized":false}"#,
        )
        .unwrap();
        assert!(matches!(
            CatalogStore::load(&path),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn persona_file_fills_missing_embeddings_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        fs::write(
            &path,
            "{\"id\":\"p1\",\"text\":\"a gardener\",\"embedding\":[3.0,4.0]}\n\
             {\"id\":\"p2\",\"text\":\"a runner\"}\n",
        )
        .unwrap();
        let a = PersonaSet::load(&path, Some(2), 9).unwrap();
        let b = PersonaSet::load(&path, Some(2), 9).unwrap();
        assert_eq!(a.get("p1").unwrap().embedding, vec![0.6, 0.8]);
        assert_eq!(a.get("p2").unwrap().embedding, b.get("p2").unwrap().embedding);
        assert!(close(norm(&a.get("p2").unwrap().embedding), 1.0, 1e-6));
        assert!(matches!(
            PersonaSet::load(&path, None, 9),
            Err(EmbeddingError::MissingEmbedding(_))
        ));
        assert!(matches!(
            PersonaSet::load(&path, Some(3), 9),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }
}
