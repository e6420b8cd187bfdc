//! Append-only ranking cache and log replay.
//!
//! Records use the `RankedGroup` JSON Lines schema. The cache key covers the
//! teacher id, the persona and the *sorted* candidate set, so a request with
//! the candidates in another order hits the same entry; the stored ranking is
//! re-indexed to the caller's order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use log::warn;
use sha2::{Digest, Sha256};

use super::{Teacher, TeacherError, TeacherRanking, TeacherRequest};
use crate::loss::RankedGroup;

pub fn cache_key(teacher_id: &str, persona_id: &str, candidates: &[String]) -> String {
    let mut sorted: Vec<&str> = candidates.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    hasher.update(teacher_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(persona_id.as_bytes());
    for c in sorted {
        hasher.update([0u8]);
        hasher.update(c.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Reads a ranked-group log, skipping (and counting) lines that do not parse
/// or do not describe a valid group.
pub fn read_ranked_log(path: &Path) -> Result<(Vec<RankedGroup>, usize), TeacherError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut corrupt = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RankedGroup>(&line) {
            Ok(rec) if rec.validate().is_ok() => records.push(rec),
            Ok(_) | Err(_) => {
                warn!("{}:{}: skipping corrupt ranking record", path.display(), lineno + 1);
                corrupt += 1;
            }
        }
    }
    Ok((records, corrupt))
}

pub fn write_ranked_log(path: &Path, records: &[RankedGroup]) -> Result<(), TeacherError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Ranking for `candidates` taken from a record over the same candidate set.
fn reindex(record: &RankedGroup, candidates: &[String]) -> Option<Vec<u32>> {
    if record.candidates.len() != candidates.len() {
        return None;
    }
    let by_id: HashMap<&str, u32> = record
        .candidates
        .iter()
        .map(String::as_str)
        .zip(record.ranking.iter().copied())
        .collect();
    candidates.iter().map(|c| by_id.get(c.as_str()).copied()).collect()
}

#[derive(Default)]
struct Index {
    entries: HashMap<String, RankedGroup>,
}

impl Index {
    fn insert(&mut self, teacher_id: &str, record: RankedGroup) {
        let key = cache_key(teacher_id, &record.persona_id, &record.candidates);
        self.entries.entry(key).or_insert(record);
    }

    fn lookup(&self, teacher_id: &str, request: &TeacherRequest) -> Option<Vec<u32>> {
        let key = cache_key(teacher_id, &request.persona_id, &request.candidates);
        self.entries.get(&key).and_then(|r| reindex(r, &request.candidates))
    }
}

/// Memoizes an inner teacher, persisting each miss to an append-only file.
pub struct CachedTeacher<T> {
    inner: T,
    index: Mutex<Index>,
    writer: Mutex<Option<BufWriter<File>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    corrupt_lines: usize,
}

impl<T: Teacher> CachedTeacher<T> {
    pub fn in_memory(inner: T) -> Self {
        Self {
            inner,
            index: Mutex::new(Index::default()),
            writer: Mutex::new(None),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            corrupt_lines: 0,
        }
    }

    /// Opens (or creates) the cache file at `path`. Records written by other
    /// teachers are kept in the file but never returned.
    pub fn open(inner: T, path: &Path) -> Result<Self, TeacherError> {
        let mut index = Index::default();
        let mut corrupt_lines = 0;
        if path.exists() {
            let (records, corrupt) = read_ranked_log(path)?;
            corrupt_lines = corrupt;
            for r in records {
                let teacher = r.teacher.clone();
                index.insert(&teacher, r);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            index: Mutex::new(index),
            writer: Mutex::new(Some(BufWriter::new(file))),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            corrupt_lines,
        })
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Teacher> Teacher for CachedTeacher<T> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        let teacher_id = self.inner.id().to_string();
        if let Some(ranking) = self.index.lock().unwrap().lookup(&teacher_id, request) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(TeacherRanking {
                ranking,
                teacher_id,
                raw_response: None,
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.rank(request)?;
        let record = RankedGroup {
            persona_id: request.persona_id.clone(),
            candidates: request.candidates.clone(),
            ranking: out.ranking.clone(),
            teacher: teacher_id.clone(),
            step: request.step,
        };
        if let Some(w) = self.writer.lock().unwrap().as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.index.lock().unwrap().insert(&teacher_id, record);
        Ok(out)
    }

    fn max_parallel(&self) -> usize {
        self.inner.max_parallel()
    }
}

/// Answers only from a recorded log; anything not recorded is an error.
pub struct ReplayTeacher {
    id: String,
    index: Index,
}

impl ReplayTeacher {
    /// Loads a log. With `teacher_id == None` the id of the first record is
    /// used. Only records from that teacher are served.
    pub fn open(path: &Path, teacher_id: Option<&str>) -> Result<Self, TeacherError> {
        let (records, _) = read_ranked_log(path)?;
        Ok(Self::from_records(records, teacher_id))
    }

    pub fn from_records(records: Vec<RankedGroup>, teacher_id: Option<&str>) -> Self {
        let id = teacher_id
            .map(str::to_string)
            .or_else(|| records.first().map(|r| r.teacher.clone()))
            .unwrap_or_else(|| "replay".to_string());
        let mut index = Index::default();
        for r in records.into_iter().filter(|r| r.teacher == id) {
            index.insert(&id, r);
        }
        Self { id, index }
    }

    pub fn len(&self) -> usize {
        self.index.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.entries.is_empty()
    }
}

impl Teacher for ReplayTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        match self.index.lookup(&self.id, request) {
            Some(ranking) => Ok(TeacherRanking {
                ranking,
                teacher_id: self.id.clone(),
                raw_response: None,
            }),
            None => Err(TeacherError::NotRecorded {
                persona_id: request.persona_id.clone(),
            }),
        }
    }

    fn max_parallel(&self) -> usize {
        8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{CountingTeacher, SyntheticTeacher};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:02}")).collect()
    }

    #[test]
    fn key_ignores_candidate_order() {
        let a = cache_key("t", "p", &["x".into(), "y".into()]);
        let b = cache_key("t", "p", &["y".into(), "x".into()]);
        assert_eq!(a, b);
        assert_ne!(a, cache_key("t2", "p", &["x".into(), "y".into()]));
        assert_ne!(a, cache_key("t", "q", &["x".into(), "y".into()]));
    }

    #[test]
    fn second_request_hits_and_permuted_request_reindexes() {
        let inner = CountingTeacher::new(SyntheticTeacher::new(4, 0.0, 5));
        let cached = CachedTeacher::in_memory(inner);
        let c = ids(5);
        let req = TeacherRequest::new("p", "", c.clone());
        let first = cached.rank(&req).unwrap();
        let again = cached.rank(&req).unwrap();
        assert_eq!(first.ranking, again.ranking);
        assert_eq!(cached.inner().calls(), 1);

        let perm = vec![c[3].clone(), c[0].clone(), c[4].clone(), c[1].clone(), c[2].clone()];
        let shuffled = cached.rank(&TeacherRequest::new("p", "", perm)).unwrap();
        assert_eq!(cached.inner().calls(), 1);
        assert_eq!(
            shuffled.ranking,
            vec![
                first.ranking[3],
                first.ranking[0],
                first.ranking[4],
                first.ranking[1],
                first.ranking[2]
            ]
        );
        assert_eq!(cached.hits(), 2);
        assert_eq!(cached.misses(), 1);
    }

    #[test]
    fn persisted_cache_survives_reopen_and_skips_corrupt_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let c = ids(4);
        let req = TeacherRequest::new("p", "", c.clone()).with_step(3, 0);
        let first = {
            let cached = CachedTeacher::open(SyntheticTeacher::new(4, 0.0, 5), &path).unwrap();
            cached.rank(&req).unwrap()
        };
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        text.push_str(
            "{\"persona_id\":\"p\",\"candidates\":[\"a\",\"b\"],\"ranking\":[1,1],\"teacher\":\"x\",\"step\":0}\n",
        );
        std::fs::write(&path, text).unwrap();

        let reopened = CachedTeacher::open(CountingTeacher::new(SyntheticTeacher::new(4, 0.0, 5)), &path).unwrap();
        assert_eq!(reopened.corrupt_lines(), 2);
        assert_eq!(reopened.rank(&req).unwrap().ranking, first.ranking);
        assert_eq!(reopened.inner().calls(), 0);

        let (records, _) = read_ranked_log(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].step, 3);
    }

    #[test]
    fn replay_reproduces_recorded_groups() {
        let teacher = SyntheticTeacher::new(4, 0.0, 8);
        let mut log = Vec::new();
        for k in 0..20 {
            let cands: Vec<String> = (0..5).map(|i| format!("img{}", (k * 3 + i * 7) % 40)).collect();
            let req = TeacherRequest::new(format!("p{}", k % 4), "", cands);
            let r = teacher.rank(&req).unwrap();
            log.push(RankedGroup {
                persona_id: req.persona_id.clone(),
                candidates: req.candidates.clone(),
                ranking: r.ranking,
                teacher: teacher.id().to_string(),
                step: k as u64,
            });
        }
        let replay = ReplayTeacher::from_records(log.clone(), None);
        assert_eq!(replay.id(), teacher.id());
        for rec in &log {
            let req = TeacherRequest::new(rec.persona_id.clone(), "", rec.candidates.clone());
            assert_eq!(replay.rank(&req).unwrap().ranking, rec.ranking);
        }
        let miss = TeacherRequest::new("p0", "", vec!["zz1".into(), "zz2".into()]);
        assert!(matches!(replay.rank(&miss), Err(TeacherError::NotRecorded { .. })));
    }
}
