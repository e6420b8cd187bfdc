//! The ranking oracle contract and its implementations.
//!
//! Every teacher orders a small set of candidate images for one persona.
//! Output permutations are validated here, once, for every implementation.

mod cache;
mod http;
mod synthetic;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::loss::validate_permutation;

pub use cache::{cache_key, read_ranked_log, write_ranked_log, CachedTeacher, ReplayTeacher};
pub use http::{parse_ranking, render_prompt, HttpTeacher, HttpTeacherConfig, DEFAULT_PROMPT_TEMPLATE};
pub use synthetic::SyntheticTeacher;

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("invalid teacher request: {0}")]
    InvalidRequest(String),
    #[error("teacher unavailable after {attempts} attempt(s): {message}")]
    TeacherUnavailable { attempts: u32, message: String },
    #[error("malformed teacher response: {message}")]
    MalformedResponse { message: String, raw: Option<String> },
    #[error("no recorded ranking for persona `{persona_id}` and the requested candidates")]
    NotRecorded { persona_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One ranking request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherRequest {
    pub persona_id: String,
    pub persona_text: String,
    pub candidates: Vec<String>,
    /// Image references (paths or URLs) aligned with `candidates`. Empty means
    /// the ids themselves are the references.
    pub image_refs: Vec<String>,
    /// Training step that issued the request; 0 outside training.
    pub step: u64,
    /// Distinguishes repeated draws of a noisy teacher for the same request.
    pub nonce: u64,
}

impl TeacherRequest {
    pub fn new(persona_id: impl Into<String>, persona_text: impl Into<String>, candidates: Vec<String>) -> Self {
        Self {
            persona_id: persona_id.into(),
            persona_text: persona_text.into(),
            candidates,
            image_refs: Vec::new(),
            step: 0,
            nonce: 0,
        }
    }

    pub fn with_step(mut self, step: u64, nonce: u64) -> Self {
        self.step = step;
        self.nonce = nonce;
        self
    }

    pub fn validate(&self) -> Result<(), TeacherError> {
        if self.candidates.len() < 2 {
            return Err(TeacherError::InvalidRequest(format!(
                "need at least 2 candidates, got {}",
                self.candidates.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c) {
                return Err(TeacherError::InvalidRequest(format!("duplicate candidate `{c}`")));
            }
        }
        if !self.image_refs.is_empty() && self.image_refs.len() != self.candidates.len() {
            return Err(TeacherError::InvalidRequest(
                "image_refs must align with candidates".into(),
            ));
        }
        Ok(())
    }

    pub fn image_ref(&self, i: usize) -> &str {
        self.image_refs.get(i).unwrap_or(&self.candidates[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherRanking {
    /// `ranking[i]` is the rank of candidate `i`; 1 is the best.
    pub ranking: Vec<u32>,
    pub teacher_id: String,
    pub raw_response: Option<String>,
}

impl TeacherRanking {
    /// Index of the top-ranked candidate.
    pub fn best(&self) -> usize {
        self.ranking
            .iter()
            .position(|&r| r == 1)
            .expect("validated permutation")
    }
}

pub trait Teacher: Send + Sync {
    fn id(&self) -> &str;

    /// Implementation hook; callers use [`rank`](Teacher::rank).
    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError>;

    /// Ranks the request's candidates and checks that the answer is a strict
    /// permutation of the right length.
    fn rank(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        request.validate()?;
        let out = self.rank_unchecked(request)?;
        if out.ranking.len() != request.candidates.len() || validate_permutation(&out.ranking).is_err() {
            return Err(TeacherError::MalformedResponse {
                message: format!(
                    "teacher `{}` returned {:?} for {} candidates",
                    self.id(),
                    out.ranking,
                    request.candidates.len()
                ),
                raw: out.raw_response,
            });
        }
        Ok(out)
    }

    /// Pairwise judgment: returns the preferred one of `u` and `v`.
    fn compare(&self, persona_id: &str, persona_text: &str, u: &str, v: &str) -> Result<String, TeacherError> {
        let request = TeacherRequest::new(persona_id, persona_text, vec![u.to_string(), v.to_string()]);
        let ranking = self.rank(&request)?;
        Ok(request.candidates[ranking.best()].clone())
    }

    /// Upper bound on useful concurrent calls.
    fn max_parallel(&self) -> usize {
        1
    }
}

impl<T: Teacher + ?Sized> Teacher for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        (**self).rank_unchecked(request)
    }
    fn rank(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        (**self).rank(request)
    }
    fn max_parallel(&self) -> usize {
        (**self).max_parallel()
    }
}

impl<T: Teacher + ?Sized> Teacher for Box<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        (**self).rank_unchecked(request)
    }
    fn rank(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        (**self).rank(request)
    }
    fn max_parallel(&self) -> usize {
        (**self).max_parallel()
    }
}

/// Counts calls that reach the wrapped teacher.
pub struct CountingTeacher<T> {
    inner: T,
    calls: AtomicU64,
}

impl<T: Teacher> CountingTeacher<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Teacher> Teacher for CountingTeacher<T> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.rank(request)
    }
    fn max_parallel(&self) -> usize {
        self.inner.max_parallel()
    }
}

/// Ranks every request with up to `parallelism` concurrent calls. Results
/// come back in request order.
pub fn rank_many<T: Teacher + ?Sized>(
    teacher: &T,
    requests: &[TeacherRequest],
    parallelism: usize,
) -> Vec<Result<TeacherRanking, TeacherError>> {
    run_parallel(requests.len(), parallelism, |i| teacher.rank(&requests[i]))
}

/// Evaluates `f(0..n)` on up to `parallelism` scoped worker threads and
/// returns the results in index order.
pub(crate) fn run_parallel<R, F>(n: usize, parallelism: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let workers = parallelism.max(1).min(n);
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let chunks: Vec<Vec<(usize, R)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= n {
                            break;
                        }
                        out.push((i, f(i)));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    for chunk in chunks {
        for (i, r) in chunk {
            slots[i] = Some(r);
        }
    }
    slots.into_iter().map(|s| s.expect("every index evaluated")).collect()
}
