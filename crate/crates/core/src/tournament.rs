//! Single-elimination tournaments over teacher pairwise comparisons, used to
//! label the best catalog image for each evaluation persona.
//!
//! `N` entrants are padded to the next power of two with byes. The highest
//! indexed entrants get the byes and advance without a comparison, so every
//! tournament costs exactly `N - 1` comparisons.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::PersonaRecord;
use crate::rng;
use crate::teacher::{run_parallel, Teacher, TeacherError};

#[derive(Debug, Error)]
pub enum TournamentError {
    #[error("a tournament needs at least 2 entrants, got {0}")]
    TooFewEntrants(usize),
    #[error("teacher failed in round {round} for persona `{persona_id}`: {source}")]
    Teacher {
        persona_id: String,
        round: u32,
        /// Matches completed before the failure.
        partial: Vec<Match>,
        #[source]
        source: TeacherError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One played comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub round: u32,
    pub u: String,
    pub v: String,
    pub winner: String,
}

/// First-round layout: consecutive pairs, then entrants that skip round 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bracket {
    pub pairs: Vec<(usize, usize)>,
    pub byes: Vec<usize>,
}

/// Pairs the first `2N - M` entrants consecutively (`M` = next power of two)
/// and gives the remaining `M - N` entrants a bye.
pub fn seed_bracket(n: usize) -> Bracket {
    if n < 2 {
        return Bracket {
            pairs: Vec::new(),
            byes: (0..n).collect(),
        };
    }
    let m = n.next_power_of_two();
    let paired = 2 * n - m;
    Bracket {
        pairs: (0..paired / 2).map(|i| (2 * i, 2 * i + 1)).collect(),
        byes: (paired..n).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentLabel {
    pub persona_id: String,
    pub winner_id: String,
    pub n: usize,
    pub rounds: u32,
    pub comparisons: usize,
    pub byes: usize,
    pub bracket_seed: u64,
    pub teacher: String,
    pub bracket: Vec<Match>,
}

impl TournamentLabel {
    pub fn record(&self) -> LabelRecord {
        LabelRecord {
            persona_id: self.persona_id.clone(),
            winner_id: self.winner_id.clone(),
            n: self.n,
            comparisons: self.comparisons,
            bracket_seed: self.bracket_seed,
            teacher: self.teacher.clone(),
        }
    }
}

/// One line of the label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub persona_id: String,
    pub winner_id: String,
    pub n: usize,
    pub comparisons: usize,
    pub bracket_seed: u64,
    pub teacher: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BracketRecord {
    persona_id: String,
    bracket: Vec<Match>,
}

/// Runs one tournament. Comparisons inside a round run concurrently (up to
/// `parallelism`); rounds are sequential.
pub fn run_tournament<T: Teacher + ?Sized>(
    persona: &PersonaRecord,
    entrants: &[String],
    teacher: &T,
    parallelism: usize,
) -> Result<TournamentLabel, TournamentError> {
    let n = entrants.len();
    if n < 2 {
        return Err(TournamentError::TooFewEntrants(n));
    }
    let seeded = seed_bracket(n);
    let mut log: Vec<Match> = Vec::with_capacity(n - 1);
    let mut pairs: Vec<(usize, usize)> = seeded.pairs.clone();
    let mut carried: Vec<usize> = seeded.byes.clone();
    let mut round = 0u32;
    loop {
        let results = run_parallel(pairs.len(), parallelism, |k| {
            let (a, b) = pairs[k];
            teacher.compare(&persona.id, &persona.text, &entrants[a], &entrants[b])
        });
        let mut survivors = Vec::with_capacity(pairs.len() + carried.len());
        for (&(a, b), result) in pairs.iter().zip(results) {
            let winner = result.map_err(|source| TournamentError::Teacher {
                persona_id: persona.id.clone(),
                round,
                partial: log.clone(),
                source,
            })?;
            let w = if winner == entrants[a] { a } else { b };
            log.push(Match {
                round,
                u: entrants[a].clone(),
                v: entrants[b].clone(),
                winner,
            });
            survivors.push(w);
        }
        survivors.append(&mut carried);
        round += 1;
        if survivors.len() == 1 {
            return Ok(TournamentLabel {
                persona_id: persona.id.clone(),
                winner_id: entrants[survivors[0]].clone(),
                n,
                rounds: round,
                comparisons: log.len(),
                byes: seeded.byes.len(),
                bracket_seed: 0,
                teacher: teacher.id().to_string(),
                bracket: log,
            });
        }
        pairs = survivors.chunks(2).map(|c| (c[0], c[1])).collect();
    }
}

/// Options for [`label_set`].
#[derive(Debug, Clone)]
pub struct LabelSetOptions {
    pub parallelism: usize,
    /// Shuffle each persona's bracket with a seed derived from this one.
    /// `None` keeps catalog order and records seed 0.
    pub shuffle_seed: Option<u64>,
    pub labels_path: PathBuf,
    pub bracket_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSetOutcome {
    /// All labels in the file after the run, in file order.
    pub labels: Vec<LabelRecord>,
    pub ran: usize,
    pub skipped: usize,
    pub comparisons: usize,
}

/// Reads a label file, skipping lines that do not parse.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>, TournamentError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            Err(e) => warn!("{}:{}: skipping bad label line: {e}", path.display(), lineno + 1),
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<(), TournamentError> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn append_line<S: Serialize>(path: &Path, value: &S) -> Result<(), TournamentError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line)?;
    f.flush()?;
    Ok(())
}

/// Labels every persona not already present in the label file. Each label is
/// appended as soon as its tournament finishes, so an interrupted run resumes
/// where it stopped.
pub fn label_set<T: Teacher + ?Sized>(
    personas: &[PersonaRecord],
    entrants: &[String],
    teacher: &T,
    options: &LabelSetOptions,
) -> Result<LabelSetOutcome, TournamentError> {
    let mut labels = if options.labels_path.exists() {
        read_labels(&options.labels_path)?
    } else {
        Vec::new()
    };
    let done: HashSet<String> = labels.iter().map(|l| l.persona_id.clone()).collect();
    let n = entrants.len();
    let bracket = seed_bracket(n);
    if !bracket.byes.is_empty() {
        info!(
            "{n} entrants is not a power of two: {} byes in round 0, {} comparisons per persona",
            bracket.byes.len(),
            n.saturating_sub(1)
        );
    }

    let mut outcome = LabelSetOutcome {
        labels: Vec::new(),
        ran: 0,
        skipped: 0,
        comparisons: 0,
    };
    for persona in personas {
        if done.contains(&persona.id) {
            outcome.skipped += 1;
            continue;
        }
        let (order, bracket_seed) = match options.shuffle_seed {
            Some(seed) => {
                let s = rng::derive_u64(seed, rng::STREAM_BRACKET, &persona.id);
                let mut order = entrants.to_vec();
                order.shuffle(&mut rng::substream(s, rng::STREAM_BRACKET, 0));
                (order, s)
            }
            None => (entrants.to_vec(), 0),
        };
        let mut label = run_tournament(persona, &order, teacher, options.parallelism)?;
        label.bracket_seed = bracket_seed;
        let record = label.record();
        append_line(&options.labels_path, &record)?;
        if let Some(path) = &options.bracket_path {
            append_line(
                path,
                &BracketRecord {
                    persona_id: persona.id.clone(),
                    bracket: label.bracket.clone(),
                },
            )?;
        }
        outcome.ran += 1;
        outcome.comparisons += label.comparisons;
        labels.push(record);
    }
    outcome.labels = labels;
    Ok(outcome)
}
