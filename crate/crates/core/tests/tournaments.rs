mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use prefdistill_core::embedding::PersonaRecord;
use prefdistill_core::teacher::{
    CountingTeacher, SyntheticTeacher, Teacher, TeacherError, TeacherRanking, TeacherRequest,
};
use prefdistill_core::tournament::{label_set, read_labels, run_tournament, LabelSetOptions, TournamentError};

fn persona(id: &str) -> PersonaRecord {
    PersonaRecord::new(id, format!("persona {id}"), &[1.0, 0.0]).unwrap()
}

fn entrants(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:04}")).collect()
}

/// Fails every call after the first `ok` ones.
struct Flaky<T> {
    inner: T,
    ok: usize,
    calls: AtomicUsize,
}

impl<T: Teacher> Teacher for Flaky<T> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn rank_unchecked(&self, r: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok {
            return Err(TeacherError::TeacherUnavailable {
                attempts: 1,
                message: "down".into(),
            });
        }
        self.inner.rank_unchecked(r)
    }
}

#[test]
fn noiseless_winner_is_the_argmax_for_any_size() {
    for n in [2, 3, 7, 16, 17, 100, 333] {
        let teacher = CountingTeacher::new(SyntheticTeacher::new(5, 0.0, n as u64));
        let ids = entrants(n);
        for p in ["a", "b", "c"] {
            let label = run_tournament(&persona(p), &ids, &teacher, 4).unwrap();
            assert_eq!(label.winner_id, teacher.inner().argmax(p, &ids));
            assert_eq!(label.comparisons, n - 1);
            assert_eq!(label.bracket.len(), n - 1);
            assert_eq!(label.rounds, n.next_power_of_two().trailing_zeros());
            // every match went to the higher-utility entrant
            for m in &label.bracket {
                let (uu, uv) = (teacher.inner().utility(p, &m.u), teacher.inner().utility(p, &m.v));
                assert_eq!(m.winner, if uu >= uv { m.u.clone() } else { m.v.clone() });
            }
        }
        assert_eq!(teacher.calls(), 3 * (n as u64 - 1));
    }
}

#[test]
fn every_entrant_but_the_winner_loses_exactly_once() {
    let teacher = SyntheticTeacher::new(4, 0.5, 3);
    let ids = entrants(45);
    let label = run_tournament(&persona("p"), &ids, &teacher, 8).unwrap();
    let mut losses = std::collections::HashMap::new();
    for m in &label.bracket {
        let loser = if m.winner == m.u { &m.v } else { &m.u };
        *losses.entry(loser.clone()).or_insert(0) += 1;
    }
    assert_eq!(losses.len(), 44);
    assert!(losses.values().all(|&c| c == 1));
    assert!(!losses.contains_key(&label.winner_id));
}

#[test]
fn teacher_failure_reports_partial_bracket() {
    let teacher = Flaky {
        inner: SyntheticTeacher::new(4, 0.0, 1),
        ok: 5,
        calls: AtomicUsize::new(0),
    };
    match run_tournament(&persona("p"), &entrants(8), &teacher, 1) {
        Err(TournamentError::Teacher { round, partial, .. }) => {
            assert_eq!(round, 1);
            assert_eq!(partial.len(), 5);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        run_tournament(&persona("p"), &entrants(1), &teacher, 1),
        Err(TournamentError::TooFewEntrants(1))
    ));
}

#[test]
fn interrupted_labelling_resumes_without_repeating_work() {
    let dir = tempfile::tempdir().unwrap();
    let options = LabelSetOptions {
        parallelism: 4,
        shuffle_seed: Some(5),
        labels_path: dir.path().join("labels.jsonl"),
        bracket_path: Some(dir.path().join("labels.brackets.jsonl")),
    };
    let personas: Vec<PersonaRecord> = ["a", "b", "c", "d"].iter().map(|p| persona(p)).collect();
    let ids = entrants(8);
    let flaky = Flaky {
        inner: SyntheticTeacher::new(4, 0.0, 1),
        ok: 7 * 2 + 3,
        calls: AtomicUsize::new(0),
    };
    assert!(label_set(&personas, &ids, &flaky, &options).is_err());
    assert_eq!(read_labels(&options.labels_path).unwrap().len(), 2);

    let teacher = CountingTeacher::new(SyntheticTeacher::new(4, 0.0, 1));
    let out = label_set(&personas, &ids, &teacher, &options).unwrap();
    assert_eq!((out.ran, out.skipped, out.comparisons), (2, 2, 14));
    assert_eq!(teacher.calls(), 14);
    assert_eq!(out.labels.len(), 4);
    let brackets = std::fs::read_to_string(options.bracket_path.as_ref().unwrap()).unwrap();
    assert_eq!(brackets.lines().count(), 4);
    for l in &out.labels {
        assert_eq!(l.winner_id, teacher.inner().argmax(&l.persona_id, &ids));
        assert_ne!(l.bracket_seed, 0);
    }

    let again = label_set(&personas, &ids, &teacher, &options).unwrap();
    assert_eq!((again.ran, again.skipped), (0, 4));
    assert_eq!(teacher.calls(), 14);
}
