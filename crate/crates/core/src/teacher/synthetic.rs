//! A teacher with hidden utilities `h_x · w_u` over seeded unit vectors.
//!
//! With `tau == 0` it ranks by utility (ties within 1e-12 broken by image id)
//! and is therefore transitive. With `tau > 0` rankings are Plackett–Luce
//! draws with weights `exp(utility / tau)`, sampled by Gumbel perturbation;
//! every pair then follows the Bradley–Terry law `σ((u_i - u_j) / tau)`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::RwLock;

use rand::Rng;

use super::{Teacher, TeacherError, TeacherRanking, TeacherRequest};
use crate::embedding::{dot, normalize, random_unit};
use crate::rng;

const TIE_TOLERANCE: f64 = 1e-12;

pub struct SyntheticTeacher {
    id: String,
    dim: usize,
    tau: f64,
    seed: u64,
    personas: RwLock<HashMap<String, Vec<f64>>>,
    images: RwLock<HashMap<String, Vec<f64>>>,
}

impl SyntheticTeacher {
    pub fn new(dim: usize, tau: f64, seed: u64) -> Self {
        assert!(dim >= 2, "hidden dimension must be at least 2");
        assert!(tau >= 0.0 && tau.is_finite(), "tau must be finite and non-negative");
        Self {
            id: format!("synthetic-d{dim}-tau{tau}-s{seed}"),
            dim,
            tau,
            seed,
            personas: RwLock::new(HashMap::new()),
            images: RwLock::new(HashMap::new()),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pins a persona's hidden vector instead of deriving it from the seed.
    pub fn set_persona_vector(&self, id: &str, v: &[f64]) {
        let unit = normalize(v).expect("non-zero hidden vector");
        self.personas.write().unwrap().insert(id.to_string(), unit);
    }

    pub fn set_image_vector(&self, id: &str, v: &[f64]) {
        let unit = normalize(v).expect("non-zero hidden vector");
        self.images.write().unwrap().insert(id.to_string(), unit);
    }

    fn hidden(&self, table: &RwLock<HashMap<String, Vec<f64>>>, kind: &str, id: &str) -> Vec<f64> {
        if let Some(v) = table.read().unwrap().get(id) {
            return v.clone();
        }
        let mut stream = rng::keyed_stream(self.seed, kind, id);
        let v = random_unit(&mut stream, self.dim);
        table.write().unwrap().entry(id.to_string()).or_insert(v).clone()
    }

    pub fn persona_vector(&self, id: &str) -> Vec<f64> {
        self.hidden(&self.personas, "hidden-persona", id)
    }

    pub fn image_vector(&self, id: &str) -> Vec<f64> {
        self.hidden(&self.images, "hidden-image", id)
    }

    pub fn utility(&self, persona_id: &str, image_id: &str) -> f64 {
        dot(&self.persona_vector(persona_id), &self.image_vector(image_id))
    }

    /// The catalog item with the highest utility (ties to the smaller id).
    pub fn argmax<'a>(&self, persona_id: &str, images: &'a [String]) -> &'a str {
        let mut best = &images[0];
        let mut best_u = self.utility(persona_id, best);
        for id in &images[1..] {
            let u = self.utility(persona_id, id);
            if u > best_u + TIE_TOLERANCE || ((u - best_u).abs() <= TIE_TOLERANCE && id < best) {
                best = id;
                best_u = u;
            }
        }
        best
    }
}

fn ranks_from_order(order: &[usize]) -> Vec<u32> {
    let mut ranking = vec![0u32; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranking[i] = pos as u32 + 1;
    }
    ranking
}

impl Teacher for SyntheticTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        let utilities: Vec<f64> = request
            .candidates
            .iter()
            .map(|c| self.utility(&request.persona_id, c))
            .collect();
        let keys: Vec<f64> = if self.tau == 0.0 {
            utilities
        } else {
            let key = format!(
                "{}\u{0}{}\u{0}{}",
                request.persona_id,
                request.candidates.join("\u{1}"),
                request.nonce
            );
            let mut stream = rng::keyed_stream(self.seed, rng::STREAM_TEACHER, &key);
            utilities
                .iter()
                .map(|u| {
                    let uniform: f64 = stream.random_range(f64::MIN_POSITIVE..1.0);
                    u / self.tau - (-uniform.ln()).ln()
                })
                .collect()
        };
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| {
            let diff = keys[b] - keys[a];
            if diff.abs() <= TIE_TOLERANCE {
                request.candidates[a].cmp(&request.candidates[b])
            } else if diff > 0.0 {
                Ordering::Greater
            } else {
                Ordering::Less
            }
        });
        Ok(TeacherRanking {
            ranking: ranks_from_order(&order),
            teacher_id: self.id.clone(),
            raw_response: None,
        })
    }

    fn max_parallel(&self) -> usize {
        8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_utilities(utilities: &[f64]) -> (SyntheticTeacher, Vec<String>) {
        let t = SyntheticTeacher::new(2, 0.0, 1);
        t.set_persona_vector("p", &[1.0, 0.0]);
        let ids: Vec<String> = (0..utilities.len()).map(|i| format!("img{i}")).collect();
        for (id, &u) in ids.iter().zip(utilities) {
            t.set_image_vector(id, &[u, (1.0 - u * u).sqrt()]);
        }
        (t, ids)
    }

    #[test]
    fn ranks_by_utility() {
        let (t, ids) = with_utilities(&[0.9, 0.1, 0.5]);
        let r = t.rank(&TeacherRequest::new("p", "", ids.clone())).unwrap();
        assert_eq!(r.ranking, vec![1, 3, 2]);
        assert_eq!(t.compare("p", "", &ids[1], &ids[2]).unwrap(), ids[2]);
        assert_eq!(t.compare("p", "", &ids[2], &ids[1]).unwrap(), ids[2]);
    }

    #[test]
    fn permutation_equivariant() {
        let (t, ids) = with_utilities(&[0.3, -0.2, 0.8, 0.1]);
        let base = t.rank(&TeacherRequest::new("p", "", ids.clone())).unwrap().ranking;
        let perm = [2usize, 0, 3, 1];
        let shuffled: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let r = t.rank(&TeacherRequest::new("p", "", shuffled)).unwrap().ranking;
        for (pos, &i) in perm.iter().enumerate() {
            assert_eq!(r[pos], base[i]);
        }
    }

    #[test]
    fn ties_break_by_id() {
        let (t, _) = with_utilities(&[]);
        t.set_image_vector("b", &[0.5, 0.5]);
        t.set_image_vector("a", &[0.5, 0.5]);
        let r = t
            .rank(&TeacherRequest::new("p", "", vec!["b".into(), "a".into()]))
            .unwrap();
        assert_eq!(r.ranking, vec![2, 1]);
    }

    #[test]
    fn seeded_vectors_are_stable() {
        let a = SyntheticTeacher::new(8, 0.0, 3);
        let b = SyntheticTeacher::new(8, 0.0, 3);
        assert_eq!(a.image_vector("x"), b.image_vector("x"));
        assert_eq!(a.utility("p", "x"), b.utility("p", "x"));
        assert_ne!(a.image_vector("x"), SyntheticTeacher::new(8, 0.0, 4).image_vector("x"));
    }

    #[test]
    fn noisy_ranking_depends_on_nonce_only() {
        let t = SyntheticTeacher::new(4, 0.5, 9);
        let ids: Vec<String> = (0..5).map(|i| format!("i{i}")).collect();
        let r1 = t
            .rank(&TeacherRequest::new("p", "", ids.clone()).with_step(0, 1))
            .unwrap();
        let r2 = t
            .rank(&TeacherRequest::new("p", "", ids.clone()).with_step(0, 1))
            .unwrap();
        assert_eq!(r1, r2);
        let differs = (2..40).any(|n| {
            t.rank(&TeacherRequest::new("p", "", ids.clone()).with_step(0, n))
                .unwrap()
                != r1
        });
        assert!(differs);
    }
}
