//! Bradley–Terry distillation loss over teacher-ranked candidate groups and
//! its exact gradient with respect to the raw image vectors.
//!
//! For a persona embedding `e` and a raw image row `v` with unit view
//! `n = v / |v|`, the score is `s = e·n`. Each ranked group of size `N`
//! expands into `N(N-1)/2` pairs with label `y = [r_i < r_j]` and loss
//! `BCE(σ(s_i - s_j), y)`. The chain back to `v` is
//!
//! ```text
//! dL/ds_i = Σ_j (P_ij - y_ij) - Σ_k (P_ki - y_ki)
//! dL/dv   = dL/ds · (e - (e·n) n) / |v|
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, norm, CatalogStore, PersonaSet};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("ranking {0:?} is not a permutation of 1..=N")]
    InvalidPermutation(Vec<u32>),
    #[error("group needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("ranking has {ranking} entries for {candidates} candidates")]
    LengthMismatch { candidates: usize, ranking: usize },
    #[error("candidate `{0}` appears more than once")]
    DuplicateCandidate(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("normalized cache is stale")]
    StaleCache,
}

/// One teacher judgment. Also the JSON Lines record used by the teacher
/// cache and the training log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub persona_id: String,
    pub candidates: Vec<String>,
    /// `ranking[i]` is the rank of `candidates[i]`; 1 is the most relevant.
    pub ranking: Vec<u32>,
    #[serde(default)]
    pub teacher: String,
    #[serde(default)]
    pub step: u64,
}

impl RankedGroup {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.candidates.len() < 2 {
            return Err(LossError::TooFewCandidates(self.candidates.len()));
        }
        if self.ranking.len() != self.candidates.len() {
            return Err(LossError::LengthMismatch {
                candidates: self.candidates.len(),
                ranking: self.ranking.len(),
            });
        }
        validate_permutation(&self.ranking)?;
        let mut seen = std::collections::HashSet::with_capacity(self.candidates.len());
        for c in &self.candidates {
            if !seen.insert(c.as_str()) {
                return Err(LossError::DuplicateCandidate(c.clone()));
            }
        }
        Ok(())
    }
}

/// Checks that `ranking` contains each of `1..=len` exactly once.
pub fn validate_permutation(ranking: &[u32]) -> Result<(), LossError> {
    let n = ranking.len();
    let mut seen = vec![false; n];
    for &r in ranking {
        let slot = (r as usize).wrapping_sub(1);
        if r == 0 || slot >= n || seen[slot] {
            return Err(LossError::InvalidPermutation(ranking.to_vec()));
        }
        seen[slot] = true;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairPreference {
    pub i: usize,
    pub j: usize,
    /// True when candidate `i` is ranked ahead of candidate `j`.
    pub y: bool,
}

/// All `(i, j)` pairs with `i < j`, in lexicographic order.
pub fn pairs_from_ranking(ranking: &[u32]) -> Result<Vec<PairPreference>, LossError> {
    validate_permutation(ranking)?;
    let n = ranking.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(PairPreference {
                i,
                j,
                y: ranking[i] < ranking[j],
            });
        }
    }
    Ok(out)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that the item scored `s_i` is preferred over the one scored `s_j`.
#[inline]
pub fn bt_probability(s_i: f64, s_j: f64) -> f64 {
    sigmoid(s_i - s_j)
}

/// Binary cross-entropy of `p` against label `y`, with `p` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
#[inline]
pub fn pairwise_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Loss of one group and the gradient for each candidate's raw row.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGradient {
    pub loss: f64,
    /// `(catalog row, dL/d raw row)` in candidate order.
    pub grads: Vec<(usize, Vec<f64>)>,
}

/// Loss and gradients for one group given the persona embedding and the
/// candidates' raw rows. Independent of any store. `persona` must be unit
/// length.
pub fn loss_and_grad_raw(persona: &[f64], raws: &[&[f64]], ranking: &[u32]) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    let pairs = pairs_from_ranking(ranking)?;
    let n = raws.len();
    if n != ranking.len() {
        return Err(LossError::LengthMismatch {
            candidates: n,
            ranking: ranking.len(),
        });
    }
    let norms: Vec<f64> = raws.iter().map(|r| norm(r)).collect();
    let units: Vec<Vec<f64>> = raws
        .iter()
        .zip(&norms)
        .map(|(r, &nv)| r.iter().map(|x| x / nv).collect())
        .collect();
    let scores: Vec<f64> = units.iter().map(|u| dot(persona, u)).collect();
    Ok(loss_and_grad_units(persona, &units, &norms, &scores, &pairs))
}

fn loss_and_grad_units(
    persona: &[f64],
    units: &[Vec<f64>],
    norms: &[f64],
    scores: &[f64],
    pairs: &[PairPreference],
) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let mut d_score = vec![0.0; units.len()];
    for pair in pairs {
        let p = bt_probability(scores[pair.i], scores[pair.j]);
        loss += pairwise_loss(p, pair.y);
        let g = p - if pair.y { 1.0 } else { 0.0 };
        d_score[pair.i] += g;
        d_score[pair.j] -= g;
    }
    let grads = units
        .iter()
        .zip(norms)
        .zip(scores)
        .zip(&d_score)
        .map(|(((unit, &nv), &s), &ds)| persona.iter().zip(unit).map(|(&e, &u)| ds * (e - s * u) / nv).collect())
        .collect();
    (loss, grads)
}

/// Loss and per-candidate raw-row gradients for one ranked group against the
/// current student. The persona side receives no gradient.
pub fn group_loss_grad(
    group: &RankedGroup,
    personas: &PersonaSet,
    store: &CatalogStore,
) -> Result<GroupGradient, LossError> {
    group.validate()?;
    let persona = personas
        .get(&group.persona_id)
        .ok_or_else(|| LossError::UnknownId(group.persona_id.clone()))?;
    let rows: Vec<usize> = group
        .candidates
        .iter()
        .map(|c| store.index_of(c).ok_or_else(|| LossError::UnknownId(c.clone())))
        .collect::<Result<_, _>>()?;
    if !store.is_fresh() {
        return Err(LossError::StaleCache);
    }
    let units: Vec<Vec<f64>> = rows.iter().map(|&r| store.normalized_row(r).to_vec()).collect();
    let norms: Vec<f64> = rows.iter().map(|&r| norm(store.raw_row(r))).collect();
    let scores: Vec<f64> = units.iter().map(|u| dot(&persona.embedding, u)).collect();
    let pairs = pairs_from_ranking(&group.ranking)?;
    let (loss, grads) = loss_and_grad_units(&persona.embedding, &units, &norms, &scores, &pairs);
    Ok(GroupGradient {
        loss,
        grads: rows.into_iter().zip(grads).collect(),
    })
}

/// Gradient rows keyed by catalog row; rows absent from the map are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGradient {
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseGradient {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn add_row(&mut self, row: usize, grad: &[f64]) {
        match self.rows.get_mut(&row) {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            None => {
                self.rows.insert(row, grad.to_vec());
            }
        }
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: SparseGradient,
}

/// Sums group losses and gradients. Groups are evaluated in parallel; the
/// reduction runs in group order, then candidate order, so the result is
/// bit-reproducible.
pub fn batch_loss_grad(
    groups: &[RankedGroup],
    personas: &PersonaSet,
    store: &CatalogStore,
) -> Result<BatchGradient, LossError> {
    use rayon::prelude::*;
    let per_group: Vec<GroupGradient> = groups
        .par_iter()
        .map(|g| group_loss_grad(g, personas, store))
        .collect::<Result<_, _>>()?;
    let mut out = BatchGradient::default();
    for gg in &per_group {
        out.loss += gg.loss;
        for (row, grad) in &gg.grads {
            out.grad.add_row(*row, grad);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{normalize, PersonaRecord};
    use std::f64::consts::LN_2;

    fn world(rows: Vec<Vec<f64>>, persona: &[f64]) -> (PersonaSet, CatalogStore, Vec<String>) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("u{i}")).collect();
        let dim = persona.len();
        let store = CatalogStore::new(ids.clone(), dim, rows.concat()).unwrap();
        let personas = PersonaSet::new(vec![PersonaRecord::new("p", "", persona).unwrap()]).unwrap();
        (personas, store, ids)
    }

    fn group(ids: &[String], ranking: Vec<u32>) -> RankedGroup {
        RankedGroup {
            persona_id: "p".into(),
            candidates: ids.to_vec(),
            ranking,
            teacher: "t".into(),
            step: 0,
        }
    }

    #[test]
    fn pair_expansion() {
        assert_eq!(
            pairs_from_ranking(&[1, 2]).unwrap(),
            vec![PairPreference { i: 0, j: 1, y: true }]
        );
        assert_eq!(pairs_from_ranking(&[2, 5, 1, 3, 4]).unwrap().len(), 10);
        let p = pairs_from_ranking(&[3, 1, 2]).unwrap();
        let ys: Vec<bool> = p.iter().map(|q| q.y).collect();
        assert_eq!(ys, vec![false, false, true]);
        assert_eq!((p[2].i, p[2].j), (1, 2));
    }

    #[test]
    fn invalid_permutations() {
        for bad in [vec![1, 1], vec![0, 1], vec![1, 3], vec![2, 3, 4]] {
            assert!(matches!(
                pairs_from_ranking(&bad),
                Err(LossError::InvalidPermutation(_))
            ));
        }
        let ids = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            group(&ids, vec![1, 2]).validate(),
            Err(LossError::DuplicateCandidate(_))
        ));
        let one = vec!["a".to_string()];
        assert!(matches!(
            group(&one, vec![1]).validate(),
            Err(LossError::TooFewCandidates(1))
        ));
    }

    #[test]
    fn bradley_terry_values() {
        assert_eq!(bt_probability(0.3, 0.3), 0.5);
        assert!((bt_probability(3f64.ln(), 0.0) - 0.75).abs() < 1e-12);
        assert!((bt_probability(0.6, 0.1) - 0.622_459_331_201_854_6).abs() < 1e-12);
        let a = bt_probability(0.9, -0.4);
        assert!((a + bt_probability(-0.4, 0.9) - 1.0).abs() < 1e-15);
        // extreme inputs stay finite and inside (0, 1]
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn pairwise_loss_values() {
        assert!((pairwise_loss(0.5, true) - LN_2).abs() < 1e-12);
        assert!((pairwise_loss(0.75, true) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((pairwise_loss(0.75, false) - 4f64.ln()).abs() < 1e-12);
        assert!(pairwise_loss(0.0, true).is_finite());
        assert!(pairwise_loss(1.0, false).is_finite());
    }

    #[test]
    fn identical_candidates_give_ln2_per_pair_and_equal_tangent_grads() {
        let persona = normalize(&[0.2, 0.5, -0.1, 0.7]).unwrap();
        let row = vec![0.4, -0.3, 0.8, 0.1];
        let (personas, store, ids) = world(vec![row.clone(); 5], &persona);
        let gg = group_loss_grad(&group(&ids, vec![2, 4, 1, 5, 3]), &personas, &store).unwrap();
        assert!((gg.loss - 10.0 * LN_2).abs() < 1e-12);
        let unit = normalize(&row).unwrap();
        let sum: Vec<f64> = (0..4).map(|d| gg.grads.iter().map(|(_, g)| g[d]).sum()).collect();
        // dL/ds for the rank-r candidate is (r - 1 - (N - r)) / 2, so the
        // gradients share one tangent direction with magnitudes set by rank.
        let tangent: Vec<f64> = persona
            .iter()
            .zip(&unit)
            .map(|(e, u)| (e - dot(&persona, &unit) * u) / norm(&row))
            .collect();
        let ranks = [2.0, 4.0, 1.0, 5.0, 3.0];
        for ((_, g), r) in gg.grads.iter().zip(ranks) {
            assert!(dot(g, &unit).abs() < 1e-12);
            let ds = (r - 1.0 - (5.0 - r)) / 2.0;
            for (gd, td) in g.iter().zip(&tangent) {
                assert!((gd - ds * td).abs() < 1e-12);
            }
        }
        assert!(norm(&sum) < 1e-12);
    }

    #[test]
    fn loss_shrinks_with_margin() {
        let persona = vec![1.0, 0.0];
        let mut last_loss = f64::INFINITY;
        let mut last_grad = f64::INFINITY;
        // scores are bounded, so margins only grow until candidate 1 points
        // away from the persona; past a right angle both loss and gradient shrink
        for step in 0..7 {
            let theta = std::f64::consts::FRAC_PI_2 + 0.25 * step as f64;
            let rows = vec![vec![1.0, 0.0], vec![theta.cos(), theta.sin()]];
            let (personas, store, ids) = world(rows, &persona);
            let gg = group_loss_grad(&group(&ids, vec![1, 2]), &personas, &store).unwrap();
            let gnorm: f64 = gg.grads.iter().map(|(_, g)| norm(g)).sum();
            assert!(gg.loss < last_loss);
            assert!(gnorm < last_grad);
            last_loss = gg.loss;
            last_grad = gnorm;
        }
    }

    #[test]
    fn unknown_ids_rejected() {
        let (personas, store, _) = world(vec![vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 0.0]);
        let g = group(&["u0".into(), "nope".into()], vec![1, 2]);
        assert_eq!(
            group_loss_grad(&g, &personas, &store),
            Err(LossError::UnknownId("nope".into()))
        );
        let mut g2 = group(&["u0".into(), "u1".into()], vec![1, 2]);
        g2.persona_id = "ghost".into();
        assert_eq!(
            group_loss_grad(&g2, &personas, &store),
            Err(LossError::UnknownId("ghost".into()))
        );
    }

    #[test]
    fn batch_sums_and_sparsity() {
        let persona = normalize(&[0.3, 0.4, 0.5]).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i as f64).sin() + 0.1, (i as f64 * 1.7).cos(), 0.3 - 0.1 * i as f64])
            .collect();
        let (personas, store, ids) = world(rows, &persona);
        assert_eq!(
            batch_loss_grad(&[], &personas, &store).unwrap(),
            BatchGradient::default()
        );

        let a = group(&ids[0..2], vec![2, 1]);
        let b = group(&ids[2..5], vec![1, 3, 2]);
        let ga = group_loss_grad(&a, &personas, &store).unwrap();
        let gb = group_loss_grad(&b, &personas, &store).unwrap();
        let single = batch_loss_grad(std::slice::from_ref(&a), &personas, &store).unwrap();
        assert_eq!(single.loss, ga.loss);
        let both = batch_loss_grad(&[a, b], &personas, &store).unwrap();
        assert_eq!(both.loss, ga.loss + gb.loss);
        assert!(both.grad.get(5).is_none());
        assert_eq!(both.grad.rows.len(), 5);
        assert_eq!(both.grad.get(3).unwrap(), gb.grads[1].1.as_slice());
    }
}
