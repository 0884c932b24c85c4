//! Ground-truth preference pairs from session rankings, thresholded pair
//! predictions with abstention, and their aggregation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One ground-truth preference: `preferred` out-ranked `other` in the same
/// session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub session_id: String,
    pub preferred: String,
    pub other: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDecision {
    PreferFirst,
    PreferSecond,
    Abstain,
}

/// Aggregate prediction counts over a pair set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub n_abstain: usize,
    /// Over decided pairs; NaN-free: 0 when nothing was decided.
    pub accuracy: f64,
    /// Decided / total.
    pub selection_rate: f64,
    /// n_correct - penalty * n_incorrect.
    pub objective: i64,
}

impl PredictionOutcome {
    pub fn from_counts(n_correct: usize, n_incorrect: usize, n_abstain: usize, penalty: i64) -> Self {
        let decided = n_correct + n_incorrect;
        let total = decided + n_abstain;
        PredictionOutcome {
            n_correct,
            n_incorrect,
            n_abstain,
            accuracy: if decided > 0 {
                n_correct as f64 / decided as f64
            } else {
                0.0
            },
            selection_rate: if total > 0 {
                decided as f64 / total as f64
            } else {
                0.0
            },
            objective: n_correct as i64 - penalty * n_incorrect as i64,
        }
    }
}

/// All unordered image pairs of one session, oriented preferred-first by
/// rank (rank 1 beats rank 2, and so on). `images` holds (image_id, rank)
/// for the session's valid images.
pub fn pairs_from_ranking(session_id: &str, images: &[(String, u8)]) -> Result<Vec<PreferencePair>> {
    let mut seen = BTreeSet::new();
    for (_, rank) in images {
        if !seen.insert(*rank) {
            return Err(Error::data(format!(
                "session {session_id}: duplicate rank {rank}"
            )));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..images.len() {
        for j in (i + 1)..images.len() {
            let (a, b) = (&images[i], &images[j]);
            let (preferred, other) = if a.1 < b.1 { (a, b) } else { (b, a) };
            pairs.push(PreferencePair {
                session_id: session_id.to_string(),
                preferred: preferred.0.clone(),
                other: other.0.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Predicts which of two scores is preferred; abstains when the gap is below
/// the difference threshold `d`. Exact ties abstain at every `d`, including
/// `d = 0`.
pub fn predict_pair(s1: f64, s2: f64, d: f64) -> PairDecision {
    if s1 > s2 && s1 - s2 >= d {
        PairDecision::PreferFirst
    } else if s2 > s1 && s2 - s1 >= d {
        PairDecision::PreferSecond
    } else {
        PairDecision::Abstain
    }
}

/// Scores every pair with `score_of` (preferred image first); pairs with a
/// missing score abstain.
pub fn evaluate<F>(pairs: &[PreferencePair], score_of: F, d: f64, penalty: i64) -> PredictionOutcome
where
    F: Fn(&str) -> Option<f64>,
{
    let mut n_correct = 0;
    let mut n_incorrect = 0;
    let mut n_abstain = 0;
    for pair in pairs {
        match (score_of(&pair.preferred), score_of(&pair.other)) {
            (Some(sp), Some(so)) => match predict_pair(sp, so, d) {
                PairDecision::PreferFirst => n_correct += 1,
                PairDecision::PreferSecond => n_incorrect += 1,
                PairDecision::Abstain => n_abstain += 1,
            },
            _ => n_abstain += 1,
        }
    }
    PredictionOutcome::from_counts(n_correct, n_incorrect, n_abstain, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn ranked(ids: &[&str]) -> Vec<(String, u8)> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), (i + 1) as u8))
            .collect()
    }

    #[test]
    fn pairs_from_three_images() {
        let pairs = pairs_from_ranking("s1", &ranked(&["A", "B", "C"])).unwrap();
        let got: Vec<(&str, &str)> = pairs
            .iter()
            .map(|p| (p.preferred.as_str(), p.other.as_str()))
            .collect();
        assert_eq!(got, vec![("A", "B"), ("A", "C"), ("B", "C")]);
    }

    #[test]
    fn five_images_make_ten_pairs() {
        let pairs = pairs_from_ranking("s1", &ranked(&["A", "B", "C", "D", "E"])).unwrap();
        assert_eq!(pairs.len(), 10);
    }

    #[test]
    fn degenerate_sessions() {
        assert!(pairs_from_ranking("s1", &ranked(&["A"])).unwrap().is_empty());
        let err = pairs_from_ranking("s1", &[("A".into(), 1), ("B".into(), 1)]).unwrap_err();
        assert!(err.to_string().contains("duplicate rank"), "{err}");
    }

    #[test]
    fn threshold_prediction() {
        assert_eq!(predict_pair(-0.1, -0.5, 0.42), PairDecision::Abstain);
        assert_eq!(predict_pair(-0.05, -0.6, 0.42), PairDecision::PreferFirst);
        assert_eq!(predict_pair(0.3, 0.3, 0.0), PairDecision::Abstain);
        assert_eq!(predict_pair(-0.6, -0.05, 0.42), PairDecision::PreferSecond);
    }

    #[test]
    fn evaluate_arithmetic() {
        let pairs = pairs_from_ranking("s1", &ranked(&["A", "B", "C", "D"]))
            .unwrap()
            .into_iter()
            .take(4)
            .collect::<Vec<_>>();
        // A > B, A > C, B > C correct; A vs D wrong.
        let scores: BTreeMap<&str, f64> =
            [("A", 3.0), ("B", 2.0), ("C", 1.0), ("D", 4.0)].into();
        let outcome = evaluate(&pairs, |id| scores.get(id).copied(), 0.0, 2);
        assert_eq!(outcome.n_correct, 3);
        assert_eq!(outcome.n_incorrect, 1);
        assert_eq!(outcome.n_abstain, 0);
        assert_eq!(outcome.accuracy, 0.75);
        assert_eq!(outcome.objective, 1);
    }

    #[test]
    fn huge_threshold_abstains_everywhere() {
        let pairs = pairs_from_ranking("s1", &ranked(&["A", "B", "C"])).unwrap();
        let outcome = evaluate(&pairs, |_| Some(1.0), 1e9, 2);
        assert_eq!(outcome.n_abstain, 3);
        assert_eq!(outcome.selection_rate, 0.0);
        assert_eq!(outcome.objective, 0);
    }

    #[test]
    fn oracle_scores_are_perfect() {
        let pairs = pairs_from_ranking("s1", &ranked(&["A", "B", "C", "D", "E"])).unwrap();
        let scores: BTreeMap<&str, f64> =
            [("A", 5.0), ("B", 4.0), ("C", 3.0), ("D", 2.0), ("E", 1.0)].into();
        let outcome = evaluate(&pairs, |id| scores.get(id).copied(), 0.0, 2);
        assert_eq!(outcome.accuracy, 1.0);
        assert_eq!(outcome.selection_rate, 1.0);
    }

    #[test]
    fn missing_score_abstains() {
        let pairs = pairs_from_ranking("s1", &ranked(&["A", "B"])).unwrap();
        let scores: BTreeMap<&str, f64> = [("A", 5.0)].into();
        let outcome = evaluate(&pairs, |id| scores.get(id).copied(), 0.0, 2);
        assert_eq!(outcome.n_abstain, 1);
    }

    proptest! {
        #[test]
        fn raising_d_never_raises_errors_or_selection(
            scores in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40),
            d1 in 0.0f64..1.0,
            d2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let count = |d: f64| {
                let mut inc = 0usize;
                let mut decided = 0usize;
                for &(a, b) in &scores {
                    match predict_pair(a, b, d) {
                        PairDecision::PreferFirst => decided += 1,
                        PairDecision::PreferSecond => { decided += 1; inc += 1; }
                        PairDecision::Abstain => {}
                    }
                }
                (inc, decided)
            };
            let (inc_lo, dec_lo) = count(lo);
            let (inc_hi, dec_hi) = count(hi);
            prop_assert!(inc_hi <= inc_lo);
            prop_assert!(dec_hi <= dec_lo);
        }

        #[test]
        fn prediction_is_antisymmetric(a in -3.0f64..3.0, b in -3.0f64..3.0, d in 0.0f64..1.0) {
            let fwd = predict_pair(a, b, d);
            let rev = predict_pair(b, a, d);
            let expected = match fwd {
                PairDecision::PreferFirst => PairDecision::PreferSecond,
                PairDecision::PreferSecond => PairDecision::PreferFirst,
                PairDecision::Abstain => PairDecision::Abstain,
            };
            prop_assert_eq!(rev, expected);
        }

        #[test]
        fn objective_never_exceeds_correct_count(
            correct in 0usize..100,
            incorrect in 0usize..100,
            abstain in 0usize..100,
        ) {
            let o = PredictionOutcome::from_counts(correct, incorrect, abstain, 2);
            prop_assert!(o.objective <= o.n_correct as i64);
            prop_assert_eq!(o.n_correct + o.n_incorrect + o.n_abstain, correct + incorrect + abstain);
        }
    }
}
