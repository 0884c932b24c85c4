//! Leave-one-participant-out (LOPO) grid-search fitting of the valence
//! parameters (k, d), the ensemble weights, and the integration weight, plus
//! pooled held-out evaluation.
//!
//! All lattices are generated as integer multiples of the step so fitted
//! parameters land exactly on the grid. Tie-breaking on flat objectives is
//! lexicographic in lattice index order, which keeps fits deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::au_activation::{
    activation_value, participant_reliability, ParticipantStatus,
};
use crate::data_model::{AuId, ClipKind, Cohort, ModelScores};
use crate::error::{Error, Result};
use crate::frame_filter::{filter_clip, ClipStatus};
use crate::preference::{pairs_from_ranking, PredictionOutcome, PreferencePair};
use crate::scoring::{au4_valence, ensemble_score, mean_std, standardize_one, EnsembleWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub k_min: f64,
    pub k_max: f64,
    pub k_step: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub d_step: f64,
    pub w_step: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub a_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            k_min: 0.1,
            k_max: 2.0,
            k_step: 0.1,
            d_min: 0.0,
            d_max: 1.0,
            d_step: 0.02,
            w_step: 0.1,
            a_min: 0.0,
            a_max: 3.0,
            a_step: 0.1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, min, max, step) in [
            ("k", self.k_min, self.k_max, self.k_step),
            ("d", self.d_min, self.d_max, self.d_step),
            ("a", self.a_min, self.a_max, self.a_step),
        ] {
            if step <= 0.0 {
                return Err(Error::validation(format!("{name}_step must be positive")));
            }
            if max < min {
                return Err(Error::validation(format!("{name} range is empty")));
            }
        }
        if !(0.0 < self.w_step && self.w_step <= 1.0) {
            return Err(Error::validation("w_step must be in (0,1]"));
        }
        if self.k_min <= 0.0 {
            return Err(Error::validation("k_min must be positive"));
        }
        Ok(())
    }
}

/// `min + i*step` for `i = 0..=round((max-min)/step)`.
pub fn lattice(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step).round() as i64;
    (0..=n.max(0)).map(|i| min + i as f64 * step).collect()
}

/// Integer numerators (i, j, m-i-j) of every simplex point on the `1/m`
/// lattice, in lexicographic (i, j) order.
pub fn simplex_lattice(step: f64) -> Vec<[u32; 3]> {
    let m = (1.0 / step).round() as u32;
    let mut points = Vec::new();
    for i in 0..=m {
        for j in 0..=(m - i) {
            points.push([i, j, m - i - j]);
        }
    }
    points
}

fn weights_from_numerators(n: [u32; 3], step: f64) -> EnsembleWeights {
    EnsembleWeights {
        w_ir: n[0] as f64 * step,
        w_pick: n[1] as f64 * step,
        w_hpsv2: n[2] as f64 * step,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValenceFit {
    pub k: f64,
    pub d: f64,
    pub objective: i64,
}

/// Exhaustive sweep over the (k, d) lattice maximizing
/// `n_correct - penalty * n_incorrect` on the training pairs. Ties break to
/// smaller d, then smaller k.
pub fn grid_fit_valence(
    pairs: &[PreferencePair],
    alpha4: &BTreeMap<String, f64>,
    grid: &GridSpec,
    penalty: i64,
) -> Result<ValenceFit> {
    grid.validate()?;
    if pairs.is_empty() {
        return Err(Error::data("empty training set for valence fit"));
    }
    let ks = lattice(grid.k_min, grid.k_max, grid.k_step);
    let ds = lattice(grid.d_min, grid.d_max, grid.d_step);
    let mut best: Option<(i64, usize, usize)> = None; // (objective, d index, k index)
    for (ik, &k) in ks.iter().enumerate() {
        // Signed valence-score gap, preferred minus other; pairs with a
        // missing activation abstain at every threshold.
        let mut diffs = Vec::with_capacity(pairs.len());
        for pair in pairs {
            if let (Some(&a1), Some(&a2)) = (alpha4.get(&pair.preferred), alpha4.get(&pair.other))
            {
                diffs.push(au4_valence(a1, k)? - au4_valence(a2, k)?);
            }
        }
        for (id, &threshold) in ds.iter().enumerate() {
            let mut n_correct = 0i64;
            let mut n_incorrect = 0i64;
            for &x in &diffs {
                if x > 0.0 && x >= threshold {
                    n_correct += 1;
                } else if x < 0.0 && -x >= threshold {
                    n_incorrect += 1;
                }
            }
            let objective = n_correct - penalty * n_incorrect;
            let better = match best {
                None => true,
                Some((b_obj, b_id, b_ik)) => {
                    objective > b_obj || (objective == b_obj && (id, ik) < (b_id, b_ik))
                }
            };
            if better {
                best = Some((objective, id, ik));
            }
        }
    }
    let (objective, id, ik) = best.unwrap();
    Ok(ValenceFit {
        k: ks[ik],
        d: ds[id],
        objective,
    })
}

/// Accuracy of `scores` on `pairs` at d = 0 (abstain only on exact ties or
/// missing scores). Returned as (n_correct, n_decided).
fn accuracy_counts(pairs: &[PreferencePair], scores: &BTreeMap<String, f64>) -> (usize, usize) {
    let mut n_correct = 0;
    let mut n_decided = 0;
    for pair in pairs {
        if let (Some(&sp), Some(&so)) = (scores.get(&pair.preferred), scores.get(&pair.other)) {
            if sp > so {
                n_correct += 1;
                n_decided += 1;
            } else if so > sp {
                n_decided += 1;
            }
        }
    }
    (n_correct, n_decided)
}

fn accuracy_of(counts: (usize, usize)) -> f64 {
    if counts.1 == 0 {
        0.0
    } else {
        counts.0 as f64 / counts.1 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFit {
    pub weights: EnsembleWeights,
    pub accuracy: f64,
}

/// Sweep over the 0.1-simplex (66 candidates at the default step) maximizing
/// training accuracy with d = 0. Ties break lexicographically by
/// (w_ir, w_pick).
pub fn grid_fit_ensemble(
    pairs: &[PreferencePair],
    s_ir: &BTreeMap<String, f64>,
    s_pick: &BTreeMap<String, f64>,
    s_hpsv2: &BTreeMap<String, f64>,
    grid: &GridSpec,
) -> Result<EnsembleFit> {
    grid.validate()?;
    if pairs.is_empty() {
        return Err(Error::data("empty training set for ensemble fit"));
    }
    let mut best: Option<(f64, usize)> = None;
    let candidates = simplex_lattice(grid.w_step);
    for (idx, &numerators) in candidates.iter().enumerate() {
        let w = weights_from_numerators(numerators, grid.w_step);
        let mut combined = BTreeMap::new();
        for (image_id, &ir) in s_ir {
            if let (Some(&pick), Some(&hps)) = (s_pick.get(image_id), s_hpsv2.get(image_id)) {
                combined.insert(image_id.clone(), ensemble_score(&w, ir, pick, hps));
            }
        }
        let accuracy = accuracy_of(accuracy_counts(pairs, &combined));
        let better = match best {
            None => true,
            Some((b_acc, _)) => accuracy > b_acc,
        };
        if better {
            best = Some((accuracy, idx));
        }
    }
    let (accuracy, idx) = best.unwrap();
    Ok(EnsembleFit {
        weights: weights_from_numerators(candidates[idx], grid.w_step),
        accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationFit {
    pub a_m: f64,
    pub accuracy: f64,
}

/// Sweep over the `a` lattice maximizing training accuracy of
/// `s_m + a * s_au4` with d = 0. Ties break to the smallest a.
pub fn grid_fit_integration(
    pairs: &[PreferencePair],
    s_m: &BTreeMap<String, f64>,
    s_au4: &BTreeMap<String, f64>,
    grid: &GridSpec,
) -> Result<IntegrationFit> {
    grid.validate()?;
    if pairs.is_empty() {
        return Err(Error::data("empty training set for integration fit"));
    }
    let mut best: Option<(f64, usize)> = None;
    let lattice_a = lattice(grid.a_min, grid.a_max, grid.a_step);
    for (idx, &a) in lattice_a.iter().enumerate() {
        let mut combined = BTreeMap::new();
        for (image_id, &sm) in s_m {
            if let Some(&v) = s_au4.get(image_id) {
                combined.insert(image_id.clone(), sm + a * v);
            }
        }
        let accuracy = accuracy_of(accuracy_counts(pairs, &combined));
        let better = match best {
            None => true,
            Some((b_acc, _)) => accuracy > b_acc,
        };
        if better {
            best = Some((accuracy, idx));
        }
    }
    let (accuracy, idx) = best.unwrap();
    Ok(IntegrationFit {
        a_m: lattice_a[idx],
        accuracy,
    })
}

/// One (train, test) split per included participant.
pub fn lopo_folds(participants: &[String]) -> Result<Vec<(Vec<String>, String)>> {
    if participants.len() < 2 {
        return Err(Error::data(format!(
            "LOPO needs at least 2 included participants, got {}",
            participants.len()
        )));
    }
    Ok(participants
        .iter()
        .map(|held_out| {
            let train = participants
                .iter()
                .filter(|p| *p != held_out)
                .cloned()
                .collect();
            (train, held_out.clone())
        })
        .collect())
}

/// Whether an image is dropped when only its reaction clip is excluded or
/// when either clip is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionPolicy {
    EitherClip,
    ReactionOnly,
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        ExclusionPolicy::EitherClip
    }
}

/// One valid image with everything downstream analysis needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub participant_id: String,
    pub session_id: String,
    pub activations: BTreeMap<AuId, f64>,
    pub scores: ModelScores,
    pub overall: u8,
    pub alignment: u8,
    pub fidelity: u8,
    pub emotions: std::collections::BTreeSet<String>,
}

/// Filtered, feature-extracted view of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Participants passing the reliability screen, sorted.
    pub included_participants: Vec<String>,
    pub excluded_participants: Vec<String>,
    /// All valid images of all participants (statistics use these).
    pub images: BTreeMap<String, ImageInfo>,
    /// Preference pairs of included participants only.
    pub pairs_by_participant: BTreeMap<String, Vec<PreferencePair>>,
    /// Clip-level filter verdicts: (participant, session, image, kind label, excluded_fraction, retained).
    pub clip_log: Vec<(String, String, String, String, f64, bool)>,
}

impl Dataset {
    /// Runs filtering, activation extraction, and the participant screen.
    pub fn prepare(cohort: &Cohort, policy: ExclusionPolicy) -> Result<Dataset> {
        let thresholds = &cohort.thresholds;
        let mut clip_log = Vec::new();
        // (participant, session, image) -> per-kind features
        let mut features: BTreeMap<(String, String, String), BTreeMap<ClipKind, _>> =
            BTreeMap::new();
        let mut any_excluded: BTreeMap<(String, String, String), bool> = BTreeMap::new();
        let mut reaction_excluded: BTreeMap<(String, String, String), bool> = BTreeMap::new();

        for trace in &cohort.traces {
            let clip = filter_clip(trace, thresholds)?;
            let key = (
                trace.participant_id.clone(),
                trace.session_id.clone(),
                trace.image_id.clone(),
            );
            clip_log.push((
                key.0.clone(),
                key.1.clone(),
                key.2.clone(),
                trace.clip_kind.label().to_string(),
                clip.excluded_fraction,
                clip.status == ClipStatus::Retained,
            ));
            let excluded = clip.status == ClipStatus::Excluded;
            *any_excluded.entry(key.clone()).or_insert(false) |= excluded;
            if trace.clip_kind == ClipKind::Reaction {
                *reaction_excluded.entry(key.clone()).or_insert(false) |= excluded;
            }
            if !excluded {
                // Undefined features drop the image, not the run.
                if let Ok(f) = activation_value(&clip) {
                    features
                        .entry(key)
                        .or_default()
                        .insert(trace.clip_kind, f);
                }
            }
        }

        let image_dropped = |key: &(String, String, String)| match policy {
            ExclusionPolicy::EitherClip => any_excluded.get(key).copied().unwrap_or(false),
            ExclusionPolicy::ReactionOnly => reaction_excluded.get(key).copied().unwrap_or(false),
        };

        // Reliability screen over baseline-clip AU4 activations.
        let mut baseline_au4: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for ((participant, _, _), kinds) in &features {
            if let Some(f) = kinds.get(&ClipKind::Baseline) {
                baseline_au4
                    .entry(participant.clone())
                    .or_default()
                    .push(f.activation[&AuId::Au4]);
            }
        }
        let mut included_participants = Vec::new();
        let mut excluded_participants = Vec::new();
        for participant in cohort.participants() {
            match baseline_au4.get(&participant) {
                Some(values) if participant_reliability(values)? == ParticipantStatus::Included => {
                    included_participants.push(participant)
                }
                _ => excluded_participants.push(participant),
            }
        }

        // Valid images: both clips have features and the policy keeps them.
        let mut images = BTreeMap::new();
        for session in &cohort.sessions {
            for annotation in &session.images {
                let key = (
                    session.participant_id.clone(),
                    session.session_id.clone(),
                    annotation.image_id.clone(),
                );
                if image_dropped(&key) {
                    continue;
                }
                let Some(kinds) = features.get(&key) else {
                    continue;
                };
                let (Some(reaction), Some(_baseline)) =
                    (kinds.get(&ClipKind::Reaction), kinds.get(&ClipKind::Baseline))
                else {
                    continue;
                };
                images.insert(
                    annotation.image_id.clone(),
                    ImageInfo {
                        participant_id: session.participant_id.clone(),
                        session_id: session.session_id.clone(),
                        activations: reaction.activation.clone(),
                        scores: cohort
                            .scores
                            .by_image
                            .get(&annotation.image_id)
                            .copied()
                            .unwrap_or_default(),
                        overall: annotation.overall,
                        alignment: annotation.alignment,
                        fidelity: annotation.fidelity,
                        emotions: annotation.emotions.clone(),
                    },
                );
            }
        }

        let mut pairs_by_participant: BTreeMap<String, Vec<PreferencePair>> = BTreeMap::new();
        for session in &cohort.sessions {
            if !included_participants.contains(&session.participant_id) {
                continue;
            }
            let valid: Vec<(String, u8)> = session
                .images
                .iter()
                .filter(|img| images.contains_key(&img.image_id))
                .map(|img| (img.image_id.clone(), img.rank))
                .collect();
            let pairs = pairs_from_ranking(&session.session_id, &valid)?;
            pairs_by_participant
                .entry(session.participant_id.clone())
                .or_default()
                .extend(pairs);
        }

        Ok(Dataset {
            included_participants,
            excluded_participants,
            images,
            pairs_by_participant,
            clip_log,
        })
    }

    pub fn alpha4(&self) -> BTreeMap<String, f64> {
        self.images
            .iter()
            .map(|(id, info)| (id.clone(), info.activations[&AuId::Au4]))
            .collect()
    }

    pub fn total_pairs(&self) -> usize {
        self.pairs_by_participant.values().map(Vec::len).sum()
    }

    fn pairs_of(&self, participants: &[String]) -> Vec<PreferencePair> {
        participants
            .iter()
            .flat_map(|p| self.pairs_by_participant.get(p).cloned().unwrap_or_default())
            .collect()
    }

    /// Raw score column restricted to the given participants' valid images.
    fn raw_scores(&self, model: &str, participants: &[String]) -> BTreeMap<String, f64> {
        self.images
            .iter()
            .filter(|(_, info)| participants.contains(&info.participant_id))
            .filter_map(|(id, info)| info.scores.get(model).map(|s| (id.clone(), s)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationBase {
    Imagereward,
    Pickscore,
    Hpsv2,
    Ensemble,
}

impl IntegrationBase {
    pub fn column(self) -> Option<&'static str> {
        match self {
            IntegrationBase::Imagereward => Some("imagereward_score"),
            IntegrationBase::Pickscore => Some("pickscore"),
            IntegrationBase::Hpsv2 => Some("hpsv2_score"),
            IntegrationBase::Ensemble => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "protocol", content = "base")]
pub enum Protocol {
    ValenceOnly,
    Ensemble,
    Integrated(IntegrationBase),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FittedParams {
    Valence {
        k: f64,
        d: f64,
    },
    Ensemble {
        weights: EnsembleWeights,
    },
    Integrated {
        k: f64,
        a_m: f64,
        weights: Option<EnsembleWeights>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub params: FittedParams,
    pub train_objective: f64,
    pub outcome: PredictionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub protocol: Protocol,
    pub grid: GridSpec,
    pub folds: Vec<FoldResult>,
    /// Held-out outcomes pooled by summing raw counts over folds.
    pub pooled: PredictionOutcome,
    /// Valence protocol only: forced-choice (d = 0) pooled outcome with the
    /// same per-fold fitted k.
    pub pooled_forced: Option<PredictionOutcome>,
}

/// Standardizes one raw score column by training statistics; images whose
/// raw score is missing are absent from the output.
fn standardized_column(
    raw_train: &BTreeMap<String, f64>,
    raw_all: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    let train_values: Vec<f64> = raw_train.values().copied().collect();
    let (mean, std) = mean_std(&train_values)?;
    Ok(raw_all
        .iter()
        .map(|(id, &v)| (id.clone(), standardize_one(v, mean, std)))
        .collect())
}

/// Fits on each fold's training participants and pools held-out outcomes.
pub fn lopo_evaluate(
    dataset: &Dataset,
    protocol: Protocol,
    grid: &GridSpec,
    penalty: i64,
) -> Result<FitResult> {
    grid.validate()?;
    let folds = lopo_folds(&dataset.included_participants)?;
    let alpha4 = dataset.alpha4();

    let mut fold_results = Vec::new();
    let mut pooled = [0usize; 3]; // correct, incorrect, abstain
    let mut pooled_forced = [0usize; 3];

    for (train, held_out) in folds {
        let train_pairs = dataset.pairs_of(&train);
        let test_pairs = dataset.pairs_of(std::slice::from_ref(&held_out));

        let (params, train_objective, outcome, forced) = match protocol {
            Protocol::ValenceOnly => {
                let fit = grid_fit_valence(&train_pairs, &alpha4, grid, penalty)?;
                let score_of = |id: &str| {
                    alpha4
                        .get(id)
                        .map(|&a| au4_valence(a, fit.k).expect("alpha4 >= 0"))
                };
                let outcome = crate::preference::evaluate(&test_pairs, score_of, fit.d, penalty);
                let forced = crate::preference::evaluate(&test_pairs, score_of, 0.0, penalty);
                (
                    FittedParams::Valence { k: fit.k, d: fit.d },
                    fit.objective as f64,
                    outcome,
                    Some(forced),
                )
            }
            Protocol::Ensemble => {
                let columns: Vec<BTreeMap<String, f64>> =
                    ["imagereward_score", "pickscore", "hpsv2_score"]
                        .iter()
                        .map(|model| {
                            let all = self_scores(dataset, model);
                            standardized_column(&dataset.raw_scores(model, &train), &all)
                        })
                        .collect::<Result<_>>()?;
                let fit =
                    grid_fit_ensemble(&train_pairs, &columns[0], &columns[1], &columns[2], grid)?;
                let score_of = |id: &str| {
                    match (columns[0].get(id), columns[1].get(id), columns[2].get(id)) {
                        (Some(&ir), Some(&pick), Some(&hps)) => {
                            Some(ensemble_score(&fit.weights, ir, pick, hps))
                        }
                        _ => None,
                    }
                };
                let outcome = crate::preference::evaluate(&test_pairs, score_of, 0.0, penalty);
                (
                    FittedParams::Ensemble {
                        weights: fit.weights,
                    },
                    fit.accuracy,
                    outcome,
                    None,
                )
            }
            Protocol::Integrated(base) => {
                let valence_fit = grid_fit_valence(&train_pairs, &alpha4, grid, penalty)?;
                let s_au4: BTreeMap<String, f64> = alpha4
                    .iter()
                    .map(|(id, &a)| Ok((id.clone(), au4_valence(a, valence_fit.k)?)))
                    .collect::<Result<_>>()?;
                let (s_m, weights) = match base.column() {
                    Some(model) => {
                        let all = self_scores(dataset, model);
                        (
                            standardized_column(&dataset.raw_scores(model, &train), &all)?,
                            None,
                        )
                    }
                    None => {
                        let columns: Vec<BTreeMap<String, f64>> =
                            ["imagereward_score", "pickscore", "hpsv2_score"]
                                .iter()
                                .map(|model| {
                                    let all = self_scores(dataset, model);
                                    standardized_column(
                                        &dataset.raw_scores(model, &train),
                                        &all,
                                    )
                                })
                                .collect::<Result<_>>()?;
                        let ens_fit = grid_fit_ensemble(
                            &train_pairs,
                            &columns[0],
                            &columns[1],
                            &columns[2],
                            grid,
                        )?;
                        let mut combined = BTreeMap::new();
                        for (id, &ir) in &columns[0] {
                            if let (Some(&pick), Some(&hps)) =
                                (columns[1].get(id), columns[2].get(id))
                            {
                                combined.insert(
                                    id.clone(),
                                    ensemble_score(&ens_fit.weights, ir, pick, hps),
                                );
                            }
                        }
                        (combined, Some(ens_fit.weights))
                    }
                };
                let fit = grid_fit_integration(&train_pairs, &s_m, &s_au4, grid)?;
                let score_of = |id: &str| match (s_m.get(id), s_au4.get(id)) {
                    (Some(&sm), Some(&v)) => Some(sm + fit.a_m * v),
                    _ => None,
                };
                let outcome = crate::preference::evaluate(&test_pairs, score_of, 0.0, penalty);
                (
                    FittedParams::Integrated {
                        k: valence_fit.k,
                        a_m: fit.a_m,
                        weights,
                    },
                    fit.accuracy,
                    outcome,
                    None,
                )
            }
        };

        pooled[0] += outcome.n_correct;
        pooled[1] += outcome.n_incorrect;
        pooled[2] += outcome.n_abstain;
        if let Some(f) = forced {
            pooled_forced[0] += f.n_correct;
            pooled_forced[1] += f.n_incorrect;
            pooled_forced[2] += f.n_abstain;
        }
        fold_results.push(FoldResult {
            held_out,
            params,
            train_objective,
            outcome,
        });
    }

    Ok(FitResult {
        protocol,
        grid: *grid,
        folds: fold_results,
        pooled: PredictionOutcome::from_counts(pooled[0], pooled[1], pooled[2], penalty),
        pooled_forced: match protocol {
            Protocol::ValenceOnly => Some(PredictionOutcome::from_counts(
                pooled_forced[0],
                pooled_forced[1],
                pooled_forced[2],
                penalty,
            )),
            _ => None,
        },
    })
}

fn self_scores(dataset: &Dataset, model: &str) -> BTreeMap<String, f64> {
    dataset
        .images
        .iter()
        .filter_map(|(id, info)| info.scores.get(model).map(|s| (id.clone(), s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preference::PairDecision;
    use crate::synth::{generate_synthetic_cohort, SynthSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(session: &str, preferred: &str, other: &str) -> PreferencePair {
        PreferencePair {
            session_id: session.into(),
            preferred: preferred.into(),
            other: other.into(),
        }
    }

    /// Independent naive sweep: different loop order, direct evaluate calls.
    fn naive_valence_sweep(
        pairs: &[PreferencePair],
        alpha4: &BTreeMap<String, f64>,
        grid: &GridSpec,
        penalty: i64,
    ) -> ValenceFit {
        let ks = lattice(grid.k_min, grid.k_max, grid.k_step);
        let ds = lattice(grid.d_min, grid.d_max, grid.d_step);
        let mut best: Option<ValenceFit> = None;
        for (id, &d) in ds.iter().enumerate() {
            for (ik, &k) in ks.iter().enumerate() {
                let mut n_correct = 0i64;
                let mut n_incorrect = 0i64;
                for p in pairs {
                    let (Some(&a1), Some(&a2)) =
                        (alpha4.get(&p.preferred), alpha4.get(&p.other))
                    else {
                        continue;
                    };
                    let s1 = au4_valence(a1, k).unwrap();
                    let s2 = au4_valence(a2, k).unwrap();
                    match crate::preference::predict_pair(s1, s2, d) {
                        PairDecision::PreferFirst => n_correct += 1,
                        PairDecision::PreferSecond => n_incorrect += 1,
                        PairDecision::Abstain => {}
                    }
                }
                let objective = n_correct - penalty * n_incorrect;
                let replace = match &best {
                    None => true,
                    Some(b) => {
                        objective > b.objective
                            || (objective == b.objective
                                && (id, ik)
                                    < (
                                        ds.iter().position(|&x| x == b.d).unwrap(),
                                        ks.iter().position(|&x| x == b.k).unwrap(),
                                    ))
                    }
                };
                if replace {
                    best = Some(ValenceFit {
                        k,
                        d,
                        objective,
                    });
                }
            }
        }
        best.unwrap()
    }

    fn random_pair_instance(
        rng: &mut ChaCha8Rng,
        n_images: usize,
        n_pairs: usize,
    ) -> (Vec<PreferencePair>, BTreeMap<String, f64>) {
        let ids: Vec<String> = (0..n_images).map(|i| format!("img{i}")).collect();
        let alpha4: BTreeMap<String, f64> = ids
            .iter()
            .map(|id| (id.clone(), rng.gen_range(0.0..3.0)))
            .collect();
        let mut pairs = Vec::new();
        for _ in 0..n_pairs {
            let a = rng.gen_range(0..n_images);
            let mut b = rng.gen_range(0..n_images);
            while b == a {
                b = rng.gen_range(0..n_images);
            }
            pairs.push(pair("s", &ids[a], &ids[b]));
        }
        (pairs, alpha4)
    }

    #[test]
    fn lattice_values_are_step_multiples() {
        let ks = lattice(0.1, 2.0, 0.1);
        assert_eq!(ks.len(), 20);
        assert_eq!(ks[0], 0.1);
        assert_eq!(*ks.last().unwrap(), 0.1 + 19.0 * 0.1);
        let ds = lattice(0.0, 1.0, 0.02);
        assert_eq!(ds.len(), 51);
        let sim = simplex_lattice(0.1);
        assert_eq!(sim.len(), 66);
        for p in sim {
            assert_eq!(p[0] + p[1] + p[2], 10);
        }
    }

    #[test]
    fn flat_objective_tie_breaks_to_origin() {
        // All pairs share identical activations: every cell is 0.
        let pairs = vec![pair("s", "a", "b"), pair("s", "b", "c")];
        let alpha4: BTreeMap<String, f64> =
            [("a", 1.0), ("b", 1.0), ("c", 1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let fit = grid_fit_valence(&pairs, &alpha4, &GridSpec::default(), 2).unwrap();
        assert_eq!(fit.objective, 0);
        assert!((fit.k - 0.1).abs() < 1e-12);
        assert_eq!(fit.d, 0.0);
    }

    #[test]
    fn planted_signal_zero_noise_fits_d_zero() {
        // Lower alpha4 (higher valence) is always preferred: all pairs
        // correct at every k with d = 0.
        let pairs = vec![pair("s", "a", "b"), pair("s", "a", "c"), pair("s", "b", "c")];
        let alpha4: BTreeMap<String, f64> =
            [("a", 0.2), ("b", 1.0), ("c", 2.5)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let fit = grid_fit_valence(&pairs, &alpha4, &GridSpec::default(), 2).unwrap();
        assert_eq!(fit.objective, 3);
        assert_eq!(fit.d, 0.0);
        assert!((fit.k - 0.1).abs() < 1e-12);
        assert_eq!(fit, naive_valence_sweep(&pairs, &alpha4, &GridSpec::default(), 2));
    }

    #[test]
    fn adversarial_signal_saturates_to_abstain() {
        // Preferred image always has the larger activation: every decided
        // prediction is wrong, so the best objective abstains everywhere.
        let pairs = vec![pair("s", "a", "b"), pair("s", "b", "c"), pair("s", "a", "c")];
        let alpha4: BTreeMap<String, f64> =
            [("a", 3.0), ("b", 2.0), ("c", 1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let fit = grid_fit_valence(&pairs, &alpha4, &GridSpec::default(), 2).unwrap();
        assert_eq!(fit.objective, 0);
        let score = |id: &str| alpha4.get(id).map(|&a| au4_valence(a, fit.k).unwrap());
        let outcome = crate::preference::evaluate(&pairs, score, fit.d, 2);
        assert_eq!(outcome.n_incorrect + outcome.n_correct, 0);
    }

    #[test]
    fn valence_fit_matches_naive_sweep_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let grid = GridSpec::default();
        for _ in 0..10 {
            let (pairs, alpha4) = random_pair_instance(&mut rng, 8, 15);
            let fast = grid_fit_valence(&pairs, &alpha4, &grid, 2).unwrap();
            let slow = naive_valence_sweep(&pairs, &alpha4, &grid, 2);
            assert_eq!(fast.objective, slow.objective);
            assert_eq!(fast.k, slow.k);
            assert_eq!(fast.d, slow.d);
        }
    }

    #[test]
    fn dominant_ensemble_component_wins() {
        let ids = ["a", "b", "c", "d"];
        let truth: BTreeMap<String, f64> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), -(i as f64)))
            .collect();
        let noise_up: BTreeMap<String, f64> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i as f64))
            .collect();
        let pairs = vec![pair("s", "a", "b"), pair("s", "b", "c"), pair("s", "c", "d")];
        let fit = grid_fit_ensemble(&pairs, &noise_up, &truth, &noise_up, &GridSpec::default())
            .unwrap();
        // Combined score is i*(1 - 2*w_pick): perfect whenever w_pick > 0.5,
        // and the first such lattice point in (w_ir, w_pick) order is (0, 0.6).
        assert_eq!(fit.weights.w_ir, 0.0);
        assert!((fit.weights.w_pick - 0.6).abs() < 1e-12);
        assert_eq!(fit.accuracy, 1.0);
    }

    #[test]
    fn identical_columns_tie_break_lexicographically() {
        let col: BTreeMap<String, f64> = [("a", 2.0), ("b", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let pairs = vec![pair("s", "a", "b")];
        let fit = grid_fit_ensemble(&pairs, &col, &col, &col, &GridSpec::default()).unwrap();
        assert_eq!(fit.weights.w_ir, 0.0);
        assert_eq!(fit.weights.w_pick, 0.0);
        assert_eq!(fit.weights.w_hpsv2, 1.0);
    }

    #[test]
    fn integration_tie_breaks_to_zero_and_uses_signal() {
        let pairs = vec![pair("s", "a", "b"), pair("s", "b", "c")];
        let s_m: BTreeMap<String, f64> = [("a", 0.0), ("b", 0.0), ("c", 0.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let constant: BTreeMap<String, f64> = [("a", -0.5), ("b", -0.5), ("c", -0.5)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let fit = grid_fit_integration(&pairs, &s_m, &constant, &GridSpec::default()).unwrap();
        assert_eq!(fit.a_m, 0.0);

        let truth: BTreeMap<String, f64> = [("a", 0.0), ("b", -0.3), ("c", -0.9)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let fit = grid_fit_integration(&pairs, &s_m, &truth, &GridSpec::default()).unwrap();
        assert!((fit.a_m - 0.1).abs() < 1e-12);
        assert_eq!(fit.accuracy, 1.0);
    }

    #[test]
    fn lopo_folds_partition() {
        let participants: Vec<String> = (1..=3).map(|i| format!("p{i}")).collect();
        let folds = lopo_folds(&participants).unwrap();
        assert_eq!(folds.len(), 3);
        for (train, test) in &folds {
            assert_eq!(train.len(), 2);
            assert!(!train.contains(test));
        }
        assert!(lopo_folds(&participants[..1]).is_err());
    }

    #[test]
    fn lopo_is_deterministic_and_pools_all_pairs() {
        let spec = SynthSpec {
            participants: 4,
            sessions_per_participant: 3,
            ..SynthSpec::default()
        };
        let cohort = generate_synthetic_cohort(&spec, 3).unwrap();
        let dataset = Dataset::prepare(&cohort, ExclusionPolicy::EitherClip).unwrap();
        let grid = GridSpec::default();
        let a = lopo_evaluate(&dataset, Protocol::ValenceOnly, &grid, 2).unwrap();
        let b = lopo_evaluate(&dataset, Protocol::ValenceOnly, &grid, 2).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let pooled_total = a.pooled.n_correct + a.pooled.n_incorrect + a.pooled.n_abstain;
        assert_eq!(pooled_total, dataset.total_pairs());
        assert_eq!(a.folds.len(), dataset.included_participants.len());
    }

    #[test]
    fn zero_noise_lopo_is_perfect_on_decided_pairs() {
        let spec = SynthSpec {
            participants: 3,
            sessions_per_participant: 3,
            au_noise_sd: 0.0,
            reaction_noise_sd: 0.0,
            invalid_frame_rate: 0.0,
            ..SynthSpec::default()
        };
        let cohort = generate_synthetic_cohort(&spec, 5).unwrap();
        let dataset = Dataset::prepare(&cohort, ExclusionPolicy::EitherClip).unwrap();
        let fit = lopo_evaluate(&dataset, Protocol::ValenceOnly, &GridSpec::default(), 2).unwrap();
        assert_eq!(fit.pooled.n_incorrect, 0);
        assert_eq!(fit.pooled.accuracy, 1.0);
    }

    #[test]
    fn unreliable_participants_are_screened_out() {
        let spec = SynthSpec {
            participants: 4,
            sessions_per_participant: 2,
            unreliable_participants: 1,
            ..SynthSpec::default()
        };
        let cohort = generate_synthetic_cohort(&spec, 9).unwrap();
        let dataset = Dataset::prepare(&cohort, ExclusionPolicy::EitherClip).unwrap();
        assert_eq!(dataset.excluded_participants, vec!["p001".to_string()]);
        assert_eq!(dataset.included_participants.len(), 3);
        assert!(!dataset.pairs_by_participant.contains_key("p001"));
    }

    #[test]
    fn held_out_scores_do_not_leak_into_fits() {
        let spec = SynthSpec {
            participants: 3,
            sessions_per_participant: 2,
            ..SynthSpec::default()
        };
        let cohort = generate_synthetic_cohort(&spec, 21).unwrap();
        let dataset = Dataset::prepare(&cohort, ExclusionPolicy::EitherClip).unwrap();
        let grid = GridSpec::default();
        let baseline = lopo_evaluate(&dataset, Protocol::Ensemble, &grid, 2).unwrap();

        // Perturb every held-out participant's raw scores for its own fold.
        let mut perturbed = dataset.clone();
        let victim = perturbed.included_participants[0].clone();
        for info in perturbed.images.values_mut() {
            if info.participant_id == victim {
                for model in crate::data_model::SCORE_MODELS {
                    if let Some(v) = info.scores.get(model) {
                        info.scores.set(model, Some(v + 100.0));
                    }
                }
            }
        }
        let shifted = lopo_evaluate(&perturbed, Protocol::Ensemble, &grid, 2).unwrap();
        let fold = |r: &FitResult| {
            r.folds
                .iter()
                .find(|f| f.held_out == victim)
                .unwrap()
                .params
                .clone()
        };
        assert_eq!(fold(&baseline), fold(&shifted));
    }
}
