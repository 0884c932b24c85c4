//! Deterministic synthetic-cohort generator for tests and demos.
//!
//! Each image gets a latent quality in [0,1]. Session rankings follow latent
//! quality exactly; the reaction clip carries an AU4 burst whose amplitude
//! decreases with quality, plus configurable noise; external model scores
//! are the latent quality plus independent noise. Identical (spec, seed)
//! inputs produce byte-identical cohorts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    AnnotationRecord, AuId, AuTrace, ClipKind, Cohort, FrameRecord, ModelScores,
    SessionAnnotations, SCORE_MODELS,
};
use crate::error::{Error, Result};
use crate::frame_filter::FilterThresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub participants: usize,
    pub sessions_per_participant: usize,
    pub images_per_session: usize,
    pub fps: u32,
    pub clip_seconds: u32,
    /// AU4 burst amplitude for the lowest-quality image.
    pub burst_amplitude: f64,
    /// Per-frame Gaussian noise on every AU intensity.
    pub au_noise_sd: f64,
    /// Per-image Gaussian noise on the AU4 burst amplitude.
    pub reaction_noise_sd: f64,
    /// Per-image, per-model Gaussian noise on external scores.
    pub score_noise_sd: f64,
    /// Gaussian noise on ratings before rounding and clamping.
    pub rating_noise_sd: f64,
    /// Probability that a frame fails face detection (low FDCS).
    pub invalid_frame_rate: f64,
    /// The first N participants get strong baseline AU4 bursts, which the
    /// reliability screen should reject.
    pub unreliable_participants: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            participants: 30,
            sessions_per_participant: 10,
            images_per_session: 5,
            fps: 30,
            clip_seconds: 5,
            burst_amplitude: 2.0,
            au_noise_sd: 0.15,
            reaction_noise_sd: 0.8,
            score_noise_sd: 0.5,
            rating_noise_sd: 0.8,
            invalid_frame_rate: 0.02,
            unreliable_participants: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.participants == 0 || self.sessions_per_participant == 0 {
            return Err(Error::validation(
                "degenerate spec: participants and sessions must be positive",
            ));
        }
        if self.images_per_session < 1 || self.images_per_session > 5 {
            return Err(Error::validation("images_per_session must be in 1..=5"));
        }
        if self.fps == 0 || self.clip_seconds == 0 {
            return Err(Error::validation("fps and clip_seconds must be positive"));
        }
        Ok(())
    }
}

/// Box-Muller standard normal; kept local so the draw sequence is pinned.
fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        // Still consume the draws so toggling noise does not reshuffle
        // everything downstream.
        let _ = rng.gen::<f64>();
        let _ = rng.gen::<f64>();
        return 0.0;
    }
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen::<f64>();
    sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn clip_frames(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    au4_burst: f64,
) -> Vec<FrameRecord> {
    let total = (spec.fps * spec.clip_seconds) as usize;
    let burst_start = spec.fps as usize; // burst begins after the first second
    (0..total)
        .map(|i| {
            let mut au_intensities = [None; 12];
            for (slot, au) in AuId::ALL.iter().enumerate() {
                let base = if *au == AuId::Au4 && i >= burst_start {
                    au4_burst
                } else {
                    0.0
                };
                au_intensities[slot] = Some(base + normal(rng, spec.au_noise_sd));
            }
            let invalid = rng.gen::<f64>() < spec.invalid_frame_rate;
            FrameRecord {
                frame_index: i,
                au_intensities,
                fdcs: Some(if invalid { 0.5 } else { 0.95 }),
                d_eye_edge_left: Some(50.0),
                d_eye_edge_right: Some(50.0),
                d_nostrils_eyes: Some(70.0),
                d_eyes: Some(100.0),
            }
        })
        .collect()
}

fn rating_from_quality(rng: &mut ChaCha8Rng, spec: &SynthSpec, quality: f64) -> u8 {
    let raw = 1.0 + 6.0 * quality + normal(rng, spec.rating_noise_sd);
    (raw.round() as i64).clamp(1, 7) as u8
}

/// Generates a validated cohort, deterministic for a given (spec, seed).
pub fn generate_synthetic_cohort(spec: &SynthSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::new();
    let mut sessions = Vec::new();
    let mut scores = std::collections::BTreeMap::new();

    for p in 0..spec.participants {
        let participant_id = format!("p{:03}", p + 1);
        let unreliable = p < spec.unreliable_participants;
        for s in 0..spec.sessions_per_participant {
            let session_id = format!("s{:03}", s + 1);
            // Latent quality per image; rankings follow it exactly.
            let qualities: Vec<f64> = (0..spec.images_per_session)
                .map(|_| rng.gen::<f64>())
                .collect();
            let mut order: Vec<usize> = (0..qualities.len()).collect();
            order.sort_by(|&a, &b| qualities[b].partial_cmp(&qualities[a]).unwrap());
            let mut ranks = vec![0u8; qualities.len()];
            for (pos, &img) in order.iter().enumerate() {
                ranks[img] = (pos + 1) as u8;
            }

            let mut annotations = Vec::new();
            for (i, &quality) in qualities.iter().enumerate() {
                let image_id = format!("{participant_id}-{session_id}-img{}", i + 1);

                // AU4 burst amplitude is monotone-decreasing in quality,
                // with per-image reaction noise.
                let burst = (spec.burst_amplitude * (1.0 - quality)
                    + normal(&mut rng, spec.reaction_noise_sd))
                .max(0.0);
                let baseline_burst = if unreliable { 1.0 } else { 0.0 };

                let mut baseline = AuTrace {
                    participant_id: participant_id.clone(),
                    session_id: session_id.clone(),
                    image_id: image_id.clone(),
                    clip_kind: ClipKind::Baseline,
                    fps: spec.fps,
                    frames: clip_frames(&mut rng, spec, baseline_burst),
                };
                // Keep the first window intact so features are always defined.
                for f in baseline.frames.iter_mut().take(3) {
                    f.fdcs = Some(0.95);
                }
                let mut reaction = AuTrace {
                    clip_kind: ClipKind::Reaction,
                    frames: clip_frames(&mut rng, spec, burst),
                    ..baseline.clone()
                };
                for f in reaction.frames.iter_mut().take(3) {
                    f.fdcs = Some(0.95);
                }
                traces.push(baseline);
                traces.push(reaction);

                let overall = rating_from_quality(&mut rng, spec, quality);
                let alignment = rating_from_quality(&mut rng, spec, quality);
                let fidelity = rating_from_quality(&mut rng, spec, quality);
                let mut emotions = std::collections::BTreeSet::new();
                if quality < 0.3 {
                    emotions.insert("disappointed".to_string());
                }
                if quality > 0.8 {
                    emotions.insert("satisfied".to_string());
                }
                for e in ["surprised", "disgusted", "amused", "scared"] {
                    if rng.gen::<f64>() < 0.08 {
                        emotions.insert(e.to_string());
                    }
                }
                annotations.push(AnnotationRecord {
                    image_id: image_id.clone(),
                    overall,
                    alignment,
                    fidelity,
                    emotions,
                    rank: ranks[i],
                });

                let mut model_scores = ModelScores::default();
                for model in SCORE_MODELS {
                    model_scores.set(model, Some(quality + normal(&mut rng, spec.score_noise_sd)));
                }
                scores.insert(image_id, model_scores);
            }

            sessions.push(SessionAnnotations {
                participant_id: participant_id.clone(),
                session_id,
                prompt: format!("synthetic prompt {participant_id}/{}", s + 1),
                images: annotations,
            });
        }
    }

    let cohort = Cohort {
        traces,
        sessions,
        scores: crate::data_model::ScoreTable { by_image: scores },
        thresholds: FilterThresholds::default(),
    };
    cohort.validate()?;
    Ok(cohort)
}
