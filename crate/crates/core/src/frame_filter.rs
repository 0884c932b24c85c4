//! Frame-level exclusion rules and the clip-level 20% exclusion rule.
//!
//! A frame is kept only when the face detection confidence score (FDCS) is
//! at least the minimum, the yaw indicative ratio (YIR) and pitch indicative
//! ratio (PIR) both fall inside their allowed ranges (inclusive at both
//! ends), and no signal is missing. A clip is excluded when more than the
//! configured fraction of its frames are invalid.

use serde::{Deserialize, Serialize};

use crate::data_model::{AuTrace, FrameRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub fdcs_min: f64,
    pub yir_range: [f64; 2],
    pub pir_range: [f64; 2],
    pub clip_exclusion_fraction: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            fdcs_min: 0.9,
            yir_range: [0.3, 0.7],
            pir_range: [0.55, 0.85],
            clip_exclusion_fraction: 0.20,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fdcs_min) {
            return Err(Error::validation(format!(
                "fdcs_min {} out of [0,1]",
                self.fdcs_min
            )));
        }
        for (name, [lo, hi]) in [("yir_range", self.yir_range), ("pir_range", self.pir_range)] {
            if !(0.0 <= lo && lo < hi) {
                return Err(Error::validation(format!(
                    "{name} [{lo}, {hi}] must satisfy 0 <= lo < hi"
                )));
            }
        }
        if !(0.0 < self.clip_exclusion_fraction && self.clip_exclusion_fraction < 1.0) {
            return Err(Error::validation(format!(
                "clip_exclusion_fraction {} out of (0,1)",
                self.clip_exclusion_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipStatus {
    Retained,
    Excluded,
}

/// A trace with its per-frame validity mask and clip-level verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredClip {
    pub trace: AuTrace,
    pub valid_mask: Vec<bool>,
    pub excluded_fraction: f64,
    pub status: ClipStatus,
}

/// d_left / (d_left + d_right). Errors on a zero denominator.
pub fn yaw_indicative_ratio(d_left: f64, d_right: f64) -> Result<f64> {
    let denom = d_left + d_right;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::data("undefined geometry: d_left + d_right is not positive"));
    }
    Ok(d_left / denom)
}

/// d_nostrils_eyes / d_eyes. Errors on a non-positive d_eyes.
pub fn pitch_indicative_ratio(d_nostrils_eyes: f64, d_eyes: f64) -> Result<f64> {
    if d_eyes <= 0.0 || !d_eyes.is_finite() {
        return Err(Error::data("undefined geometry: d_eyes is not positive"));
    }
    Ok(d_nostrils_eyes / d_eyes)
}

/// True iff the frame passes all three exclusion rules with no missing
/// signal. Missing or undefined geometry yields false, never an error.
pub fn frame_valid(frame: &FrameRecord, t: &FilterThresholds) -> bool {
    let (Some(fdcs), Some(d_left), Some(d_right), Some(d_ne), Some(d_eyes)) = (
        frame.fdcs,
        frame.d_eye_edge_left,
        frame.d_eye_edge_right,
        frame.d_nostrils_eyes,
        frame.d_eyes,
    ) else {
        return false;
    };
    if frame.au_intensities.iter().any(|v| v.is_none()) {
        return false;
    }
    if fdcs < t.fdcs_min {
        return false;
    }
    let Ok(yir) = yaw_indicative_ratio(d_left, d_right) else {
        return false;
    };
    let Ok(pir) = pitch_indicative_ratio(d_ne, d_eyes) else {
        return false;
    };
    t.yir_range[0] <= yir
        && yir <= t.yir_range[1]
        && t.pir_range[0] <= pir
        && pir <= t.pir_range[1]
}

/// Applies the frame rules and the clip-level rule: the clip is excluded iff
/// the invalid fraction strictly exceeds `clip_exclusion_fraction`.
pub fn filter_clip(trace: &AuTrace, t: &FilterThresholds) -> Result<FilteredClip> {
    if trace.frames.is_empty() {
        return Err(Error::data(format!(
            "empty trace {}/{}/{}",
            trace.participant_id, trace.session_id, trace.image_id
        )));
    }
    let valid_mask: Vec<bool> = trace.frames.iter().map(|f| frame_valid(f, t)).collect();
    let invalid = valid_mask.iter().filter(|&&v| !v).count();
    let excluded_fraction = invalid as f64 / valid_mask.len() as f64;
    let status = if excluded_fraction > t.clip_exclusion_fraction {
        ClipStatus::Excluded
    } else {
        ClipStatus::Retained
    };
    Ok(FilteredClip {
        trace: trace.clone(),
        valid_mask,
        excluded_fraction,
        status,
    })
}
