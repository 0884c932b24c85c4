//! Per-clip AU activation values and the participant reliability screen.
//!
//! The activation value of an AU is the maximum moving-window mean of its
//! intensity within the clip minus the mean of the earliest defined window.
//! Window means are undefined wherever any frame in the window is missing or
//! filtered out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data_model::AuId;
use crate::error::{Error, Result};
use crate::frame_filter::{ClipStatus, FilteredClip};

/// Per-AU activation values for one retained clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFeatures {
    pub activation: BTreeMap<AuId, f64>,
    pub first_window_mean: BTreeMap<AuId, f64>,
    pub max_window_mean: BTreeMap<AuId, f64>,
    pub window_len: usize,
}

/// Window length in frames for a 0.1 s window.
pub fn window_len_for_fps(fps: u32) -> usize {
    ((0.1 * fps as f64).round() as usize).max(1)
}

/// Moving-window mean over a series with gaps. Output index `k` holds the
/// mean of entries `k..k+window_len` iff all of them are defined; windows at
/// the end of the series or adjacent to a gap are undefined. Summation is in
/// ascending index order so results are bit-reproducible.
pub fn moving_window_mean(series: &[Option<f64>], window_len: usize) -> Result<Vec<Option<f64>>> {
    if window_len == 0 {
        return Err(Error::validation("window_len must be positive"));
    }
    let n = series.len();
    let mut out = vec![None; n];
    for k in 0..n {
        if k + window_len > n {
            break;
        }
        let window = &series[k..k + window_len];
        if window.iter().all(|v| v.is_some()) {
            let mut sum = 0.0;
            for v in window {
                sum += v.unwrap();
            }
            out[k] = Some(sum / window_len as f64);
        }
    }
    Ok(out)
}

/// Computes per-AU activation values for a retained clip.
///
/// The subtrahend is the earliest defined window mean; the maximum is taken
/// over windows at or after it, which keeps every activation non-negative.
pub fn activation_value(clip: &FilteredClip) -> Result<ClipFeatures> {
    if clip.status != ClipStatus::Retained {
        return Err(Error::data(format!(
            "clip {}/{}/{} is excluded; no features",
            clip.trace.participant_id, clip.trace.session_id, clip.trace.image_id
        )));
    }
    let window_len = window_len_for_fps(clip.trace.fps);
    let mut features = ClipFeatures {
        activation: BTreeMap::new(),
        first_window_mean: BTreeMap::new(),
        max_window_mean: BTreeMap::new(),
        window_len,
    };
    for au in AuId::ALL {
        let series: Vec<Option<f64>> = clip
            .trace
            .frames
            .iter()
            .zip(&clip.valid_mask)
            .map(|(frame, &valid)| if valid { frame.intensity(au) } else { None })
            .collect();
        let means = moving_window_mean(&series, window_len)?;
        let first_idx = means.iter().position(|m| m.is_some()).ok_or_else(|| {
            Error::data(format!(
                "clip {}/{}/{}: no defined window for {au}",
                clip.trace.participant_id, clip.trace.session_id, clip.trace.image_id
            ))
        })?;
        let first = means[first_idx].unwrap();
        let max = means[first_idx..]
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |acc, &m| acc.max(m));
        features.first_window_mean.insert(au, first);
        features.max_window_mean.insert(au, max);
        features.activation.insert(au, max - first);
    }
    Ok(features)
}

/// Linear-interpolation percentile between closest ranks; `p` in [0,1].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::data("percentile of empty input"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!("percentile {p} out of [0,1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantStatus {
    Included,
    Excluded,
}

/// Excludes a participant when the 80th percentile of their baseline-clip
/// AU4 activation values strictly exceeds 0.5.
pub fn participant_reliability(baseline_au4: &[f64]) -> Result<ParticipantStatus> {
    let p80 = percentile(baseline_au4, 0.8)?;
    Ok(if p80 > 0.5 {
        ParticipantStatus::Excluded
    } else {
        ParticipantStatus::Included
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{AuTrace, ClipKind, FrameRecord};
    use crate::frame_filter::{filter_clip, FilterThresholds};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn clip_with_au4(series: &[f64]) -> FilteredClip {
        let frames = series
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut au = [Some(0.0); 12];
                au[AuId::Au4.slot()] = Some(v);
                FrameRecord {
                    frame_index: i,
                    au_intensities: au,
                    fdcs: Some(0.95),
                    d_eye_edge_left: Some(50.0),
                    d_eye_edge_right: Some(50.0),
                    d_nostrils_eyes: Some(70.0),
                    d_eyes: Some(100.0),
                }
            })
            .collect();
        let trace = AuTrace {
            participant_id: "p1".into(),
            session_id: "s1".into(),
            image_id: "img1".into(),
            clip_kind: ClipKind::Reaction,
            fps: 30,
            frames,
        };
        filter_clip(&trace, &FilterThresholds::default()).unwrap()
    }

    /// Brute-force per-window recomputation; the implementation must match
    /// it bitwise.
    fn naive_window_means(series: &[Option<f64>], w: usize) -> Vec<Option<f64>> {
        (0..series.len())
            .map(|k| {
                if k + w > series.len() {
                    return None;
                }
                let mut sum = 0.0;
                for v in &series[k..k + w] {
                    match v {
                        Some(x) => sum += x,
                        None => return None,
                    }
                }
                Some(sum / w as f64)
            })
            .collect()
    }

    #[test]
    fn constant_series_has_flat_means() {
        let series = vec![Some(2.0); 9];
        let means = moving_window_mean(&series, 3).unwrap();
        assert_eq!(&means[..7], &vec![Some(2.0); 7][..]);
        assert_eq!(means[7], None);
        assert_eq!(means[8], None);
    }

    #[test]
    fn step_series_means_match_naive_oracle() {
        let series: Vec<Option<f64>> = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0]
            .iter()
            .map(|&v| Some(v))
            .collect();
        let means = moving_window_mean(&series, 3).unwrap();
        let expected = [0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        for (k, &e) in expected.iter().enumerate() {
            assert_eq!(means[k], Some(e), "index {k}");
        }
        assert_eq!(means, naive_window_means(&series, 3));
    }

    #[test]
    fn gap_undefines_adjacent_windows() {
        let mut series = vec![Some(1.0); 9];
        series[5] = None;
        let means = moving_window_mean(&series, 3).unwrap();
        for k in [3, 4, 5] {
            assert_eq!(means[k], None, "index {k}");
        }
        assert_eq!(means[0], Some(1.0));
        assert_eq!(means[6], Some(1.0));
    }

    #[test]
    fn activation_examples() {
        let c = clip_with_au4(&[2.0; 9]);
        let f = activation_value(&c).unwrap();
        assert_eq!(f.activation[&AuId::Au4], 0.0);

        let c = clip_with_au4(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0]);
        let f = activation_value(&c).unwrap();
        assert_eq!(f.activation[&AuId::Au4], 3.0);

        let c = clip_with_au4(&[9.0, 8.0, 7.0, 6.0, 5.0, 4.0]);
        let f = activation_value(&c).unwrap();
        assert_eq!(f.activation[&AuId::Au4], 0.0);
    }

    #[test]
    fn excluded_clip_has_no_features() {
        let mut c = clip_with_au4(&[1.0; 10]);
        c.status = ClipStatus::Excluded;
        assert!(activation_value(&c).is_err());
    }

    #[test]
    fn all_frames_invalid_is_feature_undefined() {
        let mut c = clip_with_au4(&[1.0; 10]);
        for v in &mut c.valid_mask {
            *v = false;
        }
        c.status = ClipStatus::Retained; // force the per-AU path
        let err = activation_value(&c).unwrap_err();
        assert!(err.to_string().contains("no defined window"), "{err}");
    }

    #[test]
    fn reliability_thresholds() {
        assert_eq!(
            participant_reliability(&[0.74; 10]).unwrap(),
            ParticipantStatus::Excluded
        );
        assert_eq!(
            participant_reliability(&[0.36; 10]).unwrap(),
            ParticipantStatus::Included
        );
        assert_eq!(
            participant_reliability(&[0.0; 10]).unwrap(),
            ParticipantStatus::Included
        );
        assert!(participant_reliability(&[]).is_err());
    }

    #[test]
    fn percentile_interpolates_between_ranks() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.8).unwrap(), 4.2);
        assert_eq!(percentile(&[7.0], 0.8).unwrap(), 7.0);
    }

    #[test]
    fn random_traces_match_naive_oracle_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(3..40);
            let w = rng.gen_range(1..6);
            let series: Vec<Option<f64>> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.15) {
                        None
                    } else {
                        Some(rng.gen_range(-5.0..5.0))
                    }
                })
                .collect();
            let got = moving_window_mean(&series, w).unwrap();
            assert_eq!(got, naive_window_means(&series, w));
        }
    }

    proptest! {
        #[test]
        fn activation_is_nonnegative_and_shift_invariant(
            series in proptest::collection::vec(-5.0f64..5.0, 6..40),
            shift in -10.0f64..10.0,
        ) {
            let c = clip_with_au4(&series);
            let f = activation_value(&c).unwrap();
            prop_assert!(f.activation[&AuId::Au4] >= 0.0);

            let shifted: Vec<f64> = series.iter().map(|v| v + shift).collect();
            let fs = activation_value(&clip_with_au4(&shifted)).unwrap();
            prop_assert!((f.activation[&AuId::Au4] - fs.activation[&AuId::Au4]).abs() < 1e-9);
        }
    }
}
