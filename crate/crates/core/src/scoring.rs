//! Valence scoring, standardization, the ensemble baseline score, and
//! integrated scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights for the ensemble of the three preference-trained scoring models.
/// Fitting produces weights on the 0.1 simplex lattice summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub w_ir: f64,
    pub w_pick: f64,
    pub w_hpsv2: f64,
}

/// AU4 valence score: the negative of an exponential decay in the AU4
/// activation value. 0 at zero activation, approaching -1 for large
/// activations; strictly decreasing.
pub fn au4_valence(alpha4: f64, k: f64) -> Result<f64> {
    if alpha4 < 0.0 {
        return Err(Error::validation(format!(
            "alpha4 {alpha4} must be non-negative"
        )));
    }
    if k <= 0.0 {
        return Err(Error::validation(format!("k {k} must be positive")));
    }
    Ok(-(1.0 - (-k * alpha4).exp()))
}

/// Training-fold mean and standard deviation (population denominator n-1)
/// for standardization.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::data("need at least 2 values for mean/std"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::data("degenerate distribution: zero standard deviation"));
    }
    Ok((mean, std))
}

pub fn standardize(values: &[f64], mean: f64, std: f64) -> Result<Vec<f64>> {
    if std <= 0.0 {
        return Err(Error::data("degenerate distribution: std must be positive"));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

pub fn standardize_one(value: f64, mean: f64, std: f64) -> f64 {
    (value - mean) / std
}

/// Convex combination of the standardized ImageReward, PickScore, and HPS v2
/// scores.
pub fn ensemble_score(w: &EnsembleWeights, s_ir: f64, s_pick: f64, s_hpsv2: f64) -> f64 {
    w.w_ir * s_ir + w.w_pick * s_pick + w.w_hpsv2 * s_hpsv2
}

/// Linear integration of a standardized model score with the AU4 valence
/// score: `s_m + a_m * s_au4`.
pub fn integrated_score(s_m: f64, a_m: f64, s_au4: f64) -> f64 {
    s_m + a_m * s_au4
}
