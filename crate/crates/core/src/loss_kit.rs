//! Training-objective kit for AU intensity estimation: inverse-frequency
//! weights, the three loss terms (weighted MSE, cosine, weighted binary
//! cross entropy over cumulative splits), and their analytic gradients.
//!
//! Everything operates on plain vectors; there is no learning framework
//! here. Batch reduction is summation by default, matching the defining
//! sums, with a mean option for toy-training convenience.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp for the cross entropy; bounds any single CE term by
/// -ln(EPS) ~ 27.6.
pub const PROB_EPS: f64 = 1e-12;

/// Intensity labels: `y[sample][au]` in 0..=5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBatch {
    pub y: Vec<Vec<u8>>,
}

impl LabelBatch {
    pub fn new(y: Vec<Vec<u8>>) -> Result<Self> {
        let batch = LabelBatch { y };
        batch.validate()?;
        Ok(batch)
    }

    fn validate(&self) -> Result<()> {
        if self.y.is_empty() || self.y[0].is_empty() {
            return Err(Error::validation("label batch must be non-empty"));
        }
        let n_aus = self.y[0].len();
        for row in &self.y {
            if row.len() != n_aus {
                return Err(Error::validation("ragged label batch"));
            }
            if let Some(v) = row.iter().find(|&&v| v > 5) {
                return Err(Error::validation(format!("intensity {v} out of 0..5")));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_aus(&self) -> usize {
        self.y[0].len()
    }

    /// Per-AU intensity histogram `counts[au][intensity]`.
    pub fn counts(&self) -> Vec<[usize; 6]> {
        let mut counts = vec![[0usize; 6]; self.n_aus()];
        for row in &self.y {
            for (au, &v) in row.iter().enumerate() {
                counts[au][v as usize] += 1;
            }
        }
        counts
    }
}

/// Model outputs: a numerical estimate per (sample, AU) and five pre-sigmoid
/// logits per (sample, AU), one for each cumulative threshold "y >= j".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    pub y_reg: Vec<Vec<f64>>,
    pub logits: Vec<Vec<[f64; 5]>>,
}

impl PredictionBatch {
    fn check_shape(&self, labels: &LabelBatch) -> Result<()> {
        let ok = self.y_reg.len() == labels.n_samples()
            && self.logits.len() == labels.n_samples()
            && self.y_reg.iter().all(|r| r.len() == labels.n_aus())
            && self.logits.iter().all(|r| r.len() == labels.n_aus());
        if ok {
            Ok(())
        } else {
            Err(Error::validation("prediction batch shape mismatch"))
        }
    }
}

/// MSE weights for one AU: intensities {0,1} share one weight, {2..5} the
/// other, inverse group frequency scaled by group cardinality, normalized
/// to sum (of the two distinct values) to 1.
pub fn mse_weights(counts: &[usize; 6]) -> Result<[f64; 6]> {
    let n_low: usize = counts[..2].iter().sum();
    let n_high: usize = counts[2..].iter().sum();
    if n_low == 0 || n_high == 0 {
        return Err(Error::data("mse_weights: empty intensity group"));
    }
    let a = 2.0 / n_low as f64;
    let b = 4.0 / n_high as f64;
    // Complement instead of a second division so the pair sums to 1.0 exactly.
    let w_low = a / (a + b);
    let w_high = 1.0 - w_low;
    Ok([w_low, w_low, w_high, w_high, w_high, w_high])
}

/// Cross-entropy weights for one AU: `out[j-1][c]` weights class c of the
/// cumulative split "y >= j". Numerator is the inverse count of the side
/// matching c; denominator sums both inverse side-counts over all splits.
pub fn class_weights(counts: &[usize; 6]) -> Result<[[f64; 2]; 5]> {
    let below = |j: usize| -> usize { counts[..j].iter().sum() };
    let at_or_above = |j: usize| -> usize { counts[j..].iter().sum() };
    let mut denom = 0.0;
    for j in 1..=5 {
        let (lo, hi) = (below(j), at_or_above(j));
        if lo == 0 || hi == 0 {
            return Err(Error::data(format!(
                "class_weights: split y>={j} has an empty side"
            )));
        }
        denom += 1.0 / lo as f64 + 1.0 / hi as f64;
    }
    let mut w = [[0.0; 2]; 5];
    for j in 1..=5 {
        w[j - 1][0] = 1.0 / below(j) as f64 / denom;
        w[j - 1][1] = 1.0 / at_or_above(j) as f64 / denom;
    }
    Ok(w)
}

/// Per-AU weights for both loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mse: Vec<[f64; 6]>,
    pub class: Vec<[[f64; 2]; 5]>,
}

impl LossWeights {
    pub fn from_counts(counts: &[[usize; 6]]) -> Result<Self> {
        Ok(LossWeights {
            mse: counts.iter().map(mse_weights).collect::<Result<_>>()?,
            class: counts.iter().map(class_weights).collect::<Result<_>>()?,
        })
    }

    fn check_shape(&self, labels: &LabelBatch) -> Result<()> {
        if self.mse.len() == labels.n_aus() && self.class.len() == labels.n_aus() {
            Ok(())
        } else {
            Err(Error::validation("weight shape mismatch"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineMode {
    /// 1 - <y, y_hat> / (||y|| * ||y_hat||); zero at y = y_hat.
    #[default]
    Corrected,
    /// Literal printed form with denominator (sum y^2)(sum y_hat^2); kept
    /// for fidelity audits. Not zero at y = y_hat.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    fn scale(self, n_samples: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n_samples as f64,
        }
    }
}

/// Weighted MSE over (samples x AUs); the weight is looked up by the label.
pub fn loss_reg_mse(labels: &LabelBatch, preds: &PredictionBatch, weights: &LossWeights) -> Result<f64> {
    preds.check_shape(labels)?;
    weights.check_shape(labels)?;
    let mut total = 0.0;
    for (row, pred) in labels.y.iter().zip(&preds.y_reg) {
        for (au, (&y, &y_hat)) in row.iter().zip(pred).enumerate() {
            let r = y as f64 - y_hat;
            total += weights.mse[au][y as usize] * r * r;
        }
    }
    Ok(total)
}

/// Cosine loss for one sample's AU vector.
pub fn loss_reg_cos(y: &[f64], y_hat: &[f64], mode: CosineMode) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::validation("cosine: shape mismatch"));
    }
    let dot: f64 = y.iter().zip(y_hat).map(|(a, b)| a * b).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let hh: f64 = y_hat.iter().map(|v| v * v).sum();
    if yy == 0.0 || hh == 0.0 {
        return Err(Error::data("cosine: zero vector"));
    }
    Ok(match mode {
        // Single sqrt of the product so y = y_hat lands on exactly 0.
        CosineMode::Corrected => 1.0 - dot / (yy * hh).sqrt(),
        CosineMode::AsPrinted => 1.0 - dot / (yy * hh),
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weighted binary cross entropy over the five cumulative splits, summed
/// over samples and AUs. Probabilities are clamped to [EPS, 1-EPS].
pub fn loss_class(labels: &LabelBatch, preds: &PredictionBatch, weights: &LossWeights) -> Result<f64> {
    preds.check_shape(labels)?;
    weights.check_shape(labels)?;
    let mut total = 0.0;
    for (row, logits) in labels.y.iter().zip(&preds.logits) {
        for (au, (&y, au_logits)) in row.iter().zip(logits).enumerate() {
            for j in 1..=5usize {
                let target = usize::from(y as usize >= j);
                let p = sigmoid(au_logits[j - 1]).clamp(PROB_EPS, 1.0 - PROB_EPS);
                let ce = if target == 1 { -p.ln() } else { -(1.0 - p).ln() };
                total += weights.class[au][j - 1][target] * ce;
            }
        }
    }
    Ok(total)
}

/// E = E_reg,MSE + E_reg,cos + E_class. The cosine term is evaluated per
/// sample on the AU vectors and reduced with the other terms.
pub fn total_loss(
    labels: &LabelBatch,
    preds: &PredictionBatch,
    weights: &LossWeights,
    mode: CosineMode,
    reduction: Reduction,
) -> Result<f64> {
    let mse = loss_reg_mse(labels, preds, weights)?;
    let class = loss_class(labels, preds, weights)?;
    let mut cos = 0.0;
    for (row, pred) in labels.y.iter().zip(&preds.y_reg) {
        let y: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        cos += loss_reg_cos(&y, pred, mode)?;
    }
    Ok((mse + cos + class) * reduction.scale(labels.n_samples()))
}

/// Analytic gradient of `total_loss` with respect to the predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub d_y_reg: Vec<Vec<f64>>,
    pub d_logits: Vec<Vec<[f64; 5]>>,
}

pub fn loss_gradient(
    labels: &LabelBatch,
    preds: &PredictionBatch,
    weights: &LossWeights,
    mode: CosineMode,
    reduction: Reduction,
) -> Result<LossGradient> {
    preds.check_shape(labels)?;
    weights.check_shape(labels)?;
    let scale = reduction.scale(labels.n_samples());
    let mut d_y_reg = vec![vec![0.0; labels.n_aus()]; labels.n_samples()];
    let mut d_logits = vec![vec![[0.0; 5]; labels.n_aus()]; labels.n_samples()];

    for (s, (row, pred)) in labels.y.iter().zip(&preds.y_reg).enumerate() {
        let y: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let dot: f64 = y.iter().zip(pred).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let hh: f64 = pred.iter().map(|v| v * v).sum();
        if yy == 0.0 || hh == 0.0 {
            return Err(Error::data("cosine: zero vector"));
        }
        for au in 0..labels.n_aus() {
            // MSE term.
            let w = weights.mse[au][row[au] as usize];
            let mut g = -2.0 * w * (y[au] - pred[au]);
            // Cosine term.
            g += match mode {
                CosineMode::Corrected => {
                    let norm = (yy * hh).sqrt();
                    -(y[au] / norm - dot * pred[au] / (norm * hh))
                }
                CosineMode::AsPrinted => -y[au] / (yy * hh) + 2.0 * dot * pred[au] / (yy * hh * hh),
            };
            d_y_reg[s][au] = g * scale;

            // Cross-entropy term: d/dl of w * CE(t, sigma(l)) = w (sigma - t).
            for j in 1..=5usize {
                let target = usize::from(row[au] as usize >= j);
                let p = sigmoid(preds.logits[s][au][j - 1]);
                if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                    return Err(Error::data(
                        "gradient evaluated at a clamped probability; move the logit away from saturation",
                    ));
                }
                d_logits[s][au][j - 1] =
                    weights.class[au][j - 1][target] * (p - target as f64) * scale;
            }
        }
    }
    Ok(LossGradient { d_y_reg, d_logits })
}
