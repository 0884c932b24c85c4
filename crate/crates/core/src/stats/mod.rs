//! Rank correlation, rank-sum tests, rating extremity, Bonferroni
//! thresholding, and multiple linear regression with coefficient t-tests.
//!
//! Ties get average ranks throughout and all p-values are two-sided. Exact
//! permutation/enumeration variants are provided for small samples so the
//! approximations can be audited.

pub mod special;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data_model::{AuId, EMOTIONS};
use crate::error::{Error, Result};
use special::{normal_cdf, t_two_sided_p};

/// |rating - 4| on the 1..7 scale.
pub fn extremity(rating: u8) -> Result<u8> {
    if !(1..=7).contains(&rating) {
        return Err(Error::validation(format!("rating {rating} out of 1..7")));
    }
    Ok((rating as i8 - 4).unsigned_abs())
}

/// alpha / n_tests.
pub fn bonferroni_threshold(alpha: f64, n_tests: usize) -> Result<f64> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::validation(format!("alpha {alpha} out of (0,1)")));
    }
    if n_tests == 0 {
        return Err(Error::validation("n_tests must be at least 1"));
    }
    Ok(alpha / n_tests as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::data("zero rank variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman rank correlation with the t-approximation two-sided p-value
/// (t = rho * sqrt((n-2)/(1-rho^2)), n-2 degrees of freedom).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::data("spearman: length mismatch"));
    }
    if x.len() < 3 {
        return Err(Error::data("spearman: need at least 3 observations"));
    }
    let rho = spearman_rho(x, y)?;
    let n = x.len() as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        t_two_sided_p(t, n - 2.0)
    };
    Ok((rho, p))
}

/// Exact permutation p for Spearman, feasible for n <= 8: the fraction of
/// y-permutations with |rho| at least the observed |rho|.
pub fn spearman_exact(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::data("spearman: length mismatch"));
    }
    let n = x.len();
    if !(3..=8).contains(&n) {
        return Err(Error::validation("exact Spearman permutation needs 3 <= n <= 8"));
    }
    let rho_obs = spearman_rho(x, y)?;
    let mut perm: Vec<f64> = y.to_vec();
    let mut hits = 0usize;
    let mut total = 0usize;
    // Heap's algorithm, iterative.
    let mut counters = vec![0usize; n];
    let mut check = |p: &[f64]| {
        total += 1;
        if let Ok(r) = spearman_rho(x, p) {
            if r.abs() >= rho_obs.abs() - 1e-12 {
                hits += 1;
            }
        }
    };
    check(&perm);
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            check(&perm);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok((rho_obs, hits as f64 / total as f64))
}

fn rank_sum_stats(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks = average_ranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let n = n1 + n2;
    let mean = n1 * (n + 1.0) / 2.0;
    // Tie correction over groups of equal pooled values.
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    (w, mean, var)
}

/// Wilcoxon rank-sum test with tie-corrected normal approximation and
/// continuity correction; two-sided p.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("wilcoxon: both samples must be non-empty"));
    }
    let (w, mean, var) = rank_sum_stats(a, b);
    if var <= 0.0 {
        // Every pooled value tied: no evidence either way.
        return Ok((0.0, 1.0));
    }
    let diff = w - mean;
    let z = if diff == 0.0 {
        0.0
    } else {
        (diff - 0.5 * diff.signum()) / var.sqrt()
    };
    let p = (2.0 * (1.0 - normal_cdf(z.abs()))).clamp(0.0, 1.0);
    Ok((z, p))
}

/// Exact two-sided p by enumerating all C(n1+n2, n1) group assignments of
/// the pooled sample; feasible for min(n1, n2) <= 6 at small n.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("wilcoxon: both samples must be non-empty"));
    }
    if a.len().min(b.len()) > 6 {
        return Err(Error::validation("exact enumeration needs min(|a|,|b|) <= 6"));
    }
    let (w_obs, mean, var) = rank_sum_stats(a, b);
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks = average_ranks(&pooled);
    let n = pooled.len();
    let n1 = a.len();
    let margin = (w_obs - mean).abs() - 1e-12;

    let mut hits = 0usize;
    let mut total = 0usize;
    // Enumerate n1-subsets of 0..n as the indices assigned to group a.
    let mut subset: Vec<usize> = (0..n1).collect();
    loop {
        let w: f64 = subset.iter().map(|&i| ranks[i]).sum();
        total += 1;
        if (w - mean).abs() >= margin {
            hits += 1;
        }
        // Next combination in lexicographic order.
        let mut i = n1;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if subset[i] != i + n - n1 {
                subset[i] += 1;
                for j in (i + 1)..n1 {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                let z = if var > 0.0 {
                    (w_obs - mean) / var.sqrt()
                } else {
                    0.0
                };
                return Ok((z, hits as f64 / total as f64));
            }
        }
    }
}

/// OLS of y on (1, x1, x2): coefficients, standard errors, t statistics, and
/// two-sided p-values with n-3 degrees of freedom. Order: intercept, x1, x2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub coefficients: [f64; 3],
    pub std_errors: [f64; 3],
    pub t_values: [f64; 3],
    pub p_values: [f64; 3],
    pub residual_sum_of_squares: f64,
}

fn solve3(mut m: [[f64; 4]; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        if m[col][col].abs() < 1e-12 {
            return Err(Error::data("rank-deficient design matrix"));
        }
        for row in 0..3 {
            if row != col {
                let factor = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
    }
    Ok([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

pub fn multiple_linear_regression(x1: &[f64], x2: &[f64], y: &[f64]) -> Result<Regression> {
    let n = y.len();
    if x1.len() != n || x2.len() != n {
        return Err(Error::data("regression: length mismatch"));
    }
    if n <= 3 {
        return Err(Error::data("regression: need n > 3"));
    }
    // Normal equations (X'X) beta = X'y with X = [1, x1, x2].
    let col = |i: usize, r: usize| -> f64 {
        match i {
            0 => 1.0,
            1 => x1[r],
            _ => x2[r],
        }
    };
    let mut xtx = [[0.0f64; 3]; 3];
    let mut xty = [0.0f64; 3];
    for r in 0..n {
        for i in 0..3 {
            xty[i] += col(i, r) * y[r];
            for j in 0..3 {
                xtx[i][j] += col(i, r) * col(j, r);
            }
        }
    }
    let aug = |rhs: [f64; 3]| {
        [
            [xtx[0][0], xtx[0][1], xtx[0][2], rhs[0]],
            [xtx[1][0], xtx[1][1], xtx[1][2], rhs[1]],
            [xtx[2][0], xtx[2][1], xtx[2][2], rhs[2]],
        ]
    };
    let beta = solve3(aug(xty))?;

    let mut rss = 0.0;
    for r in 0..n {
        let fitted: f64 = (0..3).map(|i| beta[i] * col(i, r)).sum();
        rss += (y[r] - fitted) * (y[r] - fitted);
    }
    let df = (n - 3) as f64;
    let sigma2 = rss / df;

    // Diagonal of (X'X)^-1 by solving against unit vectors.
    let mut std_errors = [0.0; 3];
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let inv_col = solve3(aug(e))?;
        std_errors[i] = (sigma2 * inv_col[i]).max(0.0).sqrt();
    }

    let mut t_values = [0.0; 3];
    let mut p_values = [0.0; 3];
    for i in 0..3 {
        t_values[i] = if std_errors[i] > 0.0 {
            beta[i] / std_errors[i]
        } else {
            f64::INFINITY
        };
        p_values[i] = t_two_sided_p(t_values[i], df);
    }

    Ok(Regression {
        coefficients: beta,
        std_errors,
        t_values,
        p_values,
        residual_sum_of_squares: rss,
    })
}

/// One image's observations for the correlation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageObservation {
    pub activations: BTreeMap<AuId, f64>,
    pub overall: u8,
    pub emotions: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub au: AuId,
    /// "rating", "extremity", or one of the six emotion labels.
    pub test: String,
    /// "spearman" or "rank_sum".
    pub kind: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub n: Vec<usize>,
    pub passes_bonferroni: bool,
    pub note: Option<String>,
}

/// 12 AUs x (rating + extremity Spearman + 6 emotion rank-sum tests) =
/// 96 reports, each flagged against the Bonferroni threshold 0.05/96.
pub fn correlation_report(images: &[ImageObservation]) -> Result<Vec<TestReport>> {
    let threshold = bonferroni_threshold(0.05, 96)?;
    let mut reports = Vec::with_capacity(96);
    for au in AuId::ALL {
        let activations: Vec<f64> = images
            .iter()
            .map(|img| img.activations.get(&au).copied().unwrap_or(0.0))
            .collect();
        let ratings: Vec<f64> = images.iter().map(|img| img.overall as f64).collect();
        let extremities: Vec<f64> = images
            .iter()
            .map(|img| extremity(img.overall).map(|e| e as f64))
            .collect::<Result<_>>()?;

        for (test, target) in [("rating", &ratings), ("extremity", &extremities)] {
            let report = match spearman(&activations, target) {
                Ok((rho, p)) => TestReport {
                    au,
                    test: test.to_string(),
                    kind: "spearman".to_string(),
                    statistic: Some(rho),
                    p_value: Some(p),
                    n: vec![images.len()],
                    passes_bonferroni: p < threshold,
                    note: None,
                },
                Err(e) => TestReport {
                    au,
                    test: test.to_string(),
                    kind: "spearman".to_string(),
                    statistic: None,
                    p_value: None,
                    n: vec![images.len()],
                    passes_bonferroni: false,
                    note: Some(e.to_string()),
                },
            };
            reports.push(report);
        }

        for emotion in EMOTIONS {
            let with: Vec<f64> = images
                .iter()
                .zip(&activations)
                .filter(|(img, _)| img.emotions.contains(emotion))
                .map(|(_, &a)| a)
                .collect();
            let without: Vec<f64> = images
                .iter()
                .zip(&activations)
                .filter(|(img, _)| !img.emotions.contains(emotion))
                .map(|(_, &a)| a)
                .collect();
            let report = match wilcoxon_rank_sum(&with, &without) {
                Ok((z, p)) => TestReport {
                    au,
                    test: emotion.to_string(),
                    kind: "rank_sum".to_string(),
                    statistic: Some(z),
                    p_value: Some(p),
                    n: vec![with.len(), without.len()],
                    passes_bonferroni: p < threshold,
                    note: None,
                },
                Err(e) => TestReport {
                    au,
                    test: emotion.to_string(),
                    kind: "rank_sum".to_string(),
                    statistic: None,
                    p_value: None,
                    n: vec![with.len(), without.len()],
                    passes_bonferroni: false,
                    note: Some(e.to_string()),
                },
            };
            reports.push(report);
        }
    }
    debug_assert_eq!(reports.len(), 96);
    Ok(reports)
}
