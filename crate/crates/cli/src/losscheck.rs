//! Self-contained verification of the loss kit: weight-normalization
//! identities, closed-form spot checks, and analytic-vs-numeric gradients
//! on randomly generated batches. Prints one line per check.

use aupref::error::Result;
use aupref::loss_kit::{
    class_weights, loss_gradient, loss_reg_cos, mse_weights, total_loss, CosineMode, LabelBatch,
    LossWeights, PredictionBatch, Reduction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-6;

fn report(name: &str, pass: bool) -> usize {
    println!("{} {name}", if pass { "PASS" } else { "FAIL" });
    usize::from(!pass)
}

/// Runs all checks; returns the number of failures.
pub fn run(seed: u64, batches: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;

    // Weight identities on random count tables.
    let mut weights_ok = true;
    for _ in 0..200 {
        let counts: [usize; 6] = std::array::from_fn(|_| rng.gen_range(1..1000));
        let mse = mse_weights(&counts)?;
        weights_ok &= (mse[0] + mse[2] - 1.0).abs() < 1e-15;
        let class = class_weights(&counts)?;
        let sum: f64 = class.iter().map(|s| s[0] + s[1]).sum();
        weights_ok &= (sum - 1.0).abs() < 1e-14;
    }
    failures += report("weight normalization identities", weights_ok);

    // Cosine spot checks.
    let corrected = loss_reg_cos(&[1.0, 2.0], &[1.0, 2.0], CosineMode::Corrected)?;
    failures += report("corrected cosine is 0 at y = y_hat", corrected == 0.0);
    let printed = loss_reg_cos(&[1.0, 2.0], &[1.0, 2.0], CosineMode::AsPrinted)?;
    failures += report(
        "as-printed cosine literal value 0.8 on (1,2)",
        (printed - 0.8).abs() < 1e-15,
    );

    // Gradient checks.
    let mut grad_ok = true;
    let mut worst: f64 = 0.0;
    for trial in 0..batches {
        let n_samples = rng.gen_range(1..4);
        let n_aus = rng.gen_range(2..6);
        let mut y: Vec<Vec<u8>> = (0..n_samples)
            .map(|_| (0..n_aus).map(|_| rng.gen_range(0..=5u8)).collect())
            .collect();
        for row in &mut y {
            if row.iter().all(|&v| v == 0) {
                row[0] = 1; // nonzero label vector for the cosine term
            }
        }
        let labels = LabelBatch::new(y)?;
        let preds = PredictionBatch {
            y_reg: (0..n_samples)
                .map(|_| (0..n_aus).map(|_| rng.gen_range(0.1..5.0)).collect())
                .collect(),
            logits: (0..n_samples)
                .map(|_| {
                    (0..n_aus)
                        .map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0)))
                        .collect()
                })
                .collect(),
        };
        let weights = LossWeights::from_counts(&vec![[10; 6]; n_aus])?;
        let mode = if trial % 2 == 0 {
            CosineMode::Corrected
        } else {
            CosineMode::AsPrinted
        };
        let analytic = loss_gradient(&labels, &preds, &weights, mode, Reduction::Sum)?;
        let eval = |p: &PredictionBatch| total_loss(&labels, p, &weights, mode, Reduction::Sum);
        let mut check = |a: f64, n: f64| {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            worst = worst.max(rel);
            grad_ok &= rel < REL_TOL;
        };
        for s in 0..n_samples {
            for au in 0..n_aus {
                let mut hi = preds.clone();
                let mut lo = preds.clone();
                hi.y_reg[s][au] += H;
                lo.y_reg[s][au] -= H;
                check(analytic.d_y_reg[s][au], (eval(&hi)? - eval(&lo)?) / (2.0 * H));
                for j in 0..5 {
                    let mut hi = preds.clone();
                    let mut lo = preds.clone();
                    hi.logits[s][au][j] += H;
                    lo.logits[s][au][j] -= H;
                    check(
                        analytic.d_logits[s][au][j],
                        (eval(&hi)? - eval(&lo)?) / (2.0 * H),
                    );
                }
            }
        }
    }
    println!("gradient worst relative error: {worst:.3e} over {batches} batches");
    failures += report("analytic gradients match central differences", grad_ok);

    Ok(failures)
}
