//! Multinomial logit fitted to fractional shares.
//!
//! Utilities are linear in the standardized design, `V_i = b_i0 + b_i . z`,
//! and choice probabilities are the softmax over modes. The loss is mean
//! soft-label cross-entropy plus a ridge penalty on the non-constant
//! coefficients. One mode's coefficient row is pinned to zero for
//! identifiability. Optimization is full-batch gradient descent with
//! backtracking (Armijo) line search.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct MnlOptions {
    pub l2_lambda: f64,
    pub max_iters: usize,
    /// Stop when the gradient max-norm falls below this.
    pub tol: f64,
}

impl Default for MnlOptions {
    fn default() -> Self {
        MnlOptions {
            l2_lambda: 1e-4,
            max_iters: 2000,
            tol: 1e-8,
        }
    }
}

impl MnlOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(Error::usage(format!(
                "ridge penalty {} must be non-negative and finite",
                self.l2_lambda
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::usage(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MnlModel {
    /// M x (d+1); column 0 holds the alternative-specific constants.
    pub beta: Array2<f64>,
    /// Row pinned to zero (the last mode).
    pub reference_mode: usize,
    pub l2_lambda: f64,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

impl MnlModel {
    pub fn n_modes(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.beta.ncols() - 1
    }
}

/// Max-shifted softmax of one utility vector.
fn softmax(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Choice probabilities for one standardized feature row.
pub fn mnl_predict_row(beta: &Array2<f64>, z: ArrayView1<f64>) -> Vec<f64> {
    debug_assert_eq!(z.len() + 1, beta.ncols());
    let mut v: Vec<f64> = beta
        .rows()
        .into_iter()
        .map(|row| row[0] + row.iter().skip(1).zip(z.iter()).map(|(b, x)| b * x).sum::<f64>())
        .collect();
    softmax(&mut v);
    v
}

/// Choice probabilities for every row of a standardized design matrix.
pub fn mnl_predict(beta: &Array2<f64>, design: &Array2<f64>) -> Array2<f64> {
    let n = design.nrows();
    let m = beta.nrows();
    let mut out = Array2::zeros((n, m));
    for (i, row) in design.rows().into_iter().enumerate() {
        let p = mnl_predict_row(beta, row);
        for (j, v) in p.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Loss and gradient at `beta`. The reference row's gradient is forced to
/// zero so descent never moves it.
fn loss_and_grad(
    beta: &Array2<f64>,
    design: &Array2<f64>,
    shares: &Array2<f64>,
    lambda: f64,
    reference: usize,
) -> (f64, Array2<f64>) {
    let n = design.nrows();
    let m = beta.nrows();
    let d = design.ncols();
    let mut grad = Array2::zeros((m, d + 1));
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;

    for (row_idx, z) in design.rows().into_iter().enumerate() {
        let p = mnl_predict_row(beta, z);
        for i in 0..m {
            let y = shares[[row_idx, i]];
            if y > 0.0 {
                // p is strictly positive after softmax.
                loss -= y * p[i].ln() * inv_n;
            }
            let diff = (p[i] - y) * inv_n;
            grad[[i, 0]] += diff;
            for k in 0..d {
                grad[[i, k + 1]] += diff * z[k];
            }
        }
    }

    for i in 0..m {
        if i == reference {
            continue;
        }
        for k in 1..=d {
            let b = beta[[i, k]];
            loss += lambda * b * b;
            grad[[i, k]] += 2.0 * lambda * b;
        }
    }
    grad.row_mut(reference).fill(0.0);
    (loss, grad)
}

/// Fit by gradient descent with backtracking line search. Non-convergence
/// within `max_iters` is not an error: the model comes back with
/// `converged = false` and the final gradient norm for the caller to report.
pub fn mnl_fit(
    design: &Array2<f64>,
    shares: &Array2<f64>,
    opts: &MnlOptions,
) -> Result<MnlModel> {
    opts.validate()?;
    let n = design.nrows();
    let m = shares.ncols();
    let d = design.ncols();
    if m < 2 {
        return Err(Error::usage("multinomial logit needs at least 2 modes"));
    }
    if n == 0 || shares.nrows() != n {
        return Err(Error::usage(format!(
            "design has {n} rows but shares has {}",
            shares.nrows()
        )));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("design matrix contains non-finite values"));
    }

    let reference = m - 1;
    let mut beta: Array2<f64> = Array2::zeros((m, d + 1));
    let (mut loss, mut grad) = loss_and_grad(&beta, design, shares, opts.l2_lambda, reference);
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..opts.max_iters {
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_norm < opts.tol {
            converged = true;
            break;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();

        // Backtracking from twice the last accepted step.
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Array2<f64> = &beta - &(step * &grad);
            let (new_loss, new_grad) =
                loss_and_grad(&candidate, design, shares, opts.l2_lambda, reference);
            if new_loss.is_finite() && new_loss <= loss - 1e-4 * step * grad_sq {
                beta = candidate;
                loss = new_loss;
                grad = new_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Line search exhausted: gradient is numerically flat.
            break;
        }
        if !loss.is_finite() {
            return Err(Error::numerical(format!(
                "multinomial logit loss became non-finite at iteration {iterations}"
            )));
        }
    }

    let final_grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    if final_grad_norm < opts.tol {
        converged = true;
    }
    Ok(MnlModel {
        beta,
        reference_mode: reference,
        l2_lambda: opts.l2_lambda,
        converged,
        final_grad_norm,
        iterations,
    })
}

/// Analytic gradient exposed for verification against finite differences.
pub fn mnl_loss_gradient(
    beta: &Array2<f64>,
    design: &Array2<f64>,
    shares: &Array2<f64>,
    lambda: f64,
    reference: usize,
) -> (f64, Array2<f64>) {
    loss_and_grad(beta, design, shares, lambda, reference)
}

impl MnlModel {
    pub fn predict(&self, design: &Array2<f64>) -> Array2<f64> {
        mnl_predict(&self.beta, design)
    }

    /// Short human-readable parameter string for report cells.
    pub fn params_string(&self) -> String {
        format!(
            "l2={};iters={};converged={}",
            self.l2_lambda, self.iterations, self.converged
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn predict_matches_hand_softmax() {
        // Utilities (1, 0): p = (e/(1+e), 1/(1+e)).
        let beta = arr2(&[[1.0], [0.0]]);
        let design = Array2::zeros((1, 0));
        let p = mnl_predict(&beta, &design);
        assert_abs_diff_eq!(p[[0, 0]], 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], 0.268_941_421_369_995_1, epsilon = 1e-12);
    }

    #[test]
    fn predict_is_shift_invariant_and_uniform_when_equal() {
        let design = arr2(&[[0.5, -0.25]]);
        let b1 = arr2(&[[0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [0.0, 1.0, 2.0]]);
        let p1 = mnl_predict(&b1, &design);
        for j in 0..3 {
            assert_abs_diff_eq!(p1[[0, j]], 1.0 / 3.0, epsilon = 1e-12);
        }
        // Shifting all constants by c leaves probabilities unchanged.
        let b2 = arr2(&[[7.0, 1.0, 2.0], [7.0, 1.0, 2.0], [7.0, 1.0, 2.0]]);
        let p2 = mnl_predict(&b2, &design);
        for j in 0..3 {
            assert_abs_diff_eq!(p1[[0, j]], p2[[0, j]], epsilon = 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one_under_extreme_utilities() {
        let beta = arr2(&[[500.0, 300.0], [-40.0, 0.0], [0.0, -300.0]]);
        let design = arr2(&[[1.0], [-1.0], [1000.0]]);
        let p = mnl_predict(&beta, &design);
        for row in p.rows() {
            let sum: f64 = row.sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn intercept_only_fit_reproduces_mean_shares() {
        let shares = arr2(&[
            [0.6, 0.3, 0.1],
            [0.2, 0.5, 0.3],
            [0.4, 0.4, 0.2],
            [0.1, 0.6, 0.3],
        ]);
        let design = Array2::zeros((4, 0));
        let model = mnl_fit(&design, &shares, &MnlOptions::default()).unwrap();
        assert!(model.converged);
        let p = model.predict(&design);
        let mean = shares.mean_axis(ndarray::Axis(0)).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_abs_diff_eq!(p[[i, j]], mean[j], epsilon = 1e-6);
            }
        }
        // Reference row pinned at zero.
        assert!(model.beta.row(2).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn uniform_shares_drive_coefficients_to_zero() {
        let design = arr2(&[[1.0], [-1.0], [0.5], [2.0]]);
        let shares = Array2::from_elem((4, 2), 0.5);
        let model = mnl_fit(
            &design,
            &shares,
            &MnlOptions {
                l2_lambda: 1e-3,
                ..MnlOptions::default()
            },
        )
        .unwrap();
        for b in model.beta.iter() {
            assert!(b.abs() < 1e-6, "beta {b}");
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let n = 5;
            let d = 3;
            let m = 3;
            let design =
                Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
            let mut shares = Array2::from_shape_fn((n, m), |_| rng.random::<f64>() + 0.1);
            for mut row in shares.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let beta = Array2::from_shape_fn((m, d + 1), |_| rng.random::<f64>() - 0.5);
            let lambda = 0.01;
            let reference = m - 1;
            let (_, grad) = mnl_loss_gradient(&beta, &design, &shares, lambda, reference);
            let h = 1e-6;
            for i in 0..m {
                if i == reference {
                    continue;
                }
                for k in 0..=d {
                    let mut bp = beta.clone();
                    bp[[i, k]] += h;
                    let mut bm = beta.clone();
                    bm[[i, k]] -= h;
                    let (lp, _) = mnl_loss_gradient(&bp, &design, &shares, lambda, reference);
                    let (lm, _) = mnl_loss_gradient(&bm, &design, &shares, lambda, reference);
                    let fd = (lp - lm) / (2.0 * h);
                    let g = grad[[i, k]];
                    let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn loss_decreases_across_accepted_steps() {
        // Instrument by refitting with increasing iteration caps: the loss
        // sequence across caps must be non-increasing.
        let design = arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]]);
        let shares = arr2(&[[0.7, 0.3], [0.2, 0.8], [0.5, 0.5], [0.9, 0.1]]);
        let mut last = f64::INFINITY;
        for iters in [1, 3, 10, 50, 200] {
            let model = mnl_fit(
                &design,
                &shares,
                &MnlOptions {
                    max_iters: iters,
                    ..MnlOptions::default()
                },
            )
            .unwrap();
            let (loss, _) = mnl_loss_gradient(
                &model.beta,
                &design,
                &shares,
                model.l2_lambda,
                model.reference_mode,
            );
            assert!(loss <= last + 1e-12, "loss {loss} after cap {iters} vs {last}");
            last = loss;
        }
    }

    #[test]
    fn rejects_single_mode_and_shape_mismatch() {
        let design = arr2(&[[1.0]]);
        assert!(mnl_fit(&design, &arr2(&[[1.0]]), &MnlOptions::default()).is_err());
        let shares = arr2(&[[0.5, 0.5], [0.5, 0.5]]);
        assert!(mnl_fit(&design, &shares, &MnlOptions::default()).is_err());
    }
}
