//! Performance metrics: RMSE, mean marginal NLL, normalized joint NLL,
//! plus PIT calibration and sharpness diagnostics.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::gaussian::GaussianPredictive;

/// Aggregated metric values over an evaluation task set.
#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub rmse: f64,
    pub marginal_nll: f64,
    pub joint_nll_normalized: f64,
    pub n_targets: usize,
    pub n_tasks: usize,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_len(pred: &GaussianPredictive, y: ArrayView1<f64>) -> Result<()> {
    if pred.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "predictive has {} targets but y has {}",
            pred.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Root mean squared error of the predictive mean.
pub fn rmse(pred: &GaussianPredictive, y: ArrayView1<f64>) -> Result<f64> {
    check_len(pred, y)?;
    let mu = pred.mean();
    let mse = mu
        .iter()
        .zip(y.iter())
        .map(|(m, v)| (m - v) * (m - v))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

/// Mean over targets of the negative log-density of the point-wise
/// Gaussian marginals.
pub fn marginal_nll(pred: &GaussianPredictive, y: ArrayView1<f64>) -> Result<f64> {
    check_len(pred, y)?;
    let mu = pred.mean();
    let var = pred.marginal_variances();
    let mut acc = 0.0;
    for i in 0..y.len() {
        let r = y[i] - mu[i];
        acc += 0.5 * (LN_2PI + var[i].ln() + r * r / var[i]);
    }
    Ok(acc / y.len() as f64)
}

/// Negative joint log-density divided by the number of targets.
pub fn joint_nll_normalized(pred: &GaussianPredictive, y: ArrayView1<f64>) -> Result<f64> {
    check_len(pred, y)?;
    Ok(-pred.logpdf(y)? / y.len() as f64)
}

/// Probability integral transform: the marginal CDF evaluated at the true
/// values. Uniform PIT histograms indicate calibrated marginals.
pub fn pit_values(pred: &GaussianPredictive, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_len(pred, y)?;
    let mu = pred.mean();
    let var = pred.marginal_variances();
    Ok(Array1::from_iter((0..y.len()).map(|i| {
        let z = (y[i] - mu[i]) / var[i].sqrt();
        normal_cdf(z)
    })))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Mean standard deviation of the marginal distributions.
pub fn sharpness(pred: &GaussianPredictive) -> f64 {
    let var = pred.marginal_variances();
    if var.is_empty() {
        return 0.0;
    }
    var.mapv(f64::sqrt).mean().unwrap()
}

/// Histogram of PIT values over `bins` equal-width bins on [0, 1].
pub fn pit_histogram(pit: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0usize; bins];
    for &p in pit {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        h[b] += 1;
    }
    h
}

/// Kolmogorov-Smirnov statistic of a sample against Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut ks = 0.0f64;
    for (i, &u) in v.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - u;
        let lo = u - i as f64 / n;
        ks = ks.max(hi.max(lo));
    }
    ks
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{sample_mvn, DenseGaussian, LowRankDiagGaussian};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn diag_pred(mu: Array1<f64>, var: Array1<f64>) -> GaussianPredictive {
        let n = mu.len();
        let mut cov = Array2::zeros((n, n));
        for i in 0..n {
            cov[[i, i]] = var[i];
        }
        GaussianPredictive::Dense(DenseGaussian { mean: mu, cov })
    }

    #[test]
    fn rmse_cases() {
        let p = diag_pred(array![1.0, 2.0], array![1.0, 1.0]);
        assert_abs_diff_eq!(rmse(&p, array![1.0, 2.0].view()).unwrap(), 0.0);

        let p = diag_pred(Array1::zeros(4), Array1::ones(4));
        let v = rmse(&p, array![3.0, 4.0, 0.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(v, 2.5, epsilon = 1e-14);
    }

    #[test]
    fn marginal_nll_cases() {
        let p = diag_pred(array![0.5], array![1.0]);
        let at_mode = marginal_nll(&p, array![0.5].view()).unwrap();
        assert_abs_diff_eq!(at_mode, 0.918_938_533_204_672_7, epsilon = 1e-12);
        let off = marginal_nll(&p, array![1.5].view()).unwrap();
        assert_abs_diff_eq!(off, 0.918_938_533_204_672_7 + 0.5, epsilon = 1e-12);
    }

    #[test]
    fn joint_equals_marginal_for_diagonal_covariance() {
        let mut rng = crate::rng::stream(3, "metrics", &[]);
        for _ in 0..10 {
            let n = 6;
            let mu = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            let var = Array1::from_shape_fn(n, |_| 0.2 + rng.random::<f64>());
            let y = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            let p = diag_pred(mu, var);
            let a = joint_nll_normalized(&p, y.view()).unwrap();
            let b = marginal_nll(&p, y.view()).unwrap();
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn correlation_helps_on_the_ridge() {
        // Two strongly correlated targets with residuals on the ridge: the
        // joint NLL beats the marginal NLL.
        let rho = 0.95;
        let cov = array![[1.0, rho], [rho, 1.0]];
        let p = GaussianPredictive::Dense(DenseGaussian {
            mean: Array1::zeros(2),
            cov,
        });
        let y = array![1.2, 1.2];
        let joint = joint_nll_normalized(&p, y.view()).unwrap();
        let marg = marginal_nll(&p, y.view()).unwrap();
        // Closed form for the bivariate case.
        let quad = (y[0] * y[0] - 2.0 * rho * y[0] * y[1] + y[1] * y[1]) / (1.0 - rho * rho);
        let want = 0.5 * (2.0 * LN_2PI + (1.0f64 - rho * rho).ln() + quad) / 2.0;
        assert_abs_diff_eq!(joint, want, epsilon = 1e-10);
        assert!(joint < marg);
    }

    #[test]
    fn lowrank_joint_matches_dense_materialization() {
        let mut rng = crate::rng::stream(8, "metrics-lr", &[]);
        let n = 12;
        let r = 3;
        let factor = Array2::from_shape_fn((n, r), |_| rng.sample::<f64, _>(StandardNormal));
        let diag = Array1::from_shape_fn(n, |_| 0.3 + rng.random::<f64>());
        let mean = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let lr = LowRankDiagGaussian {
            mean: mean.clone(),
            factor: factor.clone(),
            diag: diag.clone(),
        };
        let dense = GaussianPredictive::Dense(DenseGaussian {
            mean,
            cov: lr.dense_cov(),
        });
        let a = joint_nll_normalized(&GaussianPredictive::LowRank(lr), y.view()).unwrap();
        let b = joint_nll_normalized(&dense, y.view()).unwrap();
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
    }

    #[test]
    fn pit_cases() {
        let p = diag_pred(array![2.0, -1.0], array![4.0, 9.0]);
        let at_mean = pit_values(&p, array![2.0, -1.0].view()).unwrap();
        assert_abs_diff_eq!(at_mean[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(at_mean[1], 0.5, epsilon = 1e-12);
        let plus_sigma = pit_values(&p, array![4.0, 2.0].view()).unwrap();
        assert_abs_diff_eq!(plus_sigma[0], 0.841_344_746_068_542_9, epsilon = 1e-9);
        assert_abs_diff_eq!(plus_sigma[1], 0.841_344_746_068_542_9, epsilon = 1e-9);
    }

    #[test]
    fn pit_self_consistency_is_uniform() {
        // Data drawn from the model's own marginals must give uniform PIT.
        let mut rng = crate::rng::stream(5, "pit", &[]);
        let n = 10_000;
        let mu = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let var = Array1::from_shape_fn(n, |_| 0.2 + 2.0 * rng.random::<f64>());
        let p = GaussianPredictive::LowRank(LowRankDiagGaussian {
            mean: mu.clone(),
            factor: Array2::zeros((n, 1)),
            diag: var.clone(),
        });
        let y = sample_mvn(&p, 99, 1).unwrap().row(0).to_owned();
        let pit = pit_values(&p, y.view()).unwrap();
        let ks = ks_uniform(pit.as_slice().unwrap());
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn sharpness_cases() {
        let p = diag_pred(array![0.0, 10.0], array![4.0, 4.0]);
        assert_abs_diff_eq!(sharpness(&p), 2.0, epsilon = 1e-14);
        let shifted = diag_pred(array![5.0, -3.0], array![4.0, 4.0]);
        assert_abs_diff_eq!(sharpness(&shifted), 2.0, epsilon = 1e-14);

        let lr = GaussianPredictive::LowRank(LowRankDiagGaussian {
            mean: array![0.0, 0.0],
            factor: array![[1.0], [2.0]],
            diag: array![0.5, 0.5],
        });
        let want = ((1.0f64 + 0.5).sqrt() + (4.0f64 + 0.5).sqrt()) / 2.0;
        assert_abs_diff_eq!(sharpness(&lr), want, epsilon = 1e-14);
    }

    #[test]
    fn metrics_invariant_under_simultaneous_permutation() {
        let mut rng = crate::rng::stream(17, "perm", &[]);
        let n = 5;
        let mu = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let var = Array1::from_shape_fn(n, |_| 0.5 + rng.random::<f64>());
        let y = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let p = diag_pred(mu.clone(), var.clone());
        let perm = [3usize, 0, 4, 1, 2];
        let pp = diag_pred(
            Array1::from_iter(perm.iter().map(|&i| mu[i])),
            Array1::from_iter(perm.iter().map(|&i| var[i])),
        );
        let yp = Array1::from_iter(perm.iter().map(|&i| y[i]));
        assert_abs_diff_eq!(
            rmse(&p, y.view()).unwrap(),
            rmse(&pp, yp.view()).unwrap(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            marginal_nll(&p, y.view()).unwrap(),
            marginal_nll(&pp, yp.view()).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            joint_nll_normalized(&p, y.view()).unwrap(),
            joint_nll_normalized(&pp, yp.view()).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pit_histogram_bins_sum_to_sample_count() {
        let vals = vec![0.01, 0.5, 0.99, 0.49, 0.51, 1.0];
        let h = pit_histogram(&vals, 20);
        assert_eq!(h.iter().sum::<usize>(), 6);
        assert_eq!(h[19], 2); // 0.99 and 1.0 land in the last bin
    }
}
