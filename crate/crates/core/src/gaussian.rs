//! Dense and low-rank multivariate-Gaussian algebra.
//!
//! Everything downstream (GP posteriors, neural-process likelihoods,
//! acquisition entropies) reduces to the factorizations and log-densities
//! in this module. Low-rank-plus-diagonal covariances `F·Fᵀ + Diag(d)` are
//! handled with the Woodbury identity and the matrix determinant lemma so
//! their cost stays `O(N·R²)` instead of `O(N³)`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Joint Gaussian with an explicitly materialized covariance.
#[derive(Debug, Clone)]
pub struct DenseGaussian {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Joint Gaussian with covariance `factor · factorᵀ + Diag(diag)`.
///
/// `factor` is `N×R` where `R` is the number of covariance basis functions;
/// `diag` must be strictly positive so the implied covariance is positive
/// definite by construction.
#[derive(Debug, Clone)]
pub struct LowRankDiagGaussian {
    pub mean: Array1<f64>,
    pub factor: Array2<f64>,
    pub diag: Array1<f64>,
}

impl LowRankDiagGaussian {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    /// Materialize the full covariance matrix. For tests and small N only.
    pub fn dense_cov(&self) -> Array2<f64> {
        let mut cov = self.factor.dot(&self.factor.t());
        for i in 0..self.diag.len() {
            cov[[i, i]] += self.diag[i];
        }
        cov
    }
}

/// A model's predictive distribution: GP baselines produce dense
/// covariances, the neural process produces low-rank-plus-diagonal ones.
#[derive(Debug, Clone)]
pub enum GaussianPredictive {
    Dense(DenseGaussian),
    LowRank(LowRankDiagGaussian),
}

impl GaussianPredictive {
    pub fn len(&self) -> usize {
        match self {
            GaussianPredictive::Dense(g) => g.mean.len(),
            GaussianPredictive::LowRank(g) => g.mean.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> &Array1<f64> {
        match self {
            GaussianPredictive::Dense(g) => &g.mean,
            GaussianPredictive::LowRank(g) => &g.mean,
        }
    }

    /// Per-target marginal variances (diagonal of the covariance).
    pub fn marginal_variances(&self) -> Array1<f64> {
        match self {
            GaussianPredictive::Dense(g) => g.cov.diag().to_owned(),
            GaussianPredictive::LowRank(g) => {
                let mut v = g.diag.clone();
                for (i, row) in g.factor.rows().into_iter().enumerate() {
                    v[i] += row.dot(&row);
                }
                v
            }
        }
    }

    /// Joint log-density of `y` under this predictive.
    pub fn logpdf(&self, y: ArrayView1<f64>) -> Result<f64> {
        match self {
            GaussianPredictive::Dense(g) => dense_logpdf(g, y, 0.0),
            GaussianPredictive::LowRank(g) => lowrank_logpdf(g, y),
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How many times the jitter is multiplied by 10 before giving up.
const MAX_JITTER_ESCALATIONS: usize = 4;

fn check_square_symmetric(a: ArrayView2<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "expected square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut scale = 0.0f64;
    for v in a.iter() {
        scale = scale.max(v.abs());
    }
    let tol = 1e-8 * scale.max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return Err(Error::ShapeMismatch(format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

fn mean_diag(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    a.diag().iter().map(|v| v.abs()).sum::<f64>() / n as f64
}

/// One Cholesky attempt on `A + add·I`. When `allow_semidefinite` is set,
/// exactly-zero pivots are accepted (with the remaining column forced to
/// zero) so that degenerate covariances can still be sampled from.
fn try_cholesky(a: ArrayView2<f64>, add: f64, allow_semidefinite: bool) -> Option<Array2<f64>> {
    let n = a.nrows();
    let scale = mean_diag(a).max(1e-300);
    let tol = 1e-12 * scale;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let lj = l.slice(s![j, ..j]).to_owned();
        let mut d = a[[j, j]] + add - lj.dot(&lj);
        if !d.is_finite() {
            return None;
        }
        if d <= 0.0 {
            if allow_semidefinite && d > -tol {
                d = 0.0;
            } else {
                return None;
            }
        }
        let piv = d.sqrt();
        l[[j, j]] = piv;
        for i in (j + 1)..n {
            let s = a[[i, j]] + if i == j { add } else { 0.0 } - l.slice(s![i, ..j]).dot(&lj);
            if piv > 0.0 {
                l[[i, j]] = s / piv;
            } else if s.abs() <= tol {
                l[[i, j]] = 0.0;
            } else {
                return None;
            }
        }
    }
    Some(l)
}

fn cholesky_impl(
    a: ArrayView2<f64>,
    jitter: f64,
    allow_semidefinite: bool,
) -> Result<(Array2<f64>, f64)> {
    check_square_symmetric(a)?;
    if jitter < 0.0 {
        return Err(Error::InvalidConfig("jitter must be non-negative".into()));
    }
    if let Some(l) = try_cholesky(a, jitter, allow_semidefinite) {
        return Ok((l, jitter));
    }
    // Escalate geometrically from 1e-8 x the mean diagonal magnitude.
    let base = 1e-8 * mean_diag(a).max(1.0);
    let mut j = base.max(jitter * 10.0);
    for _ in 0..=MAX_JITTER_ESCALATIONS {
        if let Some(l) = try_cholesky(a, j, allow_semidefinite) {
            return Ok((l, j));
        }
        j *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "Cholesky failed for {}x{} matrix at maximum jitter {:.3e}",
        a.nrows(),
        a.nrows(),
        j / 10.0
    )))
}

/// Lower-triangular `L` with `L·Lᵀ = A + jitter·I`.
///
/// If the factorization fails at the requested jitter, the jitter is
/// escalated geometrically (x10, starting from 1e-8 times the mean
/// diagonal) a bounded number of times before reporting
/// [`Error::NotPositiveDefinite`]. Exact zero pivots are tolerated so that
/// rank-deficient but consistent covariances (e.g. the zero matrix) remain
/// factorizable for sampling.
pub fn cholesky_psd(a: &Array2<f64>, jitter: f64) -> Result<Array2<f64>> {
    cholesky_impl(a.view(), jitter, true).map(|(l, _)| l)
}

/// Strictly-positive-definite Cholesky used by solves and log-densities.
fn cholesky_pd(a: ArrayView2<f64>, jitter: f64) -> Result<Array2<f64>> {
    cholesky_impl(a, jitter, false).map(|(l, _)| l)
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        let dot = l.slice(s![i, ..i]).dot(&x.slice(s![..i]));
        x[i] = (x[i] - dot) / l[[i, i]];
    }
    x
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_t(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in (i + 1)..n {
            acc -= l[[k, i]] * x[k];
        }
        x[i] = acc / l[[i, i]];
    }
    x
}

/// Solve `(L·Lᵀ) x = b`.
pub fn chol_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    solve_lower_t(l, solve_lower(l, b).view())
}

/// Solve `(L·Lᵀ) X = B` column-wise.
pub fn chol_solve_mat(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        out.column_mut(j).assign(&chol_solve(l, col));
    }
    out
}

fn log_det_from_chol(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

/// `log N(y; mean, cov + noise_var·I)`.
pub fn dense_logpdf(g: &DenseGaussian, y: ArrayView1<f64>, noise_var: f64) -> Result<f64> {
    let n = g.mean.len();
    if y.len() != n || g.cov.nrows() != n || g.cov.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "dense_logpdf: mean {}, y {}, cov {}x{}",
            n,
            y.len(),
            g.cov.nrows(),
            g.cov.ncols()
        )));
    }
    if noise_var < 0.0 {
        return Err(Error::InvalidConfig("noise_var must be non-negative".into()));
    }
    let mut k = g.cov.clone();
    if noise_var > 0.0 {
        for i in 0..n {
            k[[i, i]] += noise_var;
        }
    }
    let l = cholesky_pd(k.view(), 0.0)?;
    let r = &y.to_owned() - &g.mean;
    let z = solve_lower(&l, r.view());
    Ok(-0.5 * (n as f64 * LN_2PI + log_det_from_chol(&l) + z.dot(&z)))
}

/// Pieces of the Woodbury solve that both the log-density and the
/// neural-process loss gradient need.
pub(crate) struct WoodburyFactors {
    /// `F` scaled row-wise by `1/d`.
    pub f_over_d: Array2<f64>,
    /// Cholesky of the capacitance `A = I_R + Fᵀ D⁻¹ F`.
    pub chol_a: Array2<f64>,
    /// `log det(F·Fᵀ + D)`.
    pub log_det: f64,
}

pub(crate) fn woodbury_factors(factor: &Array2<f64>, diag: &Array1<f64>) -> Result<WoodburyFactors> {
    let n = factor.nrows();
    if diag.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "factor has {} rows but diag has {} entries",
            n,
            diag.len()
        )));
    }
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NotPositiveDefinite(
            "diagonal term must be strictly positive".into(),
        ));
    }
    let r = factor.ncols();
    let mut f_over_d = factor.clone();
    for (i, mut row) in f_over_d.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v / diag[i]);
    }
    let mut a = factor.t().dot(&f_over_d);
    for k in 0..r {
        a[[k, k]] += 1.0;
    }
    let chol_a = cholesky_pd(a.view(), 0.0).map_err(|_| {
        Error::NotPositiveDefinite("capacitance matrix failed to factorize".into())
    })?;
    let log_det = diag.iter().map(|d| d.ln()).sum::<f64>() + log_det_from_chol(&chol_a);
    Ok(WoodburyFactors {
        f_over_d,
        chol_a,
        log_det,
    })
}

/// `log N(y; mean, F·Fᵀ + Diag(d))` via the Woodbury identity and the
/// matrix determinant lemma; cost `O(N·R²)`.
pub fn lowrank_logpdf(g: &LowRankDiagGaussian, y: ArrayView1<f64>) -> Result<f64> {
    let n = g.mean.len();
    if y.len() != n || g.factor.nrows() != n || g.diag.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "lowrank_logpdf: mean {}, y {}, factor rows {}, diag {}",
            n,
            y.len(),
            g.factor.nrows(),
            g.diag.len()
        )));
    }
    let wf = woodbury_factors(&g.factor, &g.diag)?;
    let r = &y.to_owned() - &g.mean;
    let r_over_d = &r / &g.diag;
    // quad = rᵀD⁻¹r - uᵀA⁻¹u with u = FᵀD⁻¹r.
    let u = g.factor.t().dot(&r_over_d);
    let w = solve_lower(&wf.chol_a, u.view());
    let quad = r.dot(&r_over_d) - w.dot(&w);
    Ok(-0.5 * (n as f64 * LN_2PI + wf.log_det + quad))
}

/// `log det(F·Fᵀ + Diag(d))` via the matrix determinant lemma.
pub fn lowrank_logdet(factor: &Array2<f64>, diag: &Array1<f64>) -> Result<f64> {
    Ok(woodbury_factors(factor, diag)?.log_det)
}

/// Draw `count` samples given a precomputed lower Cholesky factor of the
/// covariance. Row `s` of the output is one sample.
pub fn sample_with_chol(
    mean: ArrayView1<f64>,
    chol_lower: &Array2<f64>,
    seed: u64,
    count: usize,
) -> Array2<f64> {
    let n = mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::<f64>::zeros((count, n));
    for mut row in out.rows_mut() {
        let z = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = chol_lower.dot(&z) + &mean;
        row.assign(&x);
    }
    out
}

/// Deterministic sampling from either predictive form.
///
/// The low-rank path samples as `mean + F·eps_R + sqrt(d) .* eps_N` without
/// materializing the covariance.
pub fn sample_mvn(g: &GaussianPredictive, seed: u64, count: usize) -> Result<Array2<f64>> {
    match g {
        GaussianPredictive::Dense(d) => {
            let l = cholesky_psd(&d.cov, 0.0)?;
            Ok(sample_with_chol(d.mean.view(), &l, seed, count))
        }
        GaussianPredictive::LowRank(g) => {
            let n = g.mean.len();
            let r = g.factor.ncols();
            if g.diag.iter().any(|&d| d < 0.0) {
                return Err(Error::NotPositiveDefinite(
                    "diagonal term must be non-negative for sampling".into(),
                ));
            }
            let sqrt_d = g.diag.mapv(f64::sqrt);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Array2::<f64>::zeros((count, n));
            for mut row in out.rows_mut() {
                let eps_r = Array1::from_iter((0..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let eps_n = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let x = g.factor.dot(&eps_r) + &sqrt_d * &eps_n + &g.mean;
                row.assign(&x);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Brute-force log-density via explicit inverse (Gauss-Jordan) and LU
    /// determinant; independent of the Cholesky path it checks.
    pub(crate) fn logpdf_bruteforce(mean: &Array1<f64>, cov: &Array2<f64>, y: &Array1<f64>) -> f64 {
        let n = mean.len();
        let inv = invert_gauss_jordan(cov);
        let det = det_lu(cov);
        let r = y - mean;
        let quad = r.dot(&inv.dot(&r));
        -0.5 * (n as f64 * LN_2PI + det.ln() + quad)
    }

    fn invert_gauss_jordan(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut m = Array2::<f64>::zeros((n, 2 * n));
        m.slice_mut(s![.., ..n]).assign(a);
        for i in 0..n {
            m[[i, n + i]] = 1.0;
        }
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[[r, col]].abs() > m[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                for c in 0..2 * n {
                    let t = m[[col, c]];
                    m[[col, c]] = m[[piv, c]];
                    m[[piv, c]] = t;
                }
            }
            let p = m[[col, col]];
            for c in 0..2 * n {
                m[[col, c]] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = m[[r, col]];
                    for c in 0..2 * n {
                        m[[r, c]] -= f * m[[col, c]];
                    }
                }
            }
        }
        m.slice(s![.., n..]).to_owned()
    }

    fn det_lu(a: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let mut m = a.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[[r, col]].abs() > m[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                det = -det;
                for c in 0..n {
                    let t = m[[col, c]];
                    m[[col, c]] = m[[piv, c]];
                    m[[piv, c]] = t;
                }
            }
            det *= m[[col, col]];
            for r in col + 1..n {
                let f = m[[r, col]] / m[[col, col]];
                for c in col..n {
                    m[[r, c]] -= f * m[[col, c]];
                }
            }
        }
        det
    }

    pub(crate) fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        let b = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
        let mut a = b.dot(&b.t());
        for i in 0..n {
            a[[i, i]] += n as f64 * 0.5;
        }
        a
    }

    #[test]
    fn cholesky_identity() {
        let a = Array2::<f64>::eye(3);
        let l = cholesky_psd(&a, 0.0).unwrap();
        assert_abs_diff_eq!(l, Array2::eye(3), epsilon = 1e-14);
    }

    #[test]
    fn cholesky_hand_case() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky_psd(&a, 0.0).unwrap();
        let expect = array![[2.0, 0.0], [1.0, 2.0f64.sqrt()]];
        assert_abs_diff_eq!(l, expect, epsilon = 1e-12);
        let rt = l.dot(&l.t());
        assert_abs_diff_eq!(rt, a, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_indefinite_fails_after_escalation() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalue -1
        match cholesky_psd(&a, 0.0) {
            Err(Error::NotPositiveDefinite(_)) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 5, 20] {
            let a = random_spd(&mut rng, n);
            let l = cholesky_psd(&a, 0.0).unwrap();
            let rt = l.dot(&l.t());
            let num = (&rt - &a).mapv(|v| v * v).sum().sqrt();
            let den = a.mapv(|v| v * v).sum().sqrt();
            assert!(num / den <= 1e-8, "roundtrip error {}", num / den);
        }
    }

    #[test]
    fn dense_logpdf_standard_normal() {
        let g = DenseGaussian {
            mean: array![0.0],
            cov: Array2::eye(1),
        };
        let lp = dense_logpdf(&g, array![0.0].view(), 0.0).unwrap();
        assert_abs_diff_eq!(lp, -0.918_938_533_204_672_7, epsilon = 1e-12);

        let g2 = DenseGaussian {
            mean: Array1::zeros(2),
            cov: Array2::eye(2),
        };
        let lp2 = dense_logpdf(&g2, array![1.0, 1.0].view(), 0.0).unwrap();
        assert_abs_diff_eq!(lp2, -LN_2PI - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dense_logpdf_matches_explicit_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let cov = random_spd(&mut rng, 5);
            let mean = Array1::from_iter((0..5).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let y = Array1::from_iter((0..5).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let g = DenseGaussian {
                mean: mean.clone(),
                cov: cov.clone(),
            };
            let got = dense_logpdf(&g, y.view(), 0.0).unwrap();
            let want = logpdf_bruteforce(&mean, &cov, &y);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "got {got}, want {want}"
            );
        }
    }

    #[test]
    fn lowrank_logpdf_reduces_to_standard_normal() {
        let g = LowRankDiagGaussian {
            mean: array![0.0],
            factor: Array2::zeros((1, 1)),
            diag: array![1.0],
        };
        let lp = lowrank_logpdf(&g, array![0.0].view()).unwrap();
        assert_abs_diff_eq!(lp, -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    fn random_lowrank(rng: &mut ChaCha8Rng, n: usize, r: usize) -> (LowRankDiagGaussian, Array1<f64>) {
        let factor = Array2::from_shape_fn((n, r), |_| rng.sample::<f64, _>(StandardNormal));
        let diag = Array1::from_iter((0..n).map(|_| 0.1 + rng.random::<f64>()));
        let mean = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (LowRankDiagGaussian { mean, factor, diag }, y)
    }

    #[test]
    fn lowrank_logpdf_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, y) = random_lowrank(&mut rng, 6, 2);
        let got = lowrank_logpdf(&g, y.view()).unwrap();
        let dense = DenseGaussian {
            mean: g.mean.clone(),
            cov: g.dense_cov(),
        };
        let want = dense_logpdf(&dense, y.view(), 0.0).unwrap();
        assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn lowrank_logpdf_batch_vs_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut max_rel = 0.0f64;
        for _ in 0..100 {
            let (g, y) = random_lowrank(&mut rng, 50, 10);
            let got = lowrank_logpdf(&g, y.view()).unwrap();
            let want = logpdf_bruteforce(&g.mean, &g.dense_cov(), &y);
            max_rel = max_rel.max((got - want).abs() / want.abs().max(1.0));
        }
        assert!(max_rel < 1e-8, "max relative error {max_rel}");
    }

    #[test]
    fn lowrank_logdet_cases() {
        // factor = 0, diag = (e, e, e) -> log e^3 = 3
        let ld = lowrank_logdet(
            &Array2::zeros((3, 1)),
            &Array1::from_elem(3, std::f64::consts::E),
        )
        .unwrap();
        assert_abs_diff_eq!(ld, 3.0, epsilon = 1e-12);

        // ones column + identity diag: det(J + I) = 4
        let ld2 = lowrank_logdet(&Array2::ones((3, 1)), &Array1::ones(3)).unwrap();
        assert_abs_diff_eq!(ld2, 4.0f64.ln(), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (g, _) = random_lowrank(&mut rng, 20, 5);
        let got = lowrank_logdet(&g.factor, &g.diag).unwrap();
        let want = det_lu(&g.dense_cov()).ln();
        assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn lowrank_rejects_nonpositive_diag() {
        let g = LowRankDiagGaussian {
            mean: array![0.0, 0.0],
            factor: Array2::zeros((2, 1)),
            diag: array![1.0, 0.0],
        };
        assert!(matches!(
            lowrank_logpdf(&g, array![0.0, 0.0].view()),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn sample_degenerate_returns_mean() {
        let g = GaussianPredictive::Dense(DenseGaussian {
            mean: array![1.0, 2.0],
            cov: Array2::zeros((2, 2)),
        });
        let s = sample_mvn(&g, 9, 8).unwrap();
        for row in s.rows() {
            assert_abs_diff_eq!(row.to_owned(), array![1.0, 2.0], epsilon = 1e-14);
        }
    }

    #[test]
    fn sample_moments_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cov = random_spd(&mut rng, 3);
        let mean = array![0.5, -1.0, 2.0];
        let g = GaussianPredictive::Dense(DenseGaussian {
            mean: mean.clone(),
            cov: cov.clone(),
        });
        let n = 50_000usize;
        let s = sample_mvn(&g, 123, n).unwrap();
        let emp_mean = s.mean_axis(ndarray::Axis(0)).unwrap();
        for i in 0..3 {
            let sigma = cov[[i, i]].sqrt();
            assert!(
                (emp_mean[i] - mean[i]).abs() < 3.0 * sigma / (n as f64).sqrt() * 1.5,
                "mean off in dim {i}"
            );
        }
        let centered = &s - &emp_mean;
        let emp_cov = centered.t().dot(&centered) / n as f64;
        let err = (&emp_cov - &cov).mapv(|v| v * v).sum().sqrt();
        let nrm = cov.mapv(|v| v * v).sum().sqrt();
        assert!(err / nrm < 0.05, "cov frobenius error {}", err / nrm);
    }

    #[test]
    fn sample_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (g, _) = random_lowrank(&mut rng, 7, 3);
        let g = GaussianPredictive::LowRank(g);
        let a = sample_mvn(&g, 77, 4).unwrap();
        let b = sample_mvn(&g, 77, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lowrank_sampling_matches_materialized_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (g, _) = random_lowrank(&mut rng, 4, 2);
        let cov = g.dense_cov();
        let s = sample_mvn(&GaussianPredictive::LowRank(g.clone()), 5, 40_000).unwrap();
        let emp_mean = s.mean_axis(ndarray::Axis(0)).unwrap();
        let centered = &s - &emp_mean;
        let emp_cov = centered.t().dot(&centered) / 40_000.0;
        let err = (&emp_cov - &cov).mapv(|v| v * v).sum().sqrt();
        let nrm = cov.mapv(|v| v * v).sum().sqrt();
        assert!(err / nrm < 0.05);
    }

    #[test]
    fn logpdf_maximized_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (g, _) = random_lowrank(&mut rng, 8, 3);
        let at_mean = lowrank_logpdf(&g, g.mean.view()).unwrap();
        for _ in 0..10 {
            let dir =
                Array1::from_iter((0..8).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1));
            let y = &g.mean + &dir;
            let perturbed = lowrank_logpdf(&g, y.view()).unwrap();
            assert!(perturbed < at_mean);
        }
    }

    #[test]
    fn marginal_variances_lowrank() {
        let g = LowRankDiagGaussian {
            mean: array![0.0, 0.0],
            factor: array![[1.0, 2.0], [0.0, 3.0]],
            diag: array![0.5, 0.25],
        };
        let v = GaussianPredictive::LowRank(g).marginal_variances();
        assert_abs_diff_eq!(v, array![5.5, 9.25], epsilon = 1e-14);
    }
}
