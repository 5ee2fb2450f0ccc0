//! Covariance functions for the GP baselines: non-isotropic EQ and RQ
//! kernels and the non-stationary Gibbs kernel with basis-function
//! length-scale fields.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Gibbs kernel parameters: spatially varying length scales built from a
/// weighted sum of regularly placed Gaussian basis functions.
#[derive(Debug, Clone)]
pub struct GibbsKernel {
    pub variance: f64,
    /// Positive basis weights for the x1 length-scale field.
    pub weights1: Vec<f64>,
    /// Positive basis weights for the x2 length-scale field.
    pub weights2: Vec<f64>,
    /// Basis centers, an M-point regular grid over the domain.
    pub centers: Vec<[f64; 2]>,
    /// Basis length scale; fixed and equal to the center spacing.
    pub basis_scale: f64,
}

impl GibbsKernel {
    /// Regular `m x m` basis grid over `[-1, 1]^2` with all weights set so
    /// the length-scale fields start near `init_len` everywhere.
    pub fn with_uniform_weights(m: usize, init_len: f64, variance: f64) -> Self {
        assert!(m >= 2, "basis grid needs at least 2 points per side");
        let spacing = 2.0 / (m as f64 - 1.0);
        let mut centers = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                centers.push([-1.0 + i as f64 * spacing, -1.0 + j as f64 * spacing]);
            }
        }
        // Normalize by the average basis sum so the initial field is flat.
        let probe = [[0.0, 0.0], [-0.7, 0.4], [0.5, -0.9], [0.9, 0.9]];
        let mut avg_sum = 0.0;
        for p in probe {
            avg_sum += centers
                .iter()
                .map(|c| basis_value(p, *c, spacing))
                .sum::<f64>();
        }
        avg_sum /= probe.len() as f64;
        let w = init_len / avg_sum;
        GibbsKernel {
            variance,
            weights1: vec![w; m * m],
            weights2: vec![w; m * m],
            centers,
            basis_scale: spacing,
        }
    }

    /// Evaluate the two length-scale fields at `x`.
    pub fn lengthscale_field(&self, x: [f64; 2]) -> (f64, f64) {
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for (m, c) in self.centers.iter().enumerate() {
            let b = basis_value(x, *c, self.basis_scale);
            l1 += self.weights1[m] * b;
            l2 += self.weights2[m] * b;
        }
        (l1, l2)
    }
}

fn basis_value(x: [f64; 2], center: [f64; 2], scale: f64) -> f64 {
    let d0 = x[0] - center[0];
    let d1 = x[1] - center[1];
    (-(d0 * d0 + d1 * d1) / (2.0 * scale * scale)).exp()
}

#[derive(Debug, Clone)]
pub enum KernelVariant {
    Eq {
        variance: f64,
        len1: f64,
        len2: f64,
    },
    Rq {
        variance: f64,
        len1: f64,
        len2: f64,
        alpha: f64,
    },
    Gibbs(GibbsKernel),
}

impl KernelVariant {
    pub fn variance(&self) -> f64 {
        match self {
            KernelVariant::Eq { variance, .. } => *variance,
            KernelVariant::Rq { variance, .. } => *variance,
            KernelVariant::Gibbs(g) => g.variance,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelVariant::Eq { .. } => "eq",
            KernelVariant::Rq { .. } => "rq",
            KernelVariant::Gibbs(_) => "gibbs",
        }
    }
}

/// Kernel hyperparameters plus the observation noise variance.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub variant: KernelVariant,
    pub noise_var: f64,
}

/// Evaluate the (noise-free) covariance function at a pair of locations.
pub fn kernel_eval(variant: &KernelVariant, x: [f64; 2], xp: [f64; 2]) -> f64 {
    match variant {
        KernelVariant::Eq {
            variance,
            len1,
            len2,
        } => {
            let d1 = x[0] - xp[0];
            let d2 = x[1] - xp[1];
            variance * (-d1 * d1 / (2.0 * len1 * len1) - d2 * d2 / (2.0 * len2 * len2)).exp()
        }
        KernelVariant::Rq {
            variance,
            len1,
            len2,
            alpha,
        } => {
            let d1 = x[0] - xp[0];
            let d2 = x[1] - xp[1];
            let b = 1.0
                + d1 * d1 / (2.0 * alpha * len1 * len1)
                + d2 * d2 / (2.0 * alpha * len2 * len2);
            variance * b.powf(-alpha)
        }
        KernelVariant::Gibbs(g) => {
            let la = g.lengthscale_field(x);
            let lb = g.lengthscale_field(xp);
            gibbs_pair(g.variance, x, xp, la, lb)
        }
    }
}

/// Gibbs covariance between two points given their length scales.
pub fn gibbs_pair(
    variance: f64,
    x: [f64; 2],
    xp: [f64; 2],
    l_x: (f64, f64),
    l_xp: (f64, f64),
) -> f64 {
    let (la1, la2) = l_x;
    let (lb1, lb2) = l_xp;
    let s1 = la1 * la1 + lb1 * lb1;
    let s2 = la2 * la2 + lb2 * lb2;
    let pre = (2.0 * la1 * lb1 / s1).sqrt() * (2.0 * la2 * lb2 / s2).sqrt();
    let d1 = x[0] - xp[0];
    let d2 = x[1] - xp[1];
    variance * pre * (-d1 * d1 / s1 - d2 * d2 / s2).exp()
}

/// Full Gibbs covariance matrix over `points` given per-point length
/// scales. Shared by the synthetic environment (analytic fields) and the
/// fitted Gibbs kernel (basis-expansion fields).
pub fn gibbs_cov_from_lengthscales(
    points: ArrayView2<f64>,
    len1: &Array1<f64>,
    len2: &Array1<f64>,
    variance: f64,
) -> Result<Array2<f64>> {
    let n = points.nrows();
    if len1.len() != n || len2.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gibbs_cov: {} points but {} / {} length scales",
            n,
            len1.len(),
            len2.len()
        )));
    }
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let xi = [points[[i, 0]], points[[i, 1]]];
        for j in 0..=i {
            let xj = [points[[j, 0]], points[[j, 1]]];
            let v = gibbs_pair(variance, xi, xj, (len1[i], len2[i]), (len1[j], len2[j]));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// Covariance matrix between two location sets.
pub fn kernel_matrix(
    variant: &KernelVariant,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Array2<f64> {
    match variant {
        KernelVariant::Gibbs(g) => {
            // Precompute length scales once per point.
            let lx: Vec<(f64, f64)> = xs
                .rows()
                .into_iter()
                .map(|r| g.lengthscale_field([r[0], r[1]]))
                .collect();
            let ly: Vec<(f64, f64)> = ys
                .rows()
                .into_iter()
                .map(|r| g.lengthscale_field([r[0], r[1]]))
                .collect();
            Array2::from_shape_fn((xs.nrows(), ys.nrows()), |(i, j)| {
                gibbs_pair(
                    g.variance,
                    [xs[[i, 0]], xs[[i, 1]]],
                    [ys[[j, 0]], ys[[j, 1]]],
                    lx[i],
                    ly[j],
                )
            })
        }
        _ => Array2::from_shape_fn((xs.nrows(), ys.nrows()), |(i, j)| {
            kernel_eval(
                variant,
                [xs[[i, 0]], xs[[i, 1]]],
                [ys[[j, 0]], ys[[j, 1]]],
            )
        }),
    }
}

/// Symmetric covariance matrix over one location set.
pub fn kernel_matrix_sym(variant: &KernelVariant, xs: ArrayView2<f64>) -> Array2<f64> {
    match variant {
        KernelVariant::Gibbs(g) => {
            let l1 = Array1::from_iter(
                xs.rows()
                    .into_iter()
                    .map(|r| g.lengthscale_field([r[0], r[1]]).0),
            );
            let l2 = Array1::from_iter(
                xs.rows()
                    .into_iter()
                    .map(|r| g.lengthscale_field([r[0], r[1]]).1),
            );
            gibbs_cov_from_lengthscales(xs, &l1, &l2, g.variance)
                .expect("length scales built from the same points")
        }
        _ => {
            let n = xs.nrows();
            let mut k = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                let xi = [xs[[i, 0]], xs[[i, 1]]];
                for j in 0..=i {
                    let v = kernel_eval(variant, xi, [xs[[j, 0]], xs[[j, 1]]]);
                    k[[i, j]] = v;
                    k[[j, i]] = v;
                }
            }
            k
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng) -> [f64; 2] {
        [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0]
    }

    #[test]
    fn lengthscale_field_single_center() {
        let g = GibbsKernel {
            variance: 1.0,
            weights1: vec![1.0],
            weights2: vec![1.0],
            centers: vec![[0.0, 0.0]],
            basis_scale: 1.0,
        };
        let (l1, l2) = g.lengthscale_field([0.0, 0.0]);
        assert_abs_diff_eq!(l1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l2, 1.0, epsilon = 1e-15);

        let (l1, _) = g.lengthscale_field([2.0f64.sqrt(), 0.0]);
        assert_abs_diff_eq!(l1, (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn lengthscale_field_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 4;
        let spacing = 2.0 / 3.0;
        let mut centers = Vec::new();
        for i in 0..m {
            for j in 0..m {
                centers.push([-1.0 + i as f64 * spacing, -1.0 + j as f64 * spacing]);
            }
        }
        let weights1: Vec<f64> = (0..16).map(|_| 0.1 + rng.random::<f64>()).collect();
        let weights2: Vec<f64> = (0..16).map(|_| 0.1 + rng.random::<f64>()).collect();
        let g = GibbsKernel {
            variance: 1.0,
            weights1: weights1.clone(),
            weights2: weights2.clone(),
            centers: centers.clone(),
            basis_scale: spacing,
        };
        for _ in 0..20 {
            let x = rand_point(&mut rng);
            let (l1, l2) = g.lengthscale_field(x);
            let mut n1 = 0.0;
            let mut n2 = 0.0;
            for (m, c) in centers.iter().enumerate() {
                let d0 = x[0] - c[0];
                let d1 = x[1] - c[1];
                let b = (-(d0 * d0 + d1 * d1) / (2.0 * spacing * spacing)).exp();
                n1 += weights1[m] * b;
                n2 += weights2[m] * b;
            }
            assert_abs_diff_eq!(l1, n1, epsilon = 1e-12);
            assert_abs_diff_eq!(l2, n2, epsilon = 1e-12);
            assert!(l1 > 0.0 && l2 > 0.0);
        }
    }

    #[test]
    fn eq_kernel_values() {
        let eq = KernelVariant::Eq {
            variance: 2.25,
            len1: 0.4,
            len2: 0.7,
        };
        let x = [0.3, -0.2];
        assert_abs_diff_eq!(kernel_eval(&eq, x, x), 2.25, epsilon = 1e-15);

        let unit = KernelVariant::Eq {
            variance: 1.0,
            len1: 1.0,
            len2: 1.0,
        };
        let v = kernel_eval(&unit, [3.0, 4.0], [0.0, 0.0]);
        assert_abs_diff_eq!(v, (-12.5f64).exp(), epsilon = 1e-18);
    }

    #[test]
    fn rq_kernel_value() {
        let rq = KernelVariant::Rq {
            variance: 1.0,
            len1: 1.0,
            len2: 1.0,
            alpha: 1.0,
        };
        let v = kernel_eval(&rq, [1.0, 0.0], [0.0, 0.0]);
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gibbs_reduces_to_eq_under_constant_lengthscale() {
        let len = 0.37;
        let g = KernelVariant::Gibbs(GibbsKernel {
            variance: 1.6,
            weights1: vec![len],
            weights2: vec![len],
            centers: vec![[0.0, 0.0]],
            // Huge basis scale makes the field constant over the domain.
            basis_scale: 1e8,
        });
        let eq = KernelVariant::Eq {
            variance: 1.6,
            len1: len,
            len2: len,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let a = rand_point(&mut rng);
            let b = rand_point(&mut rng);
            let kg = kernel_eval(&g, a, b);
            let ke = kernel_eval(&eq, a, b);
            assert!((kg - ke).abs() <= 1e-12, "gibbs {kg} vs eq {ke}");
        }
    }

    #[test]
    fn rq_approaches_eq_for_large_alpha() {
        let rq = KernelVariant::Rq {
            variance: 1.3,
            len1: 0.5,
            len2: 0.8,
            alpha: 1e6,
        };
        let eq = KernelVariant::Eq {
            variance: 1.3,
            len1: 0.5,
            len2: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let a = rand_point(&mut rng);
            let b = rand_point(&mut rng);
            assert!((kernel_eval(&rq, a, b) - kernel_eval(&eq, a, b)).abs() <= 1e-4);
        }
    }

    #[test]
    fn symmetry_and_self_variance_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let variants = vec![
            KernelVariant::Eq {
                variance: 2.25,
                len1: 0.3,
                len2: 0.9,
            },
            KernelVariant::Rq {
                variance: 0.7,
                len1: 0.4,
                len2: 0.2,
                alpha: 1.7,
            },
            KernelVariant::Gibbs(GibbsKernel::with_uniform_weights(4, 0.4, 1.1)),
        ];
        for variant in &variants {
            for _ in 0..1000 {
                let a = rand_point(&mut rng);
                let b = rand_point(&mut rng);
                let kab = kernel_eval(variant, a, b);
                let kba = kernel_eval(variant, b, a);
                assert!((kab - kba).abs() <= 1e-14);
                let kaa = kernel_eval(variant, a, a);
                assert!((kaa - variant.variance()).abs() <= 1e-12 * variant.variance());
            }
        }
    }
}
