//! Exact GP baselines: posterior prediction and NLML hyperparameter
//! fitting for the EQ, RQ and Gibbs kernels.
//!
//! The baselines condition only on the scattered observation context set;
//! there is no mechanism for feeding them the auxiliary grid. One global
//! hyperparameter set is fitted per kernel variant across all dates.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::gaussian::{chol_solve, cholesky_psd, dense_logpdf, solve_lower, DenseGaussian};
use crate::kernels::{kernel_matrix, kernel_matrix_sym, GibbsKernel, KernelParams, KernelVariant};
use crate::rng::stream;
use crate::tasks::{ContextSet, Task};

/// Exact GP posterior at `targets` given the observation context.
///
/// An empty context returns the prior (zero mean, prior kernel matrix).
/// The returned covariance is the latent posterior; `noise_var` enters on
/// the context block only.
pub fn gp_predict(
    params: &KernelParams,
    context: &ContextSet,
    targets: ArrayView2<f64>,
) -> Result<DenseGaussian> {
    let n_c = context.len();
    let n_t = targets.nrows();
    let k_tt = kernel_matrix_sym(&params.variant, targets);
    if n_c == 0 {
        return Ok(DenseGaussian {
            mean: Array1::zeros(n_t),
            cov: k_tt,
        });
    }
    if context.channels() != 1 {
        return Err(Error::ShapeMismatch(
            "GP baselines take a single-channel observation context".into(),
        ));
    }
    let y = context.scalar_values().to_owned();
    let mut k_cc = kernel_matrix_sym(&params.variant, context.locations.view());
    for i in 0..n_c {
        k_cc[[i, i]] += params.noise_var;
    }
    let l = cholesky_psd(&k_cc, 0.0)?;
    let k_ct = kernel_matrix(&params.variant, context.locations.view(), targets);

    let alpha = chol_solve(&l, y.view());
    let mean = k_ct.t().dot(&alpha);

    // cov = K_tt - K_ct^T K_cc^{-1} K_ct via V = L^{-1} K_ct.
    let mut v = Array2::<f64>::zeros((n_c, n_t));
    for (j, col) in k_ct.columns().into_iter().enumerate() {
        v.column_mut(j).assign(&solve_lower(&l, col));
    }
    let cov = &k_tt - &v.t().dot(&v);
    Ok(DenseGaussian { mean, cov })
}

/// Negative log marginal likelihood of the observation context:
/// `-log N(y_c; 0, K_cc + noise_var I)`.
pub fn gp_nlml(params: &KernelParams, task: &Task) -> Result<f64> {
    let obs = task.observations();
    if obs.is_empty() {
        return Err(Error::EmptyContext(
            "NLML needs at least one observation".into(),
        ));
    }
    let k_cc = kernel_matrix_sym(&params.variant, obs.locations.view());
    let g = DenseGaussian {
        mean: Array1::zeros(obs.len()),
        cov: k_cc,
    };
    Ok(-dense_logpdf(&g, obs.scalar_values(), params.noise_var)?)
}

/// Which kernel family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpVariantKind {
    Eq,
    Rq,
    Gibbs,
}

impl GpVariantKind {
    pub fn name(self) -> &'static str {
        match self {
            GpVariantKind::Eq => "eq",
            GpVariantKind::Rq => "rq",
            GpVariantKind::Gibbs => "gibbs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eq" => Ok(GpVariantKind::Eq),
            "rq" => Ok(GpVariantKind::Rq),
            "gibbs" => Ok(GpVariantKind::Gibbs),
            other => Err(Error::InvalidConfig(format!("unknown GP variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpFitConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop when validation NLL has not improved for this many epochs.
    pub patience: usize,
    /// Basis grid side for the Gibbs length-scale fields.
    pub gibbs_grid: usize,
    /// Central-difference step for Gibbs gradients, in log-parameter space.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            learning_rate: 5e-3,
            max_epochs: 80,
            batch_size: 10,
            patience: 5,
            gibbs_grid: 10,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

/// One row of the fit history.
#[derive(Debug, Clone, Copy)]
pub struct FitEpoch {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub checkpointed: bool,
}

const NOISE_FLOOR: f64 = 1e-6;

/// Log-space parameter packing. Positivity of every scale/variance
/// parameter comes from exponentiating on unpack.
fn pack(params: &KernelParams) -> Vec<f64> {
    let mut v = Vec::new();
    match &params.variant {
        KernelVariant::Eq {
            variance,
            len1,
            len2,
        } => {
            v.extend([variance.ln(), len1.ln(), len2.ln()]);
        }
        KernelVariant::Rq {
            variance,
            len1,
            len2,
            alpha,
        } => {
            v.extend([variance.ln(), len1.ln(), len2.ln(), alpha.ln()]);
        }
        KernelVariant::Gibbs(g) => {
            v.push(g.variance.ln());
            v.extend(g.weights1.iter().map(|w| w.ln()));
            v.extend(g.weights2.iter().map(|w| w.ln()));
        }
    }
    v.push((params.noise_var - NOISE_FLOOR).max(1e-12).ln());
    v
}

fn unpack(template: &KernelParams, v: &[f64]) -> KernelParams {
    let variant = match &template.variant {
        KernelVariant::Eq { .. } => KernelVariant::Eq {
            variance: v[0].exp(),
            len1: v[1].exp(),
            len2: v[2].exp(),
        },
        KernelVariant::Rq { .. } => KernelVariant::Rq {
            variance: v[0].exp(),
            len1: v[1].exp(),
            len2: v[2].exp(),
            alpha: v[3].exp(),
        },
        KernelVariant::Gibbs(g) => {
            let m = g.weights1.len();
            KernelVariant::Gibbs(GibbsKernel {
                variance: v[0].exp(),
                weights1: v[1..1 + m].iter().map(|x| x.exp()).collect(),
                weights2: v[1 + m..1 + 2 * m].iter().map(|x| x.exp()).collect(),
                centers: g.centers.clone(),
                basis_scale: g.basis_scale,
            })
        }
    };
    let noise_var = NOISE_FLOOR + v[v.len() - 1].exp();
    KernelParams { variant, noise_var }
}

/// NLML and its gradient w.r.t. the log parameters, analytic for EQ/RQ.
fn nlml_and_grad_analytic(params: &KernelParams, task: &Task) -> Result<(f64, Vec<f64>)> {
    let obs = task.observations();
    let n = obs.len();
    let locs = &obs.locations;
    let y = obs.scalar_values().to_owned();

    let mut k = kernel_matrix_sym(&params.variant, locs.view());
    for i in 0..n {
        k[[i, i]] += params.noise_var;
    }
    let l = cholesky_psd(&k, 0.0)?;
    let alpha = chol_solve(&l, y.view());
    let logdet = 2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>();
    let nlml = 0.5 * (y.dot(&alpha) + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());

    // K^{-1} explicitly; context sets are small at desk scale.
    let kinv = {
        let eye = Array2::<f64>::eye(n);
        let mut out = Array2::<f64>::zeros((n, n));
        for (j, col) in eye.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&chol_solve(&l, col));
        }
        out
    };

    // dNLML/dtheta = 0.5 [ tr(K^{-1} dK) - alpha^T dK alpha ].
    let trace_term = |dk: &Array2<f64>| -> f64 {
        let mut tr = 0.0;
        for i in 0..n {
            for j in 0..n {
                tr += kinv[[i, j]] * dk[[j, i]];
            }
        }
        0.5 * (tr - alpha.dot(&dk.dot(&alpha)))
    };

    let mut grads = Vec::new();
    match &params.variant {
        KernelVariant::Eq {
            variance,
            len1,
            len2,
        } => {
            let mut dk_s = Array2::zeros((n, n));
            let mut dk_l1 = Array2::zeros((n, n));
            let mut dk_l2 = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let d1 = locs[[i, 0]] - locs[[j, 0]];
                    let d2 = locs[[i, 1]] - locs[[j, 1]];
                    let kij = variance
                        * (-d1 * d1 / (2.0 * len1 * len1) - d2 * d2 / (2.0 * len2 * len2)).exp();
                    dk_s[[i, j]] = kij;
                    dk_l1[[i, j]] = kij * d1 * d1 / (len1 * len1);
                    dk_l2[[i, j]] = kij * d2 * d2 / (len2 * len2);
                }
            }
            grads.push(trace_term(&dk_s));
            grads.push(trace_term(&dk_l1));
            grads.push(trace_term(&dk_l2));
        }
        KernelVariant::Rq {
            variance,
            len1,
            len2,
            alpha: a,
        } => {
            let mut dk_s = Array2::zeros((n, n));
            let mut dk_l1 = Array2::zeros((n, n));
            let mut dk_l2 = Array2::zeros((n, n));
            let mut dk_a = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let d1 = locs[[i, 0]] - locs[[j, 0]];
                    let d2 = locs[[i, 1]] - locs[[j, 1]];
                    let q1 = d1 * d1 / (2.0 * len1 * len1);
                    let q2 = d2 * d2 / (2.0 * len2 * len2);
                    let b = 1.0 + (q1 + q2) / a;
                    let kij = variance * b.powf(-a);
                    dk_s[[i, j]] = kij;
                    let common = variance * b.powf(-a - 1.0);
                    dk_l1[[i, j]] = common * d1 * d1 / (len1 * len1);
                    dk_l2[[i, j]] = common * d2 * d2 / (len2 * len2);
                    dk_a[[i, j]] = kij * (-a * b.ln() + (q1 + q2) / b);
                }
            }
            grads.push(trace_term(&dk_s));
            grads.push(trace_term(&dk_l1));
            grads.push(trace_term(&dk_l2));
            grads.push(trace_term(&dk_a));
        }
        KernelVariant::Gibbs(_) => {
            return Err(Error::InvalidConfig(
                "analytic gradients are only available for EQ/RQ".into(),
            ))
        }
    }
    // d noise_var/d log(noise_var - floor) = (noise_var - floor) on the diagonal.
    let mut dk_n = Array2::zeros((n, n));
    for i in 0..n {
        dk_n[[i, i]] = params.noise_var - NOISE_FLOOR;
    }
    grads.push(trace_term(&dk_n));
    Ok((nlml, grads))
}

fn batch_nlml(params: &KernelParams, tasks: &[&Task]) -> Result<f64> {
    let terms: Vec<Result<f64>> = tasks.par_iter().map(|t| gp_nlml(params, t)).collect();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    Ok(acc / tasks.len() as f64)
}

/// Mean per-context-point NLL, used as the validation score.
pub fn validation_nll(params: &KernelParams, tasks: &[Task]) -> Result<f64> {
    let terms: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|t| Ok(gp_nlml(params, t)? / t.observations().len() as f64))
        .collect();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    Ok(acc / tasks.len() as f64)
}

fn batch_grad(
    kind: GpVariantKind,
    template: &KernelParams,
    theta: &[f64],
    tasks: &[&Task],
    fd_step: f64,
) -> Result<(f64, Vec<f64>)> {
    match kind {
        GpVariantKind::Eq | GpVariantKind::Rq => {
            let params = unpack(template, theta);
            let per_task: Vec<Result<(f64, Vec<f64>)>> = tasks
                .par_iter()
                .map(|t| nlml_and_grad_analytic(&params, t))
                .collect();
            let mut loss = 0.0;
            let mut grad = vec![0.0; theta.len()];
            for r in per_task {
                let (l, g) = r?;
                loss += l;
                for (acc, gi) in grad.iter_mut().zip(g.iter()) {
                    *acc += gi;
                }
            }
            let inv = 1.0 / tasks.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            Ok((loss * inv, grad))
        }
        GpVariantKind::Gibbs => {
            // Central finite differences in log-parameter space; the basis
            // grid is small at desk scale so this stays cheap.
            let params = unpack(template, theta);
            let loss = batch_nlml(&params, tasks)?;
            let grad: Vec<Result<f64>> = (0..theta.len())
                .into_par_iter()
                .map(|i| {
                    let mut plus = theta.to_vec();
                    plus[i] += fd_step;
                    let mut minus = theta.to_vec();
                    minus[i] -= fd_step;
                    let lp = batch_nlml(&unpack(template, &plus), tasks)?;
                    let lm = batch_nlml(&unpack(template, &minus), tasks)?;
                    Ok((lp - lm) / (2.0 * fd_step))
                })
                .collect();
            let mut g = Vec::with_capacity(theta.len());
            for r in grad {
                g.push(r?);
            }
            Ok((loss, g))
        }
    }
}

fn initial_params(kind: GpVariantKind, cfg: &GpFitConfig) -> KernelParams {
    let variant = match kind {
        GpVariantKind::Eq => KernelVariant::Eq {
            variance: 1.0,
            len1: 0.3,
            len2: 0.3,
        },
        GpVariantKind::Rq => KernelVariant::Rq {
            variance: 1.0,
            len1: 0.3,
            len2: 0.3,
            alpha: 1.0,
        },
        GpVariantKind::Gibbs => {
            KernelVariant::Gibbs(GibbsKernel::with_uniform_weights(cfg.gibbs_grid, 0.3, 1.0))
        }
    };
    KernelParams {
        variant,
        noise_var: 1e-2,
    }
}

/// Fit kernel hyperparameters with Adam on the NLML, checkpointing on the
/// validation NLL and stopping early when it stalls.
pub fn fit_gp(
    kind: GpVariantKind,
    train_tasks: &[Task],
    val_tasks: &[Task],
    cfg: &GpFitConfig,
) -> Result<(KernelParams, Vec<FitEpoch>)> {
    if train_tasks.is_empty() || val_tasks.is_empty() {
        return Err(Error::InvalidConfig(
            "fit_gp needs non-empty training and validation task sets".into(),
        ));
    }
    let template = initial_params(kind, cfg);
    let mut theta = pack(&template);
    let mut adam = Adam::new(theta.len(), cfg.learning_rate);
    let mut rng = stream(cfg.seed, "gp-fit", &[]);

    let mut best_theta = theta.clone();
    let mut best_val = validation_nll(&unpack(&template, &theta), val_tasks)?;
    let mut since_best = 0usize;
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_tasks.len()).collect();
        order.shuffle(&mut rng);
        let mut train_acc = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Task> = chunk.iter().map(|&i| &train_tasks[i]).collect();
            let (loss, grad) = batch_grad(kind, &template, &theta, &batch, cfg.fd_step)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::OptimizationDiverged(format!(
                    "non-finite NLML at epoch {epoch}"
                )));
            }
            adam.step(&mut theta, &grad);
            train_acc += loss;
            n_batches += 1;
        }
        let val = validation_nll(&unpack(&template, &theta), val_tasks)?;
        if !val.is_finite() {
            return Err(Error::OptimizationDiverged(format!(
                "non-finite validation NLL at epoch {epoch}"
            )));
        }
        let improved = val < best_val;
        if improved {
            best_val = val;
            best_theta = theta.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(FitEpoch {
            epoch,
            train_nll: train_acc / n_batches.max(1) as f64,
            val_nll: val,
            checkpointed: improved,
        });
        if since_best >= cfg.patience {
            break;
        }
    }
    Ok((unpack(&template, &best_theta), history))
}
