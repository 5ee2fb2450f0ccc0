//! The convolutional Gaussian neural process: SetConv encoding, a small
//! U-Net backbone, target interpolation, and three output heads producing
//! a mean vector, a low-rank covariance factor, and a positive diagonal.
//!
//! Gradients are hand-written reverse-mode over this fixed graph; the
//! finite-difference suite in the tests pins their correctness.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{
    chol_solve_mat, solve_lower, solve_lower_t, woodbury_factors, LowRankDiagGaussian,
};
use crate::np::layers::{
    avgpool2, avgpool2_backward, bilinear_up2, bilinear_up2_backward, concat_channels,
    conv2d_backward, conv2d_forward, interpolate_at, interpolate_backward, relu, relu_backward,
    split_channels, InterpWeights,
};
use crate::np::params::{GradVec, ParamVec, Segment};
use crate::np::setconv::{grid_side, setconv_encode, GridEncoding};
use crate::rng::stream;
use crate::tasks::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpConfig {
    /// Channel width of every U-Net stage.
    pub unet_channels: usize,
    /// Number of covariance basis functions (columns of the factor).
    pub rank: usize,
    /// Internal-grid density in points per unit.
    pub ppu: usize,
    pub kernel_size: usize,
    /// Hidden width of the three output heads.
    pub head_hidden: usize,
    /// Channels of the observation context set.
    pub value_channels: usize,
    /// Channels of the auxiliary grid context set.
    pub aux_channels: usize,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl Default for NpConfig {
    fn default() -> Self {
        NpConfig {
            unet_channels: 16,
            rank: 16,
            ppu: 16,
            kernel_size: 3,
            head_hidden: 32,
            value_channels: 1,
            aux_channels: 6,
            seed: 0,
        }
    }
}

impl NpConfig {
    pub fn input_channels(&self) -> usize {
        (1 + self.value_channels) + (1 + self.aux_channels)
    }

    fn validate(&self) -> Result<()> {
        if self.unet_channels == 0
            || self.rank == 0
            || self.head_hidden == 0
            || self.value_channels == 0
        {
            return Err(Error::InvalidConfig("zero-sized neural-process dimension".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig("kernel_size must be odd".into()));
        }
        let n = grid_side(self.ppu)?;
        if n % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "internal grid side {n} must be divisible by 4 for the two pooling stages"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    w: Segment,
    b: Segment,
    in_c: usize,
    out_c: usize,
    k: usize,
}

impl ConvSpec {
    fn forward(&self, p: &ParamVec, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        conv2d_forward(
            x,
            p.view4(self.w, self.out_c, self.in_c, self.k, self.k),
            p.view1(self.b),
        )
    }

    fn backward(
        &self,
        p: &ParamVec,
        x: ArrayView3<f64>,
        dy: ArrayView3<f64>,
        grad: &mut GradVec,
    ) -> Array3<f64> {
        let (dx, dw, db) = conv2d_backward(
            x,
            p.view4(self.w, self.out_c, self.in_c, self.k, self.k),
            dy,
        );
        for (acc, v) in grad.slice_mut(self.w).iter_mut().zip(dw.iter()) {
            *acc += v;
        }
        for (acc, v) in grad.slice_mut(self.b).iter_mut().zip(db.iter()) {
            *acc += v;
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct HeadSpec {
    w1: Segment,
    b1: Segment,
    w2: Segment,
    b2: Segment,
    in_d: usize,
    hidden: usize,
    out_d: usize,
}

impl HeadSpec {
    /// Returns (post-ReLU hidden rows, output rows).
    fn forward(&self, p: &ParamVec, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let w1 = p.view2(self.w1, self.hidden, self.in_d);
        let b1 = p.view1(self.b1);
        let w2 = p.view2(self.w2, self.out_d, self.hidden);
        let b2 = p.view1(self.b2);
        let mut h = x.dot(&w1.t());
        for mut row in h.rows_mut() {
            row += &b1;
        }
        h.mapv_inplace(|v| v.max(0.0));
        let mut out = h.dot(&w2.t());
        for mut row in out.rows_mut() {
            row += &b2;
        }
        (h, out)
    }

    /// Accumulates weight gradients and returns the gradient w.r.t. `x`.
    fn backward(
        &self,
        p: &ParamVec,
        x: ArrayView2<f64>,
        hidden_post: &Array2<f64>,
        dout: ArrayView2<f64>,
        grad: &mut GradVec,
    ) -> Array2<f64> {
        let w1 = p.view2(self.w1, self.hidden, self.in_d);
        let w2 = p.view2(self.w2, self.out_d, self.hidden);
        let dw2 = dout.t().dot(hidden_post);
        let db2 = dout.sum_axis(Axis(0));
        let mut dh = dout.dot(&w2);
        dh.zip_mut_with(hidden_post, |d, &hp| {
            if hp <= 0.0 {
                *d = 0.0;
            }
        });
        let dw1 = dh.t().dot(&x);
        let db1 = dh.sum_axis(Axis(0));
        for (acc, v) in grad.slice_mut(self.w2).iter_mut().zip(dw2.iter()) {
            *acc += v;
        }
        for (acc, v) in grad.slice_mut(self.b2).iter_mut().zip(db2.iter()) {
            *acc += v;
        }
        for (acc, v) in grad.slice_mut(self.w1).iter_mut().zip(dw1.iter()) {
            *acc += v;
        }
        for (acc, v) in grad.slice_mut(self.b1).iter_mut().zip(db1.iter()) {
            *acc += v;
        }
        dh.dot(&w1)
    }
}

#[derive(Debug, Clone)]
struct Arch {
    conv1: ConvSpec,
    conv2: ConvSpec,
    conv3: ConvSpec,
    conv4: ConvSpec,
    conv5: ConvSpec,
    head_mean: HeadSpec,
    head_factor: HeadSpec,
    head_diag: HeadSpec,
}

const DIAG_FLOOR: f64 = 1e-6;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All weights plus the internal-grid configuration.
#[derive(Debug, Clone)]
pub struct NpModel {
    cfg: NpConfig,
    arch: Arch,
    pub params: ParamVec,
    /// Fixed Gaussian-bump length scale per context set (2x grid spacing).
    setconv_scales: Vec<f64>,
}

/// Every intermediate needed by the backward pass.
pub struct ForwardTrace {
    pub enc: GridEncoding,
    a1: Array3<f64>,
    p1: Array3<f64>,
    a2: Array3<f64>,
    p2: Array3<f64>,
    a3: Array3<f64>,
    c1: Array3<f64>,
    a4: Array3<f64>,
    c2: Array3<f64>,
    pub rep: Array3<f64>,
    pub rows: Array2<f64>,
    interp: Vec<InterpWeights>,
    h_mean: Array2<f64>,
    h_factor: Array2<f64>,
    h_diag: Array2<f64>,
    o_diag: Array1<f64>,
}

impl NpModel {
    pub fn new(cfg: NpConfig) -> Result<NpModel> {
        cfg.validate()?;
        let c = cfg.unet_channels;
        let k = cfg.kernel_size;
        let in_c = cfg.input_channels();
        let mut b = ParamVec::builder();
        let mut conv = |b: &mut crate::np::params::ParamVecBuilder, name: &str, ic: usize| {
            ConvSpec {
                w: b.push(&format!("{name}.w"), &[c, ic, k, k]),
                b: b.push(&format!("{name}.b"), &[c]),
                in_c: ic,
                out_c: c,
                k,
            }
        };
        let conv1 = conv(&mut b, "conv1", in_c);
        let conv2 = conv(&mut b, "conv2", c);
        let conv3 = conv(&mut b, "conv3", c);
        let conv4 = conv(&mut b, "conv4", 2 * c);
        let conv5 = conv(&mut b, "conv5", 2 * c);
        let mut head = |b: &mut crate::np::params::ParamVecBuilder, name: &str, out_d: usize| {
            HeadSpec {
                w1: b.push(&format!("{name}.w1"), &[cfg.head_hidden, c]),
                b1: b.push(&format!("{name}.b1"), &[cfg.head_hidden]),
                w2: b.push(&format!("{name}.w2"), &[out_d, cfg.head_hidden]),
                b2: b.push(&format!("{name}.b2"), &[out_d]),
                in_d: c,
                hidden: cfg.head_hidden,
                out_d,
            }
        };
        let head_mean = head(&mut b, "head_mean", 1);
        let head_factor = head(&mut b, "head_factor", cfg.rank);
        let head_diag = head(&mut b, "head_diag", 1);
        let mut params = b.build();

        // Fan-in-scaled init with a fixed seed; the factor head starts
        // small so the initial covariance is almost diagonal, and the diag
        // head bias starts at softplus^{-1}(1) for unit initial variance.
        let mut rng = stream(cfg.seed, "np-init", &[]);
        let arch = Arch {
            conv1,
            conv2,
            conv3,
            conv4,
            conv5,
            head_mean,
            head_factor,
            head_diag,
        };
        for spec in [&conv1, &conv2, &conv3, &conv4, &conv5] {
            let std = (2.0 / (spec.in_c * k * k) as f64).sqrt();
            for v in &mut params.data[spec.w.offset..spec.w.offset + spec.w.len] {
                *v = rng.sample::<f64, _>(StandardNormal) * std;
            }
        }
        for (spec, out_scale) in [(&head_mean, 1.0), (&head_factor, 0.1), (&head_diag, 1.0)] {
            let std1 = (2.0 / spec.in_d as f64).sqrt();
            for v in &mut params.data[spec.w1.offset..spec.w1.offset + spec.w1.len] {
                *v = rng.sample::<f64, _>(StandardNormal) * std1;
            }
            let std2 = (2.0 / spec.hidden as f64).sqrt() * out_scale;
            for v in &mut params.data[spec.w2.offset..spec.w2.offset + spec.w2.len] {
                *v = rng.sample::<f64, _>(StandardNormal) * std2;
            }
        }
        let diag_bias = arch.head_diag.b2;
        params.data[diag_bias.offset] = (1.0f64.exp() - 1.0).ln();

        let setconv_scale = 2.0 / cfg.ppu as f64;
        Ok(NpModel {
            cfg,
            arch,
            params,
            setconv_scales: vec![setconv_scale; 2],
        })
    }

    pub fn config(&self) -> &NpConfig {
        &self.cfg
    }

    pub fn setconv_scales(&self) -> &[f64] {
        &self.setconv_scales
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.contexts.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "the neural process expects [observations, auxiliary] context sets, got {}",
                task.contexts.len()
            )));
        }
        if task.contexts[0].channels() != self.cfg.value_channels {
            return Err(Error::ShapeMismatch(format!(
                "observation context has {} channels, model expects {}",
                task.contexts[0].channels(),
                self.cfg.value_channels
            )));
        }
        if task.contexts[1].channels() != self.cfg.aux_channels {
            return Err(Error::ShapeMismatch(format!(
                "auxiliary context has {} channels, model expects {}",
                task.contexts[1].channels(),
                self.cfg.aux_channels
            )));
        }
        if task.n_targets() == 0 {
            return Err(Error::ShapeMismatch("task has no targets".into()));
        }
        Ok(())
    }

    /// U-Net forward over an already-encoded grid. Fully convolutional:
    /// any spatial side divisible by 4 works.
    pub fn backbone_forward(&self, enc: ArrayView3<f64>) -> Result<Array3<f64>> {
        let (_, tr) = self.backbone_with_trace(enc)?;
        Ok(tr)
    }

    #[allow(clippy::type_complexity)]
    fn backbone_with_trace(
        &self,
        enc: ArrayView3<f64>,
    ) -> Result<(
        (
            Array3<f64>,
            Array3<f64>,
            Array3<f64>,
            Array3<f64>,
            Array3<f64>,
            Array3<f64>,
            Array3<f64>,
            Array3<f64>,
        ),
        Array3<f64>,
    )> {
        let (cin, h, w) = enc.dim();
        if cin != self.cfg.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "encoding has {cin} channels, model expects {}",
                self.cfg.input_channels()
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "backbone needs spatial dims divisible by 4, got {h}x{w}"
            )));
        }
        let a1 = relu(&self.arch.conv1.forward(&self.params, enc)?);
        let p1 = avgpool2(a1.view())?;
        let a2 = relu(&self.arch.conv2.forward(&self.params, p1.view())?);
        let p2 = avgpool2(a2.view())?;
        let a3 = relu(&self.arch.conv3.forward(&self.params, p2.view())?);
        let u1 = bilinear_up2(a3.view());
        let c1 = concat_channels(u1.view(), a2.view());
        let a4 = relu(&self.arch.conv4.forward(&self.params, c1.view())?);
        let u2 = bilinear_up2(a4.view());
        let c2 = concat_channels(u2.view(), a1.view());
        let rep = relu(&self.arch.conv5.forward(&self.params, c2.view())?);
        Ok(((a1, p1, a2, p2, a3, c1, a4, c2), rep))
    }

    /// Full forward pass keeping every intermediate for the backward pass.
    pub fn forward_trace(&self, task: &Task) -> Result<(ForwardTrace, LowRankDiagGaussian)> {
        self.check_task(task)?;
        let enc = setconv_encode(&task.contexts, self.cfg.ppu, &self.setconv_scales)?;
        let ((a1, p1, a2, p2, a3, c1, a4, c2), rep) =
            self.backbone_with_trace(enc.channels.view())?;
        let (rows, interp) =
            interpolate_at(rep.view(), task.target_locations.view(), self.cfg.ppu)?;

        let (h_mean, mu_out) = self.arch.head_mean.forward(&self.params, rows.view());
        let (h_factor, factor) = self.arch.head_factor.forward(&self.params, rows.view());
        let (h_diag, o_diag2) = self.arch.head_diag.forward(&self.params, rows.view());
        let o_diag = o_diag2.column(0).to_owned();
        let diag = o_diag.mapv(|v| softplus(v) + DIAG_FLOOR);
        let pred = LowRankDiagGaussian {
            mean: mu_out.column(0).to_owned(),
            factor,
            diag,
        };
        let trace = ForwardTrace {
            enc,
            a1,
            p1,
            a2,
            p2,
            a3,
            c1,
            a4,
            c2,
            rep,
            rows,
            interp,
            h_mean,
            h_factor,
            h_diag,
            o_diag,
        };
        Ok((trace, pred))
    }

    /// Predictive distribution at the task's target locations.
    pub fn predict(&self, task: &Task) -> Result<LowRankDiagGaussian> {
        Ok(self.forward_trace(task)?.1)
    }

    /// Per-target negative log-likelihood of the task's target values.
    pub fn loss(&self, task: &Task) -> Result<f64> {
        let pred = self.predict(task)?;
        let y = task
            .target_values
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("task has no target values".into()))?;
        loss_from_predictive(&pred, y)
    }

    /// Loss and its gradient w.r.t. every weight, via reverse-mode
    /// differentiation of the fixed computation graph.
    pub fn loss_and_gradients(&self, task: &Task) -> Result<(f64, GradVec)> {
        let (tr, pred) = self.forward_trace(task)?;
        let y = task
            .target_values
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("task has no target values".into()))?;
        let n_t = pred.len();
        if y.len() != n_t {
            return Err(Error::ShapeMismatch(format!(
                "{} targets but {} values",
                n_t,
                y.len()
            )));
        }

        // Analytic gradient of the per-target NLL w.r.t. (mean, factor,
        // diag) through the Woodbury factorization.
        let wf = woodbury_factors(&pred.factor, &pred.diag)?;
        let r = y - &pred.mean;
        let rd = &r / &pred.diag;
        let u = pred.factor.t().dot(&rd);
        let w_half = solve_lower(&wf.chol_a, u.view());
        let quad = r.dot(&rd) - w_half.dot(&w_half);
        let n_f = n_t as f64;
        let loss = 0.5 * (n_f * 1.837_877_066_409_345_5 + wf.log_det + quad) / n_f;

        let w_full = solve_lower_t(&wf.chol_a, w_half.view());
        let g = &rd - &wf.f_over_d.dot(&w_full);
        let rank = pred.factor.ncols();
        let a_inv = chol_solve_mat(&wf.chol_a, Array2::<f64>::eye(rank).view());
        let s = wf.f_over_d.dot(&a_inv); // Sigma^{-1} F
        let gf = pred.factor.t().dot(&g);

        // d loss / d mean = -g / N_t; d loss / d F = (S - g gf^T) / N_t;
        // d loss / d diag_i = (Sigma^{-1}_ii - g_i^2) / (2 N_t).
        let dmu = g.mapv(|v| -v / n_f);
        let mut dfactor = s.clone();
        for i in 0..n_t {
            for j in 0..rank {
                dfactor[[i, j]] = (s[[i, j]] - g[i] * gf[j]) / n_f;
            }
        }
        let mut ddiag = Array1::<f64>::zeros(n_t);
        for i in 0..n_t {
            let sigma_inv_ii =
                1.0 / pred.diag[i] - wf.f_over_d.row(i).dot(&s.row(i));
            ddiag[i] = 0.5 * (sigma_inv_ii - g[i] * g[i]) / n_f;
        }
        // Through the softplus squashing of the diagonal head.
        let do_diag = Array1::from_iter(
            ddiag
                .iter()
                .zip(tr.o_diag.iter())
                .map(|(dd, &o)| dd * sigmoid(o)),
        );

        let mut grad = GradVec::zeros_like(&self.params);
        let dmu2 = dmu.insert_axis(Axis(1));
        let do2 = do_diag.insert_axis(Axis(1));
        let mut drows = self.arch.head_mean.backward(
            &self.params,
            tr.rows.view(),
            &tr.h_mean,
            dmu2.view(),
            &mut grad,
        );
        drows += &self.arch.head_factor.backward(
            &self.params,
            tr.rows.view(),
            &tr.h_factor,
            dfactor.view(),
            &mut grad,
        );
        drows += &self.arch.head_diag.backward(
            &self.params,
            tr.rows.view(),
            &tr.h_diag,
            do2.view(),
            &mut grad,
        );

        let n_grid = tr.rep.dim().1;
        let drep = interpolate_backward(
            drows.view(),
            &tr.interp,
            self.cfg.unet_channels,
            n_grid,
        );

        // U-Net backward.
        let c = self.cfg.unet_channels;
        let d5 = relu_backward(&tr.rep, &drep);
        let dc2 = self
            .arch
            .conv5
            .backward(&self.params, tr.c2.view(), d5.view(), &mut grad);
        let (du2, da1_skip) = split_channels(dc2.view(), c);
        let da4 = bilinear_up2_backward(du2.view());
        let d4 = relu_backward(&tr.a4, &da4);
        let dc1 = self
            .arch
            .conv4
            .backward(&self.params, tr.c1.view(), d4.view(), &mut grad);
        let (du1, da2_skip) = split_channels(dc1.view(), c);
        let da3 = bilinear_up2_backward(du1.view());
        let d3 = relu_backward(&tr.a3, &da3);
        let dp2 = self
            .arch
            .conv3
            .backward(&self.params, tr.p2.view(), d3.view(), &mut grad);
        let da2 = &avgpool2_backward(dp2.view()) + &da2_skip;
        let d2 = relu_backward(&tr.a2, &da2);
        let dp1 = self
            .arch
            .conv2
            .backward(&self.params, tr.p1.view(), d2.view(), &mut grad);
        let da1 = &avgpool2_backward(dp1.view()) + &da1_skip;
        let d1 = relu_backward(&tr.a1, &da1);
        let _denc = self
            .arch
            .conv1
            .backward(&self.params, tr.enc.channels.view(), d1.view(), &mut grad);

        Ok((loss, grad))
    }
}

/// Per-target NLL given an already-computed predictive.
pub fn loss_from_predictive(pred: &LowRankDiagGaussian, y: &Array1<f64>) -> Result<f64> {
    Ok(-crate::gaussian::lowrank_logpdf(pred, y.view())? / pred.len() as f64)
}
