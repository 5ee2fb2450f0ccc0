//! Forward and backward passes of the convolutional backbone primitives:
//! same-padding conv (im2col), ReLU, 2x2 mean pooling, bilinear 2x resize,
//! channel concatenation, and bilinear interpolation at target locations.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis};

use crate::error::{Error, Result};

/// Unfold (C, H, W) into (C*k*k, H*W) columns with zero same-padding.
fn im2col(x: ArrayView3<f64>, k: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let pad = k / 2;
    let mut col = Array2::<f64>::zeros((c * k * k, h * w));
    for ch in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ch * k + di) * k + dj;
                for y in 0..h {
                    let sy = y as isize + di as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + dj as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        col[[row, y * w + xx]] = x[[ch, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold (C*k*k, H*W) columns back, accumulating overlaps.
fn col2im(col: ArrayView2<f64>, c: usize, h: usize, w: usize, k: usize) -> Array3<f64> {
    let pad = k / 2;
    let mut x = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ch * k + di) * k + dj;
                for y in 0..h {
                    let sy = y as isize + di as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + dj as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        x[[ch, sy as usize, sx as usize]] += col[[row, y * w + xx]];
                    }
                }
            }
        }
    }
    x
}

/// Same-padding 2-D convolution. `w` is (out_c, in_c, k, k).
pub fn conv2d_forward(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    b: ArrayView1<f64>,
) -> Result<Array3<f64>> {
    let (in_c, h, width) = x.dim();
    let (out_c, wc, k, k2) = w.dim();
    if wc != in_c || k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels with square kernels, got input {} and kernel {}x{}",
            wc, in_c, k, k2
        )));
    }
    let col = im2col(x, k);
    let w_mat = w.into_shape_with_order((out_c, in_c * k * k)).unwrap();
    let mut y_mat = w_mat.dot(&col);
    for (o, mut row) in y_mat.rows_mut().into_iter().enumerate() {
        row += b[o];
    }
    Ok(y_mat.into_shape_with_order((out_c, h, width)).unwrap())
}

/// Gradients of a same-padding conv: returns (dx, dw, db).
pub fn conv2d_backward(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    dy: ArrayView3<f64>,
) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
    let (in_c, h, width) = x.dim();
    let (out_c, _, k, _) = w.dim();
    let col = im2col(x, k);
    let dy_mat = dy.into_shape_with_order((out_c, h * width)).unwrap();
    let dw = dy_mat.dot(&col.t());
    let db = dy_mat.sum_axis(Axis(1));
    let w_mat = w.into_shape_with_order((out_c, in_c * k * k)).unwrap();
    let dcol = w_mat.t().dot(&dy_mat);
    let dx = col2im(dcol.view(), in_c, h, width, k);
    (dx, Array1::from_iter(dw.iter().cloned()), db)
}

pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward through ReLU given the post-activation values.
pub fn relu_backward(post: &Array3<f64>, dy: &Array3<f64>) -> Array3<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(post, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// 2x2 mean pooling; spatial dims must be even.
pub fn avgpool2(x: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (c, h, w) = x.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let mut y = Array3::<f64>::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                y[[ch, i, j]] = 0.25
                    * (x[[ch, 2 * i, 2 * j]]
                        + x[[ch, 2 * i + 1, 2 * j]]
                        + x[[ch, 2 * i, 2 * j + 1]]
                        + x[[ch, 2 * i + 1, 2 * j + 1]]);
            }
        }
    }
    Ok(y)
}

pub fn avgpool2_backward(dy: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = dy.dim();
    let mut dx = Array3::<f64>::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let g = 0.25 * dy[[ch, i, j]];
                dx[[ch, 2 * i, 2 * j]] = g;
                dx[[ch, 2 * i + 1, 2 * j]] = g;
                dx[[ch, 2 * i, 2 * j + 1]] = g;
                dx[[ch, 2 * i + 1, 2 * j + 1]] = g;
            }
        }
    }
    dx
}

/// Per-axis source indices and blend weight for a 2x bilinear resize with
/// half-pixel alignment.
fn up2_axis_table(src: usize) -> Vec<(usize, usize, f64)> {
    let dst = src * 2;
    (0..dst)
        .map(|o| {
            let u = (o as f64 + 0.5) / 2.0 - 0.5;
            if u <= 0.0 {
                (0, 0, 0.0)
            } else if u >= (src - 1) as f64 {
                (src - 1, src - 1, 0.0)
            } else {
                let i0 = u.floor() as usize;
                (i0, i0 + 1, u - i0 as f64)
            }
        })
        .collect()
}

/// Bilinear 2x upsampling (no transposed convolution).
pub fn bilinear_up2(x: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let ti = up2_axis_table(h);
    let tj = up2_axis_table(w);
    let mut y = Array3::<f64>::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for (oi, &(i0, i1, si)) in ti.iter().enumerate() {
            for (oj, &(j0, j1, sj)) in tj.iter().enumerate() {
                y[[ch, oi, oj]] = (1.0 - si) * (1.0 - sj) * x[[ch, i0, j0]]
                    + si * (1.0 - sj) * x[[ch, i1, j0]]
                    + (1.0 - si) * sj * x[[ch, i0, j1]]
                    + si * sj * x[[ch, i1, j1]];
            }
        }
    }
    y
}

/// Transpose of [`bilinear_up2`]: scatter output gradients to sources.
pub fn bilinear_up2_backward(dy: ArrayView3<f64>) -> Array3<f64> {
    let (c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let ti = up2_axis_table(h);
    let tj = up2_axis_table(w);
    let mut dx = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for (oi, &(i0, i1, si)) in ti.iter().enumerate() {
            for (oj, &(j0, j1, sj)) in tj.iter().enumerate() {
                let g = dy[[ch, oi, oj]];
                dx[[ch, i0, j0]] += (1.0 - si) * (1.0 - sj) * g;
                dx[[ch, i1, j0]] += si * (1.0 - sj) * g;
                dx[[ch, i0, j1]] += (1.0 - si) * sj * g;
                dx[[ch, i1, j1]] += si * sj * g;
            }
        }
    }
    dx
}

pub fn concat_channels(a: ArrayView3<f64>, b: ArrayView3<f64>) -> Array3<f64> {
    let (ca, h, w) = a.dim();
    let (cb, hb, wb) = b.dim();
    assert_eq!((h, w), (hb, wb), "concat needs matching spatial dims");
    let mut out = Array3::<f64>::zeros((ca + cb, h, w));
    out.slice_mut(ndarray::s![..ca, .., ..]).assign(&a);
    out.slice_mut(ndarray::s![ca.., .., ..]).assign(&b);
    out
}

pub fn split_channels(d: ArrayView3<f64>, ca: usize) -> (Array3<f64>, Array3<f64>) {
    (
        d.slice(ndarray::s![..ca, .., ..]).to_owned(),
        d.slice(ndarray::s![ca.., .., ..]).to_owned(),
    )
}

/// Bilinear sample weights for one target location on the internal grid.
#[derive(Debug, Clone, Copy)]
pub struct InterpWeights {
    pub i0: usize,
    pub j0: usize,
    pub ti: f64,
    pub tj: f64,
}

/// Map a coordinate in [-1, 1] to the cell-centered internal-grid axis.
fn to_grid_axis(x: f64, ppu: usize, n: usize) -> Result<(usize, f64)> {
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&x) {
        return Err(Error::OutOfDomain(format!("coordinate {x}")));
    }
    let u = (x + 1.0) * ppu as f64 - 0.5;
    if u <= 0.0 {
        Ok((0, 0.0))
    } else if u >= (n - 1) as f64 {
        Ok((n - 2, 1.0))
    } else {
        let i0 = u.floor() as usize;
        Ok((i0.min(n - 2), u - i0 as f64))
    }
}

pub fn interp_weights(x: [f64; 2], ppu: usize, n: usize) -> Result<InterpWeights> {
    let (i0, ti) = to_grid_axis(x[0], ppu, n)?;
    let (j0, tj) = to_grid_axis(x[1], ppu, n)?;
    Ok(InterpWeights { i0, j0, ti, tj })
}

/// Interpolate every channel of `rep` at the target locations; returns the
/// (N_t, C) row matrix plus the weights for the backward pass.
pub fn interpolate_at(
    rep: ArrayView3<f64>,
    targets: ArrayView2<f64>,
    ppu: usize,
) -> Result<(Array2<f64>, Vec<InterpWeights>)> {
    let (c, n, _) = rep.dim();
    let n_t = targets.nrows();
    let mut rows = Array2::<f64>::zeros((n_t, c));
    let mut weights = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let w = interp_weights([targets[[t, 0]], targets[[t, 1]]], ppu, n)?;
        for ch in 0..c {
            rows[[t, ch]] = (1.0 - w.ti) * (1.0 - w.tj) * rep[[ch, w.i0, w.j0]]
                + w.ti * (1.0 - w.tj) * rep[[ch, w.i0 + 1, w.j0]]
                + (1.0 - w.ti) * w.tj * rep[[ch, w.i0, w.j0 + 1]]
                + w.ti * w.tj * rep[[ch, w.i0 + 1, w.j0 + 1]];
        }
        weights.push(w);
    }
    Ok((rows, weights))
}

/// Scatter row gradients back onto the representation grid.
pub fn interpolate_backward(
    drows: ArrayView2<f64>,
    weights: &[InterpWeights],
    c: usize,
    n: usize,
) -> Array3<f64> {
    let mut drep = Array3::<f64>::zeros((c, n, n));
    for (t, w) in weights.iter().enumerate() {
        for ch in 0..c {
            let g = drows[[t, ch]];
            drep[[ch, w.i0, w.j0]] += (1.0 - w.ti) * (1.0 - w.tj) * g;
            drep[[ch, w.i0 + 1, w.j0]] += w.ti * (1.0 - w.tj) * g;
            drep[[ch, w.i0, w.j0 + 1]] += (1.0 - w.ti) * w.tj * g;
            drep[[ch, w.i0 + 1, w.j0 + 1]] += w.ti * w.tj * g;
        }
    }
    drep
}
