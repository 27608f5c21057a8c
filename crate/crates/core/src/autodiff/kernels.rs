//! Dense numeric kernels behind the graph ops. Convolutions run as im2col +
//! GEMM over row strips so the scratch buffer stays bounded on large inputs.
//! Everything here is deterministic: parallelism only ever splits the batch
//! axis (disjoint writes) and reductions happen in fixed order.

use ndarray::{s, Array1, Array4, Axis, Zip};
use rayon::prelude::*;

use crate::tensor::{Scalar, Tensor};

/// Zero padding for the generator lineage; reflect (mirror without edge
/// duplication) for the per-pixel discriminator so constant inputs map to
/// constant outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Reflect-101 index fold; requires n >= 2 when reflection actually occurs.
#[inline]
fn reflect_idx(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
    }
    i as usize
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

fn as_standard<S: Scalar>(t: &Tensor<S>) -> std::borrow::Cow<'_, Tensor<S>> {
    if t.is_standard_layout() {
        std::borrow::Cow::Borrowed(t)
    } else {
        std::borrow::Cow::Owned(t.as_standard_layout().into_owned())
    }
}

fn strip_rows<S>(ckk: usize, ow: usize, oh: usize) -> usize {
    // keep the im2col buffer around 8 MB
    let budget = 2_000_000 / ckk.max(1);
    (budget / ow.max(1)).clamp(1, oh)
}

/// Fill `col` (ckk x strip_cols) for output rows [y0, y0+rows).
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &ndarray::ArrayView3<S>,
    col: &mut [S],
    y0: usize,
    rows: usize,
    k: usize,
    stride: usize,
    pad: usize,
    mode: PadMode,
    ow: usize,
) {
    let (cin, h, w) = (x.dim().0, x.dim().1, x.dim().2);
    let strip_cols = rows * ow;
    for v in col.iter_mut() {
        *v = S::zero();
    }
    let xs = x.as_slice().expect("input must be contiguous");
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((ci * k + ky) * k + kx) * strip_cols;
                for oy in y0..y0 + rows {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let iy = match mode {
                        PadMode::Zero => {
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            iy as usize
                        }
                        PadMode::Reflect => reflect_idx(iy, h),
                    };
                    let dst_base = row_base + (oy - y0) * ow;
                    let src_base = (ci * h + iy) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let ix = match mode {
                            PadMode::Zero => {
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                ix as usize
                            }
                            PadMode::Reflect => reflect_idx(ix, w),
                        };
                        col[dst_base + ox] = xs[src_base + ix];
                    }
                }
            }
        }
    }
}

/// Scatter-add the columns back into an input-shaped gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_add<S: Scalar>(
    gx: &mut ndarray::ArrayViewMut3<S>,
    col: &[S],
    y0: usize,
    rows: usize,
    k: usize,
    stride: usize,
    pad: usize,
    mode: PadMode,
    ow: usize,
) {
    let (cin, h, w) = (gx.dim().0, gx.dim().1, gx.dim().2);
    let strip_cols = rows * ow;
    let gs = gx.as_slice_mut().expect("gradient must be contiguous");
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((ci * k + ky) * k + kx) * strip_cols;
                for oy in y0..y0 + rows {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let iy = match mode {
                        PadMode::Zero => {
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            iy as usize
                        }
                        PadMode::Reflect => reflect_idx(iy, h),
                    };
                    let dst_base = (ci * h + iy) * w;
                    let src_base = row_base + (oy - y0) * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let ix = match mode {
                            PadMode::Zero => {
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                ix as usize
                            }
                            PadMode::Reflect => reflect_idx(ix, w),
                        };
                        gs[dst_base + ix] = gs[dst_base + ix] + col[src_base + ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Tensor<S> {
    let x = as_standard(x);
    let (b, cin, h, wid) = x.dim();
    let (cout, cin_w, k, _) = w.dim();
    assert_eq!(cin, cin_w, "conv2d channel mismatch");
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(wid, k, stride, pad);
    let ckk = cin * k * k;
    let mut out = Array4::<S>::zeros((b, cout, oh, ow));
    let rows_per_strip = strip_rows::<S>(ckk, ow, oh);
    let w_std = as_standard(w);
    let w_slice = w_std.as_slice().expect("weights contiguous");

    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut ob, xb)| {
            let mut col = vec![S::zero(); ckk * rows_per_strip * ow];
            let mut y0 = 0;
            while y0 < oh {
                let rows = rows_per_strip.min(oh - y0);
                let strip_cols = rows * ow;
                im2col(&xb, &mut col[..ckk * strip_cols], y0, rows, k, stride, pad, mode, ow);
                let c_ptr = ob.as_mut_ptr();
                unsafe {
                    S::gemm(
                        cout,
                        ckk,
                        strip_cols,
                        S::one(),
                        w_slice.as_ptr(),
                        ckk as isize,
                        1,
                        col.as_ptr(),
                        strip_cols as isize,
                        1,
                        S::zero(),
                        c_ptr.add(y0 * ow),
                        (oh * ow) as isize,
                        1,
                    );
                }
                y0 += rows;
            }
        });

    if let Some(bias) = bias {
        for co in 0..cout {
            let bv = bias[[0, co, 0, 0]];
            out.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bv);
        }
    }
    out
}

pub fn conv2d_backward_x<S: Scalar>(
    gy: &Tensor<S>,
    w: &Tensor<S>,
    x_dim: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Tensor<S> {
    let gy = as_standard(gy);
    let (b, _cin, _h, _wid) = x_dim;
    let (cout, cin, k, _) = w.dim();
    let (_, _, oh, ow) = gy.dim();
    let ckk = cin * k * k;
    let mut gx = Array4::<S>::zeros(x_dim);
    let rows_per_strip = strip_rows::<S>(ckk, ow, oh);
    let w_std = as_standard(w);
    let w_slice = w_std.as_slice().expect("weights contiguous");
    debug_assert_eq!(gy.dim().0, b);

    gx.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(gy.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut gxb, gyb)| {
            let mut col = vec![S::zero(); ckk * rows_per_strip * ow];
            let mut y0 = 0;
            while y0 < oh {
                let rows = rows_per_strip.min(oh - y0);
                let strip_cols = rows * ow;
                unsafe {
                    // col = W^T (ckk x cout) . gy_strip (cout x strip_cols)
                    S::gemm(
                        ckk,
                        cout,
                        strip_cols,
                        S::one(),
                        w_slice.as_ptr(),
                        1,
                        ckk as isize,
                        gyb.as_ptr().add(y0 * ow),
                        (oh * ow) as isize,
                        1,
                        S::zero(),
                        col.as_mut_ptr(),
                        strip_cols as isize,
                        1,
                    );
                }
                col2im_add(&mut gxb, &col[..ckk * strip_cols], y0, rows, k, stride, pad, mode, ow);
                y0 += rows;
            }
        });
    gx
}

pub fn conv2d_backward_w<S: Scalar>(
    gy: &Tensor<S>,
    x: &Tensor<S>,
    w_dim: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Tensor<S> {
    let gy = as_standard(gy);
    let x = as_standard(x);
    let (cout, cin, k, _) = w_dim;
    let (b, _, oh, ow) = gy.dim();
    let ckk = cin * k * k;
    let rows_per_strip = strip_rows::<S>(ckk, ow, oh);

    // per-sample partials in parallel, reduced in batch order
    let partials: Vec<Array1<S>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let xb = x.index_axis(Axis(0), bi);
            let gyb = gy.index_axis(Axis(0), bi);
            let mut gw = Array1::<S>::zeros(cout * ckk);
            let mut col = vec![S::zero(); ckk * rows_per_strip * ow];
            let mut y0 = 0;
            while y0 < oh {
                let rows = rows_per_strip.min(oh - y0);
                let strip_cols = rows * ow;
                im2col(&xb, &mut col[..ckk * strip_cols], y0, rows, k, stride, pad, mode, ow);
                unsafe {
                    // gw (cout x ckk) += gy_strip (cout x strip_cols) . col^T
                    S::gemm(
                        cout,
                        strip_cols,
                        ckk,
                        S::one(),
                        gyb.as_ptr().add(y0 * ow),
                        (oh * ow) as isize,
                        1,
                        col.as_ptr(),
                        1,
                        strip_cols as isize,
                        S::one(),
                        gw.as_mut_ptr(),
                        ckk as isize,
                        1,
                    );
                }
                y0 += rows;
            }
            gw
        })
        .collect();

    let mut total = Array1::<S>::zeros(cout * ckk);
    for p in partials {
        total += &p;
    }
    total.into_shape_with_order(w_dim).expect("weight gradient shape")
}

pub fn conv2d_backward_b<S: Scalar>(gy: &Tensor<S>) -> Tensor<S> {
    let (_, cout, _, _) = gy.dim();
    let mut gb = Array4::<S>::zeros((1, cout, 1, 1));
    for co in 0..cout {
        gb[[0, co, 0, 0]] = gy.slice(s![.., co, .., ..]).iter().fold(S::zero(), |a, &v| a + v);
    }
    gb
}

pub fn upsample_nearest2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (b, c, h, w) = x.dim();
    let mut out = Array4::<S>::zeros((b, c, 2 * h, 2 * w));
    Zip::indexed(&mut out).for_each(|(bi, ci, y, xx), v| {
        *v = x[[bi, ci, y / 2, xx / 2]];
    });
    out
}

pub fn upsample_nearest2_backward<S: Scalar>(gy: &Tensor<S>, x_dim: (usize, usize, usize, usize)) -> Tensor<S> {
    let mut gx = Array4::<S>::zeros(x_dim);
    Zip::indexed(gy).for_each(|(bi, ci, y, xx), &g| {
        gx[[bi, ci, y / 2, xx / 2]] = gx[[bi, ci, y / 2, xx / 2]] + g;
    });
    gx
}

/// Taps for exact 2x bilinear upsampling with half-pixel centers: even outputs
/// mix (m-1, m) with weights (1/4, 3/4), odd outputs mix (m, m+1) with
/// (3/4, 1/4); indices clamp at the borders.
fn bil2_taps(n_in: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n_in)
        .map(|o| {
            let m = o / 2;
            if o % 2 == 0 {
                let lo = m.saturating_sub(1);
                [(lo, 0.25), (m, 0.75)]
            } else {
                let hi = (m + 1).min(n_in - 1);
                [(m, 0.75), (hi, 0.25)]
            }
        })
        .collect()
}

pub fn upsample_bilinear2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (b, c, h, w) = x.dim();
    let ty = bil2_taps(h);
    let tx = bil2_taps(w);
    let mut out = Array4::<S>::zeros((b, c, 2 * h, 2 * w));
    for bi in 0..b {
        for ci in 0..c {
            let plane = x.slice(s![bi, ci, .., ..]);
            let mut dst = out.slice_mut(s![bi, ci, .., ..]);
            for (oy, tyo) in ty.iter().enumerate() {
                for (ox, txo) in tx.iter().enumerate() {
                    let mut acc = S::zero();
                    for (iy, wy) in tyo.iter() {
                        for (ix, wx) in txo.iter() {
                            acc = acc + plane[[*iy, *ix]] * S::from_f64(wy * wx);
                        }
                    }
                    dst[[oy, ox]] = acc;
                }
            }
        }
    }
    out
}

pub fn upsample_bilinear2_backward<S: Scalar>(gy: &Tensor<S>, x_dim: (usize, usize, usize, usize)) -> Tensor<S> {
    let (b, c, h, w) = x_dim;
    let ty = bil2_taps(h);
    let tx = bil2_taps(w);
    let mut gx = Array4::<S>::zeros(x_dim);
    for bi in 0..b {
        for ci in 0..c {
            let gplane = gy.slice(s![bi, ci, .., ..]);
            let mut dst = gx.slice_mut(s![bi, ci, .., ..]);
            for (oy, tyo) in ty.iter().enumerate() {
                for (ox, txo) in tx.iter().enumerate() {
                    let g = gplane[[oy, ox]];
                    for (iy, wy) in tyo.iter() {
                        for (ix, wx) in txo.iter() {
                            dst[[*iy, *ix]] = dst[[*iy, *ix]] + g * S::from_f64(wy * wx);
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (b, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 requires even dims");
    let quarter = S::from_f64(0.25);
    let mut out = Array4::<S>::zeros((b, c, h / 2, w / 2));
    Zip::indexed(&mut out).for_each(|(bi, ci, y, xx), v| {
        let (y2, x2) = (2 * y, 2 * xx);
        *v = (x[[bi, ci, y2, x2]]
            + x[[bi, ci, y2, x2 + 1]]
            + x[[bi, ci, y2 + 1, x2]]
            + x[[bi, ci, y2 + 1, x2 + 1]])
            * quarter;
    });
    out
}

pub fn avg_pool2_backward<S: Scalar>(gy: &Tensor<S>, x_dim: (usize, usize, usize, usize)) -> Tensor<S> {
    let mut gx = Array4::<S>::zeros(x_dim);
    let quarter = S::from_f64(0.25);
    Zip::indexed(gy).for_each(|(bi, ci, y, xx), &g| {
        let spread = g * quarter;
        for dy in 0..2 {
            for dx in 0..2 {
                let idx = [bi, ci, 2 * y + dy, 2 * xx + dx];
                gx[idx] = gx[idx] + spread;
            }
        }
    });
    gx
}

pub fn softplus<S: Scalar>(v: S) -> S {
    // max(x,0) + ln(1+exp(-|x|))
    let zero = S::zero();
    let m = if v > zero { v } else { zero };
    m + (S::one() + (-v.abs()).exp()).ln()
}

pub fn sigmoid<S: Scalar>(v: S) -> S {
    let one = S::one();
    if v >= S::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}
