//! Slice-level forward and backward kernels. Shapes are validated by the
//! caller; everything here indexes `[N, C, H, W]` row-major buffers.

use std::ops::Range;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// 1x1 stride-1 unpadded convolutions read the input directly as columns.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0 && self.stride == 1
    }
}

/// Unfolds one sample into `[Cin*k*k, Ho*Wo]` columns.
fn im2col<S: Scalar>(g: &ConvGeom, x: &[S], cols: &mut [S]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(S::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid outputs ox satisfy 0 <= ox + kx - pad < w
                        let lo = g.pad.saturating_sub(kx).min(ow);
                        let hi = (g.w + g.pad).saturating_sub(kx).clamp(lo, ow);
                        line[..lo].fill(S::zero());
                        line[hi..].fill(S::zero());
                        if hi > lo {
                            let off = lo + kx - g.pad;
                            line[lo..hi].copy_from_slice(&srow[off..off + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *slot = if ix < 0 || ix >= g.w as isize {
                            S::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] restricted to input channels `channels`: `cols`
/// holds only their rows, accumulated back into one sample.
fn col2im_add<S: Scalar>(g: &ConvGeom, channels: Range<usize>, cols: &[S], dx: &mut [S]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for (rel, ci) in channels.enumerate() {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (rel * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let lo = g.pad.saturating_sub(kx).min(ow);
                        let hi = (g.w + g.pad).saturating_sub(kx).clamp(lo, ow);
                        if hi == lo {
                            continue;
                        }
                        let off = lo + kx - g.pad;
                        for (d, &v) in drow[off..off + hi - lo].iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                            *d += v;
                        }
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `scratch` is reused for the unfolded columns.
pub(crate) fn conv2d_forward<S: Scalar>(g: &ConvGeom, x: &[S], weight: &[S], bias: &[S], scratch: &mut Vec<S>) -> Vec<S> {
    let plane = g.out_h() * g.out_w();
    let kk = g.patch();
    let in_stride = g.cin * g.h * g.w;
    let mut out = vec![S::zero(); g.n * g.cout * plane];
    if !g.is_pointwise() {
        scratch.resize(kk * plane, S::zero());
    }
    let cols = scratch;
    for b in 0..g.n {
        let xb = &x[b * in_stride..(b + 1) * in_stride];
        let ob = &mut out[b * g.cout * plane..(b + 1) * g.cout * plane];
        for (co, chunk) in ob.chunks_exact_mut(plane).enumerate() {
            chunk.fill(bias[co]);
        }
        let src: &[S] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, cols);
            cols
        };
        S::gemm(
            g.cout, kk, plane, S::one(), weight, kk as isize, 1, src, plane as isize, 1, S::one(), ob,
            plane as isize, 1,
        );
    }
    out
}

/// Returns `(dx, dweight, dbias)`. `dx` is computed only for the input
/// channels in `dx_channels` (zero elsewhere) and skipped when it is `None`.
pub(crate) fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    weight: &[S],
    dout: &[S],
    dx_channels: Option<Range<usize>>,
    need_dparams: bool,
    scratch: &mut Vec<S>,
) -> (Option<Vec<S>>, Vec<S>, Vec<S>) {
    let plane = g.out_h() * g.out_w();
    let kk = g.patch();
    let kk2 = g.k * g.k;
    let in_stride = g.cin * g.h * g.w;
    let mut dw = vec![S::zero(); g.cout * kk];
    let mut db = vec![S::zero(); g.cout];
    let mut dx = dx_channels.as_ref().map(|_| vec![S::zero(); x.len()]);
    let dx_rows = dx_channels.as_ref().map_or(0, |r| r.len() * kk2);
    let cols_len = if g.is_pointwise() || !need_dparams { 0 } else { kk * plane };
    let dcols_len = if g.is_pointwise() { 0 } else { dx_rows * plane };
    scratch.resize(cols_len.max(dcols_len), S::zero());
    for b in 0..g.n {
        let xb = &x[b * in_stride..(b + 1) * in_stride];
        let gb = &dout[b * g.cout * plane..(b + 1) * g.cout * plane];
        if need_dparams {
            for (co, chunk) in gb.chunks_exact(plane).enumerate() {
                db[co] += chunk.iter().copied().sum::<S>();
            }
            let src: &[S] = if g.is_pointwise() {
                xb
            } else {
                im2col(g, xb, &mut scratch[..cols_len]);
                &scratch[..cols_len]
            };
            // dw[co, r] += sum_p dout[co, p] * cols[r, p]
            S::gemm(
                g.cout, plane, kk, S::one(), gb, plane as isize, 1, src, 1, plane as isize, S::one(),
                &mut dw, kk as isize, 1,
            );
        }
        if let (Some(dx), Some(range)) = (dx.as_mut(), dx_channels.clone()) {
            let dxb = &mut dx[b * in_stride..(b + 1) * in_stride];
            let w0 = &weight[range.start * kk2..];
            if g.is_pointwise() {
                S::gemm(
                    dx_rows, g.cout, plane, S::one(), w0, 1, kk as isize, gb, plane as isize, 1,
                    S::zero(), &mut dxb[range.start * plane..range.end * plane], plane as isize, 1,
                );
            } else {
                let dcols = &mut scratch[..dcols_len];
                S::gemm(
                    dx_rows, g.cout, plane, S::one(), w0, 1, kk as isize, gb, plane as isize, 1,
                    S::zero(), dcols, plane as isize, 1,
                );
                col2im_add(g, range, dcols, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Geometry of the 2x2 stride-2 transpose convolution; weight is `[Cin, Cout, 2, 2]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct UpGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
}

pub(crate) fn transpose_conv2d_forward<S: Scalar>(
    g: &UpGeom,
    x: &[S],
    weight: &[S],
    bias: &[S],
) -> Vec<S> {
    let plane = g.h * g.w;
    let rows = g.cout * 4;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let mut out = vec![S::zero(); g.n * g.cout * oh * ow];
    let mut y = vec![S::zero(); rows * plane];
    for b in 0..g.n {
        let xb = &x[b * g.cin * plane..(b + 1) * g.cin * plane];
        // y[(co,a,b), p] = sum_ci w[ci, (co,a,b)] * x[ci, p]
        S::gemm(
            rows, g.cin, plane, S::one(), weight, 1, rows as isize, xb, plane as isize, 1, S::zero(),
            &mut y, plane as isize, 1,
        );
        let ob = &mut out[b * g.cout * oh * ow..(b + 1) * g.cout * oh * ow];
        for co in 0..g.cout {
            let dst = &mut ob[co * oh * ow..(co + 1) * oh * ow];
            for ab in 0..4 {
                let (dy, dx) = (ab / 2, ab % 2);
                let src = &y[(co * 4 + ab) * plane..(co * 4 + ab + 1) * plane];
                for i in 0..g.h {
                    let drow = &mut dst[(2 * i + dy) * ow..(2 * i + dy + 1) * ow];
                    for j in 0..g.w {
                        drow[2 * j + dx] = src[i * g.w + j] + bias[co];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn transpose_conv2d_backward<S: Scalar>(
    g: &UpGeom,
    x: &[S],
    weight: &[S],
    dout: &[S],
    need_dx: bool,
    need_dparams: bool,
) -> (Option<Vec<S>>, Vec<S>, Vec<S>) {
    let plane = g.h * g.w;
    let rows = g.cout * 4;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let mut dw = vec![S::zero(); g.cin * rows];
    let mut db = vec![S::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![S::zero(); x.len()]);
    let mut dy = vec![S::zero(); rows * plane];
    for b in 0..g.n {
        let gb = &dout[b * g.cout * oh * ow..(b + 1) * g.cout * oh * ow];
        for co in 0..g.cout {
            let src = &gb[co * oh * ow..(co + 1) * oh * ow];
            if need_dparams {
                db[co] += src.iter().copied().sum::<S>();
            }
            for ab in 0..4 {
                let (oy, ox) = (ab / 2, ab % 2);
                let dst = &mut dy[(co * 4 + ab) * plane..(co * 4 + ab + 1) * plane];
                for i in 0..g.h {
                    let srow = &src[(2 * i + oy) * ow..(2 * i + oy + 1) * ow];
                    for j in 0..g.w {
                        dst[i * g.w + j] = srow[2 * j + ox];
                    }
                }
            }
        }
        let xb = &x[b * g.cin * plane..(b + 1) * g.cin * plane];
        if need_dparams {
            // dw[ci, r] += sum_p x[ci, p] * dy[r, p]
            S::gemm(
                g.cin, plane, rows, S::one(), xb, plane as isize, 1, &dy, 1, plane as isize,
                S::one(), &mut dw, rows as isize, 1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.cin * plane..(b + 1) * g.cin * plane];
            S::gemm(
                g.cin, rows, plane, S::one(), weight, rows as isize, 1, &dy, plane as isize, 1,
                S::zero(), dxb, plane as isize, 1,
            );
        }
    }
    (dx, dw, db)
}

pub(crate) fn avg_pool2_forward<S: Scalar>(planes: usize, h: usize, w: usize, x: &[S]) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let r0 = &src[2 * i * w..(2 * i + 1) * w];
            let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..ow {
                out.push((r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * quarter);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<S: Scalar>(planes: usize, h: usize, w: usize, dout: &[S]) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut dx = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = dout[(p * oh + i) * ow + j] * quarter;
                dst[2 * i * w + 2 * j] = g;
                dst[2 * i * w + 2 * j + 1] = g;
                dst[(2 * i + 1) * w + 2 * j] = g;
                dst[(2 * i + 1) * w + 2 * j + 1] = g;
            }
        }
    }
    dx
}

/// Interleaves per-sample channel blocks of `a` and `b`.
pub(crate) fn concat_forward<S: Scalar>(n: usize, a_block: usize, b_block: usize, a: &[S], b: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(n * (a_block + b_block));
    for s in 0..n {
        out.extend_from_slice(&a[s * a_block..(s + 1) * a_block]);
        out.extend_from_slice(&b[s * b_block..(s + 1) * b_block]);
    }
    out
}

pub(crate) fn concat_backward<S: Scalar>(
    n: usize,
    a_block: usize,
    b_block: usize,
    dout: &[S],
) -> (Vec<S>, Vec<S>) {
    let mut da = Vec::with_capacity(n * a_block);
    let mut db = Vec::with_capacity(n * b_block);
    let stride = a_block + b_block;
    for s in 0..n {
        da.extend_from_slice(&dout[s * stride..s * stride + a_block]);
        db.extend_from_slice(&dout[s * stride + a_block..(s + 1) * stride]);
    }
    (da, db)
}
