//! Forward and backward kernels on raw buffers. Shapes are validated by the
//! tape before these are called.

use super::tensor::{matmul_into, Element};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `[cin, h, w]` into `[cin*kh*kw, oh*ow]`.
fn im2col<T: Element>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[cin*kh*kw, oh*ow]` back onto `[cin, h, w]`.
fn col2im<T: Element>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let k = g.k();
    let mut out = vec![T::zero(); g.n * g.cout * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for b in 0..g.n {
        let xb = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let ob = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(bias) = bias {
            for (co, row) in ob.chunks_mut(p).enumerate() {
                row.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if g.is_pointwise() {
            matmul_into(w, xb, ob, g.cout, k, p, false, false, beta);
        } else {
            im2col(g, xb, &mut cols);
            matmul_into(w, &cols, ob, g.cout, k, p, false, false, beta);
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dx` is skipped when `need_dx` is false.
pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let k = g.k();
    let plane_in = g.cin * g.h * g.w;
    let mut dw = vec![T::zero(); g.cout * k];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![T::zero(); g.n * plane_in]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![T::zero(); if g.is_pointwise() || !need_dx { 0 } else { k * p }];
    for b in 0..g.n {
        let xb = &x[b * plane_in..(b + 1) * plane_in];
        let gb = &dout[b * g.cout * p..(b + 1) * g.cout * p];
        for (co, row) in gb.chunks(p).enumerate() {
            db[co] = db[co] + row.iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        // dw += dout_b · colsᵀ
        matmul_into(gb, cols_ref, &mut dw, g.cout, p, k, false, true, T::one());
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * plane_in..(b + 1) * plane_in];
            if g.is_pointwise() {
                matmul_into(w, gb, dxb, k, g.cout, p, true, false, T::zero());
            } else {
                matmul_into(w, gb, &mut dcols, k, g.cout, p, true, false, T::zero());
                col2im(g, &dcols, dxb);
            }
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone)]
pub(crate) struct GroupNormSaved<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn group_norm_forward<T: Element>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    groups: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, GroupNormSaved<T>) {
    let cg = c / groups;
    let plane = h * w;
    let count = T::from_f64((cg * plane) as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut saved = GroupNormSaved {
        mean: Vec::with_capacity(n * groups),
        rstd: Vec::with_capacity(n * groups),
    };
    for b in 0..n {
        for gi in 0..groups {
            let start = (b * c + gi * cg) * plane;
            let seg = &x[start..start + cg * plane];
            let mean = seg.iter().copied().sum::<T>() / count;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let rstd = (var + eps).sqrt().recip();
            saved.mean.push(mean);
            saved.rstd.push(rstd);
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * plane;
                for i in 0..plane {
                    out[off + i] = (x[off + i] - mean) * rstd * gamma[ch] + beta[ch];
                }
            }
        }
    }
    (out, saved)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn group_norm_backward<T: Element>(
    x: &[T],
    dout: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    groups: usize,
    gamma: &[T],
    saved: &GroupNormSaved<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cg = c / groups;
    let plane = h * w;
    let count = T::from_f64((cg * plane) as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for gi in 0..groups {
            let mean = saved.mean[b * groups + gi];
            let rstd = saved.rstd[b * groups + gi];
            let start = (b * c + gi * cg) * plane;
            let mut sum_dy_hat = T::zero();
            let mut sum_dy_hat_xhat = T::zero();
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * plane;
                let mut dg = T::zero();
                let mut dbb = T::zero();
                for i in 0..plane {
                    let xhat = (x[off + i] - mean) * rstd;
                    let dy = dout[off + i];
                    dg = dg + dy * xhat;
                    dbb = dbb + dy;
                    let dyh = dy * gamma[ch];
                    sum_dy_hat = sum_dy_hat + dyh;
                    sum_dy_hat_xhat = sum_dy_hat_xhat + dyh * xhat;
                }
                dgamma[ch] = dgamma[ch] + dg;
                dbeta[ch] = dbeta[ch] + dbb;
            }
            let m1 = sum_dy_hat / count;
            let m2 = sum_dy_hat_xhat / count;
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * plane;
                for i in 0..plane {
                    let xhat = (x[off + i] - mean) * rstd;
                    let dyh = dout[off + i] * gamma[ch];
                    dx[off + i] = rstd * (dyh - m1 - xhat * m2);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn upsample2_forward<T: Element>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                dst[y * ow + xo] = src[(y / 2) * w + xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Element>(
    dout: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); n * c * h * w];
    for nc in 0..n * c {
        let src = &dout[nc * oh * ow..(nc + 1) * oh * ow];
        let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let d = &mut dst[(y / 2) * w + xo / 2];
                *d = *d + src[y * ow + xo];
            }
        }
    }
    dx
}

pub(crate) fn downsample2_forward<T: Element>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                out.push(src[2 * y * w + 2 * xo]);
            }
        }
    }
    out
}

pub(crate) fn downsample2_backward<T: Element>(
    dout: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut dx = vec![T::zero(); n * c * h * w];
    for nc in 0..n * c {
        let src = &dout[nc * oh * ow..(nc + 1) * oh * ow];
        let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                dst[2 * y * w + 2 * xo] = src[y * ow + xo];
            }
        }
    }
    dx
}

/// Same-rank broadcasting: each extent equals the output extent or is 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index with the matching flat offsets into `a` and `b`.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = strides_for(a, out);
    let sb = strides_for(b, out);
    let rank = out.len();
    let total: usize = out.iter().product();
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    while o < total {
        let mut oa = 0;
        let mut ob = 0;
        for d in 0..rank - 1 {
            oa += idx[d] * sa[d];
            ob += idx[d] * sb[d];
        }
        for i in 0..inner {
            f(o + i, oa + i * ia_step, ob + i * ib_step);
        }
        o += inner;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}
