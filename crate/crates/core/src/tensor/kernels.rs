//! Raw numeric kernels shared by tape ops, the image warper and IC-LK.

use super::Real;

/// Out-of-bounds policy for bilinear sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Zeros,
    Clamp,
}

/// `c[m,n] (+)= op(a) . op(b)` for contiguous row-major buffers.
///
/// `a` is `[m,k]` (or `[k,m]` when `trans_a`), `b` is `[k,n]` (or `[n,k]`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above pin every buffer to the extent the strides walk.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial size of a convolution.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Unfolds `x [c,h,w]` into `[c*k*k, ho*wo]` columns.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [T],
) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let plane = ho * wo;
    debug_assert_eq!(cols.len(), c * k * k * plane);
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // contiguous run with zero borders
                        let off = kx as isize - pad as isize;
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = ox as isize + off;
                            *d = if ix >= 0 && ix < w as isize {
                                srow[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *d = if ix >= 0 && ix < w as isize {
                                srow[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `dx [c,h,w]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [T],
) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let plane = ho * wo;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// The four taps of a bilinear lookup on an `h x w` plane. Taps that fall
/// outside the plane carry `None` under zeros padding.
#[derive(Debug, Clone, Copy)]
pub struct Taps<T> {
    pub idx: [Option<usize>; 4],
    pub wgt: [T; 4],
    /// Fractional offsets (fu, fv) within the cell.
    pub frac: (T, T),
}

#[inline]
pub fn bilinear_taps<T: Real>(u: T, v: T, h: usize, w: usize, padding: Padding) -> Taps<T> {
    let u0f = u.floor();
    let v0f = v.floor();
    let fu = u - u0f;
    let fv = v - v0f;
    let u0 = u0f.as_f64() as i64;
    let v0 = v0f.as_f64() as i64;
    let one = T::one();
    let wgt = [
        (one - fu) * (one - fv),
        fu * (one - fv),
        (one - fu) * fv,
        fu * fv,
    ];
    let coords = [(u0, v0), (u0 + 1, v0), (u0, v0 + 1), (u0 + 1, v0 + 1)];
    let mut idx = [None; 4];
    for (slot, &(cu, cv)) in idx.iter_mut().zip(&coords) {
        *slot = match padding {
            Padding::Zeros => {
                if cu >= 0 && cv >= 0 && (cu as usize) < w && (cv as usize) < h {
                    Some(cv as usize * w + cu as usize)
                } else {
                    None
                }
            }
            Padding::Clamp => {
                let cu = cu.clamp(0, w as i64 - 1) as usize;
                let cv = cv.clamp(0, h as i64 - 1) as usize;
                Some(cv * w + cu)
            }
        };
    }
    Taps {
        idx,
        wgt,
        frac: (fu, fv),
    }
}

#[inline]
pub fn sample_plane<T: Real>(plane: &[T], taps: &Taps<T>) -> T {
    let mut acc = T::zero();
    for (i, w) in taps.idx.iter().zip(taps.wgt) {
        if let Some(i) = i {
            acc += w * plane[*i];
        }
    }
    acc
}

/// Derivative of a bilinear lookup w.r.t. (u, v).
#[inline]
pub fn sample_plane_dcoord<T: Real>(plane: &[T], taps: &Taps<T>) -> (T, T) {
    let p = |k: usize| taps.idx[k].map_or(T::zero(), |i| plane[i]);
    let (fu, fv) = taps.frac;
    let one = T::one();
    let du = (one - fv) * (p(1) - p(0)) + fv * (p(3) - p(2));
    let dv = (one - fu) * (p(2) - p(0)) + fu * (p(3) - p(1));
    (du, dv)
}

/// Bilinear resampling of every channel of `x [c,h,w]` at the given
/// per-output-cell coordinates (`us`, `vs` share the output layout).
pub fn grid_sample<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    us: &[T],
    vs: &[T],
    padding: Padding,
) -> Vec<T> {
    let n = us.len();
    let mut out = vec![T::zero(); c * n];
    for p in 0..n {
        let taps = bilinear_taps(us[p], vs[p], h, w, padding);
        for ci in 0..c {
            out[ci * n + p] = sample_plane(&x[ci * h * w..(ci + 1) * h * w], &taps);
        }
    }
    out
}

/// Source index of the 2x2 pooling tap `(dy, dx)` for output `(oy, ox)`;
/// odd trailing rows/cols are replicated.
#[inline]
pub fn pool_tap(oy: usize, ox: usize, dy: usize, dx: usize, h: usize, w: usize) -> usize {
    let iy = (2 * oy + dy).min(h - 1);
    let ix = (2 * ox + dx).min(w - 1);
    iy * w + ix
}

/// 2x2 stride-2 average pool of `x [c,h,w]`.
pub fn avg_pool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ho = h.div_ceil(2);
    let wo = w.div_ceil(2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); c * ho * wo];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let s = src[pool_tap(oy, ox, 0, 0, h, w)]
                    + src[pool_tap(oy, ox, 0, 1, h, w)]
                    + src[pool_tap(oy, ox, 1, 0, h, w)]
                    + src[pool_tap(oy, ox, 1, 1, h, w)];
                dst[oy * wo + ox] = s * quarter;
            }
        }
    }
    out
}
