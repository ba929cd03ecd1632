//! Inverse-compositional Lucas-Kanade homography alignment.
//!
//! The target image is the template. The warp `G` maps template (target)
//! coordinates to source coordinates, so that `i_s(G y) ~ i_t(y)`; the
//! source-to-target homography reported to callers is `G^-1`.
//!
//! Parameters live in a normalized frame centred on the image with unit
//! half-extent, which keeps the 8x8 Gauss-Newton matrix well scaled:
//!
//! ```text
//! G~ = [[1 + p0, p2, p4], [p1, 1 + p3, p5], [p6, p7, 1]]
//! ```

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{
    average_corner_error, compose, homography_to_corners, warp_bilinear, CornerDisplacement, Frame, Homography,
};
use crate::tensor::{Padding, Real, Tensor};

pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Vec8 = SVector<f64, 8>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IclkConfig {
    pub max_iter: usize,
    /// Stop when the parameter increment norm falls below this.
    pub tol: f64,
    /// Pyramid levels (1 = single scale).
    pub levels: usize,
    /// Pixels this close to the border are left out of the objective.
    pub margin: usize,
    /// Tikhonov damping, relative to the trace of the Gauss-Newton matrix.
    pub damping: f64,
    pub cond_limit: f64,
    /// Divergence factor over the running minimum of the tracked error.
    pub blowup: f64,
}

impl Default for IclkConfig {
    fn default() -> Self {
        IclkConfig {
            max_iter: 50,
            tol: 1e-4,
            levels: 1,
            margin: 1,
            damping: 1e-6,
            cond_limit: 1e12,
            blowup: 10.0,
        }
    }
}

/// Everything that depends on the template only.
#[derive(Debug, Clone)]
pub struct IclkWorkspace {
    channels: usize,
    height: usize,
    width: usize,
    template: Vec<f64>,
    /// Template gradients in pixel units, `[C,H,W]` (zero on the border).
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
    /// `(channel, pixel)` of every row of the Jacobian.
    pub rows: Vec<(usize, usize)>,
    pub jacobian: Vec<[f64; 8]>,
    pub hessian: Mat8,
    /// Pixel -> normalized coordinates.
    norm: Matrix3<f64>,
    norm_inv: Matrix3<f64>,
}

/// One Gauss-Newton increment.
#[derive(Debug, Clone)]
pub struct Increment {
    /// Normalized parameters.
    pub dp: [f64; 8],
    /// The same increment as a pixel-space warp.
    pub dh: Homography,
}

#[derive(Debug, Clone)]
pub struct IclkResult {
    /// Source-to-target homography.
    pub h: Homography,
    /// Tracked error after 0, 1, 2, ... updates: ACE when ground truth was
    /// given, otherwise the residual RMS.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn chw<T: Real>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        ref s => Err(Error::ShapeMismatch(format!("expected [C,H,W] image, got {s:?}"))),
    }
}

/// `dW/dp` at identity for normalized point `(u, v)`.
fn warp_jacobian(u: f64, v: f64) -> [[f64; 8]; 2] {
    [
        [u, 0.0, v, 0.0, 1.0, 0.0, -u * u, -u * v],
        [0.0, u, 0.0, v, 0.0, 1.0, -u * v, -v * v],
    ]
}

fn lift(p: &[f64; 8]) -> Matrix3<f64> {
    Matrix3::new(1.0 + p[0], p[2], p[4], p[1], 1.0 + p[3], p[5], p[6], p[7], 1.0)
}

impl IclkWorkspace {
    pub fn precompute<T: Real>(template: &Tensor<T>, margin: usize) -> Result<Self> {
        let (c, h, w) = chw(template)?;
        if h < 3 || w < 3 {
            return Err(Error::ShapeMismatch(format!("template {h}x{w} is smaller than 3x3")));
        }
        let m = margin.max(1);
        let data: Vec<f64> = template.data().iter().map(|v| v.as_f64()).collect();
        let plane = h * w;
        let mut gu = vec![0.0; c * plane];
        let mut gv = vec![0.0; c * plane];
        for ch in 0..c {
            let img = &data[ch * plane..(ch + 1) * plane];
            for i in 1..h - 1 {
                for j in 1..w - 1 {
                    let p = i * w + j;
                    gu[ch * plane + p] = 0.5 * (img[p + 1] - img[p - 1]);
                    gv[ch * plane + p] = 0.5 * (img[p + w] - img[p - w]);
                }
            }
        }
        let s = ((w.max(h) - 1) as f64 / 2.0).max(1.0);
        let (cu, cv) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
        let norm = Matrix3::new(1.0 / s, 0.0, -cu / s, 0.0, 1.0 / s, -cv / s, 0.0, 0.0, 1.0);
        let norm_inv = Matrix3::new(s, 0.0, cu, 0.0, s, cv, 0.0, 0.0, 1.0);
        let mut rows = Vec::new();
        let mut jacobian = Vec::new();
        let mut hessian = Mat8::zeros();
        for ch in 0..c {
            for i in m..h.saturating_sub(m) {
                for j in m..w.saturating_sub(m) {
                    let p = i * w + j;
                    let (un, vn) = ((j as f64 - cu) / s, (i as f64 - cv) / s);
                    let dw = warp_jacobian(un, vn);
                    // image gradient w.r.t. normalized coordinates
                    let (a, b) = (gu[ch * plane + p] * s, gv[ch * plane + p] * s);
                    let mut row = [0.0; 8];
                    for k in 0..8 {
                        row[k] = a * dw[0][k] + b * dw[1][k];
                    }
                    let r = Vec8::from_row_slice(&row);
                    hessian += r * r.transpose();
                    rows.push((ch, p));
                    jacobian.push(row);
                }
            }
        }
        Ok(IclkWorkspace {
            channels: c,
            height: h,
            width: w,
            template: data,
            grad_u: gu,
            grad_v: gv,
            rows,
            jacobian,
            hessian,
            norm,
            norm_inv,
        })
    }

    pub fn frame(&self) -> Frame {
        Frame::new(self.height, self.width)
    }

    /// Ratio of the extreme eigenvalues of the Gauss-Newton matrix.
    pub fn condition_number(&self) -> f64 {
        let eig = self.hessian.symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if max <= 0.0 || min <= 0.0 || !max.is_finite() {
            return f64::INFINITY;
        }
        max / min
    }

    /// Residual `warped - template` over the Jacobian rows.
    pub fn residual<T: Real>(&self, warped: &Tensor<T>) -> Result<Vec<f64>> {
        let (c, h, w) = chw(warped)?;
        if (c, h, w) != (self.channels, self.height, self.width) {
            return Err(Error::ShapeMismatch(format!(
                "warped image {c}x{h}x{w} vs template {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        let plane = h * w;
        let d = warped.data();
        Ok(self
            .rows
            .iter()
            .map(|&(ch, p)| d[ch * plane + p].as_f64() - self.template[ch * plane + p])
            .collect())
    }

    /// Pixel-space warp for normalized parameters.
    pub fn to_pixels(&self, p: &[f64; 8]) -> Result<Homography> {
        Homography::from_matrix(self.norm_inv * lift(p) * self.norm)
    }

    /// Solves the damped normal equations for the increment that aligns
    /// `warped` (the source already resampled by the current warp) with the
    /// template.
    pub fn step<T: Real>(&self, warped: &Tensor<T>, cfg: &IclkConfig) -> Result<Increment> {
        let cond = self.condition_number();
        if cond.is_nan() || cond >= cfg.cond_limit {
            return Err(Error::RankDeficientHessian(cond));
        }
        let r = self.residual(warped)?;
        let mut b = Vec8::zeros();
        for (row, e) in self.jacobian.iter().zip(&r) {
            for k in 0..8 {
                b[k] += row[k] * e;
            }
        }
        let lambda = cfg.damping * self.hessian.trace();
        let damped = self.hessian + Mat8::identity() * lambda;
        let chol = damped
            .cholesky()
            .ok_or(Error::RankDeficientHessian(cond))?;
        // iterative refinement removes the bias introduced by the damping
        let mut x = chol.solve(&b);
        for _ in 0..20 {
            let fix = chol.solve(&(b - self.hessian * x));
            x += fix;
            if fix.norm() <= 1e-15 * x.norm().max(1e-300) {
                break;
            }
        }
        let dp: [f64; 8] = x.as_slice().try_into().unwrap();
        Ok(Increment {
            dh: self.to_pixels(&dp)?,
            dp,
        })
    }
}

fn rms(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    (r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64).sqrt()
}

/// Single-scale IC-LK loop. `h0` is an initial source-to-target estimate.
pub fn estimate<T: Real>(
    i_s: &Tensor<T>,
    i_t: &Tensor<T>,
    h0: &Homography,
    cfg: &IclkConfig,
    gt: Option<&CornerDisplacement>,
) -> Result<IclkResult> {
    if cfg.levels > 1 {
        return estimate_multiscale(i_s, i_t, h0, cfg, gt);
    }
    if chw(i_s)? != chw(i_t)? {
        return Err(Error::ShapeMismatch(format!("pair shapes {:?} vs {:?}", i_s.shape(), i_t.shape())));
    }
    let ws = IclkWorkspace::precompute(i_t, cfg.margin)?;
    let frame = ws.frame();
    let mut g = h0.inverse()?;
    let track = |g: &Homography, warped: &Tensor<T>| -> Result<f64> {
        match gt {
            Some(gt) => {
                let d = homography_to_corners(&g.inverse()?, frame)?;
                Ok(average_corner_error(&d, gt))
            }
            None => Ok(rms(&ws.residual(warped)?)),
        }
    };
    let mut warped = warp_bilinear(i_s, &g, Padding::Clamp)?;
    let mut trace = vec![track(&g, &warped)?];
    let mut best = trace[0];
    let floor = if gt.is_some() { 1.0 } else { 1e-2 };
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        let inc = ws.step(&warped, cfg).map_err(|e| e.at_iteration(it))?;
        let norm = inc.dp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < cfg.tol {
            converged = true;
            break;
        }
        let diverged = || Error::Diverged { iteration: it + 1 };
        g = inc
            .dh
            .inverse()
            .and_then(|inv| compose(&g, &inv))
            .map_err(|_| diverged())?;
        iterations = it + 1;
        warped = warp_bilinear(i_s, &g, Padding::Clamp)?;
        let err = track(&g, &warped).map_err(|_| diverged())?;
        if !err.is_finite() || err > cfg.blowup * best.max(floor) {
            return Err(diverged());
        }
        best = best.min(err);
        trace.push(err);
    }
    Ok(IclkResult {
        h: g.inverse()?,
        trace,
        iterations,
        converged,
    })
}

/// 2x2 average-pool downsampling of every channel.
fn downsample<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(img)?;
    let data = crate::tensor::kernels::avg_pool2(img.data(), c, h, w);
    Tensor::new(&[c, h.div_ceil(2), w.div_ceil(2)], data)
}

/// Pixel coordinates one pyramid level down: pooled pixel `j` is centred on
/// fine pixels `2j` and `2j + 1`.
fn level_down() -> Matrix3<f64> {
    Matrix3::new(0.5, 0.0, -0.25, 0.0, 0.5, -0.25, 0.0, 0.0, 1.0)
}

fn conjugate(h: &Homography, a: &Matrix3<f64>, levels: usize) -> Result<Homography> {
    let mut m = *h.matrix();
    let inv = a.try_inverse().expect("level map is invertible");
    for _ in 0..levels {
        m = a * m * inv;
    }
    Homography::from_matrix(m)
}

/// Coarse-to-fine IC-LK over a `cfg.levels`-level average-pooled pyramid.
pub fn estimate_multiscale<T: Real>(
    i_s: &Tensor<T>,
    i_t: &Tensor<T>,
    h0: &Homography,
    cfg: &IclkConfig,
    gt: Option<&CornerDisplacement>,
) -> Result<IclkResult> {
    let mut pyr = vec![(i_s.clone(), i_t.clone())];
    for _ in 1..cfg.levels.max(1) {
        let (s, t) = pyr.last().unwrap();
        let (_, h, w) = chw(s)?;
        if h < 8 || w < 8 {
            break;
        }
        pyr.push((downsample(s)?, downsample(t)?));
    }
    let top = pyr.len() - 1;
    let single = IclkConfig { levels: 1, ..*cfg };
    let down = level_down();
    let up = down.try_inverse().unwrap();
    let mut h = conjugate(h0, &down, top)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for level in (0..=top).rev() {
        let (s, t) = &pyr[level];
        let fine = level == 0;
        let res = estimate(s, t, &h, &single, if fine { gt } else { None })?;
        iterations += res.iterations;
        converged = res.converged;
        if fine {
            trace = res.trace;
            h = res.h;
        } else {
            h = conjugate(&res.h, &up, 1)?;
        }
    }
    Ok(IclkResult {
        h,
        trace,
        iterations,
        converged,
    })
}
