use super::{Variant, WarpPair};
use crate::error::{Error, Result};
use crate::geometry::{corners_to_homography, CornerDisplacement, Frame, Homography};
use crate::rng::SplitMix64;
use crate::tensor::kernels::{bilinear_taps, sample_plane, Padding};
use crate::tensor::Tensor;

/// Crop size and corner perturbation range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub size: usize,
    pub rho: f64,
}

impl SynthParams {
    /// Distance kept between the crop and the base image border.
    pub fn margin(&self) -> usize {
        self.rho.ceil() as usize + 1
    }

    /// Smallest usable base image side.
    pub fn base_side(&self) -> usize {
        self.size + 2 * self.margin()
    }
}

const MAX_DRAWS: usize = 10;

fn plane(t: &Tensor<f64>) -> Result<(usize, usize)> {
    match *t.shape() {
        [1, h, w] => Ok((h, w)),
        ref s => Err(Error::ShapeMismatch(format!("base image must be [1,H,W], got {s:?}"))),
    }
}

/// Displaced corners must still form a convex quadrilateral with the same
/// orientation as the frame.
fn is_valid_quad(d: &CornerDisplacement, frame: Frame) -> bool {
    let c = d.displaced_corners(frame);
    // walk tl -> tr -> br -> bl
    let ring = [c[0][0], c[0][1], c[1][1], c[1][0]];
    (0..4).all(|i| {
        let a = ring[i];
        let b = ring[(i + 1) % 4];
        let p = ring[(i + 2) % 4];
        let cross = (b[0] - a[0]) * (p[1] - b[1]) - (b[1] - a[1]) * (p[0] - b[0]);
        cross > 0.0
    })
}

fn draw_displacement(params: SynthParams, rng: &mut SplitMix64) -> Result<(CornerDisplacement, Homography)> {
    let frame = Frame::square(params.size);
    if params.rho == 0.0 {
        return Ok((CornerDisplacement::zeros(), Homography::identity()));
    }
    for _ in 0..MAX_DRAWS {
        let flat: Vec<f64> = (0..8).map(|_| rng.uniform(-params.rho, params.rho)).collect();
        let d = CornerDisplacement::from_flat(&flat);
        if !is_valid_quad(&d, frame) {
            continue;
        }
        if let Ok(h) = corners_to_homography(&d, frame) {
            return Ok((d, h));
        }
    }
    Err(Error::DegenerateCorners)
}

/// Corner-perturbation pair. `i_t` is a crop of `base`, and `i_s` is read
/// from `base` through the ground-truth homography at the same crop, so
/// that `i_s(x) = i_t(H x)` and every sample stays within `rho` of the crop.
pub fn synth_static(base: &Tensor<f64>, params: SynthParams, rng: &mut SplitMix64) -> Result<WarpPair> {
    let (hb, wb) = plane(base)?;
    let need = params.base_side();
    if hb < need || wb < need {
        return Err(Error::ImageTooSmall {
            width: wb,
            height: hb,
            need,
        });
    }
    let m = params.margin();
    let x0 = m + rng.below((wb - need + 1) as u64) as usize;
    let y0 = m + rng.below((hb - need + 1) as u64) as usize;
    let (d, h) = draw_displacement(params, rng)?;
    let n = params.size;
    let b = base.data();
    let i_t = Tensor::from_fn(&[1, n, n], |i| b[(y0 + i / n) * wb + x0 + i % n] as f32);
    let identity = params.rho == 0.0;
    let i_s = Tensor::from_fn(&[1, n, n], |i| {
        if identity {
            return i_t.data()[i];
        }
        let (u, v) = h
            .apply((i % n) as f64, (i / n) as f64)
            .unwrap_or((f64::NAN, f64::NAN));
        let taps = bilinear_taps(u + x0 as f64, v + y0 as f64, hb, wb, Padding::Clamp);
        sample_plane(b, &taps) as f32
    });
    Ok(WarpPair {
        i_s,
        i_t,
        d_gt: d,
        seed: 0,
        index: 0,
        variant: Variant::Static,
        mask: None,
    })
}

/// Static pair plus a foreground patch pasted at independent positions in
/// the two images. The returned mask (source frame, evaluation only) marks
/// source pixels covered by the patch or mapped onto it in the target.
pub fn synth_moving(
    base: &Tensor<f64>,
    patch_src: &Tensor<f64>,
    params: SynthParams,
    area_fraction: f64,
    rng: &mut SplitMix64,
) -> Result<WarpPair> {
    if !(0.0..=0.25).contains(&area_fraction) {
        return Err(Error::Config(format!("patch area fraction {area_fraction} not in [0, 0.25]")));
    }
    let mut pair = synth_static(base, params, rng)?;
    pair.variant = Variant::Moving;
    let n = params.size;
    let side = (area_fraction.sqrt() * n as f64).round() as usize;
    let mut mask = Tensor::<f32>::zeros(&[1, n, n]);
    if side > 0 {
        let (ph, pw) = plane(patch_src)?;
        if ph < side || pw < side {
            return Err(Error::ImageTooSmall {
                width: pw,
                height: ph,
                need: side,
            });
        }
        let py = rng.below((ph - side + 1) as u64) as usize;
        let px = rng.below((pw - side + 1) as u64) as usize;
        let span = (n - side + 1) as u64;
        let (sy, sx) = (rng.below(span) as usize, rng.below(span) as usize);
        let (ty, tx) = (rng.below(span) as usize, rng.below(span) as usize);
        let pd = patch_src.data();
        for r in 0..side {
            for c in 0..side {
                let v = pd[(py + r) * pw + px + c] as f32;
                pair.i_s.data_mut()[(sy + r) * n + sx + c] = v;
                pair.i_t.data_mut()[(ty + r) * n + tx + c] = v;
            }
        }
        let h = corners_to_homography(&pair.d_gt, Frame::square(n))?;
        let inside = |a: f64, lo: usize| a >= lo as f64 - 0.5 && a < (lo + side) as f64 - 0.5;
        for i in 0..n {
            for j in 0..n {
                let in_src = inside(i as f64, sy) && inside(j as f64, sx);
                let in_tgt = h
                    .apply(j as f64, i as f64)
                    .map(|(u, v)| inside(v, ty) && inside(u, tx))
                    .unwrap_or(false);
                if in_src || in_tgt {
                    mask.data_mut()[i * n + j] = 1.0;
                }
            }
        }
    }
    pair.mask = Some(mask);
    Ok(pair)
}

/// Photometric change applied to the target of a cross-modal pair, before
/// noise: inversion followed by gamma 0.5.
pub fn crossmodal_tone(x: f64) -> f64 {
    (1.0 - x).max(0.0).sqrt()
}

pub const CROSSMODAL_NOISE: f64 = 0.02;

/// Static pair whose target is inverted, gamma-mapped and noised.
pub fn synth_crossmodal(base: &Tensor<f64>, params: SynthParams, rng: &mut SplitMix64) -> Result<WarpPair> {
    let mut pair = synth_static(base, params, rng)?;
    pair.variant = Variant::Crossmodal;
    for v in pair.i_t.data_mut() {
        let y = crossmodal_tone(*v as f64) + CROSSMODAL_NOISE * rng.normal();
        *v = y.clamp(0.0, 1.0) as f32;
    }
    Ok(pair)
}
