use super::{CoordGrid, Homography};
use crate::error::{Error, Result};
use crate::tensor::kernels::{bilinear_taps, Padding};
use crate::tensor::{Real, Tensor};

/// `X' - X` as a `[2, H, W]` field (channel 0 = du, channel 1 = dv).
pub fn homography_flow<T: Real>(x_proj: &CoordGrid, x: &CoordGrid) -> Result<Tensor<T>> {
    if x_proj.height != x.height || x_proj.width != x.width {
        return Err(Error::ShapeMismatch(format!(
            "flow grids {}x{} vs {}x{}",
            x_proj.height, x_proj.width, x.height, x.width
        )));
    }
    let n = x.len();
    let mut data = Vec::with_capacity(2 * n);
    data.extend(x_proj.u.iter().zip(&x.u).map(|(a, b)| T::from_f64(a - b)));
    data.extend(x_proj.v.iter().zip(&x.v).map(|(a, b)| T::from_f64(a - b)));
    Tensor::new(&[2, x.height, x.width], data)
}

/// Resamples `img [C,H,W]` so that `out(x) = img(h(x))` under bilinear
/// interpolation. Points that map to infinity read as out-of-bounds.
pub fn warp_bilinear<T: Real>(img: &Tensor<T>, h: &Homography, padding: Padding) -> Result<Tensor<T>> {
    let (c, ht, wd) = match *img.shape() {
        [c, ht, wd] => (c, ht, wd),
        ref s => return Err(Error::ShapeMismatch(format!("warp expects [C,H,W], got {s:?}"))),
    };
    let plane = ht * wd;
    let src = img.data();
    let mut out = vec![T::zero(); c * plane];
    for i in 0..ht {
        for j in 0..wd {
            let Ok((u, v)) = h.apply(j as f64, i as f64) else {
                continue;
            };
            let taps = bilinear_taps(u, v, ht, wd, padding);
            let p = i * wd + j;
            for ci in 0..c {
                let chan = &src[ci * plane..(ci + 1) * plane];
                let mut acc = 0.0f64;
                for (idx, w) in taps.idx.iter().zip(taps.wgt) {
                    if let Some(idx) = idx {
                        if w != 0.0 {
                            acc += w * chan[*idx].as_f64();
                        }
                    }
                }
                out[ci * plane + p] = T::from_f64(acc);
            }
        }
    }
    Tensor::new(img.shape(), out)
}
