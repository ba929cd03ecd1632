//! All-pairs correlation volume, its stride-2 pooled companion, and the
//! windowed lookup around projected coordinates.
//!
//! The volume is stored as `[H*W, H, W]`: plane `p` holds the correlation of
//! source cell `p` (row-major) with every target cell.

use crate::error::{Error, Result};
use crate::geometry::CoordGrid;
use crate::tensor::kernels::{avg_pool2, bilinear_taps, sample_plane, Padding};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Default cap on `H*W*H*W`.
pub const DEFAULT_BUDGET: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrConfig {
    pub radius: usize,
    /// Divide dot products by `sqrt(D)` before the ReLU.
    pub scale_by_dim: bool,
    /// Maximum number of full-volume entries.
    pub budget: usize,
}

impl Default for CorrConfig {
    fn default() -> Self {
        CorrConfig {
            radius: 4,
            scale_by_dim: false,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl CorrConfig {
    pub fn channels(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorrelationVolume {
    /// `[H*W, H, W]`
    pub full: Var,
    /// `[H*W, H/2, W/2]`
    pub pooled: Var,
    pub height: usize,
    pub width: usize,
}

fn dhw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [d, h, w] => Ok((d, h, w)),
        ref s => Err(Error::ShapeMismatch(format!("{what}: expected [D,H,W], got {s:?}"))),
    }
}

/// `C[p][q] = relu(<f_s(p), f_t(q)>)` plus its 2x2 average-pooled companion.
pub fn build<T: Real>(tape: &mut Tape<T>, fs: Var, ft: Var, cfg: &CorrConfig) -> Result<CorrelationVolume> {
    let (d, h, w) = dhw(tape.shape(fs), "correlation source")?;
    if tape.shape(ft) != tape.shape(fs) {
        return Err(Error::ShapeMismatch(format!(
            "correlation features {:?} vs {:?}",
            tape.shape(fs),
            tape.shape(ft)
        )));
    }
    let n = h * w;
    let entries = n * n;
    if entries > cfg.budget {
        return Err(Error::MemoryBudgetExceeded {
            entries,
            budget: cfg.budget,
        });
    }
    let a = tape.reshape(fs, &[d, n])?;
    let b = tape.reshape(ft, &[d, n])?;
    let mut dots = tape.matmul(a, b, true, false)?;
    if cfg.scale_by_dim {
        dots = tape.scale(dots, T::from_f64(1.0 / (d as f64).sqrt()));
    }
    let c = tape.relu(dots);
    let full = tape.reshape(c, &[n, h, w])?;
    let pooled = tape.avg_pool2(full)?;
    Ok(CorrelationVolume {
        full,
        pooled,
        height: h,
        width: w,
    })
}

fn centers<T: Real>(coords: &CoordGrid, s: f64) -> Vec<(T, T)> {
    coords
        .u
        .iter()
        .zip(&coords.v)
        .map(|(&u, &v)| (T::from_f64(u * s), T::from_f64(v * s)))
        .collect()
}

/// Windowed lookup: returns the `[(2r+1)^2, H, W]` slices of the full and
/// pooled volumes. The pooled slice is read at `coords / 2`.
pub fn sample<T: Real>(
    tape: &mut Tape<T>,
    vol: &CorrelationVolume,
    coords: &CoordGrid,
    radius: usize,
) -> Result<(Var, Var)> {
    if coords.height != vol.height || coords.width != vol.width {
        return Err(Error::ShapeMismatch(format!(
            "coords {}x{} vs volume {}x{}",
            coords.height, coords.width, vol.height, vol.width
        )));
    }
    let (h, w) = (vol.height, vol.width);
    let s = tape.corr_window(vol.full, centers(coords, 1.0), h, w, radius)?;
    let sp = tape.corr_window(vol.pooled, centers(coords, 0.5), h, w, radius)?;
    Ok((s, sp))
}

/// Same result as [`build`] followed by [`sample`], computed directly from
/// the feature maps without materializing the volume. Inference only.
pub fn sample_on_demand<T: Real>(
    fs: &Tensor<T>,
    ft: &Tensor<T>,
    coords: &CoordGrid,
    cfg: &CorrConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d, h, w) = dhw(fs.shape(), "correlation source")?;
    if ft.shape() != fs.shape() {
        return Err(Error::ShapeMismatch(format!("correlation features {:?} vs {:?}", fs.shape(), ft.shape())));
    }
    if coords.height != h || coords.width != w {
        return Err(Error::ShapeMismatch(format!("coords {}x{} vs features {h}x{w}", coords.height, coords.width)));
    }
    let n = h * w;
    let r = cfg.radius;
    let side = 2 * r + 1;
    let nch = side * side;
    let scale = if cfg.scale_by_dim {
        T::from_f64(1.0 / (d as f64).sqrt())
    } else {
        T::one()
    };
    let fsd = fs.data();
    let ftd = ft.data();
    let (hp, wp) = (h.div_ceil(2), w.div_ceil(2));
    let mut full = vec![T::zero(); nch * n];
    let mut pooled = vec![T::zero(); nch * n];
    let mut row = vec![T::zero(); n];
    for p in 0..n {
        // one plane of the volume: relu(<f_s(p), f_t(q)>) for all q
        for (q, slot) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for c in 0..d {
                acc += fsd[c * n + p] * ftd[c * n + q];
            }
            *slot = (acc * scale).max(T::zero());
        }
        let prow = avg_pool2(&row, 1, h, w);
        let (u, v) = (T::from_f64(coords.u[p]), T::from_f64(coords.v[p]));
        let half = T::from_f64(0.5);
        for dy in 0..side {
            for dx in 0..side {
                let ou = T::from_f64(dx as f64 - r as f64);
                let ov = T::from_f64(dy as f64 - r as f64);
                let ch = dy * side + dx;
                let taps = bilinear_taps(u + ou, v + ov, h, w, Padding::Zeros);
                full[ch * n + p] = sample_plane(&row, &taps);
                let taps = bilinear_taps(u * half + ou, v * half + ov, hp, wp, Padding::Zeros);
                pooled[ch * n + p] = sample_plane(&prow, &taps);
            }
        }
    }
    Ok((Tensor::new(&[nch, h, w], full)?, Tensor::new(&[nch, h, w], pooled)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    fn volume(fs: &Tensor<f64>, ft: &Tensor<f64>) -> (Tape<f64>, CorrelationVolume) {
        let mut t = Tape::inference();
        let a = t.constant(fs.clone());
        let b = t.constant(ft.clone());
        let v = build(&mut t, a, b, &CorrConfig::default()).unwrap();
        (t, v)
    }

    #[test]
    fn matches_quadruple_loop() {
        let (d, h, w) = (8, 4, 4);
        let fs = random(&[d, h, w], 1);
        let ft = random(&[d, h, w], 2);
        let (t, v) = volume(&fs, &ft);
        let c = t.value(v.full);
        for ys in 0..h {
            for xs in 0..w {
                for yt in 0..h {
                    for xt in 0..w {
                        let dot: f64 = (0..d).map(|k| fs.at(&[k, ys, xs]) * ft.at(&[k, yt, xt])).sum();
                        let got = c.at(&[ys * w + xs, yt, xt]);
                        assert!((got - dot.max(0.0)).abs() < 1e-12);
                    }
                }
            }
        }
        assert!(c.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn pooled_is_exact_two_by_two_mean() {
        let fs = random(&[8, 4, 6], 3);
        let ft = random(&[8, 4, 6], 4);
        let (t, v) = volume(&fs, &ft);
        let (c, p) = (t.value(v.full), t.value(v.pooled));
        assert_eq!(p.shape(), &[24, 2, 3]);
        for s in 0..24 {
            for y in 0..2 {
                for x in 0..3 {
                    let sum = c.at(&[s, 2 * y, 2 * x])
                        + c.at(&[s, 2 * y, 2 * x + 1])
                        + c.at(&[s, 2 * y + 1, 2 * x])
                        + c.at(&[s, 2 * y + 1, 2 * x + 1]);
                    assert_eq!(p.at(&[s, y, x]), sum * 0.25);
                }
            }
        }
    }

    #[test]
    fn one_hot_basis_gives_identity() {
        let (h, w) = (2, 3);
        let n = h * w;
        let f = Tensor::<f64>::from_fn(&[n, h, w], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let (t, v) = volume(&f, &f);
        let c = t.value(v.full);
        for p in 0..n {
            for q in 0..n {
                assert_eq!(c.data()[p * n + q], if p == q { 1.0 } else { 0.0 });
            }
        }
        let neg = f.map(|x| -x);
        let (t, v) = volume(&f, &neg);
        assert!(t.value(v.full).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn over_budget_is_refused() {
        let f = random(&[2, 8, 8], 5);
        let mut t = Tape::inference();
        let a = t.constant(f);
        let cfg = CorrConfig {
            budget: 4095,
            ..CorrConfig::default()
        };
        let err = build(&mut t, a, a, &cfg).unwrap_err();
        assert!(matches!(err, Error::MemoryBudgetExceeded { entries: 4096, budget: 4095 }));
    }

    #[test]
    fn identity_window_is_centred_on_diagonal() {
        let f = random(&[8, 6, 6], 6);
        let (mut t, v) = volume(&f, &f);
        let g = CoordGrid::meshgrid(6, 6);
        let (s, sp) = sample(&mut t, &v, &g, 4).unwrap();
        assert_eq!(t.shape(s), &[81, 6, 6]);
        assert_eq!(t.shape(sp), &[81, 6, 6]);
        let c = t.value(v.full).clone();
        let s = t.value(s);
        for p in 0..36 {
            assert_eq!(s.data()[40 * 36 + p], c.data()[p * 36 + p]);
        }
        // integer offsets read exact entries
        let (y, x) = (2, 3);
        let p = y * 6 + x;
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let ch = ((dy + 4) * 9 + dx + 4) as usize;
                let q = ((y as i64 + dy) * 6 + x as i64 + dx) as usize;
                assert_eq!(s.data()[ch * 36 + p], c.data()[p * 36 + q]);
            }
        }
    }

    #[test]
    fn half_pixel_offset_averages_neighbours() {
        let f = random(&[8, 4, 4], 7);
        let g = random(&[8, 4, 4], 8);
        let (mut t, v) = volume(&f, &g);
        let mut coords = CoordGrid::meshgrid(4, 4);
        coords.u.iter_mut().for_each(|u| *u += 0.5);
        let (s, _) = sample(&mut t, &v, &coords, 1).unwrap();
        let c = t.value(v.full).clone();
        let s = t.value(s);
        // centre channel (4) of cell (1, 1) sits between target (1,1) and (1,2)
        let p = 5;
        let expect = 0.5 * (c.at(&[p, 1, 1]) + c.at(&[p, 1, 2]));
        assert!((s.data()[4 * 16 + p] - expect).abs() < 1e-15);
        // right-most cells look half outside and mix with zero padding
        let p = 7;
        assert!((s.data()[4 * 16 + p] - 0.5 * c.at(&[p, 1, 3])).abs() < 1e-15);
    }

    #[test]
    fn self_matching_peak() {
        let (d, h, w) = (16, 8, 8);
        let f = random(&[d, h, w], 9);
        let (t, v) = volume(&f, &f);
        let c = t.value(v.full);
        let n = h * w;
        let hits = (0..n)
            .filter(|&p| {
                let row = &c.data()[p * n..(p + 1) * n];
                let best = (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                best == p
            })
            .count();
        assert!(hits as f64 > 0.95 * n as f64, "{hits}/{n}");
    }

    #[test]
    fn on_demand_matches_eager() {
        let f = random(&[8, 6, 8], 10);
        let g = random(&[8, 6, 8], 11);
        let (mut t, v) = volume(&f, &g);
        let mut rng = SplitMix64::new(12);
        let mut coords = CoordGrid::meshgrid(6, 8);
        coords.u.iter_mut().for_each(|u| *u += rng.uniform(-2.0, 2.0));
        coords.v.iter_mut().for_each(|v| *v += rng.uniform(-2.0, 2.0));
        let (s, sp) = sample(&mut t, &v, &coords, 2).unwrap();
        let (a, b) = sample_on_demand(&f, &g, &coords, &CorrConfig { radius: 2, ..CorrConfig::default() }).unwrap();
        for (x, y) in a.data().iter().zip(t.value(s).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in b.data().iter().zip(t.value(sp).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn volume_is_nonnegative_and_pools_exactly(seed in proptest::prelude::any::<u64>(), h in 1usize..4, w in 1usize..4, c in 1usize..5) {
            let (h, w) = (2 * h, 2 * w);
            let (t, v) = volume(&random(&[c, h, w], seed), &random(&[c, h, w], seed ^ 1));
            let (full, pooled) = (t.value(v.full), t.value(v.pooled));
            proptest::prop_assert!(full.data().iter().chain(pooled.data()).all(|&x| x >= 0.0));
            for s in 0..h * w {
                for y in 0..h / 2 {
                    for x in 0..w / 2 {
                        let sum = full.at(&[s, 2 * y, 2 * x])
                            + full.at(&[s, 2 * y, 2 * x + 1])
                            + full.at(&[s, 2 * y + 1, 2 * x])
                            + full.at(&[s, 2 * y + 1, 2 * x + 1]);
                        proptest::prop_assert_eq!(pooled.at(&[s, y, x]), sum * 0.25);
                    }
                }
            }
        }
    }
}
