//! Procedural base images.

use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise on a `side x side` grid, contrast-stretched to
/// `[0, 1]`. Octave `k` has lattice spacing `cell / 2^k` and weight `2^-k`.
pub fn value_noise(side: usize, cell: f64, octaves: usize, rng: &mut SplitMix64) -> Tensor<f64> {
    assert!(cell > 0.0 && octaves >= 1);
    let mut acc = vec![0.0; side * side];
    for k in 0..octaves {
        let step = (cell / (1 << k) as f64).max(1.0);
        let amp = 0.5f64.powi(k as i32);
        let n = (side as f64 / step).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..n * n).map(|_| rng.next_f64()).collect();
        for y in 0..side {
            let fy = y as f64 / step;
            let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
            for x in 0..side {
                let fx = x as f64 / step;
                let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                let l = |r: usize, c: usize| lattice[r * n + c];
                let top = l(iy, ix) * (1.0 - tx) + l(iy, ix + 1) * tx;
                let bot = l(iy + 1, ix) * (1.0 - tx) + l(iy + 1, ix + 1) * tx;
                acc[y * side + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    acc.iter_mut().for_each(|v| *v = (*v - lo) / span);
    Tensor::new(&[1, side, side], acc).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_determinism() {
        let a = value_noise(40, 8.0, 3, &mut SplitMix64::new(1));
        let b = value_noise(40, 8.0, 3, &mut SplitMix64::new(1));
        assert_eq!(a, b);
        let lo = a.data().iter().copied().fold(1.0, f64::min);
        let hi = a.data().iter().copied().fold(0.0, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn larger_cells_are_smoother() {
        let tv = |t: &Tensor<f64>| {
            let d = t.data();
            (1..d.len()).map(|i| (d[i] - d[i - 1]).abs()).sum::<f64>()
        };
        let rough = value_noise(64, 2.0, 1, &mut SplitMix64::new(2));
        let smooth = value_noise(64, 16.0, 1, &mut SplitMix64::new(2));
        assert!(tv(&smooth) < 0.5 * tv(&rough));
    }
}
