//! Siamese convolutional feature extractor.
//!
//! stem conv (k x k) -> `q` units of [max-pool, 2 residual blocks] -> 1x1
//! linear head. The optional half-resolution branch taps the output of the
//! first unit and has its own 1x1 head.

use crate::error::{Error, Result};
use crate::nn::{Conv, ConvBlock, ResBlock};
use crate::rng::SplitMix64;
use crate::tensor::{ParamStore, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Number of pooling units; output resolution is `1 / 2^q`.
    pub q: usize,
    /// Output channel count.
    pub dim: usize,
    pub stem_kernel: usize,
    /// Stem width followed by one width per unit (`q + 1` entries).
    pub widths: Vec<usize>,
    /// Group-norm group cap; `None` disables normalization.
    pub groups: Option<usize>,
    /// Also produce the `1/2` resolution map.
    pub half: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            q: 2,
            dim: 64,
            stem_kernel: 7,
            widths: vec![32, 48, 64],
            groups: Some(8),
            half: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.q == 0 || self.dim == 0 {
            return bad(format!("features: q={} dim={}", self.q, self.dim));
        }
        if self.widths.len() != self.q + 1 || self.widths.contains(&0) {
            return bad(format!("features: need {} positive widths, got {:?}", self.q + 1, self.widths));
        }
        if self.stem_kernel.is_multiple_of(2) {
            return bad(format!("features: stem kernel {} is even", self.stem_kernel));
        }
        if self.half && self.q < 2 {
            return bad("features: the half-resolution branch needs q >= 2".into());
        }
        Ok(())
    }

    /// Spatial reduction factor of the main output.
    pub fn stride(&self) -> usize {
        1 << self.q
    }
}

/// Feature maps of one image.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    /// `[dim, H/2^q, W/2^q]`
    pub coarse: Var,
    /// `[dim, H/2, W/2]` when the half branch is enabled.
    pub half: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub cfg: FeatureConfig,
    stem: ConvBlock,
    units: Vec<[ResBlock; 2]>,
    head: Conv,
    half_head: Option<Conv>,
}

/// Maps `[0, 1]` intensities to `[-1, 1]`.
pub fn normalize_image<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let two = T::from_f64(2.0);
    img.map(|v| v * two - T::one())
}

impl FeatureExtractor {
    pub fn new<T: Real>(
        cfg: FeatureConfig,
        in_channels: usize,
        store: &mut ParamStore<T>,
        name: &str,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.groups;
        let w = &cfg.widths;
        let stem = ConvBlock::new(store, &format!("{name}.stem"), in_channels, w[0], cfg.stem_kernel, g, rng);
        let units = (0..cfg.q)
            .map(|i| {
                let n = format!("{name}.unit{i}");
                [
                    ResBlock::new(store, &format!("{n}.res0"), w[i], w[i + 1], g, rng),
                    ResBlock::new(store, &format!("{n}.res1"), w[i + 1], w[i + 1], g, rng),
                ]
            })
            .collect();
        let head = Conv::new(store, &format!("{name}.head"), w[cfg.q], cfg.dim, 1, rng);
        let half_head = cfg
            .half
            .then(|| Conv::new(store, &format!("{name}.head_half"), w[1], cfg.dim, 1, rng));
        Ok(FeatureExtractor {
            cfg,
            stem,
            units,
            head,
            half_head,
        })
    }

    fn unit<T: Real>(&self, i: usize, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = tape.max_pool2(x)?;
        let y = self.units[i][0].forward(tape, store, y)?;
        self.units[i][1].forward(tape, store, y)
    }

    /// Runs the extractor on an image already mapped to `[-1, 1]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, img: Var) -> Result<FeaturePyramid> {
        let s = self.cfg.stride();
        match *tape.shape(img) {
            [_, h, w] if h % s == 0 && w % s == 0 && h > 0 && w > 0 => {}
            ref sh => {
                return Err(Error::ShapeMismatch(format!(
                    "feature input {sh:?} must be [C,H,W] with H, W multiples of {s}"
                )))
            }
        }
        let mut x = self.stem.forward(tape, store, img)?;
        let mut half = None;
        for i in 0..self.cfg.q {
            x = self.unit(i, tape, store, x)?;
            if i == 0 {
                if let Some(hh) = &self.half_head {
                    half = Some(hh.forward(tape, store, x)?);
                }
            }
        }
        let coarse = self.head.forward(tape, store, x)?;
        Ok(FeaturePyramid { coarse, half })
    }

    /// Half-resolution features only: stem, first unit and the half head.
    pub fn forward_half<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, img: Var) -> Result<Var> {
        let hh = self
            .half_head
            .as_ref()
            .ok_or_else(|| Error::Config("extractor has no half-resolution branch".into()))?;
        let x = self.stem.forward(tape, store, img)?;
        let x = self.unit(0, tape, store, x)?;
        hh.forward(tape, store, x)
    }

    /// Convenience wrapper: normalizes `img` and records it as a constant.
    pub fn extract<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, img: &Tensor<T>) -> Result<FeaturePyramid> {
        let x = tape.constant(normalize_image(img));
        self.forward(tape, store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(groups: Option<usize>) -> FeatureConfig {
        FeatureConfig {
            q: 2,
            dim: 8,
            stem_kernel: 7,
            widths: vec![4, 6, 8],
            groups,
            half: true,
        }
    }

    fn noise(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(&[1, h, w], |_| rng.next_f64())
    }

    #[test]
    fn output_shapes() {
        let mut store = ParamStore::<f64>::new();
        let fe = FeatureExtractor::new(small(Some(2)), 1, &mut store, "f", &mut SplitMix64::new(1)).unwrap();
        let mut t = Tape::inference();
        let p = fe.extract(&mut t, &store, &noise(64, 64, 2)).unwrap();
        assert_eq!(t.shape(p.coarse), &[8, 16, 16]);
        assert_eq!(t.shape(p.half.unwrap()), &[8, 32, 32]);
        let p = fe.extract(&mut t, &store, &noise(128, 128, 2)).unwrap();
        assert_eq!(t.shape(p.coarse), &[8, 32, 32]);
        let err = fe.extract(&mut t, &store, &noise(30, 32, 2)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn siamese_and_finite() {
        let mut store = ParamStore::<f32>::new();
        let fe = FeatureExtractor::new(small(Some(2)), 1, &mut store, "f", &mut SplitMix64::new(3)).unwrap();
        let img = noise(32, 32, 9).cast::<f32>();
        let mut t = Tape::inference();
        let a = fe.extract(&mut t, &store, &img).unwrap();
        let b = fe.extract(&mut t, &store, &img).unwrap();
        assert_eq!(t.value(a.coarse), t.value(b.coarse));
        assert_eq!(t.value(a.half.unwrap()), t.value(b.half.unwrap()));
        assert!(t.value(a.coarse).is_finite());
    }

    #[test]
    fn half_only_matches_full_pass() {
        let mut store = ParamStore::<f64>::new();
        let fe = FeatureExtractor::new(small(Some(2)), 1, &mut store, "f", &mut SplitMix64::new(4)).unwrap();
        let mut t = Tape::inference();
        let img = t.constant(normalize_image(&noise(32, 32, 5)));
        let p = fe.forward(&mut t, &store, img).unwrap();
        let h = fe.forward_half(&mut t, &store, img).unwrap();
        assert_eq!(t.value(h), t.value(p.half.unwrap()));
    }

    /// Input rows/cols that can influence coarse output cell `c`, propagated
    /// backwards through the layer stack.
    fn receptive_interval(cfg: &FeatureConfig, c: i64) -> (i64, i64) {
        let (mut lo, mut hi) = (c, c);
        for _ in 0..cfg.q {
            // two residual blocks of two 3x3 convs
            lo -= 4;
            hi += 4;
            // 2x2 pool
            lo *= 2;
            hi = 2 * hi + 1;
        }
        let r = (cfg.stem_kernel / 2) as i64;
        (lo - r, hi + r)
    }

    #[test]
    fn pixels_outside_receptive_field_do_not_matter() {
        let cfg = small(None);
        let mut store = ParamStore::<f64>::new();
        let fe = FeatureExtractor::new(cfg.clone(), 1, &mut store, "f", &mut SplitMix64::new(6)).unwrap();
        let side = 128;
        let base = noise(side, side, 7);
        let mut t = Tape::inference();
        let ref_out = fe.extract(&mut t, &store, &base).unwrap();
        let ref_out = t.value(ref_out.coarse).clone();
        let (lo, hi) = receptive_interval(&cfg, 0);
        assert!(lo < 0 && hi + 1 < side as i64);
        let cells = side / 4;
        // a pixel just past the field of cell (0, 0), on the diagonal
        let p = (hi + 1) as usize;
        let mut img = base.clone();
        img.data_mut()[p * side + p] += 0.5;
        let out = fe.extract(&mut t, &store, &img).unwrap();
        let out = t.value(out.coarse);
        for ch in 0..cfg.dim {
            let i = ch * cells * cells;
            assert_eq!(out.data()[i].to_bits(), ref_out.data()[i].to_bits());
        }
        // and the field is tight: the last pixel inside does change it
        let mut img = base.clone();
        let p = hi as usize;
        img.data_mut()[p * side] += 0.5;
        let out = fe.extract(&mut t, &store, &img).unwrap();
        let out = t.value(out.coarse);
        let moved = (0..cfg.dim).any(|ch| out.data()[ch * cells * cells] != ref_out.data()[ch * cells * cells]);
        assert!(moved);
    }
}
