//! Synthetic warped-pair benchmarks.
//!
//! Every pair is a pure function of `(seed, index)`: its RNG stream is
//! [`SplitMix64::for_item`], from which the base texture, the crop, the
//! corner offsets and any variant-specific draws are taken in that order.

pub mod io;
mod synth;
pub mod texture;

pub use io::{archive_checksum, read_archive, read_image, write_archive, write_image, ImageFormat, MANIFEST};
pub use synth::{crossmodal_tone, synth_crossmodal, synth_moving, synth_static, SynthParams, CROSSMODAL_NOISE};

use crate::error::{Error, Result};
use crate::geometry::CornerDisplacement;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Static,
    Moving,
    Crossmodal,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Static => "static",
            Variant::Moving => "moving",
            Variant::Crossmodal => "crossmodal",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Variant::Static),
            "moving" => Ok(Variant::Moving),
            "crossmodal" => Ok(Variant::Crossmodal),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One benchmark item. Images are `[1, size, size]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPair {
    pub i_s: Tensor<f32>,
    pub i_t: Tensor<f32>,
    pub d_gt: CornerDisplacement,
    pub seed: u64,
    pub index: u64,
    pub variant: Variant,
    /// Moving-region mask in the source frame (moving variant only). Used
    /// for evaluation, never for training.
    pub mask: Option<Tensor<f32>>,
}

/// Full recipe for generating a benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub variant: Variant,
    pub params: SynthParams,
    /// Lattice spacing of the coarsest noise octave, in pixels.
    pub cell: f64,
    pub octaves: usize,
    /// Foreground patch area as a fraction of the frame (moving variant).
    pub patch_fraction: f64,
}

impl SynthSpec {
    pub fn new(variant: Variant, size: usize, rho: f64) -> Self {
        SynthSpec {
            variant,
            params: SynthParams { size, rho },
            cell: (size as f64 / 4.0).max(4.0),
            octaves: 4,
            patch_fraction: 0.16,
        }
    }

    /// Pair `index` of the benchmark seeded with `seed`.
    pub fn generate(&self, seed: u64, index: u64) -> Result<WarpPair> {
        let mut rng = SplitMix64::for_item(seed, index);
        let side = self.params.base_side();
        let base = texture::value_noise(side, self.cell, self.octaves, &mut rng);
        let mut pair = match self.variant {
            Variant::Static => synth_static(&base, self.params, &mut rng)?,
            Variant::Crossmodal => synth_crossmodal(&base, self.params, &mut rng)?,
            Variant::Moving => {
                let n = self.params.size;
                // the foreground is a finer texture with boosted contrast
                let fg = texture::value_noise(n, (self.cell / 3.0).max(2.0), 2, &mut rng);
                let fg = fg.map(|v| if v > 0.5 { 0.85 + 0.15 * v } else { 0.15 * v });
                synth_moving(&base, &fg, self.params, self.patch_fraction, &mut rng)?
            }
        };
        pair.seed = seed;
        pair.index = index;
        Ok(pair)
    }

    pub fn generate_many(&self, seed: u64, count: usize) -> Result<Vec<WarpPair>> {
        (0..count as u64).map(|i| self.generate(seed, i)).collect()
    }
}
