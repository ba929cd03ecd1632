//! The iterative homography estimator.
//!
//! Each iteration projects the source feature grid through the current
//! homography, samples correlation windows around the projected points,
//! reduces them (with the homography flow) to a residual corner update and
//! adds it to the running displacement cube.

mod estimator;
pub mod gma;
pub mod loss;
pub mod runconfig;
pub mod train;

pub use estimator::{ihe_run, Ihn, IterationRecord, IterationTrace, Stage, StageRun};
pub use gma::{Gma, GmaOut};
pub use loss::{sequence_loss, trace_loss};
pub use runconfig::RunConfig;
pub use train::{train, ArchiveSource, LossRecord, PairSource, SyntheticSource, TrainConfig};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;

/// What the aggregator's 8 outputs mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parameterization {
    /// Corner displacement cube.
    #[default]
    Displacement,
    /// Scaled increments of the 8 free homography entries.
    Direct,
}

impl Parameterization {
    pub fn as_str(self) -> &'static str {
        match self {
            Parameterization::Displacement => "displacement",
            Parameterization::Direct => "direct",
        }
    }
}

impl std::str::FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "displacement" => Ok(Parameterization::Displacement),
            "direct" => Ok(Parameterization::Direct),
            o => Err(Error::Config(format!("unknown parameterization {o:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhnConfig {
    /// Side of the (square) input images.
    pub image_size: usize,
    /// Iterations per scale (K).
    pub iters: usize,
    /// Correlation search radius (r).
    pub radius: usize,
    /// Aggregator width at scale 1 (N).
    pub gma_width: usize,
    /// Aggregator width at scale 2.
    pub gma_width_s2: usize,
    pub gma_groups: usize,
    pub scales: usize,
    pub mov: bool,
    /// Per-iteration loss decay.
    pub alpha: f64,
    /// Treat the incoming displacement as a constant at every iteration.
    pub detach: bool,
    /// Feed the pooled correlation slice to the aggregator.
    pub pooled: bool,
    /// Feed the homography flow to the aggregator.
    pub flow: bool,
    pub param: Parameterization,
    pub features: FeatureConfig,
}

impl Default for IhnConfig {
    fn default() -> Self {
        IhnConfig {
            image_size: 128,
            iters: 6,
            radius: 4,
            gma_width: 128,
            gma_width_s2: 80,
            gma_groups: 8,
            scales: 1,
            mov: false,
            alpha: 0.85,
            detach: true,
            pooled: true,
            flow: true,
            param: Parameterization::Displacement,
            features: FeatureConfig::default(),
        }
    }
}

impl IhnConfig {
    /// A scaled-down configuration for quick experiments on small images.
    pub fn small(image_size: usize) -> Self {
        IhnConfig {
            image_size,
            gma_width: 32,
            gma_width_s2: 24,
            features: FeatureConfig {
                dim: 32,
                widths: vec![16, 24, 32],
                ..FeatureConfig::default()
            },
            ..IhnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iters == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.radius == 0 {
            return bad("search radius must be at least 1".into());
        }
        if !(1..=2).contains(&self.scales) {
            return bad(format!("scales must be 1 or 2, got {}", self.scales));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} not in (0, 1]", self.alpha));
        }
        if self.gma_width == 0 || self.gma_width_s2 == 0 || self.gma_groups == 0 {
            return bad("aggregator widths and groups must be positive".into());
        }
        if self.features.q != 2 {
            return bad("the estimator expects 1/4-resolution features (q = 2)".into());
        }
        self.features.validate()?;
        let s = self.features.stride();
        if !self.image_size.is_multiple_of(s) {
            return bad(format!("image size {} is not a multiple of {s}", self.image_size));
        }
        gma::unit_count(self.image_size / s)?;
        Ok(())
    }

    /// Aggregator input channels.
    pub fn gma_channels(&self) -> usize {
        let side = 2 * self.radius + 1;
        let corr = side * side;
        corr * if self.pooled { 2 } else { 1 } + if self.flow { 2 } else { 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = IhnConfig::default();
        assert_eq!((c.iters, c.radius, c.gma_width, c.gma_width_s2), (6, 4, 128, 80));
        assert_eq!(c.alpha, 0.85);
        assert!(c.detach);
        assert_eq!(c.gma_channels(), 81 * 2 + 2);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let ok = IhnConfig::small(32);
        ok.validate().unwrap();
        for c in [
            IhnConfig { iters: 0, ..ok.clone() },
            IhnConfig { radius: 0, ..ok.clone() },
            IhnConfig { scales: 3, ..ok.clone() },
            IhnConfig { image_size: 30, ..ok.clone() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        let c = IhnConfig { image_size: 48, ..ok };
        assert!(matches!(c.validate(), Err(Error::NonPow2Spatial(12, 12))));
    }
}
