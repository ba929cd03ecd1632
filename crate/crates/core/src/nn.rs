//! Layer building blocks over [`Tape`] ops.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Stride-1 "same" convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let w = store.conv_weight(format!("{name}.w"), cout, cin, k, rng);
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv { w, b, k }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv2d(x, w, Some(b), 1, self.k / 2)
    }
}

/// Per-channel normalization: group norm, or nothing.
#[derive(Debug, Clone)]
pub enum Norm {
    Group {
        gamma: ParamId,
        beta: ParamId,
        groups: usize,
    },
    Identity,
}

impl Norm {
    pub fn group<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(&[channels]));
        Norm::Group {
            gamma,
            beta,
            groups: largest_divisor_at_most(channels, groups),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Norm::Group {
                gamma,
                beta,
                groups,
            } => {
                let g = tape.param(store, *gamma);
                let b = tape.param(store, *beta);
                tape.group_norm(x, *groups, g, b)
            }
            Norm::Identity => Ok(x),
        }
    }
}

/// Largest divisor of `n` that does not exceed `cap` (at least 1).
pub fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n).max(1)).rev().find(|d| n.is_multiple_of(*d)).unwrap_or(1)
}

/// conv -> norm -> relu
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        groups: Option<usize>,
        rng: &mut SplitMix64,
    ) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), cin, cout, k, rng);
        let norm = match groups {
            Some(g) => Norm::group(store, &format!("{name}.norm"), cout, g),
            None => Norm::Identity,
        };
        ConvBlock { conv, norm }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.norm.forward(tape, store, y)?;
        Ok(tape.relu(y))
    }
}

/// conv3x3 -> norm -> relu -> conv3x3 -> norm, plus skip, then relu. The skip
/// is the identity unless the channel count changes, in which case a 1x1
/// projection is used.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub first: ConvBlock,
    pub conv2: Conv,
    pub norm2: Norm,
    pub skip: Option<Conv>,
}

impl ResBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        groups: Option<usize>,
        rng: &mut SplitMix64,
    ) -> Self {
        let first = ConvBlock::new(store, &format!("{name}.a"), cin, cout, 3, groups, rng);
        let conv2 = Conv::new(store, &format!("{name}.b.conv"), cout, cout, 3, rng);
        let norm2 = match groups {
            Some(g) => Norm::group(store, &format!("{name}.b.norm"), cout, g),
            None => Norm::Identity,
        };
        let skip = (cin != cout).then(|| Conv::new(store, &format!("{name}.skip"), cin, cout, 1, rng));
        ResBlock {
            first,
            conv2,
            norm2,
            skip,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.first.forward(tape, store, x)?;
        let y = self.conv2.forward(tape, store, y)?;
        let y = self.norm2.forward(tape, store, y)?;
        let s = match &self.skip {
            Some(p) => p.forward(tape, store, x)?,
            None => x,
        };
        let sum = tape.add(y, s)?;
        Ok(tape.relu(sum))
    }
}
