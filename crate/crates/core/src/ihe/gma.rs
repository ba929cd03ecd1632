//! Global motion aggregators: the plain convolutional reducer and the
//! mask-predicting variant for scenes with independently moving objects.

use crate::error::{Error, Result};
use crate::nn::{Conv, ConvBlock};
use crate::rng::SplitMix64;
use crate::tensor::{ParamStore, Real, Tape, Var};

/// Basic units needed to halve `side` down to 2.
pub fn unit_count(side: usize) -> Result<usize> {
    if side < 2 || !side.is_power_of_two() {
        return Err(Error::NonPow2Spatial(side, side));
    }
    Ok(side.trailing_zeros() as usize - 1)
}

/// A chain of basic units: conv3x3 -> group norm -> relu -> max-pool.
#[derive(Debug, Clone)]
pub struct UnitStack {
    pub units: Vec<ConvBlock>,
}

impl UnitStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        width: usize,
        depth: usize,
        groups: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let units = (0..depth)
            .map(|i| {
                let c = if i == 0 { cin } else { width };
                ConvBlock::new(store, &format!("{name}.unit{i}"), c, width, 3, Some(groups), rng)
            })
            .collect();
        UnitStack { units }
    }

    /// Returns the input followed by every unit's pooled output.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Vec<Var>> {
        let mut acts = vec![x];
        let mut y = x;
        for u in &self.units {
            y = u.forward(tape, store, y)?;
            y = tape.max_pool2(y)?;
            acts.push(y);
        }
        Ok(acts)
    }
}

#[derive(Debug, Clone)]
pub enum GmaKind {
    Plain {
        stack: UnitStack,
    },
    Mov {
        /// Local motion encoder producing `L`.
        local: ConvBlock,
        /// Shared between the mask encoder and the final reduction.
        stack: UnitStack,
        /// One block per level, coarse to fine.
        decoder: Vec<ConvBlock>,
        mask_head: Conv,
    },
}

/// Output of one aggregator call.
#[derive(Debug, Clone, Copy)]
pub struct GmaOut {
    /// `[2, 2, 2]` residual cube (axis, row, col).
    pub delta: Var,
    /// `[1, H, W]` inlier mask (moving variant only).
    pub mask: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Gma {
    pub kind: GmaKind,
    pub head: Conv,
    pub cin: usize,
    pub side: usize,
    /// Multiplies the head output.
    pub out_scale: f64,
}

impl Gma {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        side: usize,
        width: usize,
        groups: usize,
        mov: bool,
        out_scale: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let depth = unit_count(side)?;
        let kind = if mov {
            let local = ConvBlock::new(store, &format!("{name}.local"), cin, width, 3, Some(groups), rng);
            let stack = UnitStack::new(store, &format!("{name}.stack"), width, width, depth, groups, rng);
            let decoder = (0..depth)
                .map(|i| ConvBlock::new(store, &format!("{name}.dec{i}"), 2 * width, width, 3, Some(groups), rng))
                .collect();
            let mask_head = Conv::new(store, &format!("{name}.mask"), width, 1, 1, rng);
            GmaKind::Mov {
                local,
                stack,
                decoder,
                mask_head,
            }
        } else {
            GmaKind::Plain {
                stack: UnitStack::new(store, &format!("{name}.stack"), cin, width, depth, groups, rng),
            }
        };
        let head = Conv::new(store, &format!("{name}.head"), width, 2, 1, rng);
        // start close to a zero update
        let w = store.get(head.w).data().iter().map(|&v| v * T::from_f64(0.1)).collect();
        store.set_data(head.w, w);
        Ok(Gma {
            kind,
            head,
            cin,
            side,
            out_scale,
        })
    }

    fn reduce<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, stack: &UnitStack, x: Var) -> Result<Var> {
        let g = *stack.forward(tape, store, x)?.last().expect("stack output");
        let d = self.head.forward(tape, store, g)?;
        Ok(if self.out_scale == 1.0 {
            d
        } else {
            tape.scale(d, T::from_f64(self.out_scale))
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<GmaOut> {
        match *tape.shape(x) {
            [c, h, w] if c == self.cin && h == self.side && w == self.side => {}
            [_, h, w] if h != w || !h.is_power_of_two() || h < 2 => return Err(Error::NonPow2Spatial(h, w)),
            ref s => {
                return Err(Error::ShapeMismatch(format!(
                    "aggregator expects [{}, {}, {}], got {s:?}",
                    self.cin, self.side, self.side
                )))
            }
        }
        match &self.kind {
            GmaKind::Plain { stack } => Ok(GmaOut {
                delta: self.reduce(tape, store, stack, x)?,
                mask: None,
            }),
            GmaKind::Mov {
                local,
                stack,
                decoder,
                mask_head,
            } => {
                let l = local.forward(tape, store, x)?;
                let acts = stack.forward(tape, store, l)?;
                let mut y = *acts.last().expect("stack output");
                for (lvl, block) in decoder.iter().enumerate() {
                    let skip = acts[acts.len() - 2 - lvl];
                    y = tape.upsample2(y)?;
                    y = tape.concat(&[y, skip])?;
                    y = block.forward(tape, store, y)?;
                }
                let logits = mask_head.forward(tape, store, y)?;
                let mask = tape.sigmoid(logits);
                let masked = tape.mul_channels(l, mask)?;
                Ok(GmaOut {
                    delta: self.reduce(tape, store, stack, masked)?,
                    mask: Some(mask),
                })
            }
        }
    }
}
