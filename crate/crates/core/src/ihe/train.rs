//! Supervised training loop.

use std::io::Write;

use super::Ihn;
use crate::datagen::{SynthSpec, WarpPair};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{clip_grad_norm, AdamW, OneCycle, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip: f64,
    /// Warmup fraction of the schedule.
    pub warmup: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 120_000,
            batch: 16,
            lr: 2.5e-4,
            weight_decay: 1e-5,
            clip: 1.0,
            warmup: 0.05,
            seed: 0,
        }
    }
}

/// Random-access supply of training pairs.
pub trait PairSource {
    fn pair(&self, i: u64) -> Result<WarpPair>;
}

/// Pairs generated on the fly: item `i` is pair `i` of the seeded benchmark.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub spec: SynthSpec,
    pub seed: u64,
}

impl PairSource for SyntheticSource {
    fn pair(&self, i: u64) -> Result<WarpPair> {
        self.spec.generate(self.seed, i)
    }
}

/// Pairs loaded from an archive, visited in a fresh seeded order each epoch.
#[derive(Debug, Clone)]
pub struct ArchiveSource {
    pub pairs: Vec<WarpPair>,
    pub seed: u64,
}

impl PairSource for ArchiveSource {
    fn pair(&self, i: u64) -> Result<WarpPair> {
        let n = self.pairs.len() as u64;
        if n == 0 {
            return Err(Error::Config("empty training archive".into()));
        }
        let mut order: Vec<usize> = (0..n as usize).collect();
        SplitMix64::for_item(self.seed, i / n).shuffle(&mut order);
        Ok(self.pairs[order[(i % n) as usize]].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean sequence loss over the batch.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl LossRecord {
    pub const SCHEMA: &'static str = "schema,ihn-loss/1";
    pub const CSV_HEADER: &'static str = "step,lr,loss,grad_norm";

    pub fn write_csv<W: Write>(records: &[LossRecord], mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::SCHEMA)?;
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in records {
            writeln!(out, "{},{:e},{},{}", r.step, r.lr, r.loss, r.grad_norm)?;
        }
        Ok(())
    }
}

/// Trains `model` in place. Step `s` uses items `s*batch .. (s+1)*batch` of
/// `source`; gradients are averaged over the batch.
pub fn train(
    model: &mut Ihn<f32>,
    source: &dyn PairSource,
    tc: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    if tc.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut opt = AdamW::new(tc.weight_decay);
    let mut sched = OneCycle::new(tc.lr, tc.steps);
    sched.warmup = tc.warmup;
    let iters = model.cfg.iters;
    let mut curve = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        model.store.zero_grad();
        let mut total = 0.0;
        for j in 0..tc.batch {
            let p = source.pair((step * tc.batch + j) as u64)?;
            let mut tape = Tape::new();
            let blown = |tape: &Tape<f32>, e: Error| match e.root() {
                Error::NonFiniteValue { .. } => Error::NonFiniteLoss { step },
                _ if tape.first_non_finite().is_some() => Error::NonFiniteLoss { step },
                _ => e,
            };
            let out = match model.forward(&mut tape, &p.i_s, &p.i_t, Some(&p.d_gt), iters) {
                Ok(out) => out,
                Err(e) => return Err(blown(&tape, e)),
            };
            let loss = out.loss.ok_or(Error::NoGradPath)?;
            let l = tape.value(loss).item() as f64;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            total += l;
            tape.backward_into(loss, &mut model.store).map_err(|e| blown(&tape, e))?;
        }
        model.store.scale_grads(1.0 / tc.batch as f32);
        let grad_norm = if tc.clip > 0.0 {
            clip_grad_norm(&mut model.store, tc.clip)
        } else {
            clip_grad_norm(&mut model.store, f64::INFINITY)
        };
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = sched.lr(step);
        opt.step(&mut model.store, lr);
        let rec = LossRecord {
            step,
            lr,
            loss: total / tc.batch as f64,
            grad_norm,
        };
        on_step(&rec);
        curve.push(rec);
    }
    Ok(curve)
}
