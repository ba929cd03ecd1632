//! Running estimators over a set of pairs.

use std::time::Instant;

use ihn_core::datagen::WarpPair;
use ihn_core::geometry::{average_corner_error, homography_to_corners};
use ihn_core::iclk::{self, IclkConfig};
use ihn_core::ihe::Ihn;
use ihn_core::report::{BenchReport, PairResult};
use ihn_core::{CornerDisplacement, Frame, Homography, Result};
use rayon::prelude::*;

pub enum Method<'a> {
    /// Returns the ground truth.
    Oracle,
    /// Always predicts the identity.
    Identity,
    Iclk(IclkConfig),
    Ihn { model: &'a Ihn<f32>, iters: usize },
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Identity => "identity",
            Method::Iclk(_) => "iclk",
            Method::Ihn { .. } => "ihn",
        }
    }

    /// Estimated corner displacement plus per-iteration `(scale, ace)`.
    pub fn run(&self, p: &WarpPair) -> Result<(CornerDisplacement, Vec<(usize, f64)>)> {
        let frame = Frame::new(p.i_s.shape()[1], p.i_s.shape()[2]);
        match self {
            Method::Oracle => Ok((p.d_gt, Vec::new())),
            Method::Identity => Ok((CornerDisplacement::zeros(), Vec::new())),
            Method::Iclk(cfg) => {
                let (s, t) = (p.i_s.cast::<f64>(), p.i_t.cast::<f64>());
                let r = iclk::estimate(&s, &t, &Homography::identity(), cfg, Some(&p.d_gt))?;
                let trace = r.trace.iter().map(|&e| (1, e)).collect();
                Ok((homography_to_corners(&r.h, frame)?, trace))
            }
            Method::Ihn { model, iters } => {
                let (h, trace) = model.estimate_with(&p.i_s, &p.i_t, Some(&p.d_gt), *iters)?;
                let d = match trace.records.last() {
                    // a single displacement-parameterized scale reports its cube as is
                    Some(r) if model.cfg.scales == 1 && model.cfg.param == ihn_core::ihe::Parameterization::Displacement => r.d,
                    _ => homography_to_corners(&h, frame)?,
                };
                let tr = trace.records.iter().map(|r| (r.scale, r.ace.unwrap_or(f64::NAN))).collect();
                Ok((d, tr))
            }
        }
    }
}

/// Evaluates every pair on `jobs` worker threads; failed estimates score an
/// infinite error. Rows come back in pair-index order.
pub fn evaluate(method: &Method, pairs: &[WarpPair], jobs: usize, fingerprint: &str) -> Result<BenchReport> {
    let one = |p: &WarpPair| {
        let t0 = Instant::now();
        let (ace, trace) = match method.run(p) {
            Ok((d, trace)) => (average_corner_error(&d, &p.d_gt), trace),
            Err(_) => (f64::INFINITY, Vec::new()),
        };
        PairResult {
            index: p.index,
            ace,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            trace,
        }
    };
    let rows: Vec<PairResult> = if jobs <= 1 {
        pairs.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ihn_core::Error::Config(e.to_string()))?;
        pool.install(|| pairs.par_iter().map(one).collect())
    };
    Ok(BenchReport::new(method.name(), fingerprint, rows))
}
