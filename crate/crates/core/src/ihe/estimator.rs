use super::gma::Gma;
use super::{IhnConfig, Parameterization};
use crate::correlation::{self, CorrConfig, CorrelationVolume};
use crate::error::{Error, Result};
use crate::features::{normalize_image, FeatureExtractor};
use crate::geometry::{
    average_corner_error, compose, corners_to_homography, homography_flow, homography_to_corners, project_grid,
    rescale_homography, warp_bilinear, CoordGrid, CornerDisplacement, Frame, Homography,
};
use crate::rng::SplitMix64;
use crate::tensor::{Padding, ParamStore, Real, Tape, Tensor, Var};

/// Scale of the linear entries in the direct parameterization.
const DIRECT_LINEAR: f64 = 0.1;

fn direct_scales(frame: Frame) -> [f64; 8] {
    let side = frame.width.max(frame.height) as f64;
    let t = DIRECT_LINEAR * side;
    let p = DIRECT_LINEAR / side;
    let a = DIRECT_LINEAR;
    [a, a, t, a, a, t, p, p]
}

/// Homography encoded by an 8-vector state.
pub(crate) fn state_to_h(param: Parameterization, z: &[f64; 8], frame: Frame) -> Result<Homography> {
    match param {
        // the zero cube is the identity exactly, without DLT round-off
        Parameterization::Displacement if z.iter().all(|&v| v == 0.0) => Ok(Homography::identity()),
        Parameterization::Displacement => corners_to_homography(&CornerDisplacement::from_axis_major(z), frame),
        Parameterization::Direct => {
            let s = direct_scales(frame);
            let e: Vec<f64> = z.iter().zip(&s).map(|(a, b)| a * b).collect();
            Homography::from_rows([
                [1.0 + e[0], e[1], e[2]],
                [e[3], 1.0 + e[4], e[5]],
                [e[6], e[7], 1.0],
            ])
        }
    }
}

pub(crate) fn h_to_state(param: Parameterization, h: &Homography, frame: Frame) -> Result<[f64; 8]> {
    match param {
        Parameterization::Displacement => Ok(homography_to_corners(h, frame)?.to_axis_major()),
        Parameterization::Direct => {
            let r = h.rows();
            let s = direct_scales(frame);
            let e = [r[0][0] - 1.0, r[0][1], r[0][2], r[1][0], r[1][1] - 1.0, r[1][2], r[2][0], r[2][1]];
            let mut z = [0.0; 8];
            for i in 0..8 {
                z[i] = e[i] / s[i];
            }
            Ok(z)
        }
    }
}

/// One iteration of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1 for the quarter-resolution pass, 2 for the half-resolution pass.
    pub scale: usize,
    /// Aggregator state after the update (axis-major cube).
    pub state: [f64; 8],
    /// The update added at this iteration.
    pub delta: [f64; 8],
    /// Displacement of this scale's own estimate after the update.
    pub d: CornerDisplacement,
    /// Overall source-to-target estimate after the update.
    pub h: Homography,
    pub mask: Option<Tensor<f32>>,
    /// Corner error of `h` against the ground truth, when supplied.
    pub ace: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Per-scale state-space supervision targets, when ground truth was given.
    pub targets: Vec<(usize, [f64; 8])>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_h(&self) -> Option<&Homography> {
        self.records.last().map(|r| &r.h)
    }

    pub fn aces(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.ace).collect()
    }
}

/// One scale of the estimator.
#[derive(Debug, Clone, Copy)]
pub struct Stage<'a> {
    pub gma: &'a Gma,
    /// Frame in which displacements are measured (the input image).
    pub frame: Frame,
    /// Image pixels per feature cell.
    pub stride: f64,
    pub iters: usize,
    pub scale: usize,
}

#[derive(Debug)]
pub struct StageRun {
    pub records: Vec<IterationRecord>,
    /// Weighted sequence loss (only when a target was given on a recording tape).
    pub loss: Option<Var>,
    /// This stage's final estimate, before composition with `prior`.
    pub h: Homography,
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn cube<T: Real>(z: &[f64; 8]) -> Tensor<T> {
    Tensor::from_fn(&[2, 2, 2], |i| T::from_f64(z[i]))
}

fn l1_term<T: Real>(tape: &mut Tape<T>, state: Var, target: &[f64; 8], weight: f64) -> Result<Var> {
    let t = tape.constant(cube(target));
    let diff = tape.sub(state, t)?;
    let pos = tape.relu(diff);
    let neg = tape.scale(diff, T::from_f64(-1.0));
    let neg = tape.relu(neg);
    let abs = tape.add(pos, neg)?;
    let m = tape.mean(abs);
    Ok(tape.scale(m, T::from_f64(weight)))
}

/// Runs `stage.iters` refinement iterations from the identity.
///
/// On a tape without gradients the per-iteration nodes are discarded as
/// soon as their values are read, so long runs use constant memory.
#[allow(clippy::too_many_arguments)]
pub fn ihe_run<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &IhnConfig,
    stage: &Stage,
    vol: &CorrelationVolume,
    prior: &Homography,
    target: Option<&[f64; 8]>,
    gt: Option<&CornerDisplacement>,
) -> Result<StageRun> {
    let grid = CoordGrid::meshgrid(vol.height, vol.width);
    let keep = tape.grad_enabled();
    let base = tape.len();
    let mut z = [0.0; 8];
    let mut z_var: Option<Var> = None;
    let mut loss: Option<Var> = None;
    let mut records = Vec::with_capacity(stage.iters);
    let mut h_local = Homography::identity();
    for k in 0..stage.iters {
        let step = |tape: &mut Tape<T>| -> Result<(Var, Var, Option<Var>)> {
            let hk = state_to_h(cfg.param, &z, stage.frame)?;
            let hf = rescale_homography(&hk, 1.0 / stage.stride);
            let xp = project_grid(&hf, &grid)?;
            let (s, sp) = correlation::sample(tape, vol, &xp, cfg.radius)?;
            let mut parts = vec![s];
            if cfg.pooled {
                parts.push(sp);
            }
            if cfg.flow {
                let f = homography_flow::<T>(&xp, &grid)?;
                let px = T::from_f64(stage.stride);
                parts.push(tape.constant(f.map(|v| v * px)));
            }
            let x = tape.concat(&parts)?;
            let out = stage.gma.forward(tape, store, x)?;
            let prev = match z_var {
                Some(v) if !cfg.detach => v,
                _ => tape.constant(cube(&z)),
            };
            let next = tape.add(prev, out.delta)?;
            Ok((next, out.delta, out.mask))
        };
        let (next, delta_var, mask_var) = step(tape).map_err(|e| e.at_iteration(k))?;
        let delta_vals: [f64; 8] = to_f64(tape.value(delta_var)).try_into().expect("cube has 8 entries");
        let new_z: [f64; 8] = to_f64(tape.value(next)).try_into().expect("cube has 8 entries");
        if new_z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: k });
        }
        h_local = state_to_h(cfg.param, &new_z, stage.frame).map_err(|e| e.at_iteration(k))?;
        let h = compose(prior, &h_local).map_err(|e| e.at_iteration(k))?;
        let d = match cfg.param {
            Parameterization::Displacement => CornerDisplacement::from_axis_major(&new_z),
            Parameterization::Direct => homography_to_corners(&h_local, stage.frame).map_err(|e| e.at_iteration(k))?,
        };
        let ace = match gt {
            Some(g) => Some(average_corner_error(
                &homography_to_corners(&h, stage.frame).map_err(|e| e.at_iteration(k))?,
                g,
            )),
            None => None,
        };
        let mask = mask_var.map(|m| tape.value(m).cast::<f32>());
        records.push(IterationRecord {
            scale: stage.scale,
            state: new_z,
            delta: delta_vals,
            d,
            h,
            mask,
            ace,
        });
        if keep {
            if let Some(t) = target {
                let w = cfg.alpha.powi((stage.iters - k - 1) as i32);
                let term = l1_term(tape, next, t, w)?;
                loss = Some(match loss {
                    Some(l) => tape.add(l, term)?,
                    None => term,
                });
            }
            z_var = Some(next);
        } else {
            tape.truncate(base);
        }
        z = new_z;
    }
    Ok(StageRun {
        records,
        loss,
        h: h_local,
    })
}

/// Result of [`Ihn::forward`].
#[derive(Debug)]
pub struct Forward {
    pub h: Homography,
    pub trace: IterationTrace,
    pub loss: Option<Var>,
}

/// Feature extractor plus one aggregator per scale, with their parameters.
#[derive(Debug, Clone)]
pub struct Ihn<T: Real = f32> {
    pub cfg: IhnConfig,
    pub store: ParamStore<T>,
    pub features: FeatureExtractor,
    pub gma: Vec<Gma>,
}

impl<T: Real> Ihn<T> {
    /// A freshly initialized model.
    pub fn new(mut cfg: IhnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cfg.features.half = cfg.scales == 2;
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::new();
        let features = FeatureExtractor::new(cfg.features.clone(), 1, &mut store, "features", &mut rng)?;
        let cin = cfg.gma_channels();
        let out_scale = |stride: f64| match cfg.param {
            Parameterization::Displacement => stride,
            Parameterization::Direct => 1.0,
        };
        let stride = cfg.features.stride();
        let mut gma = vec![Gma::new(
            &mut store,
            "gma1",
            cin,
            cfg.image_size / stride,
            cfg.gma_width,
            cfg.gma_groups,
            cfg.mov,
            out_scale(stride as f64),
            &mut rng,
        )?];
        if cfg.scales == 2 {
            gma.push(Gma::new(
                &mut store,
                "gma2",
                cin,
                cfg.image_size / 2,
                cfg.gma_width_s2,
                cfg.gma_groups,
                cfg.mov,
                out_scale(2.0),
                &mut rng,
            )?);
        }
        Ok(Ihn {
            cfg,
            store,
            features,
            gma,
        })
    }

    pub fn frame(&self) -> Frame {
        Frame::square(self.cfg.image_size)
    }

    fn corr(&self) -> CorrConfig {
        CorrConfig {
            radius: self.cfg.radius,
            ..CorrConfig::default()
        }
    }

    fn check_image(&self, img: &Tensor<T>) -> Result<()> {
        let n = self.cfg.image_size;
        if img.shape() != [1, n, n] {
            return Err(Error::ShapeMismatch(format!("model expects [1, {n}, {n}] images, got {:?}", img.shape())));
        }
        Ok(())
    }

    /// Full estimate for one pair with `iters` iterations per scale. With
    /// `gt` on a recording tape the sequence loss is built as well.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        i_s: &Tensor<T>,
        i_t: &Tensor<T>,
        gt: Option<&CornerDisplacement>,
        iters: usize,
    ) -> Result<Forward> {
        self.check_image(i_s)?;
        self.check_image(i_t)?;
        let cfg = &self.cfg;
        let frame = self.frame();
        let fs = self.features.extract(tape, &self.store, i_s)?;
        let ft = self.features.extract(tape, &self.store, i_t)?;
        let vol = correlation::build(tape, fs.coarse, ft.coarse, &self.corr())?;
        let h_gt = gt.map(|g| corners_to_homography(g, frame)).transpose()?;
        let target1 = h_gt.as_ref().map(|h| h_to_state(cfg.param, h, frame)).transpose()?;
        let stage1 = Stage {
            gma: &self.gma[0],
            frame,
            stride: cfg.features.stride() as f64,
            iters,
            scale: 1,
        };
        let identity = Homography::identity();
        let run1 = ihe_run(tape, &self.store, cfg, &stage1, &vol, &identity, target1.as_ref(), gt)?;
        let mut trace = IterationTrace::default();
        if let Some(t) = target1 {
            trace.targets.push((1, t));
        }
        trace.records.extend(run1.records);
        let mut loss = run1.loss;
        let mut h = run1.h;
        if cfg.scales == 2 {
            let h1 = h;
            let warped = warp_bilinear(i_t, &h1, Padding::Zeros)?;
            let w = tape.constant(normalize_image(&warped));
            let ft2 = self.features.forward_half(tape, &self.store, w)?;
            let fs2 = fs.half.ok_or_else(|| Error::Config("half-resolution features missing".into()))?;
            let vol2 = correlation::build(tape, fs2, ft2, &self.corr())?;
            let target2 = match &h_gt {
                Some(hg) => Some(h_to_state(cfg.param, &compose(&h1.inverse()?, hg)?, frame)?),
                None => None,
            };
            let stage2 = Stage {
                gma: &self.gma[1],
                frame,
                stride: 2.0,
                iters,
                scale: 2,
            };
            let run2 = ihe_run(tape, &self.store, cfg, &stage2, &vol2, &h1, target2.as_ref(), gt)?;
            if let Some(t) = target2 {
                trace.targets.push((2, t));
            }
            trace.records.extend(run2.records);
            loss = match (loss, run2.loss) {
                (Some(a), Some(b)) => Some(tape.add(a, b)?),
                (a, b) => a.or(b),
            };
            h = compose(&h1, &run2.h)?;
        }
        Ok(Forward { h, trace, loss })
    }

    /// Inference with the configured iteration count.
    pub fn estimate(&self, i_s: &Tensor<T>, i_t: &Tensor<T>, gt: Option<&CornerDisplacement>) -> Result<(Homography, IterationTrace)> {
        self.estimate_with(i_s, i_t, gt, self.cfg.iters)
    }

    /// Inference with an explicit iteration count per scale.
    pub fn estimate_with(
        &self,
        i_s: &Tensor<T>,
        i_t: &Tensor<T>,
        gt: Option<&CornerDisplacement>,
        iters: usize,
    ) -> Result<(Homography, IterationTrace)> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, i_s, i_t, gt, iters)?;
        Ok((out.h, out.trace))
    }
}
