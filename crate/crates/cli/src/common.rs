//! Helpers shared by the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ihn_core::datagen::{read_archive, SynthSpec, WarpPair};
use ihn_core::ihe::runconfig::fingerprint;
use ihn_core::ihe::{
    train, ArchiveSource, Ihn, IhnConfig, LossRecord, PairSource, Parameterization, RunConfig, SyntheticSource,
    TrainConfig,
};
use ihn_core::report::BenchReport;
use ihn_core::tensor::{read_checkpoint, write_checkpoint};
use ihn_core::Error;

use crate::args::{DataArgs, ModelArgs, ParamArg, Preset};
use crate::exit::{CliError, CliResult, MISMATCH};

pub const CKPT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "run.cfg";
pub const LOSS_FILE: &str = "loss.csv";

pub fn preset_config(preset: Preset, size: usize) -> IhnConfig {
    match preset {
        Preset::Paper => IhnConfig {
            image_size: size,
            ..IhnConfig::default()
        },
        Preset::Small => IhnConfig::small(size),
    }
}

pub fn model_config(m: &ModelArgs, size: usize) -> IhnConfig {
    let mut c = preset_config(m.preset, size);
    c.scales = m.scales as usize;
    c.mov = m.mov;
    c.iters = m.iters;
    c.radius = m.radius;
    c.alpha = m.alpha;
    if let Some(d) = m.feat_dim {
        c.features.dim = d;
    }
    if let Some(w) = m.gma_width {
        c.gma_width = w;
    }
    c.pooled = !m.no_pooled;
    c.flow = !m.no_flow;
    c.detach = !m.no_detach;
    c.param = match m.param {
        ParamArg::Displacement => Parameterization::Displacement,
        ParamArg::Direct => Parameterization::Direct,
    };
    c
}

pub fn train_config(m: &ModelArgs) -> TrainConfig {
    TrainConfig {
        steps: m.steps,
        batch: m.batch,
        lr: m.lr,
        weight_decay: m.weight_decay,
        clip: m.clip,
        seed: m.seed,
        ..TrainConfig::default()
    }
}

/// A training pair supply together with its image side and a description
/// for the run config.
pub struct Data {
    pub source: Box<dyn PairSource>,
    pub size: usize,
    pub desc: String,
}

pub fn open_data(d: &DataArgs, seed: u64) -> CliResult<Data> {
    if d.data == "synthetic" {
        if d.size == 0 || !d.rho.is_finite() || d.rho < 0.0 {
            return Err(CliError::usage(format!("invalid synthetic size {} / rho {}", d.size, d.rho)));
        }
        let variant: ihn_core::datagen::Variant = d.variant.into();
        let spec = SynthSpec::new(variant, d.size, d.rho);
        return Ok(Data {
            source: Box::new(SyntheticSource {
                spec,
                seed: d.data_seed,
            }),
            size: d.size,
            desc: format!("synthetic:{variant}:{}:{}:{}", d.size, d.rho, d.data_seed),
        });
    }
    let pairs = load_pairs(Path::new(&d.data))?;
    let size = pairs[0].i_s.shape()[1];
    Ok(Data {
        source: Box::new(ArchiveSource { pairs, seed }),
        size,
        desc: d.data.clone(),
    })
}

/// Reads a non-empty archive of square pairs of one size.
pub fn load_pairs(dir: &Path) -> CliResult<Vec<WarpPair>> {
    let pairs = read_archive(dir)?;
    let Some(first) = pairs.first() else {
        return Err(CliError::usage(format!("{}: archive is empty", dir.display())));
    };
    let shape = first.i_s.shape().to_vec();
    if shape[1] != shape[2] || pairs.iter().any(|p| p.i_s.shape() != shape.as_slice()) {
        return Err(CliError::usage(format!("{}: pairs must be square and of one size", dir.display())));
    }
    Ok(pairs)
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Outcome of one training run.
pub struct Trained {
    pub model: Ihn<f32>,
    pub fingerprint: String,
    pub curve: Vec<LossRecord>,
}

/// Initializes, trains and saves a model under `out`.
pub fn train_and_save(
    cfg: IhnConfig,
    tc: &TrainConfig,
    data: &Data,
    out: &Path,
    log_every: usize,
) -> CliResult<Trained> {
    let mut model = Ihn::<f32>::new(cfg, tc.seed)?;
    let fp = fingerprint(&model.cfg, &model.store);
    let curve = train(&mut model, data.source.as_ref(), tc, |r| {
        if log_every > 0 && (r.step + 1) % log_every == 0 {
            eprintln!("step {} lr {:.3e} loss {:.4} grad {:.3}", r.step + 1, r.lr, r.loss, r.grad_norm);
        }
    })?;
    std::fs::create_dir_all(out)?;
    let mut w = create(&out.join(CKPT_FILE))?;
    write_checkpoint(&model.store, &mut w)?;
    w.flush()?;
    let rc = RunConfig {
        model: model.cfg.clone(),
        train: tc.clone(),
        data: data.desc.clone(),
    };
    std::fs::write(out.join(CONFIG_FILE), rc.to_text(&fp))?;
    let mut w = create(&out.join(LOSS_FILE))?;
    LossRecord::write_csv(&curve, &mut w)?;
    w.flush()?;
    Ok(Trained {
        model,
        fingerprint: fp,
        curve,
    })
}

/// Rebuilds a model from a checkpoint and its run config; any disagreement
/// between the two is a mismatch.
pub fn load_model(ckpt: &Path, config: Option<&Path>) -> CliResult<(Ihn<f32>, String)> {
    let cfg_path: PathBuf = match config {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let (rc, recorded) = RunConfig::read(&cfg_path)?;
    let mut model = Ihn::<f32>::new(rc.model, rc.train.seed)?;
    let fp = fingerprint(&model.cfg, &model.store);
    if fp != recorded {
        return Err(CliError::new(
            MISMATCH,
            format!("fingerprint mismatch: config records {recorded}, model has {fp}"),
        ));
    }
    if !ckpt.exists() {
        return Err(Error::MissingFile(ckpt.display().to_string()).into());
    }
    let entries = read_checkpoint(std::io::BufReader::new(File::open(ckpt)?))?;
    model.store.load_entries(&entries).map_err(|e| CliError::new(MISMATCH, e.to_string()))?;
    Ok((model, fp))
}

/// Writes the report, its timing sidecar and optionally the traces.
pub fn write_report(report: &BenchReport, path: Option<&Path>, trace: Option<&Path>) -> CliResult<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&timing_path(p))?;
        report.write_timings(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = trace {
        let mut w = create(p)?;
        report.write_traces(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// `report.csv` -> `report.timing.csv`
pub fn timing_path(p: &Path) -> PathBuf {
    p.with_extension("timing.csv")
}
