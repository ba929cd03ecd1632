use ihn_core::iclk::IclkConfig;

use crate::args::{EvalArgs, IclkArgs, IclkFlags, MethodArg};
use crate::common::{load_model, load_pairs, write_report};
use crate::eval::{evaluate, Method};
use crate::exit::{CliError, CliResult, MISMATCH};

pub fn iclk_config(f: &IclkFlags) -> CliResult<IclkConfig> {
    if f.levels == 0 || f.max_iter == 0 || !(f.tol > 0.0) {
        return Err(CliError::usage("IC-LK needs levels >= 1, max-iter >= 1 and tol > 0"));
    }
    Ok(IclkConfig {
        levels: f.levels,
        max_iter: f.max_iter,
        tol: f.tol,
        ..IclkConfig::default()
    })
}

fn summarize(report: &ihn_core::report::BenchReport) {
    println!("method={}", report.method);
    println!("pairs={}", report.rows.len());
    println!("mace={}", report.mace());
}

pub fn run(a: &EvalArgs) -> CliResult<()> {
    let pairs = load_pairs(&a.data)?;
    let jobs = a.jobs.jobs.max(1);
    let report = match (&a.ckpt, a.method) {
        (Some(ckpt), _) => {
            let (model, fp) = load_model(ckpt, a.config.as_deref())?;
            let size = pairs[0].i_s.shape()[1];
            if size != model.cfg.image_size {
                return Err(CliError::new(
                    MISMATCH,
                    format!("model expects {0}x{0} images, archive has {size}x{size}", model.cfg.image_size),
                ));
            }
            let iters = a.iters.unwrap_or(model.cfg.iters);
            if iters == 0 {
                return Err(CliError::usage("--iters must be positive"));
            }
            evaluate(&Method::Ihn { model: &model, iters }, &pairs, jobs, &fp)?
        }
        (None, Some(MethodArg::Iclk)) => evaluate(&Method::Iclk(iclk_config(&a.iclk)?), &pairs, jobs, "")?,
        (None, Some(MethodArg::Oracle)) => evaluate(&Method::Oracle, &pairs, jobs, "")?,
        (None, Some(MethodArg::Identity)) => evaluate(&Method::Identity, &pairs, jobs, "")?,
        (None, Some(MethodArg::Ihn)) => return Err(CliError::usage("--method ihn needs --ckpt")),
        (None, None) => return Err(CliError::usage("give --ckpt or --method")),
    };
    write_report(&report, a.report.as_deref(), a.trace.as_deref())?;
    summarize(&report);
    Ok(())
}

pub fn run_iclk(a: &IclkArgs) -> CliResult<()> {
    let pairs = load_pairs(&a.data)?;
    let report = evaluate(&Method::Iclk(iclk_config(&a.iclk)?), &pairs, a.jobs.jobs.max(1), "")?;
    write_report(&report, a.report.as_deref(), a.trace.as_deref())?;
    summarize(&report);
    let mut aces = report.aces();
    aces.sort_by(f64::total_cmp);
    if let Some(m) = aces.get(aces.len() / 2) {
        println!("median_ace={m}");
    }
    Ok(())
}
