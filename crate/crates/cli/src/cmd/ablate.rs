use std::io::Write;

use ihn_core::datagen::{SynthSpec, WarpPair};
use ihn_core::ihe::{IhnConfig, Parameterization};

use crate::args::{AblateArgs, Study};
use crate::common::{create, load_pairs, model_config, open_data, train_and_save, train_config, write_report, Data};
use crate::eval::{evaluate, Method};
use crate::exit::CliResult;

pub const TABLE_SCHEMA: &str = "ihn-ablation/1";
pub const ITER_STUDY: [usize; 4] = [1, 6, 12, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub setting: String,
    pub mace: f64,
    /// `ok` or `diverged`.
    pub status: &'static str,
}

/// The two configurations of a one-bit study; `iters` has a single arm.
fn arms(study: Study, base: &IhnConfig) -> Vec<(String, String, IhnConfig)> {
    let with = |f: &dyn Fn(&mut IhnConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let pair = |a: (&str, &str), b: (&str, &str), f: &dyn Fn(&mut IhnConfig, bool)| {
        vec![
            (a.0.to_string(), a.1.to_string(), with(&|c| f(c, true))),
            (b.0.to_string(), b.1.to_string(), with(&|c| f(c, false))),
        ]
    };
    match study {
        Study::Pooling => pair(("pooled", "pooled=true"), ("no-pooling", "pooled=false"), &|c, on| c.pooled = on),
        Study::Flow => pair(("flow", "flow=true"), ("no-flow", "flow=false"), &|c, on| c.flow = on),
        Study::Param => pair(("displacement", "param=displacement"), ("direct", "param=direct"), &|c, on| {
            c.param = if on {
                Parameterization::Displacement
            } else {
                Parameterization::Direct
            }
        }),
        Study::Scales => pair(("1-scale", "scales=1"), ("2-scale", "scales=2"), &|c, one| {
            c.scales = if one { 1 } else { 2 }
        }),
        Study::Iters => vec![("trained".into(), format!("iters={}", base.iters), base.clone())],
    }
}

fn validation(a: &AblateArgs, size: usize) -> CliResult<Vec<WarpPair>> {
    match &a.val {
        Some(dir) => load_pairs(dir),
        None => Ok(SynthSpec::new(a.data.variant.into(), size, a.data.rho).generate_many(a.val_seed, a.val_count)?),
    }
}

/// Trains and evaluates every arm; results land in `out/<arm>/`.
pub fn run_study(a: &AblateArgs) -> CliResult<Vec<Arm>> {
    let tc = train_config(&a.model);
    let data: Data = open_data(&a.data, tc.seed)?;
    let base = model_config(&a.model, data.size);
    let val = validation(a, data.size)?;
    let jobs = a.jobs.jobs.max(1);
    let tolerant = a.study == Study::Param;
    let mut rows = Vec::new();
    for (name, setting, cfg) in arms(a.study, &base) {
        let dir = a.out.join(&name);
        let direct = cfg.param == Parameterization::Direct;
        let trained = match train_and_save(cfg, &tc, &data, &dir, 0) {
            Ok(t) => t,
            // the direct-entry arm is allowed to blow up
            Err(e) if tolerant && direct => {
                eprintln!("{name}: {e}");
                rows.push(Arm {
                    name,
                    setting,
                    mace: f64::INFINITY,
                    status: "diverged",
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let evals: Vec<(String, String, usize)> = if a.study == Study::Iters {
            ITER_STUDY.iter().map(|&k| (format!("iters-{k}"), format!("iters={k}"), k)).collect()
        } else {
            vec![(name, setting, trained.model.cfg.iters)]
        };
        for (name, setting, iters) in evals {
            let method = Method::Ihn {
                model: &trained.model,
                iters,
            };
            let report = evaluate(&method, &val, jobs, &trained.fingerprint)?;
            write_report(&report, Some(&dir.join(format!("{name}.report.csv"))), None)?;
            let mace = report.mace();
            rows.push(Arm {
                name,
                setting,
                mace,
                status: if mace.is_finite() { "ok" } else { "diverged" },
            });
        }
    }
    Ok(rows)
}

pub fn write_table<W: Write>(study: Study, rows: &[Arm], mut w: W) -> std::io::Result<()> {
    writeln!(w, "schema,{TABLE_SCHEMA},study,{study:?}")?;
    writeln!(w, "arm,setting,mace,status")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.name, r.setting, r.mace, r.status)?;
    }
    Ok(())
}

pub fn run(a: &AblateArgs) -> CliResult<()> {
    let rows = run_study(a)?;
    write_table(a.study, &rows, std::io::stdout().lock())?;
    let path = a.out.join("ablation.csv");
    let mut w = create(&path)?;
    write_table(a.study, &rows, &mut w)?;
    w.flush()?;
    Ok(())
}

