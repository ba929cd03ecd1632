use std::io::Write;
use std::time::Instant;

use ihn_core::datagen::{SynthSpec, Variant};
use ihn_core::iclk::{self, IclkConfig};
use ihn_core::ihe::Ihn;
use ihn_core::Homography;

use crate::args::BenchTimeArgs;
use crate::common::{create, load_model, preset_config};
use crate::exit::{CliError, CliResult};

pub const SUMMARY_SCHEMA: &str = "ihn-latency/1";
/// Reference latencies (ms) of 1-scale IHN and the IC-LK iterator.
pub const REFERENCE_MS: (f64, f64) = (30.6, 253.7);

#[derive(Debug, Clone, PartialEq)]
pub struct Latency {
    pub method: &'static str,
    pub samples: Vec<f64>,
}

/// Nearest-rank percentile of `xs` (`q` in [0, 1]).
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

impl Latency {
    pub fn median(&self) -> f64 {
        percentile(&self.samples, 0.5)
    }

    pub fn p95(&self) -> f64 {
        percentile(&self.samples, 0.95)
    }
}

/// Times `f(i)` for every `i < n` after `warmup` untimed calls; milliseconds.
pub fn time_calls(n: usize, warmup: usize, mut f: impl FnMut(usize)) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    for i in 0..warmup {
        f(i % n);
    }
    (0..n)
        .map(|i| {
            let t0 = Instant::now();
            f(i);
            t0.elapsed().as_secs_f64() * 1e3
        })
        .collect()
}

pub fn measure(a: &BenchTimeArgs) -> CliResult<Vec<Latency>> {
    let spec = SynthSpec::new(Variant::Static, a.size, a.rho);
    let pairs = spec.generate_many(a.seed, a.count)?;
    let loaded = a.ckpt.as_deref().map(|p| load_model(p, None)).transpose()?;
    let arms: [(&'static str, usize, bool); 3] = [("ihn-1scale", 1, false), ("ihn-2scale", 2, false), ("ihn-2scale-mov", 2, true)];
    let mut out = Vec::new();
    for (name, scales, mov) in arms {
        let model = match &loaded {
            Some((m, _)) if m.cfg.scales == scales && m.cfg.mov == mov && m.cfg.image_size == a.size => m.clone(),
            _ => {
                let mut cfg = preset_config(a.preset, a.size);
                cfg.scales = scales;
                cfg.mov = mov;
                Ihn::<f32>::new(cfg, a.seed)?
            }
        };
        let samples = time_calls(pairs.len(), a.warmup, |i| {
            let _ = model.estimate(&pairs[i].i_s, &pairs[i].i_t, None);
        });
        out.push(Latency { method: name, samples });
    }
    let cfg = IclkConfig::default();
    let cast: Vec<_> = pairs.iter().map(|p| (p.i_s.cast::<f64>(), p.i_t.cast::<f64>())).collect();
    let samples = time_calls(cast.len(), a.warmup, |i| {
        let _ = iclk::estimate(&cast[i].0, &cast[i].1, &Homography::identity(), &cfg, None);
    });
    out.push(Latency { method: "iclk", samples });
    Ok(out)
}

/// Measured IC-LK : 1-scale IHN median latency ratio.
pub fn measured_ratio(rows: &[Latency]) -> Option<f64> {
    let get = |m: &str| rows.iter().find(|r| r.method == m && !r.samples.is_empty()).map(Latency::median);
    Some(get("iclk")? / get("ihn-1scale")?)
}

pub fn write_table<W: Write>(rows: &[Latency], mut w: W) -> std::io::Result<()> {
    writeln!(w, "schema,{SUMMARY_SCHEMA}")?;
    writeln!(w, "method,count,median_ms,p95_ms")?;
    for r in rows.iter().filter(|r| !r.samples.is_empty()) {
        writeln!(w, "{},{},{:.4},{:.4}", r.method, r.samples.len(), r.median(), r.p95())?;
    }
    if let Some(x) = measured_ratio(rows) {
        writeln!(w, "ratio_iclk_over_ihn,measured,{x:.3},reference,{:.3}", REFERENCE_MS.1 / REFERENCE_MS.0)?;
    }
    Ok(())
}

pub fn run(a: &BenchTimeArgs) -> CliResult<()> {
    if a.size == 0 || !a.rho.is_finite() || a.rho < 0.0 {
        return Err(CliError::usage("invalid --size / --rho"));
    }
    let rows = measure(a)?;
    write_table(&rows, std::io::stdout().lock())?;
    if let Some(p) = &a.report {
        let mut w = create(p)?;
        write_table(&rows, &mut w)?;
        w.flush()?;
    }
    Ok(())
}
