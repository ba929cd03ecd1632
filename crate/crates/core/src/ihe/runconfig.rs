//! Run configuration files: UTF-8 `key=value` lines capturing every model
//! and training setting, plus a fingerprint of the model architecture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{IhnConfig, Parameterization, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::tensor::{ParamStore, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: IhnConfig,
    pub train: TrainConfig,
    /// Where the training pairs came from (archive path or synthetic recipe).
    pub data: String,
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn model_pairs(m: &IhnConfig) -> Vec<(&'static str, String)> {
    let f = &m.features;
    vec![
        ("image_size", m.image_size.to_string()),
        ("iters", m.iters.to_string()),
        ("radius", m.radius.to_string()),
        ("gma_width", m.gma_width.to_string()),
        ("gma_width_s2", m.gma_width_s2.to_string()),
        ("gma_groups", m.gma_groups.to_string()),
        ("scales", m.scales.to_string()),
        ("mov", m.mov.to_string()),
        ("alpha", m.alpha.to_string()),
        ("detach", m.detach.to_string()),
        ("pooled", m.pooled.to_string()),
        ("flow", m.flow.to_string()),
        ("param", m.param.as_str().to_string()),
        ("feat_q", f.q.to_string()),
        ("feat_dim", f.dim.to_string()),
        ("feat_stem", f.stem_kernel.to_string()),
        ("feat_widths", join(&f.widths)),
        ("feat_groups", f.groups.map_or("none".into(), |g| g.to_string())),
    ]
}

/// Keys that change the parameter set or the meaning of the weights.
const ARCH_KEYS: &[&str] = &[
    "image_size",
    "radius",
    "gma_width",
    "gma_width_s2",
    "gma_groups",
    "scales",
    "mov",
    "pooled",
    "flow",
    "param",
    "feat_q",
    "feat_dim",
    "feat_stem",
    "feat_widths",
    "feat_groups",
];

/// SHA-256 over the architecture keys and the parameter names and shapes.
pub fn fingerprint<T: Real>(model: &IhnConfig, store: &ParamStore<T>) -> String {
    let mut h = Sha256::new();
    for (k, v) in model_pairs(model) {
        if ARCH_KEYS.contains(&k) {
            h.update(format!("{k}={v}\n"));
        }
    }
    for (name, t) in store.iter() {
        h.update(format!("{name}:{:?}\n", t.shape()));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn to_text(&self, fingerprint: &str) -> String {
        let t = &self.train;
        let mut out = String::from("# ihn run configuration\n");
        let mut pairs = model_pairs(&self.model);
        pairs.extend([
            ("steps", t.steps.to_string()),
            ("batch", t.batch.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("clip", t.clip.to_string()),
            ("warmup", t.warmup.to_string()),
            ("seed", t.seed.to_string()),
            ("data", self.data.clone()),
            ("fingerprint", fingerprint.to_string()),
        ]);
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Parses a run configuration; returns it with the recorded fingerprint.
    pub fn parse(text: &str) -> Result<(RunConfig, String)> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Config(format!("missing key {k}")));
        fn num<X: std::str::FromStr>(k: &str, v: String) -> Result<X> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))
        }
        let widths = get("feat_widths")?
            .split(',')
            .map(|x| num("feat_widths", x.to_string()))
            .collect::<Result<Vec<usize>>>()?;
        let groups = match get("feat_groups")?.as_str() {
            "none" => None,
            g => Some(num("feat_groups", g.to_string())?),
        };
        let scales: usize = num("scales", get("scales")?)?;
        let model = IhnConfig {
            image_size: num("image_size", get("image_size")?)?,
            iters: num("iters", get("iters")?)?,
            radius: num("radius", get("radius")?)?,
            gma_width: num("gma_width", get("gma_width")?)?,
            gma_width_s2: num("gma_width_s2", get("gma_width_s2")?)?,
            gma_groups: num("gma_groups", get("gma_groups")?)?,
            scales,
            mov: num("mov", get("mov")?)?,
            alpha: num("alpha", get("alpha")?)?,
            detach: num("detach", get("detach")?)?,
            pooled: num("pooled", get("pooled")?)?,
            flow: num("flow", get("flow")?)?,
            param: get("param")?.parse::<Parameterization>()?,
            features: FeatureConfig {
                q: num("feat_q", get("feat_q")?)?,
                dim: num("feat_dim", get("feat_dim")?)?,
                stem_kernel: num("feat_stem", get("feat_stem")?)?,
                widths,
                groups,
                half: scales == 2,
            },
        };
        let train = TrainConfig {
            steps: num("steps", get("steps")?)?,
            batch: num("batch", get("batch")?)?,
            lr: num("lr", get("lr")?)?,
            weight_decay: num("weight_decay", get("weight_decay")?)?,
            clip: num("clip", get("clip")?)?,
            warmup: num("warmup", get("warmup")?)?,
            seed: num("seed", get("seed")?)?,
        };
        Ok((
            RunConfig {
                model,
                train,
                data: get("data")?,
            },
            get("fingerprint")?,
        ))
    }

    pub fn read(path: &Path) -> Result<(RunConfig, String)> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }
}
