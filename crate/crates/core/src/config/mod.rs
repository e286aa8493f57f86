//! Run configuration: model shape, neuron constants, and training
//! hyperparameters in one flat `key=value` file.
//!
//! Every key has a default, so an empty file is valid. Unknown keys are
//! rejected. [`RunConfig::to_kv`] echoes every resolved value, and
//! parsing that echo gives back the same configuration.

pub mod kv;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lif::LifConfig;
pub use kv::KeyValues;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Spiking,
    /// ELU in place of LIF neurons; with one time step this is a plain GAT.
    SpikeFreeOracle,
}

/// What turns the last hidden layer into class scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// A non-spiking attention layer averaging its heads (node task only).
    Attention,
    /// Linear, ELU, Linear on hidden-layer embeddings.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    None,
    Plateau { factor: f64, patience: usize },
}

/// Which epoch's test metric a trial reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Report {
    Final,
    BestVal,
}

macro_rules! keyword_enum {
    ($t:ty { $($name:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($v),)+
                    _ => Err(format!("expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(Mode { "spiking" => Mode::Spiking, "spike_free_oracle" => Mode::SpikeFreeOracle });
keyword_enum!(HeadKind { "attention" => HeadKind::Attention, "mlp" => HeadKind::Mlp });
keyword_enum!(Report { "final" => Report::Final, "best_val" => Report::BestVal });

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub mode: Mode,
    /// Per-head width of each hidden attention layer.
    pub hidden_dims: Vec<usize>,
    /// Head count of each hidden layer.
    pub heads: Vec<usize>,
    pub output_heads: usize,
    pub head: HeadKind,
    pub mlp_hidden: usize,
    /// Average edge scores over both orientations.
    pub symmetric_edges: bool,
    pub lif: LifConfig,
    /// Drop probability on every layer input during training.
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
    pub schedule: Schedule,
    pub eval_every: usize,
    /// Graphs per minibatch on multi-graph datasets.
    pub batch_size: usize,
    pub report: Report,
}

impl TrainConfig {
    pub fn trials(&self) -> usize {
        self.seeds.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSettings {
                mode: Mode::Spiking,
                hidden_dims: vec![8],
                heads: vec![8],
                output_heads: 8,
                head: HeadKind::Attention,
                mlp_hidden: 152,
                symmetric_edges: true,
                lif: LifConfig::default(),
                dropout: 0.0,
            },
            train: TrainConfig {
                lr: 0.005,
                min_lr: 1e-5,
                epochs: 200,
                seeds: (0..10).collect(),
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
                grad_clip: None,
                schedule: Schedule::None,
                eval_every: 1,
                batch_size: 32,
                report: Report::Final,
            },
        }
    }
}

/// Keys in `KEYS[..MODEL_KEYS]` describe the network; the rest training.
pub const MODEL_KEYS: usize = 13;

pub const KEYS: &[&str] = &[
    "mode",
    "hidden_dims",
    "heads",
    "output_heads",
    "head",
    "mlp_hidden",
    "symmetric_edges",
    "time_steps",
    "threshold",
    "leak",
    "u_rest",
    "surrogate_width",
    "dropout",
    "lr",
    "min_lr",
    "epochs",
    "seeds",
    "trials",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "grad_clip",
    "schedule",
    "plateau_factor",
    "plateau_patience",
    "eval_every",
    "batch_size",
    "report",
];

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}={raw}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    raw.split(',').map(|p| parse(key, p)).collect()
}

/// `a..b` (half-open) or a comma list.
fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = raw.split_once("..") {
        let (a, b): (u64, u64) = (parse("seeds", a)?, parse("seeds", b)?);
        return Ok((a..b).collect());
    }
    parse_list("seeds", raw)
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(kv)?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path).map_err(|e| match e {
            Error::Format { path, message } => Error::Config(format!("{}: {message}", path.display())),
            other => other,
        })?;
        Self::from_kv(&kv)
    }

    /// Applies `key=value` strings on top of the current values.
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut kv = KeyValues::new();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            kv.set(k.trim(), v.trim());
        }
        self.apply(&kv)
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        let m = &mut self.model;
        let t = &mut self.train;
        let mut factor = match t.schedule {
            Schedule::Plateau { factor, .. } => factor,
            Schedule::None => 0.5,
        };
        let mut patience = match t.schedule {
            Schedule::Plateau { patience, .. } => patience,
            Schedule::None => 10,
        };
        let mut plateau = matches!(t.schedule, Schedule::Plateau { .. });
        let mut trials = None;
        let mut seeds_given = false;
        for key in kv.keys() {
            let raw = kv.get(key).unwrap_or_default();
            match key {
                "mode" => m.mode = parse(key, raw)?,
                "hidden_dims" => m.hidden_dims = if raw.trim().is_empty() { Vec::new() } else { parse_list(key, raw)? },
                "heads" => m.heads = parse_list(key, raw)?,
                "output_heads" => m.output_heads = parse(key, raw)?,
                "head" => m.head = parse(key, raw)?,
                "mlp_hidden" => m.mlp_hidden = parse(key, raw)?,
                "symmetric_edges" => m.symmetric_edges = parse(key, raw)?,
                "time_steps" => m.lif.time_steps = parse(key, raw)?,
                "threshold" => m.lif.threshold = parse(key, raw)?,
                "leak" => m.lif.leak = parse(key, raw)?,
                "u_rest" => m.lif.u_rest = parse(key, raw)?,
                "surrogate_width" => m.lif.surrogate_width = parse(key, raw)?,
                "dropout" => m.dropout = parse(key, raw)?,
                "lr" => t.lr = parse(key, raw)?,
                "min_lr" => t.min_lr = parse(key, raw)?,
                "epochs" => t.epochs = parse(key, raw)?,
                "seeds" => {
                    t.seeds = parse_seeds(raw)?;
                    seeds_given = true;
                }
                "trials" => trials = Some(parse::<usize>(key, raw)?),
                "beta1" => t.beta1 = parse(key, raw)?,
                "beta2" => t.beta2 = parse(key, raw)?,
                "eps" => t.eps = parse(key, raw)?,
                "weight_decay" => t.weight_decay = parse(key, raw)?,
                "grad_clip" => {
                    t.grad_clip = match raw.trim() {
                        "none" | "off" => None,
                        v => Some(parse(key, v)?),
                    }
                }
                "schedule" => {
                    plateau = match raw.trim() {
                        "none" => false,
                        "plateau" => true,
                        _ => return Err(Error::Config(format!("schedule={raw}: expected none or plateau"))),
                    }
                }
                "plateau_factor" => factor = parse(key, raw)?,
                "plateau_patience" => patience = parse(key, raw)?,
                "eval_every" => t.eval_every = parse(key, raw)?,
                "batch_size" => t.batch_size = parse(key, raw)?,
                "report" => t.report = parse(key, raw)?,
                _ => unreachable!(),
            }
        }
        t.schedule = if plateau {
            Schedule::Plateau { factor, patience }
        } else {
            Schedule::None
        };
        if let Some(n) = trials {
            if seeds_given && n != t.seeds.len() {
                return Err(Error::Config(format!(
                    "trials={n} but {} seeds listed",
                    t.seeds.len()
                )));
            }
            if !seeds_given {
                t.seeds = (0..n as u64).collect();
            }
        }
        if m.heads.len() == 1 && m.hidden_dims.len() > 1 {
            m.heads = vec![m.heads[0]; m.hidden_dims.len()];
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, t) = (&self.model, &self.train);
        m.lif.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if m.heads.len() != m.hidden_dims.len() && !(m.hidden_dims.is_empty() && m.heads.len() == 1) {
            return bad(format!(
                "{} hidden layers but {} head counts",
                m.hidden_dims.len(),
                m.heads.len()
            ));
        }
        if m.hidden_dims.iter().chain(&m.heads).any(|&d| d == 0) || m.output_heads == 0 || m.mlp_hidden == 0 {
            return bad("layer widths and head counts must be positive".into());
        }
        if m.head == HeadKind::Mlp && m.hidden_dims.is_empty() {
            return bad("an mlp head needs at least one hidden layer".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad(format!("dropout {} outside [0, 1)", m.dropout));
        }
        if !(t.lr >= 0.0) || !t.lr.is_finite() {
            return bad(format!("lr {} must be finite and non-negative", t.lr));
        }
        if t.lr > 0.0 && !(t.min_lr > 0.0 && t.min_lr <= t.lr) {
            return bad(format!("need 0 < min_lr <= lr, got min_lr={} lr={}", t.min_lr, t.lr));
        }
        if t.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if t.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return bad("Adam constants need 0 <= beta < 1 and eps > 0".into());
        }
        if !(t.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if t.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if let Schedule::Plateau { factor, patience } = t.schedule {
            if !(factor > 0.0 && factor < 1.0) || patience == 0 {
                return bad("plateau needs 0 < factor < 1 and patience >= 1".into());
            }
        }
        if t.eval_every == 0 || t.batch_size == 0 {
            return bad("eval_every and batch_size must be positive".into());
        }
        Ok(())
    }

    /// Every resolved key, in [`KEYS`] order.
    pub fn to_kv(&self) -> KeyValues {
        let (m, t) = (&self.model, &self.train);
        let mut kv = KeyValues::new();
        kv.set("mode", m.mode.to_string());
        kv.set("hidden_dims", join(&m.hidden_dims));
        kv.set("heads", join(&m.heads));
        kv.set("output_heads", m.output_heads.to_string());
        kv.set("head", m.head.to_string());
        kv.set("mlp_hidden", m.mlp_hidden.to_string());
        kv.set("symmetric_edges", m.symmetric_edges.to_string());
        kv.set("time_steps", m.lif.time_steps.to_string());
        kv.set("threshold", m.lif.threshold.to_string());
        kv.set("leak", m.lif.leak.to_string());
        kv.set("u_rest", m.lif.u_rest.to_string());
        kv.set("surrogate_width", m.lif.surrogate_width.to_string());
        kv.set("dropout", m.dropout.to_string());
        kv.set("lr", t.lr.to_string());
        kv.set("min_lr", t.min_lr.to_string());
        kv.set("epochs", t.epochs.to_string());
        kv.set("seeds", join(&t.seeds));
        kv.set("trials", t.trials().to_string());
        kv.set("beta1", t.beta1.to_string());
        kv.set("beta2", t.beta2.to_string());
        kv.set("eps", t.eps.to_string());
        kv.set("weight_decay", t.weight_decay.to_string());
        kv.set("grad_clip", t.grad_clip.map_or("none".into(), |c| c.to_string()));
        let (schedule, factor, patience) = match t.schedule {
            Schedule::None => ("none", 0.5, 10),
            Schedule::Plateau { factor, patience } => ("plateau", factor, patience),
        };
        kv.set("schedule", schedule);
        kv.set("plateau_factor", factor.to_string());
        kv.set("plateau_patience", patience.to_string());
        kv.set("eval_every", t.eval_every.to_string());
        kv.set("batch_size", t.batch_size.to_string());
        kv.set("report", t.report.to_string());
        kv
    }
}
