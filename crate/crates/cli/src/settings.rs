//! Run settings assembled from defaults, an optional key=value file, flags
//! and the `SCALORA_SEED` environment variable, in increasing priority.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use scalora::trainer::{Method, OptimizerKind, TrainConfig};

pub const SEED_ENV: &str = "SCALORA_SEED";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(format!("unknown format '{other}' (expected csv or jsonl)")),
        }
    }
}

/// Flags shared by `run` and `compare`. Every field is optional so that
/// unset flags fall through to the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// key=value file; flags given on the command line take precedence
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Task to train on (only linreg)
    #[arg(long)]
    pub task: Option<String>,
    /// Adapter rank r
    #[arg(long)]
    pub rank: Option<usize>,
    /// Scaling interval I (scalora-i only)
    #[arg(long)]
    pub interval: Option<usize>,
    /// Learning rate [default: 1/L]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Product L·η used by the scaling step [default: 4·L·lr]
    #[arg(long = "l-eta")]
    pub l_eta: Option<f64>,
    /// Lipschitz constant replacing the task's exact one
    #[arg(long = "l-override")]
    pub l_override: Option<f64>,
    /// Number of optimizer steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed for data, initialization and minibatches (SCALORA_SEED wins)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the Gaussian A initialization
    #[arg(long = "sigma-init")]
    pub sigma_init: Option<f64>,
    /// gd or adamw
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Columns sampled per step [default: full batch]
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Relative singular value cutoff for cum_rank
    #[arg(long = "rank-tol")]
    pub rank_tol: Option<f64>,
    /// Adapter multiplier s in W + s·A·Bᵀ
    #[arg(long = "lora-scale")]
    pub lora_scale: Option<f64>,
    /// Output rows m of the regression weight
    #[arg(long)]
    pub m: Option<usize>,
    /// Input columns n of the regression weight
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of samples k
    #[arg(long)]
    pub k: Option<usize>,
    /// Metrics destination; '-' for standard output
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write every N-th step (the last step is always written)
    #[arg(long = "emit-every")]
    pub emit_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub emit_every: usize,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad(format!("config line {}: expected key = value", no + 1)));
        };
        let key = key.trim().replace('_', "-");
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(bad(format!("config line {}: duplicate key '{key}'", no + 1)));
        }
    }
    Ok(map)
}

fn read_config(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| bad(format!("invalid value '{raw}' for {key}: {e}")))
}

impl RunFlags {
    /// Merges file, flags and environment into a validated spec. `method`
    /// is supplied by the caller since `compare` sets it per run.
    pub fn resolve(&self, method: Option<Method>, seed_env: Option<&str>) -> anyhow::Result<RunSpec> {
        self.resolve_inner(method, seed_env, true)
    }

    /// As `resolve`, but the interval only applies to `scalora-i` so one
    /// flag set can drive every method in a comparison.
    pub fn resolve_for_compare(&self, method: Method, seed_env: Option<&str>) -> anyhow::Result<RunSpec> {
        self.resolve_inner(Some(method), seed_env, method == Method::ScaloraI)
    }

    fn resolve_inner(
        &self,
        method: Option<Method>,
        seed_env: Option<&str>,
        use_interval: bool,
    ) -> anyhow::Result<RunSpec> {
        let mut file = match &self.config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        let mut take = |key: &str| file.remove(key);

        let mut train = TrainConfig::default();
        let mut out: Option<PathBuf> = None;
        let mut format = Format::Csv;
        let mut emit_every = 1usize;
        let mut task = String::from("linreg");

        macro_rules! layer {
            ($key:literal, $flag:expr, $slot:expr) => {
                if let Some(raw) = take($key) {
                    $slot = parse_value($key, &raw)?;
                }
                if let Some(v) = $flag.clone() {
                    $slot = v;
                }
            };
            ($key:literal, $flag:expr, opt $slot:expr) => {
                if let Some(raw) = take($key) {
                    $slot = Some(parse_value($key, &raw)?);
                }
                if let Some(v) = $flag.clone() {
                    $slot = Some(v);
                }
            };
        }

        let file_method = take("method");
        if let Some(m) = method {
            train.method = m;
        } else if let Some(raw) = file_method {
            train.method = parse_value("method", &raw)?;
        }
        layer!("task", self.task, task);
        layer!("rank", self.rank, train.rank);
        layer!("interval", self.interval, train.interval);
        layer!("lr", self.lr, opt train.lr);
        layer!("l-eta", self.l_eta, opt train.l_eta);
        layer!("l-override", self.l_override, opt train.l_override);
        layer!("steps", self.steps, train.steps);
        layer!("seed", self.seed, train.seed);
        layer!("sigma-init", self.sigma_init, train.sigma_init);
        let mut optimizer: Option<String> = None;
        layer!("optimizer", self.optimizer, opt optimizer);
        layer!("minibatch", self.minibatch, opt train.minibatch);
        layer!("rank-tol", self.rank_tol, train.rank_tol);
        layer!("lora-scale", self.lora_scale, train.lora_scale);
        layer!("m", self.m, train.m);
        layer!("n", self.n, train.n);
        layer!("k", self.k, train.k);
        layer!("out", self.out, opt out);
        layer!("format", self.format, format);
        layer!("emit-every", self.emit_every, emit_every);

        if let Some(key) = file.keys().next() {
            return Err(bad(format!("unknown config key '{key}'")));
        }
        if task != "linreg" {
            return Err(bad(format!("unknown task '{task}' (only linreg is available)")));
        }
        if let Some(raw) = optimizer {
            train.optimizer = parse_value::<OptimizerKind>("optimizer", &raw)?;
        }
        if let Some(raw) = seed_env {
            train.seed = parse_value(SEED_ENV, raw.trim())?;
        }
        if !use_interval {
            train.interval = 1;
        }
        if emit_every == 0 {
            return Err(bad("emit-every must be at least 1"));
        }
        if train.steps == 0 {
            return Err(bad("steps must be at least 1"));
        }
        train.validate().map_err(|e| bad(e.to_string()))?;
        Ok(RunSpec {
            train,
            out,
            format,
            emit_every,
        })
    }
}
