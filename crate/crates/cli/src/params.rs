//! Command parameters.
//!
//! Every flag has a JSON twin with the same kebab-case name. Values are
//! merged as defaults < config file < flags, and the merged result is
//! validated before a command does any work.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use elsym_core::{BottleneckPath, OutputKind, SynthSpec, Tensor, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    El,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputArg {
    Logit,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathArg {
    Identity,
    Relaxed,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CommonParams {
    /// JSON file whose keys mirror the long flag names
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BlockParams {
    /// Features per class block
    #[arg(long)]
    pub block_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenParams {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Mean of a class's own feature block
    #[arg(long)]
    pub mean_shift: Option<f64>,
    /// Feature noise standard deviation
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataParams {
    /// Directory holding train.csv, val.csv and test.csv
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainParams {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub temperature_decay: Option<f64>,
    #[arg(long)]
    pub min_temperature: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub straight_through: Option<bool>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Comma-separated hidden widths, e.g. "64,64"
    #[arg(long)]
    pub sender_hidden: Option<String>,
    #[arg(long)]
    pub receiver_hidden: Option<String>,
    /// Standardize features with train-split statistics
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttrParams {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub riemann_steps: Option<usize>,
    /// "zero" or comma-separated values, one per feature
    #[arg(long)]
    pub baseline_vector: Option<String>,
    #[arg(long, value_enum)]
    pub attribution_output: Option<OutputArg>,
    #[arg(long, value_enum)]
    pub bottleneck_path: Option<PathArg>,
}

/// Reads a config file as a flat object and rejects keys no group knows.
pub fn read_config(path: Option<&Path>, known: &[String]) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
    };
    let allowed: BTreeSet<&str> = known.iter().map(String::as_str).collect();
    if let Some(k) = map.keys().find(|k| !allowed.contains(k.as_str())) {
        return Err(CliError::Usage(format!(
            "{}: unknown config key {k:?}",
            path.display()
        )));
    }
    Ok(map)
}

/// Fills every `None` field of `flags` from the config map.
pub fn merge<T>(flags: &T, config: &Map<String, Value>) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut merged = serde_json::to_value(flags).expect("params serialize");
    let obj = merged.as_object_mut().expect("params are objects");
    for (k, v) in obj.iter_mut() {
        if v.is_null() {
            if let Some(c) = config.get(k) {
                *v = c.clone();
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("config: {e}")))
}

/// Field names of a parameter group, for config-key validation.
pub fn keys<T: Default + Serialize>() -> Vec<String> {
    let v = serde_json::to_value(T::default()).expect("params serialize");
    v.as_object().expect("params are objects").keys().cloned().collect()
}

fn parse_widths(s: &str, what: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(CliError::Usage(format!(
                "--{what}: expected comma-separated positive widths, got {s:?}"
            ))),
            Ok(w) => Ok(w),
        })
        .collect()
}

impl GenParams {
    pub fn resolve(&self, common: &CommonParams, blocks: &BlockParams) -> Result<SynthSpec> {
        let d = SynthSpec::default();
        let spec = SynthSpec {
            num_classes: self.classes.unwrap_or(d.num_classes),
            block_size: blocks.block_size.unwrap_or(d.block_size),
            train_size: self.train_size.unwrap_or(d.train_size),
            val_size: self.val_size.unwrap_or(d.val_size),
            test_size: self.test_size.unwrap_or(d.test_size),
            mean_shift: self.mean_shift.unwrap_or(d.mean_shift),
            noise_std: self.sigma.unwrap_or(d.noise_std),
            seed: common.seed.unwrap_or(d.seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Fully resolved training parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSettings {
    pub model: ModelKind,
    pub sender_hidden: Vec<usize>,
    pub receiver_hidden: Vec<usize>,
    pub standardize: bool,
    pub train: TrainConfig,
}

impl TrainParams {
    pub fn resolve(&self, common: &CommonParams) -> Result<TrainSettings> {
        let d = TrainConfig::default();
        let temperature = self.temperature.unwrap_or(d.temperature);
        let train = TrainConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            batch_size: self.batch.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            temperature,
            temperature_decay: self.temperature_decay.unwrap_or(d.temperature_decay),
            min_temperature: self.min_temperature.unwrap_or(temperature),
            straight_through: self.straight_through.unwrap_or(d.straight_through),
            vocab_size: self.vocab.unwrap_or(d.vocab_size),
            seed: common.seed.unwrap_or(d.seed),
        };
        train.validate()?;
        Ok(TrainSettings {
            model: self.model.unwrap_or(ModelKind::El),
            sender_hidden: parse_widths(self.sender_hidden.as_deref().unwrap_or("64,64"), "sender-hidden")?,
            receiver_hidden: parse_widths(self.receiver_hidden.as_deref().unwrap_or("64"), "receiver-hidden")?,
            standardize: self.standardize.unwrap_or(false),
            train,
        })
    }
}

/// Resolved attribution parameters (checkpoint location excluded).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttrSettings {
    pub riemann_steps: usize,
    /// `None` is the zero vector.
    pub baseline_vector: Option<Vec<f64>>,
    pub output: OutputKind,
    pub path: BottleneckPath,
    pub block_size: usize,
}

impl AttrParams {
    pub fn resolve(&self, blocks: &BlockParams) -> Result<AttrSettings> {
        let steps = self.riemann_steps.unwrap_or(elsym_core::attribution::DEFAULT_STEPS);
        if steps == 0 {
            return Err(CliError::Usage("--riemann-steps must be at least 1".into()));
        }
        let baseline_vector = match self.baseline_vector.as_deref().map(str::trim) {
            None | Some("zero") | Some("") => None,
            Some(s) => Some(
                s.split(',')
                    .map(|p| {
                        p.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                            CliError::Usage(format!("--baseline-vector: cannot parse {p:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let block_size = blocks.block_size.unwrap_or(SynthSpec::default().block_size);
        if block_size == 0 {
            return Err(CliError::Usage("--block-size must be positive".into()));
        }
        Ok(AttrSettings {
            riemann_steps: steps,
            baseline_vector,
            output: match self.attribution_output.unwrap_or(OutputArg::Logit) {
                OutputArg::Logit => OutputKind::Logit,
                OutputArg::Probability => OutputKind::Probability,
            },
            path: match self.bottleneck_path.unwrap_or(PathArg::Identity) {
                PathArg::Identity => BottleneckPath::Identity,
                PathArg::Relaxed => BottleneckPath::Relaxed,
            },
            block_size,
        })
    }
}

impl AttrSettings {
    pub fn to_config(&self) -> elsym_core::AttributionConfig {
        elsym_core::AttributionConfig {
            baseline: self.baseline_vector.clone().map(Tensor::vector),
            steps: self.riemann_steps,
            target: elsym_core::Target::Predicted,
            output: self.output,
            path: self.path,
        }
    }
}
