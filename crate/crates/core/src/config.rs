//! Run configuration: flat `key = value` files with dotted namespaces.
//!
//! Precedence is built-in defaults, then the config file, then command
//! line flags (`--loss.tau 0.2` mirrors `loss.tau = 0.2`). Unknown keys
//! are rejected so typos cannot silently change a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DomainSetting, SplitCounts};
use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::loss::InnerScale;
use crate::model::ProjectionOrder;
use crate::probe::ProbeConfig;
use crate::projection::{TsneConfig, TsneInit};
use crate::synth::SynthConfig;
use crate::trainer::{TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Jsonl,
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_kind: DataKind,
    pub data_path: Option<String>,
    pub synth: SynthConfig,
    pub filter_enabled: bool,
    pub split_counts: SplitCounts,
    pub split_seed: u64,
    /// Setting for single-setting commands (train, sweep, project,
    /// probe), e.g. `P+R->O`. Empty string means "all but the last
    /// domain as sources, the last as target".
    pub setting: String,
    /// Settings list for eval: `default` or `;`-separated labels.
    pub eval_settings: String,
    pub eval_seeds: Vec<u64>,
    pub eval_modes: Vec<TrainMode>,
    /// `ce_only`, `none`, or a path to a baseline table JSON.
    pub eval_baseline: String,
    pub encoder_kind: EncoderKind,
    /// 0 means "infer from the dataset embedding dimension".
    pub encoder_hidden_dim: usize,
    pub encoder_buckets: usize,
    pub encoder_ngram_min: usize,
    pub encoder_ngram_max: usize,
    pub encoder_trainable: bool,
    pub train: TrainConfig,
    pub sweep_grid: Vec<f64>,
    pub tsne: TsneConfig,
    pub project_per_domain: usize,
    pub project_method: String,
    pub probe: ProbeConfig,
    /// Cap on probe queries (0 = no cap).
    pub probe_max_queries: usize,
    pub report_format: String,
    pub report_input: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_kind: DataKind::Synthetic,
            data_path: None,
            synth: SynthConfig::default(),
            filter_enabled: false,
            split_counts: SplitCounts::default(),
            split_seed: 7,
            setting: String::new(),
            eval_settings: "default".into(),
            eval_seeds: vec![1, 2, 3],
            eval_modes: vec![TrainMode::Full, TrainMode::Probing],
            eval_baseline: "ce_only".into(),
            encoder_kind: EncoderKind::External,
            encoder_hidden_dim: 0,
            encoder_buckets: 4096,
            encoder_ngram_min: 2,
            encoder_ngram_max: 4,
            encoder_trainable: true,
            train: TrainConfig::default(),
            sweep_grid: crate::trainer::DEFAULT_TAU_GRID.to_vec(),
            tsne: TsneConfig::default(),
            project_per_domain: 500,
            project_method: "tsne".into(),
            probe: ProbeConfig::default(),
            probe_max_queries: 16,
            report_format: "text".into(),
            report_input: None,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: expected a number, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| parse_f64(key, s.trim()))
        .collect()
}

fn parse_u64_list(key: &str, v: &str) -> Result<Vec<u64>> {
    v.split(',')
        .map(|s| parse_u64(key, s.trim()))
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.kind" => {
                self.data_kind = match value {
                    "jsonl" => DataKind::Jsonl,
                    "synthetic" => DataKind::Synthetic,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "data.kind: expected jsonl or synthetic, got {value:?}"
                        )))
                    }
                }
            }
            "data.path" => self.data_path = Some(value.to_string()),
            "synth.classes" => self.synth.classes = parse_usize(key, value)?,
            "synth.domains" => self.synth.domains = parse_usize(key, value)?,
            "synth.dim" => self.synth.dim = parse_usize(key, value)?,
            "synth.signal" => self.synth.signal_strength = parse_f64(key, value)?,
            "synth.confound" => self.synth.confound_strength = parse_f64(key, value)?,
            "synth.noise" => self.synth.noise = parse_f64(key, value)?,
            "synth.flip" => self.synth.confound_flip = parse_bool(key, value)?,
            "synth.purity" => self.synth.confound_purity = parse_f64(key, value)?,
            "synth.variants" => self.synth.confound_variants = parse_usize(key, value)?,
            "synth.train_n" => self.synth.counts.train_n = parse_usize(key, value)?,
            "synth.val_n" => self.synth.counts.val_n = parse_usize(key, value)?,
            "synth.test_n" => self.synth.counts.test_n = parse_usize(key, value)?,
            "synth.seed" => self.synth.seed = parse_u64(key, value)?,
            "filter.enabled" => self.filter_enabled = parse_bool(key, value)?,
            "split.train_n" => self.split_counts.train_n = parse_usize(key, value)?,
            "split.val_n" => self.split_counts.val_n = parse_usize(key, value)?,
            "split.test_n" => self.split_counts.test_n = parse_usize(key, value)?,
            "split.seed" => self.split_seed = parse_u64(key, value)?,
            "setting" => self.setting = value.to_string(),
            "eval.settings" => self.eval_settings = value.to_string(),
            "eval.seeds" => self.eval_seeds = parse_u64_list(key, value)?,
            "eval.modes" => {
                self.eval_modes = value
                    .split(',')
                    .map(|m| match m.trim() {
                        "full" => Ok(TrainMode::Full),
                        "probing" => Ok(TrainMode::Probing),
                        other => Err(Error::InvalidConfig(format!(
                            "eval.modes: expected full or probing, got {other:?}"
                        ))),
                    })
                    .collect::<Result<_>>()?
            }
            "eval.baseline" => self.eval_baseline = value.to_string(),
            "encoder.kind" => {
                self.encoder_kind = match value {
                    "external" => EncoderKind::External,
                    "hashed_ngram" => EncoderKind::HashedNgram,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "encoder.kind: expected external or hashed_ngram, got {value:?}"
                        )))
                    }
                }
            }
            "encoder.hidden_dim" => self.encoder_hidden_dim = parse_usize(key, value)?,
            "encoder.buckets" => self.encoder_buckets = parse_usize(key, value)?,
            "encoder.ngram_min" => self.encoder_ngram_min = parse_usize(key, value)?,
            "encoder.ngram_max" => self.encoder_ngram_max = parse_usize(key, value)?,
            "encoder.trainable" => self.encoder_trainable = parse_bool(key, value)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_usize(key, value)?,
            "train.seed" => self.train.seed = parse_u64(key, value)?,
            "train.mode" => {
                self.train.mode = match value {
                    "full" => TrainMode::Full,
                    "probing" => TrainMode::Probing,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "train.mode: expected full or probing, got {value:?}"
                        )))
                    }
                }
            }
            "train.probe_strict" => self.train.probe_strict = parse_bool(key, value)?,
            "train.stratify_domains" => self.train.stratify_domains = parse_bool(key, value)?,
            "loss.tau" => self.train.loss.tau = parse_f64(key, value)?,
            "loss.scl_weight" => self.train.loss.scl_weight = parse_f64(key, value)?,
            "loss.normalize_z" => self.train.loss.normalize_z = parse_bool(key, value)?,
            "loss.inner_scale" => {
                self.train.loss.inner_scale = match value {
                    "positives" => InnerScale::Positives,
                    "batch_size" => InnerScale::BatchSize,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "loss.inner_scale: expected positives or batch_size, got {value:?}"
                        )))
                    }
                }
            }
            "adam.lr" => self.train.adam.lr = parse_f64(key, value)?,
            "adam.beta1" => self.train.adam.beta1 = parse_f64(key, value)?,
            "adam.beta2" => self.train.adam.beta2 = parse_f64(key, value)?,
            "adam.epsilon" => self.train.adam.epsilon = parse_f64(key, value)?,
            "model.proj_dim" => self.train.proj_dim = parse_usize(key, value)?,
            "model.order" => {
                self.train.proj_order = match value {
                    "tanh_ln" => ProjectionOrder::TanhThenLayerNorm,
                    "ln_tanh" => ProjectionOrder::LayerNormThenTanh,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "model.order: expected tanh_ln or ln_tanh, got {value:?}"
                        )))
                    }
                }
            }
            "sweep.grid" => self.sweep_grid = parse_f64_list(key, value)?,
            "tsne.perplexity" => self.tsne.perplexity = parse_f64(key, value)?,
            "tsne.iterations" => self.tsne.iterations = parse_usize(key, value)?,
            "tsne.learning_rate" => self.tsne.learning_rate = parse_f64(key, value)?,
            "tsne.early_exaggeration" => self.tsne.early_exaggeration = parse_f64(key, value)?,
            "tsne.seed" => self.tsne.seed = parse_u64(key, value)?,
            "tsne.init" => {
                self.tsne.init = match value {
                    "pca" => TsneInit::Pca,
                    "random" => TsneInit::Random,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "tsne.init: expected pca or random, got {value:?}"
                        )))
                    }
                }
            }
            "project.per_domain" => self.project_per_domain = parse_usize(key, value)?,
            "project.method" => match value {
                "tsne" | "pca" => self.project_method = value.to_string(),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "project.method: expected tsne or pca, got {value:?}"
                    )))
                }
            },
            "probe.endpoint" => self.probe.endpoint = value.to_string(),
            "probe.model" => self.probe.model = value.to_string(),
            "probe.labels" => {
                self.probe.labels = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "probe.exemplars_per_label" => {
                self.probe.exemplars_per_label = parse_usize(key, value)?
            }
            "probe.temperature" => self.probe.temperature = parse_f64(key, value)?,
            "probe.timeout_secs" => self.probe.timeout_secs = parse_u64(key, value)?,
            "probe.max_retries" => self.probe.max_retries = parse_usize(key, value)?,
            "probe.backoff_ms" => self.probe.backoff_ms = parse_u64(key, value)?,
            "probe.concurrency" => self.probe.concurrency = parse_usize(key, value)?,
            "probe.token_env" => self.probe.token_env = value.to_string(),
            "probe.max_queries" => self.probe_max_queries = parse_usize(key, value)?,
            "report.format" => match value {
                "text" | "csv" | "json" => self.report_format = value.to_string(),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "report.format: expected text, csv, or json, got {value:?}"
                    )))
                }
            },
            "report.input" => self.report_input = Some(value.to_string()),
            _ => {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Validate the cross-field invariants that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.data_kind == DataKind::Jsonl && self.data_path.is_none() {
            return Err(Error::InvalidConfig(
                "data.kind = jsonl requires data.path".into(),
            ));
        }
        self.train.validate()?;
        self.synth.validate()?;
        if self.sweep_grid.is_empty() {
            return Err(Error::InvalidConfig("sweep.grid must not be empty".into()));
        }
        if let Some(&bad) = self.sweep_grid.iter().find(|&&t| !(t > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "sweep.grid contains a nonpositive temperature: {bad}"
            )));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::InvalidConfig("eval.seeds must not be empty".into()));
        }
        self.probe.validate()?;
        Ok(())
    }

    /// The resolved configuration as sorted flat pairs; this is what run
    /// manifests record, and feeding the pairs back through `set`
    /// reproduces the config.
    pub fn to_flat_pairs(&self) -> Vec<(String, String)> {
        let modes: Vec<&str> = self.eval_modes.iter().map(|m| m.as_str()).collect();
        let fmt_f64 = |v: f64| format!("{v}");
        let join_f64 = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut pairs: Vec<(String, String)> = vec![
            (
                "data.kind".into(),
                match self.data_kind {
                    DataKind::Jsonl => "jsonl".into(),
                    DataKind::Synthetic => "synthetic".into(),
                },
            ),
            ("synth.classes".into(), self.synth.classes.to_string()),
            ("synth.domains".into(), self.synth.domains.to_string()),
            ("synth.dim".into(), self.synth.dim.to_string()),
            ("synth.signal".into(), fmt_f64(self.synth.signal_strength)),
            ("synth.confound".into(), fmt_f64(self.synth.confound_strength)),
            ("synth.noise".into(), fmt_f64(self.synth.noise)),
            ("synth.flip".into(), self.synth.confound_flip.to_string()),
            ("synth.purity".into(), fmt_f64(self.synth.confound_purity)),
            ("synth.variants".into(), self.synth.confound_variants.to_string()),
            ("synth.train_n".into(), self.synth.counts.train_n.to_string()),
            ("synth.val_n".into(), self.synth.counts.val_n.to_string()),
            ("synth.test_n".into(), self.synth.counts.test_n.to_string()),
            ("synth.seed".into(), self.synth.seed.to_string()),
            ("filter.enabled".into(), self.filter_enabled.to_string()),
            ("split.train_n".into(), self.split_counts.train_n.to_string()),
            ("split.val_n".into(), self.split_counts.val_n.to_string()),
            ("split.test_n".into(), self.split_counts.test_n.to_string()),
            ("split.seed".into(), self.split_seed.to_string()),
            ("setting".into(), self.setting.clone()),
            ("eval.settings".into(), self.eval_settings.clone()),
            (
                "eval.seeds".into(),
                self.eval_seeds
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("eval.modes".into(), modes.join(",")),
            ("eval.baseline".into(), self.eval_baseline.clone()),
            (
                "encoder.kind".into(),
                match self.encoder_kind {
                    EncoderKind::External => "external".into(),
                    EncoderKind::HashedNgram => "hashed_ngram".into(),
                },
            ),
            ("encoder.hidden_dim".into(), self.encoder_hidden_dim.to_string()),
            ("encoder.buckets".into(), self.encoder_buckets.to_string()),
            ("encoder.ngram_min".into(), self.encoder_ngram_min.to_string()),
            ("encoder.ngram_max".into(), self.encoder_ngram_max.to_string()),
            ("encoder.trainable".into(), self.encoder_trainable.to_string()),
            ("train.epochs".into(), self.train.epochs.to_string()),
            ("train.batch_size".into(), self.train.batch_size.to_string()),
            ("train.seed".into(), self.train.seed.to_string()),
            ("train.mode".into(), self.train.mode.as_str().into()),
            ("train.probe_strict".into(), self.train.probe_strict.to_string()),
            (
                "train.stratify_domains".into(),
                self.train.stratify_domains.to_string(),
            ),
            ("loss.tau".into(), fmt_f64(self.train.loss.tau)),
            ("loss.scl_weight".into(), fmt_f64(self.train.loss.scl_weight)),
            ("loss.normalize_z".into(), self.train.loss.normalize_z.to_string()),
            (
                "loss.inner_scale".into(),
                match self.train.loss.inner_scale {
                    InnerScale::Positives => "positives".into(),
                    InnerScale::BatchSize => "batch_size".into(),
                },
            ),
            ("adam.lr".into(), fmt_f64(self.train.adam.lr)),
            ("adam.beta1".into(), fmt_f64(self.train.adam.beta1)),
            ("adam.beta2".into(), fmt_f64(self.train.adam.beta2)),
            ("adam.epsilon".into(), fmt_f64(self.train.adam.epsilon)),
            ("model.proj_dim".into(), self.train.proj_dim.to_string()),
            (
                "model.order".into(),
                match self.train.proj_order {
                    ProjectionOrder::TanhThenLayerNorm => "tanh_ln".into(),
                    ProjectionOrder::LayerNormThenTanh => "ln_tanh".into(),
                },
            ),
            ("sweep.grid".into(), join_f64(&self.sweep_grid)),
            ("tsne.perplexity".into(), fmt_f64(self.tsne.perplexity)),
            ("tsne.iterations".into(), self.tsne.iterations.to_string()),
            ("tsne.learning_rate".into(), fmt_f64(self.tsne.learning_rate)),
            (
                "tsne.early_exaggeration".into(),
                fmt_f64(self.tsne.early_exaggeration),
            ),
            ("tsne.seed".into(), self.tsne.seed.to_string()),
            (
                "tsne.init".into(),
                match self.tsne.init {
                    TsneInit::Pca => "pca".into(),
                    TsneInit::Random => "random".into(),
                },
            ),
            ("project.per_domain".into(), self.project_per_domain.to_string()),
            ("project.method".into(), self.project_method.clone()),
            ("probe.endpoint".into(), self.probe.endpoint.clone()),
            ("probe.model".into(), self.probe.model.clone()),
            ("probe.labels".into(), self.probe.labels.join(",")),
            (
                "probe.exemplars_per_label".into(),
                self.probe.exemplars_per_label.to_string(),
            ),
            ("probe.temperature".into(), fmt_f64(self.probe.temperature)),
            ("probe.timeout_secs".into(), self.probe.timeout_secs.to_string()),
            ("probe.max_retries".into(), self.probe.max_retries.to_string()),
            ("probe.backoff_ms".into(), self.probe.backoff_ms.to_string()),
            ("probe.concurrency".into(), self.probe.concurrency.to_string()),
            ("probe.token_env".into(), self.probe.token_env.clone()),
            ("probe.max_queries".into(), self.probe_max_queries.to_string()),
            ("report.format".into(), self.report_format.clone()),
        ];
        if let Some(p) = &self.data_path {
            pairs.push(("data.path".into(), p.clone()));
        }
        if let Some(p) = &self.report_input {
            pairs.push(("report.input".into(), p.clone()));
        }
        pairs.sort();
        pairs
    }

    /// Encoder config resolved against the loaded dataset.
    pub fn resolve_encoder(&self, embedding_dim: Option<usize>) -> Result<EncoderConfig> {
        let hidden_dim = if self.encoder_hidden_dim > 0 {
            self.encoder_hidden_dim
        } else {
            match self.encoder_kind {
                EncoderKind::External => embedding_dim.ok_or_else(|| {
                    Error::InvalidConfig(
                        "external encoder needs dataset embeddings (or set encoder.hidden_dim)"
                            .into(),
                    )
                })?,
                EncoderKind::HashedNgram => 64,
            }
        };
        let mut config = match self.encoder_kind {
            EncoderKind::External => EncoderConfig::external(hidden_dim),
            EncoderKind::HashedNgram => EncoderConfig::hashed(
                hidden_dim,
                self.encoder_buckets,
                self.encoder_ngram_min,
                self.encoder_ngram_max,
            ),
        };
        config.trainable = self.encoder_trainable && self.encoder_kind == EncoderKind::HashedNgram;
        config.validate()?;
        Ok(config)
    }
}

/// Parse one setting label like `P+R->O` against the dataset's domain
/// names. An empty target side is the upper-bound setting.
pub fn parse_setting(text: &str, domain_names: &[String]) -> Result<DomainSetting> {
    let (src, tgt) = text.split_once("->").ok_or_else(|| {
        Error::InvalidConfig(format!("setting {text:?} must look like SRC+SRC->TGT"))
    })?;
    let index_of = |name: &str| -> Result<usize> {
        domain_names
            .iter()
            .position(|n| n == name.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown domain {:?}", name.trim())))
    };
    let sources = src
        .split('+')
        .filter(|s| !s.trim().is_empty())
        .map(index_of)
        .collect::<Result<Vec<_>>>()?;
    let targets = tgt
        .split('+')
        .filter(|s| !s.trim().is_empty())
        .map(index_of)
        .collect::<Result<Vec<_>>>()?;
    let setting = DomainSetting::new(sources, targets);
    setting.validate(domain_names.len())?;
    Ok(setting)
}

/// Load a config file: `key = value` lines, `#` comments, blank lines
/// ignored.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = RunConfig::default();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let stripped = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected key = value, got {stripped:?}"),
        })?;
        config
            .set(key.trim(), value.trim())
            .map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
    }
    Ok(config)
}
