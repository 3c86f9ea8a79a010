//! Flat `key = value` run configuration.
//!
//! One document carries every tunable of every stage; unknown keys are
//! rejected so typos cannot silently fall back to defaults. Each run
//! writes the fully resolved configuration next to its outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gnn::{Fusion, GnnConfig};
use crate::mlp::MlpConfig;
use crate::sampler::SampleParams;
use crate::synth::{RelationBlock, SynthConfig};

/// Parsed `key = value` lines, order preserved. `#` starts a comment.
pub struct KvFile {
    pub path: PathBuf,
    pub pairs: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(path: &Path) -> Result<KvFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse_str(&text, path)
    }

    pub fn parse_str(text: &str, path: &Path) -> Result<KvFile> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(path, idx + 1, format!("expected `key = value`, got `{raw}`"))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(KvFile {
            path: path.to_path_buf(),
            pairs,
        })
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidParameter(format!(
            "bad boolean `{value}` for key `{key}`"
        ))),
    }
}

/// Node selection for the sampling stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleNodes {
    All,
    Splits(Vec<String>),
}

impl SampleNodes {
    pub fn parse(value: &str) -> Result<SampleNodes> {
        if value == "all" {
            return Ok(SampleNodes::All);
        }
        let mut splits = Vec::new();
        for part in value.split(',') {
            let part = part.trim();
            if !["train", "val", "test"].contains(&part) {
                return Err(Error::InvalidParameter(format!(
                    "bad sample_nodes entry `{part}` (expected all or train,val,test subsets)"
                )));
            }
            splits.push(part.to_string());
        }
        Ok(SampleNodes::Splits(splits))
    }

    fn to_value(&self) -> String {
        match self {
            SampleNodes::All => "all".to_string(),
            SampleNodes::Splits(parts) => parts.join(","),
        }
    }
}

/// Every tunable of the end-to-end run, flat.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,

    pub kmeans_k: usize,
    pub kmeans_max_iters: usize,
    pub max_tweets: usize,
    pub temporal_window: usize,
    pub feature_seed: u64,

    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_lr: f64,
    pub mlp_patience: usize,
    pub mlp_seed: u64,
    pub mlp_activated_hidden: bool,

    pub k: usize,
    pub alpha: f64,
    pub eps: f64,
    pub lambda: f64,
    /// `biased` blends PPR with similarity; `ppr` is the pure-PPR ablation.
    pub sampling: String,
    pub sample_nodes: SampleNodes,

    pub gnn_hidden: usize,
    pub gnn_layers: usize,
    pub gnn_attention_dim: usize,
    pub gnn_batch_size: usize,
    pub gnn_lr: f64,
    pub gnn_max_epochs: usize,
    pub gnn_patience: usize,
    pub gnn_seed: u64,
    pub reg_lambda: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub concat_intermediate: bool,
    pub fusion: Fusion,

    pub workers: usize,
    pub eval_split: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            kmeans_k: 20,
            kmeans_max_iters: 100,
            max_tweets: 200,
            temporal_window: 12,
            feature_seed: 7,
            mlp_hidden: 128,
            mlp_epochs: 300,
            mlp_lr: 0.1,
            mlp_patience: 10,
            mlp_seed: 1,
            mlp_activated_hidden: false,
            k: 32,
            alpha: 0.15,
            eps: 1e-4,
            lambda: 0.5,
            sampling: "biased".to_string(),
            sample_nodes: SampleNodes::All,
            gnn_hidden: 64,
            gnn_layers: 2,
            gnn_attention_dim: 32,
            gnn_batch_size: 64,
            gnn_lr: 1e-3,
            gnn_max_epochs: 200,
            gnn_patience: 10,
            gnn_seed: 2,
            reg_lambda: 1e-5,
            dropout: 0.3,
            leaky_slope: 0.01,
            concat_intermediate: true,
            fusion: Fusion::Attention,
            workers: 1,
            eval_split: "test".to_string(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let kv = KvFile::parse(path)?;
        let mut cfg = RunConfig::default();
        for (key, value) in &kv.pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "kmeans_k" => self.kmeans_k = parse_as(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse_as(key, value)?,
            "max_tweets" => self.max_tweets = parse_as(key, value)?,
            "temporal_window" => self.temporal_window = parse_as(key, value)?,
            "feature_seed" => self.feature_seed = parse_as(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_as(key, value)?,
            "mlp_epochs" => self.mlp_epochs = parse_as(key, value)?,
            "mlp_lr" => self.mlp_lr = parse_as(key, value)?,
            "mlp_patience" => self.mlp_patience = parse_as(key, value)?,
            "mlp_seed" => self.mlp_seed = parse_as(key, value)?,
            "mlp_activated_hidden" => self.mlp_activated_hidden = parse_bool(key, value)?,
            "k" => self.k = parse_as(key, value)?,
            "alpha" => self.alpha = parse_as(key, value)?,
            "eps" => self.eps = parse_as(key, value)?,
            "lambda" => self.lambda = parse_as(key, value)?,
            "sampling" => {
                if !["biased", "ppr"].contains(&value) {
                    return Err(Error::InvalidParameter(format!(
                        "bad sampling `{value}` (expected biased|ppr)"
                    )));
                }
                self.sampling = value.to_string();
            }
            "sample_nodes" => self.sample_nodes = SampleNodes::parse(value)?,
            "gnn_hidden" => self.gnn_hidden = parse_as(key, value)?,
            "gnn_layers" => self.gnn_layers = parse_as(key, value)?,
            "gnn_attention_dim" => self.gnn_attention_dim = parse_as(key, value)?,
            "gnn_batch_size" => self.gnn_batch_size = parse_as(key, value)?,
            "gnn_lr" => self.gnn_lr = parse_as(key, value)?,
            "gnn_max_epochs" => self.gnn_max_epochs = parse_as(key, value)?,
            "gnn_patience" => self.gnn_patience = parse_as(key, value)?,
            "gnn_seed" => self.gnn_seed = parse_as(key, value)?,
            "reg_lambda" => self.reg_lambda = parse_as(key, value)?,
            "dropout" => self.dropout = parse_as(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_as(key, value)?,
            "concat_intermediate" => self.concat_intermediate = parse_bool(key, value)?,
            "fusion" => self.fusion = Fusion::parse(value)?,
            "workers" => self.workers = parse_as(key, value)?,
            "eval_split" => {
                if !["train", "val", "test"].contains(&value) {
                    return Err(Error::InvalidParameter(format!("bad eval_split `{value}`")));
                }
                self.eval_split = value.to_string();
            }
            _ => {
                return Err(Error::InvalidParameter(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter("lambda must be in [0, 1]".into()));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must be in (0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidParameter("eps must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Fully resolved configuration, one sorted `key = value` per line.
    pub fn resolved_text(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("data_dir".into(), self.data_dir.display().to_string()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("kmeans_k".into(), self.kmeans_k.to_string()),
            ("kmeans_max_iters".into(), self.kmeans_max_iters.to_string()),
            ("max_tweets".into(), self.max_tweets.to_string()),
            ("temporal_window".into(), self.temporal_window.to_string()),
            ("feature_seed".into(), self.feature_seed.to_string()),
            ("mlp_hidden".into(), self.mlp_hidden.to_string()),
            ("mlp_epochs".into(), self.mlp_epochs.to_string()),
            ("mlp_lr".into(), self.mlp_lr.to_string()),
            ("mlp_patience".into(), self.mlp_patience.to_string()),
            ("mlp_seed".into(), self.mlp_seed.to_string()),
            (
                "mlp_activated_hidden".into(),
                self.mlp_activated_hidden.to_string(),
            ),
            ("k".into(), self.k.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("sampling".into(), self.sampling.clone()),
            ("sample_nodes".into(), self.sample_nodes.to_value()),
            ("gnn_hidden".into(), self.gnn_hidden.to_string()),
            ("gnn_layers".into(), self.gnn_layers.to_string()),
            (
                "gnn_attention_dim".into(),
                self.gnn_attention_dim.to_string(),
            ),
            ("gnn_batch_size".into(), self.gnn_batch_size.to_string()),
            ("gnn_lr".into(), self.gnn_lr.to_string()),
            ("gnn_max_epochs".into(), self.gnn_max_epochs.to_string()),
            ("gnn_patience".into(), self.gnn_patience.to_string()),
            ("gnn_seed".into(), self.gnn_seed.to_string()),
            ("reg_lambda".into(), self.reg_lambda.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("leaky_slope".into(), self.leaky_slope.to_string()),
            (
                "concat_intermediate".into(),
                self.concat_intermediate.to_string(),
            ),
            ("fusion".into(), self.fusion.as_str().to_string()),
            ("workers".into(), self.workers.to_string()),
            ("eval_split".into(), self.eval_split.clone()),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Sampling parameters; pure-PPR ablation forces `lambda = 1`.
    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            k: self.k,
            alpha: self.alpha,
            eps: self.eps,
            lambda: if self.sampling == "ppr" { 1.0 } else { self.lambda },
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            hidden: self.mlp_hidden,
            epochs: self.mlp_epochs,
            lr: self.mlp_lr,
            seed: self.mlp_seed,
            patience: self.mlp_patience,
            activated_hidden: self.mlp_activated_hidden,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn gnn_config(&self) -> GnnConfig {
        GnnConfig {
            hidden: self.gnn_hidden,
            layers: self.gnn_layers,
            attention_dim: self.gnn_attention_dim,
            batch_size: self.gnn_batch_size,
            lr: self.gnn_lr,
            max_epochs: self.gnn_max_epochs,
            patience: self.gnn_patience,
            seed: self.gnn_seed,
            reg_lambda: self.reg_lambda,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            concat_intermediate: self.concat_intermediate,
            fusion: self.fusion,
            workers: self.workers,
        }
    }

    /// Short name of the active ablation combination.
    pub fn ablation_tag(&self) -> String {
        let mut parts = Vec::new();
        if self.sampling == "ppr" {
            parts.push("ppr_sampling");
        }
        if !self.concat_intermediate {
            parts.push("no_concat");
        }
        if self.fusion == Fusion::Mean {
            parts.push("mean_pool");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Parse a synthetic-dataset config. Starts from the `mixed_pattern`
/// preset and applies overrides; per-relation probabilities use dotted
/// keys, e.g. `follow.p_hh = 0.006`.
pub fn parse_synth_config(path: &Path) -> Result<SynthConfig> {
    let kv = KvFile::parse(path)?;
    synth_from_pairs(&kv.pairs)
}

pub fn synth_from_pairs(pairs: &[(String, String)]) -> Result<SynthConfig> {
    let mut n = 2000usize;
    let mut seed = 0u64;
    for (key, value) in pairs {
        match key.as_str() {
            "n" => n = parse_as(key, value)?,
            "seed" => seed = parse_as(key, value)?,
            _ => {}
        }
    }
    let mut cfg = SynthConfig::mixed_pattern(n, seed);
    for (key, value) in pairs {
        match key.as_str() {
            "preset" => {
                if value != "mixed_pattern" {
                    return Err(Error::InvalidParameter(format!("unknown preset `{value}`")));
                }
            }
            "n" | "seed" => {}
            "bot_fraction" => cfg.bot_fraction = parse_as(key, value)?,
            "delta" => cfg.delta = parse_as(key, value)?,
            "desc_dim" => cfg.desc_dim = parse_as(key, value)?,
            "tweet_dim" => cfg.tweet_dim = parse_as(key, value)?,
            "num_meta_dim" => cfg.num_meta_dim = parse_as(key, value)?,
            "cat_meta_dim" => cfg.cat_meta_dim = parse_as(key, value)?,
            "tweets_per_user" => cfg.tweets_per_user = parse_as(key, value)?,
            "tweet_embed_dim" => cfg.tweet_embed_dim = parse_as(key, value)?,
            "topic_count" => cfg.topic_count = parse_as(key, value)?,
            "bot_topics" => cfg.bot_topics = parse_as(key, value)?,
            "human_topics" => cfg.human_topics = parse_as(key, value)?,
            "profile_noise" => cfg.profile_noise = parse_as(key, value)?,
            "months" => cfg.months = parse_as(key, value)?,
            "bot_rate" => cfg.bot_rate = parse_as(key, value)?,
            "human_base_rate" => cfg.human_base_rate = parse_as(key, value)?,
            "human_burst_rate" => cfg.human_burst_rate = parse_as(key, value)?,
            "human_burst_months" => cfg.human_burst_months = parse_as(key, value)?,
            "relations" => {
                cfg.relations = value
                    .split(',')
                    .map(|name| RelationBlock {
                        name: name.trim().to_string(),
                        probs: [[0.0; 2]; 2],
                    })
                    .collect();
            }
            dotted if dotted.contains('.') => {
                let (rel_name, field) = dotted.split_once('.').unwrap();
                let rel = cfg
                    .relations
                    .iter_mut()
                    .find(|r| r.name == rel_name)
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "unknown relation `{rel_name}` in key `{dotted}`"
                        ))
                    })?;
                let p: f64 = parse_as(dotted, value)?;
                match field {
                    "p_hh" => rel.probs[0][0] = p,
                    "p_hb" => rel.probs[0][1] = p,
                    "p_bh" => rel.probs[1][0] = p,
                    "p_bb" => rel.probs[1][1] = p,
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "unknown relation field `{field}` in key `{dotted}`"
                        )));
                    }
                }
            }
            other => {
                return Err(Error::InvalidParameter(format!("unknown key `{other}`")));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
