//! End-to-end pipeline: features -> pretrain -> sample -> train -> eval
//! -> homophily report.
//!
//! Every stage output is content-addressed by a hash over the stage's
//! configuration keys and the digests of its inputs; a rerun with an
//! unchanged hash skips the stage and reuses the artifact on disk. The
//! fully resolved configuration is written next to the outputs on every
//! run.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SampleNodes};
use crate::error::{at_stage, Error, Result};
use crate::features::{
    assemble_features, category_feature, load_monthly_counts, load_tweet_embeddings,
    temporal_feature, FeatureMatrix,
};
use crate::gnn::{evaluate, train, Metrics};
use crate::graph::{load_graph, load_labels, HeteroGraph, LabelSet};
use crate::io::read_matrix;
use crate::mlp::{train_mlp, MlpModel};
use crate::sampler::{
    homophily_report_graph, homophily_report_subgraphs, load_subgraphs, sample_subgraphs,
    save_subgraphs,
};

/// Fixed file names inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
    pub desc: PathBuf,
    pub tweet: PathBuf,
    pub num_meta: PathBuf,
    pub cat_meta: PathBuf,
    pub tweet_embeds: PathBuf,
    pub tweet_owners: PathBuf,
    pub monthly_counts: PathBuf,
}

impl DataPaths {
    pub fn new(dir: &Path) -> DataPaths {
        DataPaths {
            edges: dir.join("edges.tsv"),
            labels: dir.join("labels.tsv"),
            splits: dir.join("splits.txt"),
            desc: dir.join("desc.bin"),
            tweet: dir.join("tweet.bin"),
            num_meta: dir.join("num_meta.bin"),
            cat_meta: dir.join("cat_meta.bin"),
            tweet_embeds: dir.join("tweet_embeds.bin"),
            tweet_owners: dir.join("tweet_owners.tsv"),
            monthly_counts: dir.join("monthly_counts.tsv"),
        }
    }
}

/// Scan an edge TSV for the highest node id and the distinct relation
/// names (sorted lexicographically).
pub fn infer_edges_meta(edges_path: &Path) -> Result<(usize, Vec<String>)> {
    let file = File::open(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let mut max_id = 0usize;
    let mut any = false;
    let mut relations = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(edges_path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(d), Some(r)) => {
                let s: usize = s.parse().map_err(|_| {
                    Error::parse(edges_path, idx + 1, format!("bad node id `{s}`"))
                })?;
                let d: usize = d.parse().map_err(|_| {
                    Error::parse(edges_path, idx + 1, format!("bad node id `{d}`"))
                })?;
                max_id = max_id.max(s).max(d);
                any = true;
                relations.insert(r.to_string());
            }
            _ => {
                return Err(Error::parse(edges_path, idx + 1, "expected three fields"));
            }
        }
    }
    let n = if any { max_id + 1 } else { 0 };
    Ok((n, relations.into_iter().collect()))
}

/// Highest node id mentioned in the labels file.
fn max_labeled_id(labels_path: &Path) -> Result<usize> {
    let file = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let mut max_id = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(labels_path, e))?;
        if line.is_empty() {
            continue;
        }
        let id = line.split('\t').next().unwrap_or("");
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse(labels_path, idx + 1, format!("bad node id `{id}`")))?;
        max_id = max_id.max(id);
    }
    Ok(max_id)
}

/// Load the graph plus labels from a dataset directory, inferring the
/// node count from the edge and label files.
pub fn load_dataset(paths: &DataPaths) -> Result<(HeteroGraph, LabelSet)> {
    let (edge_n, relations) = infer_edges_meta(&paths.edges)?;
    let n = edge_n.max(max_labeled_id(&paths.labels)? + 1);
    let graph = load_graph(&paths.edges, n, &relations)?;
    let labels = load_labels(&paths.labels, &paths.splits, n)?;
    Ok((graph, labels))
}

/// Assemble the feature matrix from a dataset directory.
pub fn build_features(paths: &DataPaths, cfg: &RunConfig) -> Result<FeatureMatrix> {
    let desc = read_matrix(&paths.desc)?;
    let n = desc.nrows();
    let tweet = read_matrix(&paths.tweet)?;
    let num_meta = read_matrix(&paths.num_meta)?;
    let cat_meta = read_matrix(&paths.cat_meta)?;
    let embeds = load_tweet_embeddings(&paths.tweet_embeds, &paths.tweet_owners, n)?;
    let category = category_feature(
        &embeds,
        cfg.kmeans_k,
        cfg.max_tweets,
        cfg.kmeans_max_iters,
        cfg.feature_seed,
    )?;
    let counts = load_monthly_counts(&paths.monthly_counts)?;
    let temporal = temporal_feature(&counts, n, cfg.temporal_window)?;
    assemble_features(vec![
        ("description".to_string(), desc),
        ("tweet".to_string(), tweet),
        ("num_meta".to_string(), num_meta),
        ("cat_meta".to_string(), cat_meta),
        ("category".to_string(), category),
        ("temporal".to_string(), temporal),
    ])
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn stage_hash(parts: &[String]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hex(&hasher.finalize())
}

/// An artifact is fresh when it exists and its recorded stage hash
/// matches the current one.
fn is_fresh(artifact: &Path, hash: &str) -> bool {
    let hash_path = artifact.with_extension(
        artifact
            .extension()
            .map(|e| format!("{}.hash", e.to_string_lossy()))
            .unwrap_or_else(|| "hash".to_string()),
    );
    artifact.exists()
        && std::fs::read_to_string(hash_path)
            .map(|h| h.trim() == hash)
            .unwrap_or(false)
}

fn record_hash(artifact: &Path, hash: &str) -> Result<()> {
    let hash_path = artifact.with_extension(
        artifact
            .extension()
            .map(|e| format!("{}.hash", e.to_string_lossy()))
            .unwrap_or_else(|| "hash".to_string()),
    );
    std::fs::write(&hash_path, hash).map_err(|e| Error::io(hash_path, e))
}

#[derive(Debug, Clone)]
pub struct StageStatus {
    pub name: String,
    pub skipped: bool,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub stages: Vec<StageStatus>,
    pub metrics: Metrics,
    pub metrics_path: PathBuf,
    pub homophily_path: PathBuf,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    std::fs::write(cfg.out_dir.join("resolved.cfg"), cfg.resolved_text())
        .map_err(|e| Error::io(cfg.out_dir.join("resolved.cfg"), e))?;

    let paths = DataPaths::new(&cfg.data_dir);
    let mut stages = Vec::new();

    // features
    let features_path = cfg.out_dir.join("features.fm");
    let features = {
        let stage = "features";
        let hash = at_stage(
            stage,
            (|| {
                Ok(stage_hash(&[
                    stage.to_string(),
                    cfg.kmeans_k.to_string(),
                    cfg.kmeans_max_iters.to_string(),
                    cfg.max_tweets.to_string(),
                    cfg.temporal_window.to_string(),
                    cfg.feature_seed.to_string(),
                    file_digest(&paths.desc)?,
                    file_digest(&paths.tweet)?,
                    file_digest(&paths.num_meta)?,
                    file_digest(&paths.cat_meta)?,
                    file_digest(&paths.tweet_embeds)?,
                    file_digest(&paths.tweet_owners)?,
                    file_digest(&paths.monthly_counts)?,
                ]))
            })(),
        )?;
        if is_fresh(&features_path, &hash) {
            stages.push(StageStatus {
                name: stage.into(),
                skipped: true,
            });
            at_stage(stage, FeatureMatrix::load(&features_path))?
        } else {
            let features = at_stage(stage, build_features(&paths, cfg))?;
            at_stage(stage, features.save(&features_path))?;
            at_stage(stage, record_hash(&features_path, &hash))?;
            stages.push(StageStatus {
                name: stage.into(),
                skipped: false,
            });
            features
        }
    };

    let (graph, labels) = at_stage("load", load_dataset(&paths))?;
    if labels.n() != features.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} labeled nodes vs {} feature rows",
            labels.n(),
            features.n()
        )));
    }

    // pretrain
    let mlp_path = cfg.out_dir.join("mlp.bin");
    let mlp = {
        let stage = "pretrain";
        let hash = at_stage(
            stage,
            (|| {
                Ok(stage_hash(&[
                    stage.to_string(),
                    cfg.mlp_hidden.to_string(),
                    cfg.mlp_epochs.to_string(),
                    cfg.mlp_lr.to_string(),
                    cfg.mlp_patience.to_string(),
                    cfg.mlp_seed.to_string(),
                    cfg.mlp_activated_hidden.to_string(),
                    cfg.leaky_slope.to_string(),
                    file_digest(&features_path)?,
                    file_digest(&paths.labels)?,
                    file_digest(&paths.splits)?,
                ]))
            })(),
        )?;
        if is_fresh(&mlp_path, &hash) {
            stages.push(StageStatus {
                name: stage.into(),
                skipped: true,
            });
            at_stage(stage, MlpModel::load(&mlp_path))?
        } else {
            let (model, _) = at_stage(stage, train_mlp(&features, &labels, &cfg.mlp_config()))?;
            at_stage(stage, model.save(&mlp_path))?;
            at_stage(stage, record_hash(&mlp_path, &hash))?;
            stages.push(StageStatus {
                name: stage.into(),
                skipped: false,
            });
            model
        }
    };

    // sample
    let cache_path = cfg.out_dir.join("cache.bsg");
    {
        let stage = "sample";
        let params = cfg.sample_params();
        let hash = at_stage(
            stage,
            (|| {
                Ok(stage_hash(&[
                    stage.to_string(),
                    params.k.to_string(),
                    params.alpha.to_string(),
                    params.eps.to_string(),
                    params.lambda.to_string(),
                    format!("{:?}", cfg.sample_nodes),
                    file_digest(&paths.edges)?,
                    file_digest(&paths.splits)?,
                    file_digest(&features_path)?,
                    file_digest(&mlp_path)?,
                ]))
            })(),
        )?;
        if is_fresh(&cache_path, &hash) {
            stages.push(StageStatus {
                name: stage.into(),
                skipped: true,
            });
        } else {
            let starts: Vec<usize> = match &cfg.sample_nodes {
                SampleNodes::All => (0..graph.node_count()).collect(),
                SampleNodes::Splits(names) => {
                    let mut ids = Vec::new();
                    for name in names {
                        ids.extend_from_slice(at_stage(stage, labels.split(name))?);
                    }
                    ids.sort_unstable();
                    ids.dedup();
                    ids
                }
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            let subs = at_stage(
                stage,
                pool.install(|| sample_subgraphs(&graph, &mlp, &features, &starts, &params)),
            )?;
            at_stage(
                stage,
                save_subgraphs(&cache_path, graph.relation_names(), &subs),
            )?;
            at_stage(stage, record_hash(&cache_path, &hash))?;
            stages.push(StageStatus {
                name: stage.into(),
                skipped: false,
            });
        }
    }

    // train
    let gnn_path = cfg.out_dir.join("gnn.bin");
    let log_path = cfg.out_dir.join("train.jsonl");
    {
        let stage = "train";
        let gnn_cfg = cfg.gnn_config();
        let hash = at_stage(
            stage,
            (|| {
                Ok(stage_hash(&[
                    stage.to_string(),
                    gnn_cfg.hidden.to_string(),
                    gnn_cfg.layers.to_string(),
                    gnn_cfg.attention_dim.to_string(),
                    gnn_cfg.batch_size.to_string(),
                    gnn_cfg.lr.to_string(),
                    gnn_cfg.max_epochs.to_string(),
                    gnn_cfg.patience.to_string(),
                    gnn_cfg.seed.to_string(),
                    gnn_cfg.reg_lambda.to_string(),
                    gnn_cfg.dropout.to_string(),
                    gnn_cfg.leaky_slope.to_string(),
                    gnn_cfg.concat_intermediate.to_string(),
                    gnn_cfg.fusion.as_str().to_string(),
                    file_digest(&cache_path)?,
                    file_digest(&features_path)?,
                    file_digest(&paths.labels)?,
                    file_digest(&paths.splits)?,
                ]))
            })(),
        )?;
        if is_fresh(&gnn_path, &hash) {
            stages.push(StageStatus {
                name: stage.into(),
                skipped: true,
            });
        } else {
            let cache = at_stage(stage, load_subgraphs(&cache_path))?;
            let outcome = at_stage(stage, train(&cache, &features, &labels, &gnn_cfg))?;
            at_stage(stage, outcome.model.save(&gnn_path))?;
            let mut log = String::new();
            for entry in &outcome.log {
                log.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
                log.push('\n');
            }
            std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
            at_stage(stage, record_hash(&gnn_path, &hash))?;
            stages.push(StageStatus {
                name: stage.into(),
                skipped: false,
            });
        }
    }

    // eval
    let metrics_path = cfg
        .out_dir
        .join(format!("metrics_{}.json", cfg.ablation_tag()));
    let metrics = {
        let stage = "eval";
        let hash = at_stage(
            stage,
            (|| {
                Ok(stage_hash(&[
                    stage.to_string(),
                    cfg.eval_split.clone(),
                    cfg.gnn_batch_size.to_string(),
                    file_digest(&gnn_path)?,
                    file_digest(&cache_path)?,
                    file_digest(&features_path)?,
                    file_digest(&paths.labels)?,
                    file_digest(&paths.splits)?,
                ]))
            })(),
        )?;
        if is_fresh(&metrics_path, &hash) {
            stages.push(StageStatus {
                name: stage.into(),
                skipped: true,
            });
            let text = std::fs::read_to_string(&metrics_path)
                .map_err(|e| Error::io(&metrics_path, e))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::format(&metrics_path, e.to_string()))?;
            Metrics {
                accuracy: value["accuracy"].as_f64().unwrap_or(f64::NAN),
                f1: value["f1"].as_f64().unwrap_or(f64::NAN),
                n: value["n"].as_u64().unwrap_or(0) as usize,
            }
        } else {
            let model = at_stage(stage, crate::gnn::GnnModel::load(&gnn_path))?;
            let cache = at_stage(stage, load_subgraphs(&cache_path))?;
            let metrics = at_stage(
                stage,
                evaluate(
                    &model,
                    &cache,
                    &features,
                    &labels,
                    &cfg.eval_split,
                    cfg.gnn_batch_size,
                ),
            )?;
            write_metrics_json(&metrics_path, &metrics, &cfg.eval_split)?;
            at_stage(stage, record_hash(&metrics_path, &hash))?;
            stages.push(StageStatus {
                name: stage.into(),
                skipped: false,
            });
            metrics
        }
    };

    // homophily report over the original graph and the biased selections
    let homophily_path = cfg.out_dir.join("homophily.json");
    {
        let stage = "homophily-report";
        let hash = at_stage(
            stage,
            (|| {
                Ok(stage_hash(&[
                    stage.to_string(),
                    file_digest(&paths.edges)?,
                    file_digest(&paths.labels)?,
                    file_digest(&cache_path)?,
                ]))
            })(),
        )?;
        if is_fresh(&homophily_path, &hash) {
            stages.push(StageStatus {
                name: stage.into(),
                skipped: true,
            });
        } else {
            let cache = at_stage(stage, load_subgraphs(&cache_path))?;
            let graph_report = at_stage(stage, homophily_report_graph(&graph, &labels))?;
            let sub_report =
                at_stage(stage, homophily_report_subgraphs(&cache.subgraphs, &labels))?;
            let doc = serde_json::json!({
                "graph": graph_report,
                "subgraphs": sub_report,
            });
            let file = File::create(&homophily_path).map_err(|e| Error::io(&homophily_path, e))?;
            let mut w = std::io::BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, &doc)
                .map_err(|e| Error::format(&homophily_path, e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(&homophily_path, e))?;
            at_stage(stage, record_hash(&homophily_path, &hash))?;
            stages.push(StageStatus {
                name: stage.into(),
                skipped: false,
            });
        }
    }

    Ok(PipelineOutcome {
        stages,
        metrics,
        metrics_path,
        homophily_path,
    })
}

/// Metrics JSON in the fixed external shape.
pub fn write_metrics_json(path: &Path, metrics: &Metrics, split: &str) -> Result<()> {
    let doc = serde_json::json!({
        "accuracy": metrics.accuracy,
        "f1": metrics.f1,
        "split": split,
        "n": metrics.n,
    });
    let text = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::synth::{generate_raw, write_dataset, SynthConfig};

    fn small_run_config(data_dir: &Path, out_dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data_dir = data_dir.to_path_buf();
        cfg.out_dir = out_dir.to_path_buf();
        cfg.kmeans_k = 4;
        cfg.kmeans_max_iters = 20;
        cfg.mlp_hidden = 8;
        cfg.mlp_epochs = 40;
        cfg.mlp_lr = 0.3;
        cfg.k = 4;
        cfg.gnn_hidden = 4;
        cfg.gnn_layers = 1;
        cfg.gnn_attention_dim = 3;
        cfg.gnn_batch_size = 16;
        cfg.gnn_lr = 0.05;
        cfg.gnn_max_epochs = 4;
        cfg
    }

    #[test]
    fn pipeline_runs_and_reruns_skip_stages() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let out_dir = dir.path().join("out");
        let mut synth = SynthConfig::mixed_pattern(60, 5);
        synth.tweets_per_user = 8;
        let data = generate_raw(&synth).unwrap();
        write_dataset(&data_dir, &data).unwrap();

        let cfg = small_run_config(&data_dir, &out_dir);
        let first = run_pipeline(&cfg).unwrap();
        assert!(first.stages.iter().all(|s| !s.skipped));
        assert!(first.metrics.accuracy.is_finite());
        assert!(first.metrics_path.exists());
        assert!(first.homophily_path.exists());
        assert!(out_dir.join("resolved.cfg").exists());

        let gnn_bytes = std::fs::read(out_dir.join("gnn.bin")).unwrap();
        let second = run_pipeline(&cfg).unwrap();
        assert!(second.stages.iter().all(|s| s.skipped), "{:?}", second.stages);
        assert_eq!(std::fs::read(out_dir.join("gnn.bin")).unwrap(), gnn_bytes);
        assert_eq!(second.metrics.accuracy, first.metrics.accuracy);

        // Changing one knob invalidates downstream stages but not features.
        let mut cfg2 = cfg.clone();
        cfg2.apply("gnn_seed", "9").unwrap();
        let third = run_pipeline(&cfg2).unwrap();
        let by_name: std::collections::HashMap<_, _> = third
            .stages
            .iter()
            .map(|s| (s.name.clone(), s.skipped))
            .collect();
        assert!(by_name["features"]);
        assert!(by_name["pretrain"]);
        assert!(by_name["sample"]);
        assert!(!by_name["train"]);
    }

    #[test]
    fn ablation_metrics_filename_carries_tag() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let out_dir = dir.path().join("out");
        let mut synth = SynthConfig::mixed_pattern(50, 6);
        synth.tweets_per_user = 8;
        let data = generate_raw(&synth).unwrap();
        write_dataset(&data_dir, &data).unwrap();

        let mut cfg = small_run_config(&data_dir, &out_dir);
        cfg.apply("fusion", "mean").unwrap();
        let outcome = run_pipeline(&cfg).unwrap();
        assert!(outcome
            .metrics_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .contains("mean_pool"));
        let text = std::fs::read_to_string(&outcome.metrics_path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["split"], "test");
        assert!(value["accuracy"].is_f64());
    }

    #[test]
    fn infer_edges_meta_scans_ids_and_relations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        std::fs::write(&path, "0\t5\tz\n3\t1\ta\n").unwrap();
        let (n, relations) = infer_edges_meta(&path).unwrap();
        assert_eq!(n, 6);
        assert_eq!(relations, vec!["a".to_string(), "z".to_string()]);
    }
}
