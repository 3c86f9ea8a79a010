//! Command-line interface over the pipeline stages.
//!
//! Every subcommand is a thin wrapper around the library; `pipeline` runs
//! the stages end to end with content-addressed skipping. Failures print
//! one machine-parsable JSON line to stderr and exit non-zero.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use botsub::config::{parse_synth_config, RunConfig, SampleNodes};
use botsub::error::Error;
use botsub::features::{
    assemble_features, category_feature, load_monthly_counts, load_tweet_embeddings,
    temporal_feature, FeatureMatrix,
};
use botsub::gnn::{evaluate, train, GnnModel};
use botsub::graph::{load_graph, load_labels, load_labels_only};
use botsub::io::read_matrix;
use botsub::mlp::{train_mlp, MlpConfig, MlpModel};
use botsub::pipeline::{infer_edges_meta, run_pipeline, write_metrics_json};
use botsub::ppr::approx_ppr;
use botsub::sampler::{
    homophily_report_graph, homophily_report_subgraphs, load_subgraphs, sample_subgraphs,
    save_subgraphs, SampleParams,
};
use botsub::synth::{generate_raw, write_dataset};

#[derive(Parser)]
#[command(name = "botsub", version, about = "Biased-subgraph bot detection pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled dataset into a directory.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Assemble the per-node feature matrix from precomputed inputs.
    Features {
        #[arg(long)]
        desc: PathBuf,
        #[arg(long)]
        tweet: PathBuf,
        #[arg(long = "num-meta")]
        num_meta: PathBuf,
        #[arg(long = "cat-meta")]
        cat_meta: PathBuf,
        #[arg(long = "tweet-embeds")]
        tweet_embeds: PathBuf,
        #[arg(long = "tweet-owners")]
        tweet_owners: PathBuf,
        #[arg(long = "monthly-counts")]
        monthly_counts: PathBuf,
        #[arg(long = "kmeans-k", default_value_t = 20)]
        kmeans_k: usize,
        #[arg(long = "kmeans-iters", default_value_t = 100)]
        kmeans_iters: usize,
        #[arg(long = "max-tweets", default_value_t = 200)]
        max_tweets: usize,
        #[arg(long, default_value_t = 12)]
        window: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the MLP pre-classifier on train+validation features.
    Pretrain {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "activated-hidden", default_value_t = false)]
        activated_hidden: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Personalized PageRank scores from one start node over one relation.
    Ppr {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        relation: String,
        #[arg(long)]
        start: usize,
        #[arg(long, default_value_t = 0.15)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Node count; inferred from the edge file when omitted.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated relation registry; inferred (sorted) when omitted.
        #[arg(long)]
        relations: Option<String>,
        /// Walk over in-neighbors instead of out-neighbors.
        #[arg(long, default_value_t = false)]
        reverse: bool,
        /// Output TSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and cache biased subgraphs.
    Sample {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 32)]
        k: usize,
        #[arg(long, default_value_t = 0.15)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// `all` or a comma-separated subset of train,val,test.
        #[arg(long, default_value = "all")]
        nodes: String,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        relations: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the subgraph GNN from a cache.
    Train {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a trained model on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long = "batch-size", default_value_t = 64)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Homophily distribution over the graph or over cached subgraphs.
    HomophilyReport {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        subgraphs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run features -> pretrain -> sample -> train -> eval -> report.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let doc = match &err {
            Error::Stage { stage, source } => serde_json::json!({
                "error": source.to_string(),
                "stage": stage,
            }),
            other => serde_json::json!({ "error": other.to_string() }),
        };
        eprintln!("{doc}");
        std::process::exit(1);
    }
}

fn load_graph_inferred(
    path: &PathBuf,
    n: Option<usize>,
    relations: Option<String>,
) -> Result<botsub::graph::HeteroGraph, Error> {
    let (inferred_n, inferred_rels) = infer_edges_meta(path)?;
    let n = n.unwrap_or(inferred_n);
    let relations: Vec<String> = match relations {
        Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
        None => inferred_rels,
    };
    load_graph(path, n, &relations)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Synth { config, out_dir } => {
            let cfg = parse_synth_config(&config)?;
            let data = generate_raw(&cfg)?;
            write_dataset(&out_dir, &data)?;
            let edges: usize = (0..data.graph.relation_count())
                .map(|r| data.graph.edge_count(r))
                .sum();
            println!(
                "{}",
                serde_json::json!({
                    "n": cfg.n,
                    "edges": edges,
                    "relations": data.graph.relation_names(),
                    "out_dir": out_dir,
                })
            );
            Ok(())
        }
        Cmd::Features {
            desc,
            tweet,
            num_meta,
            cat_meta,
            tweet_embeds,
            tweet_owners,
            monthly_counts,
            kmeans_k,
            kmeans_iters,
            max_tweets,
            window,
            seed,
            out,
        } => {
            let desc = read_matrix(&desc)?;
            let n = desc.nrows();
            let tweet = read_matrix(&tweet)?;
            let num_meta = read_matrix(&num_meta)?;
            let cat_meta = read_matrix(&cat_meta)?;
            let embeds = load_tweet_embeddings(&tweet_embeds, &tweet_owners, n)?;
            let category = category_feature(&embeds, kmeans_k, max_tweets, kmeans_iters, seed)?;
            let counts = load_monthly_counts(&monthly_counts)?;
            let temporal = temporal_feature(&counts, n, window)?;
            let fm = assemble_features(vec![
                ("description".to_string(), desc),
                ("tweet".to_string(), tweet),
                ("num_meta".to_string(), num_meta),
                ("cat_meta".to_string(), cat_meta),
                ("category".to_string(), category),
                ("temporal".to_string(), temporal),
            ])?;
            fm.save(&out)?;
            println!(
                "{}",
                serde_json::json!({ "n": fm.n(), "width": fm.width(), "out": out })
            );
            Ok(())
        }
        Cmd::Pretrain {
            features,
            labels,
            splits,
            hidden,
            epochs,
            lr,
            patience,
            seed,
            activated_hidden,
            out,
        } => {
            let fm = FeatureMatrix::load(&features)?;
            let labels = load_labels(&labels, &splits, fm.n())?;
            let cfg = MlpConfig {
                hidden,
                epochs,
                lr,
                seed,
                patience,
                activated_hidden,
                ..MlpConfig::default()
            };
            let (model, log) = train_mlp(&fm, &labels, &cfg)?;
            model.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "epochs_run": log.len(),
                    "final_loss": log.last(),
                    "out": out,
                })
            );
            Ok(())
        }
        Cmd::Ppr {
            graph,
            relation,
            start,
            alpha,
            eps,
            n,
            relations,
            reverse,
            out,
        } => {
            let g = load_graph_inferred(&graph, n, relations)?;
            let view = g.relation_view(&relation)?;
            let view = if reverse { view.reversed() } else { view };
            let ppr = approx_ppr(&view, start, alpha, eps)?;
            let mut scores: Vec<(usize, f64)> = ppr.estimates().to_vec();
            scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut text = String::new();
            for (node, score) in scores {
                text.push_str(&format!("{node}\t{score}\n"));
            }
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Cmd::Sample {
            graph,
            features,
            model,
            k,
            alpha,
            eps,
            lambda,
            nodes,
            labels,
            splits,
            n,
            relations,
            workers,
            out,
        } => {
            let g = load_graph_inferred(&graph, n, relations)?;
            let fm = FeatureMatrix::load(&features)?;
            let mlp = MlpModel::load(&model)?;
            let starts: Vec<usize> = match SampleNodes::parse(&nodes)? {
                SampleNodes::All => (0..g.node_count()).collect(),
                SampleNodes::Splits(names) => {
                    let (labels_path, splits_path) = match (&labels, &splits) {
                        (Some(l), Some(s)) => (l, s),
                        _ => {
                            return Err(Error::InvalidParameter(
                                "--nodes by split requires --labels and --splits".into(),
                            ));
                        }
                    };
                    let set = load_labels(labels_path, splits_path, g.node_count())?;
                    let mut ids = Vec::new();
                    for name in &names {
                        ids.extend_from_slice(set.split(name)?);
                    }
                    ids.sort_unstable();
                    ids.dedup();
                    ids
                }
            };
            let params = SampleParams {
                k,
                alpha,
                eps,
                lambda,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            let subs = pool.install(|| sample_subgraphs(&g, &mlp, &fm, &starts, &params))?;
            save_subgraphs(&out, g.relation_names(), &subs)?;
            println!(
                "{}",
                serde_json::json!({ "subgraphs": subs.len(), "out": out })
            );
            Ok(())
        }
        Cmd::Train {
            cache,
            features,
            labels,
            splits,
            config,
            out,
            log,
        } => {
            let run_cfg = RunConfig::from_file(&config)?;
            let cache = load_subgraphs(&cache)?;
            let fm = FeatureMatrix::load(&features)?;
            let labels = load_labels(&labels, &splits, fm.n())?;
            let outcome = train(&cache, &fm, &labels, &run_cfg.gnn_config())?;
            outcome.model.save(&out)?;
            if let Some(log_path) = log {
                let mut text = String::new();
                for entry in &outcome.log {
                    text.push_str(&serde_json::to_string(entry).expect("entry serializes"));
                    text.push('\n');
                }
                std::fs::write(&log_path, text).map_err(|e| Error::Io {
                    path: log_path.clone(),
                    source: e,
                })?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "epochs_run": outcome.log.len(),
                    "diverged": outcome.diverged,
                    "out": out,
                })
            );
            Ok(())
        }
        Cmd::Eval {
            model,
            cache,
            features,
            labels,
            splits,
            split,
            batch_size,
            out,
        } => {
            let model = GnnModel::load(&model)?;
            let cache = load_subgraphs(&cache)?;
            let fm = FeatureMatrix::load(&features)?;
            let labels = load_labels(&labels, &splits, fm.n())?;
            let metrics = evaluate(&model, &cache, &fm, &labels, &split, batch_size)?;
            write_metrics_json(&out, &metrics, &split)?;
            println!(
                "{}",
                serde_json::json!({
                    "accuracy": metrics.accuracy,
                    "f1": metrics.f1,
                    "split": split,
                    "n": metrics.n,
                })
            );
            Ok(())
        }
        Cmd::HomophilyReport {
            graph,
            labels,
            subgraphs,
            out,
        } => {
            let g = load_graph_inferred(&graph, None, None)?;
            let labels = load_labels_only(&labels, g.node_count())?;
            let report = match subgraphs {
                Some(path) => {
                    let cache = load_subgraphs(&path)?;
                    homophily_report_subgraphs(&cache.subgraphs, &labels)?
                }
                None => homophily_report_graph(&g, &labels)?,
            };
            let file = File::create(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, &report)
                .map_err(|e| Error::InvalidData(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            println!("{}", serde_json::json!({ "out": out }));
            Ok(())
        }
        Cmd::Pipeline { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let outcome = run_pipeline(&cfg)?;
            let stages: Vec<serde_json::Value> = outcome
                .stages
                .iter()
                .map(|s| serde_json::json!({ "stage": s.name, "skipped": s.skipped }))
                .collect();
            println!(
                "{}",
                serde_json::json!({
                    "stages": stages,
                    "accuracy": outcome.metrics.accuracy,
                    "f1": outcome.metrics.f1,
                    "metrics": outcome.metrics_path,
                    "homophily": outcome.homophily_path,
                })
            );
            Ok(())
        }
    }
}
