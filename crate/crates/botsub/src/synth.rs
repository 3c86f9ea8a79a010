//! Synthetic labeled heterogeneous graphs with controllable structural
//! homophily and feature separation.
//!
//! Structure is a per-relation stochastic block model over the two
//! classes. Features are class-conditional Gaussians whose mean gap is
//! `delta` standard deviations along the class axis. Behavioral inputs
//! follow two profiles: bots tweet at a steady rate inside few topics,
//! humans are bursty and roam across many topics; `profile_noise` is the
//! probability a user behaves like the opposite class, which caps how
//! separable the behavioral blocks can be.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    assemble_features, category_feature, temporal_feature, FeatureMatrix, TweetEmbeddings,
};
use crate::graph::{HeteroGraph, LabelSet, NodeLabel};
use crate::io;

/// Class-pair edge probabilities for one relation.
/// `probs[src_class][dst_class]`, class 0 = human, 1 = bot.
#[derive(Debug, Clone)]
pub struct RelationBlock {
    pub name: String,
    pub probs: [[f64; 2]; 2],
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub bot_fraction: f64,
    pub relations: Vec<RelationBlock>,
    pub desc_dim: usize,
    pub tweet_dim: usize,
    pub num_meta_dim: usize,
    pub cat_meta_dim: usize,
    /// Class-mean separation of the Gaussian blocks, in feature-std units.
    pub delta: f64,
    pub tweets_per_user: usize,
    pub tweet_embed_dim: usize,
    pub topic_count: usize,
    pub bot_topics: usize,
    pub human_topics: usize,
    /// Probability a user adopts the opposite class's behavior profile.
    pub profile_noise: f64,
    pub months: usize,
    pub bot_rate: f64,
    pub human_base_rate: f64,
    pub human_burst_rate: f64,
    pub human_burst_months: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Mixed-pattern preset: humans densely interconnected, bots sparsely
    /// interconnected but heavily linked to humans, plus a second, weaker
    /// relation. Edge probabilities scale with `n` to hold mean degrees.
    pub fn mixed_pattern(n: usize, seed: u64) -> SynthConfig {
        let bot_fraction = 0.3;
        let humans = ((1.0 - bot_fraction) * n as f64).max(2.0);
        let bots = (bot_fraction * n as f64).max(2.0);
        let p = |mean_degree: f64, pool: f64| (mean_degree / pool).min(1.0);
        let follow = RelationBlock {
            name: "follow".to_string(),
            probs: [
                [p(8.0, humans), p(0.4, bots)],
                [p(10.0, humans), p(1.5, bots)],
            ],
        };
        let interact = RelationBlock {
            name: "interact".to_string(),
            probs: [
                [p(3.0, humans), p(0.8, bots)],
                [p(4.0, humans), p(1.0, bots)],
            ],
        };
        SynthConfig {
            n,
            bot_fraction,
            relations: vec![follow, interact],
            desc_dim: 8,
            tweet_dim: 8,
            num_meta_dim: 4,
            cat_meta_dim: 2,
            delta: 1.6,
            tweets_per_user: 30,
            tweet_embed_dim: 8,
            topic_count: 20,
            bot_topics: 5,
            human_topics: 14,
            profile_noise: 0.3,
            months: 12,
            bot_rate: 30.0,
            human_base_rate: 3.0,
            human_burst_rate: 60.0,
            human_burst_months: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidParameter("n must be >= 4".into()));
        }
        if !(0.0 < self.bot_fraction && self.bot_fraction < 1.0) {
            return Err(Error::InvalidParameter(
                "bot_fraction must be in (0, 1)".into(),
            ));
        }
        if self.relations.is_empty() {
            return Err(Error::InvalidParameter("at least one relation".into()));
        }
        for rel in &self.relations {
            for row in &rel.probs {
                for &p in row {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidParameter(format!(
                            "edge probability {p} out of [0, 1] in relation {}",
                            rel.name
                        )));
                    }
                }
            }
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidParameter("delta must be >= 0".into()));
        }
        if self.topic_count == 0
            || self.bot_topics == 0
            || self.human_topics == 0
            || self.bot_topics > self.topic_count
            || self.human_topics > self.topic_count
        {
            return Err(Error::InvalidParameter("bad topic counts".into()));
        }
        if !(0.0..=1.0).contains(&self.profile_noise) {
            return Err(Error::InvalidParameter(
                "profile_noise must be in [0, 1]".into(),
            ));
        }
        if self.months == 0 || self.human_burst_months > self.months {
            return Err(Error::InvalidParameter("bad month window".into()));
        }
        Ok(())
    }
}

/// Raw generated dataset in the pipeline's external input shapes.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub graph: HeteroGraph,
    pub labels: LabelSet,
    pub desc: Array2<f64>,
    pub tweet: Array2<f64>,
    pub num_meta: Array2<f64>,
    pub cat_meta: Array2<f64>,
    pub tweet_embeddings: TweetEmbeddings,
    pub monthly_counts: Vec<(usize, usize, i64)>,
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn gaussian_block(rng: &mut ChaCha8Rng, is_bot: &[bool], dim: usize, delta: f64) -> Array2<f64> {
    let shift = delta / (2.0 * (dim as f64).sqrt());
    let mut block = Array2::zeros((is_bot.len(), dim));
    for (i, &bot) in is_bot.iter().enumerate() {
        let mean = if bot { shift } else { -shift };
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            block[(i, j)] = mean + z;
        }
    }
    block
}

pub fn generate_raw(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n = cfg.n;

    // Labels: round(n * bot_fraction) bots at shuffled positions.
    let mut rng = derived_rng(cfg.seed, 1);
    let n_bots = (n as f64 * cfg.bot_fraction).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut is_bot = vec![false; n];
    for &v in ids.iter().take(n_bots) {
        is_bot[v] = true;
    }

    // 70/10/20 split over a fresh shuffle.
    let mut split_ids: Vec<usize> = (0..n).collect();
    split_ids.shuffle(&mut rng);
    let train_end = (n * 7) / 10;
    let val_end = train_end + n / 10;
    let labels = LabelSet::new(
        is_bot
            .iter()
            .map(|&b| Some(if b { NodeLabel::Bot } else { NodeLabel::Human }))
            .collect(),
        split_ids[..train_end].to_vec(),
        split_ids[train_end..val_end].to_vec(),
        split_ids[val_end..].to_vec(),
    )?;

    // Structure: one stochastic block model per relation, generated from
    // per-relation derived seeds so the parallel map stays deterministic.
    let per_relation: Vec<Vec<(usize, usize, usize)>> = cfg
        .relations
        .par_iter()
        .enumerate()
        .map(|(r, block)| {
            let mut rng = derived_rng(cfg.seed, 100 + r as u64);
            let mut edges = Vec::new();
            for i in 0..n {
                let row = &block.probs[usize::from(is_bot[i])];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let p = row[usize::from(is_bot[j])];
                    if p > 0.0 && rng.gen::<f64>() < p {
                        edges.push((i, j, r));
                    }
                }
            }
            edges
        })
        .collect();
    let edges: Vec<(usize, usize, usize)> = per_relation.into_iter().flatten().collect();
    let names: Vec<String> = cfg.relations.iter().map(|b| b.name.clone()).collect();
    let graph = HeteroGraph::from_edges(n, &names, &edges)?;

    // Embedding-style blocks.
    let desc = gaussian_block(&mut derived_rng(cfg.seed, 2), &is_bot, cfg.desc_dim, cfg.delta);
    let tweet = gaussian_block(&mut derived_rng(cfg.seed, 3), &is_bot, cfg.tweet_dim, cfg.delta);
    let num_meta = gaussian_block(
        &mut derived_rng(cfg.seed, 4),
        &is_bot,
        cfg.num_meta_dim,
        cfg.delta,
    );
    let cat_meta = gaussian_block(
        &mut derived_rng(cfg.seed, 5),
        &is_bot,
        cfg.cat_meta_dim,
        cfg.delta,
    );

    // Behavioral class per user: flipped with probability profile_noise.
    let mut rng = derived_rng(cfg.seed, 6);
    let behaves_bot: Vec<bool> = is_bot
        .iter()
        .map(|&b| {
            if rng.gen::<f64>() < cfg.profile_noise {
                !b
            } else {
                b
            }
        })
        .collect();

    // Topic centers and per-user tweet embeddings.
    let mut rng = derived_rng(cfg.seed, 7);
    let mut centers = Array2::zeros((cfg.topic_count, cfg.tweet_embed_dim));
    for v in centers.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = 3.0 * z;
    }
    let mut user_matrices = Vec::with_capacity(n);
    for u in 0..n {
        let topic_budget = if behaves_bot[u] {
            cfg.bot_topics
        } else {
            cfg.human_topics
        };
        let mut topics: Vec<usize> = (0..cfg.topic_count).collect();
        topics.shuffle(&mut rng);
        topics.truncate(topic_budget);
        let mut rows = Array2::zeros((cfg.tweets_per_user, cfg.tweet_embed_dim));
        for t in 0..cfg.tweets_per_user {
            let topic = topics[rng.gen_range(0..topics.len())];
            for j in 0..cfg.tweet_embed_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                rows[(t, j)] = centers[(topic, j)] + 0.5 * z;
            }
        }
        user_matrices.push(rows);
    }
    let tweet_embeddings = TweetEmbeddings::from_user_matrices(&user_matrices)?;

    // Monthly tweet counts: steady for bots, bursty for humans.
    let mut rng = derived_rng(cfg.seed, 8);
    let mut monthly_counts = Vec::new();
    for u in 0..n {
        if behaves_bot[u] {
            let poisson = Poisson::new(cfg.bot_rate.max(1e-9)).expect("valid rate");
            for m in 0..cfg.months {
                let c = poisson.sample(&mut rng) as i64;
                if c > 0 {
                    monthly_counts.push((u, m, c));
                }
            }
        } else {
            let mut months: Vec<usize> = (0..cfg.months).collect();
            months.shuffle(&mut rng);
            let bursts: std::collections::HashSet<usize> =
                months.iter().take(cfg.human_burst_months).copied().collect();
            for m in 0..cfg.months {
                let rate = if bursts.contains(&m) {
                    cfg.human_burst_rate
                } else {
                    cfg.human_base_rate
                };
                let poisson = Poisson::new(rate.max(1e-9)).expect("valid rate");
                let c = poisson.sample(&mut rng) as i64;
                if c > 0 {
                    monthly_counts.push((u, m, c));
                }
            }
        }
    }

    Ok(SynthData {
        graph,
        labels,
        desc,
        tweet,
        num_meta,
        cat_meta,
        tweet_embeddings,
        monthly_counts,
    })
}

/// Generate and assemble into the model-ready triple. Category features
/// use the standard 20 clusters over at most 200 tweets per user.
pub fn generate(cfg: &SynthConfig) -> Result<(HeteroGraph, FeatureMatrix, LabelSet)> {
    let data = generate_raw(cfg)?;
    let features = assemble_synth_features(cfg, &data)?;
    Ok((data.graph, features, data.labels))
}

pub fn assemble_synth_features(cfg: &SynthConfig, data: &SynthData) -> Result<FeatureMatrix> {
    let k = cfg.topic_count.clamp(2, 20);
    let category = category_feature(&data.tweet_embeddings, k, 200, 50, cfg.seed ^ 0xFEED)?;
    let temporal = temporal_feature(&data.monthly_counts, cfg.n, cfg.months)?;
    assemble_features(vec![
        ("description".to_string(), data.desc.clone()),
        ("tweet".to_string(), data.tweet.clone()),
        ("num_meta".to_string(), data.num_meta.clone()),
        ("cat_meta".to_string(), data.cat_meta.clone()),
        ("category".to_string(), category),
        ("temporal".to_string(), temporal),
    ])
}

/// Emit the dataset in the pipeline's external file formats.
pub fn write_dataset(dir: &Path, data: &SynthData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::graph::write_edges_tsv(&dir.join("edges.tsv"), &data.graph)?;
    crate::graph::write_labels_tsv(&dir.join("labels.tsv"), &data.labels)?;
    crate::graph::write_splits(&dir.join("splits.txt"), &data.labels)?;
    io::write_matrix(&dir.join("desc.bin"), &data.desc)?;
    io::write_matrix(&dir.join("tweet.bin"), &data.tweet)?;
    io::write_matrix(&dir.join("num_meta.bin"), &data.num_meta)?;
    io::write_matrix(&dir.join("cat_meta.bin"), &data.cat_meta)?;

    let n = data.labels.n();
    let total: usize = (0..n).map(|u| data.tweet_embeddings.user(u).nrows()).sum();
    let dim = data.tweet_embeddings.dim();
    let mut flat = Array2::zeros((total, dim));
    let mut owners = String::new();
    let mut row = 0usize;
    for u in 0..n {
        for r in data.tweet_embeddings.user(u).rows() {
            flat.row_mut(row).assign(&r);
            owners.push_str(&format!("{u}\n"));
            row += 1;
        }
    }
    io::write_matrix(&dir.join("tweet_embeds.bin"), &flat)?;
    std::fs::write(dir.join("tweet_owners.tsv"), owners)
        .map_err(|e| Error::io(dir.join("tweet_owners.tsv"), e))?;

    let mut counts = String::new();
    for &(u, m, c) in &data.monthly_counts {
        counts.push_str(&format!("{u}\t{m}\t{c}\n"));
    }
    std::fs::write(dir.join("monthly_counts.tsv"), counts)
        .map_err(|e| Error::io(dir.join("monthly_counts.tsv"), e))?;
    Ok(())
}
