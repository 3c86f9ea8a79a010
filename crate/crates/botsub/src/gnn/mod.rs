//! The heterogeneous subgraph learner.
//!
//! Per cached subgraph: an input transform lifts raw features to hidden
//! rows, one GCN stack per relation aggregates over in-neighbors (star
//! edges are re-oriented so selected nodes message the root), intermediate
//! layer outputs are concatenated, semantic attention fuses the relations,
//! and a softmax head classifies the start node. Training is mini-batch
//! gradient descent with manual backpropagation; only start-node
//! predictions enter the loss.

mod model;
#[cfg(test)]
mod tests;
mod train;

pub use model::{GnnGrads, GnnModel};
pub use train::{classification_metrics, evaluate, train, Metrics, TrainEntry, TrainOutcome};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::sampler::BiasedSubgraph;

/// Relation-fusion mode; `Mean` is the semantic-attention ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Attention,
    Mean,
}

impl Fusion {
    pub fn parse(s: &str) -> Result<Fusion> {
        match s {
            "attention" => Ok(Fusion::Attention),
            "mean" => Ok(Fusion::Mean),
            other => Err(Error::InvalidParameter(format!(
                "unknown fusion `{other}` (expected attention|mean)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Fusion::Attention => "attention",
            Fusion::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub attention_dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub reg_lambda: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Concatenate h^0..h^L per relation; off keeps only h^L (ablation).
    pub concat_intermediate: bool,
    pub fusion: Fusion,
    pub workers: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            hidden: 64,
            layers: 2,
            attention_dim: 32,
            batch_size: 64,
            lr: 1e-3,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            reg_lambda: 1e-5,
            dropout: 0.3,
            leaky_slope: 0.01,
            concat_intermediate: true,
            fusion: Fusion::Attention,
            workers: 1,
        }
    }
}

/// In-neighbor lists over local node ids, CSR-packed. Message channel
/// `j -> i` means node `i` aggregates node `j`'s hidden row.
#[derive(Debug, Clone, PartialEq)]
pub struct InAdjacency {
    offsets: Vec<usize>,
    sources: Vec<u32>,
}

impl InAdjacency {
    /// Build from message edges `(from, to)`; optionally add a self-loop
    /// on every node. Duplicate channels collapse to one.
    pub fn from_message_edges(n: usize, edges: &[(u32, u32)], self_loops: bool) -> InAdjacency {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(from, to) in edges {
            lists[to as usize].push(from);
        }
        if self_loops {
            for (i, list) in lists.iter_mut().enumerate() {
                list.push(i as u32);
            }
        }
        let mut offsets = vec![0usize; n + 1];
        let mut sources = Vec::new();
        for (i, list) in lists.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            sources.extend_from_slice(list);
            offsets[i + 1] = sources.len();
        }
        InAdjacency { offsets, sources }
    }

    /// Message channels for one relation of a cached subgraph: stored
    /// edges flow along their direction, except edges out of the root
    /// (the star edges), which are re-oriented toward the root. Every
    /// node gets a self-loop.
    pub fn from_subgraph_edges(n: usize, stored: &[(u32, u32)]) -> InAdjacency {
        let messages: Vec<(u32, u32)> = stored
            .iter()
            .map(|&(a, b)| if a == 0 { (b, 0) } else { (a, b) })
            .collect();
        InAdjacency::from_message_edges(n, &messages, true)
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn in_neighbors(&self, i: usize) -> &[u32] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// One cached subgraph lifted to tensors: local feature rows plus one
/// in-adjacency per relation.
#[derive(Debug, Clone)]
pub struct SubgraphTensors {
    pub start: usize,
    pub x: Array2<f64>,
    pub adj: Vec<InAdjacency>,
}

impl SubgraphTensors {
    pub fn from_subgraph(sub: &BiasedSubgraph, features: &FeatureMatrix) -> Result<SubgraphTensors> {
        let m = sub.node_count();
        let mut x = Array2::zeros((m, features.width()));
        for (local, &global) in sub.members().iter().enumerate() {
            if global >= features.n() {
                return Err(Error::NodeOutOfRange {
                    id: global,
                    n: features.n(),
                });
            }
            x.row_mut(local).assign(&features.matrix().row(global));
        }
        let adj = sub
            .relations
            .iter()
            .map(|rel| InAdjacency::from_subgraph_edges(m, &rel.edges))
            .collect();
        Ok(SubgraphTensors {
            start: sub.start,
            x,
            adj,
        })
    }

    pub fn node_count(&self) -> usize {
        self.x.nrows()
    }

    pub fn relation_count(&self) -> usize {
        self.adj.len()
    }
}

/// A training batch: subgraphs with their start-node labels. Subgraphs
/// keep disjoint local index spaces.
#[derive(Clone)]
pub struct Batch<'a> {
    pub subgraphs: Vec<&'a SubgraphTensors>,
    pub labels: Vec<u8>,
}

impl<'a> Batch<'a> {
    pub fn new(subgraphs: Vec<&'a SubgraphTensors>, labels: Vec<u8>) -> Result<Batch<'a>> {
        if subgraphs.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} subgraphs, {} labels",
                subgraphs.len(),
                labels.len()
            )));
        }
        if subgraphs.is_empty() {
            return Err(Error::InvalidData("empty batch".into()));
        }
        Ok(Batch { subgraphs, labels })
    }

    pub fn len(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgraphs.is_empty()
    }
}

/// Mean aggregation over in-neighbors: row i becomes the average of its
/// in-neighbor rows (zero row when it has no channels).
pub fn aggregate_mean(hidden: ArrayView2<f64>, adj: &InAdjacency) -> Array2<f64> {
    let mut out = Array2::zeros(hidden.raw_dim());
    for i in 0..adj.node_count() {
        let inn = adj.in_neighbors(i);
        if inn.is_empty() {
            continue;
        }
        let mut row = out.row_mut(i);
        for &j in inn {
            row += &hidden.row(j as usize);
        }
        row /= inn.len() as f64;
    }
    out
}

pub(crate) fn leaky_relu(z: &Array2<f64>, slope: f64) -> Array2<f64> {
    z.mapv(|v| if v >= 0.0 { v } else { slope * v })
}

pub(crate) fn leaky_relu_grad(z: &Array2<f64>, slope: f64) -> Array2<f64> {
    z.mapv(|v| if v >= 0.0 { 1.0 } else { slope })
}

pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Concatenate per-layer outputs along the feature axis.
pub fn concat_intermediate(layers: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    if layers.is_empty() {
        return Err(Error::InvalidParameter("no layers to combine".into()));
    }
    let rows = layers[0].nrows();
    let width: usize = layers.iter().map(|l| l.ncols()).sum();
    let mut out = Array2::zeros((rows, width));
    let mut start = 0usize;
    for layer in layers {
        if layer.nrows() != rows {
            return Err(Error::DimensionMismatch(
                "layer outputs disagree on row count".into(),
            ));
        }
        out.slice_mut(ndarray::s![.., start..start + layer.ncols()])
            .assign(layer);
        start += layer.ncols();
    }
    Ok(out)
}
