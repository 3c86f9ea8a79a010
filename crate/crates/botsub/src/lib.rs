//! Homophily-biased subgraph sampling and relational GNN training for
//! social bot detection.
//!
//! The pipeline has three phases:
//!
//! 1. **Data preparation** — load a multi-relation directed graph
//!    ([`graph::HeteroGraph`]), assemble per-node feature vectors from
//!    precomputed embeddings plus engineered content-category and temporal
//!    blocks ([`features`]), and train a cheap MLP pre-classifier
//!    ([`mlp`]) whose hidden layer defines node-to-node similarity.
//! 2. **Subgraph construction** — for each start node, rank candidate
//!    nodes per relation by a blend of approximate Personalized PageRank
//!    ([`ppr`]) and pre-classifier similarity, keep the top-k, and connect
//!    them to the start node with star edges ([`sampler`]). The selection
//!    is biased toward same-label nodes, which raises subgraph homophily.
//! 3. **Subgraph learning** — train a per-relation GCN with intermediate
//!    layer concatenation and semantic attention over relations ([`gnn`])
//!    on batches of cached subgraphs.
//!
//! [`synth`] generates labeled synthetic graphs with controllable
//! structural homophily and feature separation so the whole pipeline is
//! testable without any social-media data.

pub mod config;
pub mod error;
pub mod features;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod kmeans;
pub mod mlp;
pub mod pipeline;
pub mod ppr;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
