//! Biased heterogeneous subgraph construction and homophily metrics.
//!
//! For a start node `v` and each relation, candidates are the support of
//! the approximate PPR vector (not just direct neighbors). Each candidate
//! `j` is scored `p = lambda * ppr + (1 - lambda) * similarity(v, j)`,
//! the top-k are kept, original edges among the kept nodes are retained,
//! and every kept node is linked to `v` by a star edge. Ties break toward
//! higher PPR, then lower node id, so construction is deterministic.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{HeteroGraph, LabelSet, NodeLabel};
use crate::io;
use crate::mlp::{pair_similarity, MlpModel};
use crate::ppr::{approx_ppr, PprVector};

const CACHE_MAGIC: &[u8; 8] = b"SUBG0001";

/// One relation's slice of a biased subgraph. `selected` lists the top-k
/// global node ids in rank order (the start node is never included);
/// `edges` are local-id pairs covering both retained original edges and
/// the star edges out of the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSubgraph {
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
    pub edges: Vec<(u32, u32)>,
}

/// Output of the biased construction for one start node.
///
/// Local id 0 is always the start node; ids `1..` are the union of all
/// relations' selections, sorted by global id.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedSubgraph {
    pub start: usize,
    pub k: usize,
    members: Vec<usize>,
    pub relations: Vec<RelationSubgraph>,
}

impl BiasedSubgraph {
    fn assemble(start: usize, k: usize, per_relation: Vec<RelationPick>) -> BiasedSubgraph {
        let mut union: Vec<usize> = per_relation
            .iter()
            .flat_map(|p| p.selected.iter().copied())
            .collect();
        union.sort_unstable();
        union.dedup();
        let mut members = Vec::with_capacity(union.len() + 1);
        members.push(start);
        members.extend(union.iter().copied().filter(|&u| u != start));

        let local: HashMap<usize, u32> = members
            .iter()
            .enumerate()
            .map(|(i, &g)| (g, i as u32))
            .collect();

        let relations = per_relation
            .into_iter()
            .map(|pick| {
                let mut edges: Vec<(u32, u32)> = pick
                    .original_edges
                    .iter()
                    .map(|&(a, b)| (local[&a], local[&b]))
                    .collect();
                for &u in &pick.selected {
                    edges.push((0, local[&u]));
                }
                edges.sort_unstable();
                edges.dedup();
                RelationSubgraph {
                    selected: pick.selected,
                    scores: pick.scores,
                    edges,
                }
            })
            .collect();

        BiasedSubgraph {
            start,
            k,
            members,
            relations,
        }
    }

    fn from_parts(
        start: usize,
        k: usize,
        relations: Vec<RelationSubgraph>,
    ) -> Result<BiasedSubgraph> {
        let mut union: Vec<usize> = relations
            .iter()
            .flat_map(|r| r.selected.iter().copied())
            .collect();
        union.sort_unstable();
        union.dedup();
        let mut members = Vec::with_capacity(union.len() + 1);
        members.push(start);
        members.extend(union.into_iter().filter(|&u| u != start));
        let n = members.len() as u32;
        for rel in &relations {
            if rel.selected.len() != rel.scores.len() {
                return Err(Error::InvalidData(
                    "selected ids and scores length mismatch".into(),
                ));
            }
            for &(a, b) in &rel.edges {
                if a >= n || b >= n {
                    return Err(Error::InvalidData(format!(
                        "local edge ({a}, {b}) outside member range {n}"
                    )));
                }
            }
        }
        Ok(BiasedSubgraph {
            start,
            k,
            members,
            relations,
        })
    }

    /// Member global ids; index in this slice is the local id.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn node_count(&self) -> usize {
        self.members.len()
    }

    /// Union of selected nodes across relations (everything but the root).
    pub fn selected_union(&self) -> &[usize] {
        &self.members[1..]
    }

    pub fn local_index(&self, global: usize) -> Option<u32> {
        if global == self.start {
            return Some(0);
        }
        self.members[1..]
            .binary_search(&global)
            .ok()
            .map(|i| (i + 1) as u32)
    }
}

struct RelationPick {
    selected: Vec<usize>,
    scores: Vec<f64>,
    original_edges: Vec<(usize, usize)>,
}

/// Fraction of `v`'s labeled neighbors sharing `v`'s label; `None` when
/// no neighbor is labeled.
pub fn node_homophily(neighbors: &[usize], labels: &LabelSet, v: usize) -> Result<Option<f64>> {
    let own = labels
        .label(v)
        .ok_or_else(|| Error::InvalidData(format!("node {v} is unlabeled")))?;
    let mut labeled = 0usize;
    let mut same = 0usize;
    for &u in neighbors {
        if let Some(l) = labels.label(u) {
            labeled += 1;
            if l == own {
                same += 1;
            }
        }
    }
    if labeled == 0 {
        return Ok(None);
    }
    Ok(Some(same as f64 / labeled as f64))
}

/// Homophily of `v` over its undirected neighborhood in `g`.
pub fn node_homophily_in_graph(
    g: &HeteroGraph,
    labels: &LabelSet,
    v: usize,
) -> Result<Option<f64>> {
    node_homophily(&g.neighborhood(v), labels, v)
}

/// Mean of the defined node homophilies over all labeled nodes.
pub fn graph_homophily(g: &HeteroGraph, labels: &LabelSet) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (v, _) in labels.labeled_nodes() {
        if let Some(h) = node_homophily_in_graph(g, labels, v)? {
            total += h;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidData(
            "no node has a defined homophily (no labeled neighbors anywhere)".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Blend PPR scores with similarities over the PPR support, skipping the
/// start node itself. `sims` is aligned with `ppr.estimates()`.
pub fn combined_scores(ppr: &PprVector, sims: &[f64], lambda: f64) -> Result<Vec<(usize, f64)>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    if sims.len() != ppr.estimates().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} similarities for {} PPR entries",
            sims.len(),
            ppr.estimates().len()
        )));
    }
    Ok(ppr
        .estimates()
        .iter()
        .zip(sims)
        .filter(|(&(id, _), _)| id != ppr.start)
        .map(|(&(id, pi), &s)| (id, lambda * pi + (1.0 - lambda) * s))
        .collect())
}

/// Top-k by combined score; ties break toward higher PPR, then lower id.
fn select_top_k(combined: &[(usize, f64)], ppr: &PprVector, k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut ranked: Vec<(usize, f64, f64)> = combined
        .iter()
        .map(|&(id, p)| (id, p, ppr.estimate(id)))
        .collect();
    ranked.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(b.2.partial_cmp(&a.2).unwrap())
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    let selected = ranked.iter().map(|&(id, _, _)| id).collect();
    let scores = ranked.iter().map(|&(_, p, _)| p).collect();
    (selected, scores)
}

/// Sampling parameters for the biased construction.
#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    pub k: usize,
    pub alpha: f64,
    pub eps: f64,
    pub lambda: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            k: 32,
            alpha: 0.15,
            eps: 1e-4,
            lambda: 0.5,
        }
    }
}

pub fn build_biased_subgraph(
    g: &HeteroGraph,
    model: &MlpModel,
    features: &FeatureMatrix,
    start: usize,
    params: &SampleParams,
) -> Result<BiasedSubgraph> {
    if start >= g.node_count() {
        return Err(Error::NodeOutOfRange {
            id: start,
            n: g.node_count(),
        });
    }
    if params.k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be in [0, 1], got {}",
            params.lambda
        )));
    }

    let start_hidden = model.hidden_repr(features.matrix().row(start))?;
    let mut hidden_cache: HashMap<usize, Array1<f64>> = HashMap::new();

    let mut picks = Vec::with_capacity(g.relation_count());
    for r in 0..g.relation_count() {
        let view = g.relation_view_at(r);
        let ppr = approx_ppr(&view, start, params.alpha, params.eps)?;

        // Similarity is only evaluated on the PPR support, and skipped
        // entirely for pure-PPR sampling.
        let sims: Vec<f64> = if params.lambda >= 1.0 {
            vec![0.0; ppr.estimates().len()]
        } else {
            ppr.estimates()
                .iter()
                .map(|&(id, _)| -> Result<f64> {
                    if id == start {
                        return Ok(0.0);
                    }
                    if let Some(h) = hidden_cache.get(&id) {
                        return Ok(pair_similarity(start_hidden.view(), h.view()));
                    }
                    let h = model.hidden_repr(features.matrix().row(id))?;
                    let sim = pair_similarity(start_hidden.view(), h.view());
                    hidden_cache.insert(id, h);
                    Ok(sim)
                })
                .collect::<Result<_>>()?
        };
        let combined = combined_scores(&ppr, &sims, params.lambda)?;
        let (selected, scores) = select_top_k(&combined, &ppr, params.k);

        // Retain original edges among this relation's members (root included).
        let member_set: HashSet<usize> = selected.iter().copied().chain([start]).collect();
        let mut original_edges = Vec::new();
        for &a in &member_set {
            for &b in view.out_neighbors(a) {
                if member_set.contains(&b) {
                    original_edges.push((a, b));
                }
            }
        }
        picks.push(RelationPick {
            selected,
            scores,
            original_edges,
        });
    }
    Ok(BiasedSubgraph::assemble(start, params.k, picks))
}

/// Build subgraphs for many start nodes. Each start node is independent,
/// so the parallel map is deterministic for any worker count.
pub fn sample_subgraphs(
    g: &HeteroGraph,
    model: &MlpModel,
    features: &FeatureMatrix,
    starts: &[usize],
    params: &SampleParams,
) -> Result<Vec<BiasedSubgraph>> {
    starts
        .par_iter()
        .map(|&v| build_biased_subgraph(g, model, features, v, params))
        .collect()
}

/// Cached subgraphs plus the relation registry they were built against.
#[derive(Debug, Clone)]
pub struct SubgraphCache {
    pub relation_names: Vec<String>,
    pub subgraphs: Vec<BiasedSubgraph>,
}

impl SubgraphCache {
    pub fn find(&self, start: usize) -> Option<&BiasedSubgraph> {
        self.subgraphs.iter().find(|s| s.start == start)
    }
}

pub fn save_subgraphs(
    path: &Path,
    relation_names: &[String],
    subgraphs: &[BiasedSubgraph],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(CACHE_MAGIC).map_err(|e| Error::io(path, e))?;
    io::put_u64(&mut w, relation_names.len() as u64, path)?;
    for name in relation_names {
        io::put_str(&mut w, name, path)?;
    }
    io::put_u64(&mut w, subgraphs.len() as u64, path)?;
    for sub in subgraphs {
        if sub.relations.len() != relation_names.len() {
            return Err(Error::InvalidData(format!(
                "subgraph at node {} has {} relations, registry has {}",
                sub.start,
                sub.relations.len(),
                relation_names.len()
            )));
        }
        io::put_u64(&mut w, sub.start as u64, path)?;
        io::put_u64(&mut w, sub.k as u64, path)?;
        io::put_u64(&mut w, sub.relations.len() as u64, path)?;
        for rel in &sub.relations {
            io::put_u64(&mut w, rel.selected.len() as u64, path)?;
            for &id in &rel.selected {
                io::put_u64(&mut w, id as u64, path)?;
            }
            for &s in &rel.scores {
                io::put_f64(&mut w, s, path)?;
            }
            io::put_u64(&mut w, rel.edges.len() as u64, path)?;
            for &(a, b) in &rel.edges {
                io::put_u32(&mut w, a, path)?;
                io::put_u32(&mut w, b, path)?;
            }
        }
    }
    Ok(())
}

pub fn load_subgraphs(path: &Path) -> Result<SubgraphCache> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    io::expect_magic(&mut r, CACHE_MAGIC, path)?;
    let n_relations = io::get_u64(&mut r, path)? as usize;
    let mut relation_names = Vec::with_capacity(n_relations);
    for _ in 0..n_relations {
        relation_names.push(io::get_str(&mut r, path)?);
    }
    let count = io::get_u64(&mut r, path)? as usize;
    let mut subgraphs = Vec::with_capacity(count);
    for _ in 0..count {
        let start = io::get_u64(&mut r, path)? as usize;
        let k = io::get_u64(&mut r, path)? as usize;
        let rels = io::get_u64(&mut r, path)? as usize;
        if rels != n_relations {
            return Err(Error::format(
                path,
                format!("record at node {start} disagrees with relation registry"),
            ));
        }
        let mut relations = Vec::with_capacity(rels);
        for _ in 0..rels {
            let n_sel = io::get_u64(&mut r, path)? as usize;
            let mut selected = Vec::with_capacity(n_sel);
            for _ in 0..n_sel {
                selected.push(io::get_u64(&mut r, path)? as usize);
            }
            let mut scores = Vec::with_capacity(n_sel);
            for _ in 0..n_sel {
                scores.push(io::get_f64(&mut r, path)?);
            }
            let n_edges = io::get_u64(&mut r, path)? as usize;
            let mut edges = Vec::with_capacity(n_edges);
            for _ in 0..n_edges {
                let a = io::get_u32(&mut r, path)?;
                let b = io::get_u32(&mut r, path)?;
                edges.push((a, b));
            }
            relations.push(RelationSubgraph {
                selected,
                scores,
                edges,
            });
        }
        subgraphs.push(BiasedSubgraph::from_parts(start, k, relations)?);
    }
    Ok(SubgraphCache {
        relation_names,
        subgraphs,
    })
}

/// Homophily distribution as reported for graphs and for biased
/// selections. Histogram bins: `[0, .25) [.25, .5) [.5, .75) [.75, 1]`.
#[derive(Debug, Clone, Serialize)]
pub struct HomophilyReport {
    pub source: String,
    pub n_defined: usize,
    pub h: Option<f64>,
    pub bot_avg: Option<f64>,
    pub human_avg: Option<f64>,
    pub histogram: [usize; 4],
    #[serde(skip)]
    pub per_node: Vec<(usize, f64)>,
}

fn build_report(source: &str, values: Vec<(usize, f64)>, labels: &LabelSet) -> HomophilyReport {
    let mut histogram = [0usize; 4];
    let mut all = (0.0f64, 0usize);
    let mut bot = (0.0f64, 0usize);
    let mut human = (0.0f64, 0usize);
    for &(v, h) in &values {
        let bin = ((h * 4.0).floor() as usize).min(3);
        histogram[bin] += 1;
        all.0 += h;
        all.1 += 1;
        match labels.label(v) {
            Some(NodeLabel::Bot) => {
                bot.0 += h;
                bot.1 += 1;
            }
            Some(NodeLabel::Human) => {
                human.0 += h;
                human.1 += 1;
            }
            None => {}
        }
    }
    let avg = |acc: (f64, usize)| (acc.1 > 0).then(|| acc.0 / acc.1 as f64);
    HomophilyReport {
        source: source.to_string(),
        n_defined: all.1,
        h: avg(all),
        bot_avg: avg(bot),
        human_avg: avg(human),
        histogram,
        per_node: values,
    }
}

/// Homophily report over the original graph's neighborhoods.
pub fn homophily_report_graph(g: &HeteroGraph, labels: &LabelSet) -> Result<HomophilyReport> {
    let mut values = Vec::new();
    let mut labeled = 0usize;
    for (v, _) in labels.labeled_nodes() {
        labeled += 1;
        if let Some(h) = node_homophily_in_graph(g, labels, v)? {
            values.push((v, h));
        }
    }
    if labeled == 0 {
        return Err(Error::InvalidData("no labeled nodes".into()));
    }
    Ok(build_report("graph", values, labels))
}

/// Homophily report over biased selections: each start node's homophily
/// is measured over its star-neighborhood (the selected union).
pub fn homophily_report_subgraphs(
    subgraphs: &[BiasedSubgraph],
    labels: &LabelSet,
) -> Result<HomophilyReport> {
    let mut values = Vec::new();
    let mut labeled = 0usize;
    for sub in subgraphs {
        if labels.label(sub.start).is_none() {
            continue;
        }
        labeled += 1;
        if let Some(h) = node_homophily(sub.selected_union(), labels, sub.start)? {
            values.push((sub.start, h));
        }
    }
    if labeled == 0 {
        return Err(Error::InvalidData(
            "no labeled start nodes among subgraphs".into(),
        ));
    }
    Ok(build_report("subgraphs", values, labels))
}

/// Mean start-node homophily over a set of subgraphs.
pub fn subgraphs_homophily(subgraphs: &[BiasedSubgraph], labels: &LabelSet) -> Result<f64> {
    let report = homophily_report_subgraphs(subgraphs, labels)?;
    report
        .h
        .ok_or_else(|| Error::InvalidData("no defined start-node homophily".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use crate::mlp::{MlpConfig, MlpModel};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, rels: &[&str], edges: &[(usize, usize, usize)]) -> HeteroGraph {
        let names: Vec<String> = rels.iter().map(|s| s.to_string()).collect();
        HeteroGraph::from_edges(n, &names, edges).unwrap()
    }

    fn labels_from(bits: &[u8]) -> LabelSet {
        let labels = bits.iter().map(|&b| NodeLabel::from_u8(b)).collect::<Vec<_>>();
        LabelSet::new(labels, vec![], vec![], vec![]).unwrap()
    }

    #[test]
    fn triangle_same_labels_all_one() {
        let g = graph(3, &["r"], &[(0, 1, 0), (1, 2, 0), (2, 0, 0)]);
        let labels = labels_from(&[1, 1, 1]);
        for v in 0..3 {
            let h = node_homophily_in_graph(&g, &labels, v).unwrap();
            assert_eq!(h, Some(1.0));
        }
        assert_abs_diff_eq!(graph_homophily(&g, &labels).unwrap(), 1.0);
    }

    #[test]
    fn alternating_path_is_zero() {
        let g = graph(3, &["r"], &[(0, 1, 0), (1, 2, 0)]);
        let labels = labels_from(&[1, 0, 1]);
        assert_eq!(node_homophily_in_graph(&g, &labels, 1).unwrap(), Some(0.0));
        assert_eq!(node_homophily_in_graph(&g, &labels, 0).unwrap(), Some(0.0));
        assert_eq!(node_homophily_in_graph(&g, &labels, 2).unwrap(), Some(0.0));
        assert_abs_diff_eq!(graph_homophily(&g, &labels).unwrap(), 0.0);
    }

    #[test]
    fn half_matching_neighbors() {
        let neighbors = [1, 2, 3, 4];
        let labels = labels_from(&[1, 1, 1, 0, 0]);
        let h = node_homophily(&neighbors, &labels, 0).unwrap();
        assert_eq!(h, Some(0.5));
    }

    #[test]
    fn unlabeled_center_and_no_labeled_neighbors() {
        let labels = LabelSet::new(
            vec![None, Some(NodeLabel::Bot), None],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        assert!(node_homophily(&[1], &labels, 0).is_err());
        assert_eq!(node_homophily(&[0, 2], &labels, 1).unwrap(), None);
    }

    #[test]
    fn planted_partition_is_homophilic_by_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 120;
        let half = n / 2;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let same = (i < half) == (j < half);
                let p = if same { 0.08 } else { 0.005 };
                if rng.gen::<f64>() < p {
                    edges.push((i, j, 0usize));
                }
            }
        }
        let g = graph(n, &["r"], &edges);
        let bits: Vec<u8> = (0..n).map(|i| u8::from(i < half)).collect();
        let labels = labels_from(&bits);

        // Brute-force oracle straight off the raw edge list.
        let mut neigh: Vec<HashSet<usize>> = vec![HashSet::new(); n];
        for &(a, b, _) in &edges {
            neigh[a].insert(b);
            neigh[b].insert(a);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for v in 0..n {
            if neigh[v].is_empty() {
                continue;
            }
            let same = neigh[v].iter().filter(|&&u| bits[u] == bits[v]).count();
            total += same as f64 / neigh[v].len() as f64;
            count += 1;
        }
        let oracle = total / count as f64;
        let computed = graph_homophily(&g, &labels).unwrap();
        assert_abs_diff_eq!(computed, oracle, epsilon = 1e-12);
        assert!(computed > 0.5, "planted partition should be homophilic");
    }

    fn toy_model(s: usize) -> MlpModel {
        MlpModel::init(
            s,
            &MlpConfig {
                hidden: 4,
                seed: 3,
                ..MlpConfig::default()
            },
        )
    }

    fn uniform_features(n: usize, s: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((n, s), |_| rng.gen::<f64>());
        FeatureMatrix::new(x, vec![("description".to_string(), s)]).unwrap()
    }

    #[test]
    fn combined_score_arithmetic() {
        let g = graph(3, &["r"], &[(0, 1, 0), (1, 0, 0)]);
        let view = g.relation_view_at(0);
        let ppr = approx_ppr(&view, 0, 0.5, 1e-9).unwrap();
        let sims = vec![0.8; ppr.estimates().len()];
        let combined = combined_scores(&ppr, &sims, 0.5).unwrap();
        assert!(combined.iter().all(|&(id, _)| id != 0));
        let (id, p) = combined[0];
        assert_eq!(id, 1);
        assert_abs_diff_eq!(p, 0.5 * ppr.estimate(1) + 0.5 * 0.8, epsilon = 1e-12);
        assert!(combined_scores(&ppr, &sims, 1.5).is_err());
    }

    #[test]
    fn lambda_one_matches_pure_ppr_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 60;
        let edges: Vec<(usize, usize, usize)> = (0..300)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), 0usize))
            .collect();
        let g = graph(n, &["r"], &edges);
        let features = uniform_features(n, 6);
        let model = toy_model(6);
        let params = SampleParams {
            k: 8,
            lambda: 1.0,
            ..SampleParams::default()
        };
        let sub = build_biased_subgraph(&g, &model, &features, 0, &params).unwrap();

        let view = g.relation_view_at(0);
        let ppr = approx_ppr(&view, 0, params.alpha, params.eps).unwrap();
        let mut by_ppr: Vec<(usize, f64)> = ppr
            .estimates()
            .iter()
            .copied()
            .filter(|&(id, _)| id != 0)
            .collect();
        by_ppr.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = by_ppr.iter().take(8).map(|&(id, _)| id).collect();
        assert_eq!(sub.relations[0].selected, expected);
    }

    #[test]
    fn lambda_half_set_equals_unweighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let len = rng.gen_range(5..40);
            let pis: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let sims: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let k = rng.gen_range(1..=len);

            let mut weighted: Vec<(usize, f64)> = (0..len)
                .map(|i| (i, 0.5 * pis[i] + 0.5 * sims[i]))
                .collect();
            let mut unweighted: Vec<(usize, f64)> =
                (0..len).map(|i| (i, pis[i] + sims[i])).collect();
            let sort = |v: &mut Vec<(usize, f64)>| {
                v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            };
            sort(&mut weighted);
            sort(&mut unweighted);
            let a: HashSet<usize> = weighted.iter().take(k).map(|&(i, _)| i).collect();
            let b: HashSet<usize> = unweighted.iter().take(k).map(|&(i, _)| i).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn isolated_start_node_yields_singleton() {
        let g = graph(4, &["r", "q"], &[(1, 2, 0), (2, 1, 1)]);
        let features = uniform_features(4, 5);
        let model = toy_model(5);
        let sub =
            build_biased_subgraph(&g, &model, &features, 3, &SampleParams::default()).unwrap();
        assert_eq!(sub.members(), &[3]);
        for rel in &sub.relations {
            assert!(rel.selected.is_empty());
            assert!(rel.edges.is_empty());
        }
    }

    #[test]
    fn saturated_top_k_keeps_all_reachable_and_original_edges() {
        // Strongly connected ring with chords.
        let n = 10;
        let mut edges = Vec::new();
        for v in 0..n {
            edges.push((v, (v + 1) % n, 0usize));
            edges.push((v, (v + 3) % n, 0usize));
        }
        let g = graph(n, &["r"], &edges);
        let features = uniform_features(n, 4);
        let model = toy_model(4);
        let params = SampleParams {
            k: n,
            eps: 1e-9,
            lambda: 0.5,
            ..SampleParams::default()
        };
        let sub = build_biased_subgraph(&g, &model, &features, 0, &params).unwrap();
        let mut selected = sub.relations[0].selected.clone();
        selected.sort_unstable();
        assert_eq!(selected, (1..n).collect::<Vec<_>>());

        // All original edges among members are retained, plus the star.
        let mut expect: HashSet<(u32, u32)> = edges
            .iter()
            .map(|&(a, b, _)| (sub.local_index(a).unwrap(), sub.local_index(b).unwrap()))
            .collect();
        for u in 1..n {
            expect.insert((0, sub.local_index(u).unwrap()));
        }
        let got: HashSet<(u32, u32)> = sub.relations[0].edges.iter().copied().collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn every_edge_original_or_star() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 80;
        let edges: Vec<(usize, usize, usize)> = (0..500)
            .map(|_| {
                (
                    rng.gen_range(0..n),
                    rng.gen_range(0..n),
                    rng.gen_range(0..2),
                )
            })
            .collect();
        let g = graph(n, &["a", "b"], &edges);
        let features = uniform_features(n, 6);
        let model = toy_model(6);
        let params = SampleParams {
            k: 12,
            ..SampleParams::default()
        };
        for start in [0usize, 7, 33] {
            let sub = build_biased_subgraph(&g, &model, &features, start, &params).unwrap();
            for (r, rel) in sub.relations.iter().enumerate() {
                let original: HashSet<(usize, usize)> = g.edges_of(r).collect();
                for &(a, b) in &rel.edges {
                    let ga = sub.members()[a as usize];
                    let gb = sub.members()[b as usize];
                    let is_original = original.contains(&(ga, gb));
                    let is_star = a == 0;
                    assert!(
                        is_original || is_star,
                        "edge ({ga}, {gb}) in relation {r} is neither original nor star"
                    );
                }
                // Star edges cover the whole selection.
                for &u in &rel.selected {
                    let lu = sub.local_index(u).unwrap();
                    assert!(rel.edges.contains(&(0, lu)));
                }
                assert!(rel.selected.len() <= params.k);
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let n = 50;
        let edges: Vec<(usize, usize, usize)> = (0..250)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), 0usize))
            .collect();
        let g = graph(n, &["r"], &edges);
        let features = uniform_features(n, 5);
        let model = toy_model(5);
        let params = SampleParams {
            k: 10,
            ..SampleParams::default()
        };
        let starts: Vec<usize> = (0..n).collect();
        let a = sample_subgraphs(&g, &model, &features, &starts, &params).unwrap();
        let b = sample_subgraphs(&g, &model, &features, &starts, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cache_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let n = 40;
        let edges: Vec<(usize, usize, usize)> = (0..200)
            .map(|_| {
                (
                    rng.gen_range(0..n),
                    rng.gen_range(0..n),
                    rng.gen_range(0..2),
                )
            })
            .collect();
        let g = graph(n, &["x", "y"], &edges);
        let features = uniform_features(n, 4);
        let model = toy_model(4);
        let params = SampleParams {
            k: 6,
            ..SampleParams::default()
        };
        let starts: Vec<usize> = (0..10).collect();
        let subs = sample_subgraphs(&g, &model, &features, &starts, &params).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bsg");
        save_subgraphs(&path, g.relation_names(), &subs).unwrap();
        let cache = load_subgraphs(&path).unwrap();
        assert_eq!(cache.relation_names, g.relation_names());
        assert_eq!(cache.subgraphs, subs);
        assert!(load_subgraphs(&dir.path().join("missing.bsg")).is_err());
    }

    #[test]
    fn report_bins_and_class_averages() {
        // Path 1-0-1: every defined homophily is 0.
        let g = graph(3, &["r"], &[(0, 1, 0), (1, 2, 0)]);
        let labels = labels_from(&[1, 0, 1]);
        let report = homophily_report_graph(&g, &labels).unwrap();
        assert_eq!(report.histogram, [3, 0, 0, 0]);
        assert_eq!(report.h, Some(0.0));

        // All-bot clique: bot average 1.0, human average omitted.
        let g = graph(3, &["r"], &[(0, 1, 0), (1, 2, 0), (2, 0, 0)]);
        let labels = labels_from(&[1, 1, 1]);
        let report = homophily_report_graph(&g, &labels).unwrap();
        assert_eq!(report.bot_avg, Some(1.0));
        assert_eq!(report.human_avg, None);
        assert_eq!(report.histogram, [0, 0, 0, 3]);
    }
}
