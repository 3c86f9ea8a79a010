//! Immutable heterogeneous multi-relation graphs, labels, and splits.
//!
//! Edges are stored directed as given, one compressed adjacency per
//! relation, with both out- and in-neighbors queryable. Node ids are dense
//! integers in `[0, n)`; duplicate edges are dropped at load because all
//! downstream aggregation is over neighbor *sets*.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Compressed sparse adjacency for one direction of one relation.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    /// Build from directed pairs; `pairs` must be sorted and deduplicated.
    fn from_sorted_pairs(n: usize, pairs: &[(usize, usize)]) -> Csr {
        let mut offsets = vec![0usize; n + 1];
        for &(src, _) in pairs {
            offsets[src + 1] += 1;
        }
        for i in 1..offsets.len() {
            offsets[i] += offsets[i - 1];
        }
        let targets = pairs.iter().map(|&(_, dst)| dst).collect();
        Csr { offsets, targets }
    }

    fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// Immutable multi-relation directed graph.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    n: usize,
    relations: Vec<String>,
    out_adj: Vec<Csr>,
    in_adj: Vec<Csr>,
    edge_counts: Vec<usize>,
}

impl HeteroGraph {
    /// Build from an edge list `(src, dst, relation index)`. Duplicates
    /// are removed; self-loops are kept as given.
    pub fn from_edges(
        n: usize,
        relation_names: &[String],
        edges: &[(usize, usize, usize)],
    ) -> Result<HeteroGraph> {
        let mut seen = HashSet::new();
        for name in relation_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate relation name `{name}`")));
            }
        }
        let mut per_rel: Vec<Vec<(usize, usize)>> = vec![Vec::new(); relation_names.len()];
        for &(src, dst, rel) in edges {
            if src >= n {
                return Err(Error::NodeOutOfRange { id: src, n });
            }
            if dst >= n {
                return Err(Error::NodeOutOfRange { id: dst, n });
            }
            if rel >= relation_names.len() {
                return Err(Error::UnknownRelation(format!("index {rel}")));
            }
            per_rel[rel].push((src, dst));
        }
        let mut out_adj = Vec::with_capacity(per_rel.len());
        let mut in_adj = Vec::with_capacity(per_rel.len());
        let mut edge_counts = Vec::with_capacity(per_rel.len());
        for pairs in &mut per_rel {
            pairs.sort_unstable();
            pairs.dedup();
            out_adj.push(Csr::from_sorted_pairs(n, pairs));
            let mut rev: Vec<(usize, usize)> = pairs.iter().map(|&(s, d)| (d, s)).collect();
            rev.sort_unstable();
            in_adj.push(Csr::from_sorted_pairs(n, &rev));
            edge_counts.push(pairs.len());
        }
        Ok(HeteroGraph {
            n,
            relations: relation_names.to_vec(),
            out_adj,
            in_adj,
            edge_counts,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    pub fn edge_count(&self, relation: usize) -> usize {
        self.edge_counts[relation]
    }

    pub fn total_edge_count(&self) -> usize {
        self.edge_counts.iter().sum()
    }

    /// Read-only view of one relation's adjacency.
    pub fn relation_view(&self, name: &str) -> Result<RelationView<'_>> {
        let idx = self
            .relation_index(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))?;
        Ok(self.relation_view_at(idx))
    }

    pub fn relation_view_at(&self, idx: usize) -> RelationView<'_> {
        RelationView {
            n: self.n,
            forward: &self.out_adj[idx],
            backward: &self.in_adj[idx],
            edge_count: self.edge_counts[idx],
        }
    }

    /// Directed edges of one relation, sorted by `(src, dst)`.
    pub fn edges_of(&self, relation: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let csr = &self.out_adj[relation];
        (0..self.n).flat_map(move |src| csr.neighbors(src).iter().map(move |&dst| (src, dst)))
    }

    /// Union of in- and out-neighbors over every relation, sorted and
    /// deduplicated. This is the undirected neighborhood used by the
    /// homophily metrics.
    pub fn neighborhood(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for r in 0..self.relation_count() {
            out.extend_from_slice(self.out_adj[r].neighbors(v));
            out.extend_from_slice(self.in_adj[r].neighbors(v));
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Borrowed adjacency of a single relation. `out_neighbors` follows the
/// stored edge direction; [`RelationView::reversed`] swaps directions for
/// walks over in-edges.
#[derive(Debug, Clone, Copy)]
pub struct RelationView<'g> {
    n: usize,
    forward: &'g Csr,
    backward: &'g Csr,
    edge_count: usize,
}

impl<'g> RelationView<'g> {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn out_neighbors(&self, v: usize) -> &'g [usize] {
        self.forward.neighbors(v)
    }

    pub fn in_neighbors(&self, v: usize) -> &'g [usize] {
        self.backward.neighbors(v)
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.forward.degree(v)
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.backward.degree(v)
    }

    pub fn reversed(&self) -> RelationView<'g> {
        RelationView {
            n: self.n,
            forward: self.backward,
            backward: self.forward,
            edge_count: self.edge_count,
        }
    }
}

/// Node class. Bot is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeLabel {
    Human,
    Bot,
}

impl NodeLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            NodeLabel::Human => 0,
            NodeLabel::Bot => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<NodeLabel> {
        match v {
            0 => Some(NodeLabel::Human),
            1 => Some(NodeLabel::Bot),
            _ => None,
        }
    }
}

/// Per-node labels plus disjoint train/validation/test node-id sets.
#[derive(Debug, Clone)]
pub struct LabelSet {
    labels: Vec<Option<NodeLabel>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabelSet {
    pub fn new(
        labels: Vec<Option<NodeLabel>>,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<LabelSet> {
        let set = LabelSet {
            labels,
            train,
            val,
            test,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let mut seen = vec![false; n];
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &v in split {
                if v >= n {
                    return Err(Error::NodeOutOfRange { id: v, n });
                }
                if seen[v] {
                    return Err(Error::InvalidData(format!(
                        "overlapping splits: node {v} appears twice (last in {name})"
                    )));
                }
                seen[v] = true;
                if self.labels[v].is_none() {
                    return Err(Error::InvalidData(format!(
                        "unlabeled split member: node {v} in {name} has no label"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, v: usize) -> Option<NodeLabel> {
        self.labels.get(v).copied().flatten()
    }

    pub fn split(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidParameter(format!("unknown split `{other}`"))),
        }
    }

    pub fn labeled_nodes(&self) -> impl Iterator<Item = (usize, NodeLabel)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(v, l)| l.map(|l| (v, l)))
    }
}

/// Load a TSV edge file (`src<TAB>dst<TAB>relation`, no header).
pub fn load_graph(edges_path: &Path, n: usize, relation_names: &[String]) -> Result<HeteroGraph> {
    let file = File::open(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let reader = BufReader::new(file);
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(edges_path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (src, dst, rel) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(d), Some(r), None) => (s, d, r),
            _ => {
                return Err(Error::parse(
                    edges_path,
                    lineno,
                    "expected `src<TAB>dst<TAB>relation`",
                ));
            }
        };
        let src: usize = src
            .parse()
            .map_err(|_| Error::parse(edges_path, lineno, format!("bad node id `{src}`")))?;
        let dst: usize = dst
            .parse()
            .map_err(|_| Error::parse(edges_path, lineno, format!("bad node id `{dst}`")))?;
        if src >= n || dst >= n {
            return Err(Error::parse(
                edges_path,
                lineno,
                format!("node id out of range (n = {n})"),
            ));
        }
        let rel_idx = relation_names
            .iter()
            .position(|name| name == rel)
            .ok_or_else(|| Error::parse(edges_path, lineno, format!("unknown relation `{rel}`")))?;
        edges.push((src, dst, rel_idx));
    }
    HeteroGraph::from_edges(n, relation_names, &edges)
}

/// Write the graph back out in the edge TSV format.
pub fn write_edges_tsv(path: &Path, g: &HeteroGraph) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (r, name) in g.relation_names().iter().enumerate() {
        for (src, dst) in g.edges_of(r) {
            writeln!(w, "{src}\t{dst}\t{name}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Load labels without any splits (all masks empty).
pub fn load_labels_only(labels_path: &Path, n: usize) -> Result<LabelSet> {
    LabelSet::new(read_label_column(labels_path, n)?, vec![], vec![], vec![])
}

fn read_label_column(labels_path: &Path, n: usize) -> Result<Vec<Option<NodeLabel>>> {
    let file = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let reader = BufReader::new(file);
    let mut labels: Vec<Option<NodeLabel>> = vec![None; n];
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(labels_path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (id, lab) = match (fields.next(), fields.next(), fields.next()) {
            (Some(i), Some(l), None) => (i, l),
            _ => {
                return Err(Error::parse(
                    labels_path,
                    lineno,
                    "expected `node_id<TAB>label`",
                ));
            }
        };
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse(labels_path, lineno, format!("bad node id `{id}`")))?;
        if id >= n {
            return Err(Error::parse(
                labels_path,
                lineno,
                format!("node id out of range (n = {n})"),
            ));
        }
        let value: u8 = lab
            .parse()
            .map_err(|_| Error::parse(labels_path, lineno, format!("bad label `{lab}`")))?;
        let label = NodeLabel::from_u8(value)
            .ok_or_else(|| Error::parse(labels_path, lineno, format!("bad label `{lab}`")))?;
        labels[id] = Some(label);
    }
    Ok(labels)
}

/// Load labels (`node_id<TAB>{0|1}`) and splits (`[train]`/`[val]`/`[test]`
/// section headers, one node id per line).
pub fn load_labels(labels_path: &Path, splits_path: &Path, n: usize) -> Result<LabelSet> {
    let labels = read_label_column(labels_path, n)?;
    let file = File::open(splits_path).map_err(|e| Error::io(splits_path, e))?;
    let reader = BufReader::new(file);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut current: Option<&mut Vec<usize>> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(splits_path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "[train]" => current = Some(&mut train),
            "[val]" => current = Some(&mut val),
            "[test]" => current = Some(&mut test),
            token => {
                let id: usize = token.parse().map_err(|_| {
                    Error::parse(splits_path, lineno, format!("bad split entry `{token}`"))
                })?;
                match current.as_deref_mut() {
                    Some(split) => split.push(id),
                    None => {
                        return Err(Error::parse(
                            splits_path,
                            lineno,
                            "node id before any section header",
                        ));
                    }
                }
            }
        }
    }
    LabelSet::new(labels, train, val, test)
}

pub fn write_labels_tsv(path: &Path, labels: &LabelSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (v, label) in labels.labeled_nodes() {
        writeln!(w, "{v}\t{}", label.as_u8()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn write_splits(path: &Path, labels: &LabelSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (header, split) in [
        ("[train]", &labels.train),
        ("[val]", &labels.val),
        ("[test]", &labels.test),
    ] {
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for v in split {
            writeln!(w, "{v}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}
