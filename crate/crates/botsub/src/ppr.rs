//! Personalized PageRank over one relation.
//!
//! [`approx_ppr`] is the production path: forward push over estimate and
//! residual vectors, pushing the lowest-id active node first so runs are
//! deterministic. [`exact_ppr_oracle`] solves the dense linear system and
//! exists to cross-check the push method in tests.
//!
//! Dangling nodes (zero out-degree) teleport their outflow back to the
//! start node, which keeps the walk operator stochastic; the oracle uses
//! the same convention.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::RelationView;

/// Sparse PPR estimate for one start node.
#[derive(Debug, Clone)]
pub struct PprVector {
    pub start: usize,
    pub alpha: f64,
    pub eps: f64,
    estimates: Vec<(usize, f64)>,
    residuals: Vec<(usize, f64)>,
}

impl PprVector {
    /// Nonzero estimates, sorted by node id.
    pub fn estimates(&self) -> &[(usize, f64)] {
        &self.estimates
    }

    /// Nonzero terminal residuals, sorted by node id.
    pub fn residuals(&self) -> &[(usize, f64)] {
        &self.residuals
    }

    pub fn estimate(&self, v: usize) -> f64 {
        match self.estimates.binary_search_by_key(&v, |&(id, _)| id) {
            Ok(idx) => self.estimates[idx].1,
            Err(_) => 0.0,
        }
    }

    pub fn estimate_mass(&self) -> f64 {
        self.estimates.iter().map(|&(_, v)| v).sum()
    }

    pub fn residual_mass(&self) -> f64 {
        self.residuals.iter().map(|&(_, v)| v).sum()
    }
}

fn validate(view: &RelationView, start: usize, alpha: f64, eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    if start >= view.node_count() {
        return Err(Error::NodeOutOfRange {
            id: start,
            n: view.node_count(),
        });
    }
    Ok(())
}

pub fn approx_ppr(view: &RelationView, start: usize, alpha: f64, eps: f64) -> Result<PprVector> {
    approx_ppr_observed(view, start, alpha, eps, |_, _| {})
}

/// Forward push with a per-push observer over the dense estimate and
/// residual arrays, used by the mass-conservation checks.
pub fn approx_ppr_observed(
    view: &RelationView,
    start: usize,
    alpha: f64,
    eps: f64,
    mut observe: impl FnMut(&[f64], &[f64]),
) -> Result<PprVector> {
    validate(view, start, alpha, eps)?;
    let n = view.node_count();
    let mut est = vec![0.0f64; n];
    let mut res = vec![0.0f64; n];
    let mut touched = vec![start];
    let mut is_touched = vec![false; n];
    is_touched[start] = true;
    res[start] = 1.0;

    let threshold = |v: usize| eps * view.out_degree(v).max(1) as f64;

    let mut active: BTreeSet<usize> = BTreeSet::new();
    if res[start] >= threshold(start) {
        active.insert(start);
    }

    while let Some(&u) = active.iter().next() {
        active.remove(&u);
        let r = res[u];
        if r < threshold(u) {
            continue;
        }
        res[u] = 0.0;
        est[u] += alpha * r;
        let spread = (1.0 - alpha) * r;
        let degree = view.out_degree(u);
        if degree == 0 {
            // Dangling: outflow returns to the start node.
            res[start] += spread;
            if res[start] >= threshold(start) {
                active.insert(start);
            }
        } else {
            let share = spread / degree as f64;
            for &w in view.out_neighbors(u) {
                res[w] += share;
                if !is_touched[w] {
                    is_touched[w] = true;
                    touched.push(w);
                }
                if res[w] >= threshold(w) {
                    active.insert(w);
                }
            }
        }
        observe(&est, &res);
    }

    touched.sort_unstable();
    let estimates = touched
        .iter()
        .filter(|&&v| est[v] > 0.0)
        .map(|&v| (v, est[v]))
        .collect();
    let residuals = touched
        .iter()
        .filter(|&&v| res[v] > 0.0)
        .map(|&v| (v, res[v]))
        .collect();
    Ok(PprVector {
        start,
        alpha,
        eps,
        estimates,
        residuals,
    })
}

/// Upper bound on nodes for the dense oracle.
pub const ORACLE_NODE_LIMIT: usize = 2000;

/// Dense solve of the PPR system with a row-stochastic walk over
/// out-neighbors and dangling rows teleporting to `start`.
pub fn exact_ppr_oracle(view: &RelationView, start: usize, alpha: f64) -> Result<Vec<f64>> {
    validate(view, start, alpha, 1.0)?;
    let n = view.node_count();
    if n > ORACLE_NODE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "dense oracle limited to {ORACLE_NODE_LIMIT} nodes, got {n}"
        )));
    }

    // Solve (I - (1 - alpha) P^T) x = alpha * e_start, where
    // P[u][w] = 1/outdeg(u) along edges and P[u][start] = 1 for dangling u.
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for u in 0..n {
        let degree = view.out_degree(u);
        if degree == 0 {
            a[start][u] -= 1.0 - alpha;
        } else {
            let p = (1.0 - alpha) / degree as f64;
            for &w in view.out_neighbors(u) {
                a[w][u] -= p;
            }
        }
    }
    a[start][n] = alpha;

    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::InvalidData(
                "singular PPR system; invalid alpha?".into(),
            ));
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..=n {
                let v = a[col][k];
                a[row][k] -= factor * v;
            }
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = a[row][n];
        for col in row + 1..n {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::HeteroGraph;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> HeteroGraph {
        let triples: Vec<(usize, usize, usize)> =
            edges.iter().map(|&(s, d)| (s, d, 0usize)).collect();
        HeteroGraph::from_edges(n, &["rel".to_string()], &triples).unwrap()
    }

    #[test]
    fn self_loop_keeps_all_mass() {
        let g = graph(1, &[(0, 0)]);
        let view = g.relation_view_at(0);
        let ppr = approx_ppr(&view, 0, 0.3, 1e-9).unwrap();
        assert!(ppr.estimate(0) > 1.0 - 1e-8);
        assert!(ppr.residual_mass() < 1e-8);
    }

    #[test]
    fn two_node_cycle_matches_closed_form() {
        // pi(v) = alpha / (1 - (1-alpha)^2) = 2/3 at alpha = 0.5.
        let g = graph(2, &[(0, 1), (1, 0)]);
        let view = g.relation_view_at(0);
        let oracle = exact_ppr_oracle(&view, 0, 0.5).unwrap();
        assert_abs_diff_eq!(oracle[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle[1], 1.0 / 3.0, epsilon = 1e-12);

        let ppr = approx_ppr(&view, 0, 0.5, 1e-10).unwrap();
        assert_abs_diff_eq!(ppr.estimate(0), 2.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(ppr.estimate(1), 1.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn star_ranking_and_leaf_symmetry() {
        // Center 0 with out-edges to 1..=4 and back-edges. Closed form:
        // pi(0) = alpha / (1 - (1-alpha)^2), pi(leaf) = (1-alpha) pi(0) / 4.
        let mut edges = Vec::new();
        for leaf in 1..=4 {
            edges.push((0, leaf));
            edges.push((leaf, 0));
        }
        let g = graph(5, &edges);
        let view = g.relation_view_at(0);
        let alpha = 0.15;
        let oracle = exact_ppr_oracle(&view, 0, alpha).unwrap();
        let center = alpha / (1.0 - (1.0 - alpha) * (1.0 - alpha));
        let leaf = (1.0 - alpha) * center / 4.0;
        assert_abs_diff_eq!(oracle[0], center, epsilon = 1e-12);
        for v in 1..=4 {
            assert_abs_diff_eq!(oracle[v], leaf, epsilon = 1e-12);
            assert!(oracle[0] > oracle[v]);
        }
        let ppr = approx_ppr(&view, 0, alpha, 1e-8).unwrap();
        for v in 1..=4 {
            assert!(ppr.estimate(0) > ppr.estimate(v));
            assert_abs_diff_eq!(ppr.estimate(v), ppr.estimate(1), epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_unreachable_node_is_zero_and_sums_to_one() {
        let g = graph(3, &[(0, 1), (1, 0)]);
        let view = g.relation_view_at(0);
        let oracle = exact_ppr_oracle(&view, 0, 0.2).unwrap();
        assert_abs_diff_eq!(oracle[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_invalid_parameters() {
        let g = graph(2, &[(0, 1)]);
        let view = g.relation_view_at(0);
        assert!(approx_ppr(&view, 0, 0.0, 1e-4).is_err());
        assert!(approx_ppr(&view, 0, 1.0, 1e-4).is_err());
        assert!(approx_ppr(&view, 0, 0.5, 0.0).is_err());
        assert!(approx_ppr(&view, 7, 0.5, 1e-4).is_err());
        assert!(exact_ppr_oracle(&view, 0, 1.5).is_err());
    }

    fn random_graph(n: usize, m: usize, seed: u64) -> HeteroGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(usize, usize)> = (0..m)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        graph(n, &edges)
    }

    #[test]
    fn push_conserves_mass_at_every_step() {
        let g = random_graph(40, 160, 3);
        let view = g.relation_view_at(0);
        let mut checked = 0usize;
        let ppr = approx_ppr_observed(&view, 5, 0.15, 1e-7, |est, res| {
            let total: f64 = est.iter().sum::<f64>() + res.iter().sum::<f64>();
            assert!((total - 1.0).abs() <= 1e-9, "mass drifted to {total}");
            checked += 1;
        })
        .unwrap();
        assert!(checked > 10);
        let total = ppr.estimate_mass() + ppr.residual_mass();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn termination_satisfies_residual_threshold() {
        let g = random_graph(60, 240, 4);
        let view = g.relation_view_at(0);
        let eps = 1e-5;
        let ppr = approx_ppr(&view, 0, 0.2, eps).unwrap();
        for &(v, r) in ppr.residuals() {
            let bound = eps * view.out_degree(v).max(1) as f64;
            assert!(r < bound, "residual {r} at node {v} >= {bound}");
        }
    }

    #[test]
    fn shrinking_eps_never_decreases_estimates() {
        for seed in 0..5u64 {
            let g = random_graph(50, 200, seed);
            let view = g.relation_view_at(0);
            let coarse = approx_ppr(&view, 1, 0.15, 1e-3).unwrap();
            let fine = approx_ppr(&view, 1, 0.15, 1e-5).unwrap();
            for &(v, value) in coarse.estimates() {
                assert!(
                    fine.estimate(v) >= value - 1e-12,
                    "estimate shrank at node {v}: {} -> {}",
                    value,
                    fine.estimate(v)
                );
            }
        }
    }

    #[test]
    fn approx_matches_oracle_within_push_bound() {
        for seed in 0..10u64 {
            let n = 80;
            let m = 320;
            let g = random_graph(n, m, 100 + seed);
            let view = g.relation_view_at(0);
            let eps = 1e-6;
            for alpha in [0.15, 0.5] {
                let ppr = approx_ppr(&view, 3, alpha, eps).unwrap();
                let oracle = exact_ppr_oracle(&view, 3, alpha).unwrap();
                let mut l1 = 0.0;
                for v in 0..n {
                    l1 += (ppr.estimate(v) - oracle[v]).abs();
                }
                let bound = 2.0 * eps * g.edge_count(0) as f64;
                assert!(l1 <= bound, "l1 {l1} exceeds bound {bound} (seed {seed})");
            }
        }
    }

    #[test]
    fn reversed_view_walks_in_edges() {
        let g = graph(3, &[(0, 1), (0, 2)]);
        let view = g.relation_view_at(0);
        // Forward from 1: node 1 has no out-edges, so mass teleports home.
        let fwd = approx_ppr(&view, 1, 0.5, 1e-9).unwrap();
        assert!(fwd.estimate(1) > 0.99);
        // Reversed from 1: edge (0, 1) becomes 1 -> 0.
        let rev = approx_ppr(&view.reversed(), 1, 0.5, 1e-9).unwrap();
        assert!(rev.estimate(0) > 0.2);
    }

    #[test]
    fn deterministic_across_runs() {
        let g = random_graph(70, 280, 9);
        let view = g.relation_view_at(0);
        let a = approx_ppr(&view, 2, 0.15, 1e-6).unwrap();
        let b = approx_ppr(&view, 2, 0.15, 1e-6).unwrap();
        assert_eq!(a.estimates(), b.estimates());
        assert_eq!(a.residuals(), b.residuals());
    }
}
