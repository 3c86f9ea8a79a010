use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::FeatureMatrix;
use crate::graph::{HeteroGraph, LabelSet, NodeLabel};
use crate::mlp::{MlpConfig, MlpModel};
use crate::sampler::{sample_subgraphs, SampleParams, SubgraphCache};

fn small_cfg(hidden: usize, layers: usize, relations: usize) -> (GnnConfig, Vec<String>) {
    let cfg = GnnConfig {
        hidden,
        layers,
        attention_dim: 3,
        dropout: 0.0,
        seed: 7,
        ..GnnConfig::default()
    };
    let names = (0..relations).map(|r| format!("rel{r}")).collect();
    (cfg, names)
}

fn tensors(x: Array2<f64>, adjs: Vec<InAdjacency>) -> SubgraphTensors {
    SubgraphTensors {
        start: 0,
        x,
        adj: adjs,
    }
}

fn random_tensors(
    rng: &mut ChaCha8Rng,
    m: usize,
    s: usize,
    relations: usize,
) -> SubgraphTensors {
    let x = Array2::from_shape_fn((m, s), |_| rng.gen::<f64>() * 2.0 - 1.0);
    let adjs = (0..relations)
        .map(|_| {
            let count = rng.gen_range(m..3 * m);
            let edges: Vec<(u32, u32)> = (0..count)
                .map(|_| {
                    (
                        rng.gen_range(0..m) as u32,
                        rng.gen_range(0..m) as u32,
                    )
                })
                .collect();
            InAdjacency::from_subgraph_edges(m, &edges)
        })
        .collect();
    tensors(x, adjs)
}

#[test]
fn init_hidden_contract() {
    let (cfg, names) = small_cfg(3, 1, 1);
    let mut model = GnnModel::init(4, &names, &cfg);
    let x = array![[1.0, -2.0, 0.5, 3.0], [0.0, 0.0, 0.0, 0.0]];

    // Zero weights and bias: all-zero hidden rows.
    model.w2.fill(0.0);
    model.b2.fill(0.0);
    assert!(model.init_hidden(x.view()).unwrap().iter().all(|&v| v == 0.0));

    // x = 0 row yields sigma(b2).
    model.b2 = array![1.0, -1.0, 0.25];
    let h = model.init_hidden(x.view()).unwrap();
    assert_abs_diff_eq!(h[(1, 0)], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(h[(1, 1)], -0.01, epsilon = 1e-12);
    assert_abs_diff_eq!(h[(1, 2)], 0.25, epsilon = 1e-12);

    // Positive homogeneity of leaky-relu: sigma(c z) = c sigma(z), c > 0.
    let z = array![[0.7, -0.3], [2.0, -5.0]];
    let a = leaky_relu(&z, 0.01);
    let scaled = leaky_relu(&z.mapv(|v| 3.0 * v), 0.01);
    for (lhs, rhs) in scaled.iter().zip(a.iter()) {
        assert_abs_diff_eq!(*lhs, 3.0 * rhs, epsilon = 1e-12);
    }

    assert!(model.init_hidden(array![[1.0, 2.0]].view()).is_err());
}

#[test]
fn gcn_layer_star_mean_aggregation() {
    let (mut cfg, names) = small_cfg(2, 1, 1);
    cfg.leaky_slope = 1.0; // linear activation
    let mut model = GnnModel::init(2, &names, &cfg);
    model.w3[0][0] = Array2::eye(2);

    // Root 0 with 4 leaves messaging it (star channels), self-loops added.
    let stored: Vec<(u32, u32)> = (1..=4).map(|leaf| (0u32, leaf as u32)).collect();
    let adj = InAdjacency::from_subgraph_edges(5, &stored);
    let z_leaf = array![2.0, -4.0];
    let z_root = array![10.0, 6.0];
    let mut hidden = Array2::zeros((5, 2));
    hidden.row_mut(0).assign(&z_root);
    for leaf in 1..=4 {
        hidden.row_mut(leaf).assign(&z_leaf);
    }
    let out = model.gcn_layer(0, 1, hidden.view(), &adj).unwrap();
    // Root aggregates its 4 leaves plus itself: (4 z + z_root) / 5.
    for j in 0..2 {
        assert_abs_diff_eq!(
            out[(0, j)],
            (4.0 * z_leaf[j] + z_root[j]) / 5.0,
            epsilon = 1e-12
        );
    }
    // Leaves see only themselves (self-loop).
    for leaf in 1..=4 {
        for j in 0..2 {
            assert_abs_diff_eq!(out[(leaf, j)], z_leaf[j], epsilon = 1e-12);
        }
    }
}

#[test]
fn gcn_layer_without_channels_is_zero() {
    let (cfg, names) = small_cfg(2, 1, 1);
    let model = GnnModel::init(2, &names, &cfg);
    // No edges, no self-loops: every aggregation is empty.
    let adj = InAdjacency::from_message_edges(3, &[], false);
    let hidden = Array2::from_elem((3, 2), 5.0);
    let out = model.gcn_layer(0, 1, hidden.view(), &adj).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn gcn_layer_is_permutation_equivariant() {
    let (cfg, names) = small_cfg(3, 1, 1);
    let model = GnnModel::init(3, &names, &cfg);
    let m = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hidden = Array2::from_shape_fn((m, 3), |_| rng.gen::<f64>());
    let edges: Vec<(u32, u32)> = vec![(0, 1), (1, 2), (2, 0), (3, 4), (4, 0), (1, 3)];
    let adj = InAdjacency::from_message_edges(m, &edges, true);
    let out = model.gcn_layer(0, 1, hidden.view(), &adj).unwrap();

    // Relabel nodes by a fixed permutation and recompute.
    let perm = [3usize, 0, 4, 2, 1];
    let mut hidden_p = Array2::zeros((m, 3));
    for i in 0..m {
        hidden_p.row_mut(perm[i]).assign(&hidden.row(i));
    }
    let edges_p: Vec<(u32, u32)> = edges
        .iter()
        .map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32))
        .collect();
    let adj_p = InAdjacency::from_message_edges(m, &edges_p, true);
    let out_p = model.gcn_layer(0, 1, hidden_p.view(), &adj_p).unwrap();
    for i in 0..m {
        for j in 0..3 {
            assert_abs_diff_eq!(out_p[(perm[i], j)], out[(i, j)], epsilon = 1e-12);
        }
    }
}

#[test]
fn concat_widths_and_block_recovery() {
    let h0 = Array2::from_elem((3, 4), 1.0);
    let h1 = Array2::from_elem((3, 4), 2.0);
    let h2 = Array2::from_elem((3, 4), 3.0);
    let single = concat_intermediate(&[h0.view()]).unwrap();
    assert_eq!(single, h0);
    let all = concat_intermediate(&[h0.view(), h1.view(), h2.view()]).unwrap();
    assert_eq!(all.ncols(), 12);
    assert_eq!(all.slice(ndarray::s![.., 4..8]), h1);
    assert!(concat_intermediate(&[]).is_err());
}

#[test]
fn attention_contract() {
    let (cfg, names) = small_cfg(4, 0, 1);
    let model = GnnModel::init(4, &names, &cfg);
    let rows = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64);
    let (fused, beta) = model.semantic_attention(&[rows.clone()]).unwrap();
    assert_eq!(beta, vec![1.0]);
    assert_eq!(fused, rows);

    let (cfg, names) = small_cfg(4, 0, 2);
    let model = GnnModel::init(4, &names, &cfg);
    let (fused, beta) = model
        .semantic_attention(&[rows.clone(), rows.clone()])
        .unwrap();
    assert_abs_diff_eq!(beta[0], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(beta[1], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(beta.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    assert!(beta.iter().all(|&b| b > 0.0));
    for (a, b) in fused.iter().zip(rows.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn mean_fusion_is_exactly_uniform() {
    let (mut cfg, names) = small_cfg(4, 0, 3);
    cfg.fusion = Fusion::Mean;
    let model = GnnModel::init(4, &names, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blocks: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_fn((2, 4), |_| rng.gen::<f64>()))
        .collect();
    let (_, beta) = model.semantic_attention(&blocks).unwrap();
    assert_eq!(beta, vec![1.0 / 3.0; 3]);
}

#[test]
fn predict_contract() {
    let (cfg, names) = small_cfg(4, 0, 1);
    let mut model = GnnModel::init(4, &names, &cfg);
    model.w_out.fill(0.0);
    model.b_out.fill(0.0);
    let fused = Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64);
    let probs = model.predict(fused.view()).unwrap();
    for row in probs.rows() {
        assert_abs_diff_eq!(row[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 0.5, epsilon = 1e-12);
    }
    // Shift invariance in the output bias.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    model.w_out = Array2::from_shape_fn((2, 4), |_| rng.gen::<f64>());
    let before = model.predict(fused.view()).unwrap();
    model.b_out += 2.5;
    let after = model.predict(fused.view()).unwrap();
    for (a, b) in before.iter().zip(after.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
    for row in after.rows() {
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
    }
}

#[test]
fn loss_closed_forms() {
    let (cfg, names) = small_cfg(2, 0, 1);
    let mut model = GnnModel::init(2, &names, &cfg);

    // Exact predictions, no regularization: loss ~ 0.
    let probs = array![[0.0, 1.0], [1.0, 0.0]];
    let loss = model.loss(probs.view(), &[1, 0], 0.0).unwrap();
    assert!(loss.abs() < 1e-9, "got {loss}");

    // A 0.5 prediction contributes ln 2.
    let probs = array![[0.5, 0.5]];
    let loss = model.loss(probs.view(), &[1], 0.0).unwrap();
    assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);

    // Regularization: a single weight of 2 at lambda 0.1 adds 0.4.
    let mut params = vec![0.0; model.param_vec().len()];
    params[0] = 2.0;
    model.set_param_vec(&params);
    let base = model.loss(probs.view(), &[1], 0.0).unwrap();
    let with_reg = model.loss(probs.view(), &[1], 0.1).unwrap();
    assert_abs_diff_eq!(with_reg - base, 0.4, epsilon = 1e-12);

    assert!(model.loss(probs.view(), &[2], 0.0).is_err());
}

#[test]
fn full_gradient_check_against_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(layers, concat, fusion) in &[
        (2usize, true, Fusion::Attention),
        (1, false, Fusion::Attention),
        (2, true, Fusion::Mean),
        (0, true, Fusion::Attention),
    ] {
        let (mut cfg, names) = small_cfg(4, layers, 2);
        cfg.fusion = fusion;
        cfg.concat_intermediate = concat;
        let mut model = GnnModel::init(5, &names, &cfg);

        let t1 = random_tensors(&mut rng, 6, 5, 2);
        let t2 = random_tensors(&mut rng, 4, 5, 2);
        let batch = Batch::new(vec![&t1, &t2], vec![1, 0]).unwrap();
        let reg = 1e-3;

        let analytic = model.batch_grad_vec(&batch, reg).unwrap();
        let params = model.param_vec();
        let h = 1e-5;
        for idx in 0..params.len() {
            let mut plus = params.clone();
            plus[idx] += h;
            model.set_param_vec(&plus);
            let lp = model.batch_loss(&batch, reg).unwrap();
            let mut minus = params.clone();
            minus[idx] -= h;
            model.set_param_vec(&minus);
            let lm = model.batch_loss(&batch, reg).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let diff = (analytic[idx] - numeric).abs();
            let rel = diff / analytic[idx].abs().max(numeric.abs()).max(1e-8);
            // Coordinates whose difference sits at the roundoff floor of
            // the central difference cannot be resolved to 1e-5 relative.
            assert!(
                rel <= 1e-5 || diff <= 1e-9,
                "layers={layers} concat={concat} fusion={fusion:?} param {idx}: \
                 analytic {} vs numeric {numeric} (rel {rel:.2e})",
                analytic[idx]
            );
        }
        model.set_param_vec(&params);
    }
}

#[test]
fn zero_layers_single_relation_degrades_to_mlp() {
    let (cfg, names) = small_cfg(4, 0, 1);
    let model = GnnModel::init(3, &names, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_tensors(&mut rng, 5, 3, 1);
    let batch = Batch::new(vec![&t], vec![1]).unwrap();
    let (probs, beta) = model.forward_batch(&batch).unwrap();
    assert_eq!(beta, vec![1.0]);

    // Directly constructed MLP path over the start row.
    let x0 = t.x.row(0);
    let mut hidden = model.w2.dot(&x0);
    hidden += &model.b2;
    hidden.mapv_inplace(|v| if v >= 0.0 { v } else { model.leaky_slope() * v });
    let mut logits = model.w_out.dot(&hidden);
    logits += &model.b_out;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let expect = &exp / exp.sum();
    for j in 0..2 {
        assert_abs_diff_eq!(probs[(0, j)], expect[j], epsilon = 1e-12);
    }
}

fn toy_pipeline(
    n: usize,
    seed: u64,
) -> (SubgraphCache, FeatureMatrix, LabelSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize, usize)> = (0..6 * n)
        .map(|_| {
            (
                rng.gen_range(0..n),
                rng.gen_range(0..n),
                rng.gen_range(0..2),
            )
        })
        .collect();
    let names = vec!["a".to_string(), "b".to_string()];
    let g = HeteroGraph::from_edges(n, &names, &edges).unwrap();
    let x = Array2::from_shape_fn((n, 6), |_| rng.gen::<f64>() * 2.0 - 1.0);
    let features = FeatureMatrix::new(x, vec![("description".to_string(), 6)]).unwrap();
    let labels: Vec<Option<NodeLabel>> = (0..n)
        .map(|i| Some(if i % 3 == 0 { NodeLabel::Bot } else { NodeLabel::Human }))
        .collect();
    let ids: Vec<usize> = (0..n).collect();
    let (train, rest) = ids.split_at(n * 6 / 10);
    let (val, test) = rest.split_at(n / 5);
    let labels = LabelSet::new(labels, train.to_vec(), val.to_vec(), test.to_vec()).unwrap();

    let mlp = MlpModel::init(
        6,
        &MlpConfig {
            hidden: 4,
            seed: 1,
            ..MlpConfig::default()
        },
    );
    let params = SampleParams {
        k: 4,
        ..SampleParams::default()
    };
    let starts: Vec<usize> = (0..n).collect();
    let subs = sample_subgraphs(&g, &mlp, &features, &starts, &params).unwrap();
    let cache = SubgraphCache {
        relation_names: names,
        subgraphs: subs,
    };
    (cache, features, labels)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (cache, features, labels) = toy_pipeline(30, 9);
    let cfg = GnnConfig {
        hidden: 4,
        layers: 1,
        attention_dim: 3,
        batch_size: 8,
        lr: 0.0,
        max_epochs: 3,
        patience: 10,
        seed: 4,
        dropout: 0.3,
        ..GnnConfig::default()
    };
    let outcome = train(&cache, &features, &labels, &cfg).unwrap();
    let fresh = GnnModel::init(features.width(), &cache.relation_names, &cfg);
    assert_eq!(outcome.model.param_vec(), fresh.param_vec());
}

#[test]
fn training_is_bit_deterministic_per_seed() {
    let (cache, features, labels) = toy_pipeline(30, 10);
    let cfg = GnnConfig {
        hidden: 4,
        layers: 2,
        attention_dim: 3,
        batch_size: 8,
        lr: 0.05,
        max_epochs: 5,
        patience: 10,
        seed: 12,
        dropout: 0.3,
        ..GnnConfig::default()
    };
    let a = train(&cache, &features, &labels, &cfg).unwrap();
    let b = train(&cache, &features, &labels, &cfg).unwrap();
    assert_eq!(a.model.param_vec(), b.model.param_vec());
    let log_a: Vec<(usize, u64, u64)> = a
        .log
        .iter()
        .map(|e| (e.epoch, e.train_loss.to_bits(), e.val_loss.to_bits()))
        .collect();
    let log_b: Vec<(usize, u64, u64)> = b
        .log
        .iter()
        .map(|e| (e.epoch, e.train_loss.to_bits(), e.val_loss.to_bits()))
        .collect();
    assert_eq!(log_a, log_b);

    // And independent of worker count, by construction.
    let cfg4 = GnnConfig {
        workers: 4,
        ..cfg.clone()
    };
    let c = train(&cache, &features, &labels, &cfg4).unwrap();
    assert_eq!(a.model.param_vec(), c.model.param_vec());
}

#[test]
fn evaluate_is_repeatable_and_scores_perfection() {
    let (cache, features, labels) = toy_pipeline(30, 11);
    let cfg = GnnConfig {
        hidden: 4,
        layers: 1,
        attention_dim: 3,
        batch_size: 8,
        lr: 0.05,
        max_epochs: 4,
        patience: 10,
        seed: 3,
        ..GnnConfig::default()
    };
    let outcome = train(&cache, &features, &labels, &cfg).unwrap();
    let m1 = evaluate(&outcome.model, &cache, &features, &labels, "test", 8).unwrap();
    let m2 = evaluate(&outcome.model, &cache, &features, &labels, "test", 8).unwrap();
    assert_eq!(m1.accuracy.to_bits(), m2.accuracy.to_bits());
    assert_eq!(m1.f1.to_bits(), m2.f1.to_bits());
    assert!(evaluate(&outcome.model, &cache, &features, &labels, "bogus", 8).is_err());

    // Metrics closed forms.
    let perfect = classification_metrics(&[1, 0, 1], &[1, 0, 1]);
    assert_eq!(perfect.accuracy, 1.0);
    assert_eq!(perfect.f1, 1.0);
    let all_human = classification_metrics(&[0, 0, 0], &[1, 0, 1]);
    assert_eq!(all_human.f1, 0.0);
}

#[test]
fn model_file_roundtrip() {
    let (mut cfg, names) = small_cfg(5, 2, 2);
    cfg.fusion = Fusion::Mean;
    cfg.concat_intermediate = false;
    let model = GnnModel::init(7, &names, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gnn.bin");
    model.save(&path).unwrap();
    let back = GnnModel::load(&path).unwrap();
    assert_eq!(back.param_vec(), model.param_vec());
    assert_eq!(back.relation_names(), model.relation_names());
    assert_eq!(back.fusion(), Fusion::Mean);
    assert!(!back.concat_enabled());
    assert_eq!(back.final_dim(), 5);
}

#[test]
fn batch_rejects_mismatched_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_tensors(&mut rng, 3, 2, 1);
    assert!(Batch::new(vec![&t], vec![0, 1]).is_err());
    assert!(Batch::new(vec![], vec![]).is_err());
}
