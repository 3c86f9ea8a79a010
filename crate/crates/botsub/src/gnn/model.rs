//! Model parameters, forward pass, and manual backpropagation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    aggregate_mean, concat_intermediate, leaky_relu, leaky_relu_grad, softmax_rows, Batch, Fusion,
    GnnConfig, InAdjacency, SubgraphTensors,
};
use crate::error::{Error, Result};
use crate::io;

const MODEL_MAGIC: &[u8; 8] = b"GNNM0001";

#[derive(Debug, Clone)]
pub struct GnnModel {
    pub(crate) w2: Array2<f64>,            // hidden x s
    pub(crate) b2: Array1<f64>,            // hidden
    pub(crate) w3: Vec<Vec<Array2<f64>>>,  // [relation][layer], hidden x hidden
    pub(crate) attn_w: Array2<f64>,        // a x final_dim
    pub(crate) attn_b: Array1<f64>,        // a
    pub(crate) attn_q: Array1<f64>,        // a
    pub(crate) w_out: Array2<f64>,         // 2 x final_dim
    pub(crate) b_out: Array1<f64>,         // 2
    relation_names: Vec<String>,
    layers: usize,
    leaky_slope: f64,
    concat_intermediate: bool,
    fusion: Fusion,
}

impl GnnModel {
    pub fn init(feature_dim: usize, relation_names: &[String], cfg: &GnnConfig) -> GnnModel {
        fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 * bound - bound)
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.hidden;
        let final_dim = if cfg.concat_intermediate {
            (cfg.layers + 1) * h
        } else {
            h
        };
        let w2 = xavier(&mut rng, h, feature_dim);
        let w3 = (0..relation_names.len())
            .map(|_| (0..cfg.layers).map(|_| xavier(&mut rng, h, h)).collect())
            .collect();
        let attn_w = xavier(&mut rng, cfg.attention_dim, final_dim);
        let attn_q = {
            let bound = (6.0 / (cfg.attention_dim + 1) as f64).sqrt();
            Array1::from_shape_fn(cfg.attention_dim, |_| {
                rng.gen::<f64>() * 2.0 * bound - bound
            })
        };
        let w_out = xavier(&mut rng, 2, final_dim);
        GnnModel {
            w2,
            b2: Array1::zeros(h),
            w3,
            attn_w,
            attn_b: Array1::zeros(cfg.attention_dim),
            attn_q,
            w_out,
            b_out: Array1::zeros(2),
            relation_names: relation_names.to_vec(),
            layers: cfg.layers,
            leaky_slope: cfg.leaky_slope,
            concat_intermediate: cfg.concat_intermediate,
            fusion: cfg.fusion,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn layer_count(&self) -> usize {
        self.layers
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn concat_enabled(&self) -> bool {
        self.concat_intermediate
    }

    /// Width of the per-relation final representation.
    pub fn final_dim(&self) -> usize {
        if self.concat_intermediate {
            (self.layers + 1) * self.hidden_dim()
        } else {
            self.hidden_dim()
        }
    }

    /// Input transform of local feature rows: leaky-relu affine lift.
    pub fn init_hidden(&self, x_sub: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x_sub.ncols() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature width {} does not match model width {}",
                x_sub.ncols(),
                self.feature_dim()
            )));
        }
        let mut pre = x_sub.dot(&self.w2.t());
        pre += &self.b2;
        Ok(leaky_relu(&pre, self.leaky_slope))
    }

    /// One GCN layer for a relation: mean-aggregate in-neighbors, apply
    /// the layer weight, then the activation. Rows without any message
    /// channel come out as zeros.
    pub fn gcn_layer(
        &self,
        relation: usize,
        layer: usize,
        hidden: ArrayView2<f64>,
        adj: &InAdjacency,
    ) -> Result<Array2<f64>> {
        if relation >= self.relation_count() {
            return Err(Error::UnknownRelation(format!("index {relation}")));
        }
        if layer == 0 || layer > self.layers {
            return Err(Error::InvalidParameter(format!(
                "layer {layer} outside [1, {}]",
                self.layers
            )));
        }
        if hidden.ncols() != self.hidden_dim() {
            return Err(Error::DimensionMismatch(format!(
                "hidden width {} does not match {}",
                hidden.ncols(),
                self.hidden_dim()
            )));
        }
        if hidden.nrows() != adj.node_count() {
            return Err(Error::DimensionMismatch(
                "hidden rows and adjacency disagree".into(),
            ));
        }
        let agg = aggregate_mean(hidden, adj);
        let z = agg.dot(&self.w3[relation][layer - 1].t());
        Ok(leaky_relu(&z, self.leaky_slope))
    }

    /// Semantic attention over per-relation rows (one row per start node
    /// in the batch). Returns the fused rows and the relation weights.
    pub fn semantic_attention(
        &self,
        per_relation: &[Array2<f64>],
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        let fwd = self.attention_forward(per_relation)?;
        Ok((fwd.fused, fwd.beta))
    }

    fn attention_forward(&self, per_relation: &[Array2<f64>]) -> Result<AttentionForward> {
        if per_relation.len() != self.relation_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} relation blocks for {} relations",
                per_relation.len(),
                self.relation_count()
            )));
        }
        let batch = per_relation[0].nrows();
        if batch == 0 {
            return Err(Error::InvalidData("empty batch".into()));
        }
        let d = self.final_dim();
        for block in per_relation {
            if block.nrows() != batch || block.ncols() != d {
                return Err(Error::DimensionMismatch(
                    "relation blocks disagree on shape".into(),
                ));
            }
        }
        let r_count = self.relation_count();
        let beta;
        let mut tanh_u = Vec::new();
        match self.fusion {
            Fusion::Mean => {
                beta = vec![1.0 / r_count as f64; r_count];
            }
            Fusion::Attention => {
                let mut scores = Array1::zeros(r_count);
                for (r, block) in per_relation.iter().enumerate() {
                    // u = W f + b per row; t = tanh(u); w_r = mean q . t
                    let mut u = block.dot(&self.attn_w.t());
                    u += &self.attn_b;
                    let t = u.mapv(f64::tanh);
                    scores[r] = t.dot(&self.attn_q).sum() / batch as f64;
                    tanh_u.push(t);
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp = scores.mapv(|v| (v - max).exp());
                let total = exp.sum();
                beta = exp.iter().map(|v| v / total).collect();
            }
        }
        let mut fused = Array2::zeros((batch, d));
        for (r, block) in per_relation.iter().enumerate() {
            fused.scaled_add(beta[r], block);
        }
        Ok(AttentionForward {
            fused,
            beta,
            tanh_u,
        })
    }

    /// Row-stochastic class probabilities from fused rows.
    pub fn predict(&self, fused: ArrayView2<f64>) -> Result<Array2<f64>> {
        if fused.ncols() != self.final_dim() {
            return Err(Error::DimensionMismatch(format!(
                "fused width {} does not match {}",
                fused.ncols(),
                self.final_dim()
            )));
        }
        let mut logits = fused.dot(&self.w_out.t());
        logits += &self.b_out;
        softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Binary cross-entropy summed over the batch, plus
    /// `reg_lambda * sum(w^2)` over every model parameter.
    pub fn loss(&self, probs: ArrayView2<f64>, labels: &[u8], reg_lambda: f64) -> Result<f64> {
        if probs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} probability rows for {} labels",
                probs.nrows(),
                labels.len()
            )));
        }
        let mut total = 0.0;
        for (row, &y) in probs.rows().into_iter().zip(labels) {
            if y > 1 {
                return Err(Error::InvalidData(format!("label {y} outside {{0, 1}}")));
            }
            let p_bot = row[1].clamp(1e-12, 1.0 - 1e-12);
            total -= if y == 1 { p_bot.ln() } else { (1.0 - p_bot).ln() };
        }
        Ok(total + reg_lambda * self.param_sq_sum())
    }

    pub(crate) fn param_sq_sum(&self) -> f64 {
        self.param_vec().iter().map(|v| v * v).sum()
    }

    /// Full forward over a batch in evaluation mode (no dropout):
    /// probabilities for each start node plus the relation weights.
    pub fn forward_batch(&self, batch: &Batch) -> Result<(Array2<f64>, Vec<f64>)> {
        let fwds = batch
            .subgraphs
            .iter()
            .map(|t| self.forward_subgraph(t, None))
            .collect::<Result<Vec<_>>>()?;
        let per_relation = self.stack_final_rows(&fwds);
        let att = self.attention_forward(&per_relation)?;
        let probs = self.predict(att.fused.view())?;
        Ok((probs, att.beta))
    }

    /// Evaluation-mode batch loss (Eq.-style sum CE + L2), for gradient
    /// verification.
    pub fn batch_loss(&self, batch: &Batch, reg_lambda: f64) -> Result<f64> {
        let (probs, _) = self.forward_batch(batch)?;
        self.loss(probs.view(), &batch.labels, reg_lambda)
    }

    /// Analytic gradient of [`GnnModel::batch_loss`] flattened in
    /// [`GnnModel::param_vec`] order.
    pub fn batch_grad_vec(&self, batch: &Batch, reg_lambda: f64) -> Result<Vec<f64>> {
        let (_, _, grads) = self.forward_backward(batch, None)?;
        let mut flat = grads.to_vec();
        for (g, p) in flat.iter_mut().zip(self.param_vec()) {
            *g += 2.0 * reg_lambda * p;
        }
        Ok(flat)
    }

    fn stack_final_rows(&self, fwds: &[SubgraphForward]) -> Vec<Array2<f64>> {
        let d = self.final_dim();
        (0..self.relation_count())
            .map(|r| {
                let mut block = Array2::zeros((fwds.len(), d));
                for (b, fwd) in fwds.iter().enumerate() {
                    block.row_mut(b).assign(&fwd.final_rows[r]);
                }
                block
            })
            .collect()
    }

    /// Forward one subgraph, caching everything backprop needs. Dropout
    /// masks are drawn from the given rng (training mode only).
    pub(crate) fn forward_subgraph(
        &self,
        t: &SubgraphTensors,
        dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Result<SubgraphForward> {
        if t.relation_count() != self.relation_count() {
            return Err(Error::DimensionMismatch(format!(
                "subgraph has {} relations, model has {}",
                t.relation_count(),
                self.relation_count()
            )));
        }
        let m = t.node_count();
        let h = self.hidden_dim();
        let mut rng_and_p = dropout;

        let draw_mask = |rng_and_p: &mut Option<(&mut ChaCha8Rng, f64)>| -> Option<Array2<f64>> {
            rng_and_p.as_mut().map(|(rng, p)| {
                let keep = 1.0 - *p;
                Array2::from_shape_fn((m, h), |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
        };

        let mut h0_pre = t.x.dot(&self.w2.t());
        h0_pre += &self.b2;
        let mut h0 = leaky_relu(&h0_pre, self.leaky_slope);
        let mask0 = draw_mask(&mut rng_and_p);
        if let Some(mask) = &mask0 {
            h0 *= mask;
        }

        let mut agg = Vec::with_capacity(self.relation_count());
        let mut z = Vec::with_capacity(self.relation_count());
        let mut hs = Vec::with_capacity(self.relation_count());
        let mut masks = Vec::with_capacity(self.relation_count());
        for r in 0..self.relation_count() {
            let mut agg_r = Vec::with_capacity(self.layers);
            let mut z_r = Vec::with_capacity(self.layers);
            let mut h_r: Vec<Array2<f64>> = Vec::with_capacity(self.layers);
            let mut mask_r = Vec::with_capacity(self.layers);
            for l in 0..self.layers {
                let prev = if l == 0 { &h0 } else { &h_r[l - 1] };
                let a = aggregate_mean(prev.view(), &t.adj[r]);
                let zl = a.dot(&self.w3[r][l].t());
                let mut hl = leaky_relu(&zl, self.leaky_slope);
                let mask = draw_mask(&mut rng_and_p);
                if let Some(mask) = &mask {
                    hl *= mask;
                }
                agg_r.push(a);
                z_r.push(zl);
                h_r.push(hl);
                mask_r.push(mask);
            }
            agg.push(agg_r);
            z.push(z_r);
            hs.push(h_r);
            masks.push(mask_r);
        }

        let final_rows = (0..self.relation_count())
            .map(|r| {
                if self.concat_intermediate {
                    let mut views = vec![h0.view()];
                    views.extend(hs[r].iter().map(|m| m.view()));
                    let rows: Vec<ArrayView2<f64>> = views
                        .iter()
                        .map(|v| v.slice(ndarray::s![0..1, ..]))
                        .collect();
                    concat_intermediate(&rows).map(|m| m.row(0).to_owned())
                } else if self.layers == 0 {
                    Ok(h0.row(0).to_owned())
                } else {
                    Ok(hs[r][self.layers - 1].row(0).to_owned())
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(SubgraphForward {
            h0_pre,
            mask0,
            agg,
            z,
            masks,
            final_rows,
        })
    }

    /// Forward + backward over one batch. Returns the summed CE loss,
    /// the class probabilities, and the CE gradients (no regularization
    /// term; callers add `2 * lambda * w` where needed).
    pub(crate) fn forward_backward(
        &self,
        batch: &Batch,
        mask_seeds: Option<(&[u64], f64)>,
    ) -> Result<(f64, Array2<f64>, GnnGrads)> {
        let fwds: Vec<SubgraphForward> = match mask_seeds {
            None => batch
                .subgraphs
                .iter()
                .map(|t| self.forward_subgraph(t, None))
                .collect::<Result<_>>()?,
            Some((seeds, p)) => {
                use rayon::prelude::*;
                batch
                    .subgraphs
                    .par_iter()
                    .zip(seeds.par_iter())
                    .map(|(t, &seed)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        self.forward_subgraph(t, Some((&mut rng, p)))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let per_relation = self.stack_final_rows(&fwds);
        let att = self.attention_forward(&per_relation)?;
        let probs = self.predict(att.fused.view())?;

        let batch_len = batch.len();
        let r_count = self.relation_count();
        let d = self.final_dim();

        let mut ce = 0.0;
        let mut dlogits = probs.clone();
        for (b, &y) in batch.labels.iter().enumerate() {
            if y > 1 {
                return Err(Error::InvalidData(format!("label {y} outside {{0, 1}}")));
            }
            let p = probs[(b, y as usize)].clamp(1e-12, 1.0);
            ce -= p.ln();
            dlogits[(b, y as usize)] -= 1.0;
        }

        let mut grads = GnnGrads::zeros_like(self);
        grads.w_out += &dlogits.t().dot(&att.fused);
        grads.b_out += &dlogits.sum_axis(Axis(0));
        let dfused = dlogits.dot(&self.w_out); // batch x d

        // d final rows per (relation, batch row).
        let mut dfinal: Vec<Array2<f64>> = (0..r_count)
            .map(|_| Array2::zeros((batch_len, d)))
            .collect();
        match self.fusion {
            Fusion::Mean => {
                for block in dfinal.iter_mut() {
                    block.assign(&dfused);
                    *block /= r_count as f64;
                }
            }
            Fusion::Attention => {
                let dbeta: Vec<f64> = (0..r_count)
                    .map(|r| (&dfused * &per_relation[r]).sum())
                    .collect();
                let mix: f64 = (0..r_count).map(|r| att.beta[r] * dbeta[r]).sum();
                for r in 0..r_count {
                    dfinal[r].scaled_add(att.beta[r], &dfused);
                    let dscore = att.beta[r] * (dbeta[r] - mix);
                    let common = dscore / batch_len as f64;
                    let t = &att.tanh_u[r]; // batch x a
                    // dq += common * sum_b t_b
                    grads.attn_q.scaled_add(common, &t.sum_axis(Axis(0)));
                    // du_b = common * q (x) (1 - t_b^2)
                    let one_minus_t2 = t.mapv(|v| 1.0 - v * v);
                    let du = one_minus_t2 * &self.attn_q * common; // batch x a
                    grads.attn_w += &du.t().dot(&per_relation[r]);
                    grads.attn_b += &du.sum_axis(Axis(0));
                    dfinal[r] += &du.dot(&self.attn_w);
                }
            }
        }

        // Per-subgraph backprop through the GCN stacks; contributions are
        // folded in batch order so the result is worker-count independent.
        use rayon::prelude::*;
        let partials: Vec<GnnGrads> = batch
            .subgraphs
            .par_iter()
            .enumerate()
            .map(|(b, t)| self.backprop_subgraph(t, &fwds[b], &dfinal, b))
            .collect();
        for partial in &partials {
            grads.merge(partial);
        }
        Ok((ce, probs, grads))
    }

    fn backprop_subgraph(
        &self,
        t: &SubgraphTensors,
        fwd: &SubgraphForward,
        dfinal: &[Array2<f64>],
        batch_row: usize,
    ) -> GnnGrads {
        let m = t.node_count();
        let h = self.hidden_dim();
        let mut grads = GnnGrads::zeros_like(self);

        let mut dh0 = Array2::zeros((m, h));
        for r in 0..self.relation_count() {
            // Seed per-layer gradients at the start row (local row 0).
            let df = dfinal[r].row(batch_row);
            let mut dh_layers: Vec<Array2<f64>> =
                (0..=self.layers).map(|_| Array2::zeros((m, h))).collect();
            if self.concat_intermediate {
                for l in 0..=self.layers {
                    let seg = df.slice(ndarray::s![l * h..(l + 1) * h]);
                    let mut row = dh_layers[l].row_mut(0);
                    row += &seg;
                }
            } else {
                let mut row = dh_layers[self.layers].row_mut(0);
                row += &df;
            }

            for l in (1..=self.layers).rev() {
                let mut g = std::mem::take(&mut dh_layers[l]);
                if let Some(mask) = &fwd.masks[r][l - 1] {
                    g *= mask;
                }
                let dz = g * leaky_relu_grad(&fwd.z[r][l - 1], self.leaky_slope);
                grads.w3[r][l - 1] += &dz.t().dot(&fwd.agg[r][l - 1]);
                let dagg = dz.dot(&self.w3[r][l - 1]);
                for i in 0..m {
                    let inn = t.adj[r].in_neighbors(i);
                    if inn.is_empty() {
                        continue;
                    }
                    let scale = 1.0 / inn.len() as f64;
                    let contrib = dagg.row(i);
                    for &j in inn {
                        let mut row = dh_layers[l - 1].row_mut(j as usize);
                        row.scaled_add(scale, &contrib);
                    }
                }
            }
            dh0 += &dh_layers[0];
        }

        if let Some(mask) = &fwd.mask0 {
            dh0 *= mask;
        }
        let dz0 = dh0 * leaky_relu_grad(&fwd.h0_pre, self.leaky_slope);
        grads.w2 += &dz0.t().dot(&t.x);
        grads.b2 += &dz0.sum_axis(Axis(0));
        grads
    }

    /// Flattened parameters: w2, b2, per-relation per-layer w3,
    /// attention (W, b, q), output head (W, b).
    pub fn param_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        for rel in &self.w3 {
            for w in rel {
                out.extend(w.iter());
            }
        }
        out.extend(self.attn_w.iter());
        out.extend(self.attn_b.iter());
        out.extend(self.attn_q.iter());
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }

    pub fn set_param_vec(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        let fill2 = |m: &mut Array2<f64>, it: &mut dyn Iterator<Item = f64>| {
            for v in m.iter_mut() {
                *v = it.next().expect("parameter vector too short");
            }
        };
        fill2(&mut self.w2, &mut it);
        for v in self.b2.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        for rel in self.w3.iter_mut() {
            for w in rel.iter_mut() {
                for v in w.iter_mut() {
                    *v = it.next().expect("parameter vector too short");
                }
            }
        }
        fill2(&mut self.attn_w, &mut it);
        for v in self.attn_b.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        for v in self.attn_q.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        fill2(&mut self.w_out, &mut it);
        for v in self.b_out.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    pub(crate) fn apply_update(&mut self, grads: &GnnGrads, scale: f64, reg_lambda: f64, lr: f64) {
        let decay = 2.0 * lr * reg_lambda;
        let step = |p: &mut f64, g: f64| {
            *p -= lr * scale * g + decay * *p;
        };
        for (p, g) in self.w2.iter_mut().zip(grads.w2.iter()) {
            step(p, *g);
        }
        for (p, g) in self.b2.iter_mut().zip(grads.b2.iter()) {
            step(p, *g);
        }
        for (rel_p, rel_g) in self.w3.iter_mut().zip(grads.w3.iter()) {
            for (wp, wg) in rel_p.iter_mut().zip(rel_g.iter()) {
                for (p, g) in wp.iter_mut().zip(wg.iter()) {
                    step(p, *g);
                }
            }
        }
        for (p, g) in self.attn_w.iter_mut().zip(grads.attn_w.iter()) {
            step(p, *g);
        }
        for (p, g) in self.attn_b.iter_mut().zip(grads.attn_b.iter()) {
            step(p, *g);
        }
        for (p, g) in self.attn_q.iter_mut().zip(grads.attn_q.iter()) {
            step(p, *g);
        }
        for (p, g) in self.w_out.iter_mut().zip(grads.w_out.iter()) {
            step(p, *g);
        }
        for (p, g) in self.b_out.iter_mut().zip(grads.b_out.iter()) {
            step(p, *g);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(MODEL_MAGIC).map_err(|e| Error::io(path, e))?;
        io::put_u64(&mut w, self.feature_dim() as u64, path)?;
        io::put_u64(&mut w, self.hidden_dim() as u64, path)?;
        io::put_u64(&mut w, self.layers as u64, path)?;
        io::put_u64(&mut w, self.attn_w.nrows() as u64, path)?;
        io::put_u64(&mut w, self.relation_names.len() as u64, path)?;
        for name in &self.relation_names {
            io::put_str(&mut w, name, path)?;
        }
        io::put_f64(&mut w, self.leaky_slope, path)?;
        io::put_u64(&mut w, u64::from(self.concat_intermediate), path)?;
        io::put_u64(&mut w, u64::from(self.fusion == Fusion::Mean), path)?;
        io::put_vec(&mut w, &self.param_vec(), path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GnnModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        io::expect_magic(&mut r, MODEL_MAGIC, path)?;
        let feature_dim = io::get_u64(&mut r, path)? as usize;
        let hidden = io::get_u64(&mut r, path)? as usize;
        let layers = io::get_u64(&mut r, path)? as usize;
        let attention_dim = io::get_u64(&mut r, path)? as usize;
        let n_rel = io::get_u64(&mut r, path)? as usize;
        let mut relation_names = Vec::with_capacity(n_rel);
        for _ in 0..n_rel {
            relation_names.push(io::get_str(&mut r, path)?);
        }
        let leaky_slope = io::get_f64(&mut r, path)?;
        let concat = io::get_u64(&mut r, path)? != 0;
        let mean_fusion = io::get_u64(&mut r, path)? != 0;
        let flat = io::get_vec(&mut r, path)?;

        let cfg = GnnConfig {
            hidden,
            layers,
            attention_dim,
            leaky_slope,
            concat_intermediate: concat,
            fusion: if mean_fusion { Fusion::Mean } else { Fusion::Attention },
            ..GnnConfig::default()
        };
        let mut model = GnnModel::init(feature_dim, &relation_names, &cfg);
        if flat.len() != model.param_vec().len() {
            return Err(Error::format(path, "parameter payload length mismatch"));
        }
        model.set_param_vec(&flat);
        Ok(model)
    }
}

pub(crate) struct AttentionForward {
    pub fused: Array2<f64>,
    pub beta: Vec<f64>,
    pub tanh_u: Vec<Array2<f64>>,
}

pub(crate) struct SubgraphForward {
    pub h0_pre: Array2<f64>,
    pub mask0: Option<Array2<f64>>,
    pub agg: Vec<Vec<Array2<f64>>>,
    pub z: Vec<Vec<Array2<f64>>>,
    pub masks: Vec<Vec<Option<Array2<f64>>>>,
    pub final_rows: Vec<Array1<f64>>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct GnnGrads {
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Vec<Vec<Array2<f64>>>,
    pub attn_w: Array2<f64>,
    pub attn_b: Array1<f64>,
    pub attn_q: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl GnnGrads {
    pub fn zeros_like(model: &GnnModel) -> GnnGrads {
        GnnGrads {
            w2: Array2::zeros(model.w2.raw_dim()),
            b2: Array1::zeros(model.b2.raw_dim()),
            w3: model
                .w3
                .iter()
                .map(|rel| rel.iter().map(|w| Array2::zeros(w.raw_dim())).collect())
                .collect(),
            attn_w: Array2::zeros(model.attn_w.raw_dim()),
            attn_b: Array1::zeros(model.attn_b.raw_dim()),
            attn_q: Array1::zeros(model.attn_q.raw_dim()),
            w_out: Array2::zeros(model.w_out.raw_dim()),
            b_out: Array1::zeros(model.b_out.raw_dim()),
        }
    }

    pub fn merge(&mut self, other: &GnnGrads) {
        self.w2 += &other.w2;
        self.b2 += &other.b2;
        for (a, b) in self.w3.iter_mut().zip(other.w3.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        self.attn_w += &other.attn_w;
        self.attn_b += &other.attn_b;
        self.attn_q += &other.attn_q;
        self.w_out += &other.w_out;
        self.b_out += &other.b_out;
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        for rel in &self.w3 {
            for w in rel {
                out.extend(w.iter());
            }
        }
        out.extend(self.attn_w.iter());
        out.extend(self.attn_b.iter());
        out.extend(self.attn_q.iter());
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }
}
