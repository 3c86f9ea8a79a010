//! The two-layer MLP pre-classifier.
//!
//! Trained on node features alone, it serves two purposes: a cheap
//! baseline classifier, and the source of hidden representations whose
//! cosine similarity steers biased subgraph selection. The hidden
//! representation is the *pre-activation* first-layer output; an
//! activated variant sits behind `activated_hidden` for comparison.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::LabelSet;
use crate::io;

const MODEL_MAGIC: &[u8; 8] = b"MLPM0001";

#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    /// Apply the activation inside `hidden_repr` instead of returning the
    /// pre-activation output.
    pub activated_hidden: bool,
    pub leaky_slope: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 128,
            epochs: 300,
            lr: 0.1,
            seed: 1,
            patience: 10,
            activated_hidden: false,
            leaky_slope: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    w0: Array2<f64>, // h x s
    b0: Array1<f64>, // h
    w1: Array2<f64>, // 2 x h
    b1: Array1<f64>, // 2
    leaky_slope: f64,
    activated_hidden: bool,
    seed: u64,
}

fn leaky_relu_inplace(z: &mut Array2<f64>, slope: f64) {
    z.mapv_inplace(|v| if v >= 0.0 { v } else { slope * v });
}

fn leaky_relu_grad(z: &Array2<f64>, slope: f64) -> Array2<f64> {
    z.mapv(|v| if v >= 0.0 { 1.0 } else { slope })
}

fn softmax_rows_inplace(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

struct ForwardCache {
    z0: Array2<f64>,
    a0: Array2<f64>,
    probs: Array2<f64>,
}

struct Gradients {
    w0: Array2<f64>,
    b0: Array1<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
}

impl MlpModel {
    pub fn init(feature_dim: usize, cfg: &MlpConfig) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut xavier = |rows: usize, cols: usize| -> Array2<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 * bound - bound)
        };
        MlpModel {
            w0: xavier(cfg.hidden, feature_dim),
            b0: Array1::zeros(cfg.hidden),
            w1: xavier(2, cfg.hidden),
            b1: Array1::zeros(2),
            leaky_slope: cfg.leaky_slope,
            activated_hidden: cfg.activated_hidden,
            seed: cfg.seed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature width {cols} does not match model width {}",
                self.feature_dim()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut z0 = x.dot(&self.w0.t());
        z0 += &self.b0;
        let mut a0 = z0.clone();
        leaky_relu_inplace(&mut a0, self.leaky_slope);
        let mut logits = a0.dot(&self.w1.t());
        logits += &self.b1;
        softmax_rows_inplace(&mut logits);
        ForwardCache {
            z0,
            a0,
            probs: logits,
        }
    }

    /// Mean cross-entropy of the given rows against their labels.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[u8]) -> Result<f64> {
        self.check_width(x.ncols())?;
        let cache = self.forward(x);
        Ok(cross_entropy(&cache.probs, y))
    }

    fn gradients(&self, x: ArrayView2<f64>, y: &[u8]) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let cache = self.forward(x);
        let loss = cross_entropy(&cache.probs, y);

        let mut dlogits = cache.probs.clone();
        for (i, &label) in y.iter().enumerate() {
            dlogits[(i, label as usize)] -= 1.0;
        }
        dlogits /= n;

        let dw1 = dlogits.t().dot(&cache.a0);
        let db1 = dlogits.sum_axis(Axis(0));
        let da0 = dlogits.dot(&self.w1);
        let dz0 = da0 * leaky_relu_grad(&cache.z0, self.leaky_slope);
        let dw0 = dz0.t().dot(&x);
        let db0 = dz0.sum_axis(Axis(0));
        (
            loss,
            Gradients {
                w0: dw0,
                b0: db0,
                w1: dw1,
                b1: db1,
            },
        )
    }

    /// First-layer hidden representation of one feature row.
    pub fn hidden_repr(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_width(x.len())?;
        let mut h = self.w0.dot(&x);
        h += &self.b0;
        if self.activated_hidden {
            h.mapv_inplace(|v| if v >= 0.0 { v } else { self.leaky_slope * v });
        }
        Ok(h)
    }

    /// Hidden representations for all rows.
    pub fn hidden_all(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        let mut h = x.dot(&self.w0.t());
        h += &self.b0;
        if self.activated_hidden {
            leaky_relu_inplace(&mut h, self.leaky_slope);
        }
        Ok(h)
    }

    /// Row-stochastic class probabilities, column 0 = human, 1 = bot.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        Ok(self.forward(x).probs)
    }

    pub fn predict_labels(&self, x: ArrayView2<f64>) -> Result<Vec<u8>> {
        let probs = self.predict_proba(x)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| u8::from(row[1] > row[0]))
            .collect())
    }

    /// Flattened view of all parameters, in a fixed order. Together with
    /// [`MlpModel::set_param_vec`] and [`MlpModel::grad_vec`] this drives
    /// finite-difference verification of the analytic gradients.
    pub fn param_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w0.iter());
        out.extend(self.b0.iter());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out
    }

    pub fn set_param_vec(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for v in self.w0.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        for v in self.b0.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        for v in self.w1.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        for v in self.b1.iter_mut() {
            *v = it.next().expect("parameter vector too short");
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    /// Analytic gradient of the mean cross-entropy, flattened in the same
    /// order as [`MlpModel::param_vec`].
    pub fn grad_vec(&self, x: ArrayView2<f64>, y: &[u8]) -> Result<Vec<f64>> {
        self.check_width(x.ncols())?;
        let (_, g) = self.gradients(x, y);
        let mut out = Vec::new();
        out.extend(g.w0.iter());
        out.extend(g.b0.iter());
        out.extend(g.w1.iter());
        out.extend(g.b1.iter());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(MODEL_MAGIC).map_err(|e| Error::io(path, e))?;
        io::put_u64(&mut w, self.feature_dim() as u64, path)?;
        io::put_u64(&mut w, self.hidden_dim() as u64, path)?;
        io::put_f64(&mut w, self.leaky_slope, path)?;
        io::put_u64(&mut w, u64::from(self.activated_hidden), path)?;
        io::put_u64(&mut w, self.seed, path)?;
        io::put_array2(&mut w, &self.w0, path)?;
        io::put_vec(&mut w, self.b0.as_slice().unwrap(), path)?;
        io::put_array2(&mut w, &self.w1, path)?;
        io::put_vec(&mut w, self.b1.as_slice().unwrap(), path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        io::expect_magic(&mut r, MODEL_MAGIC, path)?;
        let s = io::get_u64(&mut r, path)? as usize;
        let h = io::get_u64(&mut r, path)? as usize;
        let leaky_slope = io::get_f64(&mut r, path)?;
        let activated_hidden = io::get_u64(&mut r, path)? != 0;
        let seed = io::get_u64(&mut r, path)?;
        let w0 = io::get_array2(&mut r, path)?;
        let b0 = Array1::from_vec(io::get_vec(&mut r, path)?);
        let w1 = io::get_array2(&mut r, path)?;
        let b1 = Array1::from_vec(io::get_vec(&mut r, path)?);
        if w0.dim() != (h, s) || b0.len() != h || w1.dim() != (2, h) || b1.len() != 2 {
            return Err(Error::format(path, "tensor shapes disagree with header"));
        }
        Ok(MlpModel {
            w0,
            b0,
            w1,
            b1,
            leaky_slope,
            activated_hidden,
            seed,
        })
    }
}

fn cross_entropy(probs: &Array2<f64>, y: &[u8]) -> f64 {
    let n = y.len() as f64;
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let p = probs[(i, label as usize)].clamp(1e-12, 1.0);
        total -= p.ln();
    }
    total / n
}

/// Cosine similarity mapped to `[0, 1]`; zero vectors score a neutral 0.5.
pub fn pair_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    let cos = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
    (1.0 + cos) / 2.0
}

/// Train on the union of the train and validation masks by full-batch
/// gradient descent, stopping when the fitting-set loss plateaus.
/// Returns the model and the per-epoch loss log.
pub fn train_mlp(
    features: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &MlpConfig,
) -> Result<(MlpModel, Vec<f64>)> {
    let fit_ids: Vec<usize> = labels.train.iter().chain(labels.val.iter()).copied().collect();
    if fit_ids.is_empty() {
        return Err(Error::InvalidData(
            "empty fitting set: train and validation masks are both empty".into(),
        ));
    }
    let x = select_rows(features.matrix().view(), &fit_ids);
    let y: Vec<u8> = fit_ids
        .iter()
        .map(|&v| labels.label(v).expect("split members are labeled").as_u8())
        .collect();

    let mut model = MlpModel::init(features.width(), cfg);
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (loss, grads) = model.gradients(x.view(), &y);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite fitting loss at epoch {epoch} (lr = {})",
                cfg.lr
            )));
        }
        log.push(loss);
        if loss < best_loss - 1e-9 {
            best_loss = loss;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        model.w0.scaled_add(-cfg.lr, &grads.w0);
        model.b0.scaled_add(-cfg.lr, &grads.b0);
        model.w1.scaled_add(-cfg.lr, &grads.w1);
        model.b1.scaled_add(-cfg.lr, &grads.b1);
    }
    Ok((best, log))
}

pub(crate) fn select_rows(x: ArrayView2<f64>, ids: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((ids.len(), x.ncols()));
    for (row, &v) in ids.iter().enumerate() {
        out.row_mut(row).assign(&x.row(v));
    }
    out
}

/// Fraction of rows whose predicted label matches `y`.
pub fn accuracy(pred: &[u8], y: &[u8]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    hits as f64 / y.len() as f64
}
