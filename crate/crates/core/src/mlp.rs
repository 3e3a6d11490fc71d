//! Fully-connected regressor: affine → batch norm → tanh hidden layers and a
//! linear output, trained full-batch with Adam and early stopping.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, NormParams};
use crate::rng::{derive_seed, SeededRng};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub batch_norm: bool,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 2,
            hidden_size: 32,
            batch_norm: true,
            learning_rate: 1e-3,
            max_epochs: 10_000,
            patience: 1_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1".into());
        }
        if self.hidden_layers == 0 {
            return bad("at least one hidden layer is required".into());
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "need 1 <= patience ({}) <= max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

impl Params {
    /// Trainable tensors in a fixed order; running statistics excluded.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for h in &mut self.hidden {
            out.push(slice_mut(&mut h.dense.w));
            out.push(slice_mut(&mut h.dense.b));
            if let Some(bn) = &mut h.bn {
                out.push(slice_mut(&mut bn.gamma));
                out.push(slice_mut(&mut bn.beta));
            }
        }
        out.push(slice_mut(&mut self.output.w));
        out.push(slice_mut(&mut self.output.b));
        out
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for h in &self.hidden {
            out.push(slice(&h.dense.w));
            out.push(slice(&h.dense.b));
            if let Some(bn) = &h.bn {
                out.push(slice(&bn.gamma));
                out.push(slice(&bn.beta));
            }
        }
        out.push(slice(&self.output.w));
        out.push(slice(&self.output.b));
        out
    }

    fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for t in z.trainable_mut() {
            t.fill(0.0);
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in the normalization layers.
    Train,
    /// Running statistics; each row is predicted independently.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// MSE on standardized targets.
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: MlpConfig,
    pub params: Params,
    pub target_mean: f64,
    pub target_std: f64,
    /// Input columns and their min-max params, when known.
    pub feature_ids: Vec<FeatureId>,
    pub input_norm: Option<NormParams>,
    pub history: Vec<EpochLoss>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s)?;
        m.config.validate()?;
        Ok(m)
    }

    /// Predictions in target units.
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode) -> Result<Vec<f64>> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::invalid(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        if mode == Mode::Train && x.nrows() < 2 && self.config.batch_norm {
            return Err(Error::invalid("train-mode batch statistics need >= 2 rows"));
        }
        let out = match mode {
            Mode::Train => forward_train(&self.params, x).output,
            Mode::Eval => forward_eval(&self.params, x),
        };
        Ok(out.iter().map(|v| v * self.target_std + self.target_mean).collect())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.forward(x, Mode::Eval)
    }
}

/// Glorot-uniform weights, zero biases, unit scale and zero shift.
pub fn init_model(config: &MlpConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut rng = SeededRng::new(derive_seed(config.seed, 0x1417));
    let mut dense = |fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.uniform_range(-bound, bound));
        Dense { w, b: Array1::zeros(fan_out) }
    };
    let n = config.hidden_size;
    let mut hidden = Vec::with_capacity(config.hidden_layers);
    for l in 0..config.hidden_layers {
        let fan_in = if l == 0 { config.input_dim } else { n };
        hidden.push(HiddenLayer {
            dense: dense(fan_in, n),
            bn: config.batch_norm.then(|| BatchNorm {
                gamma: Array1::ones(n),
                beta: Array1::zeros(n),
                running_mean: Array1::zeros(n),
                running_var: Array1::ones(n),
            }),
        });
    }
    let output = dense(n, 1);
    Ok(TrainedModel {
        config: *config,
        params: Params { hidden, output },
        target_mean: 0.0,
        target_std: 1.0,
        feature_ids: Vec::new(),
        input_norm: None,
        history: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
    })
}

struct LayerCache {
    input: Array2<f64>,
    /// Normalized pre-activations (or raw ones without batch norm).
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    act: Array2<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

struct TrainPass {
    caches: Vec<LayerCache>,
    output: Array1<f64>,
}

fn forward_train(p: &Params, x: ArrayView2<f64>) -> TrainPass {
    let k = x.nrows() as f64;
    let mut caches = Vec::with_capacity(p.hidden.len());
    let mut h = x.to_owned();
    for layer in &p.hidden {
        let z = h.dot(&layer.dense.w.t()) + &layer.dense.b;
        let (xhat, pre, inv_std, mean, var) = match &layer.bn {
            Some(bn) => {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let centred = &z - &mean;
                let var = centred.mapv(|v| v * v).sum_axis(Axis(0)) / k;
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = &centred * &inv_std;
                let pre = &xhat * &bn.gamma + &bn.beta;
                (xhat, pre, inv_std, mean, var)
            }
            None => {
                let n = z.ncols();
                (z.clone(), z, Array1::ones(n), Array1::zeros(n), Array1::zeros(n))
            }
        };
        let act = pre.mapv(f64::tanh);
        caches.push(LayerCache {
            input: h,
            xhat,
            inv_std,
            act: act.clone(),
            batch_mean: mean,
            batch_var: var,
        });
        h = act;
    }
    let output = h.dot(&p.output.w.row(0)) + p.output.b[0];
    TrainPass { caches, output }
}

fn forward_eval(p: &Params, x: ArrayView2<f64>) -> Array1<f64> {
    let mut h = x.to_owned();
    for layer in &p.hidden {
        let mut z = h.dot(&layer.dense.w.t()) + &layer.dense.b;
        if let Some(bn) = &layer.bn {
            let scale = &bn.gamma / &bn.running_var.mapv(|v| (v + BN_EPS).sqrt());
            z = (&z - &bn.running_mean) * &scale + &bn.beta;
        }
        h = z.mapv(f64::tanh);
    }
    h.dot(&p.output.w.row(0)) + p.output.b[0]
}

fn mse(pred: &Array1<f64>, t: &Array1<f64>) -> f64 {
    let d = pred - t;
    d.dot(&d) / d.len() as f64
}

fn backward(p: &Params, pass: &TrainPass, t: &Array1<f64>) -> Params {
    let k = t.len() as f64;
    let mut g = p.zeros_like();
    let dout = (&pass.output - t) * (2.0 / k);

    let last = &pass.caches.last().expect("at least one hidden layer").act;
    g.output.w.row_mut(0).assign(&last.t().dot(&dout));
    g.output.b[0] = dout.sum();
    let mut da = dout
        .view()
        .insert_axis(Axis(1))
        .dot(&p.output.w.view());

    for (l, (layer, cache)) in p.hidden.iter().zip(&pass.caches).enumerate().rev() {
        let dpre = &da * &cache.act.mapv(|a| 1.0 - a * a);
        let dz = match &layer.bn {
            Some(bn) => {
                let gbn = g.hidden[l].bn.as_mut().expect("matching layout");
                gbn.gamma.assign(&(&dpre * &cache.xhat).sum_axis(Axis(0)));
                gbn.beta.assign(&dpre.sum_axis(Axis(0)));
                let dxhat = &dpre * &bn.gamma;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                ((&dxhat * k - &sum_d) - &cache.xhat * &sum_dx) * &(&cache.inv_std / k)
            }
            None => dpre,
        };
        g.hidden[l].dense.w.assign(&dz.t().dot(&cache.input));
        g.hidden[l].dense.b.assign(&dz.sum_axis(Axis(0)));
        if l > 0 {
            da = dz.dot(&layer.dense.w);
        }
    }
    g
}

/// Train-mode MSE against standardized targets and its gradient.
pub fn loss_and_grad(p: &Params, x: ArrayView2<f64>, t: &[f64]) -> (f64, Params) {
    let t = Array1::from(t.to_vec());
    let pass = forward_train(p, x);
    (mse(&pass.output, &t), backward(p, &pass, &t))
}

pub fn train_loss(p: &Params, x: ArrayView2<f64>, t: &[f64]) -> f64 {
    mse(&forward_train(p, x).output, &Array1::from(t.to_vec()))
}

/// Feature rows with energy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
}

impl Samples {
    pub fn new(ids: Vec<String>, x: Array2<f64>, y: Vec<f64>) -> Result<Self> {
        if ids.len() != x.nrows() || y.len() != x.nrows() {
            return Err(Error::invalid(format!(
                "{} ids, {} rows and {} targets",
                ids.len(),
                x.nrows(),
                y.len()
            )));
        }
        Ok(Self { ids, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Samples {
        Samples {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    fn new(p: &Params) -> Self {
        Self { m: p.zeros_like(), v: p.zeros_like(), step: 0 }
    }

    fn update(&mut self, p: &mut Params, g: &Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let grads = g.trainable();
        for (((pt, gt), mt), vt) in p
            .trainable_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.trainable_mut())
            .zip(self.v.trainable_mut())
        {
            for i in 0..pt.len() {
                mt[i] = ADAM_BETA1 * mt[i] + (1.0 - ADAM_BETA1) * gt[i];
                vt[i] = ADAM_BETA2 * vt[i] + (1.0 - ADAM_BETA2) * gt[i] * gt[i];
                pt[i] -= lr * (mt[i] / c1) / ((vt[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn check_targets(s: &Samples, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(format!("{what} set is empty")));
    }
    if let Some((id, y)) = s.ids.iter().zip(&s.y).find(|(_, y)| !(**y > 0.0 && y.is_finite())) {
        return Err(Error::invalid(format!("{what} target for `{id}` must be positive, got {y}")));
    }
    Ok(())
}

/// Full-batch Adam on standardized targets. Validation loss is taken in
/// eval mode every epoch; the best-validation parameters are returned.
pub fn train(model: TrainedModel, train_set: &Samples, val_set: &Samples) -> Result<TrainedModel> {
    let cfg = model.config;
    cfg.validate()?;
    check_targets(train_set, "training")?;
    check_targets(val_set, "validation")?;
    for s in [train_set, val_set] {
        if s.x.ncols() != cfg.input_dim {
            return Err(Error::invalid(format!(
                "samples have {} columns, model expects {}",
                s.x.ncols(),
                cfg.input_dim
            )));
        }
    }
    if cfg.batch_norm && train_set.len() < 2 {
        return Err(Error::invalid("batch normalization needs >= 2 training rows"));
    }

    let n = train_set.len() as f64;
    let target_mean = train_set.y.iter().sum::<f64>() / n;
    let var = train_set.y.iter().map(|y| (y - target_mean).powi(2)).sum::<f64>() / n;
    let target_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let standardize = |y: &[f64]| Array1::from_iter(y.iter().map(|v| (v - target_mean) / target_std));
    let t_train = standardize(&train_set.y);
    let t_val = standardize(&val_set.y);

    let mut params = model.params;
    let mut adam = Adam::new(&params);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0;
    let k = train_set.len() as f64;

    for epoch in 1..=cfg.max_epochs {
        let pass = forward_train(&params, train_set.x.view());
        let loss = mse(&pass.output, &t_train);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        let grads = backward(&params, &pass, &t_train);
        for (layer, cache) in params.hidden.iter_mut().zip(&pass.caches) {
            if let Some(bn) = &mut layer.bn {
                let unbiased = &cache.batch_var * (k / (k - 1.0));
                bn.running_mean = &bn.running_mean * BN_MOMENTUM + &cache.batch_mean * (1.0 - BN_MOMENTUM);
                bn.running_var = &bn.running_var * BN_MOMENTUM + unbiased * (1.0 - BN_MOMENTUM);
            }
        }
        adam.update(&mut params, &grads, cfg.learning_rate);

        let val = mse(&forward_eval(&params, val_set.x.view()), &t_val);
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, loss: val });
        }
        history.push(EpochLoss { epoch, train: loss, val });
        if val < best.0 {
            best = (val, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedModel {
        config: cfg,
        params: best.1,
        target_mean,
        target_std,
        feature_ids: model.feature_ids,
        input_norm: model.input_norm,
        stopped_epoch: history.len(),
        best_epoch: best.2,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mape: f64,
    pub r2: f64,
    /// `(id, predicted − true)`.
    pub residuals: Vec<(String, f64)>,
}

impl Metrics {
    pub fn from_predictions(ids: &[String], pred: &[f64], truth: &[f64]) -> Result<Self> {
        if pred.is_empty() || pred.len() != truth.len() || ids.len() != truth.len() {
            return Err(Error::invalid("metrics need equal, non-empty prediction and target lists"));
        }
        if let Some((id, _)) = ids.iter().zip(truth).find(|(_, t)| **t == 0.0) {
            return Err(Error::invalid(format!("MAPE undefined: zero target for `{id}`")));
        }
        let n = truth.len() as f64;
        let res: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
        let mse = res.iter().map(|r| r * r).sum::<f64>() / n;
        let mape = 100.0 * res.iter().zip(truth).map(|(r, t)| (r / t).abs()).sum::<f64>() / n;
        let mean = truth.iter().sum::<f64>() / n;
        let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
        let ss_res = mse * n;
        let r2 = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            0.0
        };
        Ok(Metrics {
            mse,
            mape,
            r2,
            residuals: ids.iter().cloned().zip(res).collect(),
        })
    }

    pub fn write_residuals_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,residual")?;
        for (id, r) in &self.residuals {
            writeln!(out, "{id},{r}")?;
        }
        Ok(())
    }
}

pub fn evaluate(model: &TrainedModel, test: &Samples) -> Result<Metrics> {
    let pred = model.predict(test.x.view())?;
    Metrics::from_predictions(&test.ids, &pred, &test.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub hidden_sizes: Vec<usize>,
    pub hidden_layers: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32, 64, 128],
            hidden_layers: vec![2, 3],
            learning_rates: vec![0.01, 0.001],
        }
    }
}

impl GridSpace {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_layers.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::Config("grid search space has an empty candidate list".into()));
        }
        Ok(())
    }

    /// Combinations in `n_h`, `L_h`, `lr` nesting order.
    pub fn combinations(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for &n in &self.hidden_sizes {
            for &l in &self.hidden_layers {
                for &lr in &self.learning_rates {
                    out.push((n, l, lr));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub fold_r2: Vec<f64>,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: MlpConfig,
}

impl GridResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "hidden_size,hidden_layers,learning_rate,mean_r2,fold_r2")?;
        for r in &self.rows {
            let folds: Vec<String> = r.fold_r2.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(
                out,
                "{},{},{},{:.6},{}",
                r.hidden_size,
                r.hidden_layers,
                r.learning_rate,
                r.mean_r2,
                folds.join(";")
            )?;
        }
        Ok(())
    }
}

/// Shuffled standard k-fold partition; fold sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::invalid(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    let mut folds = vec![Vec::new(); k];
    for (i, v) in idx.into_iter().enumerate() {
        folds[i % k].push(v);
    }
    Ok(folds)
}

fn cv_score(base: &MlpConfig, data: &Samples, folds: &[Vec<usize>], seed: u64) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(folds.len());
    for (f, test_rows) in folds.iter().enumerate() {
        let mut rest: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        // Early-stopping rows come from the training folds only.
        SeededRng::new(derive_seed(seed, f as u64)).shuffle(&mut rest);
        let n_val = ((rest.len() as f64 * 0.1).round() as usize).max(1);
        if rest.len() < n_val + 2 {
            return Err(Error::invalid(format!("fold {f} leaves too few rows to train")));
        }
        let (val_rows, train_rows) = rest.split_at(n_val);
        let cfg = MlpConfig { seed: derive_seed(seed, 100 + f as u64), ..*base };
        let model = train(init_model(&cfg)?, &data.subset(train_rows), &data.subset(val_rows))?;
        scores.push(evaluate(&model, &data.subset(test_rows))?.r2);
    }
    Ok(scores)
}

/// k-fold cross-validated mean R² for every combination; best by score,
/// ties to smaller `n_h`, smaller `L_h`, then larger `lr`.
pub fn grid_search(space: &GridSpace, base: &MlpConfig, data: &Samples, k: usize, seed: u64) -> Result<GridResult> {
    space.validate()?;
    let folds = kfold_indices(data.len(), k, seed)?;
    let combos = space.combinations();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(combos.len());

    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let chunks: Vec<_> = (0..threads)
            .map(|t| {
                let combos = &combos;
                let folds = &folds;
                scope.spawn(move || {
                    combos
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| i % threads == t)
                        .map(|(i, &(n, l, lr))| {
                            let cfg = MlpConfig {
                                hidden_size: n,
                                hidden_layers: l,
                                learning_rate: lr,
                                ..*base
                            };
                            (i, cv_score(&cfg, data, folds, seed))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(usize, Result<Vec<f64>>)> =
            chunks.into_iter().flat_map(|h| h.join().expect("grid worker panicked")).collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, r)| r).collect()
    });

    let mut rows = Vec::with_capacity(combos.len());
    for (&(n, l, lr), r) in combos.iter().zip(results) {
        let fold_r2 = r?;
        let mean_r2 = fold_r2.iter().sum::<f64>() / fold_r2.len() as f64;
        rows.push(GridRow {
            hidden_size: n,
            hidden_layers: l,
            learning_rate: lr,
            fold_r2,
            mean_r2,
        });
    }
    let best = rows
        .iter()
        .min_by(|a, b| {
            b.mean_r2
                .total_cmp(&a.mean_r2)
                .then(a.hidden_size.cmp(&b.hidden_size))
                .then(a.hidden_layers.cmp(&b.hidden_layers))
                .then(b.learning_rate.total_cmp(&a.learning_rate))
        })
        .expect("non-empty grid");
    let best = MlpConfig {
        hidden_size: best.hidden_size,
        hidden_layers: best.hidden_layers,
        learning_rate: best.learning_rate,
        ..*base
    };
    Ok(GridResult { rows, best })
}
