//! The classifier: fully-connected hidden layers, each followed by batch
//! normalization and ReLU, then a linear head over `num_classes` logits.
//!
//! Training uses mini-batch SGD with classical momentum and weight decay.
//! The head learns with its own (larger) rate, the feature layers with another.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batchnorm::{
    bn_backward, bn_forward_train, bn_normalize, update_running, BnCache, BnState, BnStats,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, RngStream};
use crate::tensor::{
    argmax_rows, matmul, matmul_nt, matmul_tn, relu_backward, relu_forward, softmax_cross_entropy,
    Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64, 64],
            num_classes: 9,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "network dimensions must be at least 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(
                "a classifier needs at least 2 classes".into(),
            ));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.num_classes))
        {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }
}

/// A fully-connected layer; `weight` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub spec: NetworkSpec,
    /// One per hidden layer plus the classifier head, in order.
    pub dense: Vec<Dense>,
    /// One per hidden layer.
    pub bn: Vec<BnState>,
}

impl Params {
    /// He-initialized weights, zero biases, identity BN.
    pub fn init(spec: &NetworkSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let dense = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let mut weight = gaussian_sample(rng, &[fan_in, fan_out]);
                let std = (2.0 / fan_in as f64).sqrt();
                weight.data_mut().iter_mut().for_each(|w| *w *= std);
                Dense {
                    weight,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        let bn = spec.hidden_dims.iter().map(|&h| BnState::new(h)).collect();
        Ok(Self {
            spec: spec.clone(),
            dense,
            bn,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let dims = self.spec.layer_dims();
        if self.dense.len() != dims.len() || self.bn.len() != self.spec.hidden_dims.len() {
            return Err(Error::Config(
                "layer count does not match network spec".into(),
            ));
        }
        for (d, (fan_in, fan_out)) in self.dense.iter().zip(dims) {
            if d.weight.shape() != [fan_in, fan_out] || d.bias.len() != fan_out {
                return Err(Error::dim(
                    "Params",
                    format!("{fan_in}×{fan_out}"),
                    format!("{:?}", d.weight.shape()),
                ));
            }
        }
        for (bn, &h) in self.bn.iter().zip(&self.spec.hidden_dims) {
            bn.validate()?;
            if bn.channels() != h {
                return Err(Error::dim("Params", h, bn.channels()));
            }
        }
        Ok(())
    }

    /// The running (μ, σ²) of every BN layer.
    pub fn bn_globals(&self) -> Vec<BnStats> {
        self.bn.iter().map(|b| b.running.clone()).collect()
    }

    /// Replaces the running statistics of every BN layer.
    pub fn with_bn_globals(&self, stats: &[BnStats]) -> Result<Params> {
        check_stats(self, stats)?;
        let mut p = self.clone();
        for (bn, s) in p.bn.iter_mut().zip(stats) {
            bn.running = s.clone();
        }
        Ok(p)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn check_stats(params: &Params, stats: &[BnStats]) -> Result<()> {
    if stats.len() != params.bn.len() {
        return Err(Error::MissingStats(format!(
            "expected statistics for {} BN layers, got {}",
            params.bn.len(),
            stats.len()
        )));
    }
    for (s, bn) in stats.iter().zip(&params.bn) {
        s.check(bn.channels(), "external statistics")?;
    }
    Ok(())
}

/// Which statistics the BN layers normalize with.
#[derive(Debug, Clone, Copy)]
pub enum Regime<'a> {
    /// Each batch's own statistics; caches are retained for backward.
    Train,
    /// The running globals stored in the parameters.
    Eval,
    /// Caller-supplied statistics, one entry per BN layer.
    External(&'a [BnStats]),
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Tensor,
    pub bn: BnCache,
    pub pre_relu: Tensor,
}

#[derive(Debug, Clone)]
pub struct TrainCaches {
    pub hidden: Vec<LayerCache>,
    pub head_input: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
    /// Activations entering each BN layer (after the dense layer, before normalization).
    pub pre_bn: Vec<Tensor>,
    /// Present only for the train regime.
    pub caches: Option<TrainCaches>,
}

pub fn forward(params: &Params, x: &Tensor, regime: Regime<'_>) -> Result<ForwardPass> {
    let (_, d) = x.expect_matrix("forward")?;
    if d != params.spec.input_dim {
        return Err(Error::dim("forward", params.spec.input_dim, d));
    }
    if let Regime::External(stats) = regime {
        check_stats(params, stats)?;
    }
    let train = matches!(regime, Regime::Train);
    let mut pre_bn = Vec::with_capacity(params.bn.len());
    let mut hidden = Vec::new();
    let mut h = x.clone();
    for (i, bn) in params.bn.iter().enumerate() {
        let dense = &params.dense[i];
        let mut z = matmul(&h, &dense.weight)?;
        z.add_row_vector(&dense.bias)?;
        let normalized = match regime {
            Regime::Train => {
                let (y, cache) = bn_forward_train(&z, bn)?;
                hidden.push(LayerCache {
                    input: h,
                    bn: cache,
                    pre_relu: y.clone(),
                });
                y
            }
            Regime::Eval => bn_normalize(&z, bn, &bn.running)?,
            Regime::External(stats) => bn_normalize(&z, bn, &stats[i])?,
        };
        pre_bn.push(z);
        h = relu_forward(&normalized);
    }
    let head = params.dense.last().expect("head layer");
    let mut logits = matmul(&h, &head.weight)?;
    logits.add_row_vector(&head.bias)?;
    let caches = train.then_some(TrainCaches {
        hidden,
        head_input: h,
    });
    Ok(ForwardPass {
        logits,
        pre_bn,
        caches,
    })
}

/// Gradients (or SGD velocities) with the same layout as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Vec<f64>>,
    pub gammas: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            weights: params
                .dense
                .iter()
                .map(|d| Tensor::zeros(d.weight.shape()))
                .collect(),
            biases: params
                .dense
                .iter()
                .map(|d| vec![0.0; d.bias.len()])
                .collect(),
            gammas: params.bn.iter().map(|b| vec![0.0; b.channels()]).collect(),
            betas: params.bn.iter().map(|b| vec![0.0; b.channels()]).collect(),
        }
    }

    fn matches(&self, params: &Params) -> bool {
        self.weights.len() == params.dense.len()
            && self.gammas.len() == params.bn.len()
            && self.betas.len() == params.bn.len()
            && self.biases.len() == params.dense.len()
            && self
                .weights
                .iter()
                .zip(&params.dense)
                .all(|(w, d)| w.shape() == d.weight.shape())
            && self
                .biases
                .iter()
                .zip(&params.dense)
                .all(|(b, d)| b.len() == d.bias.len())
            && self
                .gammas
                .iter()
                .zip(&params.bn)
                .all(|(g, b)| g.len() == b.channels())
            && self
                .betas
                .iter()
                .zip(&params.bn)
                .all(|(g, b)| g.len() == b.channels())
    }
}

/// Backpropagates `grad_logits` through a train-regime forward pass.
pub fn backward(params: &Params, caches: &TrainCaches, grad_logits: &Tensor) -> Result<ParamGrads> {
    if caches.hidden.len() != params.bn.len() {
        return Err(Error::Batch("caches do not match the network depth".into()));
    }
    let n_dense = params.dense.len();
    let mut weights = vec![None; n_dense];
    let mut biases = vec![Vec::new(); n_dense];
    let mut gammas = vec![Vec::new(); params.bn.len()];
    let mut betas = vec![Vec::new(); params.bn.len()];

    let head = &params.dense[n_dense - 1];
    weights[n_dense - 1] = Some(matmul_tn(&caches.head_input, grad_logits)?);
    biases[n_dense - 1] = grad_logits.column_sums();
    let mut grad_h = matmul_nt(grad_logits, &head.weight)?;

    for i in (0..params.bn.len()).rev() {
        let layer = &caches.hidden[i];
        let grad_norm = relu_backward(&layer.pre_relu, &grad_h)?;
        let bn = bn_backward(&layer.bn, &params.bn[i], &grad_norm)?;
        gammas[i] = bn.gamma;
        betas[i] = bn.beta;
        weights[i] = Some(matmul_tn(&layer.input, &bn.x)?);
        biases[i] = bn.x.column_sums();
        if i > 0 {
            grad_h = matmul_nt(&bn.x, &params.dense[i].weight)?;
        }
    }
    Ok(ParamGrads {
        weights: weights.into_iter().map(|w| w.expect("filled")).collect(),
        biases,
        gammas,
        betas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub lr_features: f64,
    pub lr_classifier: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epoch (0-based) from which the rates are multiplied by `lr_drop_factor`.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr_features: 0.01,
            lr_classifier: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            lr_drop_epoch: 25,
            lr_drop_factor: 0.1,
            batch_size: 64,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if !(self.lr_features > 0.0 && self.lr_classifier > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_drop_factor > 0.0) {
            return bad("weight decay must be nonnegative and the drop factor positive");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if self.lr_drop_epoch > self.epochs {
            return bad("lr_drop_epoch must not exceed epochs");
        }
        Ok(())
    }

    fn rate_scale(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.lr_drop_factor
        } else {
            1.0
        }
    }
}

/// Momentum SGD: `v ← m·v − lr·(g + wd·w)`, `w ← w + v`.
///
/// The classifier head uses `lr_classifier`; every other parameter uses `lr_features`.
pub fn sgd_step(
    params: &mut Params,
    grads: &ParamGrads,
    opt: &OptConfig,
    velocity: &mut ParamGrads,
    epoch: usize,
) -> Result<()> {
    if !grads.matches(params) || !velocity.matches(params) {
        return Err(Error::dim(
            "sgd_step",
            "gradients shaped like params",
            "mismatch",
        ));
    }
    let scale = opt.rate_scale(epoch);
    let head = params.dense.len() - 1;
    let step = |w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64| {
        for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = opt.momentum * *v - lr * (g + opt.weight_decay * *w);
            *w += *v;
        }
    };
    for (i, dense) in params.dense.iter_mut().enumerate() {
        let lr = scale
            * if i == head {
                opt.lr_classifier
            } else {
                opt.lr_features
            };
        step(
            dense.weight.data_mut(),
            grads.weights[i].data(),
            velocity.weights[i].data_mut(),
            lr,
        );
        step(
            &mut dense.bias,
            &grads.biases[i],
            &mut velocity.biases[i],
            lr,
        );
    }
    let lr = scale * opt.lr_features;
    for (i, bn) in params.bn.iter_mut().enumerate() {
        step(&mut bn.gamma, &grads.gammas[i], &mut velocity.gammas[i], lr);
        step(&mut bn.beta, &grads.betas[i], &mut velocity.betas[i], lr);
    }
    Ok(())
}

/// Splits a permutation into mini-batches of `batch_size`; a trailing batch of
/// one sample is merged into its predecessor so every batch has valid statistics.
pub(crate) fn minibatches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(tail);
    }
    batches
}

/// Loss and gradient step on one labeled batch; running statistics updated.
pub(crate) fn train_batch(
    params: &mut Params,
    x: &Tensor,
    labels: &[usize],
    opt: &OptConfig,
    velocity: &mut ParamGrads,
    epoch: usize,
) -> Result<f64> {
    let pass = forward(params, x, Regime::Train)?;
    let (loss, grad_logits) = softmax_cross_entropy(&pass.logits, labels)?;
    let caches = pass.caches.expect("train regime keeps caches");
    let grads = backward(params, &caches, &grad_logits)?;
    let n = x.rows();
    for (bn, layer) in params.bn.iter_mut().zip(&caches.hidden) {
        let m = bn.train_momentum;
        update_running(bn, &layer.bn.stats, n, m)?;
    }
    sgd_step(params, &grads, opt, velocity, epoch)?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: Params,
    /// Full-set training loss at the end of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Cross-entropy over the whole set, normalized with the set's own statistics.
pub fn dataset_loss(params: &Params, dataset: &Dataset) -> Result<f64> {
    let pass = forward(params, &dataset.features, Regime::Train)?;
    Ok(softmax_cross_entropy(&pass.logits, &dataset.labels)?.0)
}

/// Initializes a network from `rng` and trains it on `dataset`.
pub fn train(
    spec: &NetworkSpec,
    dataset: &Dataset,
    opt: &OptConfig,
    rng: &mut RngStream,
) -> Result<Params> {
    train_report(spec, dataset, opt, rng).map(|r| r.params)
}

pub fn train_report(
    spec: &NetworkSpec,
    dataset: &Dataset,
    opt: &OptConfig,
    rng: &mut RngStream,
) -> Result<TrainReport> {
    let params = Params::init(spec, rng)?;
    train_from(params, dataset, opt, rng)
}

/// Continues training existing parameters.
pub fn train_from(
    mut params: Params,
    dataset: &Dataset,
    opt: &OptConfig,
    rng: &mut RngStream,
) -> Result<TrainReport> {
    opt.validate()?;
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if dataset.len() < 2 {
        return Err(Error::Batch("training needs at least 2 samples".into()));
    }
    if dataset.dim() != params.spec.input_dim {
        return Err(Error::dim("train", params.spec.input_dim, dataset.dim()));
    }
    dataset.check_labels(params.spec.num_classes)?;
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut epoch_losses = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        let order = rng.permutation(dataset.len());
        for batch in minibatches(&order, opt.batch_size) {
            let x = dataset.features.select_rows(&batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
            train_batch(&mut params, &x, &labels, opt, &mut velocity, epoch)?;
        }
        epoch_losses.push(dataset_loss(&params, dataset)?);
    }
    Ok(TrainReport {
        params,
        epoch_losses,
    })
}

/// Argmax class per row of `x`.
pub fn predict(params: &Params, x: &Tensor, regime: Regime<'_>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(params, x, regime)?.logits))
}

/// Fraction of samples whose argmax prediction (lowest index on ties) is correct.
///
/// Eval and external regimes are per-sample, so the whole set is one batch; the
/// train regime likewise normalizes with the statistics of the full set.
pub fn evaluate(params: &Params, dataset: &Dataset, regime: Regime<'_>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let predicted = predict(params, &dataset.features, regime)?;
    Ok(accuracy(&predicted, &dataset.labels))
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}
