//! Fully connected deep networks: linear / (batch-norm) / ReLU / 2x1-max-pool
//! layers under a soft-max cross-entropy classifier, with exact
//! back-propagation and a finite-difference oracle.
//!
//! Layer `l` maps its input through `h = x Wᵀ` (rows of `W` are filters),
//! optionally batch-normalizes each feature over the mini-batch, applies
//! ReLU, then max-pools adjacent feature pairs with stride 2, halving the
//! feature dimension. The classifier scores are `m θᵀ`.

mod checkpoint;
mod gradcheck;
mod ops;

pub use checkpoint::{load_params, save_params, CheckpointError};
pub use gradcheck::{
    compare_grads_fd, gradcheck, gradcheck_at, kink_distance, random_batch, GradcheckOptions,
    GradcheckReport,
};
pub use ops::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, maxpool_backward, maxpool_forward,
    relu_forward, softmax_xent, BnCache,
};

use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Architecture hyperparameters. `depth` counts hidden layers; every layer
/// has `filters_per_layer` filters, halved by pooling before the next layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub depth: usize,
    pub filters_per_layer: usize,
    pub use_batchnorm: bool,
    pub input_dim: usize,
    pub n_classes: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl ArchConfig {
    /// Plain architecture: linear / ReLU / max-pool layers.
    pub fn plain(
        depth: usize,
        filters_per_layer: usize,
        input_dim: usize,
        n_classes: usize,
    ) -> Self {
        ArchConfig {
            depth,
            filters_per_layer,
            use_batchnorm: false,
            input_dim,
            n_classes,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Batch-normalized variant: linear / batch-norm / ReLU / max-pool.
    pub fn batch_norm(
        depth: usize,
        filters_per_layer: usize,
        input_dim: usize,
        n_classes: usize,
    ) -> Self {
        ArchConfig {
            use_batchnorm: true,
            ..ArchConfig::plain(depth, filters_per_layer, input_dim, n_classes)
        }
    }

    pub fn validate(&self) {
        assert!(self.depth >= 1, "depth must be at least 1");
        assert!(
            self.filters_per_layer >= 2 && self.filters_per_layer.is_multiple_of(2),
            "filters_per_layer must be even (max-pool pairs entries), got {}",
            self.filters_per_layer
        );
        assert!(self.input_dim >= 1, "input_dim must be positive");
        assert!(self.n_classes >= 2, "n_classes must be at least 2");
        assert!(self.bn_epsilon >= 0.0, "bn_epsilon must be nonnegative");
        assert!(
            self.bn_momentum > 0.0 && self.bn_momentum < 1.0,
            "bn_momentum must lie in (0,1)"
        );
    }

    /// Feature width after pooling, the input width of every layer past the
    /// first and of the classifier.
    pub fn pooled_dim(&self) -> usize {
        self.filters_per_layer / 2
    }

    /// Input width of layer `l` (0-based).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.pooled_dim()
        }
    }
}

/// Per-layer batch-normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnLayer<S> {
    pub scale: Vec<S>,
    pub shift: Vec<S>,
    pub run_mean: Vec<S>,
    pub run_var: Vec<S>,
}

/// All trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<S> {
    pub weights: Vec<Matrix<S>>,
    pub theta: Matrix<S>,
    pub bn: Option<Vec<BnLayer<S>>>,
}

impl<S: Scalar> NetworkParams<S> {
    pub fn validate(&self, cfg: &ArchConfig) {
        assert_eq!(
            self.weights.len(),
            cfg.depth,
            "wrong number of weight layers"
        );
        for (l, w) in self.weights.iter().enumerate() {
            assert_eq!(
                w.shape(),
                (cfg.filters_per_layer, cfg.layer_input_dim(l)),
                "weight {l} has shape {:?}",
                w.shape()
            );
        }
        assert_eq!(
            self.theta.shape(),
            (cfg.n_classes, cfg.pooled_dim()),
            "classifier has shape {:?}",
            self.theta.shape()
        );
        assert_eq!(
            self.bn.is_some(),
            cfg.use_batchnorm,
            "batch-norm presence mismatch"
        );
        if let Some(bn) = &self.bn {
            assert_eq!(bn.len(), cfg.depth, "wrong number of batch-norm layers");
            for layer in bn {
                assert_eq!(layer.scale.len(), cfg.filters_per_layer);
                assert_eq!(layer.shift.len(), cfg.filters_per_layer);
                assert_eq!(layer.run_mean.len(), cfg.filters_per_layer);
                assert_eq!(layer.run_var.len(), cfg.filters_per_layer);
                assert!(
                    layer.run_var.iter().all(|&v| v >= S::zero()),
                    "negative running variance"
                );
            }
        }
    }

    /// Folds the mini-batch statistics recorded in `cache` into the running
    /// statistics with the configured momentum. Call once per training step.
    pub fn update_bn_running(&mut self, cfg: &ArchConfig, cache: &ForwardCache<S>) {
        let Some(bn) = &mut self.bn else { return };
        let momentum = S::cast(cfg.bn_momentum);
        let keep = S::one() - momentum;
        for (layer, lc) in bn.iter_mut().zip(&cache.layers) {
            let Some(stats) = &lc.bn_stats else { continue };
            for (rm, &m) in layer.run_mean.iter_mut().zip(&stats.mean) {
                *rm = keep * *rm + momentum * m;
            }
            for (rv, &v) in layer.run_var.iter_mut().zip(&stats.var) {
                *rv = keep * *rv + momentum * v;
            }
        }
    }
}

/// Gradients of the mean mini-batch loss, shape-matching [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub weights: Vec<Matrix<S>>,
    pub theta: Matrix<S>,
    pub bn: Option<Vec<BnGrads<S>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<S> {
    pub scale: Vec<S>,
    pub shift: Vec<S>,
}

/// Forward or inference behavior: `Train` uses mini-batch statistics for
/// batch normalization, `Eval` the running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    pub mode: Mode,
    pub input: Matrix<S>,
    pub layers: Vec<LayerCache<S>>,
    pub probs: Matrix<S>,
    pub loss: S,
}

#[derive(Debug, Clone)]
pub struct LayerCache<S> {
    /// Pre-normalization pre-activation `h = x Wᵀ`.
    pub pre: Matrix<S>,
    /// Batch-norm output (the ReLU input) when batch norm is enabled.
    pub bn_out: Option<Matrix<S>>,
    /// Mini-batch statistics, present only in train mode with batch norm.
    pub bn_stats: Option<BnCache<S>>,
    /// ReLU output `r`.
    pub activated: Matrix<S>,
    /// Winner offset (0 or 1) per pooled pair, row-major `batch x pairs`.
    pub pool_idx: Vec<u8>,
    /// Pooled output `m`.
    pub pooled: Matrix<S>,
}

impl<S: Scalar> LayerCache<S> {
    /// The values fed to ReLU: batch-norm output when present, else `h`.
    pub fn relu_input(&self) -> &Matrix<S> {
        self.bn_out.as_ref().unwrap_or(&self.pre)
    }
}

/// Weights and class vectors drawn from a standard Gaussian with every
/// filter row and class vector unit-normalized; batch-norm scale 1, shift 0,
/// running statistics (0, 1).
pub fn init_params<S: Scalar>(cfg: &ArchConfig, seed: u64) -> NetworkParams<S> {
    cfg.validate();
    let mut rng = SplitMix64::new(seed);
    let weights = (0..cfg.depth)
        .map(|l| {
            Matrix::<S>::gaussian(cfg.filters_per_layer, cfg.layer_input_dim(l), &mut rng)
                .orth_rows()
        })
        .collect();
    let theta = Matrix::<S>::gaussian(cfg.n_classes, cfg.pooled_dim(), &mut rng).orth_rows();
    let bn = cfg.use_batchnorm.then(|| {
        (0..cfg.depth)
            .map(|_| BnLayer {
                scale: vec![S::one(); cfg.filters_per_layer],
                shift: vec![S::zero(); cfg.filters_per_layer],
                run_mean: vec![S::zero(); cfg.filters_per_layer],
                run_var: vec![S::one(); cfg.filters_per_layer],
            })
            .collect()
    });
    NetworkParams { weights, theta, bn }
}

/// Full forward pass. Pure: batch-norm running statistics are *not*
/// mutated; the training loop folds them in afterwards via
/// [`NetworkParams::update_bn_running`].
pub fn forward<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    input: &Matrix<S>,
    labels: &[u8],
    mode: Mode,
) -> ForwardCache<S> {
    params.validate(cfg);
    assert_eq!(input.cols(), cfg.input_dim, "input width mismatch");
    assert_eq!(input.rows(), labels.len(), "label count mismatch");

    let mut features = input.clone();
    let mut layers = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let pre = features.matmul_nt(&params.weights[l]);
        let (bn_out, bn_stats) = match &params.bn {
            Some(bn) => {
                let layer = &bn[l];
                match mode {
                    Mode::Train => {
                        let (out, stats) =
                            batchnorm_train(&pre, &layer.scale, &layer.shift, cfg.bn_epsilon);
                        (Some(out), Some(stats))
                    }
                    Mode::Eval => {
                        let out = batchnorm_eval(
                            &pre,
                            &layer.scale,
                            &layer.shift,
                            &layer.run_mean,
                            &layer.run_var,
                            cfg.bn_epsilon,
                        );
                        (Some(out), None)
                    }
                }
            }
            None => (None, None),
        };
        let activated = relu_forward(bn_out.as_ref().unwrap_or(&pre));
        let (pooled, pool_idx) = maxpool_forward(&activated);
        features = pooled.clone();
        layers.push(LayerCache {
            pre,
            bn_out,
            bn_stats,
            activated,
            pool_idx,
            pooled,
        });
    }

    let scores = features.matmul_nt(&params.theta);
    let (loss, probs) = softmax_xent(&scores, labels);
    ForwardCache {
        mode,
        input: input.clone(),
        layers,
        probs,
        loss,
    }
}

/// Exact gradients of the mean mini-batch loss with respect to every
/// trainable parameter. Max-pool routes gradient to the recorded argmax,
/// ReLU gates by the sign of its input, and batch-norm backward includes
/// the mini-batch mean/variance dependence.
pub fn backward<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    cache: &ForwardCache<S>,
    labels: &[u8],
) -> Gradients<S> {
    assert_eq!(
        cache.mode,
        Mode::Train,
        "backward requires a train-mode cache"
    );
    assert_eq!(cache.layers.len(), cfg.depth, "cache/config depth mismatch");
    let n = cache.input.rows();
    assert_eq!(labels.len(), n, "cache/label batch size mismatch");

    // d(mean loss)/d(scores) = (probs - onehot) / n
    let inv_n = S::one() / S::cast(n as f64);
    let mut dscores = cache.probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = dscores.row_mut(i);
        row[label as usize] -= S::one();
        for v in row {
            *v *= inv_n;
        }
    }

    let features = &cache.layers[cfg.depth - 1].pooled;
    let d_theta = dscores.matmul_tn(features);
    let mut d_pooled = dscores.matmul(&params.theta);

    let mut d_weights = vec![Matrix::zeros(0, 0); cfg.depth];
    let mut d_bn: Option<Vec<BnGrads<S>>> = params.bn.as_ref().map(|bn| {
        bn.iter()
            .map(|layer| BnGrads {
                scale: vec![S::zero(); layer.scale.len()],
                shift: vec![S::zero(); layer.shift.len()],
            })
            .collect()
    });

    for l in (0..cfg.depth).rev() {
        let lc = &cache.layers[l];
        let mut d_act = maxpool_backward(&d_pooled, &lc.pool_idx, cfg.filters_per_layer);
        // ReLU gate: output is positive iff input is positive.
        for (d, &r) in d_act.as_mut_slice().iter_mut().zip(lc.activated.as_slice()) {
            if r <= S::zero() {
                *d = S::zero();
            }
        }
        let d_pre = if let Some(bn) = &params.bn {
            let stats = lc
                .bn_stats
                .as_ref()
                .expect("train-mode cache carries batch-norm statistics");
            let (d_pre, d_scale, d_shift) = batchnorm_backward(stats, &bn[l].scale, &d_act);
            let grads = &mut d_bn.as_mut().unwrap()[l];
            grads.scale = d_scale;
            grads.shift = d_shift;
            d_pre
        } else {
            d_act
        };
        let layer_input = if l == 0 {
            &cache.input
        } else {
            &cache.layers[l - 1].pooled
        };
        d_weights[l] = d_pre.matmul_tn(layer_input);
        if l > 0 {
            d_pooled = d_pre.matmul(&params.weights[l]);
        }
    }

    Gradients {
        weights: d_weights,
        theta: d_theta,
        bn: d_bn,
    }
}

/// Mean cross-entropy and misclassification fraction over a dataset,
/// evaluated in the given mode in fixed-size chunks.
pub fn evaluate<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    data: &crate::data::Dataset<S>,
    mode: Mode,
) -> EvalMetrics {
    assert!(!data.is_empty(), "cannot evaluate on an empty dataset");
    let chunk = 1000;
    let n = data.len();
    let mut xent_sum = 0.0;
    let mut errors = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let (inputs, labels) = data.gather(&indices);
        let cache = forward(cfg, params, &inputs, &labels, mode);
        xent_sum += cache.loss.as_f64() * (end - start) as f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = cache.probs.row(i);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            if best != label as usize {
                errors += 1;
            }
        }
        start = end;
    }
    EvalMetrics {
        mean_xent: xent_sum / n as f64,
        error_rate: errors as f64 / n as f64,
    }
}

/// Per-sample metrics from [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub mean_xent: f64,
    pub error_rate: f64,
}
