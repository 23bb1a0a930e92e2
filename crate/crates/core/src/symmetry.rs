//! Weight-space symmetry transformations: construction, application and
//! numerical verification.
//!
//! For the plain architecture, scaling the first layer's rows by a positive
//! scalar and each deeper layer's rows by a positive paired-equal diagonal
//! (entries repeat within every pooling pair) leaves the loss unchanged,
//! provided each layer's pooled-output scaling is cancelled on the next
//! layer's columns and the leftover scalings are absorbed into the
//! classifier columns. For the batch-normalized variant, per-feature
//! normalization absorbs any positive per-row scaling of any layer on its
//! own, with batch-norm parameters and the classifier untouched.
//!
//! These transformations form an abelian group under entrywise
//! multiplication; [`Reparam::compose`] and [`Reparam::inverse`] implement
//! it, and the `check_*` functions measure the invariances numerically.

use crate::linalg::Matrix;
use crate::network::{backward, forward, ArchConfig, Mode, NetworkParams};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// A symmetry-group element matching one architecture family.
#[derive(Debug, Clone, PartialEq)]
pub enum Reparam<S> {
    /// Plain architecture: `alpha0` scales the first layer's rows;
    /// `betas[l-1]` (full filter width, entries equal within each pooling
    /// pair) scales layer `l`'s rows for `l >= 1` (0-based).
    Plain { alpha0: S, betas: Vec<Vec<S>> },
    /// Batch-normalized variant: `alphas[l]` scales layer `l`'s rows.
    BatchNorm { alphas: Vec<Vec<S>> },
}

impl<S: Scalar> Reparam<S> {
    pub fn identity(cfg: &ArchConfig) -> Self {
        if cfg.use_batchnorm {
            Reparam::BatchNorm {
                alphas: vec![vec![S::one(); cfg.filters_per_layer]; cfg.depth],
            }
        } else {
            Reparam::Plain {
                alpha0: S::one(),
                betas: vec![vec![S::one(); cfg.filters_per_layer]; cfg.depth - 1],
            }
        }
    }

    pub fn validate(&self, cfg: &ArchConfig) {
        match self {
            Reparam::Plain { alpha0, betas } => {
                assert!(
                    !cfg.use_batchnorm,
                    "plain reparameterization on batch-norm config"
                );
                assert!(*alpha0 > S::zero(), "alpha0 must be positive");
                assert_eq!(
                    betas.len(),
                    cfg.depth - 1,
                    "one beta per layer past the first"
                );
                for beta in betas {
                    assert_eq!(beta.len(), cfg.filters_per_layer, "beta width mismatch");
                    for pair in beta.chunks_exact(2) {
                        assert!(pair[0] > S::zero(), "beta entries must be positive");
                        assert!(
                            pair[0] == pair[1],
                            "beta entries must repeat within each pooling pair"
                        );
                    }
                }
            }
            Reparam::BatchNorm { alphas } => {
                assert!(
                    cfg.use_batchnorm,
                    "batch-norm reparameterization on plain config"
                );
                assert_eq!(alphas.len(), cfg.depth, "one alpha per layer");
                for alpha in alphas {
                    assert_eq!(alpha.len(), cfg.filters_per_layer, "alpha width mismatch");
                    assert!(
                        alpha.iter().all(|&a| a > S::zero()),
                        "alpha entries must be positive"
                    );
                }
            }
        }
    }

    /// Entrywise product; the group is abelian so order does not matter.
    pub fn compose(&self, other: &Reparam<S>) -> Reparam<S> {
        match (self, other) {
            (
                Reparam::Plain {
                    alpha0: a0,
                    betas: b0,
                },
                Reparam::Plain {
                    alpha0: a1,
                    betas: b1,
                },
            ) => Reparam::Plain {
                alpha0: *a0 * *a1,
                betas: b0
                    .iter()
                    .zip(b1)
                    .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| u * v).collect())
                    .collect(),
            },
            (Reparam::BatchNorm { alphas: a0 }, Reparam::BatchNorm { alphas: a1 }) => {
                Reparam::BatchNorm {
                    alphas: a0
                        .iter()
                        .zip(a1)
                        .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| u * v).collect())
                        .collect(),
                }
            }
            _ => panic!("cannot compose reparameterizations of different kinds"),
        }
    }

    /// Entrywise reciprocal.
    pub fn inverse(&self) -> Reparam<S> {
        match self {
            Reparam::Plain { alpha0, betas } => Reparam::Plain {
                alpha0: S::one() / *alpha0,
                betas: betas
                    .iter()
                    .map(|b| b.iter().map(|&x| S::one() / x).collect())
                    .collect(),
            },
            Reparam::BatchNorm { alphas } => Reparam::BatchNorm {
                alphas: alphas
                    .iter()
                    .map(|a| a.iter().map(|&x| S::one() / x).collect())
                    .collect(),
            },
        }
    }
}

/// Halves a paired-equal diagonal: `(b0, b0, b1, b1, ...)` to `(b0, b1, ...)`,
/// the scaling the pooled output inherits.
fn pooled_diag<S: Scalar>(beta: &[S]) -> Vec<S> {
    beta.chunks_exact(2).map(|pair| pair[0]).collect()
}

/// Samples a valid group element with entries log-uniform in
/// `magnitude_range`. A `[1, 1]` range yields the identity.
pub fn random_reparam<S: Scalar>(
    cfg: &ArchConfig,
    seed: u64,
    magnitude_range: (f64, f64),
) -> Reparam<S> {
    let (lo, hi) = magnitude_range;
    assert!(
        lo > 0.0 && hi >= lo,
        "magnitude range must satisfy 0 < lo <= hi"
    );
    let mut rng = SplitMix64::new(seed);
    let draw = |rng: &mut SplitMix64| S::cast(rng.next_range(lo.ln(), hi.ln()).exp());
    if cfg.use_batchnorm {
        let alphas = (0..cfg.depth)
            .map(|_| (0..cfg.filters_per_layer).map(|_| draw(&mut rng)).collect())
            .collect();
        Reparam::BatchNorm { alphas }
    } else {
        let alpha0 = draw(&mut rng);
        let betas = (1..cfg.depth)
            .map(|_| {
                let mut beta = Vec::with_capacity(cfg.filters_per_layer);
                for _ in 0..cfg.filters_per_layer / 2 {
                    let b = draw(&mut rng);
                    beta.push(b);
                    beta.push(b);
                }
                beta
            })
            .collect();
        Reparam::Plain { alpha0, betas }
    }
}

/// Applies the group element to the parameters, producing the equivalent
/// network the loss cannot distinguish.
///
/// Plain: `W_0 <- alpha0 W_0`; for `l >= 1`, `W_l <- Diag(beta_l) W_l
/// Diag(pooled(beta_{l-1}))^-1` (the previous layer's pooled-output scaling
/// is cancelled on the columns; for `l = 1` there is nothing to cancel since
/// a scalar commutes through); the classifier absorbs the rest:
/// `theta <- theta * (1/alpha0) Diag(pooled(beta_last))^-1`. Batch-norm:
/// `W_l <- Diag(alpha_l) W_l` with normalization parameters and classifier
/// left unchanged.
pub fn apply_reparam<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    rep: &Reparam<S>,
) -> NetworkParams<S> {
    params.validate(cfg);
    rep.validate(cfg);
    let mut out = params.clone();
    match rep {
        Reparam::Plain { alpha0, betas } => {
            out.weights[0] = out.weights[0].scaled(*alpha0);
            let mut prev_pooled: Option<Vec<S>> = None;
            for (l, beta) in betas.iter().enumerate() {
                let mut w = out.weights[l + 1].scale_rows(beta);
                if let Some(prev) = &prev_pooled {
                    let inv: Vec<S> = prev.iter().map(|&b| S::one() / b).collect();
                    w = w.scale_cols(&inv);
                }
                out.weights[l + 1] = w;
                prev_pooled = Some(pooled_diag(beta));
            }
            let tail = prev_pooled.unwrap_or_else(|| vec![S::one(); cfg.pooled_dim()]);
            let theta_cols: Vec<S> = tail.iter().map(|&b| S::one() / (*alpha0 * b)).collect();
            out.theta = out.theta.scale_cols(&theta_cols);
        }
        Reparam::BatchNorm { alphas } => {
            for (w, alpha) in out.weights.iter_mut().zip(alphas) {
                *w = w.scale_rows(alpha);
            }
        }
    }
    out
}

/// Measured invariance of one forward pass under a reparameterization.
#[derive(Debug, Clone, Copy)]
pub struct InvarianceReport {
    /// `|L(params) - L(apply_reparam(params, rep))|`.
    pub loss_diff: f64,
    /// Max absolute class-probability difference over the batch.
    pub max_prob_diff: f64,
}

/// Runs the same batch through the original and reparameterized parameters
/// and reports the loss and probability discrepancies.
pub fn check_loss_invariance<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    rep: &Reparam<S>,
    input: &Matrix<S>,
    labels: &[u8],
    mode: Mode,
) -> InvarianceReport {
    let base = forward(cfg, params, input, labels, mode);
    let mapped = forward(cfg, &apply_reparam(cfg, params, rep), input, labels, mode);
    InvarianceReport {
        loss_diff: (base.loss - mapped.loss).abs().as_f64(),
        max_prob_diff: base.probs.max_abs_diff(&mapped.probs).as_f64(),
    }
}

/// Verifies that the per-row Euclidean gradient scales inversely to the row
/// scaling: for the batch-normalized family, `grad at Diag(a)W` must equal
/// `Diag(a)^-1 (grad at W)` row for row. Returns the max relative error over
/// all layers. The evaluation point must be kink-free for the comparison to
/// be meaningful.
pub fn check_gradient_scaling<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    rep: &Reparam<S>,
    input: &Matrix<S>,
    labels: &[u8],
) -> f64 {
    let Reparam::BatchNorm { alphas } = rep else {
        panic!("gradient inverse-scaling is a per-row identity of the batch-norm family");
    };
    let base_cache = forward(cfg, params, input, labels, Mode::Train);
    let base_grads = backward(cfg, params, &base_cache, labels);

    let mapped = apply_reparam(cfg, params, rep);
    let mapped_cache = forward(cfg, &mapped, input, labels, Mode::Train);
    let mapped_grads = backward(cfg, &mapped, &mapped_cache, labels);

    let mut max_rel: f64 = 0.0;
    for (l, alpha) in alphas.iter().enumerate() {
        let inv: Vec<S> = alpha.iter().map(|&a| S::one() / a).collect();
        let expected = base_grads.weights[l].scale_rows(&inv);
        let got = &mapped_grads.weights[l];
        for (&e, &g) in expected.as_slice().iter().zip(got.as_slice()) {
            let denom = e.abs().max(g.abs()).max(S::cast(1e-8));
            max_rel = max_rel.max(((e - g).abs() / denom).as_f64());
        }
    }
    max_rel
}
