//! Finite-difference gradient oracle.
//!
//! Central differences `(f(x+h) - f(x-h)) / 2h` per coordinate, compared
//! against back-propagation on a sampled subset of coordinates of every
//! parameter tensor. ReLU and max-pool are non-differentiable on
//! measure-zero kink sets where finite differences are invalid, so
//! evaluation points are resampled until they are kink-free: every ReLU
//! input must sit at least `kink_margin * step` from zero, and every pooling
//! pair with two active entries must differ by at least that much. A pair
//! whose entries are both inactive is locally constant (no gradient flows
//! through it) and is not a kink.

use crate::linalg::Matrix;
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;

use super::{backward, forward, ArchConfig, ForwardCache, Gradients, Mode, NetworkParams};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Central-difference step `h`.
    pub step: f64,
    /// Coordinates sampled per parameter tensor (capped at the tensor size).
    pub coords_per_tensor: usize,
    /// Kink-free radius in units of `step`.
    pub kink_margin: f64,
    /// Resampling attempts before giving up.
    pub max_resamples: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            coords_per_tensor: 50,
            kink_margin: 10.0,
            max_resamples: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Max of `|g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8)` over all sampled
    /// coordinates of all tensors.
    pub max_rel_err: f64,
    pub per_tensor: Vec<TensorReport>,
    /// Evaluation points discarded for sitting too close to a kink.
    pub resamples: usize,
}

/// Distance of the forward pass from the nearest ReLU/max-pool kink: the
/// smallest ReLU input magnitude, minimized with the smallest gap of any
/// pooling pair whose entries are both active.
pub fn kink_distance<S: Scalar>(cache: &ForwardCache<S>) -> f64 {
    let mut dist = f64::INFINITY;
    for layer in &cache.layers {
        for &v in layer.relu_input().as_slice() {
            dist = dist.min(v.abs().as_f64());
        }
        let r = &layer.activated;
        for i in 0..r.rows() {
            let row = r.row(i);
            for pair in row.chunks_exact(2) {
                if pair[0] > S::zero() && pair[1] > S::zero() {
                    dist = dist.min((pair[0] - pair[1]).abs().as_f64());
                }
            }
        }
    }
    dist
}

#[derive(Debug, Clone, Copy)]
enum TensorId {
    Weight(usize),
    Theta,
    BnScale(usize),
    BnShift(usize),
}

fn tensor_list(cfg: &ArchConfig) -> Vec<(TensorId, String)> {
    let mut list = Vec::new();
    for l in 0..cfg.depth {
        list.push((TensorId::Weight(l), format!("w{l}")));
    }
    list.push((TensorId::Theta, "theta".to_string()));
    if cfg.use_batchnorm {
        for l in 0..cfg.depth {
            list.push((TensorId::BnScale(l), format!("bn{l}.scale")));
            list.push((TensorId::BnShift(l), format!("bn{l}.shift")));
        }
    }
    list
}

fn tensor_len<S: Scalar>(params: &NetworkParams<S>, id: TensorId) -> usize {
    match id {
        TensorId::Weight(l) => params.weights[l].len(),
        TensorId::Theta => params.theta.len(),
        TensorId::BnScale(l) => params.bn.as_ref().unwrap()[l].scale.len(),
        TensorId::BnShift(l) => params.bn.as_ref().unwrap()[l].shift.len(),
    }
}

fn tensor_entry_mut<S: Scalar>(params: &mut NetworkParams<S>, id: TensorId, k: usize) -> &mut S {
    match id {
        TensorId::Weight(l) => &mut params.weights[l].as_mut_slice()[k],
        TensorId::Theta => &mut params.theta.as_mut_slice()[k],
        TensorId::BnScale(l) => &mut params.bn.as_mut().unwrap()[l].scale[k],
        TensorId::BnShift(l) => &mut params.bn.as_mut().unwrap()[l].shift[k],
    }
}

fn grad_entry<S: Scalar>(grads: &Gradients<S>, id: TensorId, k: usize) -> S {
    match id {
        TensorId::Weight(l) => grads.weights[l].as_slice()[k],
        TensorId::Theta => grads.theta.as_slice()[k],
        TensorId::BnScale(l) => grads.bn.as_ref().unwrap()[l].scale[k],
        TensorId::BnShift(l) => grads.bn.as_ref().unwrap()[l].shift[k],
    }
}

/// Compares the supplied gradients against central finite differences of the
/// train-mode mean loss on a seeded coordinate sample. The differencing path
/// only evaluates the forward loss and is independent of `backward`.
pub fn compare_grads_fd<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    input: &Matrix<S>,
    labels: &[u8],
    grads: &Gradients<S>,
    opts: &GradcheckOptions,
    seed: u64,
) -> GradcheckReport {
    let mut work = params.clone();
    let step = S::cast(opts.step);
    let mut per_tensor = Vec::new();
    let mut overall: f64 = 0.0;

    for (id, name) in tensor_list(cfg) {
        let len = tensor_len(params, id);
        let n_coords = opts.coords_per_tensor.min(len);
        let mut coords: Vec<usize> = (0..len).collect();
        SplitMix64::new(derive_seed(seed, &name, 0)).shuffle(&mut coords);
        coords.truncate(n_coords);

        let mut tensor_max: f64 = 0.0;
        for &k in &coords {
            let original = *tensor_entry_mut(&mut work, id, k);
            *tensor_entry_mut(&mut work, id, k) = original + step;
            let f_plus = forward(cfg, &work, input, labels, Mode::Train)
                .loss
                .as_f64();
            *tensor_entry_mut(&mut work, id, k) = original - step;
            let f_minus = forward(cfg, &work, input, labels, Mode::Train)
                .loss
                .as_f64();
            *tensor_entry_mut(&mut work, id, k) = original;

            let fd = (f_plus - f_minus) / (2.0 * opts.step);
            let bp = grad_entry(grads, id, k).as_f64();
            let rel = (bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-8);
            tensor_max = tensor_max.max(rel);
        }
        overall = overall.max(tensor_max);
        per_tensor.push(TensorReport {
            name,
            max_rel_err: tensor_max,
            coords_checked: n_coords,
        });
    }

    GradcheckReport {
        max_rel_err: overall,
        per_tensor,
        resamples: 0,
    }
}

/// Gradient check at a fixed evaluation point. Returns `None` when the point
/// sits within `kink_margin * step` of a ReLU/max-pool kink.
pub fn gradcheck_at<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    input: &Matrix<S>,
    labels: &[u8],
    opts: &GradcheckOptions,
    seed: u64,
) -> Option<GradcheckReport> {
    let cache = forward(cfg, params, input, labels, Mode::Train);
    if kink_distance(&cache) < opts.kink_margin * opts.step {
        return None;
    }
    let grads = backward(cfg, params, &cache, labels);
    Some(compare_grads_fd(
        cfg, params, input, labels, &grads, opts, seed,
    ))
}

/// Seeded Gaussian inputs with uniform labels, the generic batch used by
/// gradient and symmetry checks.
pub fn random_batch<S: Scalar>(cfg: &ArchConfig, n: usize, seed: u64) -> (Matrix<S>, Vec<u8>) {
    let mut rng = SplitMix64::new(seed);
    let input = Matrix::gaussian(n, cfg.input_dim, &mut rng);
    let labels = (0..n)
        .map(|_| rng.next_below(cfg.n_classes as u64) as u8)
        .collect();
    (input, labels)
}

/// End-to-end gradient check: draws seeded parameters and a seeded batch,
/// resampling both until the evaluation point is kink-free, then compares
/// back-propagation against central differences.
pub fn gradcheck<S: Scalar>(
    cfg: &ArchConfig,
    batch_size: usize,
    seed: u64,
    opts: &GradcheckOptions,
) -> GradcheckReport {
    for attempt in 0..opts.max_resamples {
        let params: NetworkParams<S> =
            super::init_params(cfg, derive_seed(seed, "gradcheck-params", attempt as u64));
        let (input, labels) = random_batch::<S>(
            cfg,
            batch_size,
            derive_seed(seed, "gradcheck-batch", attempt as u64),
        );
        if let Some(mut report) = gradcheck_at(cfg, &params, &input, &labels, opts, seed) {
            report.resamples = attempt;
            return report;
        }
    }
    panic!(
        "no kink-free evaluation point found in {} attempts (margin {} * step {})",
        opts.max_resamples, opts.kink_margin, opts.step
    );
}
