//! Weight-update rules and learning-rate protocols.
//!
//! Three first-order rules share one interface:
//!
//! * `Bsgd`: plain Euclidean steps (the balanced-SGD baseline; its
//!   "balance" is the unit-normalized initialization, not the update).
//! * `Sm`: scaled-metric steps. the Euclidean gradient of each weight
//!   matrix is rescaled row-wise by the squared row norms (the inverse
//!   metric `Diag(diag(W Wᵀ))`), and the classifier gradient column-wise by
//!   `Diag(diag(θᵀθ))` acting from the right. Under a positive row scaling
//!   the update point scales along, so trajectories started at equivalent
//!   points stay equivalent.
//! * `Un`: unit-norm steps on the oblique manifold. the gradient is
//!   projected onto the tangent space at each filter row, the step taken,
//!   and the result retracted back to unit norm. The classifier sees plain
//!   Euclidean steps; with rows constrained, it carries no symmetry to fix.
//!
//! Batch-norm scale/shift parameters always receive plain Euclidean steps.

use crate::linalg::Matrix;
use crate::network::{backward, forward, ArchConfig, Gradients, Mode, NetworkParams};
use crate::scalar::Scalar;

/// Squared-row-norm floor below which the scaled metric is considered
/// degenerate; a collapsed filter signals a broken run, so this is a hard
/// error rather than a clamp.
const METRIC_DEGENERACY_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Bsgd,
    Sm,
    Un,
}

impl UpdateRule {
    pub fn label(self) -> &'static str {
        match self {
            UpdateRule::Bsgd => "bsgd",
            UpdateRule::Sm => "sm",
            UpdateRule::Un => "un",
        }
    }
}

impl std::str::FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bsgd" => Ok(UpdateRule::Bsgd),
            "sm" => Ok(UpdateRule::Sm),
            "un" => Ok(UpdateRule::Un),
            other => Err(format!(
                "unknown update rule '{other}' (expected bsgd|sm|un)"
            )),
        }
    }
}

/// Inverse-metric diagonal for row-scaled weights: `diag(W Wᵀ)`, the squared
/// row norms. The Riemannian gradient is the Euclidean gradient with row `i`
/// multiplied by entry `i`.
pub fn sm_inverse_metric_left<S: Scalar>(w: &Matrix<S>) -> Vec<S> {
    let diag = w.diag_of_gram();
    for (i, &d) in diag.iter().enumerate() {
        assert!(
            d > S::cast(METRIC_DEGENERACY_FLOOR),
            "scaled metric degenerate: row {i} has squared norm {d}"
        );
    }
    diag
}

/// Scaled-metric step for a weight matrix: `W - lr * Diag(diag(W Wᵀ)) * grad`.
pub fn sm_update_left<S: Scalar>(w: &Matrix<S>, grad: &Matrix<S>, lr: S) -> Matrix<S> {
    let metric = sm_inverse_metric_left(w);
    w.sub(&grad.scale_rows(&metric).scaled(lr))
}

/// Scaled-metric step for the classifier: `θ - lr * grad * Diag(diag(θᵀθ))`,
/// the inverse metric acting from the right on columns.
pub fn sm_update_right<S: Scalar>(theta: &Matrix<S>, grad: &Matrix<S>, lr: S) -> Matrix<S> {
    let diag = theta.diag_of_gram_cols();
    for (j, &d) in diag.iter().enumerate() {
        assert!(
            d > S::cast(METRIC_DEGENERACY_FLOOR),
            "scaled metric degenerate: column {j} has squared norm {d}"
        );
    }
    theta.sub(&grad.scale_cols(&diag).scaled(lr))
}

/// Projects `z` onto the tangent space of the unit-norm (oblique) manifold
/// at `w`: row-wise `z_i - (w_i . z_i) w_i`. Rows of `w` must be unit norm.
pub fn un_project<S: Scalar>(w: &Matrix<S>, z: &Matrix<S>) -> Matrix<S> {
    assert_eq!(w.shape(), z.shape(), "projection shape mismatch");
    for (i, norm_sq) in w.diag_of_gram().iter().enumerate() {
        assert!(
            (*norm_sq - S::one()).abs() < S::cast(1e-10),
            "tangent projection requires unit rows; row {i} has squared norm {norm_sq}"
        );
    }
    let mut out = z.clone();
    for i in 0..w.rows() {
        let w_row = w.row(i);
        let dot = w_row
            .iter()
            .zip(out.row(i))
            .map(|(&a, &b)| a * b)
            .sum::<S>();
        for (o, &wv) in out.row_mut(i).iter_mut().zip(w_row) {
            *o -= dot * wv;
        }
    }
    out
}

/// Unit-norm manifold step: tangent projection, Euclidean step, then
/// row-wise renormalization (the retraction). Rows stay unit norm. A tangent
/// step cannot reach the zero row (`|w - lr*g|^2 = 1 + lr^2 |g|^2`), so the
/// retraction never degenerates.
pub fn un_update<S: Scalar>(w: &Matrix<S>, grad: &Matrix<S>, lr: S) -> Matrix<S> {
    let tangent = un_project(w, grad);
    w.sub(&tangent.scaled(lr)).orth_rows()
}

/// Plain Euclidean step.
pub fn bsgd_update<S: Scalar>(w: &Matrix<S>, grad: &Matrix<S>, lr: S) -> Matrix<S> {
    w.sub(&grad.scaled(lr))
}

/// One whole-network update under the chosen rule. Batch-norm scale/shift
/// always get Euclidean steps; running statistics are untouched here.
pub fn apply_rule_in_place<S: Scalar>(
    params: &mut NetworkParams<S>,
    grads: &Gradients<S>,
    rule: UpdateRule,
    lr: S,
) {
    for (w, g) in params.weights.iter_mut().zip(&grads.weights) {
        *w = match rule {
            UpdateRule::Bsgd => bsgd_update(w, g, lr),
            UpdateRule::Sm => sm_update_left(w, g, lr),
            UpdateRule::Un => un_update(w, g, lr),
        };
    }
    params.theta = match rule {
        UpdateRule::Sm => sm_update_right(&params.theta, &grads.theta, lr),
        UpdateRule::Bsgd | UpdateRule::Un => bsgd_update(&params.theta, &grads.theta, lr),
    };
    if let Some(bn) = &mut params.bn {
        let bn_grads = grads
            .bn
            .as_ref()
            .expect("gradients missing batch-norm terms");
        for (layer, g) in bn.iter_mut().zip(bn_grads) {
            for (s, &gs) in layer.scale.iter_mut().zip(&g.scale) {
                *s -= lr * gs;
            }
            for (s, &gs) in layer.shift.iter_mut().zip(&g.shift) {
                *s -= lr * gs;
            }
        }
    }
}

/// Pure variant of [`apply_rule_in_place`].
pub fn apply_rule<S: Scalar>(
    cfg: &ArchConfig,
    params: &NetworkParams<S>,
    grads: &Gradients<S>,
    rule: UpdateRule,
    lr: S,
) -> NetworkParams<S> {
    params.validate(cfg);
    let mut out = params.clone();
    apply_rule_in_place(&mut out, grads, rule, lr);
    out
}

/// Runs `forward -> backward -> update -> running-stats commit` once per
/// batch in order. The training loop proper lives in the harness; this is
/// the bare step sequence used by trajectory checks.
pub fn run_updates<S: Scalar>(
    cfg: &ArchConfig,
    mut params: NetworkParams<S>,
    rule: UpdateRule,
    lr: S,
    batches: &[(Matrix<S>, Vec<u8>)],
) -> NetworkParams<S> {
    for (input, labels) in batches {
        let cache = forward(cfg, &params, input, labels, Mode::Train);
        let grads = backward(cfg, &params, &cache, labels);
        apply_rule_in_place(&mut params, &grads, rule, lr);
        params.update_bn_running(cfg, &cache);
    }
    params
}

/// Largest relative entrywise deviation between two parameter sets, tensor
/// by tensor (`|a - b|_inf / max(|b|_inf, 1e-12)`).
pub fn params_rel_diff<S: Scalar>(a: &NetworkParams<S>, b: &NetworkParams<S>) -> f64 {
    let tensor = |x: &Matrix<S>, y: &Matrix<S>| -> f64 {
        let scale = y.max_abs().as_f64().max(1e-12);
        x.max_abs_diff(y).as_f64() / scale
    };
    let mut worst: f64 = 0.0;
    for (x, y) in a.weights.iter().zip(&b.weights) {
        worst = worst.max(tensor(x, y));
    }
    worst = worst.max(tensor(&a.theta, &b.theta));
    if let (Some(ba), Some(bb)) = (&a.bn, &b.bn) {
        for (la, lb) in ba.iter().zip(bb) {
            for (va, vb) in [(&la.scale, &lb.scale), (&la.shift, &lb.shift)] {
                let scale = vb
                    .iter()
                    .fold(0.0f64, |m, &v| m.max(v.abs().as_f64()))
                    .max(1e-12);
                let diff = va
                    .iter()
                    .zip(vb)
                    .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs().as_f64()));
                worst = worst.max(diff / scale);
            }
        }
    }
    worst
}

/// Learning-rate protocol state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    ExpDecay,
    BoldDriver,
}

impl ScheduleKind {
    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::ExpDecay => "exp",
            ScheduleKind::BoldDriver => "bold",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(ScheduleKind::ExpDecay),
            "bold" => Ok(ScheduleKind::BoldDriver),
            other => Err(format!("unknown schedule '{other}' (expected exp|bold)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub decay: f64,
    pub boost: f64,
    pub cut: f64,
    current_lr: f64,
}

impl LrSchedule {
    /// Exponential decay with the standard 0.95 per-epoch factor.
    pub fn exp_decay(base_lr: f64) -> Self {
        assert!(base_lr > 0.0, "base learning rate must be positive");
        LrSchedule {
            kind: ScheduleKind::ExpDecay,
            base_lr,
            decay: 0.95,
            boost: 1.05,
            cut: 0.5,
            current_lr: base_lr,
        }
    }

    /// Bold driver with the classical 1.05 boost / 0.5 cut factors.
    pub fn bold_driver(base_lr: f64, boost: f64, cut: f64) -> Self {
        assert!(base_lr > 0.0, "base learning rate must be positive");
        assert!(
            boost > 0.0 && cut > 0.0,
            "bold-driver factors must be positive"
        );
        LrSchedule {
            kind: ScheduleKind::BoldDriver,
            base_lr,
            decay: 0.95,
            boost,
            cut,
            current_lr: base_lr,
        }
    }

    pub fn new(kind: ScheduleKind, base_lr: f64, boost: f64, cut: f64) -> Self {
        match kind {
            ScheduleKind::ExpDecay => LrSchedule::exp_decay(base_lr),
            ScheduleKind::BoldDriver => LrSchedule::bold_driver(base_lr, boost, cut),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.current_lr
    }

    /// One per-epoch decay step: `lr <- lr * decay`.
    pub fn exp_decay_step(&mut self) {
        self.current_lr *= self.decay;
        debug_assert!(self.current_lr > 0.0);
    }

    /// Bold-driver reaction to the epoch's validation error: improvement
    /// boosts the rate, worsening (or stagnation, conservatively) cuts it.
    pub fn bold_driver_step(&mut self, prev_val_err: f64, curr_val_err: f64) {
        assert!(prev_val_err.is_finite() && curr_val_err.is_finite());
        if curr_val_err < prev_val_err {
            self.current_lr *= self.boost;
        } else {
            self.current_lr *= self.cut;
        }
        debug_assert!(self.current_lr > 0.0);
    }
}
