//! The collaborative head: represents partition-2 features as weighted
//! combinations of partition-1 features through a reconstruction matrix `A`
//! and per-sample imbalance weights `W`, with a differentiable cost
//! `‖(Y−XA)W‖² + λ‖A‖² + γ‖W‖²` whose `X`-gradient is the error signal
//! back-propagated into the feature network.

use crate::error::{Error, Result};
use crate::linalg::{
    ridge_gram_inverse_apply, ridge_gram_inverse_apply_fast, sq_norm, Mat,
};

/// How the residual matrix is weighted in the cost.
///
/// `MixedVector` is the printed form: `(Y−XA)·W` is a single d×1 vector, so
/// per-sample residuals are linearly mixed before the norm. `PerColumn`
/// weights each residual column separately as `‖(Y−XA)·diag(W)‖_F²`; it is
/// provided behind this switch but is not the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightingMode {
    #[default]
    MixedVector,
    PerColumn,
}

/// Parameters of the collaborative head.
#[derive(Debug, Clone)]
pub struct CollabState {
    /// Reconstruction matrix, m×n.
    pub a: Mat,
    /// Per-p2-sample imbalance weights, length n, positive.
    pub w: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
    pub weighting: WeightingMode,
}

impl CollabState {
    pub fn new(a: Mat, w: Vec<f64>, lambda: f64, gamma: f64) -> Result<Self> {
        if w.len() != a.cols() {
            return Err(Error::dim(
                "CollabState::new",
                format!("w has {} entries for {} columns of A", w.len(), a.cols()),
            ));
        }
        if !(lambda > 0.0) {
            return Err(Error::param("CollabState::new", format!("lambda = {lambda}")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::param("CollabState::new", format!("gamma = {gamma}")));
        }
        if w.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::param("CollabState::new", "weights must be positive"));
        }
        Ok(CollabState {
            a,
            w,
            lambda,
            gamma,
            weighting: WeightingMode::MixedVector,
        })
    }
}

/// Feature matrices of the two training partitions.
#[derive(Debug, Clone)]
pub struct PartitionPair {
    /// d×m features of partition p1 (the "dictionary" side).
    pub x: Mat,
    /// d×n features of partition p2 (the reconstructed side).
    pub y: Mat,
    pub labels_p1: Vec<usize>,
    pub labels_p2: Vec<usize>,
}

impl PartitionPair {
    pub fn new(x: Mat, y: Mat, labels_p1: Vec<usize>, labels_p2: Vec<usize>) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::dim(
                "PartitionPair::new",
                format!("feature dims differ: {} vs {}", x.rows(), y.rows()),
            ));
        }
        if labels_p1.len() != x.cols() || labels_p2.len() != y.cols() {
            return Err(Error::dim("PartitionPair::new", "label counts".to_string()));
        }
        let classes = labels_p1
            .iter()
            .chain(&labels_p2)
            .copied()
            .max()
            .map_or(0, |m| m + 1);
        for class in 0..classes {
            if !labels_p1.contains(&class) || !labels_p2.contains(&class) {
                return Err(Error::param(
                    "PartitionPair::new",
                    format!("class {class} is not represented in both partitions"),
                ));
            }
        }
        Ok(PartitionPair {
            x,
            y,
            labels_p1,
            labels_p2,
        })
    }
}

fn check_dims(op: &'static str, pp: &PartitionPair, st: &CollabState) -> Result<()> {
    if st.a.rows() != pp.x.cols() || st.a.cols() != pp.y.cols() {
        return Err(Error::dim(
            op,
            format!(
                "A is {}x{}, want {}x{}",
                st.a.rows(),
                st.a.cols(),
                pp.x.cols(),
                pp.y.cols()
            ),
        ));
    }
    if st.w.len() != pp.y.cols() {
        return Err(Error::dim(
            op,
            format!("W has {} entries, want {}", st.w.len(), pp.y.cols()),
        ));
    }
    Ok(())
}

fn residual(pp: &PartitionPair, st: &CollabState) -> Mat {
    pp.y.sub(&pp.x.mul(&st.a))
}

/// `‖(Y−XA)W‖² + λ‖A‖² + γ‖W‖²`.
pub fn collab_cost(pp: &PartitionPair, st: &CollabState) -> Result<f64> {
    check_dims("collab_cost", pp, st)?;
    let r = residual(pp, st);
    let data_term = match st.weighting {
        WeightingMode::MixedVector => sq_norm(&r.mul_vec(&st.w)),
        WeightingMode::PerColumn => (0..r.cols())
            .map(|j| st.w[j] * st.w[j] * sq_norm(r.col(j)))
            .sum(),
    };
    Ok(data_term + st.lambda * st.a.frob_norm().powi(2) + st.gamma * sq_norm(&st.w))
}

/// Initial imbalance weights: `wⱼ = n_{c(j)} / mean_class_size`, so members
/// of larger classes carry proportionally larger penalties.
pub fn init_weights(class_sizes: &[usize], labels: &[usize]) -> Result<Vec<f64>> {
    if class_sizes.is_empty() {
        return Err(Error::param("init_weights", "no classes"));
    }
    if class_sizes.iter().any(|&s| s == 0) {
        return Err(Error::param("init_weights", "empty class"));
    }
    let mean = class_sizes.iter().sum::<usize>() as f64 / class_sizes.len() as f64;
    labels
        .iter()
        .map(|&l| {
            class_sizes
                .get(l)
                .map(|&s| s as f64 / mean)
                .ok_or_else(|| Error::param("init_weights", format!("label {l} out of range")))
        })
        .collect()
}

/// Number of p1 columns beyond which [`init_a`] switches to the SVD-based
/// ridge path.
pub const FAST_PATH_THRESHOLD: usize = 512;

/// Closed-form initialization `A = [XᵀX·(WᵀW) + λI]⁻¹ XᵀY W Wᵀ`. `WᵀW` is a
/// scalar, passed to the ridge solver as its scale; the SVD path is used
/// once m exceeds `threshold`.
pub fn init_a_with_threshold(
    pp: &PartitionPair,
    w: &[f64],
    lambda: f64,
    threshold: usize,
) -> Result<Mat> {
    if w.len() != pp.y.cols() {
        return Err(Error::dim(
            "init_a",
            format!("W has {} entries, want {}", w.len(), pp.y.cols()),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::param("init_a", format!("lambda = {lambda}")));
    }
    let s = sq_norm(w);
    if !(s > 0.0) {
        return Err(Error::param("init_a", "WᵀW must be positive"));
    }
    let yw = pp.y.mul_vec(w);
    let rhs = {
        let outer = Mat::outer(&yw, w); // (Y·W)·Wᵀ, d×n
        pp.x.tr_mul(&outer) // m×n
    };
    if pp.x.cols() > threshold {
        ridge_gram_inverse_apply_fast(&pp.x, s, lambda, &rhs)
    } else {
        ridge_gram_inverse_apply(&pp.x, s, lambda, &rhs)
    }
}

pub fn init_a(pp: &PartitionPair, w: &[f64], lambda: f64) -> Result<Mat> {
    init_a_with_threshold(pp, w, lambda, FAST_PATH_THRESHOLD)
}

/// Gradient of the cost w.r.t. `W` (halved): `(Y−XA)ᵀ(Y−XA)W + γW`.
///
/// The sign of the data term is the one validated by finite differences;
/// descending it decreases the cost.
pub fn grad_w(pp: &PartitionPair, st: &CollabState) -> Result<Vec<f64>> {
    check_dims("grad_w", pp, st)?;
    let r = residual(pp, st);
    match st.weighting {
        WeightingMode::MixedVector => {
            let rw = r.mul_vec(&st.w);
            let mut g = r.tr_mul_vec(&rw);
            for (gi, wi) in g.iter_mut().zip(&st.w) {
                *gi += st.gamma * wi;
            }
            Ok(g)
        }
        WeightingMode::PerColumn => Ok((0..r.cols())
            .map(|j| st.w[j] * sq_norm(r.col(j)) + st.gamma * st.w[j])
            .collect()),
    }
}

/// Gradient of the cost w.r.t. `A` (halved): `−Xᵀ(Y−XA)WWᵀ + λA`.
pub fn grad_a(pp: &PartitionPair, st: &CollabState) -> Result<Mat> {
    check_dims("grad_a", pp, st)?;
    let r = residual(pp, st);
    let mut g = st.a.scale(st.lambda);
    match st.weighting {
        WeightingMode::MixedVector => {
            let rw = r.mul_vec(&st.w);
            let xtrw = pp.x.tr_mul_vec(&rw); // m
            g.scaled_add_assign(-1.0, &Mat::outer(&xtrw, &st.w));
        }
        WeightingMode::PerColumn => {
            let mut rscaled = r;
            for j in 0..rscaled.cols() {
                let w2 = st.w[j] * st.w[j];
                for v in rscaled.col_mut(j) {
                    *v *= w2;
                }
            }
            g.scaled_add_assign(-1.0, &pp.x.tr_mul(&rscaled));
        }
    }
    Ok(g)
}

/// Gradient of the cost w.r.t. `X` (halved): `−(Y−XA)WWᵀAᵀ`. This is the
/// error signal back-propagated into the feature network for p1 samples.
pub fn grad_x(pp: &PartitionPair, st: &CollabState) -> Result<Mat> {
    check_dims("grad_x", pp, st)?;
    let r = residual(pp, st);
    match st.weighting {
        WeightingMode::MixedVector => {
            let rw = r.mul_vec(&st.w);
            let aw = st.a.mul_vec(&st.w);
            Ok(Mat::outer(&rw, &aw).scale(-1.0))
        }
        WeightingMode::PerColumn => {
            let mut rscaled = r;
            for j in 0..rscaled.cols() {
                let w2 = st.w[j] * st.w[j];
                for v in rscaled.col_mut(j) {
                    *v *= w2;
                }
            }
            Ok(rscaled.mul(&st.a.transpose()).scale(-1.0))
        }
    }
}

/// Gradient of the cost w.r.t. `Y` (halved): `(Y−XA)WWᵀ`. Symmetric
/// counterpart of the X-gradient for optional p2-side flow; off by default
/// in training.
pub fn grad_y(pp: &PartitionPair, st: &CollabState) -> Result<Mat> {
    check_dims("grad_y", pp, st)?;
    let r = residual(pp, st);
    match st.weighting {
        WeightingMode::MixedVector => {
            let rw = r.mul_vec(&st.w);
            Ok(Mat::outer(&rw, &st.w))
        }
        WeightingMode::PerColumn => {
            let mut rscaled = r;
            for j in 0..rscaled.cols() {
                let w2 = st.w[j] * st.w[j];
                for v in rscaled.col_mut(j) {
                    *v *= w2;
                }
            }
            Ok(rscaled)
        }
    }
}

/// Smallest admissible weight after an update step.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Default step sizes for the coordinate updates.
pub const DEFAULT_ETA: f64 = 1e-3;
const MAX_HALVINGS: usize = 20;
const ARMIJO_C: f64 = 1e-4;

/// One plain coordinate step: `W ← W − η_W·grad_W`, `A ← A − η_A·grad_A`,
/// with weights clamped to stay positive.
pub fn update_step(
    st: &mut CollabState,
    gw: &[f64],
    ga: &Mat,
    eta_w: f64,
    eta_a: f64,
) -> Result<()> {
    if !(eta_w > 0.0) || !(eta_a > 0.0) {
        return Err(Error::param("update_step", "step sizes must be > 0"));
    }
    if gw.iter().any(|g| !g.is_finite()) || !ga.is_finite() {
        return Err(Error::NonFinite("update_step gradients"));
    }
    if gw.len() != st.w.len() || ga.rows() != st.a.rows() || ga.cols() != st.a.cols() {
        return Err(Error::dim("update_step", "gradient shapes".to_string()));
    }
    for (w, g) in st.w.iter_mut().zip(gw) {
        *w = (*w - eta_w * g).max(WEIGHT_FLOOR);
    }
    st.a.scaled_add_assign(-eta_a, ga);
    Ok(())
}

/// Outcome of one backtracking coordinate-descent step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub cost_before: f64,
    pub cost_after: f64,
}

fn backtrack_w(pp: &PartitionPair, st: &mut CollabState, eta0: f64) -> Result<f64> {
    let cost0 = collab_cost(pp, st)?;
    let g = grad_w(pp, st)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("grad_w"));
    }
    let gnorm2 = sq_norm(&g);
    let saved = st.w.clone();
    let mut eta = eta0;
    for _ in 0..=MAX_HALVINGS {
        for ((w, s), gi) in st.w.iter_mut().zip(&saved).zip(&g) {
            *w = (s - eta * gi).max(WEIGHT_FLOOR);
        }
        let cost = collab_cost(pp, st)?;
        if cost <= cost0 - ARMIJO_C * eta * gnorm2 {
            return Ok(cost);
        }
        eta *= 0.5;
    }
    st.w = saved;
    Ok(cost0)
}

fn backtrack_a(pp: &PartitionPair, st: &mut CollabState, eta0: f64) -> Result<f64> {
    let cost0 = collab_cost(pp, st)?;
    let g = grad_a(pp, st)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("grad_a"));
    }
    let gnorm2 = g.frob_norm().powi(2);
    let saved = st.a.clone();
    let mut eta = eta0;
    for _ in 0..=MAX_HALVINGS {
        st.a = saved.clone();
        st.a.scaled_add_assign(-eta, &g);
        let cost = collab_cost(pp, st)?;
        if cost <= cost0 - ARMIJO_C * eta * gnorm2 {
            return Ok(cost);
        }
        eta *= 0.5;
    }
    st.a = saved;
    Ok(cost0)
}

/// Alternating W-then-A update with backtracking halving (Armijo test, at
/// most 20 halvings per coordinate). The cost never increases; a coordinate
/// whose line search fails is left unchanged.
pub fn descent_step(pp: &PartitionPair, st: &mut CollabState, eta_w: f64, eta_a: f64) -> Result<StepOutcome> {
    check_dims("descent_step", pp, st)?;
    let cost_before = collab_cost(pp, st)?;
    backtrack_w(pp, st, eta_w)?;
    let cost_after = backtrack_a(pp, st, eta_a)?;
    Ok(StepOutcome {
        cost_before,
        cost_after,
    })
}
