//! Probabilistic CRC: the CRC objective plus a class-consistency penalty
//! `(γ/K)·Σₖ‖Xα − Xₖαₖ‖²`, minimized in closed form and classified by the
//! class with the smallest consistency residual (the maximizer of the
//! Gaussian-exponential likelihood).

use crate::crc::{crc_cost, Dictionary};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};

#[derive(Debug, Clone)]
pub struct ProCrcModel {
    pub dict: Dictionary,
    pub lambda: f64,
    pub gamma: f64,
}

impl ProCrcModel {
    pub fn new(dict: Dictionary, lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::param("ProCrcModel::new", format!("lambda = {lambda}")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::param("ProCrcModel::new", format!("gamma = {gamma}")));
        }
        Ok(ProCrcModel { dict, lambda, gamma })
    }
}

/// `X·Eₖ·α`: the dictionary applied to the class-k block of the code.
fn class_reconstruction(dict: &Dictionary, alpha: &[f64], class: usize) -> Vec<f64> {
    let x = dict.features();
    let mut out = vec![0.0; x.rows()];
    for c in dict.class_ranges()[class].clone() {
        let coeff = alpha[c];
        if coeff == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(x.col(c)) {
            *o += coeff * v;
        }
    }
    out
}

/// `‖y−Xα‖² + λ‖α‖² + (γ/K)·Σₖ‖Xα − Xₖαₖ‖²`.
pub fn procrc_cost(model: &ProCrcModel, y: &[f64], alpha: &[f64]) -> Result<f64> {
    let base = crc_cost(&model.dict, y, alpha, model.lambda)?;
    if model.gamma == 0.0 {
        return Ok(base);
    }
    let xa = model.dict.features().mul_vec(alpha);
    let k = model.dict.num_classes();
    let mut penalty = 0.0;
    for class in 0..k {
        let xk = class_reconstruction(&model.dict, alpha, class);
        penalty += xa
            .iter()
            .zip(&xk)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(base + model.gamma / k as f64 * penalty)
}

/// The SPD system matrix `XᵀX + λI + (γ/K)·Σₖ(I−Eₖ)XᵀX(I−Eₖ)`. The sum over
/// class selectors collapses entrywise: entry (a,b) of the penalty is
/// `G_ab · #{k : a ∉ k ∧ b ∉ k}`, which is K−1 when a and b share a class
/// and K−2 otherwise.
fn system_matrix(model: &ProCrcModel) -> Mat {
    let x = model.dict.features();
    let labels = model.dict.labels();
    let k = model.dict.num_classes();
    let mut m = x.tr_mul(x);
    let n = m.rows();
    let ratio = model.gamma / k as f64;
    for b in 0..n {
        for a in 0..n {
            let cnt = if labels[a] == labels[b] { k - 1 } else { k.saturating_sub(2) };
            let v = m.get(a, b) * (1.0 + ratio * cnt as f64);
            m.set(a, b, v);
        }
    }
    for i in 0..n {
        m.set(i, i, m.get(i, i) + model.lambda);
    }
    m
}

/// Closed-form minimizer of [`procrc_cost`]:
/// `α̂ = [XᵀX + λI + (γ/K)Σₖ(I−Eₖ)XᵀX(I−Eₖ)]⁻¹ Xᵀy`.
pub fn procrc_encode(model: &ProCrcModel, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != model.dict.feature_dim() {
        return Err(Error::dim(
            "procrc_encode",
            format!("y len {} (want {})", y.len(), model.dict.feature_dim()),
        ));
    }
    let chol = Cholesky::new(&system_matrix(model))?;
    Ok(chol.solve_vec(&model.dict.features().tr_mul_vec(y)))
}

/// Batched [`procrc_encode`] sharing one factorization.
pub fn procrc_encode_batch(model: &ProCrcModel, ys: &Mat) -> Result<Mat> {
    if ys.rows() != model.dict.feature_dim() {
        return Err(Error::dim(
            "procrc_encode_batch",
            format!("ys rows {} (want {})", ys.rows(), model.dict.feature_dim()),
        ));
    }
    let chol = Cholesky::new(&system_matrix(model))?;
    Ok(chol.solve_mat(&model.dict.features().tr_mul(ys)))
}

fn classify_code(model: &ProCrcModel, alpha: &[f64]) -> usize {
    let xa = model.dict.features().mul_vec(alpha);
    let mut best = (f64::INFINITY, 0usize);
    for class in 0..model.dict.num_classes() {
        let xk = class_reconstruction(&model.dict, alpha, class);
        let resid: f64 = xa
            .iter()
            .zip(&xk)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if resid < best.0 {
            best = (resid, class);
        }
    }
    best.1
}

/// `argminₖ ‖Xα̂ − Xₖα̂ₖ‖²`; ties go to the lowest class id.
pub fn procrc_classify(model: &ProCrcModel, y: &[f64]) -> Result<usize> {
    let alpha = procrc_encode(model, y)?;
    Ok(classify_code(model, &alpha))
}

pub fn procrc_classify_batch(model: &ProCrcModel, ys: &Mat) -> Result<Vec<usize>> {
    let codes = procrc_encode_batch(model, ys)?;
    Ok((0..ys.cols())
        .map(|j| classify_code(model, codes.col(j)))
        .collect())
}
