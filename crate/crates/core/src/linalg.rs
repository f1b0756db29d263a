//! Dense matrix primitives: column-major `Mat`, Cholesky solves, thin SVD,
//! and the ridge-Gram inverse applied directly or through the low-rank
//! identity `(s·XᵀX + λI)⁻¹ = V·diag(1/(s·σᵢ²+λ))·Vᵀ + (1/λ)(I − VVᵀ)`.

use crate::error::{Error, Result};

/// Dense real matrix. Entries are stored column-major: element `(r, c)`
/// lives at `data[r + c * rows]`, so a column is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from column-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        assert!(rows >= 1 && cols >= 1);
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    /// Build from row slices (test and example friendly).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nr = rows.len();
        let nc = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == nc), "ragged rows");
        Mat::from_fn(nr, nc, |r, c| rows[r][c])
    }

    pub fn from_col(col: &[f64]) -> Self {
        Mat::from_vec(col.len(), 1, col.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + c * self.rows]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + c * self.rows] = v;
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        let rows = self.rows;
        &mut self.data[c * rows..(c + 1) * rows]
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        self.col_mut(c).copy_from_slice(v);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for c in 0..self.cols {
            for r in 0..self.rows {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// `self * other`.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "mul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let out_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other.get(k, j);
                if b == 0.0 {
                    continue;
                }
                let a_col = &self.data[k * self.rows..(k + 1) * self.rows];
                for (o, a) in out_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn tr_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "tr_mul: inner dims");
        let mut out = Mat::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            let b_col = other.col(j);
            for i in 0..self.cols {
                out.set(i, j, dot(self.col(i), b_col));
            }
        }
        out
    }

    /// `self * v` for a vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec: inner dims");
        let mut out = vec![0.0; self.rows];
        for k in 0..self.cols {
            let x = v[k];
            if x == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.col(k)) {
                *o += a * x;
            }
        }
        out
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec: inner dims");
        (0..self.cols).map(|c| dot(self.col(c), v)).collect()
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat::from_vec(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, k: f64) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|v| v * k).collect())
    }

    /// `self += k * other`.
    pub fn scaled_add_assign(&mut self, k: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Outer product `u * vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Mat {
        let mut m = Mat::zeros(u.len(), v.len());
        for (c, &vv) in v.iter().enumerate() {
            for (r, &uu) in u.iter().enumerate() {
                m.set(r, c, uu * vv);
            }
        }
        m
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, 1e-300)`.
pub fn rel_frob(a: &Mat, b: &Mat) -> f64 {
    a.sub(b).frob_norm() / b.frob_norm().max(1e-300)
}

// ── Cholesky factorization for SPD systems ──────────────────────────

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    /// Factor `a = L·Lᵀ`. Fails if a pivot is not strictly positive.
    pub fn new(a: &Mat) -> Result<Self> {
        assert_eq!(a.rows(), a.cols(), "cholesky: square matrix required");
        let n = a.rows();
        let mut l = a.clone();
        for j in 0..n {
            // subtract contributions of previous columns (left-looking)
            for k in 0..j {
                let ljk = l.get(j, k);
                if ljk == 0.0 {
                    continue;
                }
                let (head, tail) = l.data.split_at_mut(j * n);
                let col_k = &head[k * n + j..(k + 1) * n];
                let col_j = &mut tail[j..n];
                for (cj, ck) in col_j.iter_mut().zip(col_k) {
                    *cj -= ljk * ck;
                }
            }
            let pivot = l.get(j, j);
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot });
            }
            let s = pivot.sqrt();
            l.set(j, j, s);
            for i in j + 1..n {
                let v = l.get(i, j) / s;
                l.set(i, j, v);
            }
        }
        Ok(Cholesky { l })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        // forward: L y = b
        for k in 0..n {
            y[k] /= self.l.get(k, k);
            let yk = y[k];
            let col = self.l.col(k);
            for i in k + 1..n {
                y[i] -= yk * col[i];
            }
        }
        // backward: Lᵀ x = y
        for k in (0..n).rev() {
            let col = self.l.col(k);
            let mut s = y[k];
            for i in k + 1..n {
                s -= col[i] * y[i];
            }
            y[k] = s / col[k];
        }
        y
    }

    pub fn solve_mat(&self, b: &Mat) -> Mat {
        assert_eq!(b.rows(), self.l.rows(), "solve_mat: rhs rows");
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            out.set_col(j, &self.solve_vec(b.col(j)));
        }
        out
    }
}

// ── Thin SVD ────────────────────────────────────────────────────────

/// Thin singular value decomposition `M = U · diag(S) · Vᵀ` with
/// `r = min(rows, cols)` factors. Singular values are non-negative and
/// sorted descending; `U` and `V` have orthonormal columns even when the
/// input is rank deficient.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl ThinSvd {
    /// `U · diag(S) · Vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            for v in us.col_mut(j) {
                *v *= s;
            }
        }
        us.mul(&self.v.transpose())
    }
}

const JACOBI_MAX_SWEEPS: usize = 64;
const JACOBI_TOL: f64 = 1e-13;

/// Thin SVD of a general matrix. Tall inputs are reduced by Householder QR
/// first; the square factor is then diagonalized by one-sided Jacobi
/// rotations, which keeps the computed singular vectors orthonormal to
/// machine precision at any rank.
pub fn thin_svd(m: &Mat) -> Result<ThinSvd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("thin_svd input"));
    }
    // scale to unit max magnitude so squared column norms cannot overflow
    let scale = m.max_abs();
    let work = if scale > 0.0 { m.scale(1.0 / scale) } else { m.clone() };
    let mut svd = if work.rows() >= work.cols() {
        let (q, r) = householder_qr(&work);
        let (ur, s, vr) = jacobi_svd_square(&r)?;
        ThinSvd {
            u: q.mul(&ur),
            s,
            v: vr,
        }
    } else {
        let t = work.transpose();
        let (q, r) = householder_qr(&t);
        let (ur, s, vr) = jacobi_svd_square(&r)?;
        ThinSvd {
            u: vr,
            s,
            v: q.mul(&ur),
        }
    };
    if scale > 0.0 {
        for s in svd.s.iter_mut() {
            *s *= scale;
        }
    }
    Ok(svd)
}

/// Thin Householder QR of a tall matrix (rows ≥ cols): `a = Q·R` with
/// orthonormal `Q` (rows×cols) and upper-triangular `R` (cols×cols).
fn householder_qr(a: &Mat) -> (Mat, Mat) {
    let p = a.rows();
    let q = a.cols();
    assert!(p >= q);
    let mut w = a.clone();
    // v0[k] holds the first component of the k-th Householder vector; the
    // tail lives below the diagonal of column k in `w`.
    let mut v0 = vec![0.0f64; q];
    let mut beta = vec![0.0f64; q];

    for k in 0..q {
        let norm = {
            let col = &w.col(k)[k..];
            sq_norm(col).sqrt()
        };
        if norm == 0.0 {
            beta[k] = 0.0;
            w.set(k, k, 0.0);
            continue;
        }
        let akk = w.get(k, k);
        let alpha = if akk >= 0.0 { -norm } else { norm };
        let vk0 = akk - alpha;
        let vnorm_sq = {
            let col = &w.col(k)[k + 1..];
            vk0 * vk0 + sq_norm(col)
        };
        v0[k] = vk0;
        beta[k] = if vnorm_sq > 0.0 { 2.0 / vnorm_sq } else { 0.0 };
        w.set(k, k, alpha);

        // apply reflector to trailing columns
        for j in k + 1..q {
            let (before, after) = w.data.split_at_mut(j * p);
            let vcol = &before[k * p + k + 1..(k + 1) * p];
            let col_j = &mut after[k..p];
            let mut proj = vk0 * col_j[0];
            for (v, c) in vcol.iter().zip(&col_j[1..]) {
                proj += v * c;
            }
            proj *= beta[k];
            col_j[0] -= proj * vk0;
            for (c, v) in col_j[1..].iter_mut().zip(vcol) {
                *c -= proj * v;
            }
        }
    }

    let mut r = Mat::zeros(q, q);
    for j in 0..q {
        for i in 0..=j {
            r.set(i, j, w.get(i, j));
        }
    }

    // accumulate Q = H_0 · … · H_{q-1} applied to the first q identity columns
    let mut qm = Mat::zeros(p, q);
    for j in 0..q {
        qm.set(j, j, 1.0);
    }
    for k in (0..q).rev() {
        if beta[k] == 0.0 {
            continue;
        }
        for j in 0..q {
            let vtail: &[f64] = &w.col(k)[k + 1..];
            let col_j = &mut qm.col_mut(j)[k..];
            let mut proj = v0[k] * col_j[0];
            for (v, c) in vtail.iter().zip(&col_j[1..]) {
                proj += v * c;
            }
            proj *= beta[k];
            col_j[0] -= proj * v0[k];
            for (c, v) in col_j[1..].iter_mut().zip(vtail) {
                *c -= proj * v;
            }
        }
    }
    (qm, r)
}

/// One-sided Jacobi SVD of a square matrix: returns `(U, S desc, V)`.
fn jacobi_svd_square(r: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let q = r.rows();
    assert_eq!(q, r.cols());
    let mut b = r.clone();
    let mut v = Mat::identity(q);

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q.saturating_sub(1) {
            for j in i + 1..q {
                let (alpha, betaj, gamma) = {
                    let ci = b.col(i);
                    let cj = b.col(j);
                    (sq_norm(ci), sq_norm(cj), dot(ci, cj))
                };
                if alpha == 0.0 || betaj == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * betaj).sqrt() {
                    continue;
                }
                let zeta = (betaj - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut b, i, j, c, s);
                rotate_cols(&mut v, i, j, c, s);
                rotated = true;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut sigma: Vec<f64> = (0..q).map(|j| sq_norm(b.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &c| sigma[c].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&c)));

    let mut u = Mat::zeros(q, q);
    let mut v_sorted = Mat::zeros(q, q);
    let mut s_sorted = vec![0.0; q];
    let sigma_max = order.first().map_or(0.0, |&i| sigma[i]);
    let zero_cut = sigma_max * 1e-300;

    let mut completion_slots = Vec::new();
    for (pos, &idx) in order.iter().enumerate() {
        s_sorted[pos] = sigma[idx];
        v_sorted.set_col(pos, v.col(idx));
        if sigma[idx] > zero_cut && sigma[idx] >= f64::MIN_POSITIVE {
            let inv = 1.0 / sigma[idx];
            let col: Vec<f64> = b.col(idx).iter().map(|x| x * inv).collect();
            u.set_col(pos, &col);
        } else {
            s_sorted[pos] = 0.0;
            completion_slots.push(pos);
        }
    }
    sigma.clear();

    // fill rank-deficient slots with an orthonormal completion
    for &slot in &completion_slots {
        let mut filled = false;
        for cand in 0..q {
            let mut col = vec![0.0; q];
            col[cand] = 1.0;
            // two rounds of modified Gram-Schmidt against already-filled columns
            for _ in 0..2 {
                for c in 0..q {
                    if c == slot || (completion_slots.contains(&c) && c > slot) {
                        continue;
                    }
                    let proj = dot(&col, u.col(c));
                    for (x, uc) in col.iter_mut().zip(u.col(c)) {
                        *x -= proj * uc;
                    }
                }
            }
            let n = sq_norm(&col).sqrt();
            if n > 0.5 {
                for x in col.iter_mut() {
                    *x /= n;
                }
                u.set_col(slot, &col);
                filled = true;
                break;
            }
        }
        debug_assert!(filled, "orthonormal completion must succeed in q candidates");
    }

    Ok((u, s_sorted, v_sorted))
}

fn rotate_cols(m: &mut Mat, i: usize, j: usize, c: f64, s: f64) {
    debug_assert!(i < j);
    let rows = m.rows();
    let (head, tail) = m.data.split_at_mut(j * rows);
    let col_i = &mut head[i * rows..(i + 1) * rows];
    let col_j = &mut tail[..rows];
    for (a, b) in col_i.iter_mut().zip(col_j.iter_mut()) {
        let ai = *a;
        let bj = *b;
        *a = c * ai - s * bj;
        *b = s * ai + c * bj;
    }
}

// ── Ridge-Gram inverse application ──────────────────────────────────

fn validate_ridge_args(op: &'static str, x: &Mat, s: f64, lambda: f64, b: &Mat) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param(op, format!("lambda must be > 0, got {lambda}")));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::param(op, format!("scale must be > 0, got {s}")));
    }
    if !x.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite(op));
    }
    if b.rows() != x.cols() {
        return Err(Error::dim(
            op,
            format!("rhs has {} rows, expected {}", b.rows(), x.cols()),
        ));
    }
    Ok(())
}

/// Solve `(s·XᵀX + λI)·R = B` by forming the m×m Gram matrix and using a
/// dense Cholesky factorization.
pub fn ridge_gram_inverse_apply(x: &Mat, s: f64, lambda: f64, b: &Mat) -> Result<Mat> {
    validate_ridge_args("ridge_gram_inverse_apply", x, s, lambda, b)?;
    let m = x.cols();
    let mut gram = x.tr_mul(x);
    for v in gram.data.iter_mut() {
        *v *= s;
    }
    for i in 0..m {
        gram.set(i, i, gram.get(i, i) + lambda);
    }
    let chol = Cholesky::new(&gram)?;
    Ok(chol.solve_mat(b))
}

/// Same contract as [`ridge_gram_inverse_apply`], computed from the thin SVD
/// of `X` so the only inversion is the r×r diagonal `diag(s·σᵢ²+λ)` with
/// `r ≤ min(d, m)`; no m×m matrix is ever formed. Rank-deficient inputs are
/// handled because the rewritten form
/// `(1/λ)B + V·(diag(1/(s·σᵢ²+λ)) − 1/λ)·VᵀB` sends zero singular values to
/// a zero coefficient rather than dividing by them.
pub fn ridge_gram_inverse_apply_fast(x: &Mat, s: f64, lambda: f64, b: &Mat) -> Result<Mat> {
    validate_ridge_args("ridge_gram_inverse_apply_fast", x, s, lambda, b)?;
    let svd = thin_svd(x)?;
    let mut coeffs = svd.v.tr_mul(b); // r×k
    for (i, &sig) in svd.s.iter().enumerate() {
        let w = 1.0 / (s * sig * sig + lambda) - 1.0 / lambda;
        for j in 0..coeffs.cols() {
            let v = coeffs.get(i, j) * w;
            coeffs.set(i, j, v);
        }
    }
    let mut out = b.scale(1.0 / lambda);
    let correction = svd.v.mul(&coeffs);
    out.scaled_add_assign(1.0, &correction);
    Ok(out)
}
