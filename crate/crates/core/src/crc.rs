//! Collaborative representation classifier: ridge-regress a test feature
//! onto the whole training dictionary, then pick the class whose columns
//! explain it with the smallest normalized residual.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{ridge_gram_inverse_apply, sq_norm, Mat};

/// Labeled training features with contiguous per-class column ranges.
#[derive(Debug, Clone)]
pub struct Dictionary {
    x: Mat,
    labels: Vec<usize>,
    class_ranges: Vec<Range<usize>>,
}

impl Dictionary {
    /// Build from features whose columns are already grouped by class in
    /// ascending class order.
    pub fn new(x: Mat, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != x.cols() {
            return Err(Error::dim(
                "Dictionary::new",
                format!("{} labels for {} columns", labels.len(), x.cols()),
            ));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("Dictionary::new"));
        }
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut class_ranges = Vec::with_capacity(num_classes);
        let mut cursor = 0usize;
        for class in 0..num_classes {
            let start = cursor;
            while cursor < labels.len() && labels[cursor] == class {
                cursor += 1;
            }
            if cursor == start {
                return Err(Error::param(
                    "Dictionary::new",
                    format!("class {class} has no columns"),
                ));
            }
            class_ranges.push(start..cursor);
        }
        if cursor != labels.len() {
            return Err(Error::param(
                "Dictionary::new",
                "labels are not grouped into contiguous ascending class blocks".to_string(),
            ));
        }
        Ok(Dictionary {
            x,
            labels,
            class_ranges,
        })
    }

    /// Build from arbitrarily ordered labeled features by stably regrouping
    /// the columns per class.
    pub fn from_labeled(features: &Mat, labels: &[usize]) -> Result<Self> {
        if labels.len() != features.cols() {
            return Err(Error::dim(
                "Dictionary::from_labeled",
                format!("{} labels for {} columns", labels.len(), features.cols()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::param("Dictionary::from_labeled", "no samples"));
        }
        let num_classes = labels.iter().copied().max().unwrap() + 1;
        let mut order: Vec<usize> = Vec::with_capacity(labels.len());
        for class in 0..num_classes {
            order.extend(
                labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == class)
                    .map(|(i, _)| i),
            );
        }
        let mut x = Mat::zeros(features.rows(), features.cols());
        let mut sorted_labels = Vec::with_capacity(labels.len());
        for (dst, &src) in order.iter().enumerate() {
            x.set_col(dst, features.col(src));
            sorted_labels.push(labels[src]);
        }
        Dictionary::new(x, sorted_labels)
    }

    pub fn features(&self) -> &Mat {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_ranges(&self) -> &[Range<usize>] {
        &self.class_ranges
    }

    pub fn num_classes(&self) -> usize {
        self.class_ranges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn num_samples(&self) -> usize {
        self.x.cols()
    }
}

/// CRC model: a dictionary plus the l2 regularizer.
#[derive(Debug, Clone)]
pub struct CrcModel {
    pub dict: Dictionary,
    pub lambda: f64,
}

impl CrcModel {
    pub fn new(dict: Dictionary, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::param("CrcModel::new", format!("lambda = {lambda}")));
        }
        Ok(CrcModel { dict, lambda })
    }
}

/// `‖y − Xα‖² + λ‖α‖²`.
pub fn crc_cost(dict: &Dictionary, y: &[f64], alpha: &[f64], lambda: f64) -> Result<f64> {
    if y.len() != dict.feature_dim() || alpha.len() != dict.num_samples() {
        return Err(Error::dim(
            "crc_cost",
            format!(
                "y len {} (want {}), alpha len {} (want {})",
                y.len(),
                dict.feature_dim(),
                alpha.len(),
                dict.num_samples()
            ),
        ));
    }
    let recon = dict.x.mul_vec(alpha);
    let resid: f64 = y
        .iter()
        .zip(&recon)
        .map(|(yi, ri)| (yi - ri) * (yi - ri))
        .sum();
    Ok(resid + lambda * sq_norm(alpha))
}

/// Closed-form ridge code `α̂ = (XᵀX + λI)⁻¹Xᵀy`, the unique minimizer of
/// [`crc_cost`].
pub fn crc_encode(dict: &Dictionary, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if y.len() != dict.feature_dim() {
        return Err(Error::dim(
            "crc_encode",
            format!("y len {} (want {})", y.len(), dict.feature_dim()),
        ));
    }
    let rhs = Mat::from_col(&dict.x.tr_mul_vec(y));
    let alpha = ridge_gram_inverse_apply(&dict.x, 1.0, lambda, &rhs)?;
    Ok(alpha.col(0).to_vec())
}

/// Batched [`crc_encode`]: one factorization shared by every column of `ys`.
pub fn crc_encode_batch(dict: &Dictionary, ys: &Mat, lambda: f64) -> Result<Mat> {
    if ys.rows() != dict.feature_dim() {
        return Err(Error::dim(
            "crc_encode_batch",
            format!("ys rows {} (want {})", ys.rows(), dict.feature_dim()),
        ));
    }
    let rhs = dict.x.tr_mul(ys);
    ridge_gram_inverse_apply(&dict.x, 1.0, lambda, &rhs)
}

/// Per-class residuals `rᵢ = ‖y − Xᵢα̂ᵢ‖² / ‖α̂ᵢ‖²`. A class whose code block
/// is exactly zero gets `+∞` so it can never win the argmin.
pub fn class_residuals(dict: &Dictionary, y: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    if y.len() != dict.feature_dim() || alpha.len() != dict.num_samples() {
        return Err(Error::dim("class_residuals", "y or alpha length".to_string()));
    }
    let mut out = Vec::with_capacity(dict.num_classes());
    for range in &dict.class_ranges {
        let block = &alpha[range.clone()];
        let denom = sq_norm(block);
        if denom == 0.0 {
            out.push(f64::INFINITY);
            continue;
        }
        let mut resid = y.to_vec();
        for (offset, &coeff) in block.iter().enumerate() {
            if coeff == 0.0 {
                continue;
            }
            let col = dict.x.col(range.start + offset);
            for (r, c) in resid.iter_mut().zip(col) {
                *r -= coeff * c;
            }
        }
        out.push(sq_norm(&resid) / denom);
    }
    Ok(out)
}

fn argmin_with_ties(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Classify by the smallest class residual; ties go to the lowest class id.
pub fn crc_classify(model: &CrcModel, y: &[f64]) -> Result<usize> {
    let alpha = crc_encode(&model.dict, y, model.lambda)?;
    let residuals = class_residuals(&model.dict, y, &alpha)?;
    Ok(argmin_with_ties(&residuals))
}

/// Classify many feature columns with a shared factorization.
pub fn crc_classify_batch(model: &CrcModel, ys: &Mat) -> Result<Vec<usize>> {
    let codes = crc_encode_batch(&model.dict, ys, model.lambda)?;
    (0..ys.cols())
        .map(|j| {
            let residuals = class_residuals(&model.dict, ys.col(j), codes.col(j))?;
            Ok(argmin_with_ties(&residuals))
        })
        .collect()
}

fn validation_accuracy(
    dict: &Dictionary,
    lambda: f64,
    val_x: &Mat,
    val_labels: &[usize],
) -> Result<f64> {
    let model = CrcModel {
        dict: dict.clone(),
        lambda,
    };
    let predicted = crc_classify_batch(&model, val_x)?;
    let correct = predicted
        .iter()
        .zip(val_labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / val_labels.len() as f64)
}

const GOLDEN_STEPS: usize = 20;

/// Pick λ by evaluating the grid on validation accuracy (first maximizer
/// wins ties), then refining with up to 20 golden-section steps on log λ
/// between the maximizer's grid neighbours. A refinement candidate replaces
/// the incumbent only when strictly better, so the result is deterministic.
pub fn tune_lambda(
    dict: &Dictionary,
    val_x: &Mat,
    val_labels: &[usize],
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::param("tune_lambda", "empty grid"));
    }
    if val_labels.is_empty() || val_x.cols() != val_labels.len() {
        return Err(Error::param("tune_lambda", "validation set empty or mislabeled"));
    }
    if grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::param("tune_lambda", "grid values must be > 0"));
    }

    let mut best_lambda = grid[0];
    let mut best_acc = -1.0f64;
    let mut best_idx = 0usize;
    for (i, &lambda) in grid.iter().enumerate() {
        let acc = validation_accuracy(dict, lambda, val_x, val_labels)?;
        if acc > best_acc {
            best_acc = acc;
            best_lambda = lambda;
            best_idx = i;
        }
    }

    let lo = if best_idx > 0 { grid[best_idx - 1] } else { grid[best_idx] };
    let hi = if best_idx + 1 < grid.len() {
        grid[best_idx + 1]
    } else {
        grid[best_idx]
    };
    if lo == hi {
        return Ok(best_lambda);
    }

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..GOLDEN_STEPS {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        let acc_c = validation_accuracy(dict, c.exp(), val_x, val_labels)?;
        let acc_d = validation_accuracy(dict, d.exp(), val_x, val_labels)?;
        if acc_c > best_acc {
            best_acc = acc_c;
            best_lambda = c.exp();
        }
        if acc_d > best_acc {
            best_acc = acc_d;
            best_lambda = d.exp();
        }
        if acc_c >= acc_d {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best_lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn two_class_identity() -> Dictionary {
        Dictionary::new(Mat::identity(2), vec![0, 1]).unwrap()
    }

    /// Scalar-loop re-evaluation of the cost, independent of Mat ops.
    fn cost_oracle(dict: &Dictionary, y: &[f64], alpha: &[f64], lambda: f64) -> f64 {
        let x = dict.features();
        let mut total = 0.0;
        for r in 0..x.rows() {
            let mut resid = y[r];
            for c in 0..x.cols() {
                resid -= x.get(r, c) * alpha[c];
            }
            total += resid * resid;
        }
        total + lambda * alpha.iter().map(|a| a * a).sum::<f64>()
    }

    fn random_dictionary(rng: &mut ChaCha8Rng, d: usize, per_class: usize, classes: usize) -> Dictionary {
        let n = per_class * classes;
        let x = Mat::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0));
        let labels = (0..n).map(|i| i / per_class).collect();
        Dictionary::new(x, labels).unwrap()
    }

    #[test]
    fn dictionary_rejects_bad_layouts() {
        assert!(Dictionary::new(Mat::identity(2), vec![0]).is_err());
        assert!(Dictionary::new(Mat::identity(2), vec![1, 0]).is_err());
        assert!(Dictionary::new(Mat::identity(3), vec![0, 2, 2]).is_err());
        // from_labeled regroups out-of-order labels
        let feats = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let dict = Dictionary::from_labeled(&feats, &[1, 0, 1]).unwrap();
        assert_eq!(dict.labels(), &[0, 1, 1]);
        assert_eq!(dict.features().col(0), &[2.0, 5.0]);
    }

    #[test]
    fn cost_zero_residual_case() {
        let dict = two_class_identity();
        let cost = crc_cost(&dict, &[1.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(cost, 1.0);
    }

    #[test]
    fn cost_zero_code_is_pure_residual() {
        let dict = two_class_identity();
        let y = [0.6, -0.8];
        let cost = crc_cost(&dict, &y, &[0.0, 0.0], 3.0).unwrap();
        assert_relative_eq!(cost, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cost_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dict = random_dictionary(&mut rng, 4, 3, 2);
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = crc_cost(&dict, &y, &alpha, 0.37).unwrap();
        assert_relative_eq!(got, cost_oracle(&dict, &y, &alpha, 0.37), max_relative = 1e-12);
    }

    #[test]
    fn cost_rejects_dimension_mismatch() {
        let dict = two_class_identity();
        assert!(crc_cost(&dict, &[1.0], &[0.0, 0.0], 1.0).is_err());
        assert!(crc_cost(&dict, &[1.0, 0.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn encode_identity_dictionary() {
        let dict = two_class_identity();
        let alpha = crc_encode(&dict, &[1.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(alpha[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(alpha[1], 0.0);
    }

    #[test]
    fn encode_zero_target_gives_zero_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = random_dictionary(&mut rng, 5, 2, 3);
        let alpha = crc_encode(&dict, &[0.0; 5], 0.5).unwrap();
        assert!(alpha.iter().all(|&a| a.abs() < 1e-14));
    }

    #[test]
    fn encode_is_global_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dict = random_dictionary(&mut rng, 6, 3, 3);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = 0.2;
        let alpha = crc_encode(&dict, &y, lambda).unwrap();

        // gradient of the cost at the optimum: 2(XᵀXα − Xᵀy + λα) = 0
        let x = dict.features();
        let grad = {
            let xa = x.mul_vec(&alpha);
            let mut g = x.tr_mul_vec(&xa);
            let xty = x.tr_mul_vec(&y);
            for i in 0..g.len() {
                g[i] = 2.0 * (g[i] - xty[i] + lambda * alpha[i]);
            }
            g
        };
        assert!(grad.iter().all(|g| g.abs() < 1e-8), "gradient not zero: {grad:?}");

        let base = crc_cost(&dict, &y, &alpha, lambda).unwrap();
        for _ in 0..100 {
            let perturbed: Vec<f64> = alpha
                .iter()
                .map(|a| a + rng.gen_range(-1e-3..1e-3))
                .collect();
            let c = crc_cost(&dict, &y, &perturbed, lambda).unwrap();
            assert!(c >= base - 1e-12, "perturbation decreased the cost");
        }
    }

    #[test]
    fn encode_matches_independent_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let dict = random_dictionary(&mut rng, 5, 2, 3);
        let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = 0.15;
        let alpha = crc_encode(&dict, &y, lambda).unwrap();

        let x = dict.features();
        let mut system = x.tr_mul(x);
        for i in 0..6 {
            system.set(i, i, system.get(i, i) + lambda);
        }
        let inv = crate::linalg::testkit::gauss_jordan_inverse(&system);
        let expect = inv.mul_vec(&x.tr_mul_vec(&y));
        for (a, e) in alpha.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn encode_rejects_nonpositive_lambda() {
        let dict = two_class_identity();
        assert!(crc_encode(&dict, &[1.0, 0.0], 0.0).is_err());
        assert!(crc_encode(&dict, &[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn residuals_hand_case() {
        let dict = two_class_identity();
        let r = class_residuals(&dict, &[1.0, 0.0], &[0.5, 0.0]).unwrap();
        assert_relative_eq!(r[0], 1.0, max_relative = 1e-12);
        assert!(r[1].is_infinite());
    }

    #[test]
    fn residual_zero_when_exactly_reconstructed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dict = random_dictionary(&mut rng, 4, 2, 2);
        let k = 1usize;
        let col = dict.features().col(dict.class_ranges()[k].start).to_vec();
        let mut alpha = vec![0.0; dict.num_samples()];
        alpha[dict.class_ranges()[k].start] = 1.0;
        let r = class_residuals(&dict, &col, &alpha).unwrap();
        assert!(r[k] < 1e-20);
    }

    #[test]
    fn residuals_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dict = random_dictionary(&mut rng, 5, 3, 2);
        let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = class_residuals(&dict, &y, &alpha).unwrap();
        let x = dict.features();
        for (k, range) in dict.class_ranges().iter().enumerate() {
            let mut num = 0.0;
            for r in 0..x.rows() {
                let mut v = y[r];
                for c in range.clone() {
                    v -= x.get(r, c) * alpha[c];
                }
                num += v * v;
            }
            let den: f64 = alpha[range.clone()].iter().map(|a| a * a).sum();
            assert_relative_eq!(got[k], num / den, max_relative = 1e-12);
        }
    }

    #[test]
    fn classify_orthogonal_classes_and_ties() {
        let model = CrcModel::new(two_class_identity(), 0.5).unwrap();
        assert_eq!(crc_classify(&model, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(crc_classify(&model, &[0.0, 1.0]).unwrap(), 1);
        // equidistant target: forced to class 0 by the tie-break
        let s = 1.0 / 2.0f64.sqrt();
        assert_eq!(crc_classify(&model, &[s, s]).unwrap(), 0);
    }

    fn gaussian_clusters(
        rng: &mut ChaCha8Rng,
        centers: &[Vec<f64>],
        per_class: usize,
        spread: f64,
    ) -> (Mat, Vec<usize>) {
        let d = centers[0].len();
        let n = centers.len() * per_class;
        let mut x = Mat::zeros(d, n);
        let mut labels = Vec::with_capacity(n);
        for (k, center) in centers.iter().enumerate() {
            for i in 0..per_class {
                let col: Vec<f64> = center
                    .iter()
                    .map(|c| c + spread * rng.gen_range(-1.0..1.0))
                    .collect();
                x.set_col(k * per_class + i, &col);
                labels.push(k);
            }
        }
        (x, labels)
    }

    #[test]
    fn classify_separable_clusters_matches_centroid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let centers = vec![
            vec![4.0, 0.0, 0.0, 0.5],
            vec![0.0, 4.0, 0.0, -0.5],
            vec![0.0, 0.0, 4.0, 0.0],
        ];
        let (x, labels) = gaussian_clusters(&mut rng, &centers, 8, 0.3);
        let dict = Dictionary::new(x.clone(), labels.clone()).unwrap();
        let model = CrcModel::new(dict, 0.01).unwrap();
        let predicted = crc_classify_batch(&model, &x).unwrap();
        assert_eq!(predicted, labels, "training-set accuracy below 100%");

        // nearest-centroid oracle agrees on separable data
        for j in 0..x.cols() {
            let y = x.col(j);
            let mut best = (f64::INFINITY, 0usize);
            for (k, center) in centers.iter().enumerate() {
                let d2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, k);
                }
            }
            assert_eq!(predicted[j], best.1);
        }
    }

    #[test]
    fn tune_single_element_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dict = random_dictionary(&mut rng, 4, 3, 2);
        let val = Mat::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let got = tune_lambda(&dict, &val, &[0, 1], &[0.25]).unwrap();
        assert_eq!(got, 0.25);
    }

    #[test]
    fn tune_prefers_first_maximizer_on_saturated_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = vec![vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 0.0]];
        let (x, labels) = gaussian_clusters(&mut rng, &centers, 6, 0.2);
        let dict = Dictionary::new(x, labels).unwrap();
        let (vx, vl) = gaussian_clusters(&mut rng, &centers, 4, 0.2);
        let got = tune_lambda(&dict, &vx, &vl, &[1e-3, 1e-1, 10.0]).unwrap();
        assert_eq!(got, 1e-3, "all grid points reach 100%; first maximizer wins");
    }

    #[test]
    fn tuned_lambda_at_least_as_good_as_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let centers = vec![
            vec![1.5, 0.0, 0.3, 0.0],
            vec![0.0, 1.5, 0.0, 0.3],
            vec![0.7, 0.7, 1.0, -0.5],
        ];
        let (x, labels) = gaussian_clusters(&mut rng, &centers, 10, 0.9);
        let dict = Dictionary::new(x, labels).unwrap();
        let (vx, vl) = gaussian_clusters(&mut rng, &centers, 12, 0.9);
        let grid = [1e-4, 1e-2, 1.0, 100.0];
        let tuned = tune_lambda(&dict, &vx, &vl, &grid).unwrap();
        let tuned_acc = validation_accuracy(&dict, tuned, &vx, &vl).unwrap();
        for &g in &grid {
            let acc = validation_accuracy(&dict, g, &vx, &vl).unwrap();
            assert!(
                tuned_acc >= acc - 1e-12,
                "grid point {g} beats tuned lambda ({acc} > {tuned_acc})"
            );
        }
    }

    mod properties {
        use super::{argmin_with_ties, class_residuals, crc_encode, random_dictionary, sq_norm};
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            /// Scaling y by t > 0 scales the code by t and keeps the argmin
            /// when all residuals stay finite.
            #[test]
            fn encode_is_linear_in_y(seed in 0u64..1000, t in 0.1..10.0f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dict = random_dictionary(&mut rng, 4, 3, 2);
                let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let scaled: Vec<f64> = y.iter().map(|v| v * t).collect();
                let a1 = crc_encode(&dict, &y, 0.3).unwrap();
                let a2 = crc_encode(&dict, &scaled, 0.3).unwrap();
                for (x1, x2) in a1.iter().zip(&a2) {
                    prop_assert!((x1 * t - x2).abs() < 1e-9 * (1.0 + x2.abs()));
                }
                let r1 = class_residuals(&dict, &y, &a1).unwrap();
                let r2 = class_residuals(&dict, &scaled, &a2).unwrap();
                if r1.iter().all(|r| r.is_finite()) && r2.iter().all(|r| r.is_finite()) {
                    prop_assert_eq!(argmin_with_ties(&r1), argmin_with_ties(&r2));
                }
            }

            /// ‖α̂‖ decreases monotonically along an increasing λ ladder.
            #[test]
            fn code_norm_shrinks_with_lambda(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dict = random_dictionary(&mut rng, 5, 2, 3);
                let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut last = f64::INFINITY;
                for &lambda in &[1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0] {
                    let alpha = crc_encode(&dict, &y, lambda).unwrap();
                    let norm = sq_norm(&alpha).sqrt();
                    prop_assert!(norm <= last + 1e-12);
                    last = norm;
                }
            }
        }
    }
}
