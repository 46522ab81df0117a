//! Soft-margin RBF support vector classifier trained by sequential minimal
//! optimisation with second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::{check_row, check_spec, rbf_unchecked, ClassifierError, Design};
use crate::dataset::SampleTable;
use crate::label::Label;
use crate::scalar::Scalar;
use crate::spectra::{FeatureSet, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperParams {
    pub c: f64,
    /// Kernel width in `exp(-sigma * |a - b|^2)`.
    pub sigma: f64,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    /// The optimiser gives up after `max_passes * n` pair updates.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmHyperParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            sigma: 0.09,
            tolerance: 1e-3,
            max_passes: 1000,
            seed: 0,
        }
    }
}

impl SvmHyperParams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidHyperParams(m));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be > 0, got {}", self.c));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.max_passes == 0 {
            return bad("max_passes must be >= 1".into());
        }
        Ok(())
    }
}

/// Z-score standardisation fitted on the training rows. Zero-variance
/// features are dropped and listed out of `retained`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub sd: Vec<T>,
    pub retained: Vec<usize>,
}

impl<T: Scalar> Scaler<T> {
    pub fn fit(rows: &[Vec<T>], n_features: usize) -> Self {
        let n = T::lit(rows.len() as f64);
        let mut mean = vec![T::zero(); n_features];
        let mut sd = vec![T::zero(); n_features];
        for f in 0..n_features {
            let m = rows.iter().map(|r| r[f]).sum::<T>() / n;
            let var = rows.iter().map(|r| (r[f] - m) * (r[f] - m)).sum::<T>() / n;
            mean[f] = m;
            sd[f] = var.sqrt();
        }
        let retained = (0..n_features).filter(|&f| sd[f] > T::zero()).collect();
        Self { mean, sd, retained }
    }

    pub fn transform(&self, row: &[T]) -> Vec<T> {
        self.retained
            .iter()
            .map(|&f| (row[f] - self.mean[f]) / self.sd[f])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<T> {
    pub feature_spec: FeatureSet,
    pub hyperparams: SvmHyperParams,
    /// Scaled rows with non-zero dual variable.
    pub support_vectors: Vec<Vec<T>>,
    /// `alpha_i * y_i`, plastic encoded +1.
    pub dual_coefs: Vec<T>,
    pub bias: T,
    pub sigma: T,
    pub scaler: Scaler<T>,
}

impl<T: Scalar> SvmModel<T> {
    pub fn n_features(&self) -> usize {
        self.feature_spec.len()
    }

    /// `f(x) = sum_i coef_i k(sv_i, x) + bias` on the scaled row.
    pub fn decision_function(&self, row: &[T]) -> Result<T, ClassifierError> {
        check_row(row, self.n_features())?;
        let x = self.scaler.transform(row);
        let sum = self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .fold(T::zero(), |acc, (sv, c)| acc + *c * rbf_unchecked(sv, &x, self.sigma));
        Ok(sum + self.bias)
    }

    /// Plastic when `f(x) >= 0`.
    pub fn predict_row(&self, row: &[T]) -> Result<Label, ClassifierError> {
        let f = self.decision_function(row)?;
        Ok(if f >= T::zero() { Label::Plastic } else { Label::Water })
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Label, ClassifierError> {
        check_spec(self.feature_spec, fv)?;
        let row: Vec<T> = fv.values.iter().map(|v| T::lit(*v)).collect();
        self.predict_row(&row)
    }
}

pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    /// Decision offset, `f(x) = sum alpha_i y_i k(x_i, x) - rho`.
    pub rho: T,
    /// Maximal KKT violation at exit.
    pub violation: T,
}

/// Solves `min 1/2 a'Qa - e'a` s.t. `y'a = 0`, `0 <= a <= c`, with
/// `Q_ij = y_i y_j K_ij` and `K` given row-major.
pub fn smo<T: Scalar>(
    k: &[T],
    y: &[T],
    c: T,
    tol: T,
    max_iter: usize,
) -> Result<DualSolution<T>, ClassifierError> {
    let n = y.len();
    let tau = T::lit(1e-12);
    let two = T::lit(2.0);
    let zero = T::zero();
    let kk = |i: usize, j: usize| k[i * n + j];
    let mut alpha = vec![zero; n];
    let mut g = vec![-T::one(); n];
    let in_up = |a: T, yt: T| if yt > zero { a < c } else { a > zero };
    let in_low = |a: T, yt: T| if yt > zero { a > zero } else { a < c };

    for _ in 0..max_iter {
        let mut gmax = T::neg_infinity();
        let mut sel_i = None;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * g[t] > gmax {
                gmax = -y[t] * g[t];
                sel_i = Some(t);
            }
        }
        let mut gmax2 = T::neg_infinity();
        let mut sel_j = None;
        let mut best = T::infinity();
        if let Some(i) = sel_i {
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let yg = y[t] * g[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > zero {
                    let mut a = kk(i, i) + kk(t, t) - two * kk(i, t);
                    if a <= zero {
                        a = tau;
                    }
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        sel_j = Some(t);
                    }
                }
            }
        }
        let violation = gmax + gmax2;
        let (Some(i), Some(j)) = (sel_i, sel_j) else {
            return Ok(finish(alpha, &g, y, c, violation.max(zero)));
        };
        if violation < tol {
            return Ok(finish(alpha, &g, y, c, violation));
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        let mut quad = kk(i, i) + kk(j, j) - two * kk(i, j);
        if quad <= zero {
            quad = tau;
        }
        if y[i] != y[j] {
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            alpha[i] = ai + delta;
            alpha[j] = aj + delta;
            if diff > zero {
                if alpha[j] < zero {
                    alpha[j] = zero;
                    alpha[i] = diff;
                }
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else {
                if alpha[i] < zero {
                    alpha[i] = zero;
                    alpha[j] = -diff;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            alpha[i] = ai - delta;
            alpha[j] = aj + delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < zero {
                    alpha[j] = zero;
                    alpha[i] = sum;
                }
                if alpha[i] < zero {
                    alpha[i] = zero;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += y[t] * (y[i] * kk(t, i) * di + y[j] * kk(t, j) * dj);
        }
    }
    Err(ClassifierError::NotConverged { iterations: max_iter })
}

/// Offset from the free variables, or the midpoint of the feasible
/// interval when every variable sits at a bound.
fn finish<T: Scalar>(alpha: Vec<T>, g: &[T], y: &[T], c: T, violation: T) -> DualSolution<T> {
    let zero = T::zero();
    let mut ub = T::infinity();
    let mut lb = T::neg_infinity();
    let mut free = 0usize;
    let mut sum = zero;
    for t in 0..alpha.len() {
        let yg = y[t] * g[t];
        let plus = y[t] > zero;
        if alpha[t] >= c {
            if plus {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        } else if alpha[t] <= zero {
            if plus {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 {
        sum / T::lit(free as f64)
    } else {
        (ub + lb) / T::lit(2.0)
    };
    DualSolution { alpha, rho, violation }
}

/// `1/2 a'Qa - e'a` with `Q_ij = y_i y_j K_ij`.
pub fn dual_objective<T: Scalar>(k: &[T], y: &[T], alpha: &[T]) -> T {
    let n = alpha.len();
    let mut quad = T::zero();
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i * n + j];
        }
    }
    quad / T::lit(2.0) - alpha.iter().fold(T::zero(), |a, b| a + *b)
}

/// Dense RBF Gram matrix, row-major.
pub fn kernel_matrix<T: Scalar>(x: &[Vec<T>], sigma: T) -> Vec<T> {
    let n = x.len();
    let mut k = vec![T::one(); n * n];
    for i in 0..n {
        for j in 0..i {
            let v = rbf_unchecked(&x[i], &x[j], sigma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

pub fn fit_svm<T: Scalar>(design: &Design<T>, hp: &SvmHyperParams) -> Result<SvmModel<T>, ClassifierError> {
    hp.validate()?;
    design.require_both_classes()?;
    let scaler = Scaler::fit(&design.rows, design.n_features());
    if scaler.retained.is_empty() {
        return Err(ClassifierError::EmptyFeatures);
    }
    for f in (0..design.n_features()).filter(|f| !scaler.retained.contains(f)) {
        log::warn!("dropping zero-variance feature {}", design.spec.members()[f]);
    }
    let x: Vec<Vec<T>> = design.rows.iter().map(|r| scaler.transform(r)).collect();
    let y: Vec<T> = design.labels.iter().map(|l| T::lit(l.sign())).collect();
    let sigma = T::lit(hp.sigma);
    let k = kernel_matrix(&x, sigma);
    let max_iter = hp.max_passes.saturating_mul(design.len());
    let sol = smo(&k, &y, T::lit(hp.c), T::lit(hp.tolerance), max_iter)?;

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for (t, a) in sol.alpha.iter().enumerate() {
        if *a > T::zero() {
            support_vectors.push(x[t].clone());
            dual_coefs.push(*a * y[t]);
        }
    }
    Ok(SvmModel {
        feature_spec: design.spec,
        hyperparams: hp.clone(),
        support_vectors,
        dual_coefs,
        bias: -sol.rho,
        sigma,
        scaler,
    })
}

pub fn train_svm(train: &SampleTable, spec: FeatureSet, hp: &SvmHyperParams) -> Result<SvmModel<f64>, ClassifierError> {
    fit_svm(&Design::from_table(train, spec)?, hp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn design(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Design<f64> {
        Design::new(rows, labels, FeatureSet::Model4).unwrap()
    }

    fn random_design(n: usize, seed: u64) -> Design<f64> {
        let mut rng = stream_rng(seed, 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Plastic } else { Label::Water };
            let shift = if label == Label::Plastic { 0.7 } else { -0.7 };
            rows.push((0..3).map(|_| shift + rng.random_range(-1.0..1.0)).collect());
            labels.push(label);
        }
        design(rows, labels)
    }

    fn cholesky_psd(k: &[f64], n: usize, jitter: f64) -> bool {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = k[i * n + j] + if i == j { jitter } else { 0.0 };
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                if i == j {
                    if s <= 0.0 {
                        return false;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        true
    }

    #[test]
    fn symmetric_pair_has_zero_bias() {
        let d = design(
            vec![vec![1.0, 2.0, 3.0], vec![-1.0, -2.0, -3.0]],
            vec![Label::Plastic, Label::Water],
        );
        let m = fit_svm(&d, &SvmHyperParams::default()).unwrap();
        assert!(m.bias.abs() < 1e-6);
        assert_eq!(m.predict_row(&[1.0, 2.0, 3.0]).unwrap(), Label::Plastic);
        assert_eq!(m.predict_row(&[-1.0, -2.0, -3.0]).unwrap(), Label::Water);
    }

    #[test]
    fn four_point_separable() {
        let d = design(
            vec![
                vec![2.0, 2.0, 0.0],
                vec![2.0, 3.0, 0.0],
                vec![-2.0, -2.0, 0.5],
                vec![-3.0, -2.0, 0.5],
            ],
            vec![Label::Plastic, Label::Plastic, Label::Water, Label::Water],
        );
        let hp = SvmHyperParams { c: 10.0, ..Default::default() };
        let m = fit_svm(&d, &hp).unwrap();
        for (row, label) in d.rows.iter().zip(&d.labels) {
            let f = m.decision_function(row).unwrap();
            assert_eq!(f > 0.0, *label == Label::Plastic);
        }
        assert!(m.dual_coefs.iter().all(|c| c.abs() <= 10.0 + 1e-9));
        assert_eq!(m.scaler.retained, vec![0, 1, 2]);
    }

    #[test]
    fn zero_variance_feature_dropped() {
        let d = design(
            vec![vec![1.0, 5.0, 0.0], vec![2.0, 5.0, 1.0], vec![-1.0, 5.0, 0.0], vec![-2.0, 5.0, 1.0]],
            vec![Label::Plastic, Label::Plastic, Label::Water, Label::Water],
        );
        let m = fit_svm(&d, &SvmHyperParams::default()).unwrap();
        assert_eq!(m.scaler.retained, vec![0, 2]);
        assert_eq!(m.support_vectors[0].len(), 2);
        let flat = design(vec![vec![1.0; 3], vec![1.0; 3]], vec![Label::Plastic, Label::Water]);
        assert!(matches!(fit_svm(&flat, &SvmHyperParams::default()), Err(ClassifierError::EmptyFeatures)));
    }

    #[test]
    fn free_support_vectors_on_margin() {
        let d = random_design(30, 11);
        let hp = SvmHyperParams { c: 1000.0, sigma: 0.5, tolerance: 1e-8, ..Default::default() };
        let m = fit_svm(&d, &hp).unwrap();
        for (sv, coef) in m.support_vectors.iter().zip(&m.dual_coefs) {
            if coef.abs() < hp.c - 1e-6 {
                let f = m
                    .support_vectors
                    .iter()
                    .zip(&m.dual_coefs)
                    .map(|(s, c)| c * rbf_unchecked(s, sv, m.sigma))
                    .sum::<f64>()
                    + m.bias;
                assert!((f * coef.signum() - 1.0).abs() < 1e-5, "f = {f}");
            }
        }
    }

    #[test]
    fn label_swap_flips_predictions() {
        let d = random_design(24, 5);
        let mut swapped = d.clone();
        swapped.labels.iter_mut().for_each(|l| *l = l.other());
        let hp = SvmHyperParams { tolerance: 1e-8, ..Default::default() };
        let a = fit_svm(&d, &hp).unwrap();
        let b = fit_svm(&swapped, &hp).unwrap();
        let mut rng = stream_rng(77, 0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (fa, fb) = (a.decision_function(&x).unwrap(), b.decision_function(&x).unwrap());
            assert!((fa + fb).abs() < 1e-5);
            if fa.abs() > 1e-4 {
                assert_ne!(a.predict_row(&x).unwrap(), b.predict_row(&x).unwrap());
            }
        }
    }

    #[test]
    fn reports_non_convergence() {
        let d = random_design(40, 3);
        let hp = SvmHyperParams { max_passes: 1, tolerance: 1e-12, c: 100.0, ..Default::default() };
        // one pass of 40 pair updates cannot reach this tolerance
        assert!(matches!(fit_svm(&d, &hp), Err(ClassifierError::NotConverged { .. })));
    }

    #[test]
    fn f32_matches_f64() {
        let d = random_design(20, 8);
        let m64 = fit_svm(&d, &SvmHyperParams::default()).unwrap();
        let m32 = fit_svm(&d.cast::<f32>(), &SvmHyperParams::default()).unwrap();
        for row in &d.rows {
            let r32: Vec<f32> = row.iter().map(|v| *v as f32).collect();
            let (a, b) = (m64.decision_function(row).unwrap(), m32.decision_function(&r32).unwrap());
            assert!((a - b as f64).abs() < 1e-2);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn prop_kkt_and_bounds(seed in 0u64..10_000, c in 0.1f64..20.0) {
            let d = random_design(16, seed);
            let scaler = Scaler::fit(&d.rows, 3);
            let x: Vec<Vec<f64>> = d.rows.iter().map(|r| scaler.transform(r)).collect();
            let y: Vec<f64> = d.labels.iter().map(|l| l.sign()).collect();
            let k = kernel_matrix(&x, 0.3);
            prop_assert!(cholesky_psd(&k, 16, 1e-8));
            let sol = smo(&k, &y, c, 1e-3, 100_000).unwrap();
            prop_assert!(sol.violation < 1e-3);
            prop_assert!(sol.alpha.iter().all(|a| *a >= 0.0 && *a <= c + 1e-9));
            let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
            prop_assert!(balance.abs() < 1e-9);
        }
    }
}
