//! Inception Score, Fréchet distance, classification metrics and the
//! paired t-test.

mod linalg;

pub use linalg::{sqrtm_psd, symmetric_eigen};

use statrs::function::beta::checked_beta_reg;

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::optim::{ClassifierModel, FEATURE_DIM, NUM_CLASSES};
use crate::tensor::Scalar;

pub const ROW_SUM_TOL: f64 = 1e-5;
/// Diagonal loading applied to a covariance estimated from fewer than d+1 samples.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;

/// `n × d` row-major sample matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Contiguous rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.cols];
        for i in 0..self.rows {
            mu.iter_mut().zip(self.row(i)).for_each(|(m, x)| *m += x);
        }
        mu.iter_mut().for_each(|m| *m /= self.rows as f64);
        mu
    }

    /// Unbiased covariance (divisor n − 1).
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.rows < 2 {
            return Err(Error::InvalidArgument(format!(
                "covariance needs at least 2 samples, got {}",
                self.rows
            )));
        }
        let (n, d) = (self.rows, self.cols);
        let mu = self.mean();
        let centred: Vec<f64> = (0..n)
            .flat_map(|i| {
                self.row(i)
                    .iter()
                    .zip(&mu)
                    .map(|(x, m)| x - m)
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut cov = vec![0.0; d * d];
        crate::tensor::gemm(d, n, d, &centred, true, &centred, false, &mut cov, false);
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
        // exact symmetry
        for i in 0..d {
            for j in i + 1..d {
                let v = 0.5 * (cov[i * d + j] + cov[j * d + i]);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(cov)
    }
}

/// Number of IS splits used for `n` samples: 10 from 400 samples up,
/// otherwise one per 50 samples with a floor of 2.
pub fn default_is_splits(n: usize) -> usize {
    if n >= 400 {
        10
    } else {
        (n / 50).max(2)
    }
}

fn check_probs(probs: &FeatureMatrix) -> Result<()> {
    for i in 0..probs.rows {
        let row = probs.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL
            || row.iter().any(|&p| !(0.0..=1.0 + ROW_SUM_TOL).contains(&p))
        {
            return Err(Error::InvalidArgument(format!(
                "row {i} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// `exp(E_x KL(p(y|x) ‖ p(y)))` over `n_splits` contiguous groups of rows;
/// returns the mean and population standard deviation across groups.
pub fn inception_score(probs: &FeatureMatrix, n_splits: usize) -> Result<(f64, f64)> {
    if n_splits == 0 || probs.rows < n_splits {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot form {n_splits} splits",
            probs.rows
        )));
    }
    check_probs(probs)?;
    let n = probs.rows;
    let scores: Vec<f64> = (0..n_splits)
        .map(|s| {
            let group = probs.slice(s * n / n_splits, (s + 1) * n / n_splits);
            let marginal = group.mean();
            let kl: f64 = (0..group.rows)
                .map(|i| {
                    group
                        .row(i)
                        .iter()
                        .zip(&marginal)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &q)| p * (p.ln() - q.ln()))
                        .sum::<f64>()
                })
                .sum();
            (kl / group.rows as f64).exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / n_splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n_splits as f64;
    Ok((mean, var.sqrt()))
}

fn trace(a: &[f64], d: usize) -> f64 {
    (0..d).map(|i| a[i * d + i]).sum()
}

fn regularized_covariance(x: &FeatureMatrix) -> Result<Vec<f64>> {
    let mut cov = x.covariance()?;
    if x.rows < x.cols + 1 {
        (0..x.cols).for_each(|i| cov[i * x.cols + i] += COVARIANCE_SHRINKAGE);
    }
    Ok(cov)
}

/// Fréchet distance between Gaussians fitted to two sample sets:
/// `‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₁^½ Σ₂ Σ₁^½)^½)`, clamped at zero.
pub fn frechet_distance(real: &FeatureMatrix, fake: &FeatureMatrix) -> Result<f64> {
    if real.cols != fake.cols {
        return Err(Error::ShapeMismatch {
            op: "frechet_distance",
            lhs: vec![real.rows, real.cols],
            rhs: vec![fake.rows, fake.cols],
        });
    }
    let d = real.cols;
    let (s1, s2) = (regularized_covariance(real)?, regularized_covariance(fake)?);
    let mean_term: f64 = real
        .mean()
        .iter()
        .zip(fake.mean())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let root1 = sqrtm_psd(&s1, d)?;
    let mut inner = matmul_3(&root1, &s2, &root1, d);
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = v;
            inner[j * d + i] = v;
        }
    }
    let cross = sqrtm_psd(&inner, d)?;
    let fid = mean_term + trace(&s1, d) + trace(&s2, d) - 2.0 * trace(&cross, d);
    Ok(fid.max(0.0))
}

fn matmul_3(a: &[f64], b: &[f64], c: &[f64], d: usize) -> Vec<f64> {
    linalg::matmul(&linalg::matmul(a, b, d), c, d)
}

/// Penultimate-layer features `(n, 64)` and class probabilities `(n, 2)` of
/// the classifier in eval mode.
pub fn feature_extract<T: Scalar>(
    extractor: &mut ClassifierModel<T>,
    images: &[GrayImage],
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let p = extractor.predict(images)?;
    let n = p.len();
    Ok((
        FeatureMatrix::new(n, FEATURE_DIM, p.features)?,
        FeatureMatrix::new(n, NUM_CLASSES, p.probs)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Support-weighted averages over the classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn classification_report(preds: &[usize], truth: &[usize]) -> Result<ClassificationReport> {
    if preds.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "classification_report",
            lhs: vec![preds.len()],
            rhs: vec![truth.len()],
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument(
            "classification_report: no samples".into(),
        ));
    }
    if let Some(bad) = preds.iter().chain(truth).find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("label {bad} is not binary")));
    }
    let n = truth.len() as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut out = ClassificationReport {
        accuracy: ratio(
            preds.iter().zip(truth).filter(|(p, t)| p == t).count(),
            truth.len(),
        ),
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        macro_precision: 0.0,
        macro_recall: 0.0,
        macro_f1: 0.0,
    };
    for c in 0..NUM_CLASSES {
        let tp = preds
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t == c)
            .count();
        let predicted = preds.iter().filter(|&&p| p == c).count();
        let support = truth.iter().filter(|&&t| t == c).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let w = support as f64 / n;
        out.precision += w * precision;
        out.recall += w * recall;
        out.f1 += w * f1;
        out.macro_precision += precision / NUM_CLASSES as f64;
        out.macro_recall += recall / NUM_CLASSES as f64;
        out.macro_f1 += f1 / NUM_CLASSES as f64;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-tailed.
    pub p_value: f64,
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
pub fn t_two_tailed_p(t: f64, df: f64) -> Result<f64> {
    let x = df / (df + t * t);
    checked_beta_reg(df / 2.0, 0.5, x)
        .map_err(|e| Error::InvalidArgument(format!("incomplete beta: {e}")))
}

/// Paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "paired_t_test",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let k = a.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs k >= 2, got {k}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / k as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    if var.is_nan() || var <= 0.0 {
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    let t = mean / (var.sqrt() / (k as f64).sqrt());
    Ok(TTest {
        t_statistic: t,
        degrees_of_freedom: k - 1,
        p_value: t_two_tailed_p(t, (k - 1) as f64)?,
    })
}

/// Generation quality of one variant for both classes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GanQuality {
    pub is_mean_abn: f64,
    pub is_std_abn: f64,
    pub is_mean_norm: f64,
    pub is_std_norm: f64,
    pub fid_abn: f64,
    pub fid_norm: f64,
}

pub const TABLE1_HEADER: &str =
    "variant,is_mean_abn,is_std_abn,is_mean_norm,is_std_norm,fid_abn,fid_norm";
pub const TABLE2_HEADER: &str = "variant,accuracy,precision,recall,f1";

/// One variant's metrics as reported in the result tables.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub gan: Option<GanQuality>,
    pub classification: Option<ClassificationReport>,
}

impl MetricsReport {
    pub fn table1_row(&self) -> Option<String> {
        self.gan.map(|g| {
            format!(
                "{},{},{},{},{},{},{}",
                self.variant,
                g.is_mean_abn,
                g.is_std_abn,
                g.is_mean_norm,
                g.is_std_norm,
                g.fid_abn,
                g.fid_norm
            )
        })
    }

    pub fn table2_row(&self) -> Option<String> {
        self.classification.map(|c| {
            format!(
                "{},{},{},{},{}",
                self.variant, c.accuracy, c.precision, c.recall, c.f1
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: usize, cols: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn is_examples() {
        let uniform = fm(4, 2, &[0.5; 8]);
        assert_eq!(inception_score(&uniform, 2).unwrap(), (1.0, 0.0));
        let onehot = fm(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let (m, s) = inception_score(&onehot, 2).unwrap();
        assert!((m - 2.0).abs() < 1e-12 && s.abs() < 1e-12);
        assert!(inception_score(&uniform, 5).is_err());
        assert!(inception_score(&fm(1, 2, &[0.7, 0.7]), 1).is_err());
    }

    #[test]
    fn split_counts() {
        assert_eq!(default_is_splits(400), 10);
        assert_eq!(default_is_splits(1000), 10);
        assert_eq!(default_is_splits(399), 7);
        assert_eq!(default_is_splits(70), 2);
    }

    #[test]
    fn fid_closed_forms() {
        let a = (0.5f64).sqrt();
        let x = fm(2, 1, &[-a, a]);
        let y = fm(2, 1, &[2.0 - a, 2.0 + a]);
        assert!((frechet_distance(&x, &y).unwrap() - 4.0).abs() < 1e-6);
        let wide = fm(2, 1, &[-2.0 * a, 2.0 * a]);
        assert!((frechet_distance(&wide, &x).unwrap() - 1.0).abs() < 1e-6);
        assert!(frechet_distance(&x, &x).unwrap().abs() < 1e-6);
        assert!(frechet_distance(&fm(1, 1, &[0.0]), &x).is_err());
        assert!(frechet_distance(&x, &fm(1, 2, &[0.0, 1.0])).is_err());
    }

    #[test]
    fn report_examples() {
        let r = classification_report(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(
            (r.accuracy, r.precision, r.recall, r.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        let truth = [1, 1, 1, 1, 0, 0, 0, 0];
        let r = classification_report(&[1, 1, 1, 0, 0, 0, 0, 1], &truth).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            assert!((v - 0.75).abs() < 1e-12);
        }
        assert_eq!(
            classification_report(&[1; 8], &truth).unwrap().accuracy,
            0.5
        );
        assert!(classification_report(&[1], &[1, 0]).is_err());
        assert!(classification_report(&[2], &[1]).is_err());
    }

    #[test]
    fn t_test_examples() {
        let t = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert!((t.t_statistic - 4.2426).abs() < 1e-3);
        assert_eq!(t.degrees_of_freedom, 4);
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!((t_two_tailed_p(2.776, 4.0).unwrap() - 0.05).abs() < 2e-3);
    }
}
