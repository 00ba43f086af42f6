use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `y = w . standardize(x) + b`, with the standardization stored alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias
            + x.iter()
                .zip(&self.weights)
                .zip(self.mean.iter().zip(&self.scale))
                .map(|((&v, &w), (&m, &s))| w * (v - m) / s)
                .sum::<f64>()
    }

    /// Weights and bias on the raw (unstandardized) features.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let w: Vec<f64> = self.weights.iter().zip(&self.scale).map(|(w, s)| w / s).collect();
        let b = self.bias - w.iter().zip(&self.mean).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        crate::numcore::kernels::sigmoid(self.decision(x))
    }

    pub fn classify(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

fn check_design(features: &[Vec<f64>], labels: usize) -> Result<usize> {
    if features.len() < 2 {
        return Err(Error::Data(format!("need at least 2 examples, got {}", features.len())));
    }
    if features.len() != labels {
        return Err(Error::Shape(format!("{} feature rows for {labels} labels", features.len())));
    }
    let p = features[0].len();
    if features.iter().any(|f| f.len() != p) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    Ok(p)
}

fn column_stats(features: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let mut mean = vec![0.0; p];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; p];
    for f in features {
        for j in 0..p {
            scale[j] += (f[j] - mean[j]).powi(2) / n;
        }
    }
    // constant columns are centered but left unscaled
    let scale = scale.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: 1e-3, tolerance: 1e-5, max_iters: 10_000 }
    }
}

/// L2-regularized logistic regression by full-batch gradient descent on
/// standardized features (the bias is not penalized).
pub fn fit_logistic(features: &[Vec<f64>], labels: &[bool], cfg: &LogisticConfig) -> Result<LinearModel> {
    let p = check_design(features, labels.len())?;
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Data("logistic regression needs both classes".into()));
    }
    if cfg.l2 < 0.0 {
        return Err(Error::Config("l2 must be non-negative".into()));
    }
    let (mean, scale) = column_stats(features, p);
    let x: Vec<Vec<f64>> =
        features.iter().map(|f| (0..p).map(|j| (f[j] - mean[j]) / scale[j]).collect()).collect();
    let n = x.len() as f64;
    // gradient Lipschitz bound of the mean loss
    let frob: f64 = x.iter().flatten().map(|v| v * v).sum::<f64>() / n;
    let step = 1.0 / (0.25 * (frob + 1.0) + cfg.l2);
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    for _ in 0..cfg.max_iters {
        let mut gw: Vec<f64> = w.iter().map(|wj| cfg.l2 * wj).collect();
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(labels) {
            let z = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = (crate::numcore::kernels::sigmoid(z) - if yi { 1.0 } else { 0.0 }) / n;
            gb += r;
            for (g, v) in gw.iter_mut().zip(xi) {
                *g += r * v;
            }
        }
        let norm = (gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if norm <= cfg.tolerance {
            break;
        }
        b -= step * gb;
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= step * g;
        }
    }
    Ok(LinearModel { weights: w, bias: b, mean, scale })
}

/// Ridge regression on centered features via the normal equations
/// `(Xc^T Xc + l2 I) w = Xc^T yc`; the bias is the unpenalized intercept.
pub fn fit_ridge(features: &[Vec<f64>], targets: &[f64], l2: f64) -> Result<LinearModel> {
    let p = check_design(features, targets.len())?;
    if l2 < 0.0 {
        return Err(Error::Config("l2 must be non-negative".into()));
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; p];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let ymean = targets.iter().sum::<f64>() / n;
    let mut a = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (f, &y) in features.iter().zip(targets) {
        let c: Vec<f64> = f.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..p {
            rhs[i] += c[i] * (y - ymean);
            for j in 0..p {
                a[i * p + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..p {
        a[i * p + i] += l2;
    }
    let w = cholesky_solve(&a, &rhs, p).map_err(|_| {
        Error::Singular(if l2 == 0.0 {
            "normal equations are singular; use l2 > 0".into()
        } else {
            "normal equations are singular".into()
        })
    })?;
    let bias = ymean - w.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel { weights: w, bias, mean: vec![0.0; p], scale: vec![1.0; p] })
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major `p x p`).
pub fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = a[i * p + j] - (0..j).map(|k| l[i * p + k] * l[j * p + k]).sum::<f64>();
            if i == j {
                if s <= 1e-12 * max_diag.max(f64::MIN_POSITIVE) {
                    return Err(Error::Singular(format!("pivot {i} is not positive")));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y = vec![0.0; p];
    for i in 0..p {
        y[i] = (b[i] - (0..i).map(|k| l[i * p + k] * y[k]).sum::<f64>()) / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        x[i] = (y[i] - (i + 1..p).map(|k| l[k * p + i] * x[k]).sum::<f64>()) / l[i * p + i];
    }
    Ok(x)
}

/// Sample Pearson correlation.
pub fn pearson(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if predictions.len() < 2 {
        return Err(Error::Data("pearson needs at least 2 points".into()));
    }
    let n = predictions.len() as f64;
    let mx = predictions.iter().sum::<f64>() / n;
    let my = labels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in predictions.iter().zip(labels) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Data("pearson correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn accuracy(predicted: &[bool], labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_pair() {
        let m = fit_logistic(&[vec![-1.0], vec![1.0]], &[false, true], &LogisticConfig::default()).unwrap();
        assert!(!m.classify(&[-1.0]) && m.classify(&[1.0]));
    }

    #[test]
    fn logistic_needs_two_classes() {
        let r = fit_logistic(&[vec![0.0], vec![1.0]], &[true, true], &LogisticConfig::default());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn logistic_reaches_a_stationary_point() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.77).sin() + if i % 2 == 0 { 0.8 } else { -0.8 }]).collect();
        let ys: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let cfg = LogisticConfig::default();
        let m = fit_logistic(&xs, &ys, &cfg).unwrap();
        assert!(m.weights[0] > 0.0);
        let loss = |w: f64, b: f64| {
            let mut l = 0.5 * cfg.l2 * w * w;
            for (x, &y) in xs.iter().zip(&ys) {
                let z = b + w * (x[0] - m.mean[0]) / m.scale[0];
                let p = crate::numcore::kernels::sigmoid(z);
                l -= (if y { p } else { 1.0 - p }).ln() / xs.len() as f64;
            }
            l
        };
        let base = loss(m.weights[0], m.bias);
        for (dw, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            assert!(loss(m.weights[0] + dw, m.bias + db) >= base - 1e-7);
        }
    }

    #[test]
    fn ridge_recovers_exact_line() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.5 - 1.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] + 1.0).collect();
        let m = fit_ridge(&xs, &ys, 0.0).unwrap();
        let (w, b) = m.raw_coefficients();
        assert!((w[0] - 2.0).abs() < 1e-6 && (b - 1.0).abs() < 1e-6);
    }

    #[test]
    fn heavy_ridge_predicts_the_mean() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let ys: Vec<f64> = (0..6).map(|i| i as f64 * 3.0 - 2.0).collect();
        let m = fit_ridge(&xs, &ys, 1e12).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((m.decision(&[10.0, 3.0]) - 5.5).abs() < 1e-6);
    }

    #[test]
    fn singular_without_l2() {
        let xs = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let err = fit_ridge(&xs, &[1.0, 2.0, 3.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("l2 > 0"), "{err}");
        assert!(fit_ridge(&xs, &[1.0, 2.0, 3.0], 0.1).is_ok());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[-1.0, -2.0, -3.0], &[1.0, 2.0, 3.0]).unwrap() + 1.0).abs() < 1e-12);
        // cov 2.5, var 1 and 6.333: 2.5 / sqrt(6.333)
        let want = 2.5 / (19.0f64 / 3.0).sqrt();
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.9934).abs() < 1e-4);
        assert!(pearson(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }
}
