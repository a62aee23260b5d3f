//! Supervised linear baselines: multinomial logistic regression and a
//! one-vs-rest linear SVM, both on standardized features.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bayes::Partition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logit,
    Svm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHyper {
    /// L2 strength on non-bias weights. The data term is a mean over
    /// examples, so duplicating the training set changes nothing.
    pub lambda: f64,
    pub max_iter: usize,
    /// Gradient-norm tolerance for the logistic solver.
    pub tol: f64,
    pub epochs: usize,
    /// Seeds the SVM shuffle schedule.
    pub seed: u64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        LinearHyper {
            lambda: 1e-4,
            max_iter: 5000,
            tol: 1e-8,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearClassifier {
    pub kind: LinearKind,
    /// One row per class; the last column is the bias.
    pub weights: DMatrix<f64>,
    /// Original label of each weight row.
    pub classes: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub lambda: f64,
    /// Solver iterations (LOGIT) or epochs (SVM) run.
    pub iterations: usize,
}

fn standardize(x: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    DMatrix::from_fn(n, d + 1, |i, c| if c == d { 1.0 } else { (x[(i, c)] - mean[c]) / scale[c] })
}

impl LinearClassifier {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Decision values, one column per class.
    pub fn decision_values(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        Ok(standardize(x, &self.mean, &self.scale) * self.weights.transpose())
    }

    /// Predicted original labels.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = self.decision_values(x)?;
        Ok((0..z.nrows())
            .map(|i| self.classes[z.row(i).transpose().argmax().0])
            .collect())
    }

    pub fn classify(&self, x: &DMatrix<f64>) -> Result<Partition> {
        Ok(Partition::from_indices(&self.predict(x)?))
    }
}

pub fn train_linear(kind: LinearKind, x: &DMatrix<f64>, labels: &[usize], hyper: &LinearHyper) -> Result<LinearClassifier> {
    if labels.len() != x.nrows() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: labels.len(),
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClassTraining);
    }
    let (n, d) = (x.nrows(), x.ncols());
    let mean: Vec<f64> = (0..d).map(|c| x.column(c).mean()).collect();
    let scale: Vec<f64> = (0..d)
        .map(|c| {
            let var = x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let xs = standardize(x, &mean, &scale);
    let ys: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let k = classes.len();
    let (weights, iterations) = match kind {
        LinearKind::Logit => minimize_logit(&xs, &ys, k, hyper, DMatrix::zeros(k, d + 1)),
        LinearKind::Svm => (train_svm(&xs, &ys, k, hyper), hyper.epochs),
    };
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter(format!("{kind:?} training diverged")));
    }
    Ok(LinearClassifier {
        kind,
        weights,
        classes,
        mean,
        scale,
        lambda: hyper.lambda,
        iterations,
    })
}

/// Mean multinomial cross-entropy plus `(lambda/2)||W||^2` over non-bias
/// weights, and its gradient.
pub(crate) fn logit_loss_grad(w: &DMatrix<f64>, xs: &DMatrix<f64>, ys: &[usize], lambda: f64) -> (f64, DMatrix<f64>) {
    let (n, p) = (xs.nrows(), xs.ncols());
    let k = w.nrows();
    let z = xs * w.transpose();
    let mut grad = DMatrix::zeros(k, p);
    let mut loss = 0.0;
    let mut prob = vec![0.0; k];
    for i in 0..n {
        let max = z.row(i).max();
        let mut total = 0.0;
        for c in 0..k {
            prob[c] = (z[(i, c)] - max).exp();
            total += prob[c];
        }
        loss += max + total.ln() - z[(i, ys[i])];
        for c in 0..k {
            let g = prob[c] / total - if c == ys[i] { 1.0 } else { 0.0 };
            for j in 0..p {
                grad[(c, j)] += g * xs[(i, j)];
            }
        }
    }
    loss /= n as f64;
    grad /= n as f64;
    for c in 0..k {
        for j in 0..p - 1 {
            loss += 0.5 * lambda * w[(c, j)] * w[(c, j)];
            grad[(c, j)] += lambda * w[(c, j)];
        }
    }
    (loss, grad)
}

/// Gradient descent with a Barzilai–Borwein trial step and Armijo
/// backtracking.
pub(crate) fn minimize_logit(
    xs: &DMatrix<f64>,
    ys: &[usize],
    k: usize,
    hyper: &LinearHyper,
    init: DMatrix<f64>,
) -> (DMatrix<f64>, usize) {
    debug_assert_eq!(init.nrows(), k);
    let mut w = init;
    let (mut loss, mut grad) = logit_loss_grad(&w, xs, ys, hyper.lambda);
    let mut step = 1.0;
    let mut iters = 0;
    while iters < hyper.max_iter && grad.norm() >= hyper.tol {
        iters += 1;
        let g2 = grad.norm_squared();
        let mut t = step;
        let (next, next_loss, next_grad) = loop {
            let cand = &w - &grad * t;
            let (l, g) = logit_loss_grad(&cand, xs, ys, hyper.lambda);
            if l <= loss - 1e-4 * t * g2 || t < 1e-16 {
                break (cand, l, g);
            }
            t *= 0.5;
        };
        let s = &next - &w;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 { (s.norm_squared() / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        if next_loss > loss {
            break;
        }
        w = next;
        loss = next_loss;
        grad = next_grad;
    }
    (w, iters)
}

/// Pegasos-style subgradient descent per class, bias as an augmented
/// feature, returning the average iterate over the final epoch.
fn train_svm(xs: &DMatrix<f64>, ys: &[usize], k: usize, hyper: &LinearHyper) -> DMatrix<f64> {
    let (n, p) = (xs.nrows(), xs.ncols());
    let lambda = hyper.lambda;
    let epochs = hyper.epochs.max(1);
    let mut out = DMatrix::zeros(k, p);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut schedule: Vec<Vec<usize>> = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        schedule.push(order.clone());
    }
    for c in 0..k {
        let mut w = vec![0.0; p];
        let mut avg = vec![0.0; p];
        let mut t = 0usize;
        for (e, order) in schedule.iter().enumerate() {
            for &i in order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let y = if ys[i] == c { 1.0 } else { -1.0 };
                let margin: f64 = y * (0..p).map(|j| w[j] * xs[(i, j)]).sum::<f64>();
                let shrink = 1.0 - eta * lambda;
                for wj in w.iter_mut() {
                    *wj *= shrink;
                }
                if margin < 1.0 {
                    for j in 0..p {
                        w[j] += eta * y * xs[(i, j)];
                    }
                }
                if e + 1 == epochs {
                    for j in 0..p {
                        avg[j] += w[j];
                    }
                }
            }
        }
        for j in 0..p {
            out[(c, j)] = avg[j] / n as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, n_per: usize, centers: &[(f64, f64)]) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_per * centers.len();
        let mut labels = Vec::with_capacity(n);
        let x = DMatrix::from_fn(n, 2, |i, c| {
            let (cx, cy) = centers[i / n_per];
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 0.5 + if c == 0 { cx } else { cy }
        });
        for i in 0..n {
            labels.push(10 + i / n_per);
        }
        (x, labels)
    }

    #[test]
    fn separable_data_is_learned_by_both() {
        let (x, y) = blobs(1, 40, &[(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)]);
        for kind in [LinearKind::Logit, LinearKind::Svm] {
            let clf = train_linear(kind, &x, &y, &LinearHyper::default()).unwrap();
            assert_eq!(clf.predict(&x).unwrap(), y, "{kind:?}");
            assert!(clf.weights.iter().all(|w| w.is_finite()));
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::zeros(3, 2);
        let err = train_linear(LinearKind::Logit, &x, &[1, 1, 1], &LinearHyper::default()).unwrap_err();
        assert!(matches!(err, Error::SingleClassTraining));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs(2, 10, &[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]);
        let xs = standardize(&x, &[1.0, 0.3], &[0.8, 0.6]);
        let ys: Vec<usize> = y.iter().map(|l| l - 10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let lambda = 0.3;
        let (_, grad) = logit_loss_grad(&w, &xs, &ys, lambda);
        let h = 1e-5;
        for idx in 0..w.len() {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (logit_loss_grad(&plus, &xs, &ys, lambda).0 - logit_loss_grad(&minus, &xs, &ys, lambda).0) / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-6, "component {idx}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn loss_is_convex_across_restarts() {
        let (x, y) = blobs(3, 30, &[(0.0, 0.0), (1.0, 0.5), (0.5, 1.5)]);
        let mean = [x.column(0).mean(), x.column(1).mean()];
        let xs = standardize(&x, &mean, &[1.0, 1.0]);
        let ys: Vec<usize> = y.iter().map(|l| l - 10).collect();
        let hyper = LinearHyper::default();
        let (w0, _) = minimize_logit(&xs, &ys, 3, &hyper, DMatrix::zeros(3, 3));
        let base = logit_loss_grad(&w0, &xs, &ys, hyper.lambda).0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let best = (0..10)
            .map(|_| {
                let init = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-3.0..3.0));
                let (w, _) = minimize_logit(&xs, &ys, 3, &hyper, init);
                logit_loss_grad(&w, &xs, &ys, hyper.lambda).0
            })
            .fold(f64::INFINITY, f64::min);
        assert!((base - best).abs() < 1e-6, "{base} vs {best}");
    }

    #[test]
    fn duplicated_training_set_gives_same_decisions() {
        let (x, y) = blobs(4, 20, &[(0.0, 0.0), (1.5, 0.0)]);
        let x2 = DMatrix::from_fn(80, 2, |i, c| x[(i % 40, c)]);
        let y2: Vec<usize> = (0..80).map(|i| y[i % 40]).collect();
        let a = train_linear(LinearKind::Logit, &x, &y, &LinearHyper::default()).unwrap();
        let b = train_linear(LinearKind::Logit, &x2, &y2, &LinearHyper::default()).unwrap();
        assert!((a.weights - b.weights).amax() < 1e-6);
    }

    #[test]
    fn shift_invariant_partitions() {
        let (x, y) = blobs(6, 25, &[(0.0, 0.0), (1.0, 1.0), (2.0, -1.0)]);
        let shifted = x.map(|v| v + 1234.5);
        for kind in [LinearKind::Logit, LinearKind::Svm] {
            let a = train_linear(kind, &x, &y, &LinearHyper::default()).unwrap();
            let b = train_linear(kind, &shifted, &y, &LinearHyper::default()).unwrap();
            assert_eq!(a.classify(&x).unwrap(), b.classify(&shifted).unwrap(), "{kind:?}");
        }
    }

    #[test]
    fn eval_dimension_checked() {
        let (x, y) = blobs(7, 5, &[(0.0, 0.0), (3.0, 3.0)]);
        let clf = train_linear(LinearKind::Svm, &x, &y, &LinearHyper::default()).unwrap();
        assert!(clf.predict(&DMatrix::zeros(2, 3)).is_err());
    }
}
