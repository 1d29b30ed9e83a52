//! One-vs-one C-SVC trained with SMO using second-order working-set
//! selection, on z-scored features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-gamma |a - b|^2)`; `None` resolves to 1 / feature count.
    Rbf { gamma: Option<f64> },
    Linear,
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma.expect("resolved gamma") * d).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    fn resolved(self, dim: usize) -> Self {
        match self {
            Kernel::Rbf { gamma: None } => Kernel::Rbf {
                gamma: Some(1.0 / dim.max(1) as f64),
            },
            k => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub eps: f64,
    /// Z-score features with training statistics before training.
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf { gamma: None },
            c: 1.0,
            eps: 1e-3,
            standardize: true,
        }
    }
}

/// A binary machine separating `classes[pos]` (+1) from `classes[neg]` (-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub pos: usize,
    pub neg: usize,
    pub support: Vec<Vec<f64>>,
    /// `y_i * alpha_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// Original labels in ascending order; class index = position.
    pub classes: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub machines: Vec<BinaryMachine>,
}

/// Dual solution of one binary problem.
#[derive(Debug, Clone)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

/// Solves `min 1/2 a'Qa - sum(a)` s.t. `y'a = 0`, `0 <= a <= c`, with
/// `Q_ij = y_i y_j K_ij` given through the kernel matrix `k` (row-major n x n).
pub fn solve_binary(k: &[f64], y: &[f64], c: f64, eps: f64) -> BinarySolution {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let max_iter = (10_000_000usize).max(100 * n);
    let mut iterations = 0;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            gmax2 = gmax2.max(y[t] * grad[t]);
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t];
                if a <= 0.0 {
                    a = TAU;
                }
                if -b * b / a <= best {
                    best = -b * b / a;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < eps || j == usize::MAX {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let mut quad = k[i * n + i] + k[j * n + j] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    BinarySolution { alpha, rho, iterations }
}

/// Kernel matrix of a sample set, row-major.
pub fn kernel_matrix(kernel: &Kernel, xs: &[&[f64]]) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(xs[i], xs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn zscore(features: &[Vec<f64>], standardize: bool) -> (Vec<f64>, Vec<f64>) {
    let dim = features[0].len();
    if !standardize {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; dim];
    for f in features {
        var.iter_mut().zip(f).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

pub fn svm_train(features: &[Vec<f64>], labels: &[usize], cfg: &SvmConfig) -> Result<SvmModel> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} features for {} labels", features.len(), labels.len())));
    }
    if !(cfg.c > 0.0 && cfg.eps > 0.0) {
        return Err(Error::Argument("C and eps must be positive".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 classes, got {}", classes.len())));
    }
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::Shape(format!("feature of length {} among length {dim}", f.len())));
    }
    let kernel = cfg.kernel.resolved(dim);
    let (mean, std) = zscore(features, cfg.standardize);
    let scaled: Vec<Vec<f64>> = features.iter().map(|f| apply(f, &mean, &std)).collect();
    let index: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("known label"))
        .collect();

    let mut machines = Vec::new();
    for pos in 0..classes.len() {
        for neg in pos + 1..classes.len() {
            let members: Vec<usize> = (0..index.len()).filter(|&s| index[s] == pos || index[s] == neg).collect();
            let xs: Vec<&[f64]> = members.iter().map(|&s| scaled[s].as_slice()).collect();
            let y: Vec<f64> = members.iter().map(|&s| if index[s] == pos { 1.0 } else { -1.0 }).collect();
            let k = kernel_matrix(&kernel, &xs);
            let sol = solve_binary(&k, &y, cfg.c, cfg.eps);
            let (mut support, mut coef) = (Vec::new(), Vec::new());
            for (t, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    support.push(xs[t].to_vec());
                    coef.push(y[t] * a);
                }
            }
            machines.push(BinaryMachine {
                pos,
                neg,
                support,
                coef,
                rho: sol.rho,
            });
        }
    }
    Ok(SvmModel {
        kernel,
        c: cfg.c,
        classes,
        mean,
        std,
        machines,
    })
}

fn apply(f: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    f.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scale(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature of length {} for a model trained on {}",
                feature.len(),
                self.dim()
            )));
        }
        Ok(apply(feature, &self.mean, &self.std))
    }

    /// Votes per class index from all pairwise machines.
    pub fn votes(&self, feature: &[f64]) -> Result<Vec<usize>> {
        let x = self.scale(feature)?;
        let mut votes = vec![0; self.classes.len()];
        for m in &self.machines {
            if m.decision(&self.kernel, &x) > 0.0 {
                votes[m.pos] += 1;
            } else {
                votes[m.neg] += 1;
            }
        }
        Ok(votes)
    }

    /// Decision values of every machine, in training order.
    pub fn decisions(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let x = self.scale(feature)?;
        Ok(self.machines.iter().map(|m| m.decision(&self.kernel, &x)).collect())
    }

    /// Majority vote, ties to the lower class index; returns the original label.
    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        let votes = self.votes(feature)?;
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        Ok(self.classes[best])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::format("svm", e.to_string()))?;
        for m in &model.machines {
            let sum: f64 = m.coef.iter().sum();
            if m.coef.iter().any(|c| c.abs() > model.c * (1.0 + 1e-9)) || sum.abs() > 1e-6 * model.c.max(1.0) * m.coef.len().max(1) as f64 {
                return Err(Error::format("svm", "dual coefficients violate the box or balance constraint"));
            }
        }
        Ok(model)
    }
}

pub fn svm_predict(model: &SvmModel, feature: &[f64]) -> Result<usize> {
    model.predict(feature)
}

/// Writes feature rows as CSV with the label in the first column.
pub fn write_features_csv<W: std::io::Write>(mut out: W, features: &[Vec<f64>], labels: &[usize]) -> std::io::Result<()> {
    for (f, l) in features.iter().zip(labels) {
        write!(out, "{l}")?;
        for v in f {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
