//! One-vs-all linear SVMs trained by primal hinge-loss SGD.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            reg: 1e-4,
            epochs: 100,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg > 0.0) {
            return Err(Error::config("svm reg must be > 0"));
        }
        Ok(())
    }
}

/// Per-column standardization; constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns whose standard deviation falls below this are treated as constant.
const CONSTANT_STD: f64 = 1e-9;

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = check_rows(rows)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let std = var.into_iter().map(f64::sqrt).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn scale(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| if *s > CONSTANT_STD { (v - m) / s } else { 0.0 })
            .collect())
    }

    /// Inverse of [`scale`](Self::scale) on non-constant columns; constant
    /// columns return their mean.
    pub fn unscale(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| if *s > CONSTANT_STD { v * s + m } else { *m })
            .collect())
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let dim = rows.first().ok_or_else(|| Error::data("empty feature matrix"))?.len();
    for r in rows {
        check_dim(dim, r.len())?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value"));
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub w: Vec<f64>,
    pub b: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

/// `reg/2 · (‖w‖² + b²) + mean hinge loss`.
pub fn svm_objective(model: &BinarySvm, x: &[Vec<f64>], y: &[f64], reg: f64) -> f64 {
    let hinge: f64 = x.iter().zip(y).map(|(xi, yi)| (1.0 - yi * model.decision(xi)).max(0.0)).sum::<f64>() / x.len() as f64;
    0.5 * reg * (dot(&model.w, &model.w) + model.b * model.b) + hinge
}

/// Pegasos SGD with step `1 / (reg · t)`. The bias acts as the weight of a
/// constant unit feature and shrinks with the other weights.
pub fn svm_train_binary(x: &[Vec<f64>], y: &[f64], cfg: &SvmConfig, stream: u64) -> Result<BinarySvm> {
    cfg.validate()?;
    let dim = check_rows(x)?;
    check_dim(x.len(), y.len())?;
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::data("binary labels must be +1 or -1"));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::data("binary SVM training needs both labels"));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "svm", stream));
    let mut model = BinarySvm { w: vec![0.0; dim], b: 0.0 };
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.reg * t as f64);
            let violated = y[i] * model.decision(&x[i]) < 1.0;
            let shrink = 1.0 - eta * cfg.reg;
            model.w.iter_mut().for_each(|w| *w *= shrink);
            model.b *= shrink;
            if violated {
                model.w.iter_mut().zip(&x[i]).for_each(|(w, v)| *w += eta * y[i] * v);
                model.b += eta * y[i];
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub class_count: usize,
    pub feature_dim: usize,
    pub config: SvmConfig,
    /// One scaler per class model; all equal when every class was trained
    /// on the same feature matrix.
    pub scalers: Vec<Standardizer>,
    pub classes: Vec<BinarySvm>,
}

fn check_labels(labels: &[usize], class_count: usize) -> Result<()> {
    if class_count < 2 {
        return Err(Error::data("at least two classes are required"));
    }
    let mut seen = vec![false; class_count];
    for &l in labels {
        if l == 0 || l > class_count {
            return Err(Error::data(format!("label {l} outside 1..={class_count}")));
        }
        seen[l - 1] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::data(format!("class {} has no training instances", k + 1)));
    }
    Ok(())
}

fn train_class(rows: &[Vec<f64>], labels: &[usize], k: usize, cfg: &SvmConfig) -> Result<(Standardizer, BinarySvm)> {
    let scaler = Standardizer::fit(rows)?;
    let scaled = rows.iter().map(|r| scaler.scale(r)).collect::<Result<Vec<_>>>()?;
    let y: Vec<f64> = labels.iter().map(|&l| if l == k + 1 { 1.0 } else { -1.0 }).collect();
    Ok((scaler, svm_train_binary(&scaled, &y, cfg, k as u64)?))
}

/// Class `k` (1-based labels) against the rest, on one shared feature matrix.
pub fn svm_train_ova(features: &[Vec<f64>], labels: &[usize], class_count: usize, cfg: &SvmConfig) -> Result<SvmModel> {
    check_dim(features.len(), labels.len())?;
    check_labels(labels, class_count)?;
    let dim = check_rows(features)?;
    let scaler = Standardizer::fit(features)?;
    let scaled = features.iter().map(|r| scaler.scale(r)).collect::<Result<Vec<_>>>()?;
    let classes = (0..class_count)
        .map(|k| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k + 1 { 1.0 } else { -1.0 }).collect();
            svm_train_binary(&scaled, &y, cfg, k as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SvmModel {
        class_count,
        feature_dim: dim,
        config: cfg.clone(),
        scalers: vec![scaler; class_count],
        classes,
    })
}

/// Like [`svm_train_ova`], but class `k` trains on its own feature matrix
/// `features[k]` (rows aligned with `labels`) and keeps its own scaler.
pub fn svm_train_ova_per_class(features: &[Vec<Vec<f64>>], labels: &[usize], class_count: usize, cfg: &SvmConfig) -> Result<SvmModel> {
    check_dim(class_count, features.len())?;
    check_labels(labels, class_count)?;
    let dim = check_rows(&features[0])?;
    let mut scalers = Vec::with_capacity(class_count);
    let mut classes = Vec::with_capacity(class_count);
    for (k, rows) in features.iter().enumerate() {
        check_dim(labels.len(), rows.len())?;
        check_dim(dim, check_rows(rows)?)?;
        let (s, m) = train_class(rows, labels, k, cfg)?;
        scalers.push(s);
        classes.push(m);
    }
    Ok(SvmModel {
        class_count,
        feature_dim: dim,
        config: cfg.clone(),
        scalers,
        classes,
    })
}

/// Returns the 1-based label and the per-class scores. `variants` holds one
/// feature vector per class, or a single vector shared by all classes.
pub fn svm_predict(model: &SvmModel, variants: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    if variants.len() != model.class_count && variants.len() != 1 {
        return Err(Error::Dimension {
            expected: model.class_count,
            got: variants.len(),
        });
    }
    let scores = (0..model.class_count)
        .map(|k| {
            let x = &variants[if variants.len() == 1 { 0 } else { k }];
            check_dim(model.feature_dim, x.len())?;
            Ok(model.classes[k].decision(&model.scalers[k].scale(x)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = k;
        }
    }
    Ok((best + 1, scores))
}

impl SvmModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SvmModel = serde_json::from_str(text)?;
        check_dim(m.class_count, m.classes.len())?;
        check_dim(m.class_count, m.scalers.len())?;
        for (c, s) in m.classes.iter().zip(&m.scalers) {
            check_dim(m.feature_dim, c.w.len())?;
            check_dim(m.feature_dim, s.dim())?;
            if !c.w.iter().chain([&c.b]).all(|v| v.is_finite()) {
                return Err(Error::data("SVM model contains non-finite weights"));
            }
        }
        Ok(m)
    }
}
