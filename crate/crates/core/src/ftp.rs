//! Fourier temporal pyramid features.
//!
//! A warped sequence is split into 1, 2, 4, ... segments per level; every
//! feature dimension of every segment contributes the magnitudes of its
//! first `k` DFT coefficients, divided by the segment length. Output order
//! is level, then segment, then dimension, then coefficient.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtpConfig {
    pub levels: usize,
    pub segments_per_level: Vec<usize>,
    pub coeffs_per_segment: usize,
}

impl Default for FtpConfig {
    fn default() -> Self {
        FtpConfig {
            levels: 3,
            segments_per_level: vec![1, 2, 4],
            coeffs_per_segment: 4,
        }
    }
}

impl FtpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != self.segments_per_level.len() || self.levels == 0 {
            return Err(Error::config("levels must equal the number of segment counts and be >= 1"));
        }
        if self.segments_per_level[0] == 0 || self.segments_per_level.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("segment counts must be positive and strictly increasing"));
        }
        if self.coeffs_per_segment == 0 {
            return Err(Error::config("coeffs_per_segment must be >= 1"));
        }
        Ok(())
    }

    pub fn total_segments(&self) -> usize {
        self.segments_per_level.iter().sum()
    }

    /// Feature length for per-frame dimension `dim`.
    pub fn feature_len(&self, dim: usize) -> usize {
        dim * self.total_segments() * self.coeffs_per_segment
    }

    /// Checks that every segment of a length-`t` sequence holds at least `k`
    /// frames.
    pub fn check_length(&self, t: usize) -> Result<()> {
        self.validate()?;
        for &m in &self.segments_per_level {
            let shortest = (0..m).map(|s| segment_bounds(t, m, s).len()).min().unwrap_or(0);
            if shortest < self.coeffs_per_segment {
                return Err(Error::config(format!(
                    "sequence length {t} leaves a segment of {shortest} frames at {m} segments, fewer than k = {}",
                    self.coeffs_per_segment
                )));
            }
        }
        Ok(())
    }
}

/// 0-based frame range of segment `s` (0-based) out of `m`.
pub fn segment_bounds(t: usize, m: usize, s: usize) -> std::ops::Range<usize> {
    (s * t / m)..((s + 1) * t / m)
}

/// `|X_f| / n` for frequencies `0..k` of the direct DFT.
pub fn dft_low_freq(signal: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    if k > n || n == 0 {
        return Err(Error::data(format!("cannot take {k} coefficients of a length-{n} signal")));
    }
    Ok((0..k)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in signal.iter().enumerate() {
                // reduce the phase index first to keep the angle small
                let angle = -2.0 * PI * ((f * t) % n) as f64 / n as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            re.hypot(im) / n as f64
        })
        .collect())
}

pub fn ftp_features(warped: &[Vec<f64>], cfg: &FtpConfig) -> Result<Vec<f64>> {
    let t = warped.len();
    let dim = warped.first().map_or(0, |f| f.len());
    for f in warped {
        check_dim(dim, f.len())?;
    }
    cfg.check_length(t)?;
    let mut out = Vec::with_capacity(cfg.feature_len(dim));
    let mut column = Vec::with_capacity(t);
    for &m in &cfg.segments_per_level {
        for s in 0..m {
            let range = segment_bounds(t, m, s);
            for d in 0..dim {
                column.clear();
                column.extend(warped[range.clone()].iter().map(|f| f[d]));
                out.extend(dft_low_freq(&column, cfg.coeffs_per_segment)?);
            }
        }
    }
    Ok(out)
}

/// Column layout recorded next to an exported feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub ftp: FtpConfig,
    pub frame_dim: usize,
    pub rows: usize,
    pub columns: usize,
    /// Nesting of the column index, outermost first.
    pub column_order: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub instance_ids: Vec<String>,
}

/// Writes one CSV row per instance to `path` and the layout to
/// `path` with `.json` appended.
pub fn export_feature_matrix(
    path: &Path,
    rows: &[Vec<f64>],
    labels: &[Option<usize>],
    instance_ids: &[String],
    cfg: &FtpConfig,
    frame_dim: usize,
) -> Result<PathBuf> {
    let columns = cfg.feature_len(frame_dim);
    check_dim(rows.len(), labels.len())?;
    check_dim(rows.len(), instance_ids.len())?;
    let mut buf = Vec::new();
    for r in rows {
        check_dim(columns, r.len())?;
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        writeln!(buf, "{}", line.join(","))?;
    }
    std::fs::write(path, buf)?;
    let sidecar = FeatureSidecar {
        ftp: cfg.clone(),
        frame_dim,
        rows: rows.len(),
        columns,
        column_order: ["level", "segment", "dimension", "coefficient"].map(String::from).to_vec(),
        labels: labels.to_vec(),
        instance_ids: instance_ids.to_vec(),
    };
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    let side = PathBuf::from(side);
    std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(side)
}
