//! Temporal registration of feature sequences against class phantoms.
//!
//! Indices are 0-based throughout. A window of radius `Δ` around frame `i`
//! is `[i − Δ, i + Δ]` clipped to the sequence.

use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::sq_dist;
use crate::rng::{derive_seed, rng_from_seed};

/// One frame-level feature vector per time step.
pub type Frames = [Vec<f64>];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistrationMethod {
    #[default]
    Lwsr,
    Dtw,
    /// Sequences are used as resampled, without warping.
    None,
}

impl FromStr for RegistrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lwsr" => Ok(Self::Lwsr),
            "dtw" => Ok(Self::Dtw),
            "none" => Ok(Self::None),
            other => Err(Error::config(format!("unknown registration method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub method: RegistrationMethod,
    /// Intra window radius; `None` means `⌊T / 14⌋`, half a chunk.
    pub delta: Option<usize>,
    /// Inter window radius; `None` means `⌊T / 14⌋`.
    pub delta_prime: Option<usize>,
    pub eta: f64,
    pub zeta: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            method: RegistrationMethod::Lwsr,
            delta: None,
            delta_prime: None,
            eta: 0.2,
            zeta: 1e-4,
            max_iters: 20,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn delta_for(&self, t: usize) -> usize {
        self.delta.unwrap_or(t / 14)
    }

    pub fn delta_prime_for(&self, t: usize) -> usize {
        self.delta_prime.unwrap_or(t / 14)
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("eta must lie in [0, 1]"));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::config("zeta must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be >= 1"));
        }
        for (name, d) in [("delta", self.delta_for(t)), ("delta_prime", self.delta_prime_for(t))] {
            if 2 * d + 1 > t {
                return Err(Error::config(format!("{name} window 2*{d}+1 exceeds sequence length {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpingPath {
    /// `(source index, template index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

fn check_frames(name: &str, frames: &Frames) -> Result<usize> {
    let first = frames.first().ok_or_else(|| Error::data(format!("{name} sequence is empty")))?;
    for f in frames {
        check_dim(first.len(), f.len())?;
    }
    Ok(first.len())
}

/// Minimal-cost monotone alignment with fixed endpoints, squared Euclidean
/// frame cost. On equal costs the diagonal step wins, then the step that
/// advances only the source.
pub fn dtw_align(template: &Frames, h: &Frames) -> Result<WarpingPath> {
    let dp = check_frames("template", template)?;
    let dh = check_frames("source", h)?;
    check_dim(dp, dh)?;
    let (n, m) = (h.len(), template.len());
    // acc[i][j]: best cost of a path ending at (i, j); step[i][j]: 0 diag, 1 source-only, 2 template-only
    let mut acc = vec![f64::INFINITY; n * m];
    let mut step = vec![0u8; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = sq_dist(&h[i], &template[j]);
            if i == 0 && j == 0 {
                acc[0] = c;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut choice = 0;
            let candidates = [
                (i > 0 && j > 0).then(|| acc[(i - 1) * m + j - 1]),
                (i > 0).then(|| acc[(i - 1) * m + j]),
                (j > 0).then(|| acc[i * m + j - 1]),
            ];
            for (k, cand) in candidates.iter().enumerate() {
                if let Some(v) = cand {
                    if *v < best {
                        best = *v;
                        choice = k as u8;
                    }
                }
            }
            acc[i * m + j] = best + c;
            step[i * m + j] = choice;
        }
    }
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        match step[i * m + j] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    let total_cost = pairs.iter().map(|&(i, j)| sq_dist(&h[i], &template[j])).sum();
    Ok(WarpingPath { pairs, total_cost })
}

fn window(i: usize, radius: usize, len: usize) -> std::ops::RangeInclusive<usize> {
    i.saturating_sub(radius)..=(i + radius).min(len - 1)
}

fn lwsr_scan(template: &Frames, h: &Frames, i: usize, radius: usize, farthest: bool) -> Result<usize> {
    if i >= h.len() {
        return Err(Error::data(format!("frame index {i} out of range 0..{}", h.len())));
    }
    check_dim(template.len(), h.len())?;
    let mut best_j = usize::MAX;
    let mut best = 0.0;
    for j in window(i, radius, template.len()) {
        let d = sq_dist(&template[j], &h[i]);
        let better = best_j == usize::MAX || if farthest { d > best } else { d < best };
        if better {
            best = d;
            best_j = j;
        }
    }
    Ok(best_j)
}

/// Template index in the window of `i` nearest to `h[i]`; ties go to the
/// smallest index.
pub fn lwsr_intra(template: &Frames, h: &Frames, i: usize, delta: usize) -> Result<usize> {
    lwsr_scan(template, h, i, delta, false)
}

/// Template index in the window of `i` farthest from `h[i]`; ties go to the
/// smallest index.
pub fn lwsr_inter(template: &Frames, h: &Frames, i: usize, delta_prime: usize) -> Result<usize> {
    lwsr_scan(template, h, i, delta_prime, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpMode {
    Intra,
    Inter,
}

/// Slot `j` receives the mean of every source frame assigned to it; empty
/// slots are interpolated linearly between the nearest filled slots and
/// copied at the ends.
pub fn assign_slots(h: &Frames, assignments: &[(usize, usize)], slots: usize) -> Vec<Vec<f64>> {
    let dim = h.first().map_or(0, |f| f.len());
    let mut sums = vec![vec![0.0; dim]; slots];
    let mut counts = vec![0usize; slots];
    for &(i, j) in assignments {
        sums[j].iter_mut().zip(&h[i]).for_each(|(s, v)| *s += v);
        counts[j] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    let filled: Vec<usize> = (0..slots).filter(|&j| counts[j] > 0).collect();
    if filled.is_empty() {
        return sums;
    }
    for j in 0..slots {
        if counts[j] > 0 {
            continue;
        }
        let next = filled.partition_point(|&f| f < j);
        sums[j] = match (next.checked_sub(1).map(|k| filled[k]), filled.get(next)) {
            (Some(a), Some(&b)) => {
                let w = (j - a) as f64 / (b - a) as f64;
                sums[a].iter().zip(&sums[b]).map(|(x, y)| (1.0 - w) * x + w * y).collect()
            }
            (Some(a), None) => sums[a].clone(),
            (None, Some(&b)) => sums[b].clone(),
            (None, None) => unreachable!("at least one filled slot"),
        };
    }
    sums
}

/// Warps `h` onto the time axis of `template` with the configured method.
/// The result always has the template's length.
pub fn warp_sequence(template: &Frames, h: &Frames, mode: WarpMode, cfg: &RegistrationConfig) -> Result<Vec<Vec<f64>>> {
    let dp = check_frames("template", template)?;
    check_dim(dp, check_frames("source", h)?)?;
    let t = template.len();
    let assignments: Vec<(usize, usize)> = match cfg.method {
        RegistrationMethod::Dtw => dtw_align(template, h)?.pairs,
        RegistrationMethod::None => {
            check_dim(t, h.len())?;
            return Ok(h.to_vec());
        }
        RegistrationMethod::Lwsr => {
            check_dim(t, h.len())?;
            (0..h.len())
                .map(|i| {
                    let j = match mode {
                        WarpMode::Intra => lwsr_intra(template, h, i, cfg.delta_for(t))?,
                        WarpMode::Inter => lwsr_inter(template, h, i, cfg.delta_prime_for(t))?,
                    };
                    Ok((i, j))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(assign_slots(h, &assignments, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTemplate {
    pub class_id: usize,
    pub t: usize,
    pub atoms: Vec<Vec<f64>>,
    pub config: RegistrationConfig,
}

impl PhantomTemplate {
    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PhantomTemplate = serde_json::from_str(text)?;
        check_dim(p.t, p.atoms.len())?;
        check_frames("phantom", &p.atoms)?;
        Ok(p)
    }
}

/// One pass of the phantom loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomIteration {
    /// For each other class, the index of the sequence drawn from its pool.
    pub sampled: Vec<usize>,
    /// Blended candidate `P′`.
    pub candidate: Vec<Vec<f64>>,
    /// `‖P′ − P‖²`.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomOutcome {
    pub template: PhantomTemplate,
    pub trace: Vec<PhantomIteration>,
    pub converged: bool,
}

fn mean_frames(seqs: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n = seqs.len() as f64;
    let mut out = vec![vec![0.0; seqs[0][0].len()]; seqs[0].len()];
    for s in seqs {
        for (o, f) in out.iter_mut().zip(s) {
            o.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        }
    }
    out.iter_mut().flatten().for_each(|v| *v /= n);
    out
}

fn frames_sq_dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| sq_dist(x, y)).sum()
}

/// Iterative phantom estimation for one class. Starts from the first class
/// sequence; every iteration intra-warps all class sequences, inter-warps
/// one randomly drawn sequence per other class, and blends
/// `P′ = (1 − η)·mean(W) + η·mean(W′)`. Stops when `‖P′ − P‖² ≤ ζ`, keeping
/// the current `P`, or after `max_iters` iterations.
pub fn compute_phantom(
    class_id: usize,
    class_sequences: &[&Frames],
    other_class_pools: &[Vec<&Frames>],
    cfg: &RegistrationConfig,
) -> Result<PhantomOutcome> {
    let first = class_sequences
        .first()
        .ok_or_else(|| Error::data(format!("class {class_id} has no training sequences")))?;
    let dim = check_frames("class", first)?;
    let t = first.len();
    cfg.validate(t)?;
    for s in class_sequences.iter().chain(other_class_pools.iter().flatten()) {
        check_dim(dim, check_frames("training", s)?)?;
    }
    if cfg.eta > 0.0 && other_class_pools.is_empty() {
        return Err(Error::data("eta > 0 needs sequences from at least one other class"));
    }
    if other_class_pools.iter().any(|p| p.is_empty()) {
        return Err(Error::data("every other class must contribute at least one sequence"));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "phantom", class_id as u64));
    let mut p: Vec<Vec<f64>> = first.to_vec();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let w: Vec<Vec<Vec<f64>>> = class_sequences
            .iter()
            .map(|h| warp_sequence(&p, h, WarpMode::Intra, cfg))
            .collect::<Result<_>>()?;
        let sampled: Vec<usize> = other_class_pools.iter().map(|pool| rng.gen_range(0..pool.len())).collect();
        let mut candidate = mean_frames(&w);
        if !other_class_pools.is_empty() {
            let w_inter: Vec<Vec<Vec<f64>>> = other_class_pools
                .iter()
                .zip(&sampled)
                .map(|(pool, &k)| warp_sequence(&p, pool[k], WarpMode::Inter, cfg))
                .collect::<Result<_>>()?;
            let inter = mean_frames(&w_inter);
            for (c, f) in candidate.iter_mut().zip(&inter) {
                c.iter_mut().zip(f).for_each(|(a, b)| *a = (1.0 - cfg.eta) * *a + cfg.eta * b);
            }
        }
        let change = frames_sq_dist(&candidate, &p);
        let stop = change <= cfg.zeta;
        trace.push(PhantomIteration {
            sampled,
            candidate: candidate.clone(),
            change,
        });
        if stop {
            converged = true;
            break;
        }
        p = candidate;
    }
    Ok(PhantomOutcome {
        template: PhantomTemplate {
            class_id,
            t,
            atoms: p,
            config: cfg.clone(),
        },
        trace,
        converged,
    })
}
