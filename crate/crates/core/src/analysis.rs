//! Curve fitting, rank and error metrics, detection rates and dataset resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ResponseValue, Triplet};
use crate::normal::JND_INTERNAL;
use crate::stats::average_ranks;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("curve fit failed on every start")]
    FitFailed,
}

/// `β1 (1/2 − 1/(1 + exp(β2 (x − β3)))) + β4 x + β5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic5Fit {
    pub beta: [f64; 5],
    pub residual_rmse: f64,
    /// β1, β2, β4 were constrained to be non-negative.
    pub constrained: bool,
}

impl Logistic5Fit {
    pub fn eval(&self, x: f64) -> f64 {
        logistic5(&self.beta, x)
    }

    /// Analytic derivative with respect to `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4, _] = self.beta;
        let s = sigmoid(b2 * (x - b3));
        b1 * b2 * s * (1.0 - s) + b4
    }
}

pub fn logistic5(beta: &[f64; 5], x: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = *beta;
    b1 * (sigmoid(b2 * (x - b3)) - 0.5) + b4 * x + b5
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

const CONSTRAINED: [usize; 3] = [0, 1, 3];

/// Least-squares 5PL fit with multiple starts.
///
/// Data are standardized before fitting and the parameters mapped back, so
/// the sign constraints are unaffected.
pub fn fit_5pl(x: &[f64], y: &[f64], constrained: bool) -> Result<Logistic5Fit, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidInput("x and y differ in length".into()));
    }
    if x.len() < 5 {
        return Err(AnalysisError::InvalidInput("need at least 5 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite data".into()));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AnalysisError::InvalidInput("x must be strictly increasing".into()));
    }
    let n = x.len() as f64;
    let cx = x.iter().sum::<f64>() / n;
    let sx = (x.iter().map(|v| (v - cx).powi(2)).sum::<f64>() / n).sqrt();
    let cy = y.iter().sum::<f64>() / n;
    let mut sy = (y.iter().map(|v| (v - cy).powi(2)).sum::<f64>() / n).sqrt();
    if sy == 0.0 {
        sy = 1.0;
    }
    let xs: Vec<f64> = x.iter().map(|v| (v - cx) / sx).collect();
    let ys: Vec<f64> = y.iter().map(|v| (v - cy) / sy).collect();

    let slope = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / n;
    let mut starts = vec![[0.0, 1.0, 0.0, if constrained { slope.max(0.0) } else { slope }, 0.0]];
    let heights: &[f64] = if constrained { &[1.0, 3.0] } else { &[-3.0, -1.0, 1.0, 3.0] };
    for &b3 in &[-1.2, -0.6, 0.0, 0.6, 1.2] {
        for &b2 in &[0.5, 2.0, 8.0] {
            for &b1 in heights {
                starts.push([b1, b2, b3, 0.0, 0.0]);
            }
        }
    }

    let mut best: Option<([f64; 5], f64)> = None;
    for start in starts {
        if let Some((beta, cost)) = levenberg_marquardt(&xs, &ys, start, constrained) {
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((beta, cost));
            }
        }
    }
    let (b, _) = best.ok_or(AnalysisError::FitFailed)?;
    let mut beta = [sy * b[0], b[1] / sx, cx + sx * b[2], sy * b[3] / sx, sy * b[4] - sy * b[3] * cx / sx + cy];
    if constrained {
        for c in CONSTRAINED {
            beta[c] = beta[c].max(0.0);
        }
    }
    let residual_rmse = (x.iter().zip(y).map(|(&a, &b)| (logistic5(&beta, a) - b).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Logistic5Fit { beta, residual_rmse, constrained })
}

fn cost(x: &[f64], y: &[f64], beta: &[f64; 5]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| (logistic5(beta, a) - b).powi(2)).sum::<f64>() * 0.5
}

/// Levenberg–Marquardt with an active set for the non-negativity bounds.
fn levenberg_marquardt(x: &[f64], y: &[f64], start: [f64; 5], constrained: bool) -> Option<([f64; 5], f64)> {
    let mut beta = start;
    let mut f = cost(x, y, &beta);
    if !f.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    for _ in 0..1000 {
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&xi, &yi) in x.iter().zip(y) {
            let [b1, b2, b3, _, _] = beta;
            let s = sigmoid(b2 * (xi - b3));
            let ds = s * (1.0 - s);
            let jac = [s - 0.5, b1 * ds * (xi - b3), -b1 * ds * b2, xi, 1.0];
            let r = logistic5(&beta, xi) - yi;
            for a in 0..5 {
                jtr[a] += jac[a] * r;
                for b in 0..5 {
                    jtj[a][b] += jac[a] * jac[b];
                }
            }
        }
        let active: Vec<bool> =
            (0..5).map(|c| constrained && CONSTRAINED.contains(&c) && beta[c] <= 0.0 && jtr[c] > 0.0).collect();
        let gnorm = (0..5).filter(|&c| !active[c]).map(|c| jtr[c].abs()).fold(0.0, f64::max);
        if gnorm < 1e-14 * (1.0 + f) {
            break;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut m = [[0.0; 5]; 5];
            let mut rhs = [0.0; 5];
            for a in 0..5 {
                for b in 0..5 {
                    m[a][b] = if active[a] || active[b] { 0.0 } else { jtj[a][b] };
                }
                if active[a] {
                    m[a][a] = 1.0;
                } else {
                    m[a][a] += lambda * jtj[a][a].max(1e-12);
                    rhs[a] = -jtr[a];
                }
            }
            let Some(step) = solve5(m, rhs) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = beta;
            for c in 0..5 {
                trial[c] += step[c];
            }
            if constrained {
                for c in CONSTRAINED {
                    trial[c] = trial[c].max(0.0);
                }
            }
            let ft = cost(x, y, &trial);
            if ft.is_finite() && ft < f {
                let rel = (f - ft) / f.max(1e-300);
                let moved = (0..5).map(|c| (trial[c] - beta[c]).abs()).fold(0.0, f64::max);
                beta = trial;
                f = ft;
                lambda = (lambda / 3.0).max(1e-15);
                improved = rel > 1e-15 && moved > 1e-15;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Some((beta, f))
}

/// Gaussian elimination with partial pivoting.
fn solve5(mut m: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let pivot = (col..5).max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..5 {
            let factor = m[row][col] / m[col][col];
            for c in col..5 {
                m[row][c] -= factor * m[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut out = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|c| m[row][c] * out[c]).sum();
        out[row] = (b[row] - s) / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Ratio of fitted derivatives `boosted' / plain'` at each grid point;
/// `None` where the plain derivative is not positive.
pub fn sensitivity_gain(boosted: &Logistic5Fit, plain: &Logistic5Fit, x_grid: &[f64]) -> Vec<Option<f64>> {
    x_grid
        .iter()
        .map(|&x| {
            let d = plain.derivative(x);
            (d > 0.0).then(|| boosted.derivative(x) / d)
        })
        .collect()
}

/// Score of one answer to a baseline triplet when the stimulus with the
/// lower index is known to be less impaired; `None` for skipped.
pub fn ordering_score(triplet: Triplet, response: ResponseValue) -> Option<f64> {
    match response {
        ResponseValue::NotSure => Some(0.5),
        ResponseValue::Skipped => None,
        ResponseValue::Left => Some(if triplet.i < triplet.k { 1.0 } else { 0.0 }),
        ResponseValue::Right => Some(if triplet.i > triplet.k { 1.0 } else { 0.0 }),
    }
}

/// True positive rate on baseline triplets whose level order is the index order.
pub fn tpr(responses: &[(Triplet, ResponseValue)]) -> Result<f64, AnalysisError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &(t, r) in responses {
        if t.j != 0 || t.i == t.k {
            return Err(AnalysisError::InvalidInput(format!("not a baseline triplet: {t:?}")));
        }
        if let Some(u) = ordering_score(t, r) {
            total += u;
            count += 1;
        }
    }
    if count == 0 {
        return Err(AnalysisError::InvalidInput("no scored responses".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRate {
    /// `2·tpr − 1` clamped to [0, 1].
    pub value: f64,
    pub raw: f64,
}

pub fn detection_rate(tpr: f64) -> DetectionRate {
    let raw = 2.0 * tpr - 1.0;
    DetectionRate { value: raw.clamp(0.0, 1.0), raw }
}

/// Standardized mean difference for a scale difference in JND.
pub fn effect_size(delta_mu_jnd: f64) -> f64 {
    delta_mu_jnd * JND_INTERNAL / 0.5f64.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    /// `None` when either input is constant.
    pub srocc: Option<f64>,
    pub plcc: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
}

pub fn rank_metrics(a: &[f64], b: &[f64]) -> Result<RankMetrics, AnalysisError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(AnalysisError::InvalidInput("need two vectors of equal length ≥ 2".into()));
    }
    let n = a.len() as f64;
    let rmse = (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt();
    let mae = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    Ok(RankMetrics { srocc: pearson(&average_ranks(a), &average_ranks(b)), plcc: pearson(a, b), rmse, mae })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Number of pairs out of order in a permutation.
pub fn inversions(permutation: &[usize]) -> u64 {
    inversions_of(permutation)
}

/// Number of pairs `p < q` with `seq[p] > seq[q]`, by merge sort.
pub fn inversions_of<T: PartialOrd + Copy>(seq: &[T]) -> u64 {
    let mut buf = seq.to_vec();
    let mut tmp = seq.to_vec();
    sort_count(&mut buf, &mut tmp)
}

fn sort_count<T: PartialOrd + Copy>(v: &mut [T], tmp: &mut [T]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (tl, tr) = tmp.split_at_mut(mid);
        sort_count(l, tl) + sort_count(r, tr)
    };
    let (mut a, mut b, mut o) = (0, mid, 0);
    while a < mid && b < n {
        if v[b] < v[a] {
            tmp[o] = v[b];
            count += (mid - a) as u64;
            b += 1;
        } else {
            tmp[o] = v[a];
            a += 1;
        }
        o += 1;
    }
    tmp[o..o + mid - a].copy_from_slice(&v[a..mid]);
    o += mid - a;
    tmp[o..o + n - b].copy_from_slice(&v[b..n]);
    v.copy_from_slice(&tmp[..n]);
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOptions {
    /// PSNR sampling step in dB.
    pub step_db: f64,
    /// Standard deviation of the smoothing gaussian in dB.
    pub width_db: f64,
}

impl Default for ResolutionOptions {
    fn default() -> Self {
        Self { step_db: 0.2, width_db: 2.0 }
    }
}

/// Levels per dB as a function of PSNR; `None` where no interval covers the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCurve {
    pub psnr_samples: Vec<f64>,
    pub raw: Vec<Option<f64>>,
    pub smoothed: Vec<Option<f64>>,
}

/// Dataset resolution from per-sequence PSNR lists.
///
/// Consecutive PSNR values of a sequence form closed intervals; non-finite
/// values (the undistorted source) and zero-length intervals are ignored.
pub fn dataset_resolution(
    sequences: &[Vec<f64>],
    options: ResolutionOptions,
) -> Result<ResolutionCurve, AnalysisError> {
    if !(options.step_db > 0.0) || !(options.width_db >= 0.0) {
        return Err(AnalysisError::InvalidInput("step and width must be positive".into()));
    }
    let mut intervals = Vec::new();
    for seq in sequences {
        if seq.len() < 2 {
            return Err(AnalysisError::InvalidInput("each sequence needs at least two PSNR values".into()));
        }
        for w in seq.windows(2) {
            if w[0].is_finite() && w[1].is_finite() && w[0] != w[1] {
                intervals.push((w[0].min(w[1]), w[0].max(w[1])));
            }
        }
    }
    if intervals.is_empty() {
        return Ok(ResolutionCurve { psnr_samples: Vec::new(), raw: Vec::new(), smoothed: Vec::new() });
    }
    let lo = intervals.iter().map(|i| i.0).fold(f64::INFINITY, f64::min);
    let hi = intervals.iter().map(|i| i.1).fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / options.step_db).floor() as i64;
    let last = (hi / options.step_db).ceil() as i64;
    let psnr_samples: Vec<f64> = (first..=last).map(|m| m as f64 * options.step_db).collect();
    let raw: Vec<Option<f64>> = psnr_samples
        .iter()
        .map(|&s| {
            let covering: Vec<f64> = intervals.iter().filter(|(a, b)| *a <= s && s <= *b).map(|(a, b)| b - a).collect();
            (!covering.is_empty()).then(|| covering.len() as f64 / covering.iter().sum::<f64>())
        })
        .collect();
    let smoothed = smooth_gaussian(&raw, options.width_db / options.step_db);
    Ok(ResolutionCurve { psnr_samples, raw, smoothed })
}

/// Truncated (±3σ) gaussian filter renormalized over defined neighbours.
fn smooth_gaussian(raw: &[Option<f64>], sigma_samples: f64) -> Vec<Option<f64>> {
    if sigma_samples <= 0.0 {
        return raw.to_vec();
    }
    let half = (3.0 * sigma_samples).floor() as isize;
    let weights: Vec<f64> = (-half..=half).map(|k| (-0.5 * (k as f64 / sigma_samples).powi(2)).exp()).collect();
    (0..raw.len() as isize)
        .map(|m| {
            raw[m as usize]?;
            let (mut num, mut den) = (0.0, 0.0);
            for (w, k) in weights.iter().zip(-half..=half) {
                let idx = m + k;
                if idx < 0 || idx >= raw.len() as isize {
                    continue;
                }
                if let Some(v) = raw[idx as usize] {
                    num += w * v;
                    den += w;
                }
            }
            Some(num / den)
        })
        .collect()
}
