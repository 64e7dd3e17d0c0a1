//! Thurstonian observer model and the response-probability kernels.
//!
//! All kernels take impairment means in internal units, where each stimulus
//! quality is Gaussian with variance 1/2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal::{cdf, pdf, to_jnd};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite input to probability kernel")]
    NonFinite,
    #[error("model parameter must be positive, got {0}")]
    NonPositiveParameter(f64),
}

/// Units an [`ImpairmentScale`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleUnit {
    Jnd,
    Internal,
}

/// Per-stimulus impairment values pinned to zero at `anchor_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentScale {
    pub values: Vec<f64>,
    pub anchor_index: usize,
    pub unit: ScaleUnit,
}

impl ImpairmentScale {
    /// Builds a scale by shifting `values` so the anchor sits at zero.
    pub fn anchored(mut values: Vec<f64>, anchor_index: usize, unit: ScaleUnit) -> Self {
        let offset = values[anchor_index];
        for v in &mut values {
            *v -= offset;
        }
        Self { values, anchor_index, unit }
    }

    pub fn to_jnd(&self) -> Self {
        match self.unit {
            ScaleUnit::Jnd => self.clone(),
            ScaleUnit::Internal => Self {
                values: self.values.iter().map(|&v| to_jnd(v)).collect(),
                anchor_index: self.anchor_index,
                unit: ScaleUnit::Jnd,
            },
        }
    }

    /// Difference between the largest and the smallest value.
    pub fn range(&self) -> f64 {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A triplet `(i, j, k)`: is `i` or `k` closer to the pivot `j`?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Triplet {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    /// Pivot is the reference stimulus.
    pub fn is_baseline(&self) -> bool {
        self.j == 0 && self.i != self.k
    }

    /// All three indices are distinct.
    pub fn is_general(&self) -> bool {
        self.i != self.j && self.k != self.j && self.i != self.k
    }

    /// The same question with the outer stimuli swapped.
    pub fn swapped(&self) -> Self {
        Self { i: self.k, j: self.j, k: self.i }
    }

    pub fn max_index(&self) -> usize {
        self.i.max(self.j).max(self.k)
    }
}

/// An observer's answer to a triplet. `Left` means `i` is closer to the pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseValue {
    Left,
    Right,
    NotSure,
    Skipped,
}

impl ResponseValue {
    /// Numeric score R used by the likelihood; `None` for skipped.
    pub fn score(self) -> Option<f64> {
        match self {
            Self::Left => Some(1.0),
            Self::Right => Some(0.0),
            Self::NotSure => Some(0.5),
            Self::Skipped => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::NotSure => "not_sure",
            Self::Skipped => "skipped",
        }
    }

    /// The answer to the swapped triplet.
    pub fn mirrored(self) -> Self {
        match self {
            Self::Left => Self::Right,
            Self::Right => Self::Left,
            other => other,
        }
    }
}

impl std::str::FromStr for ResponseValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Self::Left),
            "right" => Ok(Self::Right),
            "not_sure" => Ok(Self::NotSure),
            "skipped" => Ok(Self::Skipped),
            other => Err(format!("unknown response value {other:?}")),
        }
    }
}

impl std::fmt::Display for ResponseValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Probability model linking scale values to triplet answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    ThurstoneTriplet,
    Mlds {
        sigma: f64,
    },
    Ste {
        alpha: f64,
    },
    PairBaseline,
}

/// Parses `thurstone`, `pair`, `mlds[:σ]` or `ste[:α]`.
impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p.parse::<f64>().map_err(|e| format!("bad parameter in {s:?}: {e}"))?)),
            None => (s, None),
        };
        let kind = match (name, param) {
            ("thurstone" | "thurstone_triplet", None) => Self::ThurstoneTriplet,
            ("pair" | "pair_baseline", None) => Self::PairBaseline,
            ("mlds", p) => Self::Mlds { sigma: p.unwrap_or(1.0) },
            ("ste", p) => Self::Ste { alpha: p.unwrap_or(1.0) },
            _ => return Err(format!("unknown model {s:?}; expected thurstone, pair, mlds[:sigma] or ste[:alpha]")),
        };
        kind.validate().map_err(|e| e.to_string())?;
        Ok(kind)
    }
}

impl ModelKind {
    pub const fn mlds_default() -> Self {
        Self::Mlds { sigma: 1.0 }
    }

    pub const fn ste_default() -> Self {
        Self::Ste { alpha: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Self::Mlds { sigma: p } | Self::Ste { alpha: p } if !(p > 0.0) || !p.is_finite() => {
                Err(ModelError::NonPositiveParameter(p))
            }
            _ => Ok(()),
        }
    }

    /// Pr(left) for the triplet `(i, j, k)` under this model.
    pub fn probability(&self, mu_i: f64, mu_j: f64, mu_k: f64) -> Result<f64, ModelError> {
        self.validate()?;
        check_finite(&[mu_i, mu_j, mu_k])?;
        Ok(self.eval(mu_i, mu_j, mu_k).p)
    }

    /// Pivot participates in the likelihood.
    pub fn uses_pivot(&self) -> bool {
        !matches!(self, Self::PairBaseline)
    }

    /// Kernel value, complement and partial derivatives of Pr(left).
    ///
    /// The complement is computed separately so that `log(1 - p)` keeps its
    /// precision when `p` is close to one.
    pub(crate) fn eval(&self, mu_i: f64, mu_j: f64, mu_k: f64) -> KernelEval {
        match *self {
            Self::ThurstoneTriplet => {
                let u = mu_k - mu_i;
                let v = (mu_k + mu_i - 2.0 * mu_j) / SQRT_3;
                let (a, a_bar) = (cdf(u), cdf(-u));
                let (b, b_bar) = (cdf(v), cdf(-v));
                let p = a_bar * b_bar + a * b;
                let q = a * b_bar + a_bar * b;
                let dp_du = pdf(u) * (b - b_bar);
                let dp_dv = pdf(v) * (a - a_bar);
                KernelEval { p, q, grad: [-dp_du + dp_dv / SQRT_3, -2.0 * dp_dv / SQRT_3, dp_du + dp_dv / SQRT_3] }
            }
            Self::Mlds { sigma } => {
                let di = mu_i - mu_j;
                let dk = mu_k - mu_j;
                let z = (dk.abs() - di.abs()) / sigma;
                let g = pdf(z) / sigma;
                let (si, sk) = (sign(di), sign(dk));
                KernelEval { p: cdf(z), q: cdf(-z), grad: [-g * si, g * (si - sk), g * sk] }
            }
            Self::Ste { alpha } => {
                let di = mu_i - mu_j;
                let dk = mu_k - mu_j;
                let t = alpha * (dk * dk - di * di);
                let p = logistic(t);
                let q = logistic(-t);
                let g = p * q * 2.0 * alpha;
                KernelEval { p, q, grad: [-g * di, g * (di - dk), g * dk] }
            }
            Self::PairBaseline => {
                let d = mu_k - mu_i;
                let g = pdf(d);
                KernelEval { p: cdf(d), q: cdf(-d), grad: [-g, 0.0, g] }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct KernelEval {
    pub p: f64,
    pub q: f64,
    /// dp/dμ_i, dp/dμ_j, dp/dμ_k.
    pub grad: [f64; 3],
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_finite(values: &[f64]) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite)
    }
}

/// Pr(left) under the Thurstonian triplet model.
pub fn prob_triplet_thurstone(mu_i: f64, mu_j: f64, mu_k: f64) -> Result<f64, ModelError> {
    ModelKind::ThurstoneTriplet.probability(mu_i, mu_j, mu_k)
}

/// Pr(left) under maximum likelihood difference scaling with noise `sigma`.
pub fn prob_triplet_mlds(mu_i: f64, mu_j: f64, mu_k: f64, sigma: f64) -> Result<f64, ModelError> {
    ModelKind::Mlds { sigma }.probability(mu_i, mu_j, mu_k)
}

/// Pr(left) under stochastic triplet embedding with scale `alpha`.
pub fn prob_triplet_ste(mu_i: f64, mu_j: f64, mu_k: f64, alpha: f64) -> Result<f64, ModelError> {
    ModelKind::Ste { alpha }.probability(mu_i, mu_j, mu_k)
}

/// Pr(`i` judged less impaired than `k`) for a plain pair comparison.
pub fn prob_pair(mu_i: f64, mu_k: f64) -> Result<f64, ModelError> {
    check_finite(&[mu_i, mu_k])?;
    Ok(cdf(mu_k - mu_i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_kind_from_str() {
        assert_eq!("thurstone".parse::<ModelKind>().unwrap(), ModelKind::ThurstoneTriplet);
        assert_eq!("pair".parse::<ModelKind>().unwrap(), ModelKind::PairBaseline);
        assert_eq!("mlds:1.5".parse::<ModelKind>().unwrap(), ModelKind::Mlds { sigma: 1.5 });
        assert_eq!("ste".parse::<ModelKind>().unwrap(), ModelKind::Ste { alpha: 1.0 });
        assert!("ste:-1".parse::<ModelKind>().is_err());
        assert!("gauss".parse::<ModelKind>().is_err());
    }
    use crate::normal::JND_INTERNAL;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn thurstone_examples() {
        assert_eq!(prob_triplet_thurstone(0.0, 0.0, 0.0).unwrap(), 0.5);
        assert!(close(prob_triplet_thurstone(1.0, 0.0, 1.0).unwrap(), 0.5, 1e-15));
        // Reference values: Φ(0.6745) and Φ(0.6745/√3) at 20 digits.
        let (a, b) = (0.750_003_257_136_3, 0.651_518_279_645_5);
        let want = 1.0 - a - b + 2.0 * a * b;
        let got = prob_triplet_thurstone(0.0, 0.0, 0.6745).unwrap();
        assert!(close(got, want, 1e-12));
        assert!(close(got, 0.5758, 1e-3));
    }

    #[test]
    fn mlds_ste_examples() {
        assert_eq!(prob_triplet_mlds(1.0, 0.0, 1.0, 1.0).unwrap(), 0.5);
        assert!(close(prob_triplet_mlds(0.0, 0.0, 1.0, 1.0).unwrap(), 0.841_344_746, 1e-9));
        assert!(close(prob_triplet_mlds(0.0, 0.0, 1.0, 2.0).unwrap(), 0.691_462_461, 1e-9));
        assert_eq!(prob_triplet_ste(1.0, 0.0, 1.0, 1.0).unwrap(), 0.5);
        assert!(close(prob_triplet_ste(0.0, 0.0, 1.0, 1.0).unwrap(), 0.731_058_579, 1e-9));
        assert!(close(prob_triplet_ste(0.0, 0.0, 2.0, 0.5).unwrap(), 0.880_797_078, 1e-9));
        assert!(prob_triplet_mlds(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(prob_triplet_ste(0.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn pair_examples() {
        assert_eq!(prob_pair(0.0, 0.0).unwrap(), 0.5);
        assert!(close(prob_pair(0.0, JND_INTERNAL).unwrap(), 0.75, 1e-12));
        assert!(close(prob_pair(JND_INTERNAL, 0.0).unwrap(), 0.25, 1e-12));
        assert!(close(prob_pair(0.0, 0.6745).unwrap(), 0.75, 1e-4));
        assert_eq!(prob_pair(f64::NAN, 0.0), Err(ModelError::NonFinite));
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(prob_triplet_thurstone(f64::INFINITY, 0.0, 0.0), Err(ModelError::NonFinite));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let kinds = [
            ModelKind::ThurstoneTriplet,
            ModelKind::Mlds { sigma: 1.3 },
            ModelKind::Ste { alpha: 0.7 },
            ModelKind::PairBaseline,
        ];
        let points = [[0.3, -0.2, 1.1], [1.4, 0.5, -0.4], [-0.9, 0.2, 0.35]];
        let h = 1e-6;
        for kind in kinds {
            for mu in points {
                let e = kind.eval(mu[0], mu[1], mu[2]);
                assert!(close(e.p + e.q, 1.0, 1e-14));
                for d in 0..3 {
                    let mut up = mu;
                    let mut down = mu;
                    up[d] += h;
                    down[d] -= h;
                    let fd = (kind.eval(up[0], up[1], up[2]).p - kind.eval(down[0], down[1], down[2]).p) / (2.0 * h);
                    assert!(close(e.grad[d], fd, 1e-7), "{kind:?} {mu:?} d{d}: {} vs {fd}", e.grad[d]);
                }
            }
        }
    }

    #[test]
    fn response_value_round_trip() {
        for r in [ResponseValue::Left, ResponseValue::Right, ResponseValue::NotSure, ResponseValue::Skipped] {
            assert_eq!(r.as_str().parse::<ResponseValue>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.as_str()));
        }
        assert_eq!(ResponseValue::NotSure.score(), Some(0.5));
        assert_eq!(ResponseValue::Skipped.score(), None);
    }

    #[test]
    fn anchored_scale() {
        let s = ImpairmentScale::anchored(vec![1.0, 2.0, 4.0], 0, ScaleUnit::Internal);
        assert_eq!(s.values, vec![0.0, 1.0, 3.0]);
        assert!(close(s.to_jnd().values[2], 3.0 / JND_INTERNAL, 1e-12));
        assert_eq!(s.range(), 3.0);
    }
}
