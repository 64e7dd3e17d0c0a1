//! Hybrid recalibration of boosted scales onto plain-comparison ranges.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{fit_5pl, rank_metrics, AnalysisError, Logistic5Fit, RankMetrics};
use crate::model::ImpairmentScale;
use crate::reconstruction::{reconstruct, ReconstructionOptions, ResponseSet};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecalibrationError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("boosted and plain pools cover {boost} and {plain} stimuli")]
    PoolMismatch { boost: usize, plain: usize },
    #[error(transparent)]
    Fit(#[from] AnalysisError),
    #[error("all {failed} repeats failed; last error: {last}")]
    AllRepeatsFailed { failed: usize, last: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridPlan {
    /// Total comparisons K per repeat.
    pub budget: usize,
    /// Share α of the budget spent on plain comparisons.
    pub plain_fraction: f64,
    pub repeats: usize,
    pub rng_seed: u64,
}

impl Default for HybridPlan {
    fn default() -> Self {
        Self { budget: 400, plain_fraction: 0.5, repeats: 101, rng_seed: 0 }
    }
}

impl HybridPlan {
    pub fn plain_count(&self) -> usize {
        (self.plain_fraction * self.budget as f64).ceil() as usize
    }

    pub fn boost_count(&self) -> usize {
        self.budget - self.plain_count()
    }

    pub fn validate(&self) -> Result<(), RecalibrationError> {
        if !(self.plain_fraction > 0.0 && self.plain_fraction < 1.0) {
            return Err(RecalibrationError::InvalidPlan(format!("α = {} not in (0, 1)", self.plain_fraction)));
        }
        if self.repeats == 0 {
            return Err(RecalibrationError::InvalidPlan("zero repeats".into()));
        }
        if self.plain_count() == 0 || self.plain_count() >= self.budget {
            return Err(RecalibrationError::InvalidPlan(format!(
                "budget {} leaves one of the pools empty",
                self.budget
            )));
        }
        Ok(())
    }
}

/// Constrained (non-decreasing) 5PL map from `x` to `y`.
///
/// Points may come in any order; they are sorted by `x` and points sharing an
/// `x` are merged into their mean `y` before fitting.
pub fn fit_monotone_map(x: &[f64], y: &[f64]) -> Result<Logistic5Fit, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidInput("x and y differ in length".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut xs, mut ys, mut counts) = (Vec::new(), Vec::<f64>::new(), Vec::<f64>::new());
    for (a, b) in pairs {
        if xs.last() == Some(&a) {
            let n = counts.last_mut().unwrap();
            let m = ys.last_mut().unwrap();
            *m = (*m * *n + b) / (*n + 1.0);
            *n += 1.0;
        } else {
            xs.push(a);
            ys.push(b);
            counts.push(1.0);
        }
    }
    fit_5pl(&xs, &ys, true)
}

/// Maps `boosted` onto the range of `plain` through a fitted monotone 5PL.
pub fn recalibrate_scales(
    boosted: &ImpairmentScale,
    plain: &ImpairmentScale,
) -> Result<(ImpairmentScale, Logistic5Fit), RecalibrationError> {
    if boosted.len() != plain.len() {
        return Err(RecalibrationError::PoolMismatch { boost: boosted.len(), plain: plain.len() });
    }
    let fit = fit_monotone_map(&boosted.values, &plain.values)?;
    let values = boosted.values.iter().map(|&x| fit.eval(x)).collect();
    Ok((ImpairmentScale { values, ..boosted.clone() }, fit))
}

/// Outcome of a single repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationRepeat {
    pub repeat: usize,
    pub recalibrated: ImpairmentScale,
    pub boosted: ImpairmentScale,
    pub plain: ImpairmentScale,
    pub fit: Logistic5Fit,
    /// Mean-square difference between the recalibrated and plain scales.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    /// Median repeat by mean-square difference.
    pub selected: RecalibrationRepeat,
    pub succeeded: usize,
    pub failed: usize,
}

impl Recalibration {
    pub fn scale(&self) -> &ImpairmentScale {
        &self.selected.recalibrated
    }
}

fn run_repeat(
    repeat: usize,
    boost_pool: &ResponseSet,
    plain_pool: &ResponseSet,
    plan: &HybridPlan,
    options: &ReconstructionOptions,
) -> Result<RecalibrationRepeat, String> {
    let mut r = rng::stream(plan.rng_seed, repeat as u64);
    let boost_sample = boost_pool.resample(plan.boost_count(), &mut r);
    let plain_sample = plain_pool.resample(plan.plain_count(), &mut r);
    let opts = ReconstructionOptions { seed: options.seed.wrapping_add(repeat as u64), ..*options };
    let boosted = reconstruct(&boost_sample, &opts).map_err(|e| e.to_string())?.scale;
    let plain = reconstruct(&plain_sample, &opts).map_err(|e| e.to_string())?.scale;
    let (recalibrated, fit) = recalibrate_scales(&boosted, &plain).map_err(|e| e.to_string())?;
    let mse =
        recalibrated.values.iter().zip(&plain.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / plain.len() as f64;
    Ok(RecalibrationRepeat { repeat, recalibrated, boosted, plain, fit, mse })
}

/// Repeatedly samples boosted and plain responses, maps the boosted scale
/// onto the plain one and keeps the median repeat (lower median for even
/// counts). Failed repeats are discarded and counted.
pub fn hybrid_recalibrate(
    boost_pool: &ResponseSet,
    plain_pool: &ResponseSet,
    plan: &HybridPlan,
    options: &ReconstructionOptions,
) -> Result<Recalibration, RecalibrationError> {
    plan.validate()?;
    if boost_pool.stimulus_count != plain_pool.stimulus_count {
        return Err(RecalibrationError::PoolMismatch {
            boost: boost_pool.stimulus_count,
            plain: plain_pool.stimulus_count,
        });
    }
    let results: Vec<_> =
        (0..plan.repeats).into_par_iter().map(|r| run_repeat(r, boost_pool, plain_pool, plan, options)).collect();
    let mut last = String::new();
    let mut ok = Vec::new();
    for res in results {
        match res {
            Ok(rep) => ok.push(rep),
            Err(e) => last = e,
        }
    }
    let failed = plan.repeats - ok.len();
    if ok.is_empty() {
        return Err(RecalibrationError::AllRepeatsFailed { failed, last });
    }
    ok.sort_by(|a, b| a.mse.total_cmp(&b.mse).then(a.repeat.cmp(&b.repeat)));
    let succeeded = ok.len();
    let selected = ok.swap_remove((succeeded - 1) / 2);
    Ok(Recalibration { selected, succeeded, failed })
}

/// Per-sequence summary of a recalibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationReport {
    pub sequence: String,
    pub beta: [f64; 5],
    pub before: RankMetrics,
    pub after: RankMetrics,
}

impl RecalibrationReport {
    /// Compares boosted and recalibrated scales against `reference`.
    pub fn new(
        sequence: impl Into<String>,
        boosted: &ImpairmentScale,
        recalibrated: &ImpairmentScale,
        fit: &Logistic5Fit,
        reference: &ImpairmentScale,
    ) -> Result<Self, AnalysisError> {
        Ok(Self {
            sequence: sequence.into(),
            beta: fit.beta,
            before: rank_metrics(&boosted.values, &reference.values)?,
            after: rank_metrics(&recalibrated.values, &reference.values)?,
        })
    }
}

/// CSV with β and before/after RMSE, MAE, PLCC and SROCC per sequence.
pub fn report_csv(reports: &[RecalibrationReport]) -> Result<String, csv::Error> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sequence",
        "beta1",
        "beta2",
        "beta3",
        "beta4",
        "beta5",
        "rmse_before",
        "mae_before",
        "plcc_before",
        "srocc_before",
        "rmse_after",
        "mae_after",
        "plcc_after",
        "srocc_after",
    ])?;
    for r in reports {
        let mut row = vec![r.sequence.clone()];
        row.extend(r.beta.iter().map(|b| format!("{b:.6}")));
        for m in [&r.before, &r.after] {
            row.extend([format!("{:.6}", m.rmse), format!("{:.6}", m.mae), opt(m.plcc), opt(m.srocc)]);
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::logistic5;
    use crate::model::ScaleUnit;

    fn scale(values: Vec<f64>) -> ImpairmentScale {
        ImpairmentScale { values, anchor_index: 0, unit: ScaleUnit::Jnd }
    }

    #[test]
    fn plan_counts_sum_to_budget() {
        for (k, a) in [(400, 0.5), (401, 0.3), (7, 0.9), (10, 0.01)] {
            let p = HybridPlan { budget: k, plain_fraction: a, ..HybridPlan::default() };
            assert_eq!(p.plain_count() + p.boost_count(), k);
        }
        assert!(HybridPlan { plain_fraction: 1.0, ..HybridPlan::default() }.validate().is_err());
        assert!(HybridPlan { budget: 1, ..HybridPlan::default() }.validate().is_err());
    }

    #[test]
    fn monotone_map_examples() {
        let x: Vec<f64> = (0..13).map(|i| f64::from(i) * 0.5).collect();
        let fit = fit_monotone_map(&x, &x).unwrap();
        for &v in &x {
            assert!((fit.eval(v) - v).abs() < 1e-4);
        }
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let fit = fit_monotone_map(&x, &y).unwrap();
        for (&v, &w) in x.iter().zip(&y) {
            assert!((fit.eval(v) - w).abs() < 1e-3);
        }
    }

    #[test]
    fn unordered_and_tied_points_are_accepted() {
        let x = [3.0, 0.0, 2.0, 1.0, 2.0, 5.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let fit = fit_monotone_map(&x, &y).unwrap();
        for (&a, &b) in x.iter().zip(&y) {
            assert!((fit.eval(a) - b).abs() < 1e-3);
        }
        assert!(fit_monotone_map(&[1.0, 1.0, 1.0, 2.0, 2.0], &[0.0; 5]).is_err());
    }

    #[test]
    fn exact_warp_is_undone() {
        let plain: Vec<f64> = (0..13).map(|i| f64::from(i) * 0.4).collect();
        let warp = [6.0, 1.5, 2.5, 0.5, 0.2];
        let boosted: Vec<f64> = plain.iter().map(|&v| logistic5(&warp, v)).collect();
        // Inverting g is not in the family in general, so fit plain → boosted
        // and check the forward direction, which is.
        let (rec, _) = recalibrate_scales(&scale(plain.clone()), &scale(boosted.clone())).unwrap();
        let rmse = (rec.values.iter().zip(&boosted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 13.0).sqrt();
        assert!(rmse <= 1e-3, "rmse {rmse}");
    }

    #[test]
    fn report_has_header_and_rows() {
        let p = scale((0..6).map(f64::from).collect());
        let b = scale((0..6).map(|i| 3.0 * f64::from(i)).collect());
        let (r, fit) = recalibrate_scales(&b, &p).unwrap();
        let rep = RecalibrationReport::new("s", &b, &r, &fit, &p).unwrap();
        assert!(rep.after.rmse < rep.before.rmse);
        let csv = report_csv(&[rep]).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("sequence,beta1"));
    }
}
