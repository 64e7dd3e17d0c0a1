//! Simulated Thurstonian observers, triplet sampling plans and simulation studies.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{inversions_of, rank_metrics};
use crate::model::{ModelKind, ResponseValue, Triplet};
use crate::normal::{cdf, from_jnd, quantile, to_jnd};
use crate::reconstruction::{reconstruct, ReconstructionOptions, ResponseSet};
use crate::rng::{self, Rng};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no simple graph on {n} vertices with degree {degree}")]
    InfeasibleDegree { n: usize, degree: usize },
}

/// When a simulated observer answers "not sure".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "t", rename_all = "snake_case")]
pub enum NotSureRule {
    Never,
    /// Answer not sure when the decision variable satisfies `|Z| < t`.
    Threshold(f64),
}

/// Case V observer: stimulus qualities `N(means[s], 1/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverModel {
    /// Internal units.
    pub means: Vec<f64>,
    pub not_sure: NotSureRule,
}

impl ObserverModel {
    pub fn forced_choice(means: Vec<f64>) -> Self {
        Self { means, not_sure: NotSureRule::Never }
    }
}

/// Draws one answer to `triplet` from `observer`.
pub fn simulate_response(triplet: Triplet, observer: &ObserverModel, rng: &mut Rng) -> ResponseValue {
    let draw = |s: usize, rng: &mut Rng| {
        let z: f64 = StandardNormal.sample(rng);
        observer.means[s] + std::f64::consts::FRAC_1_SQRT_2 * z
    };
    let xi = draw(triplet.i, rng);
    let xj = draw(triplet.j, rng);
    let xk = draw(triplet.k, rng);
    let z = (xk - xj).abs() - (xi - xj).abs();
    if let NotSureRule::Threshold(t) = observer.not_sure {
        if z.abs() < t {
            return ResponseValue::NotSure;
        }
    }
    if z > 0.0 {
        ResponseValue::Left
    } else {
        ResponseValue::Right
    }
}

/// How triplets are drawn for free-running simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripletSampler {
    /// Uniform over ordered triplets with distinct indices.
    UniformGeneral,
    /// Uniform over `(i, 0, k)` with `i, k ≠ 0` and `i ≠ k`.
    UniformBaseline,
}

impl TripletSampler {
    pub fn draw(self, n: usize, rng: &mut Rng) -> Triplet {
        match self {
            Self::UniformGeneral => {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let mut k = rng.random_range(0..n - 2);
                for s in [i.min(j), i.max(j)] {
                    if k >= s {
                        k += 1;
                    }
                }
                Triplet::new(i, j, k)
            }
            Self::UniformBaseline => {
                let i = rng.random_range(1..n);
                let mut k = rng.random_range(1..n - 1);
                if k >= i {
                    k += 1;
                }
                Triplet::new(i, 0, k)
            }
        }
    }

    fn min_stimuli(self) -> usize {
        3
    }
}

/// Draws `count` triplets with `sampler` and one simulated answer for each.
pub fn simulate_responses(
    observer: &ObserverModel,
    sampler: TripletSampler,
    count: usize,
    rng: &mut Rng,
) -> Result<ResponseSet, SimulationError> {
    let n = observer.means.len();
    if n < sampler.min_stimuli() {
        return Err(SimulationError::InvalidArgument(format!("need at least 3 stimuli, got {n}")));
    }
    let records = (0..count)
        .map(|_| {
            let t = sampler.draw(n, rng);
            (t, simulate_response(t, observer, rng))
        })
        .collect();
    Ok(ResponseSet { stimulus_count: n, records })
}

/// Answers every triplet of `triplets` `repeats` times.
pub fn simulate_triplets(observer: &ObserverModel, triplets: &[Triplet], repeats: usize, rng: &mut Rng) -> ResponseSet {
    let mut records = Vec::with_capacity(triplets.len() * repeats);
    for &t in triplets {
        for _ in 0..repeats {
            records.push((t, simulate_response(t, observer, rng)));
        }
    }
    ResponseSet { stimulus_count: observer.means.len(), records }
}

/// Number of ordered triplets `i < j < k` with `k − i <= max_span`.
pub fn count_general_triplets(n_stimuli: usize, max_span: usize) -> Result<u64, SimulationError> {
    if n_stimuli < 3 || max_span < 2 || max_span > n_stimuli - 1 {
        return Err(SimulationError::InvalidArgument(format!("span {max_span} out of range for {n_stimuli} stimuli")));
    }
    Ok((2..=max_span).map(|n| ((n_stimuli - n) * (n - 1)) as u64).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PlanKind {
    /// Pairs `i < k` with `k − i <= s` as baseline triplets `(i, 0, k)`.
    BaselineMaxSpan(usize),
    /// Ordered triplets `i < j < k` with `k − i <= s`.
    GeneralOrderedMaxSpan(usize),
    /// Edges of a random regular graph with the given degree as baseline triplets.
    SparseGraph(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Budget {
    ResponsesPerTriplet(usize),
    TotalResponses(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub kind: PlanKind,
    pub budget: Budget,
    pub rng_seed: u64,
}

/// Triplets of `plan`, each flipped to `(k, j, i)` with probability 1/2.
pub fn sample_plan(plan: &SamplingPlan, n_stimuli: usize) -> Result<Vec<Triplet>, SimulationError> {
    let mut rng = rng::stream(plan.rng_seed, 0);
    let mut triplets = match plan.kind {
        PlanKind::BaselineMaxSpan(s) => {
            if s == 0 || n_stimuli < 2 {
                return Err(SimulationError::InvalidArgument("span must be positive".into()));
            }
            let mut v = Vec::new();
            for i in 0..n_stimuli {
                for k in i + 1..n_stimuli.min(i + s + 1) {
                    v.push(Triplet::new(i, 0, k));
                }
            }
            v
        }
        PlanKind::GeneralOrderedMaxSpan(s) => {
            count_general_triplets(n_stimuli, s)?;
            let mut v = Vec::new();
            for i in 0..n_stimuli {
                for k in i + 2..n_stimuli.min(i + s + 1) {
                    for j in i + 1..k {
                        v.push(Triplet::new(i, j, k));
                    }
                }
            }
            v
        }
        PlanKind::SparseGraph(degree) => {
            random_regular_pairs(n_stimuli, degree, &mut rng)?.into_iter().map(|(i, k)| Triplet::new(i, 0, k)).collect()
        }
    };
    for t in &mut triplets {
        if rng.random_bool(0.5) {
            *t = t.swapped();
        }
    }
    Ok(triplets)
}

/// Simulated answers for `plan` from `observer`.
pub fn simulate_plan(plan: &SamplingPlan, observer: &ObserverModel) -> Result<ResponseSet, SimulationError> {
    let triplets = sample_plan(plan, observer.means.len())?;
    let mut rng = rng::stream(plan.rng_seed, 1);
    match plan.budget {
        Budget::ResponsesPerTriplet(r) => Ok(simulate_triplets(observer, &triplets, r, &mut rng)),
        Budget::TotalResponses(total) => {
            if triplets.is_empty() {
                return Err(SimulationError::InvalidArgument("plan has no triplets".into()));
            }
            let records = (0..total)
                .map(|_| {
                    let t = triplets[rng.random_range(0..triplets.len())];
                    (t, simulate_response(t, observer, &mut rng))
                })
                .collect();
            Ok(ResponseSet { stimulus_count: observer.means.len(), records })
        }
    }
}

/// Random simple graph with `⌈n·degree/2⌉` edges where every vertex has the
/// given degree (one vertex gets one more when `n·degree` is odd).
///
/// Starts from a circulant graph and randomizes it with degree-preserving
/// double-edge swaps.
fn random_regular_pairs(n: usize, degree: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>, SimulationError> {
    if degree == 0 || degree >= n {
        return Err(SimulationError::InfeasibleDegree { n, degree });
    }
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    for v in 0..n {
        for off in 1..=degree / 2 {
            edges.insert(key(v, (v + off) % n));
        }
    }
    if degree % 2 == 1 {
        let h = n / 2;
        let extra = if n % 2 == 0 { h } else { h + 1 };
        for v in 0..extra {
            edges.insert(key(v, (v + h) % n));
        }
    }
    let mut list: Vec<(usize, usize)> = edges.iter().copied().collect();
    let swaps = 20 * list.len();
    for _ in 0..swaps * 5 {
        let a = rng.random_range(0..list.len());
        let b = rng.random_range(0..list.len());
        if a == b {
            continue;
        }
        let (p, q) = list[a];
        let (r, s) = list[b];
        let (e1, e2) = if rng.random_bool(0.5) { (key(p, r), key(q, s)) } else { (key(p, s), key(q, r)) };
        if e1.0 == e1.1 || e2.0 == e2.1 || e1 == e2 || edges.contains(&e1) || edges.contains(&e2) {
            continue;
        }
        edges.remove(&list[a]);
        edges.remove(&list[b]);
        edges.insert(e1);
        edges.insert(e2);
        list[a] = e1;
        list[b] = e2;
    }
    list.sort_unstable();
    Ok(list)
}

/// Root expected squared error (JND) of a pair-comparison estimate of the
/// mean difference `delta_mu_jnd` from `n` forced-choice votes, with half a
/// vote added to each option.
pub fn expected_rmse_pc(delta_mu_jnd: f64, n: usize) -> Result<f64, SimulationError> {
    if n == 0 {
        return Err(SimulationError::InvalidArgument("n must be positive".into()));
    }
    if !delta_mu_jnd.is_finite() {
        return Err(SimulationError::InvalidArgument("delta must be finite".into()));
    }
    let p = cdf(from_jnd(delta_mu_jnd));
    let nf = n as f64;
    let ln_n_fact = libm::lgamma(nf + 1.0);
    let mut sum = 0.0;
    for k in 0..=n {
        let kf = k as f64;
        let ln_choose = ln_n_fact - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0);
        let ln_pmf = ln_choose + xlogy(kf, p) + xlogy(nf - kf, 1.0 - p);
        let estimate = to_jnd(quantile((kf + 0.5) / (nf + 1.0)));
        let err = estimate - delta_mu_jnd;
        sum += ln_pmf.exp() * err * err;
    }
    Ok(sum.sqrt())
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Ground-truth means (internal units): stimulus 0 at zero, the last at
/// `range_jnd`, the rest uniform in between and sorted.
pub fn uniform_ground_truth(n_stimuli: usize, range_jnd: f64, rng: &mut Rng) -> Vec<f64> {
    let top = from_jnd(range_jnd);
    let mut inner: Vec<f64> = (0..n_stimuli.saturating_sub(2)).map(|_| rng.random_range(0.0..top)).collect();
    inner.sort_by(f64::total_cmp);
    let mut means = Vec::with_capacity(n_stimuli);
    means.push(0.0);
    means.extend(inner);
    if n_stimuli > 1 {
        means.push(top);
    }
    means
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatistic {
    /// Length of per-stimulus 95 % percentile intervals across resamples.
    CiLength,
    Srocc,
    Inversions,
}

impl ConvergenceStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CiLength => "ci_length",
            Self::Srocc => "srocc",
            Self::Inversions => "inversions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub budget: usize,
    pub statistic: ConvergenceStatistic,
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub succeeded: usize,
    pub failed: usize,
}

/// Bootstrap convergence of a reconstruction statistic over response budgets.
///
/// `ground_truth` orders the stimuli for `srocc` and `inversions`; the index
/// order is used when absent. For `ci_length` the row reports the median and
/// the 2.5/97.5 percentiles over stimuli of the per-stimulus interval lengths.
pub fn run_convergence_study(
    pool: &ResponseSet,
    budgets: &[usize],
    resamples: usize,
    statistic: ConvergenceStatistic,
    options: &ReconstructionOptions,
    ground_truth: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<ConvergenceRow>, SimulationError> {
    if resamples < 2 {
        return Err(SimulationError::InvalidArgument("need at least two resamples".into()));
    }
    if pool.is_empty() || budgets.contains(&0) {
        return Err(SimulationError::InvalidArgument("empty pool or zero budget".into()));
    }
    let truth: Vec<f64> = match ground_truth {
        Some(t) if t.len() == pool.stimulus_count => t.to_vec(),
        Some(t) => {
            return Err(SimulationError::InvalidArgument(format!(
                "ground truth has {} values for {} stimuli",
                t.len(),
                pool.stimulus_count
            )))
        }
        None => (0..pool.stimulus_count).map(|s| s as f64).collect(),
    };
    let mut rows = Vec::with_capacity(budgets.len());
    for (b, &budget) in budgets.iter().enumerate() {
        let scales: Vec<Option<Vec<f64>>> = (0..resamples)
            .into_par_iter()
            .map(|r| {
                let stream = (b as u64) << 32 | r as u64;
                let mut rng = rng::stream(seed, stream);
                let sample = pool.resample(budget, &mut rng);
                let opts = ReconstructionOptions { seed: seed ^ stream, ..*options };
                reconstruct(&sample, &opts).ok().map(|rec| rec.scale.values)
            })
            .collect();
        let ok: Vec<Vec<f64>> = scales.iter().flatten().cloned().collect();
        let failed = resamples - ok.len();
        let values: Vec<f64> = match statistic {
            ConvergenceStatistic::Srocc => ok
                .iter()
                .map(|s| rank_metrics(s, &truth).map(|m| m.srocc.unwrap_or(f64::NAN)).unwrap_or(f64::NAN))
                .collect(),
            ConvergenceStatistic::Inversions => ok.iter().map(|s| ordering_inversions(s, &truth) as f64).collect(),
            ConvergenceStatistic::CiLength => {
                if ok.len() < 2 {
                    Vec::new()
                } else {
                    (0..pool.stimulus_count)
                        .filter(|&s| s != options.anchor_index)
                        .map(|s| {
                            let v: Vec<f64> = ok.iter().map(|scale| scale[s]).collect();
                            stats::percentile(&v, 0.975) - stats::percentile(&v, 0.025)
                        })
                        .collect()
                }
            }
        };
        rows.push(ConvergenceRow {
            budget,
            statistic,
            median: stats::median(&values),
            ci_lo: stats::percentile(&values, 0.025),
            ci_hi: stats::percentile(&values, 0.975),
            succeeded: ok.len(),
            failed,
        });
    }
    Ok(rows)
}

/// Inversions of `values` when stimuli are listed in ground-truth order.
pub fn ordering_inversions(values: &[f64], truth: &[f64]) -> u64 {
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
    let seq: Vec<f64> = order.iter().map(|&s| values[s]).collect();
    inversions_of(&seq)
}

/// One method evaluated in a scale-recovery study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyMethod {
    pub name: &'static str,
    pub model: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_stimuli: usize,
    pub range_jnd: f64,
    pub responses: usize,
    pub repeats: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { n_stimuli: 31, range_jnd: 3.0, responses: 20_000, repeats: 20, restarts: 8, seed: 0 }
    }
}

/// Outcome of one method on one repetition; `rmse` is in JND.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub repeat: usize,
    pub method: String,
    pub srocc: f64,
    pub range: f64,
    pub rmse: f64,
}

/// Repeats: draw ground-truth means, simulate general-triplet responses,
/// reconstruct with every method on the same sample.
pub fn run_scale_study(config: &StudyConfig, methods: &[StudyMethod]) -> Result<Vec<StudyRow>, SimulationError> {
    if config.n_stimuli < 3 || config.repeats == 0 {
        return Err(SimulationError::InvalidArgument("need ≥ 3 stimuli and ≥ 1 repeat".into()));
    }
    let per_repeat: Vec<Result<Vec<StudyRow>, SimulationError>> = (0..config.repeats)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(config.seed, rep as u64);
            let truth = uniform_ground_truth(config.n_stimuli, config.range_jnd, &mut rng);
            let observer = ObserverModel::forced_choice(truth.clone());
            let responses = simulate_responses(&observer, TripletSampler::UniformGeneral, config.responses, &mut rng)?;
            let truth_jnd: Vec<f64> = truth.iter().map(|&v| to_jnd(v)).collect();
            methods
                .iter()
                .map(|m| {
                    let opts = ReconstructionOptions {
                        model: m.model,
                        restarts: config.restarts,
                        seed: config.seed.wrapping_add(rep as u64),
                        ..Default::default()
                    };
                    let rec =
                        reconstruct(&responses, &opts).map_err(|e| SimulationError::InvalidArgument(e.to_string()))?;
                    let metrics = rank_metrics(&rec.scale.values, &truth_jnd)
                        .map_err(|e| SimulationError::InvalidArgument(e.to_string()))?;
                    Ok(StudyRow {
                        repeat: rep,
                        method: m.name.to_string(),
                        srocc: metrics.srocc.unwrap_or(f64::NAN),
                        range: rec.scale.range(),
                        rmse: metrics.rmse,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_repeat {
        rows.extend(r?);
    }
    Ok(rows)
}
