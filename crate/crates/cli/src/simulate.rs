use std::collections::BTreeMap;

use boostiqa_core::model::ModelKind;
use boostiqa_core::normal::to_jnd;
use boostiqa_core::reconstruction::{calibrate_model_range, ModelFamily, ReconstructionOptions};
use boostiqa_core::records::{group_responses, load_triplet_records, save_triplet_records, TripletRecord};
use boostiqa_core::rng;
use boostiqa_core::simulation::{
    expected_rmse_pc, run_convergence_study, run_scale_study, simulate_plan, simulate_responses, uniform_ground_truth,
    Budget, ConvergenceStatistic, NotSureRule, ObserverModel, PlanKind, SamplingPlan, StudyConfig, StudyMethod,
    TripletSampler,
};
use boostiqa_core::stats;

use crate::util::{csv_text, fmt6, json_bytes, require_seed, Classify, Failure, Paths, Result};
use crate::SimulateCommand;

pub fn run(paths: &Paths, cmd: SimulateCommand) -> Result<()> {
    match cmd {
        SimulateCommand::Rmse { n, max_jnd, step, out } => {
            if !(step > 0.0) || !(max_jnd >= 0.0) {
                return Err(Failure::Usage("--step must be positive and --max-jnd non-negative".into()));
            }
            let steps = (max_jnd / step).round() as usize;
            let mut rows = Vec::new();
            for &count in &n {
                for s in 0..=steps {
                    let delta = s as f64 * step;
                    let rmse = expected_rmse_pc(delta, count).usage("rmse")?;
                    rows.push([count.to_string(), format!("{delta:.4}"), fmt6(rmse)]);
                }
            }
            paths.emit(out.as_deref(), &csv_text(&["n", "delta_jnd", "rmse"], rows)?)
        }
        SimulateCommand::Table4 { stimuli, range, responses, repeats, restarts, sigma, alpha, summary, seed, out } => {
            let seed = require_seed(seed, "simulate table4")?;
            let config = StudyConfig { n_stimuli: stimuli, range_jnd: range, responses, repeats, restarts, seed };
            let methods = [
                StudyMethod { name: "thurstone", model: ModelKind::ThurstoneTriplet },
                StudyMethod { name: "ste", model: ModelKind::Ste { alpha } },
                StudyMethod { name: "mlds", model: ModelKind::Mlds { sigma } },
            ];
            for m in &methods {
                m.model.validate().usage(m.name)?;
            }
            let rows = run_scale_study(&config, &methods).numerical("scale study")?;
            let text = if summary {
                let mut out = Vec::new();
                for m in &methods {
                    let mine: Vec<_> = rows.iter().filter(|r| r.method == m.name).collect();
                    let columns: [(&str, Vec<f64>); 3] = [
                        ("srocc", mine.iter().map(|r| r.srocc).collect()),
                        ("range", mine.iter().map(|r| r.range).collect()),
                        ("rmse", mine.iter().map(|r| r.rmse).collect()),
                    ];
                    for (name, v) in columns {
                        out.push([
                            m.name.to_string(),
                            name.to_string(),
                            fmt6(stats::mean(&v)),
                            fmt6(stats::std_dev(&v)),
                            fmt6(stats::median(&v)),
                        ]);
                    }
                }
                csv_text(&["method", "statistic", "mean", "std", "median"], out)?
            } else {
                csv_text(
                    &["repeat", "method", "srocc", "range", "rmse"],
                    rows.iter()
                        .map(|r| [r.repeat.to_string(), r.method.clone(), fmt6(r.srocc), fmt6(r.range), fmt6(r.rmse)]),
                )?
            };
            paths.emit(out.as_deref(), &text)
        }
        SimulateCommand::Convergence { input, budgets, resamples, statistic, model, truth, restarts, seed, out } => {
            let seed = require_seed(seed, "simulate convergence")?;
            let statistic = match statistic.as_str() {
                "ci_length" => ConvergenceStatistic::CiLength,
                "srocc" => ConvergenceStatistic::Srocc,
                "inversions" => ConvergenceStatistic::Inversions,
                other => return Err(Failure::Usage(format!("unknown statistic {other:?}"))),
            };
            let records = load_triplet_records(&paths.input(&input)?).data("reading records")?;
            let groups = group_responses(&records, false);
            let Some((_, pool)) = groups.iter().next().filter(|_| groups.len() == 1) else {
                return Err(Failure::Data(format!("expected one sequence, found {}", groups.len())));
            };
            let truth: Option<Vec<f64>> = match truth {
                Some(p) => {
                    let bytes = std::fs::read(paths.input(&p)?).data("reading truth")?;
                    Some(serde_json::from_slice(&bytes).data("parsing truth")?)
                }
                None => None,
            };
            let options = ReconstructionOptions { model, restarts, ..Default::default() };
            let rows = run_convergence_study(pool, &budgets, resamples, statistic, &options, truth.as_deref(), seed)
                .data("convergence study")?;
            let text = csv_text(
                &["budget", "statistic", "median", "ci_lo", "ci_hi", "succeeded", "failed"],
                rows.iter().map(|r| {
                    [
                        r.budget.to_string(),
                        r.statistic.as_str().to_string(),
                        fmt6(r.median),
                        fmt6(r.ci_lo),
                        fmt6(r.ci_hi),
                        r.succeeded.to_string(),
                        r.failed.to_string(),
                    ]
                }),
            )?;
            paths.emit(out.as_deref(), &text)
        }
        SimulateCommand::Calibrate { family, target, stimuli, responses, seed, out } => {
            let seed = require_seed(seed, "simulate calibrate")?;
            let fam = match family.as_str() {
                "mlds" => ModelFamily::Mlds,
                "ste" => ModelFamily::Ste,
                other => return Err(Failure::Usage(format!("unknown family {other:?}; expected mlds or ste"))),
            };
            if stimuli < 3 {
                return Err(Failure::Usage("need at least 3 stimuli".into()));
            }
            let means = uniform_ground_truth(stimuli, target, &mut rng::stream(seed, u64::MAX));
            let parameter = calibrate_model_range(fam, target, &means, responses, seed).numerical("calibration")?;
            let result = BTreeMap::from([
                ("family", serde_json::json!(family)),
                ("target_range_jnd", serde_json::json!(target)),
                ("parameter", serde_json::json!(parameter)),
            ]);
            paths.emit(out.as_deref(), &json_bytes(&result)?)
        }
        SimulateCommand::Observer {
            stimuli,
            range,
            responses,
            plan,
            not_sure,
            source_id,
            distortion_type,
            seed,
            out,
            truth_out,
        } => {
            let seed = require_seed(seed, "simulate observer")?;
            if stimuli < 3 {
                return Err(Failure::Usage("need at least 3 stimuli".into()));
            }
            let mut r = rng::stream(seed, u64::MAX);
            let truth = uniform_ground_truth(stimuli, range, &mut r);
            let observer = ObserverModel {
                means: truth.clone(),
                not_sure: not_sure.map_or(NotSureRule::Never, NotSureRule::Threshold),
            };
            let set = match parse_plan(&plan)? {
                Plan::Sampler(s) => simulate_responses(&observer, s, responses, &mut r),
                Plan::Fixed(kind) => simulate_plan(
                    &SamplingPlan { kind, budget: Budget::ResponsesPerTriplet(responses), rng_seed: seed },
                    &observer,
                ),
            }
            .usage("simulation")?;
            let epoch = chrono_epoch();
            let records: Vec<TripletRecord> = set
                .records
                .iter()
                .map(|&(t, response)| TripletRecord {
                    source_id: source_id.clone(),
                    distortion_type: distortion_type.clone(),
                    i: t.i,
                    j: t.j,
                    k: t.k,
                    response,
                    time_stamp: epoch,
                    time_used: 0.0,
                    worker_id: "simulated".into(),
                    hit_id: String::new(),
                    is_test: false,
                    boost: String::new(),
                })
                .collect();
            let path = paths.resolve(&out);
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).data("creating output directory")?;
            }
            save_triplet_records(&path, &records).data("writing records")?;
            if let Some(t) = truth_out {
                let jnd: Vec<f64> = truth.iter().map(|&v| to_jnd(v)).collect();
                paths.emit(Some(&t), &json_bytes(&jnd)?)?;
            }
            Ok(())
        }
    }
}

fn chrono_epoch() -> boostiqa_core::records::Timestamp {
    boostiqa_core::records::Timestamp::UNIX_EPOCH
}

enum Plan {
    Sampler(TripletSampler),
    Fixed(PlanKind),
}

fn parse_plan(s: &str) -> Result<Plan> {
    let num = |v: &str| v.parse::<usize>().usage(format!("plan {s:?}"));
    Ok(match s.split_once(':') {
        None if s == "uniform" => Plan::Sampler(TripletSampler::UniformGeneral),
        None if s == "uniform_baseline" => Plan::Sampler(TripletSampler::UniformBaseline),
        Some(("general", v)) => Plan::Fixed(PlanKind::GeneralOrderedMaxSpan(num(v)?)),
        Some(("baseline", v)) => Plan::Fixed(PlanKind::BaselineMaxSpan(num(v)?)),
        Some(("sparse", v)) => Plan::Fixed(PlanKind::SparseGraph(num(v)?)),
        _ => return Err(Failure::Usage(format!("unknown plan {s:?}"))),
    })
}
