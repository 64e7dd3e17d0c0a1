use std::collections::BTreeMap;

use boostiqa_core::analysis::{
    dataset_resolution, detection_rate, fit_5pl, rank_metrics, sensitivity_gain, tpr, Logistic5Fit, ResolutionOptions,
};
use boostiqa_core::quality::{
    outlier_report_csv, remove_outliers, validate_assignment, AssignmentRecord, ConsensusBuilder, DmosConsensus,
    PilotConsensus, TripletConsensus, Validation, ValidationRules,
};
use boostiqa_core::recalibration::{hybrid_recalibrate, report_csv, HybridPlan, RecalibrationReport};
use boostiqa_core::reconstruction::{
    reconstruct, Orientation, ReconstructionError, ReconstructionOptions, ScaleReconstruction,
};
use boostiqa_core::records::{group_responses, load_triplet_records, read_jsonl, write_jsonl};
use boostiqa_core::ImpairmentScale;

use crate::util::{csv_text, fmt6, fmt_opt, json_bytes, require_seed, Classify, Failure, Paths, Result};
use crate::{AnalyzeCommand, CleanArgs, OrientationArg, RecalibrateArgs, ReconstructArgs};

fn classify(what: String, e: ReconstructionError) -> Failure {
    match e {
        ReconstructionError::Empty
        | ReconstructionError::IndexOutOfRange { .. }
        | ReconstructionError::LengthMismatch { .. }
        | ReconstructionError::Disconnected { .. } => Failure::Data(format!("{what}: {e}")),
        ReconstructionError::InvalidArgument(_) => Failure::Usage(format!("{what}: {e}")),
        _ => Failure::Numerical(format!("{what}: {e}")),
    }
}

fn reconstruct_options(a: &ReconstructArgs) -> Result<ReconstructionOptions> {
    a.model.validate().usage("--model")?;
    if a.restarts == 0 || !(a.tolerance > 0.0) {
        return Err(Failure::Usage("--restarts and --tolerance must be positive".into()));
    }
    Ok(ReconstructionOptions {
        model: a.model,
        restarts: a.restarts,
        tolerance: a.tolerance,
        anchor_index: a.anchor,
        seed: a.seed,
        orientation: match a.orientation {
            OrientationArg::Auto => Orientation::Auto,
            OrientationArg::Free => Orientation::Free,
            OrientationArg::AboveAnchor => Orientation::AboveAnchor,
        },
        ..Default::default()
    })
}

pub fn reconstruct_cmd(paths: &Paths, a: ReconstructArgs) -> Result<()> {
    let options = reconstruct_options(&a)?;
    let records = load_triplet_records(&paths.input(&a.input)?).data("reading records")?;
    let groups = group_responses(&records, a.include_tests);
    if groups.is_empty() {
        return Err(Failure::Data("no records".into()));
    }
    let mut out: BTreeMap<String, ScaleReconstruction> = BTreeMap::new();
    for (key, set) in groups {
        let rec = reconstruct(&set, &options).map_err(|e| classify(key.to_string(), e))?;
        out.insert(key.to_string(), rec);
    }
    paths.emit(a.out.as_deref(), &json_bytes(&out)?)
}

pub fn clean(paths: &Paths, a: CleanArgs) -> Result<()> {
    let file = std::fs::File::open(paths.input(&a.input)?).data("opening assignments")?;
    let all: Vec<AssignmentRecord> = read_jsonl(std::io::BufReader::new(file)).data("reading assignments")?;
    if all.is_empty() {
        return Err(Failure::Data("no assignments".into()));
    }
    let rules = ValidationRules { max_skips: a.max_skips, ..ValidationRules::default() };
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for (n, asg) in all.into_iter().enumerate() {
        match validate_assignment(&asg, &rules).data(format!("assignment {}", n + 1))? {
            Validation::Accept => valid.push(asg),
            Validation::Reject(reason) => rejected.push((asg, reason)),
        }
    }
    let options = ReconstructionOptions { restarts: a.restarts.max(1), seed: a.seed, ..Default::default() };
    let triplet = TripletConsensus { options };
    let builder: &dyn ConsensusBuilder = match a.mode.as_str() {
        "triplet" => &triplet,
        "dcr" => &DmosConsensus,
        "pilot" => &PilotConsensus,
        other => return Err(Failure::Usage(format!("unknown mode {other:?}; expected triplet, dcr or pilot"))),
    };
    if valid.is_empty() {
        return Err(Failure::Data(format!("all {} assignments were rejected", rejected.len())));
    }
    let result = remove_outliers(&valid, a.keep, builder, a.max_rounds).map_err(|e| match e {
        boostiqa_core::quality::QcError::InvalidArgument(m) => Failure::Usage(m),
        other => Failure::Numerical(other.to_string()),
    })?;
    let kept: Vec<&AssignmentRecord> = result.kept.iter().map(|&i| &valid[i]).collect();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &kept).data("serializing")?;
    paths.emit(Some(&a.out), &buf)?;
    if let Some(r) = a.report {
        let csv = outlier_report_csv(&valid, &result, &rejected).data("report")?;
        paths.emit(Some(&r), csv.as_bytes())?;
    }
    eprintln!(
        "kept {} of {} assignments ({} rejected, {} outliers) after {} rounds{}",
        kept.len(),
        valid.len() + rejected.len(),
        rejected.len(),
        valid.len() - kept.len(),
        result.rounds.len(),
        if result.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn read_xy(path: &std::path::Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).data("opening csv")?;
    let headers = rdr.headers().data("csv header")?.clone();
    let col = |n: &str| {
        headers.iter().position(|h| h.trim() == n).ok_or_else(|| Failure::Data(format!("missing column {n}")))
    };
    let (xi, yi) = (col("x")?, col("y")?);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (n, row) in rdr.records().enumerate() {
        let row = row.data("csv")?;
        let get = |i: usize| row.get(i).unwrap_or("").trim().parse::<f64>().data(format!("line {}", n + 2));
        x.push(get(xi)?);
        y.push(get(yi)?);
    }
    Ok((x, y))
}

fn read_json<T: serde::de::DeserializeOwned>(paths: &Paths, p: &std::path::Path) -> Result<T> {
    let path = paths.input(p)?;
    let bytes = std::fs::read(&path).data(format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).data(format!("parsing {}", path.display()))
}

pub fn run(paths: &Paths, cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Tpr { input, out } => {
            let records = load_triplet_records(&paths.input(&input)?).data("reading records")?;
            let mut rows = Vec::new();
            for (key, set) in group_responses(&records, false) {
                let baseline: Vec<_> = set.records.iter().copied().filter(|(t, _)| t.is_baseline()).collect();
                let Ok(rate) = tpr(&baseline) else { continue };
                let d = detection_rate(rate);
                rows.push([
                    key.source_id,
                    key.distortion_type,
                    baseline.len().to_string(),
                    fmt6(rate),
                    fmt6(d.value),
                    fmt6(d.raw),
                ]);
            }
            let header = ["source_id", "distortion_type", "responses", "tpr", "detection_rate", "detection_rate_raw"];
            paths.emit(out.as_deref(), &csv_text(&header, rows)?)
        }
        AnalyzeCommand::Fit { input, unconstrained, out } => {
            let (x, y) = read_xy(&paths.input(&input)?)?;
            let fit = fit_5pl(&x, &y, !unconstrained).numerical("5PL fit")?;
            paths.emit(out.as_deref(), &json_bytes(&fit)?)
        }
        AnalyzeCommand::Gain { boosted, plain, grid, out } => {
            let b: Logistic5Fit = read_json(paths, &boosted)?;
            let p: Logistic5Fit = read_json(paths, &plain)?;
            let [from, to, step] = grid[..] else { unreachable!("clap enforces three values") };
            if !(step > 0.0) || to < from {
                return Err(Failure::Usage("--grid needs from,to,step with step > 0 and to ≥ from".into()));
            }
            let xs: Vec<f64> = (0..=((to - from) / step).round() as usize).map(|i| from + i as f64 * step).collect();
            let gain = sensitivity_gain(&b, &p, &xs);
            let rows = xs.iter().zip(gain).map(|(x, g)| [fmt6(*x), fmt_opt(g)]);
            paths.emit(out.as_deref(), &csv_text(&["x", "gain"], rows)?)
        }
        AnalyzeCommand::Compare { a, b, out } => {
            let ra: BTreeMap<String, ScaleReconstruction> = read_json(paths, &a)?;
            let rb: BTreeMap<String, ScaleReconstruction> = read_json(paths, &b)?;
            let mut rows = Vec::new();
            for (key, x) in &ra {
                let Some(y) = rb.get(key) else { continue };
                let m = rank_metrics(&x.scale.values, &y.scale.values).data(key)?;
                rows.push([key.clone(), fmt_opt(m.srocc), fmt_opt(m.plcc), fmt6(m.rmse), fmt6(m.mae)]);
            }
            if rows.is_empty() {
                return Err(Failure::Data("the files share no sequence".into()));
            }
            paths.emit(out.as_deref(), &csv_text(&["sequence", "srocc", "plcc", "rmse", "mae"], rows)?)
        }
        AnalyzeCommand::Resolution { input, step, width, out } => {
            let mut rdr = csv::Reader::from_path(paths.input(&input)?).data("opening csv")?;
            let headers = rdr.headers().data("csv header")?.clone();
            let col = |n: &str| {
                headers.iter().position(|h| h.trim() == n).ok_or_else(|| Failure::Data(format!("missing column {n}")))
            };
            let (si, pi) = (col("sequence")?, col("psnr")?);
            let mut order: Vec<String> = Vec::new();
            let mut seqs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (n, row) in rdr.records().enumerate() {
                let row = row.data("csv")?;
                let name = row.get(si).unwrap_or("").to_string();
                let raw = row.get(pi).unwrap_or("").trim();
                let psnr = match raw {
                    "inf" | "Inf" | "infinity" => f64::INFINITY,
                    _ => raw.parse::<f64>().data(format!("line {}", n + 2))?,
                };
                if !seqs.contains_key(&name) {
                    order.push(name.clone());
                }
                seqs.entry(name).or_default().push(psnr);
            }
            let sequences: Vec<Vec<f64>> = order.iter().map(|n| seqs[n].clone()).collect();
            let curve = dataset_resolution(&sequences, ResolutionOptions { step_db: step, width_db: width })
                .data("resolution")?;
            let rows = (0..curve.psnr_samples.len())
                .map(|i| [fmt6(curve.psnr_samples[i]), fmt_opt(curve.raw[i]), fmt_opt(curve.smoothed[i])]);
            paths.emit(out.as_deref(), &csv_text(&["psnr", "raw", "smoothed"], rows)?)
        }
    }
}

pub fn recalibrate(paths: &Paths, a: RecalibrateArgs) -> Result<()> {
    let seed = require_seed(a.seed, "recalibrate")?;
    let plan = HybridPlan { budget: a.budget, plain_fraction: a.alpha, repeats: a.repeats, rng_seed: seed };
    plan.validate().usage("plan")?;
    let boosted = group_responses(&load_triplet_records(&paths.input(&a.boosted)?).data("reading boosted")?, false);
    let plain = group_responses(&load_triplet_records(&paths.input(&a.plain)?).data("reading plain")?, false);
    let options = ReconstructionOptions { model: a.model, restarts: a.restarts.max(1), seed, ..Default::default() };
    let mut reports = Vec::new();
    let mut scales: BTreeMap<String, ImpairmentScale> = BTreeMap::new();
    for (key, bset) in &boosted {
        let Some(pset) = plain.get(key) else { continue };
        let name = key.to_string();
        let result = hybrid_recalibrate(bset, pset, &plan, &options).numerical(&name)?;
        let full_boost = reconstruct(bset, &options).map_err(|e| classify(name.clone(), e))?.scale;
        let reference = reconstruct(pset, &options).map_err(|e| classify(name.clone(), e))?.scale;
        let report = RecalibrationReport::new(&name, &full_boost, result.scale(), &result.selected.fit, &reference)
            .numerical(&name)?;
        reports.push(report);
        scales.insert(name, result.selected.recalibrated.clone());
    }
    if reports.is_empty() {
        return Err(Failure::Data("no sequence appears in both inputs".into()));
    }
    paths.emit(a.out.as_deref(), report_csv(&reports).data("report")?.as_bytes())?;
    if let Some(p) = a.scales_out {
        paths.emit(Some(&p), &json_bytes(&scales)?)?;
    }
    Ok(())
}
