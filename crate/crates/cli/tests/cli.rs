use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Output};

use boostiqa_core::analysis::rank_metrics;
use boostiqa_core::image::Image;
use boostiqa_core::model::{ResponseValue, Triplet};
use boostiqa_core::quality::{AssignmentRecord, Expected, Trial, TrialEntry};
use boostiqa_core::reconstruction::ScaleReconstruction;

fn boostiqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boostiqa")).args(args).env_remove("BOOSTIQA_DATA").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = boostiqa(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    boostiqa(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn rmse_curve_spot_values() {
    let csv = ok(&["simulate", "rmse", "--n", "5,40", "--max-jnd", "5"]);
    let value = |n: &str, d: &str| -> f64 {
        let line = csv.lines().find(|l| l.starts_with(&format!("{n},{d},"))).unwrap();
        line.rsplit(',').next().unwrap().parse().unwrap()
    };
    assert!((value("5", "0.0000") - 0.798).abs() <= 0.002);
    assert!((value("40", "0.0000") - 0.292).abs() <= 0.002);
    assert!((value("5", "5.0000") - 2.952).abs() <= 0.005);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["nonsense"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["simulate", "table4"]), 1, "missing seed is a usage error");
    assert_eq!(code(&["reconstruct", "--in", "/nonexistent/responses.csv"]), 2);
    assert_eq!(code(&["reconstruct", "--in", "x.csv", "--model", "ste:-1"]), 1);
}

#[test]
fn table4_is_deterministic() {
    let args = [
        "simulate",
        "table4",
        "--stimuli",
        "8",
        "--responses",
        "1500",
        "--repeats",
        "2",
        "--restarts",
        "2",
        "--seed",
        "4",
    ];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    assert_eq!(a.lines().count(), 1 + 2 * 3);
    assert!(a.starts_with("repeat,method,srocc,range,rmse\n"));
    let mut summary = args.to_vec();
    summary.push("--summary");
    assert_eq!(ok(&summary).lines().count(), 1 + 3 * 3);
}

#[test]
fn observer_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.jsonl");
    let truth = dir.path().join("truth.json");
    ok(&[
        "simulate",
        "observer",
        "--stimuli",
        "10",
        "--responses",
        "6000",
        "--seed",
        "9",
        "--out",
        p(&records),
        "--truth-out",
        p(&truth),
    ]);
    let json = ok(&["reconstruct", "--in", p(&records)]);
    let recs: std::collections::BTreeMap<String, ScaleReconstruction> = serde_json::from_str(&json).unwrap();
    let rec = &recs["sim/synthetic"];
    let truth: Vec<f64> = serde_json::from_slice(&std::fs::read(&truth).unwrap()).unwrap();
    assert!(rank_metrics(&rec.scale.values, &truth).unwrap().srocc.unwrap() > 0.9);
    // General triplets leave `auto` free.
    assert_eq!(ok(&["reconstruct", "--in", p(&records), "--orientation", "free"]), json);
    assert_eq!(code(&["reconstruct", "--in", p(&records), "--orientation", "sideways"]), 1);

    // Same data via the data root and CSV.
    let out = Command::new(env!("CARGO_BIN_EXE_boostiqa"))
        .args(["simulate", "observer", "--stimuli", "10", "--responses", "6000", "--seed", "9", "--out", "r.csv"])
        .env("BOOSTIQA_DATA", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let via_csv = ok(&["reconstruct", "--in", p(&dir.path().join("r.csv"))]);
    assert_eq!(json, via_csv);

    let a = dir.path().join("a.json");
    std::fs::write(&a, &json).unwrap();
    let cmp = ok(&["analyze", "compare", "--a", p(&a), "--b", p(&a)]);
    assert!(cmp.starts_with("sequence,srocc,plcc,rmse,mae\nsim/synthetic,1.000000,1.000000,0.000000,0.000000"));
}

#[test]
fn disconnected_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("r.csv");
    std::fs::write(
        &f,
        "source_id,distortion_type,i,j,k,response,time_stamp,time_used,worker_id\n\
         s,d,1,0,2,left,2024-01-01T00:00:00Z,1,w\n\
         s,d,4,3,5,left,2024-01-01T00:00:00Z,1,w\n",
    )
    .unwrap();
    let out = boostiqa(&["reconstruct", "--in", p(&f)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("unreachable")
            || String::from_utf8_lossy(&out.stderr).contains("disconnected")
    );
}

#[test]
fn generate_and_boost() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.png");
    Image::from_fn(48, 32, |x, y| [(x * 5) as u8, (y * 7) as u8, ((x + y) * 3) as u8]).save_png(&src).unwrap();
    let seq = dir.path().join("seq");
    let manifest = ok(&[
        "generate",
        "--source",
        p(&src),
        "--source-id",
        "img",
        "--distortion",
        "lens_blur",
        "--lambdas",
        "0,0.5,1,1.5,2",
        "--crop",
        "4,4,16,12",
        "--out",
        p(&seq),
    ]);
    assert!(manifest.contains("\"distortion_type\": \"lens_blur\""));
    assert_eq!(std::fs::read_dir(&seq).unwrap().count(), 6);
    assert_eq!(
        code(&[
            "generate",
            "--source",
            p(&src),
            "--source-id",
            "img",
            "--distortion",
            "jitter",
            "--lambdas",
            "0,1",
            "--out",
            p(&seq)
        ]),
        1
    );
    let calibrated = dir.path().join("cal");
    ok(&[
        "generate",
        "--source",
        p(&src),
        "--source-id",
        "img",
        "--distortion",
        "multiplicative_noise",
        "--probes",
        "0.01,0.02,0.04",
        "--impairments",
        "0.5,1.1,1.9",
        "--levels",
        "3",
        "--spacing-jnd",
        "0.5",
        "--seed",
        "1",
        "--out",
        p(&calibrated),
    ]);

    let frames = dir.path().join("frames");
    let man = seq.join("manifest.json");
    ok(&["boost", "--manifest", p(&man), "--boost", "AZF", "--triplet", "1,0,4", "--out", p(&frames)]);
    let spec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(frames.join("presentation.json")).unwrap()).unwrap();
    assert_eq!(spec["mode"], "flicker_pair");
    let id = spec["panels"][0]["frames"][0]["image_id"].as_str().unwrap();
    let frame = Image::load_png(frames.join(format!("{id}.png"))).unwrap();
    assert_eq!((frame.width(), frame.height()), (32, 24));

    let hits = dir.path().join("hits.jsonl");
    assert_eq!(code(&["boost", "--manifest", p(&man), "--hits-out", p(&hits), "--out", p(&frames)]), 1);
    ok(&["boost", "--manifest", p(&man), "--hits-out", p(&hits), "--span", "4", "--seed", "2", "--out", p(&frames)]);
    let text = std::fs::read_to_string(&hits).unwrap();
    // Ordered triplets with span ≤ 4 on 5 levels: 3·1 + 2·2 + 1·3 = 10, one HIT.
    assert_eq!(text.lines().count(), 1);
}

fn assignment(worker: &str, flip: bool) -> AssignmentRecord {
    let responses = (0..20)
        .map(|n| {
            let (i, k) = (1 + n % 4, 5 + n % 2);
            let (t, r) = if n % 2 == 0 {
                (Triplet::new(i, 0, k), ResponseValue::Left)
            } else {
                (Triplet::new(k, 0, i), ResponseValue::Right)
            };
            let r = if flip && n != 0 { r.mirrored() } else { r };
            TrialEntry {
                source_id: "s".into(),
                distortion_type: "d".into(),
                trial: Trial::Triplet { triplet: t, response: r },
                time_used: 2.0,
            }
        })
        .collect();
    AssignmentRecord {
        worker_id: worker.into(),
        hit_id: "h".into(),
        responses,
        test_question_index: 0,
        test_expected: Expected::Response(ResponseValue::Left),
    }
}

#[test]
fn clean_removes_planted_workers() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("assignments.jsonl");
    let mut f = std::fs::File::create(&input).unwrap();
    for w in 0..18 {
        writeln!(f, "{}", serde_json::to_string(&assignment(&format!("good{w:02}"), false)).unwrap()).unwrap();
    }
    for w in 0..2 {
        writeln!(f, "{}", serde_json::to_string(&assignment(&format!("bad{w}"), true)).unwrap()).unwrap();
    }
    let mut failed = assignment("lazy", false);
    failed.responses[0].trial = Trial::Triplet { triplet: Triplet::new(1, 0, 5), response: ResponseValue::Right };
    writeln!(f, "{}", serde_json::to_string(&failed).unwrap()).unwrap();
    drop(f);
    let kept = dir.path().join("kept.jsonl");
    let report = dir.path().join("report.csv");
    for mode in ["pilot", "triplet"] {
        ok(&["clean", "--in", p(&input), "--mode", mode, "--keep", "0.9", "--out", p(&kept), "--report", p(&report)]);
        let kept_text = std::fs::read_to_string(&kept).unwrap();
        assert_eq!(kept_text.lines().count(), 18);
        assert!(!kept_text.contains("\"bad"));
        let rep = std::fs::read_to_string(&report).unwrap();
        assert!(rep.starts_with("worker_id,hit_id,reason,round,distance\n"));
        assert!(rep.contains("lazy,h,test_failed,0,"));
        assert_eq!(rep.matches(",outlier,").count(), 2);
    }
    assert_eq!(code(&["clean", "--in", p(&input), "--mode", "nope", "--out", p(&kept)]), 1);
}

#[test]
fn analyze_commands() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.csv");
    ok(&[
        "simulate",
        "observer",
        "--stimuli",
        "6",
        "--responses",
        "40",
        "--plan",
        "baseline:3",
        "--seed",
        "1",
        "--out",
        p(&records),
    ]);
    let tpr = ok(&["analyze", "tpr", "--in", p(&records)]);
    let row: Vec<&str> = tpr.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "sim");
    let rate: f64 = row[3].parse().unwrap();
    assert!(rate > 0.5 && rate <= 1.0);

    let xy = dir.path().join("xy.csv");
    let mut text = String::from("x,y\n");
    for i in 0..12 {
        let x = f64::from(i);
        text.push_str(&format!("{x},{}\n", 2.0 * x + 1.0));
    }
    std::fs::write(&xy, text).unwrap();
    let fit = dir.path().join("fit.json");
    ok(&["analyze", "fit", "--in", p(&xy), "--out", p(&fit)]);
    let gain = ok(&["analyze", "gain", "--boosted", p(&fit), "--plain", p(&fit), "--grid", "0", "10", "5"]);
    assert_eq!(gain, "x,gain\n0.000000,1.000000\n5.000000,1.000000\n10.000000,1.000000\n");

    let psnr = dir.path().join("psnr.csv");
    std::fs::write(&psnr, "sequence,psnr\na,inf\na,40\na,35\na,30\nb,inf\nb,38\nb,33\n").unwrap();
    let res = ok(&["analyze", "resolution", "--in", p(&psnr), "--step", "1", "--width", "0"]);
    assert!(res.starts_with("psnr,raw,smoothed\n"));
    assert!(res.contains("\n35.000000,"));
}

#[test]
fn recalibrate_reports_before_and_after() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain.csv");
    let boosted = dir.path().join("boosted.csv");
    let common = ["--stimuli", "7", "--responses", "4000", "--seed", "5", "--source-id", "s", "--distortion-type", "d"];
    ok(&[&["simulate", "observer", "--range", "2", "--out", p(&plain)][..], &common].concat());
    ok(&[&["simulate", "observer", "--range", "6", "--out", p(&boosted)][..], &common].concat());
    let report = ok(&[
        "recalibrate",
        "--boosted",
        p(&boosted),
        "--plain",
        p(&plain),
        "--budget",
        "800",
        "--repeats",
        "3",
        "--restarts",
        "1",
        "--seed",
        "1",
    ]);
    let header: Vec<&str> = report.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "s/d");
    let col = |n: &str| row[header.iter().position(|h| *h == n).unwrap()].parse::<f64>().unwrap();
    assert!(col("rmse_after") < col("rmse_before"));
    assert_eq!(code(&["recalibrate", "--boosted", p(&boosted), "--plain", p(&plain)]), 1);
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_boostiqa"))
        .args(["serve", "--log", p(&dir.path().join("log.jsonl")), "--addr", &addr])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut response = String::new();
    for _ in 0..100 {
        if let Ok(mut s) = std::net::TcpStream::connect(&addr) {
            write!(s, "GET /api/stats HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
            s.read_to_string(&mut response).unwrap();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"hits\":0"));
}
