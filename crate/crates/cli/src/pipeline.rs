use std::path::Path;
use std::sync::Arc;

use boostiqa_core::boosting::{compose_presentation, BoostSpec};
use boostiqa_core::distortions::{calibrate_levels, write_sequence, LevelDesign, SequenceManifest};
use boostiqa_core::image::{CropRect, Image};
use boostiqa_core::model::{ResponseValue, Triplet};
use boostiqa_core::quality::{SequenceKey, ValidationRules};
use boostiqa_core::records::{read_jsonl, write_jsonl};
use boostiqa_core::simulation::{sample_plan, Budget, PlanKind, SamplingPlan};
use boostiqa_core::study::{build_triplet_hit, Hit, Study, StudyConfig, SystemClock};
use boostiqa_service::{AppState, Stimuli};

use crate::util::{json_bytes, require_seed, Classify, Failure, Paths, Result};
use crate::{BoostArgs, GenerateArgs, ServeArgs};

fn parse_crop(s: &str) -> Result<CropRect> {
    let v: Vec<u32> = s.split(',').map(|p| p.trim().parse()).collect::<std::result::Result<_, _>>().usage("--crop")?;
    match v[..] {
        [x, y, width, height] => Ok(CropRect { x, y, width, height }),
        _ => Err(Failure::Usage(format!("--crop needs x,y,width,height, got {s:?}"))),
    }
}

fn parse_triplet(s: &str) -> Result<Triplet> {
    let v: Vec<usize> =
        s.split(',').map(|p| p.trim().parse()).collect::<std::result::Result<_, _>>().usage("--triplet")?;
    match v[..] {
        [i, j, k] => Ok(Triplet::new(i, j, k)),
        _ => Err(Failure::Usage(format!("--triplet needs i,j,k, got {s:?}"))),
    }
}

pub fn generate(paths: &Paths, a: GenerateArgs) -> Result<()> {
    if a.distortion.is_stochastic() && a.seed.is_none() {
        return Err(Failure::Usage(format!("{} is stochastic; pass --seed", a.distortion.as_str())));
    }
    let design = match (&a.lambdas, &a.probes, &a.impairments) {
        (Some(l), None, None) => {
            if l.len() < 2 || l[0] != 0.0 {
                return Err(Failure::Usage("--lambdas needs at least two values starting with 0".into()));
            }
            LevelDesign { levels: l.len() - 1, spacing_jnd: f64::NAN, lambdas: l.clone(), slope: f64::NAN }
        }
        (None, Some(p), Some(imp)) => {
            let (Some(levels), Some(spacing)) = (a.levels, a.spacing_jnd) else {
                return Err(Failure::Usage("--probes needs --levels and --spacing-jnd".into()));
            };
            calibrate_levels(p, imp, levels, spacing).data("level design")?
        }
        _ => return Err(Failure::Usage("pass either --lambdas or --probes with --impairments".into())),
    };
    let crop = a.crop.as_deref().map(parse_crop).transpose()?;
    let source = Image::load_png(paths.input(&a.source)?).data("reading source")?;
    let out = paths.resolve(&a.out);
    let manifest =
        write_sequence(&source, &a.source_id, a.distortion, &design, a.seed, crop, &out).data("rendering")?;
    paths.emit(None, &json_bytes(&manifest)?)
}

fn save_frames(dir: &Path, frames: &[(String, Image)]) -> Result<()> {
    for (id, img) in frames {
        let path = dir.join(format!("{id}.png"));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).data("creating frame directory")?;
        }
        img.save_png(&path).data(format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn boost(paths: &Paths, a: BoostArgs) -> Result<()> {
    let manifest_path = paths.input(&a.manifest)?;
    let manifest = SequenceManifest::load(&manifest_path).data("reading manifest")?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let images = manifest.load_images(dir).data("reading sequence")?;
    let crop = match a.crop.as_deref() {
        Some(c) => Some(parse_crop(c)?),
        None => manifest.crop_rect,
    };
    let mut spec = BoostSpec::from_label(&a.boost, crop).map_err(Failure::Usage)?;
    if let (Some(alpha), Some(_)) = (a.alpha, spec.amplify) {
        spec.amplify = Some(alpha);
    }
    let key = SequenceKey::new(manifest.source_id.clone(), manifest.distortion_type.clone());
    let prefix = format!("{}/{}", key.source_id, key.distortion_type);
    let out = paths.resolve(&a.out);
    if let Some(t) = a.triplet.as_deref() {
        let p = compose_presentation(&prefix, parse_triplet(t)?, &images, &spec).data("composing")?;
        save_frames(&out, &p.frames)?;
        return paths.emit(Some(&out.join("presentation.json")), &json_bytes(&p.spec)?);
    }
    let Some(hits_out) = a.hits_out else {
        return Err(Failure::Usage("pass --triplet or --hits-out".into()));
    };
    let seed = require_seed(a.seed, "boost --hits-out")?;
    let n = images.len();
    if n < 3 {
        return Err(Failure::Data("a sequence needs at least 3 levels".into()));
    }
    let plan = SamplingPlan {
        kind: PlanKind::GeneralOrderedMaxSpan(a.span.min(n - 1)),
        budget: Budget::ResponsesPerTriplet(1),
        rng_seed: seed,
    };
    let mut triplets = sample_plan(&plan, n).usage("triplet plan")?;
    // Fill the last HIT by wrapping around.
    let per_hit = 19;
    let pad = (per_hit - triplets.len() % per_hit) % per_hit;
    triplets.extend_from_within(..pad.min(triplets.len()));
    let mut hits: Vec<Hit> = Vec::new();
    for (h, chunk) in triplets.chunks(per_hit).enumerate() {
        // The extreme pair makes an obvious test question.
        let test = if h % 2 == 0 {
            (Triplet::new(1, 0, n - 1), ResponseValue::Left)
        } else {
            (Triplet::new(n - 1, 0, 1), ResponseValue::Right)
        };
        let id = format!("{}-{}-{h:04}", a.hit_prefix, key.source_id);
        let (hit, frames) =
            build_triplet_hit(&id, &key, &images, chunk, test, &spec, a.target, seed.wrapping_add(h as u64))
                .data("building HIT")?;
        save_frames(&out, &frames)?;
        hits.push(hit);
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &hits).data("serializing HITs")?;
    paths.emit(Some(&hits_out), &buf)
}

pub fn serve(paths: &Paths, a: ServeArgs) -> Result<()> {
    let config = StudyConfig {
        max_rounds: a.max_rounds.max(1),
        rules: ValidationRules { max_skips: a.max_skips, ..ValidationRules::default() },
        ..StudyConfig::default()
    };
    let study = Study::open(&paths.resolve(&a.log), config, Arc::new(SystemClock)).data("opening log")?;
    if let Some(h) = a.hits {
        let file = std::fs::File::open(paths.input(&h)?).data("reading HITs")?;
        let hits: Vec<Hit> = read_jsonl(std::io::BufReader::new(file)).data("parsing HITs")?;
        for hit in hits {
            if study.hit(&hit.hit_id).is_none() {
                study.add_hit(hit).data("adding HIT")?;
            }
        }
    }
    let stimuli = match a.stimuli {
        Some(dir) => Stimuli::with_root(paths.resolve(&dir)),
        None => Stimuli::new(),
    };
    let state = AppState { study: Arc::new(study), stimuli: Arc::new(stimuli) };
    let runtime = tokio::runtime::Runtime::new().data("starting runtime")?;
    eprintln!("listening on http://{}", a.addr);
    runtime.block_on(boostiqa_service::serve(a.addr, state)).data("serving")
}
