use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{debug, info, warn};
use posekit::datagen::{perturb_pose, SampleSet};
use posekit::metrics::{
    evaluate, summarize_with_failures, AccuracySummary, MetricReport, PassRate,
};
use posekit::parallel::{self, derive_seed, Exec};
use posekit::refine::{
    refine, track as run_track, Matcher, NoisyOracle, Observation, OracleMatcher, SilhouetteMatcher,
};
use posekit::{MaskImage, ObjectModel, Pose, Representation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MatcherKind};
use crate::CliError;

pub fn set_dir(out: &Path) -> PathBuf {
    out.join("set")
}

pub fn sequence_dir(out: &Path) -> PathBuf {
    out.join("sequence")
}

pub fn results_dir(out: &Path, matcher: MatcherKind, repr: Representation) -> PathBuf {
    out.join("results")
        .join(format!("{}-{}", matcher.name(), repr.name()))
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn make_matcher(cfg: &ExperimentConfig, gt: Vec<Pose>, stream: u64) -> Box<dyn Matcher> {
    match cfg.matcher.kind {
        MatcherKind::Oracle => Box::new(OracleMatcher::sequence(gt)),
        MatcherKind::Noisy => Box::new(NoisyOracle::with_oracle(
            OracleMatcher::sequence(gt),
            cfg.matcher.noisy.contraction,
            cfg.matcher.noisy.noise,
            derive_seed(cfg.seed ^ 0x6e6f_6973_7900_0000, stream),
        )),
        MatcherKind::Silhouette => Box::new(SilhouetteMatcher::new(cfg.matcher.silhouette)),
    }
}

/// Recorded tracking input: frames live in `frames/{k:06}.pgm` beside this file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFile {
    pub object: String,
    pub frames: usize,
    pub init: Pose,
    #[serde(default)]
    pub gt: Option<Vec<Pose>>,
    /// Pose offered for re-initialization on each frame, if any.
    #[serde(default)]
    pub detections: Option<Vec<Option<Pose>>>,
}

pub fn generate(cfg: &ExperimentConfig, exec: Exec) -> Result<(), CliError> {
    cfg.require_objects()?;
    let models = cfg.load_objects()?;
    let set =
        posekit::datagen::generate_samples(&models, &cfg.intrinsics, &cfg.generate_config(), exec)
            .map_err(runtime)?;
    let dir = set_dir(&cfg.out);
    set.write(&dir).map_err(runtime)?;
    info!(
        "wrote {} samples to {}",
        set.manifest.samples.len(),
        dir.display()
    );

    if let Some(seq) = &cfg.sequence {
        let model = &models
            .iter()
            .find(|(n, _)| *n == seq.object)
            .expect("validated sequence object")
            .1;
        let generated = seq
            .script
            .generate(model, &seq.start, &cfg.intrinsics)
            .map_err(runtime)?;
        let dir = sequence_dir(&cfg.out);
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(runtime)?;
        let mut detections = Vec::with_capacity(generated.frames.len());
        for (k, (frame, gt)) in generated.frames.iter().zip(&generated.gt).enumerate() {
            frame
                .write_pgm(&frames_dir.join(format!("{k:06}.pgm")))
                .map_err(runtime)?;
            detections.push(if frame.is_empty() {
                None
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 << 40 | k as u64));
                Some(perturb_pose(gt, &seq.detection_noise, &mut rng).map_err(runtime)?)
            });
        }
        let file = SequenceFile {
            object: seq.object.clone(),
            frames: generated.frames.len(),
            init: generated.gt[0],
            gt: Some(generated.gt),
            detections: Some(detections),
        };
        write_json(&dir.join("sequence.json"), &file)?;
        info!("wrote {}-frame sequence to {}", file.frames, dir.display());
    }
    Ok(())
}

/// One line of `metrics_it{k}.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub sample: usize,
    pub object: String,
    pub matcher: String,
    pub representation: String,
    pub iterations: usize,
    pub diameter: f64,
    pub ok: bool,
    pub error: Option<String>,
    pub init: Option<MetricReport>,
    #[serde(rename = "final")]
    pub final_: Option<MetricReport>,
}

pub struct RefineOutcome {
    pub samples: usize,
    pub failures: usize,
}

pub fn refine_cmd(cfg: &ExperimentConfig, exec: Exec) -> Result<RefineOutcome, CliError> {
    cfg.require_objects()?;
    let models = cfg.load_objects()?;
    let dir = set_dir(&cfg.out);
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::Config(format!(
            "no sample set at {}",
            dir.display()
        )));
    }
    let set = SampleSet::read(&dir).map_err(runtime)?;
    let lookup: BTreeMap<&str, &ObjectModel> =
        models.iter().map(|(n, m)| (n.as_str(), m)).collect();
    for s in &set.manifest.samples {
        if !lookup.contains_key(s.object.as_str()) {
            return Err(CliError::Config(format!(
                "objects: sample set uses `{}` which the config does not define",
                s.object
            )));
        }
    }
    let out = results_dir(&cfg.out, cfg.matcher.kind, cfg.representation);
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(runtime)?;
    let intr = set.manifest.intrinsics;
    let rc = cfg.refine_config(cfg.max_iterations());
    let jobs: Vec<usize> = (0..set.manifest.samples.len()).collect();

    let results = parallel::map_slice(exec, &jobs, |&i| {
        let s = &set.manifest.samples[i];
        let model = lookup[s.object.as_str()];
        let matcher = make_matcher(cfg, vec![s.gt], s.index as u64);
        let obs = Observation::from_mask(set.observed[i].clone());
        let (trace, error) = match refine(&s.init, &obs, model, &intr, matcher.as_ref(), &rc) {
            Ok(t) => (t, None),
            Err(f) => (f.trace, Some(f.error.to_string())),
        };
        let path = traces.join(format!("{:06}.jsonl", s.index));
        let written = fs::write(&path, trace.to_jsonl())
            .with_context(|| format!("writing {}", path.display()));
        (trace, error, written)
    });

    let mut per_k: BTreeMap<usize, Vec<MetricLine>> = BTreeMap::new();
    let mut failures = 0;
    for (i, (trace, error, written)) in results.into_iter().enumerate() {
        written.map_err(runtime)?;
        let s = &set.manifest.samples[i];
        let model = lookup[s.object.as_str()];
        if let Some(e) = &error {
            failures += 1;
            warn!("sample {}: {e}", s.index);
        } else {
            debug!("sample {} refined", s.index);
        }
        let init = evaluate(&s.gt, &s.init, model, &intr).ok();
        for &k in &cfg.iterations {
            let (final_, err) = match trace.steps.get(k) {
                Some(step) => match evaluate(&s.gt, &step.pose, model, &intr) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                None => (
                    None,
                    Some(error.clone().unwrap_or_else(|| "trace ended early".into())),
                ),
            };
            per_k.entry(k).or_default().push(MetricLine {
                sample: s.index,
                object: s.object.clone(),
                matcher: cfg.matcher.kind.name().into(),
                representation: cfg.representation.name().into(),
                iterations: k,
                diameter: model.diameter,
                ok: final_.is_some(),
                error: err,
                init,
                final_,
            });
        }
    }
    for (k, lines) in &per_k {
        let mut text = String::new();
        for l in lines {
            text.push_str(&serde_json::to_string(l).map_err(runtime)?);
            text.push('\n');
        }
        fs::write(out.join(format!("metrics_it{k}.jsonl")), text).map_err(runtime)?;
    }
    info!(
        "refined {} samples with {}/{} ({} failed)",
        jobs.len(),
        cfg.matcher.kind.name(),
        cfg.representation,
        failures
    );
    Ok(RefineOutcome {
        samples: jobs.len(),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub object: String,
    pub matcher: String,
    pub representation: String,
    pub iterations: usize,
    pub count: usize,
    pub rates: Vec<PassRate>,
}

fn metric_files(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let root = out.join("results");
    let mut files = Vec::new();
    if !root.is_dir() {
        return Ok(files);
    }
    for run in fs::read_dir(&root).map_err(runtime)? {
        let run = run.map_err(runtime)?.path();
        if !run.is_dir() {
            continue;
        }
        for f in fs::read_dir(&run).map_err(runtime)? {
            let f = f.map_err(runtime)?.path();
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("metrics_it") && name.ends_with(".jsonl") {
                files.push(f);
            }
        }
    }
    files.sort();
    Ok(files)
}

type GroupKey = (String, String, usize, String);

/// Builds report entries from result files: one per (object, matcher,
/// representation, iterations) including the unrefined `iterations = 0`
/// rows, plus a `MEAN` entry per (matcher, representation, iterations).
pub fn build_report(out: &Path, cfg: &ExperimentConfig) -> Result<Vec<ReportEntry>, CliError> {
    let mut groups: BTreeMap<GroupKey, (f64, Vec<Option<MetricReport>>)> = BTreeMap::new();
    let mut init_source: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut lines = Vec::new();
    for f in metric_files(out)? {
        let text = fs::read_to_string(&f).map_err(runtime)?;
        for (n, l) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let line: MetricLine = serde_json::from_str(l)
                .with_context(|| format!("{}:{}", f.display(), n + 1))
                .map_err(runtime)?;
            let key = (line.matcher.clone(), line.representation.clone());
            let e = init_source.entry(key).or_insert(line.iterations);
            *e = (*e).min(line.iterations);
            lines.push(line);
        }
    }
    if lines.is_empty() {
        return Err(CliError::Config(format!(
            "no results under {}",
            out.join("results").display()
        )));
    }
    for l in &lines {
        let key = (
            l.matcher.clone(),
            l.representation.clone(),
            l.iterations,
            l.object.clone(),
        );
        groups
            .entry(key)
            .or_insert((l.diameter, Vec::new()))
            .1
            .push(l.final_);
        if init_source[&(l.matcher.clone(), l.representation.clone())] == l.iterations {
            let key0 = (
                l.matcher.clone(),
                l.representation.clone(),
                0,
                l.object.clone(),
            );
            groups
                .entry(key0)
                .or_insert((l.diameter, Vec::new()))
                .1
                .push(l.init);
        }
    }
    let auc_max = cfg.thresholds.auc_max;
    let mut entries = Vec::new();
    let mut by_run: BTreeMap<(String, String, usize), Vec<ReportEntry>> = BTreeMap::new();
    for ((matcher, repr, k, object), (diameter, reports)) in groups {
        let s: AccuracySummary =
            summarize_with_failures(&reports, diameter, &cfg.thresholds).map_err(runtime)?;
        by_run
            .entry((matcher.clone(), repr.clone(), k))
            .or_default()
            .push(ReportEntry {
                object,
                matcher,
                representation: repr,
                iterations: k,
                count: s.count,
                rates: s.rows(auc_max),
            });
    }
    for ((matcher, repr, k), objs) in by_run {
        let n = objs.len() as f64;
        let mean_rates = objs[0]
            .rates
            .iter()
            .enumerate()
            .map(|(j, r)| PassRate {
                metric: r.metric.clone(),
                threshold: r.threshold,
                pass_rate: objs.iter().map(|o| o.rates[j].pass_rate).sum::<f64>() / n,
            })
            .collect();
        let count = objs.iter().map(|o| o.count).sum();
        entries.extend(objs);
        entries.push(ReportEntry {
            object: "MEAN".into(),
            matcher,
            representation: repr,
            iterations: k,
            count,
            rates: mean_rates,
        });
    }
    Ok(entries)
}

pub fn report_csv(entries: &[ReportEntry]) -> String {
    let mut s =
        String::from("object,matcher,representation,iterations,metric,threshold,pass_rate\n");
    for e in entries {
        for r in &e.rates {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.object,
                e.matcher,
                e.representation,
                e.iterations,
                r.metric,
                r.threshold,
                r.pass_rate
            ));
        }
    }
    s
}

pub fn report(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let entries = build_report(&cfg.out, cfg)?;
    fs::write(cfg.out.join("report.csv"), report_csv(&entries)).map_err(runtime)?;
    write_json(&cfg.out.join("report.json"), &entries)?;
    info!(
        "wrote report with {} entries to {}",
        entries.len(),
        cfg.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLog {
    pub events: Vec<posekit::refine::LostEvent>,
    pub lost_frames: Vec<usize>,
    pub reinit_frames: Vec<usize>,
    pub failed_frames: Vec<usize>,
}

pub fn track(cfg: &ExperimentConfig, frames_dir: Option<&Path>) -> Result<TrackLog, CliError> {
    let dir = frames_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sequence_dir(&cfg.out));
    let seq_path = dir.join("sequence.json");
    let text = fs::read_to_string(&seq_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", seq_path.display())))?;
    let seq: SequenceFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", seq_path.display())))?;
    if seq.frames == 0 {
        return Err(CliError::Config("sequence has no frames".into()));
    }
    let models = cfg.load_objects()?;
    let model = &models
        .iter()
        .find(|(n, _)| *n == seq.object)
        .ok_or_else(|| {
            CliError::Config(format!(
                "objects: sequence object `{}` is not defined",
                seq.object
            ))
        })?
        .1;
    let frames = (0..seq.frames)
        .map(|k| {
            MaskImage::read_pgm(&dir.join("frames").join(format!("{k:06}.pgm")))
                .map(Observation::from_mask)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let matcher = match (cfg.matcher.kind, &seq.gt) {
        (MatcherKind::Silhouette, _) => make_matcher(cfg, Vec::new(), 0),
        (_, Some(gt)) if !gt.is_empty() => make_matcher(cfg, gt.clone(), 0),
        _ => {
            return Err(CliError::Config(
                "matcher: oracle matchers need ground truth in sequence.json".into(),
            ))
        }
    };
    let detections = seq.detections.clone().unwrap_or_default();
    let result = run_track(
        &frames,
        &seq.init,
        model,
        &cfg.intrinsics,
        matcher.as_ref(),
        &cfg.track_config(),
        &mut |k, _| detections.get(k).copied().flatten(),
    );
    let out = cfg.out.join("track");
    fs::create_dir_all(&out).map_err(runtime)?;
    let mut poses = String::new();
    for f in &result.frames {
        poses.push_str(&serde_json::to_string(f).map_err(runtime)?);
        poses.push('\n');
    }
    fs::write(out.join("poses.jsonl"), poses).map_err(runtime)?;
    let log = TrackLog {
        events: result.events.clone(),
        lost_frames: result
            .frames
            .iter()
            .filter(|f| f.lost)
            .map(|f| f.frame)
            .collect(),
        reinit_frames: result
            .frames
            .iter()
            .filter(|f| f.reinitialized)
            .map(|f| f.frame)
            .collect(),
        failed_frames: result
            .frames
            .iter()
            .filter(|f| f.error.is_some())
            .map(|f| f.frame)
            .collect(),
    };
    write_json(&out.join("events.json"), &log)?;
    info!(
        "tracked {} frames, {} lost events",
        seq.frames,
        log.events.len()
    );
    Ok(log)
}
