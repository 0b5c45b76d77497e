use std::path::{Path, PathBuf};

use posekit::datagen::{GenerateConfig, NoiseModel, PosePrior, SequenceScript};
use posekit::metrics::Thresholds;
use posekit::model::{load_model, DiameterMode, ModelSidecar};
use posekit::nalgebra::Vector3;
use posekit::parallel::derive_seed;
use posekit::refine::{NoiseScales, RefineConfig, SilhouetteConfig, TrackConfig};
use posekit::zoom::ZoomConfig;
use posekit::{CameraIntrinsics, ObjectModel, Pose, Representation, SymmetrySpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Cube,
    Sphere,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    /// OFF or ASCII PLY mesh; exclusive with `builtin`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub builtin: Option<Builtin>,
    /// Cube side or sphere/ring diameter for builtins, meters.
    #[serde(default = "default_size")]
    pub size: f64,
    #[serde(default)]
    pub unit_scale: Option<f64>,
    #[serde(default)]
    pub symmetry: Option<SymmetrySpec>,
    #[serde(default)]
    pub diameter_mode: Option<DiameterMode>,
}

fn default_size() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Oracle,
    Noisy,
    #[default]
    Silhouette,
}

impl MatcherKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Noisy => "noisy",
            Self::Silhouette => "silhouette",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisyConfig {
    pub contraction: f64,
    pub noise: NoiseScales,
}

impl Default for NoisyConfig {
    fn default() -> Self {
        Self {
            contraction: 0.5,
            noise: NoiseScales {
                rot_deg: 0.5,
                v_px: 0.5,
                v_z: 0.005,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub kind: MatcherKind,
    pub silhouette: SilhouetteConfig,
    pub noisy: NoisyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub samples_per_model: usize,
    pub noise: NoiseModel,
    pub prior: PosePrior,
    pub obs_dilate_px: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenerateConfig::default();
        Self {
            samples_per_model: g.samples_per_model,
            noise: g.noise,
            prior: g.prior,
            obs_dilate_px: g.obs_dilate_px,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSection {
    /// Name of the object (from `objects`) to track.
    pub object: String,
    pub start: Pose,
    pub script: SequenceScript,
    /// Noise of the simulated re-detections offered on visible frames.
    pub detection_noise: NoiseModel,
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self {
            object: String::new(),
            start: Pose::new(
                posekit::Rotation::from_euler_xyz_deg(20.0, 30.0, 10.0),
                Vector3::new(0.0, 0.0, 0.8),
            ),
            script: SequenceScript::default(),
            detection_noise: NoiseModel {
                euler_sigma: 3.0,
                trans_sigma: [0.003, 0.003, 0.01],
                max_angle: 10.0,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    pub window: usize,
    pub lost_rot_deg: f64,
    pub lost_trans_m: f64,
    pub iterations: usize,
}

impl Default for TrackSection {
    fn default() -> Self {
        let t = TrackConfig::default();
        Self {
            window: t.window,
            lost_rot_deg: t.lost_rot_deg,
            lost_trans_m: t.lost_trans_m,
            iterations: t.refine.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objects: Vec<ObjectSpec>,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub generate: GenerateSection,
    pub matcher: MatcherConfig,
    pub representation: Representation,
    /// Iteration counts reported by `refine`; traces run to the largest.
    pub iterations: Vec<usize>,
    pub zoom: ZoomConfig,
    pub thresholds: Thresholds,
    pub eval_points: usize,
    pub sequence: Option<SequenceSection>,
    pub track: TrackSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objects: Vec::new(),
            intrinsics: CameraIntrinsics::linemod(),
            seed: 0,
            out: PathBuf::from("out"),
            workers: None,
            generate: GenerateSection::default(),
            matcher: MatcherConfig::default(),
            representation: Representation::Untangled,
            iterations: vec![1, 2, 4],
            zoom: ZoomConfig {
                out_size: (120, 160),
                ..ZoomConfig::default()
            },
            thresholds: Thresholds::default(),
            eval_points: 1000,
            sequence: None,
            track: TrackSection::default(),
        }
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON and falls back to a string.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!(
                "--set: empty path segment in `{key}`"
            )));
        }
        if slot.is_null() {
            *slot = Value::Object(Default::default());
        }
        let next = match slot {
            Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    CliError::Config(format!("--set: `{part}` is not an index in `{key}`"))
                })?;
                items.get_mut(idx).ok_or_else(|| {
                    CliError::Config(format!("--set: index {idx} out of range in `{key}`"))
                })?
            }
            _ => {
                return Err(CliError::Config(format!(
                    "--set: `{key}` does not name a field"
                )))
            }
        };
        if i + 1 == parts.len() {
            *next = value;
            return Ok(());
        }
        slot = next;
    }
    Ok(())
}

/// Defaults, then the file, then `--set` assignments.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut root =
        serde_json::to_value(ExperimentConfig::default()).expect("default config serializes");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
        merge(&mut root, file);
    }
    for s in sets {
        apply_set(&mut root, s)?;
    }
    serde_json::from_value(root).map_err(|e| CliError::Config(format!("config: {e}")))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.intrinsics
            .validate()
            .map_err(|e| CliError::Config(format!("intrinsics: {e}")))?;
        for (i, o) in self.objects.iter().enumerate() {
            match (&o.path, &o.builtin) {
                (Some(p), None) => {
                    if !p.is_file() {
                        return bad(format!(
                            "objects[{i}].path: file not found: {}",
                            p.display()
                        ));
                    }
                }
                (None, Some(_)) => {
                    if !(o.size > 0.0) {
                        return bad(format!("objects[{i}].size must be positive"));
                    }
                }
                _ => {
                    return bad(format!(
                        "objects[{i}]: exactly one of `path` or `builtin` is required"
                    ))
                }
            }
            if let Some(s) = &o.symmetry {
                s.validate()
                    .map_err(|e| CliError::Config(format!("objects[{i}].symmetry: {e}")))?;
            }
            if self.objects[..i].iter().any(|p| p.name == o.name) {
                return bad(format!("objects[{i}].name: duplicate name `{}`", o.name));
            }
        }
        if self.iterations.is_empty() || self.iterations.contains(&0) {
            return bad("iterations: need at least one count, all >= 1".into());
        }
        if !(self.matcher.noisy.contraction > 0.0 && self.matcher.noisy.contraction <= 1.0) {
            return bad("matcher.noisy.contraction must be in (0, 1]".into());
        }
        if !(self.zoom.lambda > 0.0) || self.zoom.out_size.0 == 0 || self.zoom.out_size.1 == 0 {
            return bad("zoom: lambda and out_size must be positive".into());
        }
        let t = &self.thresholds;
        if !(t.auc_max > 0.0) {
            return bad("thresholds.auc_max must be positive".into());
        }
        for (name, v) in [
            ("deg_cm", &t.deg_cm),
            ("diameter_fractions", &t.diameter_fractions),
            ("proj2d_px", &t.proj2d_px),
        ] {
            if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return bad(format!("thresholds.{name}: values must be finite and >= 0"));
            }
        }
        if self.eval_points == 0 {
            return bad("eval_points must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.generate
            .noise
            .validate()
            .map_err(|e| CliError::Config(format!("generate.noise: {e}")))?;
        if let Some(s) = &self.sequence {
            if !self.objects.iter().any(|o| o.name == s.object) {
                return bad(format!("sequence.object: unknown object `{}`", s.object));
            }
        }
        if self.track.window == 0 || self.track.iterations == 0 {
            return bad("track: window and iterations must be positive".into());
        }
        Ok(())
    }

    pub fn require_objects(&self) -> Result<(), CliError> {
        if self.objects.is_empty() {
            Err(CliError::Config(
                "objects: at least one object is required".into(),
            ))
        } else {
            Ok(())
        }
    }

    pub fn generate_config(&self) -> GenerateConfig {
        GenerateConfig {
            samples_per_model: self.generate.samples_per_model,
            noise: self.generate.noise,
            prior: self.generate.prior,
            obs_dilate_px: self.generate.obs_dilate_px,
            seed: self.seed,
        }
    }

    pub fn refine_config(&self, iterations: usize) -> RefineConfig {
        RefineConfig {
            iterations,
            representation: self.representation,
            zoom: self.zoom,
            early_stop: None,
        }
    }

    pub fn track_config(&self) -> TrackConfig {
        TrackConfig {
            refine: self.refine_config(self.track.iterations),
            window: self.track.window,
            lost_rot_deg: self.track.lost_rot_deg,
            lost_trans_m: self.track.lost_trans_m,
        }
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(1)
    }

    /// Loads every object with evaluation points and diameter set.
    pub fn load_objects(&self) -> Result<Vec<(String, ObjectModel)>, CliError> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let m = build_object(
                    o,
                    self.eval_points,
                    derive_seed(self.seed, 1 << 40 | i as u64),
                )
                .map_err(|e| CliError::Config(format!("objects[{i}] ({}): {e}", o.name)))?;
                Ok((o.name.clone(), m))
            })
            .collect()
    }
}

fn build_object(
    o: &ObjectSpec,
    eval_points: usize,
    seed: u64,
) -> Result<ObjectModel, posekit::model::ModelError> {
    let (model, sidecar) = match (&o.path, o.builtin) {
        (Some(p), _) => {
            let side = ModelSidecar::for_model(p)?.unwrap_or_default();
            let scale = o.unit_scale.unwrap_or(side.unit_scale);
            (load_model(p, None, scale)?, side)
        }
        (None, Some(b)) => {
            let s = o.size * o.unit_scale.unwrap_or(1.0);
            let (m, sym) = match b {
                Builtin::Cube => (ObjectModel::cube(s), SymmetrySpec::octahedral()),
                Builtin::Sphere => (
                    ObjectModel::uv_sphere(s / 2.0, 12, 24),
                    SymmetrySpec::Spherical,
                ),
                Builtin::Ring => (
                    ObjectModel::ring(s / 2.0, 1000),
                    SymmetrySpec::Axis {
                        axis: [0.0, 0.0, 1.0],
                    },
                ),
            };
            (
                m,
                ModelSidecar {
                    symmetry: sym,
                    ..ModelSidecar::default()
                },
            )
        }
        (None, None) => return Err(posekit::model::ModelError::EmptyModel),
    };
    let symmetry = o.symmetry.clone().unwrap_or(sidecar.symmetry);
    let mode = o.diameter_mode.unwrap_or(sidecar.diameter_mode);
    Ok(model
        .with_symmetry(symmetry)
        .sample_eval_points(eval_points, seed)?
        .with_diameter(mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overrides_nested_fields() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_set(&mut v, "generate.noise.euler_sigma=3").unwrap();
        apply_set(&mut v, "representation=camera").unwrap();
        apply_set(&mut v, "iterations=[2]").unwrap();
        let c: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(c.generate.noise.euler_sigma, 3.0);
        assert_eq!(c.representation, Representation::Camera);
        assert_eq!(c.iterations, vec![2]);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_set(&mut v, "generate.nosie=1").unwrap();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        assert!(apply_set(&mut v, "seed").is_err());
    }

    #[test]
    fn validation_names_fields() {
        let mut c = ExperimentConfig::default();
        c.objects.push(ObjectSpec {
            name: "a".into(),
            path: Some("/nonexistent/a.off".into()),
            builtin: None,
            size: 0.1,
            unit_scale: None,
            symmetry: None,
            diameter_mode: None,
        });
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("objects[0].path"), "{e}");
    }
}
