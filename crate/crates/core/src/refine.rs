//! The render, zoom, match, apply loop; matchers; and tracking with
//! lost-track detection.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{DepthImage, Image, MaskImage};
use crate::model::ObjectModel;
use crate::optim::NelderMead;
use crate::parallel::derive_seed;
use crate::pose::{
    angular_distance, project, CameraIntrinsics, Pose, PoseError, Representation, Rotation,
    UntangledDelta,
};
use crate::render::{rasterize, silhouette_into, RenderError};
use crate::zoom::{compute_crop, crop_resample, CropWindow, ZoomConfig, ZoomError};

pub const DEFAULT_ITERATIONS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("mask too small for matching ({observed} observed px, {rendered} rendered px)")]
    DegenerateMask { observed: f64, rendered: f64 },
    #[error("matcher produced a non-finite delta")]
    NonFinite,
    #[error(transparent)]
    Pose(#[from] PoseError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("rendering at iteration {iteration} is empty")]
    RenderOffscreen { iteration: usize },
    #[error(transparent)]
    Zoom(#[from] ZoomError),
    #[error("matcher failed: {0}")]
    Matcher(#[from] MatchError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// A refinement error together with the trace recorded before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error} (after {} steps)", trace.steps.len())]
pub struct RefineFailure {
    pub error: RefineError,
    pub trace: RefineTrace,
}

/// What a matcher sees at one iteration. Images are in the zoomed frame;
/// there is deliberately no ground truth here.
pub struct MatchContext<'a> {
    /// Zoomed observed mask as a soft single-channel image in `[0, 1]`.
    pub observed: &'a Image,
    pub observed_intensity: Option<&'a Image>,
    pub rendered: &'a MaskImage,
    pub rendered_depth: &'a DepthImage,
    pub window: CropWindow,
    /// Intrinsics of the full image; deltas are expressed against these.
    pub intrinsics: CameraIntrinsics,
    /// Intrinsics of the zoomed view.
    pub zoomed_intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub representation: Representation,
    pub model: &'a ObjectModel,
    pub frame: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutput {
    pub delta: UntangledDelta,
    pub diagnostics: BTreeMap<String, f64>,
}

impl MatchOutput {
    pub fn new(delta: UntangledDelta) -> Self {
        Self {
            delta,
            diagnostics: BTreeMap::new(),
        }
    }
}

/// Anything that turns an observed/rendered pair into a pose delta in the
/// context's representation.
pub trait Matcher: Send + Sync {
    fn estimate(&self, ctx: &MatchContext) -> Result<MatchOutput, MatchError>;
}

/// Returns the exact delta to a known ground truth. Test/benchmark use only.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatcher {
    /// Per-frame ground truth; frames past the end reuse the last pose.
    gt: Vec<Pose>,
}

impl OracleMatcher {
    pub fn new(gt: Pose) -> Self {
        Self { gt: vec![gt] }
    }

    pub fn sequence(gt: Vec<Pose>) -> Self {
        assert!(!gt.is_empty(), "oracle needs at least one pose");
        Self { gt }
    }

    fn gt_at(&self, frame: usize) -> &Pose {
        &self.gt[frame.min(self.gt.len() - 1)]
    }
}

impl Matcher for OracleMatcher {
    fn estimate(&self, ctx: &MatchContext) -> Result<MatchOutput, MatchError> {
        let gt = self.gt_at(ctx.frame);
        let delta = ctx.representation.compute(&ctx.pose, gt, &ctx.intrinsics)?;
        Ok(MatchOutput::new(delta))
    }
}

/// Gaussian perturbation scales for [`NoisyOracle`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseScales {
    /// Per-component std of the scaled-axis rotation noise, degrees.
    pub rot_deg: f64,
    /// Std of `v.x` and `v.y`, pixels.
    pub v_px: f64,
    /// Std of `v.z`.
    pub v_z: f64,
}

/// Oracle delta scaled by `contraction`, plus seeded Gaussian noise that
/// depends only on `(seed, frame, iteration)`. Test/benchmark use only.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOracle {
    oracle: OracleMatcher,
    pub contraction: f64,
    pub noise: NoiseScales,
    pub seed: u64,
}

impl NoisyOracle {
    pub fn new(gt: Pose, contraction: f64, noise: NoiseScales, seed: u64) -> Self {
        Self::with_oracle(OracleMatcher::new(gt), contraction, noise, seed)
    }

    pub fn with_oracle(
        oracle: OracleMatcher,
        contraction: f64,
        noise: NoiseScales,
        seed: u64,
    ) -> Self {
        assert!(
            contraction > 0.0 && contraction <= 1.0,
            "contraction must be in (0, 1]"
        );
        Self {
            oracle,
            contraction,
            noise,
            seed,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma)
            .map(|n| n.sample(rng))
            .unwrap_or(0.0)
    } else {
        0.0
    }
}

impl Matcher for NoisyOracle {
    fn estimate(&self, ctx: &MatchContext) -> Result<MatchOutput, MatchError> {
        let exact = self.oracle.estimate(ctx)?.delta;
        let mut delta = exact.scaled(self.contraction);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            derive_seed(self.seed, ctx.frame as u64),
            ctx.iteration as u64,
        ));
        let s = self.noise.rot_deg.to_radians();
        let w = Vector3::new(
            gaussian(&mut rng, s),
            gaussian(&mut rng, s),
            gaussian(&mut rng, s),
        );
        if w != Vector3::zeros() {
            delta.rot = Rotation::from_scaled_axis(w).compose(&delta.rot);
        }
        delta.v += Vector3::new(
            gaussian(&mut rng, self.noise.v_px),
            gaussian(&mut rng, self.noise.v_px),
            gaussian(&mut rng, self.noise.v_z),
        );
        Ok(MatchOutput::new(delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SilhouetteConfig {
    pub max_evals: usize,
    /// Initial simplex step of the rotation search, radians.
    pub initial_step: f64,
    /// Masks smaller than this (pixels) are rejected.
    pub min_mask_px: f64,
}

impl Default for SilhouetteConfig {
    fn default() -> Self {
        Self {
            max_evals: 200,
            initial_step: 0.15,
            min_mask_px: 8.0,
        }
    }
}

/// Classical mask-alignment matcher.
///
/// Translation comes in closed form from the centroid offset and the area
/// ratio of the two masks (area scales with `1 / z^2`); rotation comes from
/// a Nelder–Mead search over a scaled-axis vector that maximizes the soft
/// IoU between the candidate rendering and the observed mask.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SilhouetteMatcher {
    pub config: SilhouetteConfig,
}

impl SilhouetteMatcher {
    pub fn new(config: SilhouetteConfig) -> Self {
        Self { config }
    }

    /// Closed-form translation part in full-image units.
    pub fn translation_estimate(&self, ctx: &MatchContext) -> Result<Vector3<f64>, MatchError> {
        let obs = weighted_centroid(ctx.observed);
        let rend = weighted_centroid(&ctx.rendered.to_image());
        let (ao, ar) = (obs.map_or(0.0, |c| c.2), rend.map_or(0.0, |c| c.2));
        if ao < self.config.min_mask_px || ar < self.config.min_mask_px {
            return Err(MatchError::DegenerateMask {
                observed: ao,
                rendered: ar,
            });
        }
        let (o, r) = (obs.unwrap_or_default(), rend.unwrap_or_default());
        let sx = ctx.zoomed_intrinsics.fx / ctx.intrinsics.fx;
        let sy = ctx.zoomed_intrinsics.fy / ctx.intrinsics.fy;
        Ok(Vector3::new(
            (o.0 - r.0) / sx,
            (o.1 - r.1) / sy,
            0.5 * (ao / ar).ln(),
        ))
    }
}

/// `(x, y, total weight)` of a single-channel image, pixel-center coordinates.
fn weighted_centroid(img: &Image) -> Option<(f64, f64, f64)> {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            let w = img.data[(y * img.width + x) * img.channels];
            if w != 0.0 {
                sx += w * (x as f64 + 0.5);
                sy += w * (y as f64 + 0.5);
                sw += w;
            }
        }
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw, sw))
}

fn soft_iou(rendered: &MaskImage, observed: &Image, observed_total: f64) -> f64 {
    let mut inter = 0.0;
    let mut count = 0usize;
    for (i, r) in rendered.data.iter().enumerate() {
        if *r {
            inter += observed.data[i * observed.channels];
            count += 1;
        }
    }
    let union = count as f64 + observed_total - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

impl Matcher for SilhouetteMatcher {
    fn estimate(&self, ctx: &MatchContext) -> Result<MatchOutput, MatchError> {
        let v = self.translation_estimate(ctx)?;
        let observed_total: f64 = ctx
            .observed
            .data
            .iter()
            .step_by(ctx.observed.channels)
            .sum();
        let mut buf = MaskImage::new(ctx.zoomed_intrinsics.width, ctx.zoomed_intrinsics.height);
        let mut objective = |w: &[f64]| -> f64 {
            let delta = UntangledDelta::new(
                Rotation::from_scaled_axis(Vector3::new(w[0], w[1], w[2])),
                v,
            );
            let Ok(candidate) = ctx.representation.apply(&delta, &ctx.pose, &ctx.intrinsics) else {
                return 1.0;
            };
            match silhouette_into(ctx.model, &candidate, &ctx.zoomed_intrinsics, &mut buf) {
                Ok(_) => 1.0 - soft_iou(&buf, ctx.observed, observed_total),
                Err(_) => 1.0,
            }
        };
        let f0 = objective(&[0.0; 3]);
        let nm = NelderMead {
            initial_step: self.config.initial_step,
            max_evals: self.config.max_evals.saturating_sub(1),
            ..NelderMead::default()
        };
        let m = nm.minimize(&[0.0; 3], &mut objective);
        let (w, f) = if m.f < f0 {
            (m.x, m.f)
        } else {
            (vec![0.0; 3], f0)
        };
        let delta = UntangledDelta::new(
            Rotation::from_scaled_axis(Vector3::new(w[0], w[1], w[2])),
            v,
        );
        if !delta.is_finite() {
            return Err(MatchError::NonFinite);
        }
        let mut out = MatchOutput::new(delta);
        out.diagnostics.insert("iou_start".into(), 1.0 - f0);
        out.diagnostics.insert("iou_end".into(), 1.0 - f);
        out.diagnostics.insert("evals".into(), (m.evals + 1) as f64);
        Ok(out)
    }
}

/// Per-step pose change: rotation in degrees, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeltaMagnitude {
    pub rot_deg: f64,
    pub trans_m: f64,
}

impl DeltaMagnitude {
    pub fn between(prev: &Pose, next: &Pose) -> Self {
        Self {
            rot_deg: angular_distance(&prev.rotation, &next.rotation).to_degrees(),
            trans_m: (next.translation - prev.translation).norm(),
        }
    }

    pub fn infinite() -> Self {
        Self {
            rot_deg: f64::INFINITY,
            trans_m: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub rot_deg: f64,
    pub trans_m: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            rot_deg: 0.1,
            trans_m: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub representation: Representation,
    pub zoom: ZoomConfig,
    /// Off by default: the loop runs the full iteration count.
    pub early_stop: Option<EarlyStop>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            representation: Representation::Untangled,
            zoom: ZoomConfig::default(),
            early_stop: None,
        }
    }
}

/// Observed input for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mask: MaskImage,
    pub intensity: Option<Image>,
}

impl Observation {
    pub fn from_mask(mask: MaskImage) -> Self {
        Self {
            mask,
            intensity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub pose: Pose,
    /// Delta that produced this pose; `None` for the initial pose.
    pub delta: Option<UntangledDelta>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

/// Poses `p(0) ..= p(n)`; without early stop, `n` is the iteration count.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefineTrace {
    pub steps: Vec<TraceStep>,
}

impl RefineTrace {
    pub fn final_pose(&self) -> Option<Pose> {
        self.steps.last().map(|s| s.pose)
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.steps.iter().map(|s| s.pose).collect()
    }

    /// Pose after `iteration` steps, or the last one if the trace stopped early.
    pub fn pose_at(&self, iteration: usize) -> Option<Pose> {
        self.steps
            .get(iteration)
            .or(self.steps.last())
            .map(|s| s.pose)
    }

    /// Change made by the last step (zero for a trace with only the initial pose).
    pub fn last_magnitude(&self) -> DeltaMagnitude {
        match self.steps.len() {
            0 | 1 => DeltaMagnitude::default(),
            n => DeltaMagnitude::between(&self.steps[n - 2].pose, &self.steps[n - 1].pose),
        }
    }

    /// One JSON record per step.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for step in &self.steps {
            s.push_str(&serde_json::to_string(step).expect("trace steps serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { steps })
    }
}

/// Everything the matcher needs for one step, built from the current pose.
pub struct PreparedView {
    pub observed: Image,
    pub observed_intensity: Option<Image>,
    pub rendered: MaskImage,
    pub rendered_depth: DepthImage,
    pub window: CropWindow,
    pub zoomed_intrinsics: CameraIntrinsics,
}

/// Renders at `pose`, picks the zoom window around the projected object
/// origin and resamples the observation into it.
pub fn prepare_view(
    pose: &Pose,
    obs: &Observation,
    model: &ObjectModel,
    intr: &CameraIntrinsics,
    zoom: &ZoomConfig,
    iteration: usize,
) -> Result<PreparedView, RefineError> {
    let full = rasterize(model, pose, intr)?;
    if full.offscreen {
        return Err(RefineError::RenderOffscreen { iteration });
    }
    let center = project(pose, &Vector3::zeros(), intr)?;
    let window = compute_crop(&obs.mask, &full.mask, center, intr.aspect(), zoom.lambda)?;
    let (out_h, out_w) = zoom.out_size;
    let zoomed_intrinsics = window.zoomed_intrinsics(intr, out_w, out_h);
    let zr = rasterize(model, pose, &zoomed_intrinsics)?;
    Ok(PreparedView {
        observed: crop_resample(&obs.mask.to_image(), &window, out_w, out_h),
        observed_intensity: obs
            .intensity
            .as_ref()
            .map(|i| crop_resample(i, &window, out_w, out_h)),
        rendered: zr.mask,
        rendered_depth: zr.depth,
        window,
        zoomed_intrinsics,
    })
}

pub fn refine(
    init: &Pose,
    obs: &Observation,
    model: &ObjectModel,
    intr: &CameraIntrinsics,
    matcher: &dyn Matcher,
    cfg: &RefineConfig,
) -> Result<RefineTrace, RefineFailure> {
    refine_frame(init, obs, model, intr, matcher, cfg, 0)
}

/// [`refine`] for frame `frame` of a sequence.
pub fn refine_frame(
    init: &Pose,
    obs: &Observation,
    model: &ObjectModel,
    intr: &CameraIntrinsics,
    matcher: &dyn Matcher,
    cfg: &RefineConfig,
    frame: usize,
) -> Result<RefineTrace, RefineFailure> {
    let mut trace = RefineTrace::default();
    let fail = |error: RefineError, trace: RefineTrace| RefineFailure { error, trace };
    if cfg.iterations == 0 {
        return Err(fail(RefineError::NoIterations, trace));
    }
    if init.translation.z <= 0.0 {
        return Err(fail(
            RefineError::Render(RenderError::BehindCamera(init.translation.z)),
            trace,
        ));
    }
    trace.steps.push(TraceStep {
        iteration: 0,
        pose: *init,
        delta: None,
        diagnostics: BTreeMap::new(),
    });
    let mut current = *init;
    for i in 1..=cfg.iterations {
        let view = match prepare_view(&current, obs, model, intr, &cfg.zoom, i) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };
        let ctx = MatchContext {
            observed: &view.observed,
            observed_intensity: view.observed_intensity.as_ref(),
            rendered: &view.rendered,
            rendered_depth: &view.rendered_depth,
            window: view.window,
            intrinsics: *intr,
            zoomed_intrinsics: view.zoomed_intrinsics,
            pose: current,
            representation: cfg.representation,
            model,
            frame,
            iteration: i,
        };
        let out = match matcher.estimate(&ctx) {
            Ok(o) if o.delta.is_finite() => o,
            Ok(_) => return Err(fail(MatchError::NonFinite.into(), trace)),
            Err(e) => return Err(fail(e.into(), trace)),
        };
        let next = match cfg.representation.apply(&out.delta, &current, intr) {
            Ok(p) => p,
            Err(e) => return Err(fail(e.into(), trace)),
        };
        let mag = DeltaMagnitude::between(&current, &next);
        trace.steps.push(TraceStep {
            iteration: i,
            pose: next,
            delta: Some(out.delta),
            diagnostics: out.diagnostics,
        });
        current = next;
        if let Some(es) = cfg.early_stop {
            if mag.rot_deg < es.rot_deg && mag.trans_m < es.trans_m {
                break;
            }
        }
    }
    Ok(trace)
}

pub const LOST_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub refine: RefineConfig,
    pub window: usize,
    pub lost_rot_deg: f64,
    pub lost_trans_m: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            refine: RefineConfig::default(),
            window: LOST_WINDOW,
            lost_rot_deg: 10.0,
            lost_trans_m: 0.01,
        }
    }
}

/// Recent last-iteration delta magnitudes and the lost flag.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackState {
    pub buffer: VecDeque<DeltaMagnitude>,
    pub lost: bool,
}

impl TrackState {
    pub fn push(&mut self, m: DeltaMagnitude, window: usize) {
        self.buffer.push_back(m);
        while self.buffer.len() > window {
            self.buffer.pop_front();
        }
    }

    pub fn mean(&self) -> DeltaMagnitude {
        let n = self.buffer.len().max(1) as f64;
        DeltaMagnitude {
            rot_deg: self.buffer.iter().map(|m| m.rot_deg).sum::<f64>() / n,
            trans_m: self.buffer.iter().map(|m| m.trans_m).sum::<f64>() / n,
        }
    }

    fn event(&self, frame: usize) -> LostEvent {
        let ok: Vec<&DeltaMagnitude> = self
            .buffer
            .iter()
            .filter(|m| m.rot_deg.is_finite() && m.trans_m.is_finite())
            .collect();
        let n = ok.len().max(1) as f64;
        LostEvent {
            frame,
            failed_frames: self.buffer.len() - ok.len(),
            mean_rot_deg: ok.iter().map(|m| m.rot_deg).sum::<f64>() / n,
            mean_trans_m: ok.iter().map(|m| m.trans_m).sum::<f64>() / n,
        }
    }

    /// Lost needs a full window whose averages exceed either limit.
    pub fn exceeds(&self, cfg: &TrackConfig) -> bool {
        if self.buffer.len() < cfg.window {
            return false;
        }
        let m = self.mean();
        !(m.rot_deg <= cfg.lost_rot_deg) || !(m.trans_m <= cfg.lost_trans_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: usize,
    /// Current estimate after this frame (held through failures).
    pub pose: Pose,
    pub lost: bool,
    pub reinitialized: bool,
    /// Last-iteration change; `None` when the frame was skipped or failed.
    pub magnitude: Option<DeltaMagnitude>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LostEvent {
    pub frame: usize,
    /// Frames in the window whose refinement failed.
    pub failed_frames: usize,
    /// Averages over the frames that did refine (0 if none did).
    pub mean_rot_deg: f64,
    pub mean_trans_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackResult {
    pub frames: Vec<TrackFrame>,
    pub events: Vec<LostEvent>,
}

/// Frame-to-frame tracking. Each frame starts from the previous estimate; a
/// failed refinement holds the pose and counts as an unbounded delta. When
/// the window of last-iteration deltas is full and its averages exceed the
/// limits, a lost event is recorded, the window is cleared and `reinit` is
/// asked for a new pose (again on every following frame until it gives one).
pub fn track(
    frames: &[Observation],
    init: &Pose,
    model: &ObjectModel,
    intr: &CameraIntrinsics,
    matcher: &dyn Matcher,
    cfg: &TrackConfig,
    reinit: &mut dyn FnMut(usize, &Observation) -> Option<Pose>,
) -> TrackResult {
    let mut state = TrackState::default();
    let mut out = TrackResult::default();
    let mut current = *init;
    for (k, obs) in frames.iter().enumerate() {
        let mut reinitialized = false;
        if state.lost {
            match reinit(k, obs) {
                Some(p) => {
                    current = p;
                    state.lost = false;
                    reinitialized = true;
                }
                None => {
                    out.frames.push(TrackFrame {
                        frame: k,
                        pose: current,
                        lost: true,
                        reinitialized: false,
                        magnitude: None,
                        error: None,
                    });
                    continue;
                }
            }
        }
        let (magnitude, error) =
            match refine_frame(&current, obs, model, intr, matcher, &cfg.refine, k) {
                Ok(trace) => {
                    current = trace.final_pose().unwrap_or(current);
                    (trace.last_magnitude(), None)
                }
                Err(f) => (DeltaMagnitude::infinite(), Some(f.error.to_string())),
            };
        state.push(magnitude, cfg.window);
        if state.exceeds(cfg) {
            out.events.push(state.event(k));
            state.buffer.clear();
            state.lost = true;
            if let Some(p) = reinit(k, obs) {
                current = p;
                state.lost = false;
                reinitialized = true;
            }
        }
        out.frames.push(TrackFrame {
            frame: k,
            pose: current,
            lost: state.lost,
            reinitialized,
            magnitude: error.is_none().then_some(magnitude),
            error,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::silhouette;

    fn setup() -> (ObjectModel, CameraIntrinsics, Pose) {
        let model = ObjectModel::cube(0.1).sample_eval_points(500, 1).unwrap();
        let intr = CameraIntrinsics::linemod();
        let gt = Pose::new(
            Rotation::from_euler_xyz_deg(20.0, -35.0, 10.0),
            Vector3::new(0.02, -0.01, 0.8),
        );
        (model, intr, gt)
    }

    fn observe(model: &ObjectModel, pose: &Pose, intr: &CameraIntrinsics) -> Observation {
        Observation::from_mask(silhouette(model, pose, intr).unwrap())
    }

    fn cfg(iterations: usize) -> RefineConfig {
        RefineConfig {
            iterations,
            zoom: ZoomConfig {
                out_size: (120, 160),
                ..ZoomConfig::default()
            },
            ..RefineConfig::default()
        }
    }

    #[test]
    fn oracle_converges_in_one_step() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let init = Pose::new(
            Rotation::from_euler_xyz_deg(5.0, 8.0, -12.0).compose(&gt.rotation),
            gt.translation + Vector3::new(0.01, -0.01, 0.05),
        );
        for repr in Representation::ALL {
            let c = RefineConfig {
                representation: repr,
                ..cfg(1)
            };
            let t = refine(&init, &obs, &model, &intr, &OracleMatcher::new(gt), &c).unwrap();
            assert_eq!(t.steps.len(), 2);
            let p = t.final_pose().unwrap();
            assert!(angular_distance(&p.rotation, &gt.rotation) < 1e-6, "{repr}");
            assert!((p.translation - gt.translation).norm() < 1e-8, "{repr}");
        }
    }

    #[test]
    fn noisy_oracle_contracts_exactly() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let init = Pose::new(
            Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.3).compose(&gt.rotation),
            gt.translation + Vector3::new(0.01, 0.0, 0.04),
        );
        let half = NoisyOracle::new(gt, 0.5, NoiseScales::default(), 3);
        let t = refine(&init, &obs, &model, &intr, &half, &cfg(1)).unwrap();
        let exact = crate::pose::compute_untangled(&init, &gt, &intr).unwrap();
        let d = t.steps[1].delta.unwrap();
        assert!((d.rot.angle() - 0.5 * exact.rot.angle()).abs() < 1e-12);
        assert!((d.v - 0.5 * exact.v).norm() < 1e-12);

        let full = NoisyOracle::new(gt, 1.0, NoiseScales::default(), 3);
        let a = refine(&init, &obs, &model, &intr, &full, &cfg(2)).unwrap();
        let b = refine(&init, &obs, &model, &intr, &OracleMatcher::new(gt), &cfg(2)).unwrap();
        assert_eq!(a, b);

        let t = refine(&init, &obs, &model, &intr, &half, &cfg(4)).unwrap();
        let mags: Vec<f64> = t
            .steps
            .windows(2)
            .map(|w| DeltaMagnitude::between(&w[0].pose, &w[1].pose).rot_deg)
            .collect();
        assert!(mags.windows(2).all(|w| w[1] < w[0]), "{mags:?}");
    }

    #[test]
    fn trace_prefix_and_jsonl() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let init = Pose::new(
            Rotation::from_euler_xyz_deg(6.0, 3.0, 2.0).compose(&gt.rotation),
            gt.translation,
        );
        let noisy = NoisyOracle::new(
            gt,
            0.5,
            NoiseScales {
                rot_deg: 1.0,
                v_px: 0.5,
                v_z: 0.01,
            },
            9,
        );
        let long = refine(&init, &obs, &model, &intr, &noisy, &cfg(4)).unwrap();
        let short = refine(&init, &obs, &model, &intr, &noisy, &cfg(2)).unwrap();
        assert_eq!(long.steps.len(), 5);
        assert_eq!(&long.steps[..3], &short.steps[..]);
        let back = RefineTrace::from_jsonl(&long.to_jsonl()).unwrap();
        assert_eq!(back, long);
    }

    #[test]
    fn early_stop_is_opt_in() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let c = RefineConfig {
            early_stop: Some(EarlyStop::default()),
            ..cfg(4)
        };
        let t = refine(&gt, &obs, &model, &intr, &OracleMatcher::new(gt), &c).unwrap();
        assert_eq!(t.steps.len(), 2);
        let t = refine(&gt, &obs, &model, &intr, &OracleMatcher::new(gt), &cfg(4)).unwrap();
        assert_eq!(t.steps.len(), 5);
    }

    #[test]
    fn errors_carry_partial_trace() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let e = refine(&gt, &obs, &model, &intr, &OracleMatcher::new(gt), &cfg(0)).unwrap_err();
        assert_eq!(e.error, RefineError::NoIterations);
        let far = Pose::from_translation(Vector3::new(5.0, 0.0, 0.8));
        let e = refine(&far, &obs, &model, &intr, &OracleMatcher::new(gt), &cfg(2)).unwrap_err();
        assert_eq!(e.error, RefineError::RenderOffscreen { iteration: 1 });
        assert_eq!(e.trace.steps.len(), 1);
        let blank = Observation::from_mask(MaskImage::new(intr.width, intr.height));
        let e = refine(
            &gt,
            &blank,
            &model,
            &intr,
            &SilhouetteMatcher::default(),
            &cfg(2),
        )
        .unwrap_err();
        assert!(matches!(
            e.error,
            RefineError::Matcher(MatchError::DegenerateMask { .. })
        ));
    }

    #[test]
    fn silhouette_at_gt_is_near_identity() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let t = refine(
            &gt,
            &obs,
            &model,
            &intr,
            &SilhouetteMatcher::default(),
            &cfg(1),
        )
        .unwrap();
        let d = t.steps[1].delta.unwrap();
        assert!(d.rot.angle().to_degrees() < 0.5, "{d:?}");
        assert!(d.v.x.abs() < 0.5 && d.v.y.abs() < 0.5, "{d:?}");
    }

    #[test]
    fn silhouette_translation_stage() {
        let (model, intr, gt) = setup();
        let obs = observe(&model, &gt, &intr);
        let m = SilhouetteMatcher::default();
        let c = cfg(1);
        let stage1 = |init: &Pose| {
            let view = prepare_view(init, &obs, &model, &intr, &c.zoom, 1).unwrap();
            let ctx = MatchContext {
                observed: &view.observed,
                observed_intensity: None,
                rendered: &view.rendered,
                rendered_depth: &view.rendered_depth,
                window: view.window,
                intrinsics: intr,
                zoomed_intrinsics: view.zoomed_intrinsics,
                pose: *init,
                representation: Representation::Untangled,
                model: &model,
                frame: 0,
                iteration: 1,
            };
            m.translation_estimate(&ctx).unwrap()
        };
        // +20 px in image x at the same depth
        let mut shifted = gt;
        shifted.translation.x += 20.0 / intr.fx * gt.translation.z;
        let v = stage1(&shifted);
        assert!((v.x + 20.0).abs() < 1.0, "{v:?}");
        let mut far = gt;
        far.translation *= 2.0;
        let v = stage1(&far);
        assert!((v.z - 2f64.ln()).abs() < 0.05, "{v:?}");
    }

    #[test]
    fn static_tracking_with_oracle() {
        let (model, intr, gt) = setup();
        let frames = vec![observe(&model, &gt, &intr); 15];
        let r = track(
            &frames,
            &gt,
            &model,
            &intr,
            &OracleMatcher::new(gt),
            &TrackConfig {
                refine: cfg(2),
                ..Default::default()
            },
            &mut |_, _| None,
        );
        assert!(r.events.is_empty());
        assert!(r.frames.iter().all(|f| f.pose == gt && !f.lost));
    }

    #[test]
    fn short_buffer_never_lost() {
        let (model, intr, gt) = setup();
        let blank = Observation::from_mask(MaskImage::new(intr.width, intr.height));
        let frames = vec![blank; 9];
        let c = TrackConfig {
            refine: cfg(1),
            ..Default::default()
        };
        let r = track(
            &frames,
            &gt,
            &model,
            &intr,
            &SilhouetteMatcher::default(),
            &c,
            &mut |_, _| None,
        );
        assert!(r.events.is_empty());
        assert!(r.frames.iter().all(|f| f.error.is_some()));
        let frames = vec![Observation::from_mask(MaskImage::new(intr.width, intr.height)); 10];
        let r = track(
            &frames,
            &gt,
            &model,
            &intr,
            &SilhouetteMatcher::default(),
            &c,
            &mut |_, _| None,
        );
        assert_eq!(r.events.len(), 1);
        assert_eq!(r.events[0].frame, 9);
    }
}
