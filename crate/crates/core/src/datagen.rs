//! Synthetic experiments: ground-truth pose sampling, initial-pose noise,
//! observed-mask dilation, multi-object compositing and scripted tracking
//! sequences.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageError, MaskImage};
use crate::model::ObjectModel;
use crate::parallel::{self, derive_seed, Exec};
use crate::pose::{angular_distance, CameraIntrinsics, Pose, Rotation};
use crate::render::{rasterize, silhouette, RenderError};

pub const REJECTION_BUDGET: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no acceptable sample after {0} attempts")]
    RejectionBudgetExceeded(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Std of the noise added to each intrinsic X-Y-Z Euler angle, degrees.
    pub euler_sigma: f64,
    /// Per-component translation std, meters.
    pub trans_sigma: [f64; 3],
    /// Largest accepted rotation error, degrees.
    pub max_angle: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            euler_sigma: 15.0,
            trans_sigma: [0.01, 0.01, 0.05],
            max_angle: 45.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.max_angle > 0.0) {
            return Err(DatagenError::InvalidConfig(
                "noise.max_angle must be positive".into(),
            ));
        }
        if !(self.euler_sigma >= 0.0) || self.trans_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(DatagenError::InvalidConfig(
                "noise sigmas must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma)
            .map(|n| n.sample(rng))
            .unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Adds Gaussian noise to the Euler angles of `gt` (resampling until the
/// rotation error is within `max_angle`) and to each translation component.
pub fn perturb_pose(
    gt: &Pose,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<Pose, DatagenError> {
    noise.validate()?;
    let rotation = if noise.euler_sigma == 0.0 {
        gt.rotation
    } else {
        let (a, b, c) = gt.rotation.to_euler_xyz();
        let s = noise.euler_sigma.to_radians();
        let max = noise.max_angle.to_radians();
        let mut accepted = None;
        for _ in 0..REJECTION_BUDGET {
            let r = Rotation::from_euler_xyz(
                a + normal(rng, s),
                b + normal(rng, s),
                c + normal(rng, s),
            );
            if angular_distance(&r, &gt.rotation) <= max {
                accepted = Some(r);
                break;
            }
        }
        accepted.ok_or(DatagenError::RejectionBudgetExceeded(REJECTION_BUDGET))?
    };
    let t = gt.translation
        + Vector3::new(
            normal(rng, noise.trans_sigma[0]),
            normal(rng, noise.trans_sigma[1]),
            normal(rng, noise.trans_sigma[2]),
        );
    Ok(Pose::new(rotation, t))
}

/// Dilation by a `(2r+1)^2` square.
pub fn dilate_square(mask: &MaskImage, r: usize) -> MaskImage {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let run = |line: &[bool]| -> Vec<bool> {
        let mut prefix = vec![0usize; line.len() + 1];
        for (i, v) in line.iter().enumerate() {
            prefix[i + 1] = prefix[i] + *v as usize;
        }
        (0..line.len())
            .map(|i| prefix[(i + r + 1).min(line.len())] > prefix[i.saturating_sub(r)])
            .collect()
    };
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        horiz[y * w..(y + 1) * w].copy_from_slice(&run(&mask.data[y * w..(y + 1) * w]));
    }
    let mut out = MaskImage::new(w, h);
    let mut col = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = horiz[y * w + x];
        }
        for (y, v) in run(&col).into_iter().enumerate() {
            out.data[y * w + x] = v;
        }
    }
    out
}

/// Square dilation with radius drawn uniformly from `0..=max_px`.
pub fn dilate_mask(mask: &MaskImage, max_px: usize, rng: &mut impl Rng) -> MaskImage {
    let r = if max_px == 0 {
        0
    } else {
        rng.random_range(0..=max_px)
    };
    dilate_square(mask, r)
}

pub const DEFAULT_MAX_DILATION: usize = 10;

/// Uniformly distributed rotation.
pub fn random_rotation(rng: &mut impl Rng) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-9 {
            return Rotation::from_unit(UnitQuaternion::new_normalize(Quaternion::new(
                q[0], q[1], q[2], q[3],
            )));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosePrior {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    /// Accepted camera elevation above the model's XY plane, degrees.
    pub elevation: Option<[f64; 2]>,
}

impl Default for PosePrior {
    fn default() -> Self {
        Self {
            x: [-0.1, 0.1],
            y: [-0.1, 0.1],
            z: [0.6, 1.0],
            elevation: None,
        }
    }
}

/// Camera elevation in the model frame, degrees.
pub fn camera_elevation(pose: &Pose) -> f64 {
    let c = -(pose.rotation.inverse().rotate(&pose.translation));
    (c.z / c.norm()).clamp(-1.0, 1.0).asin().to_degrees()
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

pub fn sample_pose(prior: &PosePrior, rng: &mut impl Rng) -> Result<Pose, DatagenError> {
    for _ in 0..REJECTION_BUDGET {
        let t = Vector3::new(
            uniform(rng, prior.x),
            uniform(rng, prior.y),
            uniform(rng, prior.z),
        );
        let p = Pose::new(random_rotation(rng), t);
        match prior.elevation {
            Some([lo, hi]) => {
                let e = camera_elevation(&p);
                if e >= lo && e <= hi {
                    return Ok(p);
                }
            }
            None => return Ok(p),
        }
    }
    Err(DatagenError::RejectionBudgetExceeded(REJECTION_BUDGET))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub model: usize,
    pub pose: Pose,
    pub full_mask: MaskImage,
    pub visible_mask: MaskImage,
}

impl SceneObject {
    pub fn visible_fraction(&self) -> f64 {
        let full = self.full_mask.count();
        if full == 0 {
            0.0
        } else {
            self.visible_mask.count() as f64 / full as f64
        }
    }
}

/// Composites rendered objects by depth: each pixel belongs to the nearest
/// object covering it.
pub fn composite(
    models: &[ObjectModel],
    placed: &[(usize, Pose)],
    intr: &CameraIntrinsics,
) -> Result<Vec<SceneObject>, DatagenError> {
    let renders = placed
        .iter()
        .map(|(m, p)| rasterize(&models[*m], p, intr))
        .collect::<Result<Vec<_>, _>>()?;
    let n_px = intr.width * intr.height;
    let mut owner = vec![usize::MAX; n_px];
    let mut best = vec![f64::INFINITY; n_px];
    for (k, r) in renders.iter().enumerate() {
        for i in 0..n_px {
            let d = r.depth.data[i];
            if d > 0.0 && d < best[i] {
                best[i] = d;
                owner[i] = k;
            }
        }
    }
    Ok(renders
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let mut visible = MaskImage::new(intr.width, intr.height);
            for (v, o) in visible.data.iter_mut().zip(&owner) {
                *v = *o == k;
            }
            SceneObject {
                model: placed[k].0,
                pose: placed[k].1,
                full_mask: r.mask,
                visible_mask: visible,
            }
        })
        .collect())
}

/// Places `count` objects (models drawn uniformly) with poses from `prior`
/// and composites them.
pub fn sample_scene(
    models: &[ObjectModel],
    count: usize,
    prior: &PosePrior,
    intr: &CameraIntrinsics,
    rng: &mut impl Rng,
) -> Result<Vec<SceneObject>, DatagenError> {
    if models.is_empty() {
        return Err(DatagenError::InvalidConfig("no models".into()));
    }
    let mut placed = Vec::with_capacity(count);
    for _ in 0..count {
        let m = rng.random_range(0..models.len());
        placed.push((m, sample_pose(prior, rng)?));
    }
    composite(models, &placed, intr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub samples_per_model: usize,
    pub noise: NoiseModel,
    pub prior: PosePrior,
    /// Largest random dilation applied to observed masks (0 = none).
    pub obs_dilate_px: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            samples_per_model: 100,
            noise: NoiseModel::default(),
            prior: PosePrior::default(),
            obs_dilate_px: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub model: usize,
    pub object: String,
    pub seed: u64,
    pub gt: Pose,
    pub init: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub noise: NoiseModel,
    pub prior: PosePrior,
    pub obs_dilate_px: usize,
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub manifest: Manifest,
    /// Observed mask of each sample, parallel to `manifest.samples`.
    pub observed: Vec<MaskImage>,
}

/// Smallest observed mask (pixels) accepted for a generated sample.
pub const MIN_OBSERVED_PX: usize = 64;

fn generate_one(
    model: &ObjectModel,
    intr: &CameraIntrinsics,
    cfg: &GenerateConfig,
    seed: u64,
) -> Result<(Pose, Pose, MaskImage), DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..REJECTION_BUDGET {
        let gt = sample_pose(&cfg.prior, &mut rng)?;
        let init = perturb_pose(&gt, &cfg.noise, &mut rng)?;
        let mask = silhouette(model, &gt, intr)?;
        if mask.count() < MIN_OBSERVED_PX || init.translation.z <= 0.0 {
            continue;
        }
        let observed = dilate_mask(&mask, cfg.obs_dilate_px, &mut rng);
        return Ok((gt, init, observed));
    }
    Err(DatagenError::RejectionBudgetExceeded(REJECTION_BUDGET))
}

/// Samples `samples_per_model` instances of each named model. Sample `i`
/// uses the seed `derive_seed(cfg.seed, i)`, so the result does not depend
/// on the execution mode.
pub fn generate_samples(
    models: &[(String, ObjectModel)],
    intr: &CameraIntrinsics,
    cfg: &GenerateConfig,
    exec: Exec,
) -> Result<SampleSet, DatagenError> {
    if models.is_empty() {
        return Err(DatagenError::InvalidConfig("no models".into()));
    }
    cfg.noise.validate()?;
    let n = models.len() * cfg.samples_per_model;
    let results = parallel::map_range(exec, n, |i| {
        let m = i / cfg.samples_per_model.max(1);
        let seed = derive_seed(cfg.seed, i as u64);
        generate_one(&models[m].1, intr, cfg, seed).map(|r| (m, seed, r))
    });
    let mut samples = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    for (index, r) in results.into_iter().enumerate() {
        let (model, seed, (gt, init, mask)) = r?;
        samples.push(SampleRecord {
            index,
            model,
            object: models[model].0.clone(),
            seed,
            gt,
            init,
        });
        observed.push(mask);
    }
    let set = SampleSet {
        manifest: Manifest {
            seed: cfg.seed,
            noise: cfg.noise,
            prior: cfg.prior,
            obs_dilate_px: cfg.obs_dilate_px,
            intrinsics: *intr,
            objects: models.iter().map(|(n, _)| n.clone()).collect(),
            samples,
        },
        observed,
    };
    set.validate()?;
    Ok(set)
}

impl SampleSet {
    /// Checks the max-angle constraint and mask count.
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.observed.len() != self.manifest.samples.len() {
            return Err(DatagenError::InvalidConfig(
                "mask count does not match manifest".into(),
            ));
        }
        let max = self.manifest.noise.max_angle.to_radians();
        for s in &self.manifest.samples {
            if angular_distance(&s.gt.rotation, &s.init.rotation) > max + 1e-12 {
                return Err(DatagenError::InvalidConfig(format!(
                    "sample {} exceeds the max init angle",
                    s.index
                )));
            }
        }
        Ok(())
    }

    pub fn sample_dir(dir: &Path, index: usize) -> std::path::PathBuf {
        dir.join(format!("{index:06}"))
    }

    /// Writes `{dir}/{index:06}/obs_mask.pgm` per sample and `{dir}/manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<(), DatagenError> {
        std::fs::create_dir_all(dir)?;
        for (s, m) in self.manifest.samples.iter().zip(&self.observed) {
            let d = Self::sample_dir(dir, s.index);
            std::fs::create_dir_all(&d)?;
            m.write_pgm(&d.join("obs_mask.pgm"))?;
        }
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, DatagenError> {
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let observed = manifest
            .samples
            .iter()
            .map(|s| MaskImage::read_pgm(&Self::sample_dir(dir, s.index).join("obs_mask.pgm")))
            .collect::<Result<Vec<_>, _>>()?;
        let set = Self { manifest, observed };
        set.validate()?;
        Ok(set)
    }
}

/// Scripted tracking scenario: smooth motion with an optional window of
/// blank (fully occluded) frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceScript {
    pub frames: usize,
    /// `(first frame, length)` of the blanked window.
    pub occlusion: Option<(usize, usize)>,
    /// Rotation per frame about a fixed axis, degrees.
    pub rot_step_deg: f64,
    /// Peak lateral displacement of the sinusoidal path, meters.
    pub amplitude: f64,
    /// Period of the lateral motion, frames.
    pub period: f64,
    pub seed: u64,
}

impl Default for SequenceScript {
    fn default() -> Self {
        Self {
            frames: 100,
            occlusion: Some((40, 12)),
            rot_step_deg: 0.5,
            amplitude: 0.03,
            period: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub gt: Vec<Pose>,
    pub frames: Vec<MaskImage>,
}

impl SequenceScript {
    pub fn is_occluded(&self, k: usize) -> bool {
        self.occlusion.is_some_and(|(s, n)| k >= s && k < s + n)
    }

    pub fn poses(&self, start: &Pose) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let axis = random_rotation(&mut rng).rotate(&Vector3::z());
        (0..self.frames)
            .map(|k| {
                let phase = std::f64::consts::TAU * k as f64 / self.period.max(1.0);
                let r =
                    Rotation::from_axis_angle(&axis, (self.rot_step_deg * k as f64).to_radians());
                Pose::new(
                    r.compose(&start.rotation),
                    start.translation
                        + Vector3::new(
                            self.amplitude * phase.sin(),
                            0.5 * self.amplitude * (1.0 - phase.cos()),
                            0.0,
                        ),
                )
            })
            .collect()
    }

    pub fn generate(
        &self,
        model: &ObjectModel,
        start: &Pose,
        intr: &CameraIntrinsics,
    ) -> Result<Sequence, DatagenError> {
        let gt = self.poses(start);
        let frames = gt
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if self.is_occluded(k) {
                    Ok(MaskImage::new(intr.width, intr.height))
                } else {
                    silhouette(model, p, intr)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Sequence { gt, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gt() -> Pose {
        Pose::new(
            Rotation::from_euler_xyz_deg(10.0, -20.0, 30.0),
            Vector3::new(0.01, 0.02, 0.8),
        )
    }

    #[test]
    fn zero_noise_is_identity() {
        let noise = NoiseModel {
            euler_sigma: 0.0,
            trans_sigma: [0.0; 3],
            ..NoiseModel::default()
        };
        assert_eq!(perturb_pose(&gt(), &noise, &mut rng(1)).unwrap(), gt());
    }

    #[test]
    fn default_noise_statistics() {
        let noise = NoiseModel::default();
        let mut r = rng(2);
        let g = gt();
        let (a0, b0, c0) = g.rotation.to_euler_xyz();
        let n = 10_000;
        let mut sq = [0.0; 3];
        let mut z = 0.0;
        for _ in 0..n {
            let p = perturb_pose(&g, &noise, &mut r).unwrap();
            assert!(angular_distance(&p.rotation, &g.rotation) <= 45f64.to_radians());
            let (a, b, c) = p.rotation.to_euler_xyz();
            let wrap = |d: f64| {
                (d + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
            };
            for (k, d) in [a - a0, b - b0, c - c0].into_iter().enumerate() {
                sq[k] += wrap(d).to_degrees().powi(2);
            }
            z += (p.translation.z - g.translation.z).powi(2);
        }
        for s in sq {
            let std = (s / n as f64).sqrt();
            assert!((13.5..=16.5).contains(&std), "euler std {std}");
        }
        let zs = (z / n as f64).sqrt() * 100.0;
        assert!((4.5..=5.5).contains(&zs), "z std {zs} cm");
    }

    #[test]
    fn rejection_budget() {
        let noise = NoiseModel {
            euler_sigma: 10_000.0,
            max_angle: 1e-6,
            ..NoiseModel::default()
        };
        assert!(matches!(
            perturb_pose(&gt(), &noise, &mut rng(3)),
            Err(DatagenError::RejectionBudgetExceeded(_))
        ));
        let bad = NoiseModel {
            max_angle: 0.0,
            ..NoiseModel::default()
        };
        assert!(perturb_pose(&gt(), &bad, &mut rng(3)).is_err());
    }

    #[test]
    fn dilation_examples() {
        let mut m = MaskImage::new(7, 7);
        m.set(3, 3, true);
        assert_eq!(dilate_mask(&m, 0, &mut rng(4)), m);
        let d = dilate_square(&m, 1);
        assert_eq!(d.count(), 9);
        for y in 2..=4 {
            for x in 2..=4 {
                assert!(d.get(x, y));
            }
        }
        let mut edge = MaskImage::new(5, 5);
        edge.set(0, 0, true);
        assert_eq!(dilate_square(&edge, 2).count(), 9);
        let r = dilate_mask(&m, DEFAULT_MAX_DILATION, &mut rng(5));
        assert!(r.is_superset_of(&m));
    }

    #[test]
    fn scenes_composite_by_depth() {
        let intr = CameraIntrinsics::linemod();
        let cube = ObjectModel::cube(0.1);
        let one = composite(std::slice::from_ref(&cube), &[(0, gt())], &intr).unwrap();
        assert_eq!(one[0].visible_mask, one[0].full_mask);

        let front = Pose::from_translation(Vector3::new(0.0, 0.0, 0.5));
        let back = Pose::from_translation(Vector3::new(0.0, 0.0, 1.5));
        let s = composite(std::slice::from_ref(&cube), &[(0, back), (0, front)], &intr).unwrap();
        assert!(s[0].visible_mask.is_empty());
        assert_eq!(s[1].visible_mask, s[1].full_mask);

        let models = vec![cube, ObjectModel::uv_sphere(0.05, 8, 16)];
        let mut r = rng(6);
        for count in 3..=8 {
            let scene = sample_scene(&models, count, &PosePrior::default(), &intr, &mut r).unwrap();
            let mut vis = MaskImage::new(intr.width, intr.height);
            let mut full = vis.clone();
            for o in &scene {
                let f = o.visible_fraction();
                assert!((0.0..=1.0).contains(&f));
                assert!(o.full_mask.is_superset_of(&o.visible_mask));
                vis = vis.union(&o.visible_mask);
                full = full.union(&o.full_mask);
            }
            assert_eq!(vis, full);
        }
    }

    #[test]
    fn elevation_filter() {
        let prior = PosePrior {
            elevation: Some([20.0, 60.0]),
            ..PosePrior::default()
        };
        let mut r = rng(7);
        for _ in 0..50 {
            let p = sample_pose(&prior, &mut r).unwrap();
            let e = camera_elevation(&p);
            assert!((20.0..=60.0).contains(&e));
        }
    }

    #[test]
    fn generation_is_mode_independent_and_round_trips() {
        let intr = CameraIntrinsics::linemod();
        let models = vec![
            ("cube".to_string(), ObjectModel::cube(0.1)),
            ("sphere".to_string(), ObjectModel::uv_sphere(0.05, 8, 16)),
        ];
        let cfg = GenerateConfig {
            samples_per_model: 3,
            obs_dilate_px: 2,
            seed: 11,
            ..GenerateConfig::default()
        };
        let a = generate_samples(&models, &intr, &cfg, Exec::Sequential).unwrap();
        let b = generate_samples(&models, &intr, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.manifest.samples.len(), 6);
        assert_eq!(a.manifest.samples[4].object, "sphere");
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        assert!(dir.path().join("000005/obs_mask.pgm").exists());
        assert_eq!(SampleSet::read(dir.path()).unwrap(), a);
    }

    #[test]
    fn sequence_script() {
        let intr = CameraIntrinsics::linemod();
        let script = SequenceScript::default();
        let seq = script
            .generate(&ObjectModel::cube(0.1), &gt(), &intr)
            .unwrap();
        assert_eq!(seq.frames.len(), 100);
        for (k, f) in seq.frames.iter().enumerate() {
            assert_eq!(f.is_empty(), (40..52).contains(&k), "frame {k}");
        }
        assert!(angular_distance(&seq.gt[0].rotation, &gt().rotation) < 1e-12);
        assert_eq!(seq.gt[0].translation, gt().translation);
    }
}
