//! Pose errors: the point-matching loss and its gradient, ADD / ADD-S,
//! 2D projection error, n-degree n-cm, symmetry-aware variants and the
//! accuracy / AUC summaries built on top of them.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ObjectModel, SymmetrySpec};
use crate::parallel::{self, Exec};
use crate::pose::{angular_distance, CameraIntrinsics, Pose, PoseError, Rotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no evaluation points")]
    NoPoints,
    #[error("nothing to summarize")]
    EmptyReports,
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// Per-point norm used by the point-matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

fn require_points(points: &[Vector3<f64>]) -> Result<(), MetricError> {
    if points.is_empty() {
        Err(MetricError::NoPoints)
    } else {
        Ok(())
    }
}

fn transformed(pose: &Pose, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let r = pose.rotation.matrix();
    points.iter().map(|p| r * p + pose.translation).collect()
}

/// Mean per-point L1 distance between the model points under `gt` and `est`.
pub fn point_matching_loss(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
) -> Result<f64, MetricError> {
    point_matching_loss_with(gt, est, points, LossNorm::L1)
}

pub fn point_matching_loss_with(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
    norm: LossNorm,
) -> Result<f64, MetricError> {
    require_points(points)?;
    let (rg, re) = (gt.rotation.matrix(), est.rotation.matrix());
    let sum: f64 = points
        .iter()
        .map(|x| {
            let d = (rg * x + gt.translation) - (re * x + est.translation);
            match norm {
                LossNorm::L1 => d.abs().sum(),
                LossNorm::L2 => d.norm(),
            }
        })
        .sum();
    Ok(sum / points.len() as f64)
}

/// Gradient of the L1 point-matching loss with respect to the estimate's
/// raw quaternion `(w, x, y, z)` and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    /// Some coordinate difference sits on the L1 kink (|d| < 1e-10); the
    /// result is a subgradient that uses sign(0) = 0 there.
    pub subgradient: bool,
}

pub const KINK_EPS: f64 = 1e-10;

/// Rotation matrix of a (not necessarily unit) quaternion via the
/// homogeneous formula; matches [`Rotation::matrix`] on unit input.
pub fn quaternion_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// L1 loss as a function of the raw estimate parameters (for gradient checks).
pub fn point_matching_loss_params(
    gt: &Pose,
    q: [f64; 4],
    t: Vector3<f64>,
    points: &[Vector3<f64>],
) -> f64 {
    let rg = gt.rotation.matrix();
    let re = quaternion_matrix(q);
    points
        .iter()
        .map(|x| ((rg * x + gt.translation) - (re * x + t)).abs().sum())
        .sum::<f64>()
        / points.len() as f64
}

pub fn point_matching_loss_grad(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
) -> Result<LossGradient, MetricError> {
    require_points(points)?;
    let q = est.rotation.wxyz();
    let (w, v) = (q[0], Vector3::new(q[1], q[2], q[3]));
    let rg = gt.rotation.matrix();
    let re = quaternion_matrix(q);
    let mut gq = [0.0; 4];
    let mut gt_ = Vector3::zeros();
    let mut kink = false;
    for x in points {
        let d = (rg * x + gt.translation) - (re * x + est.translation);
        let s = d.map(|c| {
            if c.abs() < KINK_EPS {
                kink = true;
                0.0
            } else {
                c.signum()
            }
        });
        // d(loss)/d(est point) = -s
        gt_ -= s;
        // R x = (w^2 - v.v) x + 2 (v.x) v + 2 w (v x x)
        let dw = 2.0 * w * x + 2.0 * v.cross(x);
        let cross_x = Matrix3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0);
        let dv = -2.0 * x * v.transpose()
            + 2.0 * v.dot(x) * Matrix3::identity()
            + 2.0 * v * x.transpose()
            - 2.0 * w * cross_x;
        gq[0] -= s.dot(&dw);
        let gv = dv.transpose() * s;
        gq[1] -= gv.x;
        gq[2] -= gv.y;
        gq[3] -= gv.z;
    }
    let n = points.len() as f64;
    Ok(LossGradient {
        quaternion: gq.map(|g| g / n),
        translation: [gt_.x / n, gt_.y / n, gt_.z / n],
        subgradient: kink,
    })
}

/// Mean Euclidean distance between corresponding transformed points.
pub fn add(gt: &Pose, est: &Pose, points: &[Vector3<f64>]) -> Result<f64, MetricError> {
    point_matching_loss_with(gt, est, points, LossNorm::L2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NearestMethod {
    #[default]
    BruteForce,
    /// Uniform grid; returns exactly the brute-force values.
    Grid,
}

/// Mean distance from each gt-transformed point to the nearest
/// est-transformed point.
pub fn add_s(gt: &Pose, est: &Pose, points: &[Vector3<f64>]) -> Result<f64, MetricError> {
    add_s_with(gt, est, points, NearestMethod::BruteForce, Exec::Sequential)
}

pub fn add_s_with(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
    method: NearestMethod,
    exec: Exec,
) -> Result<f64, MetricError> {
    require_points(points)?;
    let a = transformed(gt, points);
    let b = transformed(est, points);
    let nearest_sq: Vec<f64> = match method {
        NearestMethod::BruteForce => parallel::map_slice(exec, &a, |p| {
            b.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        }),
        NearestMethod::Grid => {
            let grid = PointGrid::new(&b);
            parallel::map_slice(exec, &a, |p| grid.nearest_sq(p))
        }
    };
    Ok(nearest_sq.iter().map(|d| d.sqrt()).sum::<f64>() / points.len() as f64)
}

/// Bucketed point set for exact nearest-neighbor queries.
struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vector3<f64>]) -> Self {
        let (lo, hi) = points.iter().fold(
            (
                Vector3::repeat(f64::INFINITY),
                Vector3::repeat(f64::NEG_INFINITY),
            ),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let ext = (hi - lo).max();
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if ext > 0.0 { ext / per_axis } else { 1.0 };
        let dims = [0, 1, 2].map(|k| (((hi[k] - lo[k]) / cell).floor() as usize + 1).max(1));
        let n_cells = dims[0] * dims[1] * dims[2];
        let cell_of = |p: &Vector3<f64>| {
            let c = [0, 1, 2].map(|k| (((p[k] - lo[k]) / cell).floor() as usize).min(dims[k] - 1));
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let mut counts = vec![0usize; n_cells + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            lo,
            cell,
            dims,
            starts: counts,
            order,
        }
    }

    fn nearest_sq(&self, q: &Vector3<f64>) -> f64 {
        let qc = [0, 1, 2].map(|k| ((q[k] - self.lo[k]) / self.cell).floor() as isize);
        let dims = self.dims.map(|d| d as isize);
        // shells beyond this radius cannot intersect the grid
        let max_r = (0..3)
            .map(|k| qc[k].abs().max((qc[k] - dims[k] + 1).abs()))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in 0..=max_r {
            for z in qc[2] - r..=qc[2] + r {
                if z < 0 || z >= dims[2] {
                    continue;
                }
                for y in qc[1] - r..=qc[1] + r {
                    if y < 0 || y >= dims[1] {
                        continue;
                    }
                    let on_face = (z - qc[2]).abs() == r || (y - qc[1]).abs() == r;
                    let xs: Vec<isize> = if on_face {
                        (qc[0] - r..=qc[0] + r).collect()
                    } else if r == 0 {
                        vec![qc[0]]
                    } else {
                        vec![qc[0] - r, qc[0] + r]
                    };
                    for x in xs {
                        if x < 0 || x >= dims[0] {
                            continue;
                        }
                        let c = ((z * dims[1] + y) * dims[0] + x) as usize;
                        for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
                            best = best.min((q - self.points[i]).norm_squared());
                        }
                    }
                }
            }
            // every point in shell r+1 or beyond is at least r*cell away
            let bound = r as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best
    }
}

/// Mean pixel distance between projected corresponding points.
pub fn proj2d(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
    intr: &CameraIntrinsics,
) -> Result<f64, MetricError> {
    require_points(points)?;
    let mut sum = 0.0;
    for (a, b) in transformed(gt, points)
        .iter()
        .zip(transformed(est, points).iter())
    {
        let pa = intr.project_camera_point(a)?;
        let pb = intr.project_camera_point(b)?;
        sum += (pa - pb).norm();
    }
    Ok(sum / points.len() as f64)
}

pub fn rotation_error(gt: &Pose, est: &Pose) -> f64 {
    angular_distance(&gt.rotation, &est.rotation)
}

pub fn translation_error(gt: &Pose, est: &Pose) -> f64 {
    (gt.translation - est.translation).norm()
}

/// Rotation error within `deg` degrees and translation error within `cm`
/// centimeters, both inclusive.
pub fn n_deg_n_cm(gt: &Pose, est: &Pose, deg: f64, cm: f64) -> bool {
    rotation_error(gt, est) <= deg.to_radians() && translation_error(gt, est) <= cm / 100.0
}

/// Convergence tolerance of the axis-symmetry angle search, radians.
pub const SYMMETRY_ANGLE_TOL: f64 = 1e-9;

/// Minimizes a function that is unimodal on the circle `[0, 2 pi)`:
/// coarse scan to bracket, then golden-section narrowing.
fn minimize_on_circle(f: impl Fn(f64) -> f64) -> f64 {
    const SCAN: usize = 72;
    let step = std::f64::consts::TAU / SCAN as f64;
    let (k, _) =
        (0..SCAN)
            .map(|k| (k, f(k as f64 * step)))
            .fold(
                (0, f64::INFINITY),
                |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
            );
    let (mut a, mut b) = (k as f64 * step - step, k as f64 * step + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > SYMMETRY_ANGLE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Member of `gt`'s symmetry orbit whose rotation is closest to `reference`.
/// The symmetry axis passes through the model origin, so the translation is
/// unchanged.
pub fn closest_symmetric_pose(gt: &Pose, reference: &Pose, sym: &SymmetrySpec) -> Pose {
    match sym {
        SymmetrySpec::None => *gt,
        SymmetrySpec::Discrete { rotations } => {
            rotations
                .iter()
                .map(|g| gt.with_model_rotation(g))
                .map(|p| (angular_distance(&p.rotation, &reference.rotation), p))
                .fold(
                    (f64::INFINITY, *gt),
                    |acc, (d, p)| if d < acc.0 { (d, p) } else { acc },
                )
                .1
        }
        SymmetrySpec::Axis { axis } => {
            let axis = Vector3::from(*axis);
            let member =
                |theta: f64| gt.with_model_rotation(&Rotation::from_axis_angle(&axis, theta));
            let theta =
                minimize_on_circle(|t| angular_distance(&member(t).rotation, &reference.rotation));
            member(theta)
        }
        SymmetrySpec::Spherical => Pose::new(reference.rotation, gt.translation),
    }
}

/// Ground-truth poses over which symmetric metrics minimize. Continuous
/// orbits are represented by `gt` and its closest member to `est`.
pub fn symmetry_candidates(gt: &Pose, est: &Pose, sym: &SymmetrySpec) -> Vec<Pose> {
    match sym {
        SymmetrySpec::None => vec![*gt],
        SymmetrySpec::Discrete { rotations } => rotations
            .iter()
            .map(|g| gt.with_model_rotation(g))
            .collect(),
        SymmetrySpec::Axis { .. } | SymmetrySpec::Spherical => {
            vec![*gt, closest_symmetric_pose(gt, est, sym)]
        }
    }
}

/// Minimum of `metric(candidate_gt)` over the symmetry orbit of `gt`.
pub fn symmetric_metric<E>(
    gt: &Pose,
    est: &Pose,
    sym: &SymmetrySpec,
    metric: impl Fn(&Pose) -> Result<f64, E>,
) -> Result<f64, E> {
    let mut best = f64::INFINITY;
    for c in symmetry_candidates(gt, est, sym) {
        best = best.min(metric(&c)?);
    }
    Ok(best)
}

pub fn symmetric_add(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
    sym: &SymmetrySpec,
) -> Result<f64, MetricError> {
    symmetric_metric(gt, est, sym, |g| add(g, est, points))
}

pub fn symmetric_proj2d(
    gt: &Pose,
    est: &Pose,
    points: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    sym: &SymmetrySpec,
) -> Result<f64, MetricError> {
    symmetric_metric(gt, est, sym, |g| proj2d(g, est, points, intr))
}

pub fn symmetric_rotation_error(gt: &Pose, est: &Pose, sym: &SymmetrySpec) -> f64 {
    symmetric_metric::<std::convert::Infallible>(gt, est, sym, |g| Ok(rotation_error(g, est)))
        .unwrap_or_else(|e| match e {})
}

pub fn symmetric_n_deg_n_cm(gt: &Pose, est: &Pose, sym: &SymmetrySpec, deg: f64, cm: f64) -> bool {
    symmetric_rotation_error(gt, est, sym) <= deg.to_radians()
        && translation_error(gt, est) <= cm / 100.0
}

/// Normalized area under the accuracy-vs-threshold curve on `[0, max]`.
pub fn auc(distances: &[f64], max_threshold: f64) -> f64 {
    if distances.is_empty() || !(max_threshold > 0.0) {
        return 0.0;
    }
    let mut d: Vec<f64> = distances
        .iter()
        .map(|x| if x.is_nan() { f64::INFINITY } else { *x })
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    // accuracy is a step function: k/n on [d_(k), d_(k+1))
    let mut area = 0.0;
    for (k, x) in d.iter().enumerate() {
        if *x >= max_threshold {
            break;
        }
        let next = d
            .get(k + 1)
            .copied()
            .unwrap_or(max_threshold)
            .min(max_threshold);
        area += (k + 1) as f64 / n * (next - x.max(0.0));
    }
    area / max_threshold
}

/// Errors of one estimate. Plain values use the given ground truth; the
/// `*_sym` values minimize over the object's symmetry orbit and equal the
/// plain values for asymmetric objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub add: f64,
    pub add_s: f64,
    pub proj2d: f64,
    pub rot_err: f64,
    pub trans_err: f64,
    pub add_sym: f64,
    pub proj2d_sym: f64,
    pub rot_err_sym: f64,
}

pub fn evaluate(
    gt: &Pose,
    est: &Pose,
    model: &ObjectModel,
    intr: &CameraIntrinsics,
) -> Result<MetricReport, MetricError> {
    let pts = model.points();
    let sym = &model.symmetry;
    let add_v = add(gt, est, pts)?;
    let proj = proj2d(gt, est, pts, intr)?;
    let rot = rotation_error(gt, est);
    let nearest = if pts.len() > 256 {
        NearestMethod::Grid
    } else {
        NearestMethod::BruteForce
    };
    Ok(MetricReport {
        add: add_v,
        add_s: add_s_with(gt, est, pts, nearest, Exec::Sequential)?,
        proj2d: proj,
        rot_err: rot,
        trans_err: translation_error(gt, est),
        add_sym: if sym.is_none() {
            add_v
        } else {
            symmetric_add(gt, est, pts, sym)?
        },
        proj2d_sym: if sym.is_none() {
            proj
        } else {
            symmetric_proj2d(gt, est, pts, intr, sym)?
        },
        rot_err_sym: if sym.is_none() {
            rot
        } else {
            symmetric_rotation_error(gt, est, sym)
        },
    })
}

/// Threshold grid for [`summarize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// n for the n-degree, n-cm metric.
    pub deg_cm: Vec<f64>,
    /// Fractions of the model diameter for ADD and ADD-S.
    pub diameter_fractions: Vec<f64>,
    pub proj2d_px: Vec<f64>,
    /// Upper limit of the AUC integration, meters.
    pub auc_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            deg_cm: vec![2.0, 5.0, 10.0],
            diameter_fractions: vec![0.02, 0.05, 0.10],
            proj2d_px: vec![2.0, 5.0, 10.0],
            auc_max: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRate {
    pub metric: String,
    pub threshold: f64,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub count: usize,
    pub rates: Vec<PassRate>,
    pub auc_add: f64,
    pub auc_add_s: f64,
}

impl AccuracySummary {
    pub fn rate(&self, metric: &str, threshold: f64) -> Option<f64> {
        self.rates
            .iter()
            .find(|r| r.metric == metric && r.threshold == threshold)
            .map(|r| r.pass_rate)
    }

    /// Pass-rate rows followed by the two AUC rows (threshold = AUC limit).
    pub fn rows(&self, auc_max: f64) -> Vec<PassRate> {
        let mut rows = self.rates.clone();
        rows.push(PassRate {
            metric: "auc_add".into(),
            threshold: auc_max,
            pass_rate: self.auc_add,
        });
        rows.push(PassRate {
            metric: "auc_add_s".into(),
            threshold: auc_max,
            pass_rate: self.auc_add_s,
        });
        rows
    }

    pub fn to_csv(&self, auc_max: f64) -> String {
        let mut s = String::from("metric,threshold,pass_rate\n");
        for r in self.rows(auc_max) {
            let _ = writeln!(s, "{},{},{}", r.metric, r.threshold, r.pass_rate);
        }
        s
    }
}

/// Pass rates over all reports; a `None` entry is a failed estimate and
/// never passes.
pub fn summarize_with_failures(
    reports: &[Option<MetricReport>],
    diameter: f64,
    t: &Thresholds,
) -> Result<AccuracySummary, MetricError> {
    if reports.is_empty() {
        return Err(MetricError::EmptyReports);
    }
    let n = reports.len() as f64;
    let rate = |pass: &dyn Fn(&MetricReport) -> bool| {
        reports
            .iter()
            .filter(|r| r.as_ref().is_some_and(pass))
            .count() as f64
            / n
    };
    let mut rates = Vec::new();
    for &k in &t.deg_cm {
        rates.push(PassRate {
            metric: "deg_cm".into(),
            threshold: k,
            pass_rate: rate(&|r| r.rot_err_sym <= k.to_radians() && r.trans_err <= k / 100.0),
        });
    }
    for &f in &t.diameter_fractions {
        rates.push(PassRate {
            metric: "add".into(),
            threshold: f,
            pass_rate: rate(&|r| r.add_sym <= f * diameter),
        });
    }
    for &f in &t.diameter_fractions {
        rates.push(PassRate {
            metric: "add_s".into(),
            threshold: f,
            pass_rate: rate(&|r| r.add_s <= f * diameter),
        });
    }
    for &px in &t.proj2d_px {
        rates.push(PassRate {
            metric: "proj2d".into(),
            threshold: px,
            pass_rate: rate(&|r| r.proj2d_sym <= px),
        });
    }
    let dist = |f: fn(&MetricReport) -> f64| -> Vec<f64> {
        reports
            .iter()
            .map(|r| r.as_ref().map(f).unwrap_or(f64::INFINITY))
            .collect()
    };
    Ok(AccuracySummary {
        count: reports.len(),
        rates,
        auc_add: auc(&dist(|r| r.add), t.auc_max),
        auc_add_s: auc(&dist(|r| r.add_s), t.auc_max),
    })
}

pub fn summarize(
    reports: &[MetricReport],
    diameter: f64,
    t: &Thresholds,
) -> Result<AccuracySummary, MetricError> {
    let wrapped: Vec<Option<MetricReport>> = reports.iter().copied().map(Some).collect();
    summarize_with_failures(&wrapped, diameter, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect()
    }

    fn base() -> Pose {
        Pose::new(
            Rotation::from_euler_xyz_deg(10.0, 20.0, 30.0),
            Vector3::new(0.05, 0.0, 0.8),
        )
    }

    #[test]
    fn loss_examples() {
        let pts = cloud(50, 1);
        let gt = base();
        assert_eq!(point_matching_loss(&gt, &gt, &pts).unwrap(), 0.0);
        let mut est = gt;
        est.translation.x += 0.03;
        assert_relative_eq!(
            point_matching_loss(&gt, &est, &pts).unwrap(),
            0.03,
            epsilon = 1e-12
        );
        let mut est = gt;
        est.translation += Vector3::new(0.01, 0.02, 0.0);
        assert_relative_eq!(
            point_matching_loss(&gt, &est, &pts).unwrap(),
            0.03,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            point_matching_loss_with(&gt, &est, &pts, LossNorm::L2).unwrap(),
            0.0005f64.sqrt(),
            epsilon = 1e-12
        );
        assert_eq!(
            point_matching_loss(&gt, &gt, &[]),
            Err(MetricError::NoPoints)
        );
    }

    #[test]
    fn grad_at_kink_and_pure_translation() {
        let gt = base();
        let pts = cloud(20, 2);
        assert!(
            point_matching_loss_grad(&gt, &gt, &pts)
                .unwrap()
                .subgradient
        );

        let sym: Vec<Vector3<f64>> = pts.iter().flat_map(|p| [*p, -p]).collect();
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let mut est = gt;
        est.translation.x += 0.03;
        let g = point_matching_loss_grad(&gt, &est, &sym).unwrap();
        assert!(g.subgradient);
        assert_eq!(g.translation, [1.0, 0.0, 0.0]);
        assert!(
            g.quaternion.iter().all(|c| c.abs() < 1e-12),
            "{:?}",
            g.quaternion
        );
    }

    #[test]
    fn grad_matches_central_differences() {
        let pts = cloud(60, 7);
        let gt = base();
        let est = Pose::new(
            Rotation::from_euler_xyz_deg(14.0, 25.0, 22.0),
            Vector3::new(0.06, -0.01, 0.83),
        );
        let g = point_matching_loss_grad(&gt, &est, &pts).unwrap();
        assert!(!g.subgradient);
        let q = est.rotation.wxyz();
        let h = 1e-7;
        for k in 0..4 {
            let (mut qp, mut qm) = (q, q);
            qp[k] += h;
            qm[k] -= h;
            let fd = (point_matching_loss_params(&gt, qp, est.translation, &pts)
                - point_matching_loss_params(&gt, qm, est.translation, &pts))
                / (2.0 * h);
            assert_relative_eq!(g.quaternion[k], fd, epsilon = 1e-6);
        }
        for k in 0..3 {
            let (mut tp, mut tm) = (est.translation, est.translation);
            tp[k] += h;
            tm[k] -= h;
            let fd = (point_matching_loss_params(&gt, q, tp, &pts)
                - point_matching_loss_params(&gt, q, tm, &pts))
                / (2.0 * h);
            assert_relative_eq!(g.translation[k], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn quaternion_matrix_matches_rotation() {
        let r = Rotation::from_euler_xyz_deg(33.0, -12.0, 80.0);
        assert_relative_eq!(quaternion_matrix(r.wxyz()), r.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn add_examples() {
        let pts = cloud(30, 3);
        let gt = base();
        assert_eq!(add(&gt, &gt, &pts).unwrap(), 0.0);
        let mut est = gt;
        est.translation.x += 0.03;
        assert_relative_eq!(add(&gt, &est, &pts).unwrap(), 0.03, epsilon = 1e-12);
        // a 180 degree spin of a unit ring sends each point to its antipode
        let ring: Vec<_> = (0..64)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 64.0;
                Vector3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        let est = Pose::new(Rotation::from_axis_angle(&Vector3::z(), PI), gt.translation);
        assert_relative_eq!(add(&gt, &est, &ring).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn add_s_examples() {
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 2.0));
        let ring = ObjectModel::ring(0.5, 1000).vertices;
        assert_eq!(add_s(&gt, &gt, &ring).unwrap(), 0.0);
        let est = Pose::new(
            Rotation::from_axis_angle(&Vector3::z(), 0.123),
            gt.translation,
        );
        let spacing = 2.0 * PI * 0.5 / 1000.0;
        let v = add_s(&gt, &est, &ring).unwrap();
        assert!(v <= spacing, "{v} > {spacing}");
        assert!(add(&gt, &est, &ring).unwrap() > 10.0 * spacing);
    }

    #[test]
    fn grid_matches_brute_force_bitwise() {
        let pts = cloud(2000, 4);
        let gt = base();
        let est = Pose::new(
            Rotation::from_euler_xyz_deg(15.0, 5.0, -20.0),
            Vector3::new(0.06, 0.01, 0.78),
        );
        for (a, b) in [(gt, est), (est, gt), (gt, gt)] {
            let x = add_s_with(&a, &b, &pts, NearestMethod::BruteForce, Exec::Sequential).unwrap();
            let y = add_s_with(&a, &b, &pts, NearestMethod::Grid, Exec::Parallel).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // far-away query set
        let far = Pose::from_translation(Vector3::new(3.0, -2.0, 5.0));
        let x = add_s_with(
            &far,
            &gt,
            &pts[..300],
            NearestMethod::BruteForce,
            Exec::Sequential,
        )
        .unwrap();
        let y = add_s_with(
            &far,
            &gt,
            &pts[..300],
            NearestMethod::Grid,
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn proj2d_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let plane: Vec<_> = (0..25)
            .map(|i| {
                Vector3::new(
                    (i % 5) as f64 * 0.01 - 0.02,
                    (i / 5) as f64 * 0.01 - 0.02,
                    0.0,
                )
            })
            .collect();
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(proj2d(&gt, &gt, &plane, &k).unwrap(), 0.0);
        let est = Pose::from_translation(Vector3::new(0.01, 0.0, 1.0));
        assert_relative_eq!(proj2d(&gt, &est, &plane, &k).unwrap(), 5.0, epsilon = 1e-12);
        let behind = Pose::from_translation(Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            proj2d(&gt, &behind, &plane, &k),
            Err(MetricError::Pose(_))
        ));

        let sym = SymmetrySpec::cyclic(Vector3::z(), 2);
        let est = Pose::new(Rotation::from_axis_angle(&Vector3::z(), PI), gt.translation);
        assert!(proj2d(&gt, &est, &plane, &k).unwrap() > 1.0);
        assert!(symmetric_proj2d(&gt, &est, &plane, &k, &sym).unwrap() < 1e-9);
    }

    #[test]
    fn n_deg_n_cm_examples() {
        let gt = base();
        assert!(n_deg_n_cm(&gt, &gt, 5.0, 5.0));
        let r6 = Pose::new(
            Rotation::from_axis_angle(&Vector3::x(), 6f64.to_radians()).compose(&gt.rotation),
            gt.translation,
        );
        assert!(!n_deg_n_cm(&gt, &r6, 5.0, 5.0));
        let mut r4 = Pose::new(
            Rotation::from_axis_angle(&Vector3::y(), 4f64.to_radians()).compose(&gt.rotation),
            gt.translation,
        );
        r4.translation.z += 0.04;
        assert!(n_deg_n_cm(&gt, &r4, 5.0, 5.0));
    }

    #[test]
    fn closest_symmetric_examples() {
        let z = Vector3::z();
        let axis = SymmetrySpec::axis(z).unwrap();
        let gt = Pose::new(
            Rotation::from_axis_angle(&z, 30f64.to_radians()),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let refp = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let p = closest_symmetric_pose(&gt, &refp, &axis);
        assert!(angular_distance(&p.rotation, &Rotation::identity()) < 1e-6);
        assert_eq!(p.translation, gt.translation);

        let two = SymmetrySpec::cyclic(z, 2);
        let gt = Pose::new(
            Rotation::from_axis_angle(&z, 170f64.to_radians()),
            refp.translation,
        );
        let p = closest_symmetric_pose(&gt, &refp, &two);
        assert_relative_eq!(
            angular_distance(&p.rotation, &Rotation::identity()),
            10f64.to_radians(),
            epsilon = 1e-9
        );
        let expected = gt.with_model_rotation(&Rotation::from_axis_angle(&z, PI));
        assert!(angular_distance(&p.rotation, &expected.rotation) < 1e-12);

        let trivial = SymmetrySpec::discrete(vec![Rotation::identity()]).unwrap();
        assert_eq!(closest_symmetric_pose(&gt, &refp, &trivial), gt);
    }

    #[test]
    fn symmetric_metric_examples() {
        let pts = cloud(40, 5);
        let gt = base();
        let est = Pose::new(
            Rotation::from_euler_xyz_deg(12.0, 18.0, 33.0),
            gt.translation,
        );
        assert_eq!(
            symmetric_add(&gt, &est, &pts, &SymmetrySpec::None).unwrap(),
            add(&gt, &est, &pts).unwrap()
        );
        let two = SymmetrySpec::cyclic(Vector3::z(), 2);
        let flipped = gt.with_model_rotation(&Rotation::from_axis_angle(&Vector3::z(), PI));
        assert!(symmetric_add(&gt, &flipped, &pts, &two).unwrap() < 1e-12);
        let axis = SymmetrySpec::axis(Vector3::new(1.0, 1.0, 0.0)).unwrap();
        let spun = gt.with_model_rotation(&Rotation::from_axis_angle(
            &Vector3::new(1.0, 1.0, 0.0),
            2.1,
        ));
        assert!(symmetric_rotation_error(&gt, &spun, &axis) < 1e-6);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0, 0.0, 0.0], 0.1), 1.0);
        assert_eq!(auc(&[0.1, 0.2, f64::INFINITY], 0.1), 0.0);
        assert_relative_eq!(auc(&[0.05], 0.1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn auc_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let d: Vec<f64> = (0..37).map(|_| rng.random_range(0.0..0.15)).collect();
            let closed: f64 =
                d.iter().map(|x| (0.1 - x.min(0.1)) / 0.1).sum::<f64>() / d.len() as f64;
            assert_relative_eq!(auc(&d, 0.1), closed, epsilon = 1e-12);
        }
    }

    #[test]
    fn summarize_examples() {
        let perfect = MetricReport {
            add: 0.0,
            add_s: 0.0,
            proj2d: 0.0,
            rot_err: 0.0,
            trans_err: 0.0,
            add_sym: 0.0,
            proj2d_sym: 0.0,
            rot_err_sym: 0.0,
        };
        let s = summarize(&[perfect; 4], 0.1, &Thresholds::default()).unwrap();
        assert!(s.rates.iter().all(|r| r.pass_rate == 1.0));
        assert_eq!(s.auc_add, 1.0);
        assert_eq!(
            summarize(&[], 0.1, &Thresholds::default()),
            Err(MetricError::EmptyReports)
        );
        let csv = s.to_csv(0.1);
        assert!(csv.starts_with("metric,threshold,pass_rate\ndeg_cm,2,1\n"));
    }
}
