//! Silhouette/depth software rasterizer.
//!
//! Perspective projection with pixel-center sampling: pixel `(row i, col j)`
//! is covered when the continuous point `(j + 0.5, i + 0.5)` lies inside a
//! projected triangle. Ties on shared edges follow a top-left rule so that
//! adjacent triangles never both claim a pixel. No back-face culling.
//! Triangles with any vertex at or behind the camera plane are dropped.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::image::{DepthImage, MaskImage};
use crate::model::ObjectModel;
use crate::pose::{CameraIntrinsics, Pose};

const NEAR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("object origin is not in front of the camera (z = {0})")]
    BehindCamera(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub mask: MaskImage,
    pub depth: DepthImage,
    /// No foreground pixel was produced.
    pub offscreen: bool,
}

struct ScreenTri {
    p: [Vector2<f64>; 3],
    inv_z: [f64; 3],
    area: f64,
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

#[inline]
fn owns_edge(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

fn project_vertices(
    model: &ObjectModel,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Vec<(Vector2<f64>, f64)> {
    let r = pose.rotation.matrix();
    model
        .vertices
        .iter()
        .map(|v| {
            let c: Vector3<f64> = r * v + pose.translation;
            let uv = if c.z > NEAR {
                Vector2::new(intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy)
            } else {
                Vector2::new(f64::NAN, f64::NAN)
            };
            (uv, c.z)
        })
        .collect()
}

/// Calls `visit(index, depth)` for every covered pixel of every triangle.
fn traverse(
    model: &ObjectModel,
    pose: &Pose,
    intr: &CameraIntrinsics,
    mut visit: impl FnMut(usize, f64),
) {
    let (w, h) = (intr.width, intr.height);
    let verts = project_vertices(model, pose, intr);
    if model.triangles.is_empty() {
        for (uv, z) in &verts {
            if *z <= NEAR {
                continue;
            }
            let (x, y) = (uv.x.floor(), uv.y.floor());
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                visit(y as usize * w + x as usize, *z);
            }
        }
        return;
    }
    for t in &model.triangles {
        let [a, b, c] = t.map(|i| verts[i]);
        if a.1 <= NEAR || b.1 <= NEAR || c.1 <= NEAR {
            continue;
        }
        let mut tri = ScreenTri {
            p: [a.0, b.0, c.0],
            inv_z: [1.0 / a.1, 1.0 / b.1, 1.0 / c.1],
            area: edge(&a.0, &b.0, c.0.x, c.0.y),
        };
        if tri.area == 0.0 || !tri.area.is_finite() {
            continue;
        }
        if tri.area < 0.0 {
            tri.p.swap(1, 2);
            tri.inv_z.swap(1, 2);
            tri.area = -tri.area;
        }
        let [p0, p1, p2] = tri.p;
        let min_x = p0.x.min(p1.x).min(p2.x);
        let max_x = p0.x.max(p1.x).max(p2.x);
        let min_y = p0.y.min(p1.y).min(p2.y);
        let max_y = p0.y.max(p1.y).max(p2.y);
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let own = [
            owns_edge(&p1, &p2),
            owns_edge(&p2, &p0),
            owns_edge(&p0, &p1),
        ];
        let inside = |w: f64, own: bool| w > 0.0 || (w == 0.0 && own);
        for y in y0 as usize..=y1 as usize {
            let py = y as f64 + 0.5;
            for x in x0 as usize..=x1 as usize {
                let px = x as f64 + 0.5;
                let w0 = edge(&p1, &p2, px, py);
                let w1 = edge(&p2, &p0, px, py);
                let w2 = edge(&p0, &p1, px, py);
                if inside(w0, own[0]) && inside(w1, own[1]) && inside(w2, own[2]) {
                    let inv =
                        (w0 * tri.inv_z[0] + w1 * tri.inv_z[1] + w2 * tri.inv_z[2]) / tri.area;
                    visit(y * w + x, 1.0 / inv);
                }
            }
        }
    }
}

fn check_pose(pose: &Pose) -> Result<(), RenderError> {
    if pose.translation.z > 0.0 {
        Ok(())
    } else {
        Err(RenderError::BehindCamera(pose.translation.z))
    }
}

/// Z-buffered silhouette and depth of `model` under `pose`.
pub fn rasterize(
    model: &ObjectModel,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<Rendering, RenderError> {
    check_pose(pose)?;
    let mut depth = DepthImage::new(intr.width, intr.height);
    // depth bounds of the transformed vertices; clamps interpolation round-off
    let (zmin, zmax) = model
        .vertices
        .iter()
        .map(|v| pose.transform_point(v).z)
        .filter(|z| *z > NEAR)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), z| {
            (lo.min(z), hi.max(z))
        });
    traverse(model, pose, intr, |i, z| {
        let z = z.clamp(zmin, zmax);
        let d = &mut depth.data[i];
        if *d == 0.0 || z < *d {
            *d = z;
        }
    });
    let mask = depth.to_mask();
    let offscreen = mask.is_empty();
    Ok(Rendering {
        mask,
        depth,
        offscreen,
    })
}

/// Silhouette only, written into a reusable buffer sized to `intr`.
/// Returns the number of foreground pixels.
pub fn silhouette_into(
    model: &ObjectModel,
    pose: &Pose,
    intr: &CameraIntrinsics,
    out: &mut MaskImage,
) -> Result<usize, RenderError> {
    check_pose(pose)?;
    out.width = intr.width;
    out.height = intr.height;
    out.data.clear();
    out.data.resize(intr.width * intr.height, false);
    traverse(model, pose, intr, |i, _| out.data[i] = true);
    Ok(out.count())
}

pub fn silhouette(
    model: &ObjectModel,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<MaskImage, RenderError> {
    let mut m = MaskImage::new(intr.width, intr.height);
    silhouette_into(model, pose, intr, &mut m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::mask_bounds;
    use crate::pose::Rotation;

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn cube_face_on_matches_analytic_bounds() {
        let cube = ObjectModel::cube(1.0);
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 5.0));
        let r = rasterize(&cube, &pose, &k500()).unwrap();
        assert!(!r.offscreen);
        // front face at z = 4.5 spans +-0.5 m -> +-55.56 px around the principal point
        let half = 500.0 * 0.5 / 4.5;
        let b = mask_bounds(&r.mask).unwrap();
        let (l, rr) = (320.0 - half, 320.0 + half);
        let (u, d) = (240.0 - half, 240.0 + half);
        assert!((b.l as f64 + 0.5 - l).abs() <= 2.0, "{b:?}");
        assert!((b.r as f64 + 0.5 - rr).abs() <= 2.0, "{b:?}");
        assert!((b.u as f64 + 0.5 - u).abs() <= 2.0, "{b:?}");
        assert!((b.d as f64 + 0.5 - d).abs() <= 2.0, "{b:?}");
        let area = r.mask.count() as f64;
        assert!((area - (2.0 * half).powi(2)).abs() / area < 0.03);
        // visible depth is the front face
        assert!((r.depth.get(320, 240) - 4.5).abs() < 1e-9);
    }

    #[test]
    fn shared_edges_not_double_counted() {
        // two triangles of a quad exactly aligned to pixel centers
        let m = ObjectModel::from_mesh(
            vec![
                Vector3::new(-1.0, -1.0, 0.0),
                Vector3::new(1.0, -1.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(-1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let k = CameraIntrinsics::new(10.0, 10.0, 16.0, 16.0, 32, 32).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let mut hits = vec![0u32; 32 * 32];
        super::traverse(&m, &pose, &k, |i, _| hits[i] += 1);
        assert!(hits.iter().all(|h| *h <= 1));
        assert_eq!(hits.iter().filter(|h| **h == 1).count(), 400);
    }

    #[test]
    fn offscreen_and_behind() {
        let cube = ObjectModel::cube(1.0);
        let r = rasterize(
            &cube,
            &Pose::from_translation(Vector3::new(10.0, 0.0, 1.0)),
            &k500(),
        )
        .unwrap();
        assert!(r.offscreen);
        assert!(rasterize(
            &cube,
            &Pose::from_translation(Vector3::new(0.0, 0.0, -3.0)),
            &k500()
        )
        .is_err());
    }

    #[test]
    fn point_cloud_splats() {
        let m = ObjectModel::from_mesh(vec![Vector3::zeros(), Vector3::new(0.1, 0.0, 0.0)], vec![]);
        let r = rasterize(
            &m,
            &Pose::from_translation(Vector3::new(0.0, 0.0, 1.0)),
            &k500(),
        )
        .unwrap();
        assert_eq!(r.mask.count(), 2);
        assert!(r.mask.get(320, 240));
        assert!(r.mask.get(370, 240));
    }

    #[test]
    fn depth_within_vertex_range() {
        let cube = ObjectModel::cube(0.2);
        let pose = Pose::new(
            Rotation::from_euler_xyz_deg(30.0, 40.0, 10.0),
            Vector3::new(0.02, -0.01, 0.7),
        );
        let r = rasterize(&cube, &pose, &k500()).unwrap();
        let zs: Vec<f64> = cube
            .vertices
            .iter()
            .map(|v| pose.transform_point(v).z)
            .collect();
        let lo = zs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = zs.iter().cloned().fold(0.0, f64::max);
        for d in r.depth.data.iter().filter(|d| **d > 0.0) {
            assert!(*d >= lo && *d <= hi);
        }
        let s = silhouette(&cube, &pose, &k500()).unwrap();
        assert_eq!(s, r.mask);
        assert_eq!(rasterize(&cube, &pose, &k500()).unwrap(), r);
    }
}
