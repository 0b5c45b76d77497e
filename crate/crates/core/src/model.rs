//! Object models: mesh loading (OFF, ASCII PLY), evaluation-point sampling,
//! diameter conventions and symmetry descriptions.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{self, Exec};
use crate::pose::Rotation;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported model format: {0}")]
    UnsupportedFormat(String),
    #[error("model has no vertices")]
    EmptyModel,
    #[error("invalid symmetry: {0}")]
    InvalidSymmetry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Parse {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("off") => Ok(Self::Off),
            Some("ply") => Ok(Self::Ply),
            other => Err(ModelError::UnsupportedFormat(format!(
                "unknown extension {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiameterMode {
    /// Maximum pairwise distance over evaluation points and vertices.
    #[default]
    MaxPairwise,
    /// Diagonal of the axis-aligned bounding box.
    Extents,
}

/// Set of model-frame rotations under which the object looks the same.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymmetrySpec {
    #[default]
    None,
    /// Finite group; always contains the identity.
    Discrete { rotations: Vec<Rotation> },
    /// Continuous rotation about an axis through the model origin.
    Axis { axis: [f64; 3] },
    /// Every rotation about the model origin (spheres).
    Spherical,
}

impl SymmetrySpec {
    pub fn discrete(mut rotations: Vec<Rotation>) -> Result<Self, ModelError> {
        if !rotations.contains(&Rotation::identity()) {
            if rotations
                .iter()
                .any(|r| crate::pose::angular_distance(r, &Rotation::identity()) < 1e-9)
            {
                rotations
                    .retain(|r| crate::pose::angular_distance(r, &Rotation::identity()) >= 1e-9);
                rotations.insert(0, Rotation::identity());
            } else {
                return Err(ModelError::InvalidSymmetry(
                    "discrete symmetry list must contain the identity".into(),
                ));
            }
        }
        Ok(Self::Discrete { rotations })
    }

    pub fn axis(axis: Vector3<f64>) -> Result<Self, ModelError> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(ModelError::InvalidSymmetry("axis must be nonzero".into()));
        }
        let a = axis / n;
        Ok(Self::Axis {
            axis: [a.x, a.y, a.z],
        })
    }

    /// `n`-fold rotations about `axis`.
    pub fn cyclic(axis: Vector3<f64>, n: usize) -> Self {
        let rotations = (0..n.max(1))
            .map(|k| Rotation::from_axis_angle(&axis, std::f64::consts::TAU * k as f64 / n as f64))
            .collect();
        Self::Discrete { rotations }
    }

    /// The 24 proper rotations of a cube centered at the origin.
    pub fn octahedral() -> Self {
        let mut rotations = vec![Rotation::identity()];
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for p in perms {
            for signs in 0..8u8 {
                let mut m = Matrix3::zeros();
                for (row, &col) in p.iter().enumerate() {
                    m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
                }
                if m.determinant() > 0.0 && m != Matrix3::identity() {
                    rotations.push(Rotation::from_matrix(&m));
                }
            }
        }
        Self::Discrete { rotations }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Self::Discrete { rotations } => {
                if rotations.contains(&Rotation::identity()) {
                    Ok(())
                } else {
                    Err(ModelError::InvalidSymmetry(
                        "discrete symmetry list must contain the identity".into(),
                    ))
                }
            }
            Self::Axis { axis } => {
                let n = Vector3::from(*axis).norm();
                if (n - 1.0).abs() < 1e-9 {
                    Ok(())
                } else {
                    Err(ModelError::InvalidSymmetry(format!("axis norm {n} != 1")))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }
}

/// Triangle mesh or point cloud in model coordinates (meters).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectModel {
    pub vertices: Vec<Vector3<f64>>,
    /// Empty for point clouds.
    pub triangles: Vec<[usize; 3]>,
    pub eval_points: Vec<Vector3<f64>>,
    pub diameter: f64,
    pub symmetry: SymmetrySpec,
}

/// Optional `<model>.json` next to a mesh file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSidecar {
    pub diameter_mode: DiameterMode,
    pub symmetry: SymmetrySpec,
    pub unit_scale: f64,
}

impl Default for ModelSidecar {
    fn default() -> Self {
        Self {
            diameter_mode: DiameterMode::MaxPairwise,
            symmetry: SymmetrySpec::None,
            unit_scale: 1.0,
        }
    }
}

impl ModelSidecar {
    /// Reads `path` with its extension replaced by `.json`, if that file exists.
    pub fn for_model(path: &Path) -> Result<Option<Self>, ModelError> {
        let side = path.with_extension("json");
        if !side.is_file() {
            return Ok(None);
        }
        let s = fs::read_to_string(side)?;
        let car: Self = serde_json::from_str(&s)?;
        car.symmetry.validate()?;
        Ok(Some(car))
    }
}

impl ObjectModel {
    pub fn from_mesh(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            ..Default::default()
        }
    }

    pub fn is_point_cloud(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Axis-aligned cube of side `side` centered at the origin (12 triangles).
    pub fn cube(side: f64) -> Self {
        let h = side / 2.0;
        let vertices = (0..8)
            .map(|i| {
                Vector3::new(
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self::from_mesh(vertices, triangles)
    }

    /// Latitude/longitude sphere of radius `radius` centered at the origin.
    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Self {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![Vector3::new(0.0, 0.0, radius)];
        for i in 1..stacks {
            let th = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let ph = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push(
                    radius * Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()),
                );
            }
        }
        vertices.push(Vector3::new(0.0, 0.0, -radius));
        let south = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
            triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b, c, d) = (
                    ring(i, j),
                    ring(i, j + 1),
                    ring(i + 1, j),
                    ring(i + 1, j + 1),
                );
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        Self::from_mesh(vertices, triangles)
    }

    /// Point cloud of `n` points on a circle of `radius` in the model x-y plane.
    pub fn ring(radius: f64, n: usize) -> Self {
        let vertices = (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                Vector3::new(radius * a.cos(), radius * a.sin(), 0.0)
            })
            .collect();
        Self::from_mesh(vertices, Vec::new())
    }

    pub fn with_symmetry(mut self, symmetry: SymmetrySpec) -> Self {
        self.symmetry = symmetry;
        self
    }

    /// Uses the vertices themselves as evaluation points.
    pub fn with_vertex_eval_points(mut self) -> Self {
        self.eval_points = self.vertices.clone();
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in self.vertices.iter_mut().chain(self.eval_points.iter_mut()) {
            *v *= s;
        }
        self.diameter *= s;
        self
    }

    /// Samples `n` evaluation points: area-weighted on the surface for meshes,
    /// uniformly among vertices for point clouds. Deterministic per seed, and
    /// the first `k` points do not depend on `n`.
    pub fn sample_eval_points(mut self, n: usize, seed: u64) -> Result<Self, ModelError> {
        if self.vertices.is_empty() {
            return Err(ModelError::EmptyModel);
        }
        let n = n.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i]);
            total += 0.5 * (b - a).cross(&(c - a)).norm();
            cumulative.push(total);
        }
        self.eval_points = if total > 0.0 {
            (0..n)
                .map(|_| {
                    let pick: f64 = rng.random::<f64>() * total;
                    let u: f64 = rng.random();
                    let v: f64 = rng.random();
                    let idx = cumulative
                        .partition_point(|c| *c <= pick)
                        .min(self.triangles.len() - 1);
                    let [a, b, c] = self.triangles[idx].map(|i| self.vertices[i]);
                    let r = u.sqrt();
                    a * (1.0 - r) + b * (r * (1.0 - v)) + c * (r * v)
                })
                .collect()
        } else {
            (0..n)
                .map(|_| self.vertices[rng.random_range(0..self.vertices.len())])
                .collect()
        };
        Ok(self)
    }

    /// Sets [`ObjectModel::diameter`] using the given convention.
    pub fn with_diameter(mut self, mode: DiameterMode) -> Self {
        self.diameter = match mode {
            DiameterMode::MaxPairwise => compute_diameter(&self),
            DiameterMode::Extents => extents_diameter(&self),
        };
        self
    }

    /// Model-frame bounding box `(min, max)` over vertices and evaluation points.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut it = self.vertices.iter().chain(self.eval_points.iter());
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    /// Evaluation points, or vertices when none were sampled.
    pub fn points(&self) -> &[Vector3<f64>] {
        if self.eval_points.is_empty() {
            &self.vertices
        } else {
            &self.eval_points
        }
    }

    pub fn write_off(&self, path: &Path) -> Result<(), ModelError> {
        use std::fmt::Write as _;
        let mut s = format!("OFF\n{} {} 0\n", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        fs::write(path, s)?;
        Ok(())
    }
}

/// Exact maximum pairwise distance over evaluation points and vertices.
pub fn compute_diameter(model: &ObjectModel) -> f64 {
    compute_diameter_with(model, Exec::default())
}

pub fn compute_diameter_with(model: &ObjectModel, exec: Exec) -> f64 {
    let pts: Vec<Vector3<f64>> = model
        .eval_points
        .iter()
        .chain(model.vertices.iter())
        .copied()
        .collect();
    let best = parallel::max_range(exec, pts.len(), |i| {
        let p = pts[i];
        pts[i + 1..]
            .iter()
            .map(|q| (p - q).norm_squared())
            .fold(0.0, f64::max)
    });
    best.unwrap_or(0.0).sqrt()
}

/// Bounding-box diagonal.
pub fn extents_diameter(model: &ObjectModel) -> f64 {
    model
        .bounds()
        .map(|(lo, hi)| (hi - lo).norm())
        .unwrap_or(0.0)
}

/// Loads a mesh, scaling coordinates by `unit_scale`. Evaluation points and
/// the diameter are left unset.
pub fn load_model(
    path: &Path,
    format: Option<MeshFormat>,
    unit_scale: f64,
) -> Result<ObjectModel, ModelError> {
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let bytes = fs::read(path)?;
    let text = match format {
        MeshFormat::Ply => {
            // binary PLY bodies are not UTF-8; inspect the header first
            let head_end = bytes
                .windows(10)
                .position(|w| w == b"end_header")
                .unwrap_or(bytes.len().min(4096));
            let head = String::from_utf8_lossy(&bytes[..head_end]);
            if head.contains("binary_little_endian") || head.contains("binary_big_endian") {
                return Err(ModelError::UnsupportedFormat("binary PLY".into()));
            }
            String::from_utf8(bytes).map_err(|_| parse_err(1, "file is not valid text"))?
        }
        MeshFormat::Off => {
            String::from_utf8(bytes).map_err(|_| parse_err(1, "file is not valid text"))?
        }
    };
    let mut model = match format {
        MeshFormat::Off => parse_off(&text)?,
        MeshFormat::Ply => parse_ply(&text)?,
    };
    if unit_scale != 1.0 {
        for v in &mut model.vertices {
            *v *= unit_scale;
        }
    }
    Ok(model)
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_nums<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>, ModelError> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| parse_err(line, format!("bad number `{t}`")))
        })
        .collect()
}

fn fan(line: usize, idx: &[usize], nv: usize, out: &mut Vec<[usize; 3]>) -> Result<(), ModelError> {
    if idx.len() < 3 {
        return Err(parse_err(line, "face with fewer than 3 vertices"));
    }
    if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
        return Err(parse_err(line, format!("vertex index {bad} out of range")));
    }
    for k in 1..idx.len() - 1 {
        out.push([idx[0], idx[k], idx[k + 1]]);
    }
    Ok(())
}

pub fn parse_off(text: &str) -> Result<ObjectModel, ModelError> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    // "OFF" may share its line with the counts
    let counts_str = match first.strip_prefix("OFF") {
        Some(rest) if rest.trim().is_empty() => {
            let (_, l) = lines
                .next()
                .ok_or_else(|| parse_err(ln + 1, "missing counts"))?;
            l
        }
        Some(rest) => rest,
        None => return Err(parse_err(ln, "missing OFF header")),
    };
    let counts: Vec<usize> = parse_nums(ln, counts_str)?;
    if counts.len() < 2 {
        return Err(parse_err(ln, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    let mut last = ln;
    for _ in 0..nv {
        let (l, s) = lines
            .next()
            .ok_or_else(|| parse_err(last + 1, "unexpected end of file in vertex list"))?;
        last = l;
        let xs: Vec<f64> = parse_nums(l, s)?;
        if xs.len() < 3 {
            return Err(parse_err(l, "vertex needs 3 coordinates"));
        }
        vertices.push(Vector3::new(xs[0], xs[1], xs[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = lines
            .next()
            .ok_or_else(|| parse_err(last + 1, "unexpected end of file in face list"))?;
        last = l;
        let xs: Vec<usize> = s
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| parse_err(l, format!("bad index `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        let k = *xs.first().ok_or_else(|| parse_err(l, "empty face"))?;
        if xs.len() < k + 1 {
            return Err(parse_err(l, "face shorter than its vertex count"));
        }
        fan(l, &xs[1..=k], nv, &mut triangles)?;
    }
    Ok(ObjectModel::from_mesh(vertices, triangles))
}

pub fn parse_ply(text: &str) -> Result<ObjectModel, ModelError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing `ply` magic")),
    }
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ln = 1;
    loop {
        let (l, s) = lines
            .next()
            .ok_or_else(|| parse_err(ln + 1, "unterminated header"))?;
        ln = l;
        let toks: Vec<&str> = s.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(ModelError::UnsupportedFormat(format!("PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(l, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", .., name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(l, "property before element"))?
                .props
                .push(name.to_string()),
            _ => return Err(parse_err(l, format!("unrecognized header line `{s}`"))),
        }
    }
    let mut body = lines.filter(|(_, s)| !s.is_empty());
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut nv = 0;
    for el in &elements {
        for _ in 0..el.count {
            let (l, s) = body.next().ok_or_else(|| {
                parse_err(ln + 1, format!("unexpected end of file in {}", el.name))
            })?;
            ln = l;
            match el.name.as_str() {
                "vertex" => {
                    let xs: Vec<f64> = parse_nums(l, s)?;
                    let get = |n: &str| {
                        el.props
                            .iter()
                            .position(|p| p == n)
                            .and_then(|i| xs.get(i).copied())
                            .ok_or_else(|| parse_err(l, format!("vertex missing `{n}`")))
                    };
                    vertices.push(Vector3::new(get("x")?, get("y")?, get("z")?));
                    nv = vertices.len();
                }
                "face" => {
                    let xs: Vec<usize> = parse_nums(l, s)?;
                    let k = *xs.first().ok_or_else(|| parse_err(l, "empty face"))?;
                    if xs.len() < k + 1 {
                        return Err(parse_err(l, "face shorter than its vertex count"));
                    }
                    fan(l, &xs[1..=k], nv, &mut triangles)?;
                }
                _ => {}
            }
        }
    }
    Ok(ObjectModel::from_mesh(vertices, triangles))
}
