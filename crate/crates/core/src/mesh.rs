//! Triangle meshes over a shared topology, OBJ I/O, geometric error measures
//! and the mesh-level regularizers (smoothness, mirror symmetry, residual).
//!
//! Vertices are stored flattened as `[x0, y0, z0, x1, y1, z1, ...]`, the same
//! layout the model basis uses, so a mesh can be fed to the model without a
//! copy.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Result, SfmError};

/// A triangle (0-based vertex indices).
pub type Face = [u32; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<f64>,
    faces: Option<Vec<Face>>,
}

impl Mesh {
    /// Build a mesh, checking the flattened layout, face indices and finiteness.
    pub fn new(vertices: Vec<f64>, faces: Option<Vec<Face>>) -> Result<Self> {
        if vertices.len() % 3 != 0 {
            return Err(SfmError::InvalidMesh(format!(
                "coordinate count {} is not a multiple of 3",
                vertices.len()
            )));
        }
        if let Some(k) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(SfmError::InvalidMesh(format!(
                "non-finite coordinate at vertex {}",
                k / 3
            )));
        }
        let n = vertices.len() / 3;
        if let Some(faces) = &faces {
            for (fi, face) in faces.iter().enumerate() {
                if let Some(&bad) = face.iter().find(|&&i| i as usize >= n) {
                    return Err(SfmError::InvalidMesh(format!(
                        "face {fi} references vertex {bad}, mesh has {n} vertices"
                    )));
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn faces(&self) -> Option<&[Face]> {
        self.faces.as_deref()
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [self.vertices[3 * i], self.vertices[3 * i + 1], self.vertices[3 * i + 2]]
    }

    pub fn into_vertices(self) -> Vec<f64> {
        self.vertices
    }

    /// Same topology, new coordinates.
    pub fn with_vertices(&self, vertices: Vec<f64>) -> Result<Self> {
        Self::new(vertices, self.faces.clone())
    }

    fn require_same_topology(&self, other: &Mesh, what: &'static str) -> Result<()> {
        if self.vertex_count() != other.vertex_count() {
            return Err(SfmError::DimensionMismatch {
                what,
                expected: self.vertex_count(),
                actual: other.vertex_count(),
            });
        }
        Ok(())
    }
}

/// Coordinate negated by the mirror reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    #[default]
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = SfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(SfmError::InvalidConfig(format!("unknown axis '{other}'"))),
        }
    }
}

/// Left/right vertex correspondence plus the reflection axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryMap {
    mirror_index: Vec<usize>,
    axis: Axis,
}

impl SymmetryMap {
    /// `mirror_index` must be an involution on `0..len`.
    pub fn new(mirror_index: Vec<usize>, axis: Axis) -> Result<Self> {
        let n = mirror_index.len();
        for (i, &j) in mirror_index.iter().enumerate() {
            if j >= n {
                return Err(SfmError::InvalidConfig(format!(
                    "mirror index {j} of vertex {i} out of range ({n} vertices)"
                )));
            }
            if mirror_index[j] != i {
                return Err(SfmError::InvalidConfig(format!(
                    "mirror map is not an involution: {i} -> {j} -> {}",
                    mirror_index[j]
                )));
            }
        }
        Ok(Self { mirror_index, axis })
    }

    pub fn mirror_index(&self) -> &[usize] {
        &self.mirror_index
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.mirror_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mirror_index.is_empty()
    }

    /// Reflected geometry: vertex `i` takes the position of its partner with
    /// the axis coordinate negated.
    pub fn flip(&self, mesh: &Mesh) -> Result<Mesh> {
        if mesh.vertex_count() != self.len() {
            return Err(SfmError::DimensionMismatch {
                what: "symmetry map size",
                expected: mesh.vertex_count(),
                actual: self.len(),
            });
        }
        let a = self.axis.index();
        let v = mesh.vertices();
        let mut out = vec![0.0; v.len()];
        for (i, &j) in self.mirror_index.iter().enumerate() {
            for c in 0..3 {
                let val = v[3 * j + c];
                out[3 * i + c] = if c == a { -val } else { val };
            }
        }
        mesh.with_vertices(out)
    }

    /// Reads the `axis=<x|y|z>` preamble followed by an `index,mirror_index` CSV.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SfmError::io(path, e))?;
        let parse_err = |line: usize, message: String| SfmError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty symmetry file".into()))?;
        let axis = first
            .trim()
            .strip_prefix("axis=")
            .ok_or_else(|| parse_err(1, format!("expected 'axis=x|y|z', got '{first}'")))?
            .parse::<Axis>()
            .map_err(|e| parse_err(1, e.to_string()))?;

        let body_start = first.len() + 1;
        let body = text.get(body_start..).unwrap_or("");
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let headers = reader.headers().map_err(|e| parse_err(2, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "mirror_index"] {
            return Err(parse_err(2, "expected header 'index,mirror_index'".into()));
        }
        let mut pairs = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let line = k + 3;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            let field = |c: usize| -> Result<usize> {
                record
                    .get(c)
                    .unwrap_or("")
                    .parse::<usize>()
                    .map_err(|e| parse_err(line, e.to_string()))
            };
            pairs.push((field(0)?, field(1)?));
        }
        let n = pairs.len();
        let mut mirror = vec![usize::MAX; n];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || mirror[i] != usize::MAX {
                return Err(parse_err(k + 3, format!("duplicate or out-of-range index {i}")));
            }
            mirror[i] = j;
        }
        Self::new(mirror, axis)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("axis={}\nindex,mirror_index\n", self.axis.name());
        for (i, j) in self.mirror_index.iter().enumerate() {
            let _ = writeln!(out, "{i},{j}");
        }
        fs::write(path, out).map_err(|e| SfmError::io(path, e))
    }
}

/// Per-vertex neighbor lists, symmetric and free of self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn new(adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                if j >= n {
                    return Err(SfmError::InvalidConfig(format!(
                        "neighbor {j} of vertex {i} out of range"
                    )));
                }
                if j == i {
                    return Err(SfmError::InvalidConfig(format!("self-loop at vertex {i}")));
                }
                if !adjacency[j].contains(&i) {
                    return Err(SfmError::InvalidConfig(format!(
                        "asymmetric adjacency: {i} -> {j} without {j} -> {i}"
                    )));
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Edges of every triangle, deduplicated and sorted per vertex.
    pub fn from_faces(vertex_count: usize, faces: &[Face]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); vertex_count];
        for face in faces {
            for k in 0..3 {
                let a = face[k] as usize;
                let b = face[(k + 1) % 3] as usize;
                if a >= vertex_count || b >= vertex_count {
                    return Err(SfmError::InvalidMesh(format!(
                        "face index out of range for {vertex_count} vertices"
                    )));
                }
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Self { adjacency })
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

/// Parses an ASCII OBJ file. Only `v` and `f` records are interpreted.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| SfmError::io(path, e))?;
    parse_obj(BufReader::new(file), path)
}

/// Parses OBJ text from any reader; `origin` is used in error messages.
pub fn parse_obj(reader: impl BufRead, origin: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| SfmError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut polygons: Vec<(usize, Vec<i64>)> = Vec::new();

    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| SfmError::io(origin, e))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 {
                    return Err(err(lineno, "vertex record needs 3 coordinates".into()));
                }
                for c in &coords[..3] {
                    let value: f64 = c
                        .parse()
                        .map_err(|_| err(lineno, format!("invalid coordinate '{c}'")))?;
                    if !value.is_finite() {
                        return Err(err(lineno, format!("non-finite coordinate '{c}'")));
                    }
                    vertices.push(value);
                }
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>()
                            .map_err(|_| err(lineno, format!("invalid face index '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                polygons.push((lineno, idx));
            }
            _ => {}
        }
    }

    if vertices.is_empty() {
        return Err(err(0, "no vertices".into()));
    }
    let n = (vertices.len() / 3) as i64;
    let mut faces = Vec::new();
    for (lineno, idx) in &polygons {
        let resolved = idx
            .iter()
            .map(|&i| {
                let zero_based = if i > 0 { i - 1 } else { n + i };
                if i == 0 || zero_based < 0 || zero_based >= n {
                    Err(err(*lineno, format!("face index {i} out of range (1..={n})")))
                } else {
                    Ok(zero_based as u32)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        match resolved.len() {
            3 => faces.push([resolved[0], resolved[1], resolved[2]]),
            4 => {
                faces.push([resolved[0], resolved[1], resolved[2]]);
                faces.push([resolved[0], resolved[2], resolved[3]]);
            }
            other => {
                return Err(err(
                    *lineno,
                    format!("only triangles and quads are supported, got {other} indices"),
                ))
            }
        }
    }
    let faces = if polygons.is_empty() { None } else { Some(faces) };
    Mesh::new(vertices, faces)
}

/// OBJ text for a mesh; coordinates use the shortest round-trip decimal form.
pub fn to_obj_string(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 12);
    for v in mesh.vertices.chunks_exact(3) {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    if let Some(faces) = mesh.faces() {
        for f in faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
    }
    out
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_obj_string(mesh)).map_err(|e| SfmError::io(path, e))
}

/// `sqrt(mean_i ||a_i - b_i||^2)` over corresponding vertices.
pub fn rmse_point_to_point(a: &Mesh, b: &Mesh) -> Result<f64> {
    a.require_same_topology(b, "vertex count")?;
    let sum: f64 = a.vertices.iter().zip(&b.vertices).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.vertex_count() as f64).sqrt())
}

/// Area-weighted unit vertex normals. A vertex whose accumulated normal
/// vanishes (isolated, or only degenerate incident faces) is an error.
pub fn vertex_normals(mesh: &Mesh) -> Result<Vec<[f64; 3]>> {
    let faces = mesh
        .faces()
        .ok_or_else(|| SfmError::InvalidMesh("vertex normals need faces".into()))?;
    let mut acc = vec![[0.0f64; 3]; mesh.vertex_count()];
    for f in faces {
        let p0 = mesh.vertex(f[0] as usize);
        let p1 = mesh.vertex(f[1] as usize);
        let p2 = mesh.vertex(f[2] as usize);
        let e1 = sub(p1, p0);
        let e2 = sub(p2, p0);
        // |e1 x e2| = 2 * area, so summing raw cross products weights by area.
        let n = cross(e1, e2);
        for &vi in f {
            let a = &mut acc[vi as usize];
            a[0] += n[0];
            a[1] += n[1];
            a[2] += n[2];
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len <= f64::EPSILON * 16.0 {
                Err(SfmError::Degenerate(format!("zero-area normal at vertex {i}")))
            } else {
                Ok([n[0] / len, n[1] / len, n[2] / len])
            }
        })
        .collect()
}

/// RMSE of displacements projected on the target's vertex normals.
/// Correspondence is index-wise.
pub fn rmse_point_to_plane(source: &Mesh, target: &Mesh) -> Result<f64> {
    source.require_same_topology(target, "vertex count")?;
    let normals = vertex_normals(target)?;
    let sum: f64 = normals
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let d = sub(source.vertex(i), target.vertex(i));
            let proj = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
            proj * proj
        })
        .sum();
    Ok((sum / source.vertex_count() as f64).sqrt())
}

/// Mean over vertices of the L2 norm of the umbrella Laplacian residual.
pub fn smooth_loss(mesh: &Mesh, graph: &NeighborGraph) -> Result<f64> {
    let n = mesh.vertex_count();
    if graph.len() != n {
        return Err(SfmError::DimensionMismatch {
            what: "neighbor graph size",
            expected: n,
            actual: graph.len(),
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            return Err(SfmError::Degenerate(format!("isolated vertex {i}")));
        }
        let inv = 1.0 / nbrs.len() as f64;
        let mut avg = [0.0; 3];
        for &j in nbrs {
            let p = mesh.vertex(j);
            for c in 0..3 {
                avg[c] += p[c];
            }
        }
        let p = mesh.vertex(i);
        let r = [p[0] - avg[0] * inv, p[1] - avg[1] * inv, p[2] - avg[2] * inv];
        total += (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    }
    Ok(total / n as f64)
}

/// `||G - flip(G)||_1` over all coordinates.
pub fn symmetry_loss(mesh: &Mesh, sym: &SymmetryMap) -> Result<f64> {
    let flipped = sym.flip(mesh)?;
    Ok(l1_distance(mesh.vertices(), flipped.vertices()))
}

/// `||G - mean||_1` over all coordinates.
pub fn residual_loss(mesh: &Mesh, mean: &Mesh) -> Result<f64> {
    mesh.require_same_topology(mean, "vertex count")?;
    Ok(l1_distance(mesh.vertices(), mean.vertices()))
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Regular `rows x cols` grid in the z = 0 plane with `spacing`, triangulated
/// into two triangles per cell.
pub fn grid_mesh(rows: usize, cols: usize, spacing: f64) -> Result<Mesh> {
    let mut vertices = Vec::with_capacity(rows * cols * 3);
    for r in 0..rows {
        for c in 0..cols {
            vertices.extend_from_slice(&[c as f64 * spacing, r as f64 * spacing, 0.0]);
        }
    }
    Mesh::new(vertices, Some(grid_faces(rows, cols)))
}

pub(crate) fn grid_faces(rows: usize, cols: usize) -> Vec<Face> {
    let mut faces = Vec::with_capacity(2 * rows.saturating_sub(1) * cols.saturating_sub(1));
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols.saturating_sub(1) {
            let i = (r * cols + c) as u32;
            let right = i + 1;
            let down = i + cols as u32;
            let diag = down + 1;
            faces.push([i, right, diag]);
            faces.push([i, diag, down]);
        }
    }
    faces
}
