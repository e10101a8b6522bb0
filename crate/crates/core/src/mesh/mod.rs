//! Template topology, per-vertex surface coordinates, and mesh geometry.

mod capsule;
mod obj;
mod sphere;
mod template_file;

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::tensor::{CsrPattern, Tensor};
use crate::{Error, Result};

pub use capsule::{capsule_man, CapsuleManConfig};
pub use obj::{export_obj, read_obj, write_obj, ObjMesh};
pub use sphere::blob;
pub use template_file::TemplateFile;

/// Surface coordinate of a template vertex: part id in `1..=P` and `(u, v)` in `[0, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexIuv {
    pub part: u8,
    pub u: f64,
    pub v: f64,
}

impl VertexIuv {
    pub fn new(part: u8, u: f64, v: f64) -> Self {
        VertexIuv { part, u, v }
    }

    pub fn uv_distance(&self, u: f64, v: f64) -> f64 {
        ((self.u - u).powi(2) + (self.v - v).powi(2)).sqrt()
    }
}

/// Row-stochastic sparse map from mesh vertices to joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRegressor {
    pub n_joints: usize,
    pub n_vertices: usize,
    /// `(joint, vertex, weight)` triplets.
    pub triplets: Vec<(usize, usize, f64)>,
}

impl JointRegressor {
    pub fn new(n_joints: usize, n_vertices: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut sums = vec![0.0; n_joints];
        for &(j, v, w) in &triplets {
            if j >= n_joints || v >= n_vertices {
                return Err(Error::InvalidMesh(format!(
                    "regressor entry ({j}, {v}) outside {n_joints}x{n_vertices}"
                )));
            }
            if !(w >= 0.0) {
                return Err(Error::InvalidMesh(format!("regressor weight {w} is negative")));
            }
            sums[j] += w;
        }
        if let Some((j, s)) = sums.iter().enumerate().find(|(_, s)| (**s - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidMesh(format!("regressor row {j} sums to {s}, expected 1")));
        }
        Ok(JointRegressor {
            n_joints,
            n_vertices,
            triplets,
        })
    }

    /// Uniform average over each vertex group.
    pub fn from_groups(n_vertices: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let mut t = Vec::new();
        for (j, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidMesh(format!("joint {j} has no vertices")));
            }
            let w = 1.0 / g.len() as f64;
            t.extend(g.iter().map(|&v| (j, v, w)));
        }
        Self::new(groups.len(), n_vertices, t)
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_vertices]; self.n_joints];
        for &(j, v, w) in &self.triplets {
            d[j][v] += w;
        }
        d
    }

    pub fn pattern(&self) -> (Arc<CsrPattern>, Vec<f64>) {
        let mut rows = vec![Vec::new(); self.n_joints];
        let mut vals = vec![Vec::new(); self.n_joints];
        for &(j, v, w) in &self.triplets {
            rows[j].push(v);
            vals[j].push(w);
        }
        let p = CsrPattern::from_rows(self.n_vertices, &rows).expect("validated regressor");
        (Arc::new(p), vals.concat())
    }

    /// `J = W M` on plain coordinates.
    pub fn apply(&self, vertices: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        if vertices.len() != self.n_vertices {
            return Err(Error::Shape(format!(
                "regressor expects {} vertices, mesh has {}",
                self.n_vertices,
                vertices.len()
            )));
        }
        let mut j = vec![[0.0; 3]; self.n_joints];
        for &(r, v, w) in &self.triplets {
            for c in 0..3 {
                j[r][c] += w * vertices[v][c];
            }
        }
        Ok(j)
    }

    /// `J = W M` on a differentiable `[N_v, 3]` tensor.
    pub fn apply_tensor(&self, m: &Tensor) -> Result<Tensor> {
        if m.shape() != [self.n_vertices, 3] {
            return Err(Error::Shape(format!(
                "regressor expects [{}, 3], got {:?}",
                self.n_vertices,
                m.shape()
            )));
        }
        let (p, vals) = self.pattern();
        Ok(Tensor::spmm(&Tensor::vector(vals), &p, m)?)
    }
}

/// Skinning rig used to articulate a template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub bones: Vec<Bone>,
    /// Per vertex `(bone, weight)` pairs summing to 1.
    pub skin: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    pub pivot: [f64; 3],
}

/// Rest-pose topology with surface coordinates, thresholds, and joint regressor.
#[derive(Clone, Debug)]
pub struct TemplateMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    vertex_iuv: Vec<VertexIuv>,
    delta: Vec<f64>,
    part_count: u8,
    regressor: JointRegressor,
    joint_names: Vec<String>,
    root_joint: usize,
    rig: Option<Rig>,
    // derived
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    face_part: Vec<u8>,
}

/// Everything needed to build a template except the derived tables.
#[derive(Clone, Debug)]
pub struct TemplateParts {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_iuv: Vec<VertexIuv>,
    pub part_count: u8,
    pub regressor: JointRegressor,
    pub joint_names: Vec<String>,
    pub root_joint: usize,
    pub rig: Option<Rig>,
}

impl TemplateMesh {
    /// Validates topology and computes the per-vertex thresholds.
    pub fn new(parts: TemplateParts) -> Result<Self> {
        Self::with_delta(parts, None)
    }

    /// As [`TemplateMesh::new`] but with externally supplied thresholds.
    pub fn with_delta(parts: TemplateParts, delta: Option<Vec<f64>>) -> Result<Self> {
        let n = parts.vertices.len();
        if parts.vertex_iuv.len() != n {
            return Err(Error::InvalidMesh(format!("{} iuv entries for {n} vertices", parts.vertex_iuv.len())));
        }
        for (k, f) in parts.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!("face {k} {f:?} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {k} {f:?} is degenerate")));
            }
        }
        for (k, iuv) in parts.vertex_iuv.iter().enumerate() {
            if iuv.part == 0 || iuv.part > parts.part_count {
                return Err(Error::InvalidMesh(format!(
                    "vertex {k} part {} outside 1..={}",
                    iuv.part, parts.part_count
                )));
            }
            if !(0.0..=1.0).contains(&iuv.u) || !(0.0..=1.0).contains(&iuv.v) {
                return Err(Error::InvalidMesh(format!("vertex {k} uv ({}, {}) outside [0,1]", iuv.u, iuv.v)));
            }
        }
        if parts.regressor.n_vertices != n {
            return Err(Error::InvalidMesh("regressor vertex count differs from mesh".into()));
        }
        if parts.root_joint >= parts.regressor.n_joints {
            return Err(Error::InvalidMesh("root joint out of range".into()));
        }
        if let Some(rig) = &parts.rig {
            if rig.skin.len() != n {
                return Err(Error::InvalidMesh("rig skin length differs from vertex count".into()));
            }
        }

        let neighbors = neighbors_from_faces(n, &parts.faces);
        if n == 0 || !is_connected(&neighbors) {
            return Err(Error::InvalidMesh("mesh graph is empty or disconnected".into()));
        }
        let mut edges = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            edges.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        let face_part = parts
            .faces
            .iter()
            .map(|f| {
                let p = parts.vertex_iuv[f[0]].part;
                if f.iter().all(|&i| parts.vertex_iuv[i].part == p) {
                    p
                } else {
                    0
                }
            })
            .collect();

        let delta = match delta {
            Some(d) => {
                if d.len() != n || d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidMesh("delta must hold one positive value per vertex".into()));
                }
                d
            }
            None => compute_delta(&neighbors, &parts.vertex_iuv)?.delta,
        };

        Ok(TemplateMesh {
            vertices: parts.vertices,
            faces: parts.faces,
            vertex_iuv: parts.vertex_iuv,
            delta,
            part_count: parts.part_count,
            regressor: parts.regressor,
            joint_names: parts.joint_names,
            root_joint: parts.root_joint,
            rig: parts.rig,
            neighbors,
            edges,
            face_part,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_iuv(&self) -> &[VertexIuv] {
        &self.vertex_iuv
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn part_count(&self) -> u8 {
        self.part_count
    }

    pub fn regressor(&self) -> &JointRegressor {
        &self.regressor
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn root_joint(&self) -> usize {
        self.root_joint
    }

    pub fn rig(&self) -> Option<&Rig> {
        self.rig.as_ref()
    }

    /// Sorted 1-ring of every vertex.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Unique undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Part label of each face; 0 for faces spanning several parts.
    pub fn face_part(&self) -> &[u8] {
        &self.face_part
    }

    pub fn rest_mesh(&self) -> Mesh {
        Mesh::new(self.vertices.clone())
    }

    /// Sparsity of `A + I` with each row's columns in ascending order.
    pub fn adjacency_pattern(&self) -> Arc<CsrPattern> {
        let rows: Vec<Vec<usize>> = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let mut r = nb.clone();
                r.push(i);
                r.sort_unstable();
                r
            })
            .collect();
        Arc::new(CsrPattern::from_rows(self.num_vertices(), &rows).expect("valid neighbors"))
    }

    /// Parts that share at least one mesh edge.
    pub fn part_adjacency(&self) -> Vec<BTreeSet<u8>> {
        let mut adj = vec![BTreeSet::new(); self.part_count as usize + 1];
        for &(i, j) in &self.edges {
            let (a, b) = (self.vertex_iuv[i].part, self.vertex_iuv[j].part);
            if a != b {
                adj[a as usize].insert(b);
                adj[b as usize].insert(a);
            }
        }
        adj
    }
}

fn neighbors_from_faces(n: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut sets = vec![BTreeSet::new(); n];
    for f in faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            sets[a].insert(b);
            sets[b].insert(a);
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; neighbors.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for &j in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == neighbors.len()
}

/// Posed vertex positions sharing a template's topology.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>) -> Self {
        Mesh { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.len(), 3], self.vertices.iter().flatten().copied().collect()).expect("n x 3")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != 3 {
            return Err(Error::Shape(format!("mesh tensor must be [N, 3], got {:?}", t.shape())));
        }
        Ok(Mesh::new(t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()))
    }

    pub fn check_template(&self, template: &TemplateMesh) -> Result<()> {
        if self.len() != template.num_vertices() {
            return Err(Error::Shape(format!(
                "mesh has {} vertices, template {}",
                self.len(),
                template.num_vertices()
            )));
        }
        Ok(())
    }
}

/// Kipf-normalized adjacency `D^-1/2 (A + I) D^-1/2` stored on the `A + I` pattern.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    pub pattern: Arc<CsrPattern>,
    pub values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.pattern.rows();
        let mut d = vec![vec![0.0; n]; n];
        for r in 0..n {
            for e in self.pattern.row(r) {
                d[r][self.pattern.col_idx()[e]] = self.values[e];
            }
        }
        d
    }
}

pub fn normalized_adjacency(template: &TemplateMesh) -> NormalizedAdjacency {
    kipf_normalize(template.adjacency_pattern())
}

/// Normalizes a self-looped pattern: entry `(i, j)` becomes `1 / sqrt(d_i d_j)`
/// where `d` counts stored entries per row.
pub fn kipf_normalize(pattern: Arc<CsrPattern>) -> NormalizedAdjacency {
    let deg: Vec<f64> = (0..pattern.rows()).map(|r| pattern.row(r).len() as f64).collect();
    let mut values = vec![0.0; pattern.nnz()];
    for r in 0..pattern.rows() {
        for e in pattern.row(r) {
            let c = pattern.col_idx()[e];
            values[e] = 1.0 / (deg[r] * deg[c]).sqrt();
        }
    }
    NormalizedAdjacency { pattern, values }
}

#[derive(Clone, Debug)]
pub struct DeltaResult {
    pub delta: Vec<f64>,
    /// Vertices that had no same-part neighbor at positive UV distance and
    /// received the median threshold instead.
    pub fallback: Vec<usize>,
}

/// Per-vertex threshold: UV distance to the closest same-part 1-ring neighbor.
pub fn compute_delta(neighbors: &[Vec<usize>], iuv: &[VertexIuv]) -> Result<DeltaResult> {
    let mut delta = vec![f64::NAN; iuv.len()];
    let mut fallback = Vec::new();
    for (k, nb) in neighbors.iter().enumerate() {
        let me = iuv[k];
        let best = nb
            .iter()
            .filter(|&&j| iuv[j].part == me.part)
            .map(|&j| me.uv_distance(iuv[j].u, iuv[j].v))
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            delta[k] = best;
        } else {
            fallback.push(k);
        }
    }
    if !fallback.is_empty() {
        let mut known: Vec<f64> = delta.iter().copied().filter(|d| !d.is_nan()).collect();
        if known.is_empty() {
            return Err(Error::InvalidMesh("no vertex has a same-part neighbor; delta undefined".into()));
        }
        known.sort_by(f64::total_cmp);
        let median = known[known.len() / 2];
        log::info!("delta: {} vertices without a same-part neighbor use the median {median}", fallback.len());
        for &k in &fallback {
            delta[k] = median;
        }
    }
    Ok(DeltaResult { delta, fallback })
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Minimum face area below which a face has no normal.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Unit normals `normalize((b - a) x (c - a))`; faces with area below
/// [`MIN_FACE_AREA`] get the zero vector.
pub fn face_normals(mesh: &Mesh, template: &TemplateMesh) -> Result<Vec<[f64; 3]>> {
    mesh.check_template(template)?;
    Ok(template
        .faces()
        .iter()
        .map(|f| {
            let v = &mesh.vertices;
            let n = cross3(sub3(v[f[1]], v[f[0]]), sub3(v[f[2]], v[f[0]]));
            let len = norm3(n);
            if 0.5 * len < MIN_FACE_AREA {
                [0.0; 3]
            } else {
                [n[0] / len, n[1] / len, n[2] / len]
            }
        })
        .collect())
}

pub fn face_area(v: &[[f64; 3]], f: [usize; 3]) -> f64 {
    0.5 * norm3(cross3(sub3(v[f[1]], v[f[0]]), sub3(v[f[2]], v[f[0]])))
}

/// `J = W M`.
pub fn regress_joints(w: &JointRegressor, mesh: &Mesh) -> Result<Vec<[f64; 3]>> {
    w.apply(&mesh.vertices)
}
