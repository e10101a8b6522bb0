use std::f64::consts::{PI, TAU};

use super::{cross3, dot3, sub3, Bone, JointRegressor, Rig, TemplateMesh, TemplateParts, VertexIuv};
use crate::{Error, Result};

/// Ellipsoidal UV sphere with `rings * (around + 1) + 2` vertices.
///
/// Latitude bands are split evenly into `parts` parts; each part's chart spans
/// `u` around and `v` down its own band. One joint per ring, rooted at the
/// middle ring, and a single rigid bone.
pub fn blob(rings: usize, around: usize, parts: u8) -> Result<TemplateMesh> {
    if rings < 2 || around < 3 || parts == 0 || parts as usize > rings {
        return Err(Error::InvalidMesh(format!(
            "blob needs rings >= 2, around >= 3, 1 <= parts <= rings; got {rings}, {around}, {parts}"
        )));
    }
    let radii = [0.3, 0.5, 0.25];
    let part_of = |r: usize| (r * parts as usize / rings) as u8 + 1;
    let band = |p: u8| {
        let rs: Vec<usize> = (0..rings).filter(|&r| part_of(r) == p).collect();
        (rs[0], rs.len())
    };

    let mut vertices = Vec::new();
    let mut iuv = Vec::new();
    let mut ring_idx = Vec::new();
    for r in 0..rings {
        let theta = PI * (r + 1) as f64 / (rings + 1) as f64;
        let p = part_of(r);
        let (r0, n) = band(p);
        let local = (r - r0 + 1) as f64 / (n + 1) as f64;
        let mut ring = Vec::new();
        for j in 0..=around {
            let phi = TAU * (j % around) as f64 / around as f64;
            vertices.push([
                radii[0] * theta.sin() * phi.cos(),
                radii[1] * theta.cos(),
                radii[2] * theta.sin() * phi.sin(),
            ]);
            iuv.push(VertexIuv::new(p, j as f64 / around as f64, local));
            ring.push(vertices.len() - 1);
        }
        ring_idx.push(ring);
    }
    let top = vertices.len();
    vertices.push([0.0, radii[1], 0.0]);
    iuv.push(VertexIuv::new(1, 0.5, 0.0));
    let bottom = vertices.len();
    vertices.push([0.0, -radii[1], 0.0]);
    iuv.push(VertexIuv::new(parts, 0.5, 1.0));

    let mut faces = Vec::new();
    let mut push = |a: usize, b: usize, c: usize, v: &[[f64; 3]]| {
        let n = cross3(sub3(v[b], v[a]), sub3(v[c], v[a]));
        let centroid = [0, 1, 2].map(|k| (v[a][k] + v[b][k] + v[c][k]) / 3.0);
        if dot3(n, centroid) >= 0.0 {
            faces.push([a, b, c]);
        } else {
            faces.push([a, c, b]);
        }
    };
    for j in 0..around {
        push(top, ring_idx[0][j], ring_idx[0][j + 1], &vertices);
        push(bottom, ring_idx[rings - 1][j], ring_idx[rings - 1][j + 1], &vertices);
    }
    for r in 0..rings - 1 {
        let (lo, hi) = (&ring_idx[r], &ring_idx[r + 1]);
        for j in 0..around {
            push(lo[j], lo[j + 1], hi[j + 1], &vertices);
            push(lo[j], hi[j + 1], hi[j], &vertices);
        }
    }

    let groups: Vec<Vec<usize>> = ring_idx.iter().map(|r| r[..around].to_vec()).collect();
    let n = vertices.len();
    TemplateMesh::new(TemplateParts {
        vertices,
        faces,
        vertex_iuv: iuv,
        part_count: parts,
        regressor: JointRegressor::from_groups(n, &groups)?,
        joint_names: (0..rings).map(|r| format!("ring{r}")).collect(),
        root_joint: rings / 2,
        rig: Some(Rig {
            bones: vec![Bone {
                name: "body".into(),
                parent: None,
                pivot: [0.0; 3],
            }],
            skin: vec![vec![(0, 1.0)]; n],
        }),
    })
}
