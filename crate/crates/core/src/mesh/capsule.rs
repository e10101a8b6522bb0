//! Procedural low-poly humanoid built from elliptic tubes.
//!
//! Twelve parts: chest, abdomen, neck, head, and two segments per limb. Each
//! part has its own cylindrical UV chart (`u` around, `v` along the axis) with
//! a duplicated seam column so the chart never wraps inside a face. Parts are
//! joined by bridge strips or cones whose faces span two parts; those faces
//! are rendered but carry no part label.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use super::{
    cross3, dot3, sub3, Bone, JointRegressor, Rig, TemplateMesh, TemplateParts, VertexIuv,
};
use crate::Result;

pub const CAPSULE_PARTS: u8 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapsuleManConfig {
    pub torso_around: usize,
    pub torso_rings: usize,
    pub head_around: usize,
    pub head_rings: usize,
    pub limb_around: usize,
    pub limb_rings: usize,
}

impl Default for CapsuleManConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CapsuleManConfig {
    /// About 400 vertices.
    pub fn desk() -> Self {
        CapsuleManConfig {
            torso_around: 12,
            torso_rings: 5,
            head_around: 8,
            head_rings: 4,
            limb_around: 6,
            limb_rings: 4,
        }
    }

    pub fn vertex_count(&self) -> usize {
        let torso = 2 * ((self.torso_around + 1) * self.torso_rings + 1);
        let neck = (self.head_around + 1) * 2;
        let head = (self.head_around + 1) * self.head_rings + 1;
        let limbs = 8 * (self.limb_around + 1) * self.limb_rings + 4;
        torso + neck + head + limbs
    }

    /// Resolution whose vertex count is closest to `target` (minimum about 110).
    pub fn for_vertex_count(target: usize) -> Self {
        let base = Self::desk();
        let scaled = |s: f64, v: usize, min: usize| ((v as f64 * s).round() as usize).max(min);
        (30..=400)
            .map(|i| {
                let s = i as f64 / 100.0;
                CapsuleManConfig {
                    torso_around: scaled(s, base.torso_around, 4),
                    torso_rings: scaled(s, base.torso_rings, 2),
                    head_around: scaled(s, base.head_around, 4),
                    head_rings: scaled(s, base.head_rings, 2),
                    limb_around: scaled(s, base.limb_around, 3),
                    limb_rings: scaled(s, base.limb_rings, 2),
                }
            })
            .min_by_key(|c| c.vertex_count().abs_diff(target))
            .unwrap()
    }
}

struct Tube {
    rings: Vec<Vec<usize>>,
    centers: Vec<[f64; 3]>,
    dir: [f64; 3],
    radius: f64,
}

impl Tube {
    fn first(&self) -> &[usize] {
        &self.rings[0]
    }

    fn last(&self) -> &[usize] {
        self.rings.last().unwrap()
    }

    /// Ring vertices without the seam duplicate.
    fn distinct(ring: &[usize]) -> Vec<usize> {
        ring[..ring.len() - 1].to_vec()
    }
}

struct TubeSpec {
    part: u8,
    bone: usize,
    start: [f64; 3],
    end: [f64; 3],
    /// Radius along the first and second cross-section axes.
    radii: (f64, f64),
    around: usize,
    rings: usize,
}

#[derive(Default)]
struct Builder {
    vertices: Vec<[f64; 3]>,
    iuv: Vec<VertexIuv>,
    faces: Vec<[usize; 3]>,
    skin: Vec<Vec<(usize, f64)>>,
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn axpy(a: [f64; 3], s: f64, d: [f64; 3]) -> [f64; 3] {
    [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]]
}

impl Builder {
    fn vertex(&mut self, p: [f64; 3], iuv: VertexIuv, bone: usize) -> usize {
        self.vertices.push(p);
        self.iuv.push(iuv);
        self.skin.push(vec![(bone, 1.0)]);
        self.vertices.len() - 1
    }

    /// Adds a face wound so its normal points away from `inside`.
    fn face(&mut self, a: usize, b: usize, c: usize, inside: [f64; 3]) {
        let v = &self.vertices;
        let n = cross3(sub3(v[b], v[a]), sub3(v[c], v[a]));
        let centroid = [
            (v[a][0] + v[b][0] + v[c][0]) / 3.0,
            (v[a][1] + v[b][1] + v[c][1]) / 3.0,
            (v[a][2] + v[b][2] + v[c][2]) / 3.0,
        ];
        if dot3(n, sub3(centroid, inside)) >= 0.0 {
            self.faces.push([a, b, c]);
        } else {
            self.faces.push([a, c, b]);
        }
    }

    fn strip(&mut self, lo: &[usize], hi: &[usize], inside: [f64; 3]) {
        for j in 0..lo.len() - 1 {
            self.face(lo[j], lo[j + 1], hi[j + 1], inside);
            self.face(lo[j], hi[j + 1], hi[j], inside);
        }
    }

    fn fan(&mut self, apex: usize, ring: &[usize], inside: [f64; 3]) {
        for j in 0..ring.len() - 1 {
            self.face(apex, ring[j], ring[j + 1], inside);
        }
    }

    fn tube(&mut self, s: &TubeSpec) -> Tube {
        let dir = normalize(sub3(s.end, s.start));
        // every axis lies in the z = 0 plane, so z is always a valid second axis
        let e2 = [0.0, 0.0, 1.0];
        let e1 = normalize(cross3(dir, e2));
        let mut rings = Vec::with_capacity(s.rings);
        let mut centers = Vec::with_capacity(s.rings);
        for r in 0..s.rings {
            let t = r as f64 / (s.rings - 1) as f64;
            let c = lerp3(s.start, s.end, t);
            let v = 0.1 + 0.8 * t;
            let mut ring = Vec::with_capacity(s.around + 1);
            for j in 0..=s.around {
                // seam on the back (-z) so it stays hidden in frontal views
                let theta = TAU * (j % s.around) as f64 / s.around as f64 - FRAC_PI_2;
                let p = axpy(axpy(c, s.radii.0 * theta.cos(), e1), s.radii.1 * theta.sin(), e2);
                let u = j as f64 / s.around as f64;
                ring.push(self.vertex(p, VertexIuv::new(s.part, u, v), s.bone));
            }
            rings.push(ring);
            centers.push(c);
        }
        for r in 0..s.rings - 1 {
            let inside = lerp3(centers[r], centers[r + 1], 0.5);
            let (lo, hi) = (rings[r].clone(), rings[r + 1].clone());
            self.strip(&lo, &hi, inside);
        }
        Tube {
            rings,
            centers,
            dir,
            radius: s.radii.0.min(s.radii.1),
        }
    }

    /// Closes the start (`at_end = false`) or end of a tube with a domed fan.
    fn cap(&mut self, tube: &Tube, part: u8, bone: usize, at_end: bool) -> usize {
        let h = 0.6 * tube.radius;
        let (ring, center, sign, v) = if at_end {
            (tube.last().to_vec(), *tube.centers.last().unwrap(), 1.0, 1.0)
        } else {
            (tube.first().to_vec(), tube.centers[0], -1.0, 0.0)
        };
        let apex = self.vertex(axpy(center, sign * h, tube.dir), VertexIuv::new(part, 0.5, v), bone);
        self.fan(apex, &ring, axpy(center, -sign * h, tube.dir));
        apex
    }

    fn nearest(&self, candidates: &[usize], p: [f64; 3]) -> usize {
        *candidates
            .iter()
            .min_by(|&&a, &&b| {
                let da = dot3(sub3(self.vertices[a], p), sub3(self.vertices[a], p));
                let db = dot3(sub3(self.vertices[b], p), sub3(self.vertices[b], p));
                da.total_cmp(&db)
            })
            .unwrap()
    }

    fn set_skin(&mut self, ring: &[usize], weights: &[(usize, f64)]) {
        for &i in ring {
            self.skin[i] = weights.to_vec();
        }
    }
}

struct LimbSpec {
    parts: (u8, u8),
    /// Torso point whose nearest vertex anchors the root cone.
    attach: [f64; 3],
    upper: ([f64; 3], [f64; 3]),
    lower: ([f64; 3], [f64; 3]),
    radii: (f64, f64),
    pivots: ([f64; 3], [f64; 3]),
    names: [&'static str; 4],
}

const TORSO: usize = 0;
const HEAD: usize = 1;

/// Builds the capsule humanoid in T-pose, pelvis at the origin, y up, facing +z.
pub fn capsule_man(cfg: &CapsuleManConfig) -> Result<TemplateMesh> {
    let mut b = Builder::default();
    let torso_r = (0.20, 0.12);

    let abdomen = b.tube(&TubeSpec {
        part: 2,
        bone: TORSO,
        start: [0.0, 0.0, 0.0],
        end: [0.0, 0.35, 0.0],
        radii: torso_r,
        around: cfg.torso_around,
        rings: cfg.torso_rings,
    });
    b.cap(&abdomen, 2, TORSO, false);
    let chest = b.tube(&TubeSpec {
        part: 1,
        bone: TORSO,
        start: [0.0, 0.40, 0.0],
        end: [0.0, 0.80, 0.0],
        radii: torso_r,
        around: cfg.torso_around,
        rings: cfg.torso_rings,
    });
    let chest_top = b.cap(&chest, 1, TORSO, true);
    b.strip(abdomen.last(), chest.first(), [0.0, 0.375, 0.0]);

    let neck = b.tube(&TubeSpec {
        part: 3,
        bone: HEAD,
        start: [0.0, 0.88, 0.0],
        end: [0.0, 0.95, 0.0],
        radii: (0.055, 0.055),
        around: cfg.head_around,
        rings: 2,
    });
    b.fan(chest_top, neck.first(), [0.0, 0.86, 0.0]);
    b.set_skin(neck.first(), &[(TORSO, 0.5), (HEAD, 0.5)]);
    let head = b.tube(&TubeSpec {
        part: 4,
        bone: HEAD,
        start: [0.0, 1.0, 0.0],
        end: [0.0, 1.26, 0.0],
        radii: (0.11, 0.11),
        around: cfg.head_around,
        rings: cfg.head_rings,
    });
    b.cap(&head, 4, HEAD, true);
    b.strip(neck.last(), head.first(), [0.0, 0.975, 0.0]);

    let chest_verts: Vec<usize> = chest.rings.iter().flatten().copied().collect();
    let pelvis_verts: Vec<usize> = abdomen.first().to_vec();

    let mut bones = vec![
        Bone {
            name: "torso".into(),
            parent: None,
            pivot: [0.0; 3],
        },
        Bone {
            name: "head".into(),
            parent: Some(TORSO),
            pivot: [0.0, 0.84, 0.0],
        },
    ];
    let mut joint_groups = vec![
        Tube::distinct(abdomen.first()),
        Tube::distinct(&chest.rings[cfg.torso_rings / 2]),
        Tube::distinct(neck.first()),
        Tube::distinct(head.last()),
    ];
    let mut joint_names: Vec<String> = ["pelvis", "chest", "neck", "head"].iter().map(|s| s.to_string()).collect();
    let mut limb_joints = Vec::new();

    for (side, sx) in [("l", 1.0), ("r", -1.0)] {
        let arm_parts = if sx > 0.0 { (5, 6) } else { (7, 8) };
        let leg_parts = if sx > 0.0 { (9, 10) } else { (11, 12) };
        let limbs = [
            LimbSpec {
                parts: arm_parts,
                attach: [0.20 * sx, 0.72, 0.0],
                upper: ([0.25 * sx, 0.72, 0.0], [0.52 * sx, 0.72, 0.0]),
                lower: ([0.56 * sx, 0.72, 0.0], [0.84 * sx, 0.72, 0.0]),
                radii: (0.075, 0.065),
                pivots: ([0.22 * sx, 0.72, 0.0], [0.54 * sx, 0.72, 0.0]),
                names: ["upper_arm", "forearm", "elbow", "wrist"],
            },
            LimbSpec {
                parts: leg_parts,
                attach: [0.12 * sx, 0.0, 0.0],
                upper: ([0.11 * sx, -0.08, 0.0], [0.11 * sx, -0.45, 0.0]),
                lower: ([0.11 * sx, -0.50, 0.0], [0.11 * sx, -0.88, 0.0]),
                radii: (0.09, 0.075),
                pivots: ([0.11 * sx, -0.04, 0.0], [0.11 * sx, -0.475, 0.0]),
                names: ["thigh", "shin", "knee", "ankle"],
            },
        ];
        for limb in limbs {
            let attach_set = if limb.parts.0 <= 8 { &chest_verts } else { &pelvis_verts };
            let LimbSpec {
                parts,
                attach,
                upper: (p0, p1),
                lower: (p2, p3),
                radii,
                pivots: (root_pivot, mid_pivot),
                names,
            } = limb;
            let upper_bone = bones.len();
            bones.push(Bone {
                name: format!("{side}_{}", names[0]),
                parent: Some(TORSO),
                pivot: root_pivot,
            });
            let lower_bone = bones.len();
            bones.push(Bone {
                name: format!("{side}_{}", names[1]),
                parent: Some(upper_bone),
                pivot: mid_pivot,
            });
            let upper = b.tube(&TubeSpec {
                part: parts.0,
                bone: upper_bone,
                start: p0,
                end: p1,
                radii: (radii.0, radii.0),
                around: cfg.limb_around,
                rings: cfg.limb_rings,
            });
            let apex = b.nearest(attach_set, attach);
            b.fan(apex, upper.first(), lerp3(b.vertices[apex], upper.centers[0], 0.5));
            let lower = b.tube(&TubeSpec {
                part: parts.1,
                bone: lower_bone,
                start: p2,
                end: p3,
                radii: (radii.1, radii.1),
                around: cfg.limb_around,
                rings: cfg.limb_rings,
            });
            b.strip(upper.last(), lower.first(), lerp3(p1, p2, 0.5));
            b.cap(&lower, parts.1, lower_bone, true);
            b.set_skin(upper.first(), &[(TORSO, 0.5), (upper_bone, 0.5)]);
            b.set_skin(upper.last(), &[(upper_bone, 0.75), (lower_bone, 0.25)]);
            b.set_skin(lower.first(), &[(upper_bone, 0.25), (lower_bone, 0.75)]);

            let mut mid = Tube::distinct(upper.last());
            mid.extend(Tube::distinct(lower.first()));
            limb_joints.push((format!("{side}_{}", names[2]), mid));
            limb_joints.push((format!("{side}_{}", names[3]), Tube::distinct(lower.last())));
        }
    }
    // order: l_elbow, l_wrist, l_knee, l_ankle, r_... -> regroup arms first
    let order = [0usize, 1, 4, 5, 2, 3, 6, 7];
    for &i in &order {
        joint_names.push(limb_joints[i].0.clone());
        joint_groups.push(limb_joints[i].1.clone());
    }

    let n = b.vertices.len();
    let regressor = JointRegressor::from_groups(n, &joint_groups)?;
    TemplateMesh::new(TemplateParts {
        vertices: b.vertices,
        faces: b.faces,
        vertex_iuv: b.iuv,
        part_count: CAPSULE_PARTS,
        regressor,
        joint_names,
        root_joint: 0,
        rig: Some(Rig { bones, skin: b.skin }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::face_area;

    #[test]
    fn desk_template_shape() {
        let cfg = CapsuleManConfig::desk();
        let t = capsule_man(&cfg).unwrap();
        assert_eq!(t.num_vertices(), cfg.vertex_count());
        assert!((380..=440).contains(&t.num_vertices()));
        assert_eq!(t.part_count(), 12);
        assert_eq!(t.regressor().n_joints, 12);
        assert_eq!(t.joint_names()[t.root_joint()], "pelvis");
        let parts: std::collections::BTreeSet<u8> = t.vertex_iuv().iter().map(|i| i.part).collect();
        assert_eq!(parts.len(), 12);
    }

    #[test]
    fn pelvis_joint_at_origin() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        let j = t.regressor().apply(t.vertices()).unwrap();
        let root = j[t.root_joint()];
        assert!(root.iter().all(|c| c.abs() < 1e-12), "{root:?}");
    }

    #[test]
    fn faces_are_outward_and_nondegenerate() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        for f in t.faces() {
            assert!(face_area(t.vertices(), *f) > 1e-6);
        }
        // signed volume of a closed-ish outward surface is positive
        let v = t.vertices();
        let vol: f64 = t
            .faces()
            .iter()
            .map(|f| dot3(v[f[0]], cross3(v[f[1]], v[f[2]])) / 6.0)
            .sum();
        assert!(vol > 0.0, "volume {vol}");
    }

    #[test]
    fn vertex_budget_search() {
        for target in [200, 400, 600, 1000] {
            let c = CapsuleManConfig::for_vertex_count(target);
            let n = c.vertex_count();
            assert!(n.abs_diff(target) * 100 <= target * 15, "target {target} got {n}");
            assert_eq!(capsule_man(&c).unwrap().num_vertices(), n);
        }
    }

    #[test]
    fn skin_weights_sum_to_one() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        for s in &t.rig().unwrap().skin {
            let total: f64 = s.iter().map(|w| w.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
