//! Forward-kinematics articulation with linear blend skinning.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, TemplateMesh};
use crate::{Error, Result};

/// Largest twist in radians per unit height. Bounded so that limb edges far
/// from the vertical axis stretch by under 5%.
pub const TWIST_MAX: f64 = 0.04;

/// Local bone rotations about their pivots plus a height-proportional twist
/// about the vertical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotations: Vec<Rotation3<f64>>,
    /// Radians of rotation about `y` per unit of height.
    pub twist: f64,
}

impl Pose {
    pub fn identity(bones: usize) -> Self {
        Pose {
            rotations: vec![Rotation3::identity(); bones],
            twist: 0.0,
        }
    }
}

/// Random pose; joint angles are bounded by `difficulty * 90` degrees.
///
/// The root bone only turns about the vertical axis so the root joint stays
/// at the origin.
pub fn random_pose(template: &TemplateMesh, seed: u64, difficulty: f64) -> Result<Pose> {
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::Invalid(format!("difficulty {difficulty} outside [0, 1]")));
    }
    let rig = template.rig().ok_or_else(|| Error::InvalidMesh("template has no rig".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = difficulty * FRAC_PI_2;
    let mut rotations = Vec::with_capacity(rig.bones.len());
    for bone in &rig.bones {
        let angle = if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
        let axis = if bone.parent.is_none() {
            Vector3::y()
        } else {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        };
        let angle = if bone.parent.is_none() { 0.5 * angle } else { angle };
        rotations.push(Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle));
    }
    let twist = if max > 0.0 { rng.gen_range(-TWIST_MAX..=TWIST_MAX) * difficulty } else { 0.0 };
    Ok(Pose { rotations, twist })
}

/// Applies `pose` to the rest mesh.
///
/// Each bone moves a point by `d_b(x) = (A_b - I)(x - pivot_b) + o_b`, where
/// `A_b` is the accumulated rotation and `o_b` the displacement of the pivot
/// by its parent. A vertex moves by the skin-weighted sum of its bones'
/// displacements, so the identity pose reproduces the rest mesh exactly.
pub fn pose_mesh(template: &TemplateMesh, pose: &Pose) -> Result<Mesh> {
    let rig = template.rig().ok_or_else(|| Error::InvalidMesh("template has no rig".into()))?;
    if pose.rotations.len() != rig.bones.len() {
        return Err(Error::Shape(format!(
            "pose has {} rotations for {} bones",
            pose.rotations.len(),
            rig.bones.len()
        )));
    }
    let eye = Matrix3::identity();
    let mut acc: Vec<Matrix3<f64>> = Vec::with_capacity(rig.bones.len());
    let mut offset: Vec<Vector3<f64>> = Vec::with_capacity(rig.bones.len());
    let disp = |a: &Matrix3<f64>, o: &Vector3<f64>, pivot: &Vector3<f64>, x: &Vector3<f64>| (a - eye) * (x - pivot) + o;
    for (b, bone) in rig.bones.iter().enumerate() {
        let pivot = Vector3::from(bone.pivot);
        match bone.parent {
            None => {
                acc.push(*pose.rotations[b].matrix());
                offset.push(Vector3::zeros());
            }
            Some(p) if p < b => {
                let pp = Vector3::from(rig.bones[p].pivot);
                acc.push(acc[p] * pose.rotations[b].matrix());
                offset.push(disp(&acc[p], &offset[p], &pp, &pivot));
            }
            Some(p) => {
                return Err(Error::InvalidMesh(format!("bone {b} has parent {p} listed after it")));
            }
        }
    }
    let s = pose.twist;
    let vertices = template
        .vertices()
        .iter()
        .zip(&rig.skin)
        .map(|(v, skin)| {
            let x = Vector3::from(*v);
            let mut d = Vector3::zeros();
            for &(b, w) in skin {
                let pivot = Vector3::from(rig.bones[b].pivot);
                d += w * disp(&acc[b], &offset[b], &pivot, &x);
            }
            let y = x + d;
            if s == 0.0 {
                [y[0], y[1], y[2]]
            } else {
                let (sn, cs) = (s * y[1]).sin_cos();
                [cs * y[0] + sn * y[2], y[1], -sn * y[0] + cs * y[2]]
            }
        })
        .collect();
    Ok(Mesh::new(vertices))
}

/// Random articulation of the template, deterministic per seed.
pub fn deform_template(template: &TemplateMesh, seed: u64, difficulty: f64) -> Result<Mesh> {
    pose_mesh(template, &random_pose(template, seed, difficulty)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{capsule_man, face_area, CapsuleManConfig};

    #[test]
    fn zero_difficulty_is_rest_pose() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        assert_eq!(deform_template(&t, 9, 0.0).unwrap().vertices, t.vertices());
    }

    #[test]
    fn seeded_and_root_fixed() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        let a = deform_template(&t, 4, 0.8).unwrap();
        assert_eq!(a, deform_template(&t, 4, 0.8).unwrap());
        assert_ne!(a, deform_template(&t, 5, 0.8).unwrap());
        let root = t.regressor().apply(&a.vertices).unwrap()[t.root_joint()];
        assert!(root.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn faces_survive_hard_poses() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        for seed in 0..100 {
            let m = deform_template(&t, seed, 1.0).unwrap();
            for f in t.faces() {
                assert!(face_area(&m.vertices, *f) > 1e-8, "seed {seed} face {f:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_difficulty() {
        let t = capsule_man(&CapsuleManConfig::desk()).unwrap();
        assert!(deform_template(&t, 0, 1.5).is_err());
    }
}
