#![allow(dead_code)]

use pixgcn::mesh::{blob, capsule_man, CapsuleManConfig, Mesh, TemplateMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_template() -> TemplateMesh {
    blob(6, 7, 3).unwrap()
}

pub fn desk_template() -> TemplateMesh {
    capsule_man(&CapsuleManConfig::desk()).unwrap()
}

/// Rest mesh with every coordinate jittered uniformly by up to `amp`.
pub fn jitter(template: &TemplateMesh, amp: f64, rng: &mut ChaCha8Rng) -> Mesh {
    Mesh::new(
        template
            .vertices()
            .iter()
            .map(|v| v.map(|c| c + rng.gen_range(-amp..=amp)))
            .collect(),
    )
}

pub fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rotation matrix from a (not necessarily unit) axis and an angle.
pub fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = norm(axis);
    let [x, y, z] = axis.map(|c| c / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let axis = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
    let axis = if norm(axis) < 1e-3 { [0.0, 0.0, 1.0] } else { axis };
    rotation(axis, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
}
pub mod oracles;
