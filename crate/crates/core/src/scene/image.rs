//! Input-image synthesis and IUV corruption.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::{face_iuv, render, Raster, NO_FACE};
use super::Camera;
use crate::correspondence::IuvImage;
use crate::mesh::{Mesh, TemplateMesh};
use crate::{Error, Result, Tensor};

/// Per-vertex texture values in `[0.2, 1]`, fixed by `seed`.
pub fn vertex_texture(template: &TemplateMesh, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..template.num_vertices()).map(|_| rng.gen_range(0.2..=1.0)).collect()
}

/// Normalized depth in `(0.1, 1]`, so foreground never reads as background.
pub fn depth_shade(z: f64) -> f64 {
    0.55 + 0.45 * (z / 1.2).clamp(-1.0, 1.0)
}

/// Three-channel image `[3, H, W]` from an existing raster.
///
/// The part channel uses the same per-pixel part as the IUV image.
pub fn image_from_raster(raster: &Raster, template: &TemplateMesh, texture: &[f64]) -> Result<Tensor> {
    let n = raster.height * raster.width;
    let mut data = vec![0.0; 3 * n];
    let p = f64::from(template.part_count());
    for idx in 0..n {
        let f = raster.face[idx];
        if f == NO_FACE {
            continue;
        }
        let face = template.faces()[f as usize];
        let l = raster.bary[idx];
        data[idx] = depth_shade(raster.depth[idx]);
        data[n + idx] = f64::from(face_iuv(template, f as usize, l).0) / p;
        data[2 * n + idx] = (0..3).map(|k| l[k] * texture[face[k]]).sum();
    }
    Ok(Tensor::new(&[3, raster.height, raster.width], data)?)
}

/// Renders depth, part and texture channels; background pixels are zero.
pub fn synthesize_image(
    mesh: &Mesh,
    template: &TemplateMesh,
    camera: &Camera,
    seed: u64,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let raster = render(mesh, template, camera, height, width)?;
    image_from_raster(&raster, template, &vertex_texture(template, seed))
}

/// Adds uniform UV noise of half-width `noise_level` and flips a fraction
/// `noise_level` of part-boundary pixels to an adjacent part.
///
/// A boundary pixel is a foreground pixel with a 4-neighbour whose part is
/// topologically adjacent to its own on the template. Decisions are taken
/// on the input image, so flips do not cascade.
pub fn corrupt_iuv(iuv: &IuvImage, template: &TemplateMesh, seed: u64, noise_level: f64) -> Result<IuvImage> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::Invalid(format!("noise level {noise_level} outside [0, 1]")));
    }
    if noise_level == 0.0 {
        return Ok(iuv.clone());
    }
    let adjacency = template.part_adjacency();
    let (h, w) = (iuv.height(), iuv.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = iuv.clone();
    for r in 0..h {
        for c in 0..w {
            let (part, uv) = iuv.get(r, c);
            if part == 0 {
                continue;
            }
            let du = rng.gen_range(-noise_level..=noise_level);
            let dv = rng.gen_range(-noise_level..=noise_level);
            let mut candidates: Vec<u8> = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .filter_map(|&(dr, dc)| {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        return None;
                    }
                    let q = iuv.get(rr as usize, cc as usize).0;
                    (q != 0 && q != part && adjacency[part as usize].contains(&q)).then_some(q)
                })
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            let flip: f64 = rng.gen();
            let new_part = if !candidates.is_empty() && flip < noise_level {
                candidates[rng.gen_range(0..candidates.len())]
            } else {
                part
            };
            out.set(r, c, new_part, f64::from(uv[0]) + du, f64::from(uv[1]) + dv);
        }
    }
    Ok(out)
}
