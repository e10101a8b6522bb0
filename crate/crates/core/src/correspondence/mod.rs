//! Dense pixel-to-surface maps and the thresholded vertex-to-pixel lookup.

mod iuv;

pub use iuv::{read_iuv, write_iuv, IuvImage, IUV_MAGIC};

use crate::mesh::{TemplateMesh, VertexIuv};
use crate::{Error, Result};

/// Pixel center with 1-based row `i` in `1..=H` and column `j` in `1..=W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub i: u32,
    pub j: u32,
}

impl Pixel {
    pub fn from_zero_based(row: usize, col: usize) -> Self {
        Pixel {
            i: row as u32 + 1,
            j: col as u32 + 1,
        }
    }

    /// `(row, col)` 0-based.
    pub fn zero_based(&self) -> (usize, usize) {
        (self.i as usize - 1, self.j as usize - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    pub pixel: Vec<Option<Pixel>>,
    /// Matched UV distance; `+inf` for absent vertices.
    pub distance: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn all_absent(n: usize) -> Self {
        CorrespondenceSet {
            pixel: vec![None; n],
            distance: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.pixel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.pixel.iter().filter(|p| p.is_some()).count()
    }
}

pub fn visibility_mask(set: &CorrespondenceSet) -> Vec<bool> {
    set.pixel.iter().map(Option::is_some).collect()
}

#[inline]
fn uv_dist(uv: [f32; 2], t: &VertexIuv) -> f64 {
    let du = uv[0] as f64 - t.u;
    let dv = uv[1] as f64 - t.v;
    (du * du + dv * dv).sqrt()
}

fn check_parts(iuv: &IuvImage, template: &TemplateMesh) -> Result<()> {
    let max = iuv.max_part();
    if max > template.part_count() {
        return Err(Error::Invalid(format!(
            "image part id {max} exceeds template part count {}",
            template.part_count()
        )));
    }
    Ok(())
}

fn finish(best: Option<(f64, usize)>, delta: f64, width: usize) -> (Option<Pixel>, f64) {
    match best {
        Some((d, idx)) if d <= delta => (Some(Pixel::from_zero_based(idx / width, idx % width)), d),
        _ => (None, f64::INFINITY),
    }
}

/// Reference algorithm: every pixel is scanned in row-major order for every vertex.
pub fn vertex_to_pixel_exhaustive(iuv: &IuvImage, template: &TemplateMesh) -> Result<CorrespondenceSet> {
    check_parts(iuv, template)?;
    let mut out = CorrespondenceSet::all_absent(template.num_vertices());
    for (k, t) in template.vertex_iuv().iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for idx in 0..iuv.height() * iuv.width() {
            if iuv.part_at(idx) != t.part {
                continue;
            }
            let d = uv_dist(iuv.uv_at(idx), t);
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, idx));
            }
        }
        (out.pixel[k], out.distance[k]) = finish(best, template.delta()[k], iuv.width());
    }
    Ok(out)
}

/// Per-part uniform grid over UV space holding row-major pixel indices.
pub struct UvGridIndex {
    cells: usize,
    /// `buckets[part][cell]`, each bucket in ascending pixel order.
    buckets: Vec<Vec<Vec<u32>>>,
}

impl UvGridIndex {
    pub fn build(iuv: &IuvImage, part_count: u8, cells: usize) -> Self {
        let cells = cells.max(1);
        let mut buckets = vec![vec![Vec::new(); cells * cells]; part_count as usize + 1];
        for idx in 0..iuv.height() * iuv.width() {
            let p = iuv.part_at(idx);
            if p == 0 || p > part_count {
                continue;
            }
            let [u, v] = iuv.uv_at(idx);
            let c = Self::cell(u as f64, cells) + cells * Self::cell(v as f64, cells);
            buckets[p as usize][c].push(idx as u32);
        }
        UvGridIndex { cells, buckets }
    }

    fn cell(x: f64, cells: usize) -> usize {
        ((x * cells as f64).floor().max(0.0) as usize).min(cells - 1)
    }

    /// Nearest pixel of `t`'s part within `radius`, ties to the lower pixel index.
    fn nearest_within(&self, iuv: &IuvImage, t: &VertexIuv, radius: f64) -> Option<(f64, usize)> {
        let part = self.buckets.get(t.part as usize)?;
        // one extra cell on each side absorbs rounding at cell borders
        let lo = |x: f64| Self::cell(x - radius, self.cells).saturating_sub(1);
        let hi = |x: f64| (Self::cell(x + radius, self.cells) + 1).min(self.cells - 1);
        let mut best: Option<(f64, usize)> = None;
        for cv in lo(t.v)..=hi(t.v) {
            for cu in lo(t.u)..=hi(t.u) {
                for &idx in &part[cu + self.cells * cv] {
                    let idx = idx as usize;
                    let d = uv_dist(iuv.uv_at(idx), t);
                    if d <= radius && best.is_none_or(|(b, bi)| d < b || (d == b && idx < bi)) {
                        best = Some((d, idx));
                    }
                }
            }
        }
        best
    }
}

/// Thresholded nearest-neighbor correspondence.
///
/// Candidates for vertex `k` are the pixels carrying its part id; the nearest
/// in UV (ties to the first pixel in row-major order) is kept when its
/// distance is at most `delta[k]`. Identical to
/// [`vertex_to_pixel_exhaustive`], accelerated by a UV grid.
pub fn vertex_to_pixel(iuv: &IuvImage, template: &TemplateMesh) -> Result<CorrespondenceSet> {
    check_parts(iuv, template)?;
    let median_delta = {
        let mut d = template.delta().to_vec();
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    };
    let cells = ((1.0 / median_delta).ceil() as usize).clamp(1, 256);
    let index = UvGridIndex::build(iuv, template.part_count(), cells);
    let mut out = CorrespondenceSet::all_absent(template.num_vertices());
    for (k, t) in template.vertex_iuv().iter().enumerate() {
        let delta = template.delta()[k];
        (out.pixel[k], out.distance[k]) = finish(index.nearest_within(iuv, t, delta), delta, iuv.width());
    }
    Ok(out)
}
