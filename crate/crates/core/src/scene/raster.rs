//! Bounding-box triangle rasterizer with a z-buffer.

use super::Camera;
use crate::correspondence::IuvImage;
use crate::mesh::{Mesh, TemplateMesh};
use crate::Result;

pub const NO_FACE: u32 = u32::MAX;

/// Per-pixel winning face, its depth, and barycentric weights.
#[derive(Clone, Debug)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    /// `-inf` on background.
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    /// `(row, col, depth)` of every vertex.
    pub projected: Vec<[f64; 3]>,
}

impl Raster {
    pub fn is_foreground(&self, idx: usize) -> bool {
        self.face[idx] != NO_FACE
    }

    pub fn coverage(&self) -> f64 {
        self.face.iter().filter(|&&f| f != NO_FACE).count() as f64 / self.face.len().max(1) as f64
    }

    /// Nearest pixel to a continuous position, if inside the image.
    pub fn pixel_at(&self, row: f64, col: f64) -> Option<(usize, usize)> {
        let (r, c) = (row.round(), col.round());
        (r >= 0.0 && c >= 0.0 && (r as usize) < self.height && (c as usize) < self.width).then(|| (r as usize, c as usize))
    }

    /// Whether vertex `k` projects onto a background pixel or off-image.
    pub fn on_silhouette(&self, k: usize) -> bool {
        let [r, c, _] = self.projected[k];
        self.pixel_at(r, c).is_none_or(|(pr, pc)| !self.is_foreground(pr * self.width + pc))
    }

    /// Visibility of each vertex under the z-buffer.
    ///
    /// A vertex is visible when some pixel in the 3x3 block around its
    /// projection shows a surface at the vertex's depth, within `tol` world
    /// units.
    pub fn vertex_visibility(&self, tol: f64) -> Vec<bool> {
        self.projected
            .iter()
            .map(|&[r, c, z]| {
                let Some((pr, pc)) = self.pixel_at(r, c) else {
                    return false;
                };
                let rows = pr.saturating_sub(1)..=(pr + 1).min(self.height - 1);
                rows.into_iter().any(|rr| {
                    (pc.saturating_sub(1)..=(pc + 1).min(self.width - 1)).any(|cc| {
                        let idx = rr * self.width + cc;
                        self.is_foreground(idx) && (self.depth[idx] - z).abs() <= tol
                    })
                })
            })
            .collect()
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterizes every face. A pixel center is covered when all barycentric
/// weights are nonnegative; nearer depth wins and equal depths keep the
/// lower face index.
pub fn render(mesh: &Mesh, template: &TemplateMesh, camera: &Camera, height: usize, width: usize) -> Result<Raster> {
    mesh.check_template(template)?;
    let n = height * width;
    let projected: Vec<[f64; 3]> = mesh.vertices.iter().map(|&v| camera.project(v)).collect();
    let mut out = Raster {
        height,
        width,
        depth: vec![f64::NEG_INFINITY; n],
        face: vec![NO_FACE; n],
        bary: vec![[0.0; 3]; n],
        projected,
    };
    for (fi, f) in template.faces().iter().enumerate() {
        let [a, b, c] = f.map(|i| out.projected[i]);
        let (pa, pb, pc) = ([a[0], a[1]], [b[0], b[1]], [c[0], c[1]]);
        let area = edge(pa, pb, pc);
        if area.abs() < 1e-12 {
            continue;
        }
        let rmin = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
        let rmax = a[0].max(b[0]).max(c[0]).floor().min(height as f64 - 1.0);
        let cmin = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
        let cmax = a[1].max(b[1]).max(c[1]).floor().min(width as f64 - 1.0);
        if rmin > rmax || cmin > cmax {
            continue;
        }
        for r in rmin as usize..=rmax as usize {
            for col in cmin as usize..=cmax as usize {
                let p = [r as f64, col as f64];
                let l = [edge(pb, pc, p) / area, edge(pc, pa, p) / area, edge(pa, pb, p) / area];
                if l.iter().any(|&x| x < 0.0) {
                    continue;
                }
                let z = l[0] * a[2] + l[1] * b[2] + l[2] * c[2];
                let idx = r * width + col;
                if z > out.depth[idx] {
                    out.depth[idx] = z;
                    out.face[idx] = fi as u32;
                    out.bary[idx] = l;
                }
            }
        }
    }
    Ok(out)
}

/// Part and UV seen through barycentric weights `l` of a face.
///
/// Faces spanning several parts take the part of their heaviest vertex and
/// blend UV over that part's vertices only.
pub fn face_iuv(template: &TemplateMesh, face: usize, l: [f64; 3]) -> (u8, f64, f64) {
    let f = template.faces()[face];
    let iuv = template.vertex_iuv();
    let part = template.face_part()[face];
    let part = if part != 0 {
        part
    } else {
        let k = (0..3).fold(0, |best, k| if l[k] > l[best] { k } else { best });
        iuv[f[k]].part
    };
    let (mut wsum, mut u, mut v) = (0.0, 0.0, 0.0);
    for k in 0..3 {
        if iuv[f[k]].part == part {
            wsum += l[k];
            u += l[k] * iuv[f[k]].u;
            v += l[k] * iuv[f[k]].v;
        }
    }
    if wsum > 0.0 {
        (part, u / wsum, v / wsum)
    } else {
        (part, u, v)
    }
}

/// IUV image of a raster: the winning face's part and barycentric UV.
pub fn iuv_from_raster(raster: &Raster, template: &TemplateMesh) -> IuvImage {
    let mut img = IuvImage::new(raster.height, raster.width);
    for idx in 0..raster.face.len() {
        let f = raster.face[idx];
        if f == NO_FACE {
            continue;
        }
        let (part, u, v) = face_iuv(template, f as usize, raster.bary[idx]);
        img.set(idx / raster.width, idx % raster.width, part, u, v);
    }
    img
}

pub fn rasterize_iuv(
    mesh: &Mesh,
    template: &TemplateMesh,
    camera: &Camera,
    height: usize,
    width: usize,
) -> Result<IuvImage> {
    let raster = render(mesh, template, camera, height, width)?;
    if raster.coverage() == 0.0 {
        log::warn!("mesh projects outside the {height}x{width} image; iuv is all background");
    }
    Ok(iuv_from_raster(&raster, template))
}
