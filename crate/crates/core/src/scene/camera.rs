use serde::{Deserialize, Serialize};

use crate::mesh::TemplateMesh;

/// Orthographic view along `-z`: column `cx + s x`, row `cy - s y`, depth `z`
/// (larger is nearer). Pixel `p` has its center at coordinate `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub scale: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// `(row, col, depth)`.
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        [self.cy - self.scale * p[1], self.cx + self.scale * p[0], p[2]]
    }

    /// Centers the rest-pose bounding box, enlarged by `pad`, in an `h x w` image.
    pub fn fit_rest(template: &TemplateMesh, h: usize, w: usize, pad: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in template.vertices() {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * pad;
        let scale = h.min(w) as f64 / extent;
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        Camera {
            scale,
            cx: (w as f64 - 1.0) / 2.0 - scale * mid[0],
            cy: (h as f64 - 1.0) / 2.0 + scale * mid[1],
        }
    }

    /// World length of one pixel.
    pub fn pixel_size(&self) -> f64 {
        1.0 / self.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::blob;

    #[test]
    fn fit_keeps_rest_pose_inside() {
        let t = blob(5, 6, 2).unwrap();
        let cam = Camera::fit_rest(&t, 32, 48, 1.1);
        for v in t.vertices() {
            let [r, c, _] = cam.project(*v);
            assert!((-0.5..31.5).contains(&r) && (-0.5..47.5).contains(&c));
        }
        assert_eq!(cam.project([0.0, 1.0, 0.5])[2], 0.5);
    }
}
