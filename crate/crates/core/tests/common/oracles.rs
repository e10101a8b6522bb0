//! Independent reference implementations shared by the test suites.

use std::collections::BTreeSet;

use pixgcn::correspondence::IuvImage;
use pixgcn::mesh::{Mesh, TemplateMesh};
use pixgcn::tensor::{CsrPattern, ParamSet, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{cross, dot, norm, sub, mat_vec};

pub fn oracle_vertex(p: &Mesh, g: &Mesh) -> f64 {
    let mut s = 0.0;
    for k in 0..p.len() {
        for c in 0..3 {
            s += (p.vertices[k][c] - g.vertices[k][c]).abs();
        }
    }
    s
}

pub fn oracle_joints(t: &TemplateMesh, m: &Mesh) -> Vec<[f64; 3]> {
    let w = t.regressor().dense();
    w.iter()
        .map(|row| {
            let mut j = [0.0; 3];
            for (k, &wk) in row.iter().enumerate() {
                for c in 0..3 {
                    j[c] += wk * m.vertices[k][c];
                }
            }
            j
        })
        .collect()
}

pub fn oracle_joint(t: &TemplateMesh, p: &Mesh, g: &Mesh) -> f64 {
    let (jp, jg) = (oracle_joints(t, p), oracle_joints(t, g));
    let mut s = 0.0;
    for (a, b) in jp.iter().zip(&jg) {
        for c in 0..3 {
            s += (a[c] - b[c]).abs();
        }
    }
    s
}

pub fn oracle_edge(t: &TemplateMesh, p: &Mesh, g: &Mesh) -> f64 {
    let mut edges = BTreeSet::new();
    for f in t.faces() {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let mut s = 0.0;
    for (i, j) in edges {
        let lp = norm(sub(p.vertices[i], p.vertices[j]));
        let lg = norm(sub(g.vertices[i], g.vertices[j]));
        s += (lp - lg).abs();
    }
    s
}

pub fn oracle_normal(t: &TemplateMesh, p: &Mesh, g: &Mesh) -> f64 {
    let mut s = 0.0;
    for f in t.faces() {
        let v = &g.vertices;
        let n = cross(sub(v[f[1]], v[f[0]]), sub(v[f[2]], v[f[0]]));
        if 0.5 * norm(n) < 1e-12 {
            continue;
        }
        let n = n.map(|c| c / norm(n));
        for e in 0..3 {
            let d = sub(p.vertices[f[e]], p.vertices[f[(e + 1) % 3]]);
            let len = norm(d);
            if len < 1e-12 {
                continue;
            }
            s += (dot(d, n) / len).abs();
        }
    }
    s
}

pub fn oracle_mpjpe(p: &[[f64; 3]], g: &[[f64; 3]], root: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..p.len() {
        let a = sub(p[k], p[root]);
        let b = sub(g[k], g[root]);
        s += norm(sub(a, b));
    }
    s / p.len() as f64
}

pub fn similarity(points: &[[f64; 3]], s: f64, rot: &[[f64; 3]; 3], t: [f64; 3]) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|&p| {
            let q = mat_vec(rot, p);
            [s * q[0] + t[0], s * q[1] + t[1], s * q[2] + t[2]]
        })
        .collect()
}

pub fn residual(p: &[[f64; 3]], g: &[[f64; 3]]) -> f64 {
    p.iter().zip(g).map(|(a, b)| dot(sub(*a, *b), sub(*a, *b))).sum()
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
}

/// Every parameter replaced by uniform noise of the same shape.
pub fn randomized(params: &ParamSet, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        out.insert(name.clone(), random_tensor(t.shape(), rng));
    }
    out
}

pub fn dense_semgconv(x: &Tensor, w: &Tensor, logits: &[f64], b: &[f64], p: &CsrPattern) -> Vec<f64> {
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[1];
    let (xd, wd) = (x.data(), w.data());
    // explicit dense attention matrix
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let row = p.row(i);
        let m = row.clone().map(|e| logits[e]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.clone().map(|e| (logits[e] - m).exp()).sum();
        for e in row {
            a[i][p.col_idx()[e]] = (logits[e] - m).exp() / z;
        }
    }
    let mut out = vec![0.0; n * cout];
    for i in 0..n {
        for o in 0..cout {
            let mut s = b[o];
            for j in 0..n {
                if a[i][j] == 0.0 {
                    continue;
                }
                let mut xw = 0.0;
                for c in 0..cin {
                    xw += xd[j * cin + c] * wd[c * cout + o];
                }
                s += a[i][j] * xw;
            }
            out[i * cout + o] = s;
        }
    }
    out
}

/// Texel value at a clamped map coordinate, computed axis by axis.
pub fn reference_sample(map: &[f64], s: usize, n: usize, point: (f64, f64)) -> f64 {
    let coord = |p: f64| {
        let g = (p + 0.5) * s as f64 / n as f64 - 0.5;
        g.max(0.0).min((s - 1) as f64)
    };
    let (gy, gx) = (coord(point.0), coord(point.1));
    let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(s - 1), (x0 + 1).min(s - 1));
    let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
    let at = |y: usize, x: usize| map[y * s + x];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Random image; with `coarse`, UV values sit on a 1/8 grid so exact ties are common.
pub fn random_iuv(h: usize, w: usize, parts: u8, coarse: bool, rng: &mut ChaCha8Rng) -> IuvImage {
    let mut img = IuvImage::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let part = rng.gen_range(0..=parts);
            let mut uv = || {
                if coarse {
                    rng.gen_range(0..=8) as f64 / 8.0
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            };
            let (u, v) = (uv(), uv());
            img.set(r, c, part, u, v);
        }
    }
    img
}

/// Scans pixels last to first and keeps the smallest `(distance, row-major index)`.
pub fn scan_correspondences(iuv: &IuvImage, t: &TemplateMesh) -> Vec<Option<(usize, usize)>> {
    let w = iuv.width();
    t.vertex_iuv()
        .iter()
        .enumerate()
        .map(|(k, vi)| {
            let mut best: Option<(f64, usize)> = None;
            for idx in (0..iuv.height() * w).rev() {
                if iuv.part_at(idx) != vi.part {
                    continue;
                }
                let uv = iuv.uv_at(idx);
                let (du, dv) = (uv[0] as f64 - vi.u, uv[1] as f64 - vi.v);
                let d = (du * du + dv * dv).sqrt();
                let better = match best {
                    None => true,
                    Some((bd, bi)) => d < bd || (d == bd && idx < bi),
                };
                if better {
                    best = Some((d, idx));
                }
            }
            best.filter(|&(d, _)| d <= t.delta()[k]).map(|(_, idx)| (idx / w, idx % w))
        })
        .collect()
}
