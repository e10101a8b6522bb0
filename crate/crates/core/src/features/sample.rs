use std::collections::BTreeMap;
use std::sync::Arc;

use crate::tensor::{CsrPattern, Tensor};
use crate::{Error, Result};

/// Texel weights for sampling a `map_size` grid at `point = (row, col)` given
/// in input-image pixel coordinates (pixel `p` has its center at `p`).
///
/// Map coordinate is `(p + 0.5) * S / H - 0.5` per axis, clamped to the texel
/// grid. Returns four `(flat texel index, weight)` pairs; indices may repeat
/// at the border.
pub fn bilinear_weights(
    point: (f64, f64),
    map_size: (usize, usize),
    input_size: (usize, usize),
) -> Result<[(usize, f64); 4]> {
    let (h, w) = input_size;
    let (sh, sw) = map_size;
    let inside = |p: f64, n: usize| p >= -0.5 && p <= n as f64 - 0.5;
    if !inside(point.0, h) || !inside(point.1, w) || sh == 0 || sw == 0 {
        return Err(Error::Invalid(format!(
            "sample point {point:?} outside a {h}x{w} image (map {sh}x{sw})"
        )));
    }
    let axis = |p: f64, s: usize, n: usize| {
        let g = ((p + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = g.floor() as usize;
        (i0, (i0 + 1).min(s - 1), g - i0 as f64)
    };
    let (y0, y1, ty) = axis(point.0, sh, h);
    let (x0, x1, tx) = axis(point.1, sw, w);
    Ok([
        (y0 * sw + x0, (1.0 - ty) * (1.0 - tx)),
        (y0 * sw + x1, (1.0 - ty) * tx),
        (y1 * sw + x0, ty * (1.0 - tx)),
        (y1 * sw + x1, ty * tx),
    ])
}

/// Sparse `[points, S_h * S_w]` interpolation matrix; `None` rows are empty.
pub fn sampling_matrix(
    points: &[Option<(f64, f64)>],
    map_size: (usize, usize),
    input_size: (usize, usize),
) -> Result<(Arc<CsrPattern>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(points.len());
    let mut values = Vec::new();
    for p in points {
        let mut merged = BTreeMap::new();
        if let Some(p) = p {
            for (idx, wt) in bilinear_weights(*p, map_size, input_size)? {
                *merged.entry(idx).or_insert(0.0) += wt;
            }
        }
        rows.push(merged.keys().copied().collect());
        values.extend(merged.values());
    }
    let pattern = CsrPattern::from_rows(map_size.0 * map_size.1, &rows)?;
    Ok((Arc::new(pattern), values))
}

/// Bilinear sample of a `[C, S_h, S_w]` map, giving `[C]`.
pub fn bilinear_sample(map: &Tensor, point: (f64, f64), input_size: (usize, usize)) -> Result<Tensor> {
    if map.rank() != 3 {
        return Err(Error::Shape(format!("expected a [C, S, S] map, got {:?}", map.shape())));
    }
    let (c, sh, sw) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let (pattern, values) = sampling_matrix(&[Some(point)], (sh, sw), input_size)?;
    let texels = map.reshape(&[c, sh * sw])?.transpose()?;
    Ok(Tensor::spmm(&Tensor::vector(values), &pattern, &texels)?.reshape(&[c])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_center_is_identity() {
        // 8x8 input onto a 4x4 map: texel (1, 2) is centered at pixel (2.5, 4.5)
        let map = Tensor::new(&[1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let v = bilinear_sample(&map, (2.5, 4.5), (8, 8)).unwrap();
        assert_eq!(v.data(), [6.0]);
    }

    #[test]
    fn midpoint_blend() {
        let map = Tensor::new(&[1, 1, 2], vec![0.0, 2.0]).unwrap();
        // texel centers at pixel columns 0.5 and 2.5 of a 1x4 input
        let v = bilinear_sample(&map, (0.0, 1.5), (1, 4)).unwrap();
        assert!((v.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn border_clamps_and_rejects_outside() {
        let map = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = bilinear_sample(&map, (-0.5, -0.5), (4, 4)).unwrap();
        assert_eq!(v.data(), [1.0]);
        assert!(bilinear_sample(&map, (4.0, 0.0), (4, 4)).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for k in 0..50 {
            let p = (k as f64 * 0.37 % 15.0 - 0.4, k as f64 * 0.91 % 15.0 - 0.2);
            let w = bilinear_weights(p, (5, 3), (16, 16)).unwrap();
            let s: f64 = w.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
