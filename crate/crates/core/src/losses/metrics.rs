use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

fn check(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("joint sets of sizes {} and {}", a.len(), b.len())));
    }
    Ok(())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean joint distance after moving both root joints to the origin.
pub fn mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]], root: usize) -> Result<f64> {
    check(pred, gt)?;
    if root >= pred.len() {
        return Err(Error::Invalid(format!("root joint {root} out of range for {} joints", pred.len())));
    }
    let (rp, rg) = (pred[root], gt[root]);
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| dist([p[0] - rp[0], p[1] - rp[1], p[2] - rp[2]], [g[0] - rg[0], g[1] - rg[1], g[2] - rg[2]]))
        .sum();
    Ok(total / pred.len() as f64)
}

/// `x -> s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| self.scale * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + self.translation[i])
    }

    /// `sum_i |T(a_i) - b_i|^2`.
    pub fn residual(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        a.iter().zip(b).map(|(&p, &q)| dist(self.apply(p), q).powi(2)).sum()
    }
}

fn centered(p: &[[f64; 3]]) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let n = p.len() as f64;
    let mean = p.iter().fold(Vector3::zeros(), |acc, q| acc + Vector3::from(*q)) / n;
    (mean, p.iter().map(|q| Vector3::from(*q) - mean).collect())
}

/// Closed-form least-squares similarity from the SVD of the centered
/// cross-covariance with a reflection correction. `None` when the best scale
/// is zero, i.e. `pred` is a single point or uncorrelated with `gt`.
fn umeyama(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Option<SimilarityTransform> {
    let n = pred.len() as f64;
    let (mx, xs) = centered(pred);
    let (my, ys) = centered(gt);
    let var_x = xs.iter().map(|x| x.norm_squared()).sum::<f64>() / n;
    if !(var_x > 0.0) {
        return None;
    }
    let mut cov = Matrix3::zeros();
    for (x, y) in xs.iter().zip(&ys) {
        cov += y * x.transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x;
    if !(scale > 0.0) {
        return None;
    }
    let t = my - scale * r * mx;
    Some(SimilarityTransform {
        scale,
        rotation: [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[(i, j)])),
        translation: [t[0], t[1], t[2]],
    })
}

/// Least-squares similarity transform taking `pred` onto `gt`.
///
/// Rejects sources whose points are coincident or collinear, where the
/// rotation is not unique, and targets that admit no positive scale.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<SimilarityTransform> {
    check(pred, gt)?;
    let (_, xs) = centered(pred);
    let sx = xs.iter().fold(Matrix3::zeros(), |acc, x| acc + x * x.transpose());
    let mut ev: Vec<f64> = sx.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate(format!(
            "{} joints are coincident or collinear; alignment undefined",
            pred.len()
        )));
    }
    umeyama(pred, gt).ok_or_else(|| Error::Degenerate("target joints carry no signal for a positive scale".into()))
}

/// Mean joint distance after the optimal similarity alignment of `pred`.
///
/// Defined for every input: when the optimal scale is zero the aligned
/// prediction collapses onto the target centroid.
pub fn pa_mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    check(pred, gt)?;
    let n = pred.len() as f64;
    Ok(match umeyama(pred, gt) {
        Some(tr) => pred.iter().zip(gt).map(|(&p, &g)| dist(tr.apply(p), g)).sum::<f64>() / n,
        None => {
            let (my, _) = centered(gt);
            let c = [my[0], my[1], my[2]];
            gt.iter().map(|&g| dist(c, g)).sum::<f64>() / n
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<[f64; 3]> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.1, 1.0, 0.3], [0.4, -0.5, 1.0], [0.9, 0.9, 0.9]]
    }

    #[test]
    fn translation_invariance() {
        let a = sample();
        let b: Vec<_> = a.iter().map(|p| [p[0] + 3.0, p[1] - 1.0, p[2]]).collect();
        assert!(mpjpe(&a, &b, 0).unwrap() < 1e-15);
    }

    #[test]
    fn identity_alignment() {
        let a = sample();
        let t = procrustes_align(&a, &a).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.rotation[i][j] - f64::from(u8::from(i == j))).abs() < 1e-9);
            }
            assert!(t.translation[i].abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_known_similarity() {
        let a = sample();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let known = SimilarityTransform {
            scale: 2.0,
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.5, -1.0, 2.0],
        };
        let b: Vec<_> = a.iter().map(|&p| known.apply(p)).collect();
        let t = procrustes_align(&a, &b).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        for i in 0..3 {
            assert!((t.translation[i] - known.translation[i]).abs() < 1e-9);
            for j in 0..3 {
                assert!((t.rotation[i][j] - known.rotation[i][j]).abs() < 1e-9);
            }
        }
        assert!(pa_mpjpe(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn reflection_is_not_used() {
        let a = sample();
        let mirrored: Vec<_> = a.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        let t = procrustes_align(&a, &mirrored).unwrap();
        let r = Matrix3::from_fn(|i, j| t.rotation[i][j]);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_rejected() {
        let line: Vec<_> = (0..4).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(procrustes_align(&line, &line), Err(Error::Degenerate(_))));
        assert!(mpjpe(&line, &line[..2], 0).is_err());
    }
}
