use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor, TensorError};

/// Central-difference check of reverse-mode gradients.
///
/// The discrepancy of one coordinate is `|a - n| / max(|a|, |n|, floor)`,
/// where `a` is the reverse-mode value and `n` the central difference. The
/// floor keeps coordinates with near-zero gradient from dominating through
/// roundoff alone.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    pub tol: f64,
    pub floor: f64,
    /// Checks at most this many coordinates per input tensor (seeded sample).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the largest discrepancy.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
}

impl GradCheck {
    pub fn new(h: f64, tol: f64) -> Self {
        GradCheck {
            h,
            tol,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_max_coords(mut self, n: usize, seed: u64) -> Self {
        self.max_coords = Some(n);
        self.seed = seed;
        self
    }

    pub fn run<F>(&self, f: F, point: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&[Tensor]) -> Result<Tensor>,
    {
        if !(self.h > 0.0) {
            return Err(TensorError::Invalid {
                op: "grad_check",
                msg: format!("step must be positive, got {}", self.h),
            });
        }
        let leaves: Vec<Tensor> = point.iter().map(Tensor::to_parameter).collect();
        let y = f(&leaves)?;
        if y.len() != 1 {
            return Err(TensorError::NonScalarRoot(y.shape().to_vec()));
        }
        let grads = y.backward()?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
            checked: 0,
            passed: true,
        };
        for (ti, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; leaf.len()]);
            let coords: Vec<usize> = match self.max_coords {
                Some(n) if n < leaf.len() => {
                    let mut c = sample(&mut rng, leaf.len(), n).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..leaf.len()).collect(),
            };
            for j in coords {
                let eval = |delta: f64| -> Result<f64> {
                    let mut args: Vec<Tensor> = point.iter().map(Tensor::detach).collect();
                    let mut d = args[ti].to_vec();
                    d[j] += delta;
                    args[ti] = Tensor::new(point[ti].shape(), d)?;
                    Ok(f(&args)?.item())
                };
                let numeric = (eval(self.h)? - eval(-self.h)?) / (2.0 * self.h);
                let a = analytic[j];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(self.floor);
                report.checked += 1;
                report.max_abs_error = report.max_abs_error.max(abs);
                if rel > report.max_rel_error || rel.is_nan() {
                    report.max_rel_error = rel;
                    report.worst = Some((ti, j));
                }
            }
        }
        report.passed = report.max_rel_error <= self.tol;
        Ok(report)
    }
}

/// Checks `f` at `point` with step `h` against tolerance `tol`.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    GradCheck::new(h, tol).run(f, point)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_norm_passes() {
        let x = Tensor::from_f64(&[1, 4], &[0.3, -1.2, 0.8, 2.0]).unwrap();
        let r = grad_check(|p| Ok(p[0].l2_norm(1)?.sum()), &[x], 1e-6, 1e-5).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn constant_has_zero_discrepancy() {
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let r = grad_check(|_| Ok(Tensor::scalar(4.0)), &[x], 1e-6, 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn non_scalar_rejected() {
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            grad_check(|p| Ok(p[0].relu()), &[x], 1e-6, 1e-5),
            Err(TensorError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn wrong_gradient_detected() {
        // relu(x) differentiated at a kink-free point, but fed through abs of a
        // negative value: the check itself must be sensitive to real errors.
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = grad_check(
            |p| {
                // value is x0^2 but the tape only sees a constant
                let v = p[0].data()[0] * p[0].data()[0];
                Ok(Tensor::scalar(v).add(&p[0].sum().scale(0.0))?)
            },
            &[x],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, Some((0, 0)));
    }
}
