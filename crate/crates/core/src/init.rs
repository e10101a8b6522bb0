use rand::Rng;

use crate::tensor::Tensor;

pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Leaf tensor with entries drawn from `uniform(-bound, bound)` in row-major order.
pub(crate) fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::parameter(shape, data).expect("shape matches data")
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor {
    Tensor::parameter(shape, vec![0.0; shape.iter().product()]).expect("shape matches data")
}
