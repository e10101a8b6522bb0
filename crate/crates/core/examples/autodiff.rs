//! Fits a two-layer network to a toy regression with the tape autodiff and Adam.

use pixgcn::tensor::{adam_step, grad_check, AdamConfig, AdamState, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pixgcn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut uniform = |shape: &[usize], a: f64| {
        let n = shape.iter().product();
        Tensor::parameter(shape, (0..n).map(|_| rng.gen_range(-a..a)).collect())
    };
    let x = uniform(&[32, 2], 1.0)?.detach();
    let target: Vec<f64> = x.data().chunks(2).map(|p| p[0] * p[1]).collect();
    let y = Tensor::new(&[32, 1], target)?;

    let mut params = ParamSet::new();
    params.insert("w1", uniform(&[2, 16], 0.8)?);
    params.insert("b1", uniform(&[16], 0.1)?);
    params.insert("w2", uniform(&[16, 1], 0.4)?);
    let loss = |p: &ParamSet| -> pixgcn::tensor::Result<Tensor> {
        let h = x.matmul(p.require("w1")?)?.add(p.require("b1")?)?.relu();
        let e = h.matmul(p.require("w2")?)?.sub(&y)?;
        Ok(e.mul(&e)?.mean())
    };

    let point: Vec<Tensor> = params.iter().map(|(_, t)| t.detach()).collect();
    let report = grad_check(
        |t| {
            let mut p = ParamSet::new();
            for ((name, _), v) in params.iter().zip(t) {
                p.insert(name.clone(), v.clone());
            }
            loss(&p)
        },
        &point,
        1e-6,
        1e-5,
    )?;
    println!("gradient check: max relative error {:.2e} over {} coordinates", report.max_rel_error, report.checked);

    let mut state = AdamState::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    for step in 0..=500 {
        let l = loss(&params)?;
        if step % 100 == 0 {
            println!("step {step:3}: mse {:.5}", l.item());
        }
        let grads = l.backward()?;
        adam_step(&mut params, &grads, &mut state);
    }
    Ok(())
}
