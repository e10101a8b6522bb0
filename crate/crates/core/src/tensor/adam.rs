use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Element, Gradients, Tensor};

/// Named parameter leaves, iterated in key order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Element = f64> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: BTreeMap::new() }
    }

    /// Inserts a value as a gradient-receiving leaf under `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let leaf = if value.requires_grad() && value.is_leaf() {
            value
        } else {
            value.to_parameter()
        };
        self.params.insert(name.into(), leaf);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Looks up a parameter, failing with its name when absent.
    pub fn require(&self, name: &str) -> super::Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| super::TensorError::Invalid {
            op: "params",
            msg: format!("missing parameter {name:?}"),
        })
    }

    /// Looks up a parameter that must exist.
    pub fn expect(&self, name: &str) -> &Tensor<T> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&self) {
        for p in self.params.values() {
            p.zero_grad();
        }
    }

    /// Bitwise equality of names, shapes, and values.
    pub fn bit_eq(&self, other: &ParamSet<T>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f64> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdamReport {
    pub updated: usize,
    pub missing_grad: usize,
    pub rejected_nan: usize,
}

/// One Adam update with bias correction. Parameters without a gradient are
/// skipped; parameters whose gradient holds NaN are left untouched and counted.
pub fn adam_step<T: Element>(params: &mut ParamSet<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> AdamReport {
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one, lr, eps) = (T::one(), T::from_f64(c.lr), T::from_f64(c.eps));
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));

    let mut report = AdamReport::default();
    for (name, p) in params.params.iter_mut() {
        let Some(g) = grads.get(p) else {
            log::warn!("adam: no gradient for {name}, skipped");
            report.missing_grad += 1;
            continue;
        };
        if g.iter().any(|v| v.is_nan()) {
            log::warn!("adam: NaN gradient for {name}, update rejected");
            report.rejected_nan += 1;
            continue;
        }
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
        let mut data = p.to_vec();
        for i in 0..data.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
        *p = Tensor::parameter(p.shape(), data).expect("shape preserved");
        report.updated += 1;
    }
    report
}
