//! Semantic graph convolutions and the residual vertex regressor.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::init::{glorot_bound, uniform, zeros};
use crate::tensor::{CsrPattern, ParamSet, Tensor};
use crate::{Error, Result};

/// One semantic graph convolution: `out_i = sum_j softmax_j(logits_ij) (X W)_j + b`
/// over the stored entries `j` of row `i` (neighbors and self).
pub fn semgconv_forward(
    x: &Tensor,
    weight: &Tensor,
    edge_logits: &Tensor,
    bias: &Tensor,
    pattern: &Arc<CsrPattern>,
) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != pattern.rows() || pattern.rows() != pattern.cols() {
        return Err(Error::Shape(format!(
            "features {:?} do not match a {}x{} adjacency",
            x.shape(),
            pattern.rows(),
            pattern.cols()
        )));
    }
    if edge_logits.shape() != [pattern.nnz()] {
        return Err(Error::Shape(format!(
            "edge logits {:?} do not match {} adjacency entries",
            edge_logits.shape(),
            pattern.nnz()
        )));
    }
    let alpha = edge_logits.segment_softmax(pattern)?;
    let xw = x.matmul(weight)?;
    Ok(Tensor::spmm(&alpha, pattern, &xw)?.add(bias)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNetConfig {
    pub hidden: usize,
    pub blocks: usize,
    /// Predict offsets added to the rest pose instead of absolute positions.
    #[serde(default)]
    pub offset_mode: bool,
}

impl Default for GraphNetConfig {
    fn default() -> Self {
        GraphNetConfig {
            hidden: 64,
            blocks: 4,
            offset_mode: false,
        }
    }
}

/// Input projection, `blocks` residual pairs of semantic convolutions, linear head.
#[derive(Clone, Debug)]
pub struct GraphNet {
    pub config: GraphNetConfig,
    pub input_width: usize,
    pub pattern: Arc<CsrPattern>,
}

fn layer_name(b: usize, l: usize, what: &str) -> String {
    format!("gcn.block{b}.layer{l}.{what}")
}

impl GraphNet {
    pub fn new(config: GraphNetConfig, input_width: usize, pattern: Arc<CsrPattern>) -> Result<Self> {
        if config.hidden == 0 || input_width == 0 {
            return Err(Error::Config("graph net widths must be positive".into()));
        }
        if pattern.rows() != pattern.cols() {
            return Err(Error::Shape("adjacency pattern must be square".into()));
        }
        Ok(GraphNet {
            config,
            input_width,
            pattern,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.pattern.rows()
    }

    /// Glorot-uniform weights, zero edge logits and biases.
    pub fn init_params(&self, seed: u64, params: &mut ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.config.hidden;
        params.insert("gcn.input.weight", uniform(&[self.input_width, h], glorot_bound(self.input_width, h), &mut rng));
        params.insert("gcn.input.bias", zeros(&[h]));
        for b in 1..=self.config.blocks {
            for l in 1..=2 {
                params.insert(layer_name(b, l, "weight"), uniform(&[h, h], glorot_bound(h, h), &mut rng));
                params.insert(layer_name(b, l, "edge_logits"), zeros(&[self.pattern.nnz()]));
                params.insert(layer_name(b, l, "bias"), zeros(&[h]));
            }
        }
        params.insert("gcn.head.weight", uniform(&[h, 3], glorot_bound(h, 3), &mut rng));
        params.insert("gcn.head.bias", zeros(&[3]));
    }

    fn layer(&self, x: &Tensor, params: &ParamSet, b: usize, l: usize) -> Result<Tensor> {
        semgconv_forward(
            x,
            params.require(&layer_name(b, l, "weight"))?,
            params.require(&layer_name(b, l, "edge_logits"))?,
            params.require(&layer_name(b, l, "bias"))?,
            &self.pattern,
        )
    }

    /// Maps `[N_v, input_width]` features to `[N_v, 3]` positions. `rest` is
    /// required in offset mode.
    pub fn forward(&self, features: &Tensor, params: &ParamSet, rest: Option<&Tensor>) -> Result<Tensor> {
        if features.shape() != [self.num_vertices(), self.input_width] {
            return Err(Error::Shape(format!(
                "graph net expects [{}, {}], got {:?}",
                self.num_vertices(),
                self.input_width,
                features.shape()
            )));
        }
        let mut h = features
            .matmul(params.require("gcn.input.weight")?)?
            .add(params.require("gcn.input.bias")?)?
            .relu();
        for b in 1..=self.config.blocks {
            let inner = self.layer(&h, params, b, 1)?.relu();
            h = h.add(&self.layer(&inner, params, b, 2)?)?.relu();
        }
        let out = h
            .matmul(params.require("gcn.head.weight")?)?
            .add(params.require("gcn.head.bias")?)?;
        if self.config.offset_mode {
            let rest = rest.ok_or_else(|| Error::Invalid("offset mode needs the rest pose".into()))?;
            Ok(out.add(rest)?)
        } else {
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Arc<CsrPattern> {
        Arc::new(CsrPattern::from_rows(3, &[vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]]).unwrap())
    }

    #[test]
    fn uniform_logits_average_rows() {
        let p = triangle();
        let x = Tensor::from_f64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let eye = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = semgconv_forward(&x, &eye, &Tensor::zeros(&[9]), &Tensor::zeros(&[2]), &p).unwrap();
        for r in 0..3 {
            assert!((y.data()[2 * r] - 3.0).abs() < 1e-15);
            assert!((y.data()[2 * r + 1] - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn self_loops_only_is_linear() {
        let p = Arc::new(CsrPattern::from_rows(2, &[vec![0], vec![1]]).unwrap());
        let x = Tensor::from_f64(&[2, 1], &[2.0, -1.0]).unwrap();
        let w = Tensor::from_f64(&[1, 2], &[3.0, 0.5]).unwrap();
        let b = Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap();
        let y = semgconv_forward(&x, &w, &Tensor::from_f64(&[2], &[4.0, -7.0]).unwrap(), &b, &p).unwrap();
        assert_eq!(y.data(), [7.0, 1.0, -2.0, -0.5]);
    }

    #[test]
    fn zero_head_gives_bias() {
        let net = GraphNet::new(GraphNetConfig::default(), 4, triangle()).unwrap();
        let mut params = ParamSet::new();
        net.init_params(3, &mut params);
        params.insert("gcn.head.weight", Tensor::zeros(&[64, 3]));
        params.insert("gcn.head.bias", Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let x = Tensor::from_f64(&[3, 4], &(0..12).map(f64::from).collect::<Vec<_>>()).unwrap();
        let y = net.forward(&x, &params, None).unwrap();
        assert_eq!(y.data(), [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let net = GraphNet::new(GraphNetConfig::default(), 10, triangle()).unwrap();
        let (mut a, mut b) = (ParamSet::new(), ParamSet::new());
        net.init_params(5, &mut a);
        net.init_params(5, &mut b);
        assert!(a.bit_eq(&b));
        let w = a.expect("gcn.input.weight");
        assert!(w.data().iter().all(|v| v.abs() <= glorot_bound(10, 64)));
        assert!(a.expect("gcn.block1.layer2.edge_logits").data().iter().all(|&v| v == 0.0));
        assert!(net.forward(&Tensor::zeros(&[3, 9]), &a, None).is_err());
    }
}
