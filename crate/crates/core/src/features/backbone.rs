//! Plain strided convolutional stack standing in for a deep backbone.
//!
//! Stage `l` is `relu(conv3x3(x, stride 2, pad 1))`. Stages 1-4 are kept as
//! spatial maps; stage 5 is average-pooled and passed through a linear layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureLayout, FeaturePyramid};
use crate::init::{glorot_bound, uniform, zeros};
use crate::tensor::{ParamSet, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub channels: [usize; 5],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneConfig {
    pub fn desk() -> Self {
        BackboneConfig {
            in_channels: 3,
            input_size: 56,
            channels: [8, 16, 32, 64, 128],
        }
    }

    /// Dimensions of the large preset; weights must come from a checkpoint.
    pub fn full_size() -> Self {
        BackboneConfig {
            in_channels: 3,
            input_size: 224,
            channels: [64, 256, 512, 1024, 2048],
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.channels)
    }

    /// Spatial size after each of the 5 stages.
    pub fn stage_sizes(&self) -> [usize; 5] {
        let mut s = self.input_size;
        [0; 5].map(|_| {
            s = (s + 2 - 3) / 2 + 1;
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(Error::Config("backbone channels must be positive".into()));
        }
        let s = self.stage_sizes();
        if self.input_size < 2 || s[3] >= s[2] {
            return Err(Error::Config(format!(
                "input size {} too small for four distinct stage resolutions {s:?}",
                self.input_size
            )));
        }
        Ok(())
    }
}

fn conv_name(l: usize, what: &str) -> String {
    format!("backbone.stage{l}.conv.{what}")
}

/// He-uniform convolution weights, Glorot-uniform global transform, zero biases.
pub fn init_backbone(cfg: &BackboneConfig, seed: u64, params: &mut ParamSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_in = cfg.in_channels;
    for (l, &c) in cfg.channels.iter().enumerate() {
        let bound = (6.0 / (c_in * 9) as f64).sqrt();
        params.insert(conv_name(l + 1, "weight"), uniform(&[c, c_in, 3, 3], bound, &mut rng));
        params.insert(conv_name(l + 1, "bias"), zeros(&[c]));
        c_in = c;
    }
    let c5 = cfg.channels[4];
    params.insert("backbone.global.weight", uniform(&[c5, c5], glorot_bound(c5, c5), &mut rng));
    params.insert("backbone.global.bias", zeros(&[c5]));
}

/// Runs the backbone on a `[C_in, H, W]` image.
pub fn backbone_forward(image: &Tensor, params: &ParamSet, cfg: &BackboneConfig) -> Result<FeaturePyramid> {
    let want = [cfg.in_channels, cfg.input_size, cfg.input_size];
    if image.shape() != want {
        return Err(Error::Shape(format!("backbone expects {want:?}, got {:?}", image.shape())));
    }
    let mut x = image.clone();
    let mut stages = Vec::with_capacity(4);
    for l in 1..=5 {
        let w = params.require(&conv_name(l, "weight"))?;
        let b = params.require(&conv_name(l, "bias"))?;
        x = x.conv2d(w, Some(b), 2, 1)?.relu();
        if l < 5 {
            stages.push(x.clone());
        }
    }
    let c5 = cfg.channels[4];
    let pooled = x.global_avg_pool()?.reshape(&[1, c5])?;
    let global = pooled
        .matmul(params.require("backbone.global.weight")?)?
        .add(params.require("backbone.global.bias")?)?
        .reshape(&[c5])?;
    FeaturePyramid::new(stages, global, (cfg.input_size, cfg.input_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_shapes() {
        let cfg = BackboneConfig::desk();
        assert_eq!(cfg.stage_sizes()[..4], [28, 14, 7, 4]);
        let mut p = ParamSet::new();
        init_backbone(&cfg, 1, &mut p);
        let img = Tensor::full(&[3, 56, 56], 0.5);
        let pyr = backbone_forward(&img, &p, &cfg).unwrap();
        let shapes: Vec<_> = pyr.stages.iter().map(|s| s.shape().to_vec()).collect();
        assert_eq!(shapes, [[8, 28, 28], [16, 14, 14], [32, 7, 7], [64, 4, 4]]);
        assert_eq!(pyr.global.shape(), [128]);
        assert_eq!(pyr.layout().width(), 253);
    }

    #[test]
    fn zero_image_gives_zero_pyramid() {
        let cfg = BackboneConfig::desk();
        let mut p = ParamSet::new();
        init_backbone(&cfg, 2, &mut p);
        let pyr = backbone_forward(&Tensor::zeros(&[3, 56, 56]), &p, &cfg).unwrap();
        assert!(pyr.stages.iter().all(|s| s.data().iter().all(|&v| v == 0.0)));
        assert!(pyr.global.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_size_preset_sizes() {
        let cfg = BackboneConfig::full_size();
        assert_eq!(cfg.stage_sizes()[..4], [112, 56, 28, 14]);
        assert_eq!(cfg.layout().width(), 3909);
    }

    #[test]
    fn wrong_input_rejected() {
        let cfg = BackboneConfig::desk();
        let mut p = ParamSet::new();
        init_backbone(&cfg, 0, &mut p);
        assert!(backbone_forward(&Tensor::zeros(&[3, 32, 32]), &p, &cfg).is_err());
    }
}
