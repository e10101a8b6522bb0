//! Image feature pyramid and per-vertex feature assembly.

mod backbone;
mod sample;

pub use backbone::{backbone_forward, init_backbone, BackboneConfig};
pub use sample::{bilinear_sample, bilinear_weights, sampling_matrix};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correspondence::{CorrespondenceSet, Pixel};
use crate::mesh::TemplateMesh;
use crate::tensor::{CsrPattern, Tensor};
use crate::{Error, Result};

/// Which per-vertex features feed the graph network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Pixel-aligned samples of stages 1-4 plus the global vector.
    #[default]
    Local,
    /// The global vector only.
    Global,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(FeatureMode::Local),
            "global" => Ok(FeatureMode::Global),
            _ => Err(Error::Config(format!("feature mode must be local or global, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Local => "local",
            FeatureMode::Global => "global",
        })
    }
}

/// Four spatial maps `[C_l, S_l, S_l]` and the global vector `[C_5]`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub stages: Vec<Tensor>,
    pub global: Tensor,
    /// `(H, W)` of the input image.
    pub input_size: (usize, usize),
}

impl FeaturePyramid {
    pub fn new(stages: Vec<Tensor>, global: Tensor, input_size: (usize, usize)) -> Result<Self> {
        if stages.len() != 4 {
            return Err(Error::Shape(format!("pyramid needs 4 spatial stages, got {}", stages.len())));
        }
        let mut prev = usize::MAX;
        for (l, s) in stages.iter().enumerate() {
            if s.rank() != 3 || s.shape()[1] == 0 || s.shape()[1] >= prev {
                return Err(Error::Shape(format!(
                    "stage {} has shape {:?}; sizes must be positive and strictly decreasing",
                    l + 1,
                    s.shape()
                )));
            }
            prev = s.shape()[1];
        }
        if global.rank() != 1 {
            return Err(Error::Shape(format!("global feature must be a vector, got {:?}", global.shape())));
        }
        Ok(FeaturePyramid {
            stages,
            global,
            input_size,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        let c: Vec<usize> = self.stages.iter().map(|s| s.shape()[0]).collect();
        FeatureLayout::new([c[0], c[1], c[2], c[3], self.global.len()])
    }
}

/// Column offsets of one `F_M` row:
/// `[stage 1 | stage 2 | stage 3 | stage 4 | global | c_k (2) | rest pose (3)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub channels: [usize; 5],
}

impl FeatureLayout {
    pub fn new(channels: [usize; 5]) -> Self {
        FeatureLayout { channels }
    }

    /// `D`, the sum of all stage channels.
    pub fn d(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn width(&self) -> usize {
        self.d() + 5
    }

    /// Start column of stage `l` in `1..=5`.
    pub fn stage_offset(&self, l: usize) -> usize {
        self.channels[..l - 1].iter().sum()
    }

    /// Columns taken by stages 1-4.
    pub fn local_width(&self) -> usize {
        self.stage_offset(5)
    }

    pub fn pixel_offset(&self) -> usize {
        self.d()
    }

    pub fn rest_offset(&self) -> usize {
        self.d() + 2
    }
}

/// The `N_v x (D + 5)` input of the graph network.
#[derive(Clone, Debug)]
pub struct VertexFeatureMatrix {
    pub data: Tensor,
    pub layout: FeatureLayout,
}

fn broadcast_rows(v: &Tensor, n: usize) -> Result<Tensor> {
    let pattern = Arc::new(CsrPattern::from_rows(1, &vec![vec![0]; n])?);
    Ok(Tensor::spmm(&Tensor::ones(&[n]), &pattern, &v.reshape(&[1, v.len()])?)?)
}

/// Builds `F_M`. Present vertices sample stages 1-4 bilinearly at their pixel;
/// absent ones get zeros there and in the pixel slots. The pixel `(i, j)` is
/// stored as `(j / W, i / H)`.
pub fn assemble_vertex_features(
    pyramid: &FeaturePyramid,
    corr: &CorrespondenceSet,
    template: &TemplateMesh,
) -> Result<VertexFeatureMatrix> {
    let n = template.num_vertices();
    if corr.len() != n {
        return Err(Error::Shape(format!("{} correspondences for {n} vertices", corr.len())));
    }
    let (h, w) = pyramid.input_size;
    let points: Vec<Option<(f64, f64)>> = corr
        .pixel
        .iter()
        .map(|p| {
            p.map(|p: Pixel| {
                let (r, c) = p.zero_based();
                (r as f64, c as f64)
            })
        })
        .collect();
    let mut cols = Vec::with_capacity(7);
    for map in &pyramid.stages {
        let (c, s) = (map.shape()[0], map.shape()[1]);
        let (pattern, weights) = sampling_matrix(&points, (s, map.shape()[2]), (h, w))?;
        let texels = map.reshape(&[c, s * map.shape()[2]])?.transpose()?;
        cols.push(Tensor::spmm(&Tensor::vector(weights), &pattern, &texels)?);
    }
    cols.push(broadcast_rows(&pyramid.global, n)?);
    let mut pix = Vec::with_capacity(2 * n);
    for p in &corr.pixel {
        match p {
            Some(p) => pix.extend([p.j as f64 / w as f64, p.i as f64 / h as f64]),
            None => pix.extend([0.0, 0.0]),
        }
    }
    cols.push(Tensor::new(&[n, 2], pix)?);
    cols.push(template.rest_mesh().to_tensor());
    let refs: Vec<&Tensor> = cols.iter().collect();
    Ok(VertexFeatureMatrix {
        data: Tensor::concat(&refs, 1)?,
        layout: pyramid.layout(),
    })
}

/// `F_M` with every vertex treated as absent.
pub fn global_only_features(pyramid: &FeaturePyramid, template: &TemplateMesh) -> Result<VertexFeatureMatrix> {
    assemble_vertex_features(pyramid, &CorrespondenceSet::all_absent(template.num_vertices()), template)
}

pub fn vertex_features(
    mode: FeatureMode,
    pyramid: &FeaturePyramid,
    corr: &CorrespondenceSet,
    template: &TemplateMesh,
) -> Result<VertexFeatureMatrix> {
    match mode {
        FeatureMode::Local => assemble_vertex_features(pyramid, corr, template),
        FeatureMode::Global => global_only_features(pyramid, template),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::blob;

    fn constant_pyramid(vals: [f64; 4]) -> FeaturePyramid {
        let sizes = [8, 4, 2, 1];
        let stages = (0..4).map(|l| Tensor::full(&[l + 1, sizes[l], sizes[l]], vals[l])).collect();
        FeaturePyramid::new(stages, Tensor::vector(vec![7.0, 8.0]), (16, 16)).unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = FeatureLayout::new([64, 256, 512, 1024, 2048]);
        assert_eq!(l.d(), 3904);
        assert_eq!(l.width(), 3909);
        assert_eq!(l.stage_offset(2), 64);
        assert_eq!(l.local_width(), 1856);
        assert_eq!(l.rest_offset(), 3906);
    }

    #[test]
    fn constant_field_and_absent_rows() {
        let t = blob(4, 5, 2).unwrap();
        let p = constant_pyramid([1.0, 2.0, 3.0, 4.0]);
        let mut corr = CorrespondenceSet::all_absent(t.num_vertices());
        corr.pixel[3] = Some(Pixel { i: 16, j: 1 });
        corr.distance[3] = 0.0;
        let f = assemble_vertex_features(&p, &corr, &t).unwrap();
        let width = f.layout.width();
        assert_eq!(f.data.shape(), [t.num_vertices(), width]);
        let row = |k: usize| &f.data.data()[k * width..(k + 1) * width];
        assert_eq!(&row(3)[..10], &[1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0]);
        assert_eq!(&row(3)[10..14], &[7.0, 8.0, 1.0 / 16.0, 1.0]);
        assert!(row(0)[..10].iter().all(|&x| x == 0.0));
        assert_eq!(&row(0)[10..14], &[7.0, 8.0, 0.0, 0.0]);
        assert_eq!(&row(0)[14..], &t.vertices()[0]);
    }

    #[test]
    fn global_equals_all_absent() {
        let t = blob(4, 5, 2).unwrap();
        let p = constant_pyramid([1.0, 2.0, 3.0, 4.0]);
        let g = global_only_features(&p, &t).unwrap();
        let a = assemble_vertex_features(&p, &CorrespondenceSet::all_absent(t.num_vertices()), &t).unwrap();
        assert_eq!(g.data.data(), a.data.data());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("global".parse::<FeatureMode>().unwrap(), FeatureMode::Global);
        assert!("both".parse::<FeatureMode>().is_err());
        assert_eq!(serde_json::to_string(&FeatureMode::Local).unwrap(), "\"local\"");
    }
}
