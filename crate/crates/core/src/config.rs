//! Run configuration: JSON with full defaulting and validation.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::IoContext;
use crate::features::{BackboneConfig, FeatureMode};
use crate::graph::GraphNetConfig;
use crate::mesh::{blob, capsule_man, CapsuleManConfig, TemplateMesh};
use crate::scene::SceneConfig;
use crate::{Error, Result};

/// Which template mesh to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TemplatePreset {
    /// Capsule man; `vertices` picks the closest resolution, default about 400.
    Capsule {
        #[serde(default)]
        vertices: Option<usize>,
    },
    /// Banded ellipsoid, useful for tiny tests.
    Blob { rings: usize, around: usize, parts: u8 },
}

impl Default for TemplatePreset {
    fn default() -> Self {
        TemplatePreset::Capsule { vertices: None }
    }
}

impl TemplatePreset {
    pub fn build(&self) -> Result<TemplateMesh> {
        match *self {
            TemplatePreset::Capsule { vertices: None } => capsule_man(&CapsuleManConfig::desk()),
            TemplatePreset::Capsule { vertices: Some(n) } => capsule_man(&CapsuleManConfig::for_vertex_count(n)),
            TemplatePreset::Blob { rings, around, parts } => blob(rings, around, parts),
        }
    }
}

/// `count` consecutive seeds starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: usize,
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.start + i).collect()
    }

    fn overlaps(&self, other: &SeedRange) -> bool {
        let end = |r: &SeedRange| r.start + r.count as u64;
        self.count > 0 && other.count > 0 && self.start < end(other) && other.start < end(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: SeedRange,
    pub test: SeedRange,
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: SeedRange { start: 0, count: 64 },
            test: SeedRange {
                start: 1_000_000,
                count: 32,
            },
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate the training split every this many epochs; 0 means only
    /// before training and after the last epoch.
    pub train_every: usize,
    /// Number of scenes whose predicted and ground-truth meshes are exported.
    pub export_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_every: 0,
            export_count: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub template: TemplatePreset,
    pub backbone: BackboneConfig,
    pub gcn: GraphNetConfig,
    pub feature_mode: FeatureMode,
    pub dataset: DatasetConfig,
    pub schedule: Vec<Stage>,
    pub adam: AdamParams,
    pub batch_size: usize,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

/// Adam moments; the learning rate comes from the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Capsule man, 56x56 images, 30 epochs.
    pub fn desk() -> Self {
        RunConfig {
            template: TemplatePreset::default(),
            backbone: BackboneConfig::desk(),
            gcn: GraphNetConfig::default(),
            feature_mode: FeatureMode::Local,
            dataset: DatasetConfig::default(),
            schedule: desk_schedule(),
            adam: AdamParams::default(),
            batch_size: 1,
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs/desk"),
            seed: 0,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    /// Learning rate in effect during 1-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for s in &self.schedule {
            end += s.epochs;
            if epoch <= end {
                return s.lr;
            }
        }
        self.schedule.last().map_or(0.0, |s| s.lr)
    }

    /// Multiplies every stage length by `factor`, keeping at least one epoch.
    pub fn scale_epochs(&mut self, factor: f64) -> Result<()> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Config(format!("epoch scale {factor} must be positive")));
        }
        for s in &mut self.schedule {
            s.epochs = ((s.epochs as f64 * factor).round() as usize).max(1);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("schedule is empty".into()));
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if s.epochs == 0 {
                return Err(Error::Config(format!("schedule stage {i} has zero epochs")));
            }
            if !(s.lr.is_finite() && s.lr > 0.0) {
                return Err(Error::Config(format!("schedule stage {i} has learning rate {}", s.lr)));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.dataset.train.count == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        if self.dataset.train.overlaps(&self.dataset.test) {
            return Err(Error::Config("train and test seed ranges overlap".into()));
        }
        self.dataset.scene.validate()?;
        self.backbone.validate()?;
        let s = &self.dataset.scene;
        if s.height != self.backbone.input_size || s.width != self.backbone.input_size {
            return Err(Error::Config(format!(
                "scene size {}x{} does not match backbone input {}",
                s.height, s.width, self.backbone.input_size
            )));
        }
        if self.gcn.hidden == 0 {
            return Err(Error::Config("gcn hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_reader(BufReader::new(File::open(path).at(path)?))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Whether the two configs differ only in feature mode and output directory.
    pub fn same_except_mode(&self, other: &RunConfig) -> bool {
        let strip = |c: &RunConfig| RunConfig {
            feature_mode: FeatureMode::Local,
            output_dir: PathBuf::new(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

/// 24 epochs at 1e-3, 4 at 1e-4, 2 at 1e-5.
pub fn desk_schedule() -> Vec<Stage> {
    vec![
        Stage { epochs: 24, lr: 1e-3 },
        Stage { epochs: 4, lr: 1e-4 },
        Stage { epochs: 2, lr: 1e-5 },
    ]
}

/// 12 epochs at 1e-4, 2 at 1e-5, 1 at 1e-6.
pub fn full_size_schedule() -> Vec<Stage> {
    vec![
        Stage { epochs: 12, lr: 1e-4 },
        Stage { epochs: 2, lr: 1e-5 },
        Stage { epochs: 1, lr: 1e-6 },
    ]
}
