//! Synthetic posed-mesh scenes: articulation, rasterized IUV and input images.

mod camera;
mod image;
mod pose;
mod raster;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use camera::Camera;
pub use image::{corrupt_iuv, depth_shade, image_from_raster, synthesize_image, vertex_texture};
pub use pose::{deform_template, pose_mesh, random_pose, Pose, TWIST_MAX};
pub use raster::{face_iuv, iuv_from_raster, rasterize_iuv, render, Raster, NO_FACE};

use crate::correspondence::IuvImage;
use crate::error::IoContext;
use crate::mesh::{export_obj, Mesh, TemplateMesh};
use crate::tensor::write_tensor;
use crate::{Error, Result, Tensor};

/// Depth tolerance of the z-buffer visibility test, in pixels.
pub const VISIBILITY_TOLERANCE_PX: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub difficulty: f64,
    pub noise_level: f64,
    pub texture_seed: u64,
    /// Margin around the rest pose when fitting the camera.
    pub camera_pad: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 56,
            width: 56,
            difficulty: 0.5,
            noise_level: 0.0,
            texture_seed: 7,
            camera_pad: 1.12,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!("difficulty {} outside [0, 1]", self.difficulty)));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise level {} outside [0, 1]", self.noise_level)));
        }
        if !(self.camera_pad.is_finite() && self.camera_pad > 0.0) {
            return Err(Error::Config("camera pad must be positive".into()));
        }
        Ok(())
    }

    pub fn camera(&self, template: &TemplateMesh) -> Camera {
        Camera::fit_rest(template, self.height, self.width, self.camera_pad)
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub gt_mesh: Mesh,
    /// `[3, H, W]`.
    pub image: Tensor,
    pub iuv: IuvImage,
    pub camera: Camera,
    pub seed: u64,
    pub difficulty: f64,
    /// Z-buffer visibility of each ground-truth vertex.
    pub visible: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    difficulty: f64,
    noise_level: f64,
    height: usize,
    width: usize,
    camera: Camera,
}

/// Poses the template, renders its clean IUV and image, then corrupts the IUV.
pub fn generate_scene(template: &TemplateMesh, cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let camera = cfg.camera(template);
    let gt_mesh = deform_template(template, seed, cfg.difficulty)?;
    let raster = render(&gt_mesh, template, &camera, cfg.height, cfg.width)?;
    if raster.coverage() == 0.0 {
        log::warn!("scene {seed} projects outside the image");
    }
    let image = image_from_raster(&raster, template, &vertex_texture(template, cfg.texture_seed))?;
    let clean = iuv_from_raster(&raster, template);
    let iuv = corrupt_iuv(&clean, template, seed ^ 0x9e37_79b9_7f4a_7c15, cfg.noise_level)?;
    let visible = raster.vertex_visibility(VISIBILITY_TOLERANCE_PX * camera.pixel_size());
    Ok(Scene {
        gt_mesh,
        image,
        iuv,
        camera,
        seed,
        difficulty: cfg.difficulty,
        visible,
    })
}

impl Scene {
    /// Writes `image.mgt`, `iuv.iuv`, `gt.obj` and `manifest.json` into `dir`.
    pub fn export(&self, dir: &Path, template: &TemplateMesh, noise_level: f64) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join("image.mgt");
        let mut w = BufWriter::new(File::create(&path).at(&path)?);
        write_tensor(&mut w, &self.image)?;
        w.flush().at(&path)?;
        self.iuv.save(&dir.join("iuv.iuv"))?;
        export_obj(&self.gt_mesh, template, &dir.join("gt.obj"))?;
        let manifest = Manifest {
            seed: self.seed,
            difficulty: self.difficulty,
            noise_level,
            height: self.iuv.height(),
            width: self.iuv.width(),
            camera: self.camera,
        };
        let path = dir.join("manifest.json");
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path).at(&path)?), &manifest)?;
        Ok(())
    }
}

/// Source of training scenes; only the synthetic backend exists.
pub trait SceneSource {
    fn len(&self) -> usize;
    fn scene(&self, index: usize) -> Result<Scene>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scenes for a list of seeds.
pub struct SyntheticScenes<'a> {
    pub template: &'a TemplateMesh,
    pub config: SceneConfig,
    pub seeds: Vec<u64>,
}

impl SceneSource for SyntheticScenes<'_> {
    fn len(&self) -> usize {
        self.seeds.len()
    }

    fn scene(&self, index: usize) -> Result<Scene> {
        let seed = *self
            .seeds
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("scene index {index} out of range")))?;
        generate_scene(self.template, &self.config, seed)
    }
}
