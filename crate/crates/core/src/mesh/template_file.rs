use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JointRegressor, Rig, TemplateMesh, TemplateParts, VertexIuv};
use crate::error::IoContext;
use crate::Result;

/// JSON form of a template. The regressor is stored as sparse triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub iuv: Vec<VertexIuv>,
    pub delta: Vec<f64>,
    pub part_count: u8,
    pub regressor: JointRegressor,
    pub joint_names: Vec<String>,
    pub root_joint: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<Rig>,
}

impl TemplateFile {
    pub fn from_template(t: &TemplateMesh) -> Self {
        TemplateFile {
            vertices: t.vertices().to_vec(),
            faces: t.faces().to_vec(),
            iuv: t.vertex_iuv().to_vec(),
            delta: t.delta().to_vec(),
            part_count: t.part_count(),
            regressor: t.regressor().clone(),
            joint_names: t.joint_names().to_vec(),
            root_joint: t.root_joint(),
            rig: t.rig().cloned(),
        }
    }

    /// Validates and rebuilds the template, keeping the stored thresholds.
    pub fn into_template(self) -> Result<TemplateMesh> {
        let regressor = JointRegressor::new(
            self.regressor.n_joints,
            self.regressor.n_vertices,
            self.regressor.triplets,
        )?;
        TemplateMesh::with_delta(
            TemplateParts {
                vertices: self.vertices,
                faces: self.faces,
                vertex_iuv: self.iuv,
                part_count: self.part_count,
                regressor,
                joint_names: self.joint_names,
                root_joint: self.root_joint,
                rig: self.rig,
            },
            Some(self.delta),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).at(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush().at(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path).at(path)?))?)
    }
}
