//! Training losses on predicted meshes and joint-error metrics.

mod metrics;

pub use metrics::{mpjpe, pa_mpjpe, procrustes_align, SimilarityTransform};

use serde::{Deserialize, Serialize};

use crate::mesh::{face_area, face_normals, JointRegressor, Mesh, TemplateMesh, MIN_FACE_AREA};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Weights of (vertex, joint, normal, edge) in the total.
pub const LOSS_WEIGHTS: [f64; 4] = [1.0, 1.0, 0.1, 0.1];

/// Norms below this are treated as zero-length edges.
pub const EDGE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_vertex: f64,
    pub l_joint: f64,
    pub l_edge: f64,
    pub l_normal: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn from_components(l_vertex: f64, l_joint: f64, l_edge: f64, l_normal: f64) -> Self {
        let [wv, wj, wn, we] = LOSS_WEIGHTS;
        LossReport {
            l_vertex,
            l_joint,
            l_edge,
            l_normal,
            l_total: wv * l_vertex + wj * l_joint + wn * l_normal + we * l_edge,
        }
    }
}

fn check_pair(pred: &Tensor, gt: &Mesh) -> Result<()> {
    if pred.shape() != [gt.len(), 3] {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth [{}, 3]",
            pred.shape(),
            gt.len()
        )));
    }
    Ok(())
}

/// `sum_i |v_i - gt_i|_1`.
pub fn loss_vertex(pred: &Tensor, gt: &Mesh) -> Result<Tensor> {
    check_pair(pred, gt)?;
    Ok(pred.sub(&gt.to_tensor())?.abs().sum())
}

/// L1 distance between regressed joints.
pub fn loss_joint(pred: &Tensor, gt: &Mesh, w: &JointRegressor) -> Result<Tensor> {
    check_pair(pred, gt)?;
    let gt_j = w.apply(&gt.vertices)?;
    let gt_j = Tensor::new(&[gt_j.len(), 3], gt_j.into_iter().flatten().collect())?;
    Ok(w.apply_tensor(pred)?.sub(&gt_j)?.abs().sum())
}

/// `sum_edges | |v_i - v_j| - |gt_i - gt_j| |` over unique undirected edges.
pub fn loss_edge(pred: &Tensor, gt: &Mesh, template: &TemplateMesh) -> Result<Tensor> {
    check_pair(pred, gt)?;
    gt.check_template(template)?;
    let (a, b): (Vec<usize>, Vec<usize>) = template.edges().iter().copied().unzip();
    let len = pred.index_select(&a)?.sub(&pred.index_select(&b)?)?.l2_norm(1)?;
    let gt_len: Vec<f64> = template
        .edges()
        .iter()
        .map(|&(i, j)| crate::mesh::norm3(crate::mesh::sub3(gt.vertices[i], gt.vertices[j])))
        .collect();
    Ok(len.sub(&Tensor::vector(gt_len))?.abs().sum())
}

/// Normal loss with the number of skipped zero-length predicted edges.
pub fn loss_normal_counted(pred: &Tensor, gt: &Mesh, template: &TemplateMesh) -> Result<(Tensor, usize)> {
    check_pair(pred, gt)?;
    let normals = face_normals(gt, template)?;
    let p = pred.data();
    let (mut a, mut b, mut nrm) = (Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for (f, n) in template.faces().iter().zip(&normals) {
        if face_area(&gt.vertices, *f) < MIN_FACE_AREA {
            continue;
        }
        for e in 0..3 {
            let (i, j) = (f[e], f[(e + 1) % 3]);
            let d = [0, 1, 2].map(|c| p[3 * i + c] - p[3 * j + c]);
            if crate::mesh::norm3(d) < EDGE_EPS {
                skipped += 1;
                continue;
            }
            a.push(i);
            b.push(j);
            nrm.extend_from_slice(n);
        }
    }
    if skipped > 0 {
        log::debug!("normal loss skipped {skipped} zero-length edges");
    }
    if a.is_empty() {
        return Ok((pred.sum().scale(0.0), skipped));
    }
    let e = pred.index_select(&a)?.sub(&pred.index_select(&b)?)?;
    let n = Tensor::new(&[a.len(), 3], nrm)?;
    let cos = e.mul(&n)?.sum_axis(1)?.div(&e.l2_norm(1)?)?;
    Ok((cos.abs().sum(), skipped))
}

/// `sum_faces sum_(i,j) |<(v_i - v_j) / |v_i - v_j|, n_gt>|` over the three
/// directed edges of each face.
pub fn loss_normal(pred: &Tensor, gt: &Mesh, template: &TemplateMesh) -> Result<Tensor> {
    Ok(loss_normal_counted(pred, gt, template)?.0)
}

/// Weighted total with its components.
#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub total: Tensor,
    pub report: LossReport,
    pub normal_skipped: usize,
}

pub fn combined_loss(pred: &Tensor, gt: &Mesh, template: &TemplateMesh) -> Result<CombinedLoss> {
    let lv = loss_vertex(pred, gt)?;
    let lj = loss_joint(pred, gt, template.regressor())?;
    let le = loss_edge(pred, gt, template)?;
    let (ln, normal_skipped) = loss_normal_counted(pred, gt, template)?;
    let [wv, wj, wn, we] = LOSS_WEIGHTS;
    let total = lv.scale(wv).add(&lj.scale(wj))?.add(&ln.scale(wn))?.add(&le.scale(we))?;
    let report = LossReport {
        l_vertex: lv.item(),
        l_joint: lj.item(),
        l_edge: le.item(),
        l_normal: ln.item(),
        l_total: total.item(),
    };
    Ok(CombinedLoss {
        total,
        report,
        normal_skipped,
    })
}
