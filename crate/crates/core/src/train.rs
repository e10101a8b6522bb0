//! Training, evaluation and ablation comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SeedRange};
use crate::correspondence::{vertex_to_pixel, CorrespondenceSet};
use crate::error::IoContext;
use crate::features::{backbone_forward, init_backbone, vertex_features, FeatureMode};
use crate::graph::GraphNet;
use crate::losses::{combined_loss, mpjpe, pa_mpjpe, LossReport};
use crate::mesh::{export_obj, regress_joints, Mesh, TemplateMesh};
use crate::scene::generate_scene;
use crate::tensor::{adam_step, read_checkpoint, write_checkpoint, AdamConfig, AdamState, ParamSet, Tensor};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "epoch,split,l_vertex,l_joint,l_edge,l_normal,l_total,mpjpe,pa_mpjpe";
pub const CHECKPOINT_FILE: &str = "model.mgc";
pub const LOG_FILE: &str = "log.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Network inputs and targets of one scene, computed once.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub seed: u64,
    pub image: Tensor,
    pub corr: CorrespondenceSet,
    pub gt: Mesh,
    pub gt_joints: Vec<[f64; 3]>,
}

pub fn prepare_scenes(template: &TemplateMesh, cfg: &RunConfig, range: &SeedRange) -> Result<Vec<PreparedScene>> {
    range
        .seeds()
        .into_iter()
        .map(|seed| {
            let scene = generate_scene(template, &cfg.dataset.scene, seed)?;
            let corr = vertex_to_pixel(&scene.iuv, template)?;
            let gt_joints = regress_joints(template.regressor(), &scene.gt_mesh)?;
            Ok(PreparedScene {
                seed,
                image: scene.image,
                corr,
                gt: scene.gt_mesh,
                gt_joints,
            })
        })
        .collect()
}

/// Backbone, feature assembly and graph network for one template.
#[derive(Clone, Debug)]
pub struct Model {
    pub template: TemplateMesh,
    pub config: RunConfig,
    pub net: GraphNet,
    rest: Tensor,
}

impl Model {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let template = config.template.build()?;
        Self::with_template(config, template)
    }

    pub fn with_template(config: &RunConfig, template: TemplateMesh) -> Result<Self> {
        let width = config.backbone.layout().width();
        let net = GraphNet::new(config.gcn.clone(), width, template.adjacency_pattern())?;
        let rest = template.rest_mesh().to_tensor();
        Ok(Model {
            template,
            config: config.clone(),
            net,
            rest,
        })
    }

    pub fn init_params(&self) -> ParamSet {
        let mut params = ParamSet::new();
        init_backbone(&self.config.backbone, self.config.seed, &mut params);
        self.net.init_params(self.config.seed.wrapping_add(1), &mut params);
        params
    }

    /// Predicted `[N_v, 3]` vertices.
    pub fn predict(&self, params: &ParamSet, image: &Tensor, corr: &CorrespondenceSet) -> Result<Tensor> {
        let pyramid = backbone_forward(image, params, &self.config.backbone)?;
        let features = vertex_features(self.config.feature_mode, &pyramid, corr, &self.template)?;
        self.net.forward(&features.data, params, Some(&self.rest))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Running mean over the training steps of an epoch, before each update.
    Fit,
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Fit => "fit",
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Losses and joint errors of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMetrics {
    pub seed: u64,
    pub report: LossReport,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

/// Means over scenes, one CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: Split,
    pub report: LossReport,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

impl LogRow {
    pub fn from_scenes(epoch: usize, split: Split, scenes: &[SceneMetrics]) -> Self {
        let n = scenes.len().max(1) as f64;
        let mean = |f: fn(&SceneMetrics) -> f64| scenes.iter().map(f).sum::<f64>() / n;
        LogRow {
            epoch,
            split,
            report: LossReport {
                l_vertex: mean(|s| s.report.l_vertex),
                l_joint: mean(|s| s.report.l_joint),
                l_edge: mean(|s| s.report.l_edge),
                l_normal: mean(|s| s.report.l_normal),
                l_total: mean(|s| s.report.l_total),
            },
            mpjpe: mean(|s| s.mpjpe),
            pa_mpjpe: mean(|s| s.pa_mpjpe),
        }
    }

    pub fn csv_line(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split.as_str(),
            r.l_vertex,
            r.l_joint,
            r.l_edge,
            r.l_normal,
            r.l_total,
            self.mpjpe,
            self.pa_mpjpe
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(Error::Format(format!("log row has {} fields: {line}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}")));
        let split = match f[1] {
            "fit" => Split::Fit,
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(Error::Format(format!("unknown split {other:?}"))),
        };
        Ok(LogRow {
            epoch: f[0].parse().map_err(|e| Error::Format(format!("bad epoch {:?}: {e}", f[0])))?,
            split,
            report: LossReport {
                l_vertex: num(f[2])?,
                l_joint: num(f[3])?,
                l_edge: num(f[4])?,
                l_normal: num(f[5])?,
                l_total: num(f[6])?,
            },
            mpjpe: num(f[7])?,
            pa_mpjpe: num(f[8])?,
        })
    }
}

pub fn render_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("missing log header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(LogRow::parse).collect()
}

fn scene_metrics(model: &Model, pred: &Tensor, scene: &PreparedScene, report: LossReport) -> Result<SceneMetrics> {
    let pred_mesh = Mesh::from_tensor(pred)?;
    let joints = regress_joints(model.template.regressor(), &pred_mesh)?;
    Ok(SceneMetrics {
        seed: scene.seed,
        report,
        mpjpe: mpjpe(&joints, &scene.gt_joints, model.template.root_joint())?,
        pa_mpjpe: pa_mpjpe(&joints, &scene.gt_joints)?,
    })
}

/// Per-scene metrics with the current parameters.
pub fn evaluate(model: &Model, params: &ParamSet, scenes: &[PreparedScene]) -> Result<Vec<SceneMetrics>> {
    scenes
        .iter()
        .map(|s| {
            let pred = model.predict(params, &s.image, &s.corr)?.detach();
            let loss = combined_loss(&pred, &s.gt, &model.template)?;
            scene_metrics(model, &pred, s, loss.report)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub rows: Vec<LogRow>,
    pub skipped_steps: usize,
}

impl TrainOutcome {
    pub fn rows_for(&self, split: Split) -> Vec<&LogRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn final_row(&self, split: Split) -> Option<&LogRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

/// Trains on prepared scenes with per-batch Adam updates.
///
/// Steps whose loss is not finite are skipped; more than 1% skipped steps in
/// an epoch aborts the run.
pub fn train_on(model: &Model, train: &[PreparedScene], test: &[PreparedScene]) -> Result<TrainOutcome> {
    let cfg = &model.config;
    let mut params = model.init_params();
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr_at(1),
        beta1: cfg.adam.beta1,
        beta2: cfg.adam.beta2,
        eps: cfg.adam.eps,
    });
    let epochs = cfg.total_epochs();
    let mut rows = vec![
        LogRow::from_scenes(0, Split::Train, &evaluate(model, &params, train)?),
        LogRow::from_scenes(0, Split::Test, &evaluate(model, &params, test)?),
    ];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut skipped_total = 0;
    for epoch in 1..=epochs {
        let started = Instant::now();
        adam.set_lr(cfg.lr_at(epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut fit = Vec::with_capacity(train.len());
        let (mut steps, mut skipped) = (0, 0);
        for batch in order.chunks(cfg.batch_size) {
            steps += 1;
            let mut total: Option<Tensor> = None;
            let mut batch_metrics = Vec::with_capacity(batch.len());
            for &i in batch {
                let scene = &train[i];
                let pred = model.predict(&params, &scene.image, &scene.corr)?;
                let loss = combined_loss(&pred, &scene.gt, &model.template)?;
                batch_metrics.push(scene_metrics(model, &pred, scene, loss.report)?);
                total = Some(match total {
                    None => loss.total,
                    Some(t) => t.add(&loss.total)?,
                });
            }
            let total = total.expect("nonempty batch");
            if !total.item().is_finite() {
                skipped += 1;
                log::warn!("epoch {epoch}: non-finite loss, step skipped");
                continue;
            }
            let grads = total.backward()?;
            adam_step(&mut params, &grads, &mut adam);
            fit.extend(batch_metrics);
        }
        if skipped * 100 > steps {
            return Err(Error::Training(format!(
                "epoch {epoch}: {skipped} of {steps} steps had non-finite loss"
            )));
        }
        skipped_total += skipped;
        rows.push(LogRow::from_scenes(epoch, Split::Fit, &fit));
        let train_due = epoch == epochs || (cfg.eval.train_every > 0 && epoch % cfg.eval.train_every == 0);
        if train_due {
            rows.push(LogRow::from_scenes(epoch, Split::Train, &evaluate(model, &params, train)?));
        }
        let test_row = LogRow::from_scenes(epoch, Split::Test, &evaluate(model, &params, test)?);
        log::info!(
            "epoch {epoch}/{epochs} lr {:e}: fit loss {:.4}, test mpjpe {:.4}, pa-mpjpe {:.4} ({:.1}s)",
            adam.config.lr,
            rows.iter().rev().find(|r| r.split == Split::Fit).map_or(f64::NAN, |r| r.report.l_total),
            test_row.mpjpe,
            test_row.pa_mpjpe,
            started.elapsed().as_secs_f64()
        );
        rows.push(test_row);
    }
    Ok(TrainOutcome {
        params,
        rows,
        skipped_steps: skipped_total,
    })
}

/// Builds the template and scenes for `cfg` and trains in memory.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let model = Model::new(cfg)?;
    let train = prepare_scenes(&model.template, cfg, &cfg.dataset.train)?;
    let test = prepare_scenes(&model.template, cfg, &cfg.dataset.test)?;
    train_on(&model, &train, &test)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let entries: BTreeMap<String, Tensor> = params.iter().map(|(k, v)| (k.clone(), v.detach())).collect();
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_checkpoint(&mut w, &entries)?;
    w.flush().at(path)?;
    Ok(())
}

/// Loads a checkpoint and checks every tensor against the model's layout.
pub fn load_checkpoint(model: &Model, path: &Path) -> Result<ParamSet> {
    let entries: BTreeMap<String, Tensor> = read_checkpoint(&mut BufReader::new(File::open(path).at(path)?))?;
    let expected = model.init_params();
    if entries.len() != expected.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, config expects {}",
            entries.len(),
            expected.len()
        )));
    }
    let mut params = ParamSet::new();
    for (name, want) in expected.iter() {
        let got = entries
            .get(name)
            .ok_or_else(|| Error::Shape(format!("checkpoint lacks parameter {name}")))?;
        if got.shape() != want.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: checkpoint shape {:?}, config shape {:?}",
                got.shape(),
                want.shape()
            )));
        }
        params.insert(name.clone(), Tensor::parameter(got.shape(), got.data().to_vec())?);
    }
    Ok(params)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

/// Trains and writes the log, checkpoint and resolved config into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out).at(out)?;
    let resolved = RunConfig {
        output_dir: out.to_path_buf(),
        ..cfg.clone()
    };
    write_text(&out.join(CONFIG_FILE), &resolved.to_json()?)?;
    let outcome = train(&resolved)?;
    write_text(&out.join(LOG_FILE), &render_csv(&outcome.rows))?;
    save_checkpoint(&outcome.params, &out.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Per-scene and mean metrics of a checkpoint on one split.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub scenes: Vec<SceneMetrics>,
    pub mean: LogRow,
}

/// Evaluates `checkpoint` on `split`, writing `eval_<split>.csv` and the
/// first `export_count` predicted and ground-truth OBJ pairs into `out`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: Split, out: &Path) -> Result<EvalOutcome> {
    let model = Model::new(cfg)?;
    let params = load_checkpoint(&model, checkpoint)?;
    let range = match split {
        Split::Test => cfg.dataset.test,
        Split::Train | Split::Fit => cfg.dataset.train,
    };
    let scenes = prepare_scenes(&model.template, cfg, &range)?;
    let metrics = evaluate(&model, &params, &scenes)?;
    fs::create_dir_all(out).at(out)?;
    let mut csv = String::from("seed,l_vertex,l_joint,l_edge,l_normal,l_total,mpjpe,pa_mpjpe\n");
    for m in &metrics {
        let r = &m.report;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            m.seed, r.l_vertex, r.l_joint, r.l_edge, r.l_normal, r.l_total, m.mpjpe, m.pa_mpjpe
        );
    }
    let mean = LogRow::from_scenes(0, split, &metrics);
    let r = &mean.report;
    let _ = writeln!(
        csv,
        "mean,{},{},{},{},{},{},{}",
        r.l_vertex, r.l_joint, r.l_edge, r.l_normal, r.l_total, mean.mpjpe, mean.pa_mpjpe
    );
    write_text(&out.join(format!("eval_{}.csv", split.as_str())), &csv)?;
    for s in scenes.iter().take(cfg.eval.export_count) {
        let pred = Mesh::from_tensor(&model.predict(&params, &s.image, &s.corr)?)?;
        export_obj(&pred, &model.template, &out.join(format!("scene_{}_pred.obj", s.seed)))?;
        export_obj(&s.gt, &model.template, &out.join(format!("scene_{}_gt.obj", s.seed)))?;
    }
    Ok(EvalOutcome { scenes: metrics, mean })
}

/// Final test metrics of both arms and their differences (`b - a`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub a_mode: FeatureMode,
    pub b_mode: FeatureMode,
    pub a_mpjpe: f64,
    pub b_mpjpe: f64,
    pub a_pa_mpjpe: f64,
    pub b_pa_mpjpe: f64,
    pub delta_mpjpe: f64,
    pub delta_pa_mpjpe: f64,
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub a: TrainOutcome,
    pub b: TrainOutcome,
    pub report: CompareReport,
}

/// Per-epoch test curves of both arms as CSV.
pub fn curves_csv(a: &TrainOutcome, b: &TrainOutcome) -> String {
    let mut out = String::from("epoch,a_test_mpjpe,b_test_mpjpe,a_test_pa_mpjpe,b_test_pa_mpjpe\n");
    for (ra, rb) in a.rows_for(Split::Test).into_iter().zip(b.rows_for(Split::Test)) {
        let _ = writeln!(out, "{},{},{},{},{}", ra.epoch, ra.mpjpe, rb.mpjpe, ra.pa_mpjpe, rb.pa_mpjpe);
    }
    out
}

/// Trains two configs that differ only in feature mode on shared scenes.
/// Arms are written to `out/a` and `out/b`, curves to `out/curves.csv` and
/// the final deltas to `out/report.json`.
pub fn cmd_compare(a: &RunConfig, b: &RunConfig, out: &Path) -> Result<CompareOutcome> {
    if !a.same_except_mode(b) {
        return Err(Error::Config("compared configs must differ only in feature mode".into()));
    }
    let model_a = Model::new(a)?;
    let model_b = Model::with_template(b, model_a.template.clone())?;
    let train = prepare_scenes(&model_a.template, a, &a.dataset.train)?;
    let test = prepare_scenes(&model_a.template, a, &a.dataset.test)?;
    let mut arms = Vec::with_capacity(2);
    for (name, model) in [("a", &model_a), ("b", &model_b)] {
        let dir: PathBuf = out.join(name);
        fs::create_dir_all(&dir).at(&dir)?;
        let resolved = RunConfig {
            output_dir: dir.clone(),
            ..model.config.clone()
        };
        write_text(&dir.join(CONFIG_FILE), &resolved.to_json()?)?;
        let outcome = train_on(model, &train, &test)?;
        write_text(&dir.join(LOG_FILE), &render_csv(&outcome.rows))?;
        save_checkpoint(&outcome.params, &dir.join(CHECKPOINT_FILE))?;
        arms.push(outcome);
    }
    let b_out = arms.pop().expect("two arms");
    let a_out = arms.pop().expect("two arms");
    let fa = a_out.final_row(Split::Test).expect("test rows");
    let fb = b_out.final_row(Split::Test).expect("test rows");
    let report = CompareReport {
        a_mode: a.feature_mode,
        b_mode: b.feature_mode,
        a_mpjpe: fa.mpjpe,
        b_mpjpe: fb.mpjpe,
        a_pa_mpjpe: fa.pa_mpjpe,
        b_pa_mpjpe: fb.pa_mpjpe,
        delta_mpjpe: fb.mpjpe - fa.mpjpe,
        delta_pa_mpjpe: fb.pa_mpjpe - fa.pa_mpjpe,
    };
    write_text(&out.join("curves.csv"), &curves_csv(&a_out, &b_out))?;
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(CompareOutcome {
        a: a_out,
        b: b_out,
        report,
    })
}
