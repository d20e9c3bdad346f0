//! Two-stage training, instance caching, evaluation and inference.
//!
//! Stage 1 optimizes the semantic loss alone. At the first stage-2 epoch,
//! every training scene is clustered once with the current descriptors and
//! ground-truth semantics; stage 2 then optimizes
//! `L^s + λ1·L^c + λ2·L^g` on those cached instances. One learning-rate
//! schedule spans both stages.
//!
//! Randomness is derived from the run seed: the scene order of each epoch
//! and the mask draws of each step use independent streams, so switching
//! the heads on or off never changes the order in which scenes are seen.

pub mod config;
pub mod data;
pub mod state;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{OneCycle, Tape};
use crate::backbone::{semantic_loss, SceneInputs};
use crate::cluster::{cluster_instances, ClusterConfig, InstanceSet};
use crate::error::{Error, Result};
use crate::heads::{classification_loss, reconstruction_loss, InstanceGroup};
use crate::metrics::{acc_seg, adjusted_rand_index, AccSegReport, ConfusionMatrix, EvalReport};
use crate::model::Model;
use crate::scene::{PointCloud, Split};
use crate::tensor::Matrix;

pub use config::{DataConfig, RunConfig, TrainConfig};
pub use data::{Dataset, PreparedScene};
pub use state::{LossRecord, TrainState};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const CACHE_LOG_FILE: &str = "instance_cache.csv";

const SHUFFLE_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;

fn derived_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}

/// Training scene order for one epoch.
pub fn epoch_order(seed: u64, epoch: u32, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut derived_rng(seed, SHUFFLE_STREAM, epoch as u64));
    order
}

pub fn steps_per_epoch(config: &RunConfig, num_train: usize) -> u64 {
    num_train.div_ceil(config.train.batch_size) as u64
}

/// What to do after each completed epoch.
pub trait EpochHook {
    fn epoch_done(&mut self, state: &TrainState) -> Result<()>;
}

impl EpochHook for () {
    fn epoch_done(&mut self, _: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Writes the checkpoint and loss log to a directory after every epoch.
pub struct CheckpointDir<'a>(pub &'a Path);

impl EpochHook for CheckpointDir<'_> {
    fn epoch_done(&mut self, state: &TrainState) -> Result<()> {
        write_run_files(self.0, state)
    }
}

pub fn write_run_files(dir: &Path, state: &TrainState) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    state.save(&dir.join(CHECKPOINT_FILE))?;
    let log = dir.join(LOSS_LOG_FILE);
    std::fs::write(&log, state.loss_csv()).map_err(|e| Error::io(&log, e))
}

/// Cluster every training scene with the model's current descriptors and
/// ground-truth semantics. Returns the sets and their ARI against the
/// ground-truth instances.
pub fn build_instance_cache(
    model: &Model,
    scenes: &[PreparedScene],
    cluster: &ClusterConfig,
    instance_classes: &[u16],
) -> Result<(Vec<InstanceSet>, Vec<f64>)> {
    let mut sets = Vec::with_capacity(scenes.len());
    let mut aris = Vec::with_capacity(scenes.len());
    for s in scenes {
        let desc = model.point_descriptors(&s.inputs)?;
        let set = cluster_instances(&s.positions, &s.semantic, &desc, Some(&s.inputs.grid), cluster)?;
        aris.push(adjusted_rand_index(&set.assignment, &s.gt_assignment(instance_classes))?);
        sets.push(set);
    }
    Ok((sets, aris))
}

fn instance_groups(set: &InstanceSet, inputs: &SceneInputs) -> Vec<InstanceGroup> {
    let centers = inputs.grid.centers();
    set.instances
        .iter()
        .filter(|i| !i.voxels.is_empty())
        .map(|i| InstanceGroup {
            voxel_rows: i.voxels.clone(),
            centers: centers.select_rows(&i.voxels),
            class_id: i.class_id as usize,
        })
        .collect()
}

struct SceneLoss {
    grads: Vec<Matrix>,
    semantic: f64,
    classification: f64,
    reconstruction: f64,
    total: f64,
}

fn scene_loss(
    state: &TrainState,
    scene: &PreparedScene,
    instances: Option<&InstanceSet>,
    rng: &mut ChaCha8Rng,
) -> Result<SceneLoss> {
    let cfg = &state.config;
    let model = &state.model;
    let mut tape = Tape::new(&model.params);
    let x = tape.constant(scene.inputs.features.clone());
    let f = model.backbone.forward(&mut tape, x, &scene.inputs.neighborhoods)?;
    let logits = model.semantic.forward(&mut tape, f);
    let ls = semantic_loss(&mut tape, logits, &scene.voxel_labels)?;
    let mut loss = ls;
    let (mut lc_value, mut lg_value) = (0.0, 0.0);
    if let Some(set) = instances {
        let groups = instance_groups(set, &scene.inputs);
        if cfg.train.cls_head {
            let keep = cfg.model.heads.keep_fraction;
            if let Some(lc) = classification_loss(&mut tape, f, &groups, &model.classifier, keep)? {
                lc_value = tape.value(lc).item();
                let term = tape.scale(lc, cfg.train.lambda1);
                loss = tape.add(loss, term);
            }
        }
        if cfg.train.recon_head {
            let radii = &cfg.cluster.radii;
            let radius_of = |c: usize| radii.get(c as u16).expect("validated instance class");
            if let Some(lg) = reconstruction_loss(&mut tape, f, &groups, &model.decoder, radius_of, rng)? {
                lg_value = tape.value(lg).item();
                let term = tape.scale(lg, cfg.train.lambda2);
                loss = tape.add(loss, term);
            }
        }
    }
    let total = tape.value(loss).item();
    Ok(SceneLoss {
        semantic: tape.value(ls).item(),
        classification: lc_value,
        reconstruction: lg_value,
        total,
        grads: tape.backward(loss)?.into_dense(&model.params),
    })
}

/// Run (or continue) training until every configured epoch is done.
/// `hook` runs after each epoch, e.g. to write a checkpoint.
pub fn train(state: &mut TrainState, data: &Dataset, hook: &mut impl EpochHook) -> Result<()> {
    train_until(state, data, hook, state.config.train.total_epochs())
}

/// Like [`train`], but stops once `epoch` epochs are complete.
pub fn train_until(state: &mut TrainState, data: &Dataset, hook: &mut impl EpochHook, epoch: u32) -> Result<()> {
    let cfg = state.config.clone();
    let t = &cfg.train;
    let per_epoch = steps_per_epoch(&cfg, data.train.len());
    let total_steps = per_epoch * t.total_epochs() as u64;
    if state.step != per_epoch * state.epoch as u64 {
        return Err(Error::Config(format!(
            "checkpoint at step {} does not match epoch {} of {} steps",
            state.step, state.epoch, per_epoch
        )));
    }
    let schedule = OneCycle::new(t.peak_lr, total_steps.max(1));
    let instance_classes = cfg.data.spec.instance_classes();
    let stop = epoch.min(t.total_epochs());
    while state.epoch < stop {
        let epoch = state.epoch;
        let stage2 = t.is_stage2(epoch);
        if stage2 {
            let since = epoch - t.stage1_epochs;
            let due = t.recluster_every > 0 && since > 0 && since.is_multiple_of(t.recluster_every);
            if state.cache.is_none() || due {
                let (sets, _) =
                    build_instance_cache(&state.model, &data.train, &cfg.cluster, &instance_classes)?;
                state.cache = Some(sets);
            }
        }
        let order = epoch_order(t.seed, epoch, data.train.len());
        for batch in order.chunks(t.batch_size) {
            let mut rng = derived_rng(t.seed, MASK_STREAM, state.step);
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Option<Vec<Matrix>> = None;
            let mut sums = [0.0; 4];
            for &i in batch {
                let instances = if stage2 {
                    state.cache.as_ref().map(|c| &c[i])
                } else {
                    None
                };
                let l = scene_loss(state, &data.train[i], instances, &mut rng)?;
                if !l.total.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at step {} (scene {i})",
                        state.step
                    )));
                }
                for (s, v) in sums.iter_mut().zip([l.semantic, l.classification, l.reconstruction, l.total]) {
                    *s += v;
                }
                match grads.as_mut() {
                    None => grads = Some(l.grads.into_iter().map(|g| g.map(|v| v * scale)).collect()),
                    Some(acc) => acc.iter_mut().zip(&l.grads).for_each(|(a, g)| a.axpy(scale, g)),
                }
            }
            let lr = schedule.lr(state.step + 1)?;
            let grads = grads.expect("batches are non-empty");
            state.adam.step(&mut state.model.params, &grads, lr)?;
            state.log.push(LossRecord {
                stage: if stage2 { 2 } else { 1 },
                epoch,
                step: state.step,
                lr,
                semantic: sums[0] * scale,
                classification: sums[1] * scale,
                reconstruction: sums[2] * scale,
                total: sums[3] * scale,
            });
            state.step += 1;
        }
        state.epoch += 1;
        hook.epoch_done(state)?;
    }
    Ok(())
}

/// Per-point semantic predictions for a raw cloud.
pub fn infer(model: &Model, cloud: &PointCloud, voxel_size: f64) -> Result<Vec<usize>> {
    let inputs = SceneInputs::prepare(cloud, voxel_size, &model.config.backbone)?;
    model.predict_points(&inputs)
}

pub const ACC_SEG_THRESHOLDS: [f64; 2] = [0.5, 0.8];

fn merge_acc(into: &mut AccSegReport, other: &AccSegReport) {
    for (a, b) in into.classes.iter_mut().zip(&other.classes) {
        a.correct += b.correct;
        a.total += b.total;
    }
}

/// Score per-point predictions on a set of scenes. `clustered` holds the
/// predicted instances per scene, when available.
pub fn score(
    scenes: &[PreparedScene],
    predictions: &[Vec<usize>],
    clustered: Option<&[InstanceSet]>,
    class_names: Vec<String>,
    instance_classes: &[u16],
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let c = class_names.len();
    let mut confusion = ConfusionMatrix::new(c);
    let mut sources: Vec<(&str, Vec<&InstanceSet>)> = vec![("gt", scenes.iter().map(|s| &s.gt_instances).collect())];
    if let Some(sets) = clustered {
        sources.push(("clustered", sets.iter().collect()));
    }
    let mut acc: Vec<(String, AccSegReport)> = Vec::new();
    for (src, _) in &sources {
        for t in ACC_SEG_THRESHOLDS {
            acc.push((src.to_string(), acc_seg(&[], &[], c, t)?));
        }
    }
    let mut aris = Vec::new();
    for (k, (scene, pred)) in scenes.iter().zip(predictions).enumerate() {
        let gt: Vec<usize> = scene.semantic.iter().map(|&l| l as usize).collect();
        confusion.add(&gt, pred)?;
        for (si, (_, sets)) in sources.iter().enumerate() {
            for (ti, t) in ACC_SEG_THRESHOLDS.iter().enumerate() {
                let r = acc_seg(pred, &sets[k].instances, c, *t)?;
                merge_acc(&mut acc[si * ACC_SEG_THRESHOLDS.len() + ti].1, &r);
            }
        }
        if let Some(sets) = clustered {
            aris.push(adjusted_rand_index(&sets[k].assignment, &scene.gt_assignment(instance_classes))?);
        }
    }
    let ari = (!aris.is_empty()).then(|| aris.iter().sum::<f64>() / aris.len() as f64);
    Ok(EvalReport {
        class_names,
        confusion,
        acc_seg: acc,
        ari,
    })
}

/// Predict every scene of a split, cluster instances from the predicted
/// semantics, and score both against the ground truth.
pub fn evaluate(model: &Model, config: &RunConfig, data: &Dataset, split: Split) -> Result<EvalReport> {
    let scenes = data.split(split);
    let instance_classes = config.data.spec.instance_classes();
    let mut predictions = Vec::with_capacity(scenes.len());
    let mut clustered = Vec::with_capacity(scenes.len());
    for s in scenes {
        let (f, logits) = model.forward(&s.inputs)?;
        let pred = crate::voxel::labels_to_points(&s.inputs.grid, &crate::backbone::argmax_labels(&logits))?;
        let desc = crate::voxel::interpolate_to_points(&s.inputs.grid, &f)?;
        let sem: Vec<u16> = pred.iter().map(|&c| c as u16).collect();
        clustered.push(cluster_instances(&s.positions, &sem, &desc, Some(&s.inputs.grid), &config.cluster)?);
        predictions.push(pred);
    }
    score(
        scenes,
        &predictions,
        Some(&clustered),
        config.data.spec.class_names(),
        &instance_classes,
    )
}

/// Write `metrics.csv` and `metrics.txt` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [("metrics.csv", report.to_csv()), ("metrics.txt", report.to_text())] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
