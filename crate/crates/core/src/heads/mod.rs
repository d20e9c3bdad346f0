//! Instance-level supervision heads: max-pooled instance classification with
//! an OHEM loss, and masked shape reconstruction scored by chamfer distance.

pub mod chamfer;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{arg_err, Result};
use crate::nn::{Linear, Mlp};
use crate::tensor::Matrix;

pub use chamfer::{chamfer, chamfer_matches, ChamferMatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Hidden width of the classification MLP.
    pub cls_hidden: usize,
    /// Encoder width and latent size of the reconstruction autoencoder.
    pub recon_hidden: usize,
    pub recon_latent: usize,
    /// Fixed number of reconstructed points (targets are padded/subsampled to it).
    pub recon_points: usize,
    pub keep_fraction: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            cls_hidden: 64,
            recon_hidden: 64,
            recon_latent: 64,
            recon_points: 64,
            keep_fraction: 0.25,
        }
    }
}

/// `MLP(max-pool(F(O_k)))`: per-instance class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceClassifier {
    hidden: Linear,
    out: Linear,
}

impl InstanceClassifier {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        feature_dim: usize,
        hidden: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        InstanceClassifier {
            hidden: Linear::new(store, "cls_head.hidden", feature_dim, hidden, rng),
            out: Linear::new(store, "cls_head.out", hidden, num_classes, rng),
        }
    }

    /// Logits (1×C) for an instance's M_k×d feature rows.
    pub fn classify(&self, tape: &mut Tape, features: NodeId) -> Result<NodeId> {
        if tape.value(features).rows() == 0 {
            return Err(arg_err!("cannot classify an empty instance"));
        }
        let pooled = tape.max_rows(features);
        let h = self.hidden.forward(tape, pooled);
        let h = tape.tanh(h);
        Ok(self.out.forward(tape, h))
    }
}

/// PointNet-style autoencoder: shared per-row encoder, max-pool to a latent
/// code, and an MLP decoder to a fixed-size point set.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDecoder {
    encoder: Mlp,
    decoder: Mlp,
    points: usize,
}

impl ShapeDecoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        feature_dim: usize,
        config: &HeadConfig,
        rng: &mut R,
    ) -> Self {
        let encoder = Mlp::new(
            store,
            "recon_head.encoder",
            &[feature_dim, config.recon_hidden, config.recon_latent],
            false,
            rng,
        );
        let decoder = Mlp::new(
            store,
            "recon_head.decoder",
            &[config.recon_latent, config.recon_hidden, config.recon_points * 3],
            false,
            rng,
        );
        ShapeDecoder {
            encoder,
            decoder,
            points: config.recon_points,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Reconstructed point set (N^g×3) from surviving feature rows.
    pub fn reconstruct(&self, tape: &mut Tape, masked: NodeId) -> Result<NodeId> {
        if tape.value(masked).rows() == 0 {
            return Err(arg_err!("cannot reconstruct from zero feature rows"));
        }
        let per_row = self.encoder.forward(tape, masked);
        let latent = tape.max_rows(per_row);
        let flat = self.decoder.forward(tape, latent);
        Ok(tape.reshape(flat, self.points, 3))
    }
}

/// Features and geometry of one predicted instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceGroup {
    /// Rows of the scene's voxel feature matrix belonging to the instance.
    pub voxel_rows: Vec<usize>,
    /// Voxel centers aligned with `voxel_rows` (M_k×3, meters).
    pub centers: Matrix,
    pub class_id: usize,
}

/// Rows of an instance that survive masking around `origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedGroup {
    /// Indices into the group's rows, ascending.
    pub kept: Vec<usize>,
    pub origin: [f64; 3],
    pub radius: f64,
}

/// Keep exactly the rows whose center is farther than `radius` from the
/// center at row `q`. Returns `None` when nothing survives.
pub fn mask_instance(centers: &Matrix, q: usize, radius: f64) -> Result<Option<MaskedGroup>> {
    if q >= centers.rows() {
        return Err(arg_err!("mask origin row {q} outside {} rows", centers.rows()));
    }
    if !(radius > 0.0) {
        return Err(arg_err!("mask radius must be positive, got {radius}"));
    }
    let o = centers.row(q);
    let origin = [o[0], o[1], o[2]];
    let r2 = radius * radius;
    let kept: Vec<usize> = (0..centers.rows())
        .filter(|&i| {
            let c = centers.row(i);
            let d2 = (c[0] - origin[0]).powi(2) + (c[1] - origin[1]).powi(2) + (c[2] - origin[2]).powi(2);
            d2 > r2
        })
        .collect();
    if kept.is_empty() {
        return Ok(None);
    }
    Ok(Some(MaskedGroup {
        kept,
        origin,
        radius,
    }))
}

/// Reconstruction target: centers brought to exactly `count` rows (all rows
/// kept plus draws with replacement when short, a uniform subset when long),
/// then shifted to zero column mean.
pub fn recon_target<R: Rng>(centers: &Matrix, count: usize, rng: &mut R) -> Matrix {
    let m = centers.rows();
    assert!(m > 0 && count > 0, "empty reconstruction target");
    let rows: Vec<usize> = if m < count {
        (0..m).chain((m..count).map(|_| rng.random_range(0..m))).collect()
    } else if m > count {
        let mut picked = sample(rng, m, count).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..m).collect()
    };
    let mut target = centers.select_rows(&rows);
    let mut mean = vec![0.0; target.cols()];
    for r in 0..target.rows() {
        for (s, x) in mean.iter_mut().zip(target.row(r)) {
            *s += x;
        }
    }
    for s in &mut mean {
        *s /= count as f64;
    }
    for r in 0..target.rows() {
        for (x, s) in target.row_mut(r).iter_mut().zip(&mean) {
            *x -= s;
        }
    }
    target
}

/// Indices (ascending) of the ⌈keep_fraction·K⌉ largest losses; larger value
/// first, lower index on ties, at least one kept.
pub fn ohem_keep(losses: &[f64], keep_fraction: f64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(arg_err!("keep fraction {keep_fraction} not in (0, 1]"));
    }
    if losses.is_empty() {
        return Ok(Vec::new());
    }
    let keep = ((keep_fraction * losses.len() as f64).ceil() as usize).clamp(1, losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Online hard example mining: mean over the hardest fraction of
/// per-instance losses. Zero for an empty batch.
pub fn ohem_loss(losses: &[f64], keep_fraction: f64) -> Result<f64> {
    let kept = ohem_keep(losses, keep_fraction)?;
    if kept.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = kept.iter().map(|&i| losses[i]).sum();
    Ok(sum / kept.len() as f64)
}

/// `L = L^s + λ1·L^c + λ2·L^g`
pub fn total_loss(semantic: f64, classification: f64, reconstruction: f64, lambda1: f64, lambda2: f64) -> f64 {
    semantic + lambda1 * classification + lambda2 * reconstruction
}

/// Classification loss over a scene's instances on the tape. `None` when
/// there are no instances.
pub fn classification_loss(
    tape: &mut Tape,
    features: NodeId,
    groups: &[InstanceGroup],
    classifier: &InstanceClassifier,
    keep_fraction: f64,
) -> Result<Option<NodeId>> {
    let mut per_instance = Vec::with_capacity(groups.len());
    for g in groups {
        let rows = tape.gather_rows(features, &g.voxel_rows);
        let logits = classifier.classify(tape, rows)?;
        per_instance.push(tape.softmax_ce(logits, &[g.class_id])?);
    }
    let values: Vec<f64> = per_instance.iter().map(|&n| tape.value(n).item()).collect();
    let kept = ohem_keep(&values, keep_fraction)?;
    if kept.is_empty() {
        return Ok(None);
    }
    let kept_nodes: Vec<NodeId> = kept.iter().map(|&i| per_instance[i]).collect();
    Ok(Some(tape.mean_of(&kept_nodes)))
}

/// Reconstruction loss over a scene's instances on the tape: one mask draw
/// per instance (origin uniform over its voxels, radius from `radius_of`),
/// mean chamfer over instances that keep at least one row. `None` when every
/// instance was skipped.
///
/// Random draws happen in instance order: mask origin, then target sampling.
pub fn reconstruction_loss<R: Rng>(
    tape: &mut Tape,
    features: NodeId,
    groups: &[InstanceGroup],
    decoder: &ShapeDecoder,
    radius_of: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Result<Option<NodeId>> {
    let mut per_instance = Vec::new();
    for g in groups {
        let q = rng.random_range(0..g.centers.rows());
        let target = recon_target(&g.centers, decoder.points(), rng);
        let Some(masked) = mask_instance(&g.centers, q, radius_of(g.class_id))? else {
            continue;
        };
        let rows: Vec<usize> = masked.kept.iter().map(|&i| g.voxel_rows[i]).collect();
        let input = tape.gather_rows(features, &rows);
        let recon = decoder.reconstruct(tape, input)?;
        per_instance.push(tape.chamfer_to(recon, &target)?);
    }
    if per_instance.is_empty() {
        return Ok(None);
    }
    Ok(Some(tape.mean_of(&per_instance)))
}
