use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::cluster::ClusterConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scene::SceneSpec;

/// Where scenes come from: a directory written by `generate`, or scenes
/// synthesized in memory from `spec` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub spec: SceneSpec,
    pub seed: u64,
    pub num_train: usize,
    pub num_val: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            spec: SceneSpec::benchmark(),
            seed: 7,
            num_train: 200,
            num_val: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage1_epochs: u32,
    pub stage2_epochs: u32,
    /// Train the semantic loss alone for the whole epoch budget.
    pub stage1_only: bool,
    pub cls_head: bool,
    pub recon_head: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub adam: AdamConfig,
    /// Rebuild the instance cache every this many stage-2 epochs; 0 keeps
    /// the cache from the end of stage 1.
    pub recluster_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            stage1_epochs: 10,
            stage2_epochs: 20,
            stage1_only: false,
            cls_head: true,
            recon_head: true,
            lambda1: 0.1,
            lambda2: 0.01,
            batch_size: 2,
            peak_lr: 0.003,
            adam: AdamConfig::default(),
            recluster_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> u32 {
        self.stage1_epochs + self.stage2_epochs
    }

    /// Whether `epoch` (0-based, counted across both stages) trains the
    /// instance heads.
    pub fn is_stage2(&self, epoch: u32) -> bool {
        !self.stage1_only && epoch >= self.stage1_epochs
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub voxel_size: f64,
    pub model: ModelConfig,
    pub cluster: ClusterConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn benchmark() -> Self {
        RunConfig {
            voxel_size: 0.2,
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Parse a config; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.voxel_size == 0.0 {
            cfg.voxel_size = 0.2;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        self.model.backbone.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.model.backbone.num_classes != self.data.spec.num_classes() {
            return bad(format!(
                "model predicts {} classes, scene spec defines {}",
                self.model.backbone.num_classes,
                self.data.spec.num_classes()
            ));
        }
        let h = &self.model.heads;
        if h.recon_points == 0 || h.cls_hidden == 0 || h.recon_hidden == 0 || h.recon_latent == 0 {
            return bad("head widths and recon_points must be positive".into());
        }
        if !(h.keep_fraction > 0.0 && h.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction must lie in (0, 1], got {}", h.keep_fraction));
        }
        self.cluster.radii.validate().map_err(|e| Error::Config(e.to_string()))?;
        for c in self.data.spec.instance_classes() {
            if self.cluster.radii.get(c).is_none() {
                return bad(format!("instance class {c} has no clustering radius"));
            }
        }
        if !(self.cluster.descriptor_weight >= 0.0 && self.cluster.descriptor_weight.is_finite()) {
            return bad("descriptor_weight must be non-negative".into());
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(t.peak_lr > 0.0 && t.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", t.peak_lr));
        }
        if !(t.lambda1 >= 0.0 && t.lambda2 >= 0.0 && t.lambda1.is_finite() && t.lambda2.is_finite()) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if t.stage2_epochs > 0 && t.stage1_epochs == 0 && !t.stage1_only {
            return bad("stage 2 needs stage-1 epochs to build its instance cache".into());
        }
        if self.data.dir.is_none() {
            self.data.spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            if self.data.num_train == 0 {
                return bad("num_train must be positive".into());
            }
        }
        Ok(())
    }
}
