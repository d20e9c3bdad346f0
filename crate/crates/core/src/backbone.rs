//! Per-voxel descriptor network and semantic head.
//!
//! The descriptor network is a point/voxel MLP with multi-radius
//! neighborhood max-pooling: a shared MLP lifts the initial voxel features,
//! each pooling level takes the component-wise max over voxels within
//! `neighbor_radius * 2^level`, and the lifted and pooled features are
//! concatenated and projected to the descriptor width `d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamStore, RowGroups, Tape};
use crate::error::{arg_err, Result};
use crate::nn::{Linear, Mlp};
use crate::scene::PointCloud;
use crate::tensor::Matrix;
use crate::voxel::{initial_features, radius_neighborhoods, voxelize, VoxelGrid, INITIAL_FEATURE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub d0: usize,
    pub hidden_dims: Vec<usize>,
    pub d: usize,
    pub num_classes: usize,
    pub neighbor_radius: f64,
    pub pooling_levels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            d0: INITIAL_FEATURE_DIM,
            hidden_dims: vec![32, 32],
            d: 32,
            num_classes: 5,
            neighbor_radius: 0.4,
            pooling_levels: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 || self.num_classes == 0 {
            return Err(arg_err!("input width and class count must be positive"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(arg_err!("hidden widths must be a non-empty list of positive sizes"));
        }
        if self.d < 8 {
            return Err(arg_err!("descriptor width must be at least 8, got {}", self.d));
        }
        if !(self.neighbor_radius > 0.0) {
            return Err(arg_err!("neighbor radius must be positive"));
        }
        Ok(())
    }

    pub fn pooling_radii(&self) -> Vec<f64> {
        (0..self.pooling_levels)
            .map(|l| self.neighbor_radius * f64::powi(2.0, l as i32))
            .collect()
    }
}

/// Geometry-dependent inputs of the network for one scene, computed once.
#[derive(Clone, Debug)]
pub struct SceneInputs {
    pub grid: VoxelGrid,
    pub features: Matrix,
    pub neighborhoods: Vec<RowGroups>,
}

impl SceneInputs {
    pub fn prepare(cloud: &PointCloud, voxel_size: f64, config: &BackboneConfig) -> Result<Self> {
        let grid = voxelize(cloud, voxel_size)?;
        Ok(Self::from_grid(grid, cloud, config))
    }

    pub fn from_grid(grid: VoxelGrid, cloud: &PointCloud, config: &BackboneConfig) -> Self {
        let features = initial_features(&grid, cloud);
        let neighborhoods = config
            .pooling_radii()
            .into_iter()
            .map(|r| radius_neighborhoods(&grid, r))
            .collect();
        SceneInputs {
            grid,
            features,
            neighborhoods,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    lift: Mlp,
    project: Linear,
}

impl Backbone {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.d0];
        dims.extend(&config.hidden_dims);
        let lift = Mlp::new(store, "backbone.lift", &dims, true, rng);
        let width = lift.out_dim() * (1 + config.pooling_levels);
        let project = Linear::new(store, "backbone.project", width, config.d, rng);
        Ok(Backbone {
            config: config.clone(),
            lift,
            project,
        })
    }

    /// Descriptors F (M×d) for the voxels of one scene.
    pub fn forward(&self, tape: &mut Tape, features: NodeId, neighborhoods: &[RowGroups]) -> Result<NodeId> {
        let (m, d0) = tape.value(features).shape();
        if d0 != self.config.d0 {
            return Err(arg_err!("expected {}-wide voxel features, got {d0}", self.config.d0));
        }
        if neighborhoods.len() != self.config.pooling_levels {
            return Err(arg_err!(
                "{} neighborhood levels for {} pooling levels",
                neighborhoods.len(),
                self.config.pooling_levels
            ));
        }
        if let Some(g) = neighborhoods.iter().find(|g| g.len() != m) {
            return Err(arg_err!("neighborhood table has {} rows for {m} voxels", g.len()));
        }
        let lifted = self.lift.forward(tape, features);
        let mut parts = vec![lifted];
        for groups in neighborhoods {
            parts.push(tape.group_max(lifted, groups));
        }
        let joined = tape.concat_cols(&parts);
        let projected = self.project.forward(tape, joined);
        Ok(tape.tanh(projected))
    }
}

/// Linear per-voxel classifier producing semantic logits.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticHead {
    linear: Linear,
}

impl SemanticHead {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, num_classes: usize, rng: &mut R) -> Self {
        SemanticHead {
            linear: Linear::new(store, "semantic_head", d, num_classes, rng),
        }
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    pub fn forward(&self, tape: &mut Tape, descriptors: NodeId) -> NodeId {
        self.linear.forward(tape, descriptors)
    }
}

/// Mean softmax cross-entropy of per-voxel logits against voxel labels.
pub fn semantic_loss(tape: &mut Tape, logits: NodeId, voxel_labels: &[usize]) -> Result<NodeId> {
    tape.softmax_ce(logits, voxel_labels)
}

/// Row-wise argmax with the lowest class winning ties.
pub fn argmax_labels(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows()).map(|r| logits.argmax_row(r)).collect()
}
