use crate::backbone::{BackboneConfig, SceneInputs};
use crate::cluster::InstanceSet;
use crate::error::{Error, Result};
use crate::scene::dataset::{generate_split, load_split};
use crate::scene::{LabeledScene, Split};
use crate::voxel::voxel_majority_labels;

use super::config::RunConfig;

/// A labeled scene with its network inputs and supervision precomputed.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub scene: LabeledScene,
    pub inputs: SceneInputs,
    pub positions: Vec<[f64; 3]>,
    pub semantic: Vec<u16>,
    pub voxel_labels: Vec<usize>,
    /// Ground-truth objects (instance id != 0).
    pub gt_instances: InstanceSet,
}

impl PreparedScene {
    pub fn new(scene: LabeledScene, voxel_size: f64, backbone: &BackboneConfig) -> Result<Self> {
        let semantic = scene.labels.semantic();
        if let Some(&bad) = semantic.iter().find(|&&c| c as usize >= backbone.num_classes) {
            return Err(Error::Malformed(format!(
                "semantic id {bad} outside the {}-class table",
                backbone.num_classes
            )));
        }
        let inputs = SceneInputs::prepare(&scene.cloud, voxel_size, backbone)?;
        let voxel_labels = voxel_majority_labels(&inputs.grid, &semantic);
        let gt_instances =
            InstanceSet::from_instance_ids(&scene.labels.instance(), &semantic, Some(&inputs.grid));
        Ok(PreparedScene {
            positions: scene.cloud.positions().collect(),
            scene,
            inputs,
            semantic,
            voxel_labels,
            gt_instances,
        })
    }

    /// Ground-truth instance id per point, −1 for points of non-instance
    /// classes.
    pub fn gt_assignment(&self, instance_classes: &[u16]) -> Vec<i64> {
        self.scene
            .labels
            .labels
            .iter()
            .map(|l| {
                if instance_classes.contains(&l.semantic_id) {
                    l.instance_id as i64
                } else {
                    -1
                }
            })
            .collect()
    }
}

/// Prepared training and validation scenes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<PreparedScene>,
    pub val: Vec<PreparedScene>,
}

impl Dataset {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let (train, val) = match &config.data.dir {
            Some(dir) => (load_split(dir, Split::Train)?, load_split(dir, Split::Val)?),
            None => {
                let d = &config.data;
                (
                    generate_split(&d.spec, d.seed, Split::Train, d.num_train)?,
                    generate_split(&d.spec, d.seed, Split::Val, d.num_val)?,
                )
            }
        };
        if train.is_empty() {
            return Err(Error::Malformed("training split is empty".into()));
        }
        let prep = |scenes: Vec<LabeledScene>| -> Result<Vec<PreparedScene>> {
            scenes
                .into_iter()
                .map(|s| PreparedScene::new(s, config.voxel_size, &config.model.backbone))
                .collect()
        };
        Ok(Dataset {
            train: prep(train)?,
            val: prep(val)?,
        })
    }

    pub fn split(&self, split: Split) -> &[PreparedScene] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }
}
