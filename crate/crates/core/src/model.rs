//! The full network: descriptor backbone, semantic head and both instance
//! heads sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::backbone::{argmax_labels, Backbone, BackboneConfig, SceneInputs, SemanticHead};
use crate::error::Result;
use crate::heads::{HeadConfig, InstanceClassifier, ShapeDecoder};
use crate::tensor::Matrix;
use crate::voxel::{interpolate_to_points, labels_to_points};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub heads: HeadConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub semantic: SemanticHead,
    pub classifier: InstanceClassifier,
    pub decoder: ShapeDecoder,
}

impl Model {
    /// Parameters are created in a fixed order (backbone, semantic head,
    /// classifier, decoder) from one seeded stream, so the heads exist and
    /// consume the same draws whether or not they are trained.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let b = &config.backbone;
        let backbone = Backbone::new(&mut params, b, &mut rng)?;
        let semantic = SemanticHead::new(&mut params, b.d, b.num_classes, &mut rng);
        let classifier =
            InstanceClassifier::new(&mut params, b.d, config.heads.cls_hidden, b.num_classes, &mut rng);
        let decoder = ShapeDecoder::new(&mut params, b.d, &config.heads, &mut rng);
        Ok(Model {
            config: config.clone(),
            params,
            backbone,
            semantic,
            classifier,
            decoder,
        })
    }

    /// Per-voxel descriptors and semantic logits, without gradients.
    pub fn forward(&self, inputs: &SceneInputs) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(inputs.features.clone());
        let f = self.backbone.forward(&mut tape, x, &inputs.neighborhoods)?;
        let logits = self.semantic.forward(&mut tape, f);
        Ok((tape.value(f).clone(), tape.value(logits).clone()))
    }

    /// Per-point descriptors taken from each point's voxel.
    pub fn point_descriptors(&self, inputs: &SceneInputs) -> Result<Matrix> {
        let (f, _) = self.forward(inputs)?;
        interpolate_to_points(&inputs.grid, &f)
    }

    /// Per-point semantic predictions.
    pub fn predict_points(&self, inputs: &SceneInputs) -> Result<Vec<usize>> {
        let (_, logits) = self.forward(inputs)?;
        labels_to_points(&inputs.grid, &argmax_labels(&logits))
    }
}
