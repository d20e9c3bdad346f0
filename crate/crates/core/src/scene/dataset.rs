//! Scene directories: `<name>.bin` + `<name>.label` pairs plus a
//! `manifest.toml` listing split membership.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_label_bin, read_point_bin, write_label_bin, write_point_bin};
use super::synth::{generate_scene, LabeledScene, SceneSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SPEC_FILE: &str = "scene_spec.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Argument(format!("unknown split {other:?} (train|val)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn scene_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.bin")), dir.join(format!("{name}.label")))
}

pub fn read_scene_files(bin: &Path, label: &Path) -> Result<LabeledScene> {
    let pb = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let lb = fs::read(label).map_err(|e| Error::io(label, e))?;
    LabeledScene::new(read_point_bin(&pb)?, read_label_bin(&lb)?)
}

pub fn read_scene(dir: &Path, name: &str) -> Result<LabeledScene> {
    let (bin, label) = scene_paths(dir, name);
    read_scene_files(&bin, &label)
}

pub fn write_scene(dir: &Path, name: &str, scene: &LabeledScene) -> Result<()> {
    let (bin, label) = scene_paths(dir, name);
    fs::write(&bin, write_point_bin(&scene.cloud)).map_err(|e| Error::io(&bin, e))?;
    fs::write(&label, write_label_bin(&scene.labels)).map_err(|e| Error::io(&label, e))
}

/// Seed of the `index`-th scene of a split.
pub fn scene_seed(base_seed: u64, split: Split, index: usize) -> u64 {
    let offset = match split {
        Split::Train => 0,
        Split::Val => 1_000_000,
    };
    base_seed
        .wrapping_mul(10_000_019)
        .wrapping_add(offset + index as u64)
}

pub fn scene_name(split: Split, index: usize) -> String {
    match split {
        Split::Train => format!("train_{index:04}"),
        Split::Val => format!("val_{index:04}"),
    }
}

/// Generate `num_train` + `num_val` scenes in memory.
pub fn generate_split(spec: &SceneSpec, base_seed: u64, split: Split, count: usize) -> Result<Vec<LabeledScene>> {
    (0..count)
        .map(|i| generate_scene(spec, scene_seed(base_seed, split, i)))
        .collect()
}

/// Generate scenes and write them, the scene spec and the manifest to `dir`.
pub fn write_generated_dataset(
    dir: &Path,
    spec: &SceneSpec,
    base_seed: u64,
    num_train: usize,
    num_val: usize,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::default();
    for (split, count) in [(Split::Train, num_train), (Split::Val, num_val)] {
        for i in 0..count {
            let name = scene_name(split, i);
            let scene = generate_scene(spec, scene_seed(base_seed, split, i))?;
            write_scene(dir, &name, &scene)?;
            match split {
                Split::Train => manifest.train.push(name),
                Split::Val => manifest.val.push(name),
            }
        }
    }
    let spec_path = dir.join(SPEC_FILE);
    fs::write(&spec_path, toml::to_string(spec).expect("spec serializes"))
        .map_err(|e| Error::io(&spec_path, e))?;
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<LabeledScene>> {
    let manifest = Manifest::load(dir)?;
    manifest.split(split).iter().map(|n| read_scene(dir, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::benchmark();
        let manifest = write_generated_dataset(dir.path(), &spec, 5, 2, 1).unwrap();
        assert_eq!(manifest.train, vec!["train_0000", "train_0001"]);
        assert_eq!(Manifest::load(dir.path()).unwrap(), manifest);
        let val = load_split(dir.path(), Split::Val).unwrap();
        let fresh = generate_split(&spec, 5, Split::Val, 1).unwrap();
        assert_eq!(val[0].cloud, fresh[0].cloud);
        assert_eq!(val[0].labels, fresh[0].labels);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Manifest::load(dir.path()), Err(Error::Io { .. })));
        assert!(matches!(read_scene(dir.path(), "nope"), Err(Error::Io { .. })));
    }
}
