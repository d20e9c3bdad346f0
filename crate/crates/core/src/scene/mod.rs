//! Point-cloud and label files, and synthetic labeled scenes.

pub mod dataset;
pub mod io;
pub mod synth;

pub use dataset::{Manifest, Split};
pub use io::{
    read_descriptor_bin, read_label_bin, read_point_bin, write_descriptor_bin, write_label_bin,
    write_point_bin, Label, LabelArray, Point, PointCloud,
};
pub use synth::{generate_scene, ClassSpec, LabeledScene, SceneSpec, Shape};
