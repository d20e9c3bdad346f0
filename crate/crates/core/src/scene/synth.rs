//! Deterministic synthetic labeled scenes.
//!
//! Objects are parametric primitives standing on a flat ground: boxes for
//! vehicle-like classes, vertical cylinders for pole-like classes and
//! ellipsoids for pedestrian-like classes. Every random draw comes from a
//! `ChaCha8Rng` seeded with the scene seed, so a `(spec, seed)` pair yields
//! the same bytes on every platform.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{Label, LabelArray, Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Cylinder,
    Ellipsoid,
}

impl Shape {
    fn default_aspect(self) -> [f64; 3] {
        match self {
            Shape::Box => [1.0, 0.5, 0.4],
            Shape::Cylinder => [0.15, 0.15, 1.0],
            Shape::Ellipsoid => [0.4, 0.4, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: u16,
    pub name: String,
    #[serde(default)]
    pub instance: bool,
    /// Primitive used for objects of this class; `None` for stuff classes.
    #[serde(default)]
    pub shape: Option<Shape>,
    /// Largest object dimension in meters, `[min, max]`.
    #[serde(default = "default_size")]
    pub size: [f64; 2],
    /// Objects per scene, `[min, max]`.
    #[serde(default)]
    pub count: [usize; 2],
    /// Per-axis (x, y, z) dimension as a fraction of the sampled size.
    #[serde(default)]
    pub aspect: Option<[f64; 3]>,
}

fn default_size() -> [f64; 2] {
    [1.0, 1.0]
}

impl ClassSpec {
    fn aspect(&self) -> [f64; 3] {
        self.aspect
            .or_else(|| self.shape.map(Shape::default_aspect))
            .unwrap_or([1.0, 1.0, 1.0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Side of the square ground area, meters.
    pub extent: f64,
    pub points_per_object: [usize; 2],
    pub noise_sigma: f64,
    pub ground_plane: bool,
    #[serde(default = "default_ground_points")]
    pub ground_points: usize,
    /// Minimum horizontal distance between object centers, meters. Objects
    /// are additionally never closer than the sum of their footprint radii.
    #[serde(default)]
    pub min_center_spacing: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    pub classes: Vec<ClassSpec>,
}

fn default_ground_points() -> usize {
    1500
}

fn default_retries() -> usize {
    1000
}

impl SceneSpec {
    /// The default desk-scale benchmark: ground plus four object classes
    /// (two box sizes, pedestrians and poles), ~3.5k points per scene.
    pub fn benchmark() -> Self {
        let class = |id, name: &str, shape, size, count, aspect| ClassSpec {
            id,
            name: name.to_string(),
            instance: true,
            shape: Some(shape),
            size,
            count,
            aspect: Some(aspect),
        };
        SceneSpec {
            extent: 16.0,
            points_per_object: [120, 200],
            noise_sigma: 0.01,
            ground_plane: true,
            ground_points: 1600,
            min_center_spacing: 3.0,
            max_retries: 1000,
            classes: vec![
                ClassSpec {
                    id: 0,
                    name: "ground".into(),
                    instance: false,
                    shape: None,
                    size: [1.0, 1.0],
                    count: [0, 0],
                    aspect: None,
                },
                class(1, "car", Shape::Box, [1.0, 1.3], [2, 3], [1.0, 0.55, 0.45]),
                class(2, "van", Shape::Box, [1.4, 1.6], [1, 2], [1.0, 0.45, 0.5]),
                class(3, "pedestrian", Shape::Ellipsoid, [0.7, 0.9], [2, 3], [0.4, 0.4, 1.0]),
                class(4, "pole", Shape::Cylinder, [0.8, 0.95], [2, 3], [0.15, 0.15, 1.0]),
            ],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.iter().map(|c| c.id as usize + 1).max().unwrap_or(0)
    }

    pub fn instance_classes(&self) -> Vec<u16> {
        self.classes.iter().filter(|c| c.instance).map(|c| c.id).collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.num_classes()).map(|i| format!("class_{i}")).collect();
        for c in &self.classes {
            names[c.id as usize] = c.name.clone();
        }
        names
    }

    fn ground_class(&self) -> Option<u16> {
        self.classes.iter().find(|c| !c.instance).map(|c| c.id)
    }

    /// Parse and validate a spec written as TOML.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.extent > 0.0) {
            return bad(format!("extent must be positive, got {}", self.extent));
        }
        let [pmin, pmax] = self.points_per_object;
        if pmin == 0 || pmin > pmax {
            return bad(format!("points_per_object {:?} must satisfy 1 <= min <= max", self.points_per_object));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.ground_plane && self.ground_class().is_none() {
            return bad("ground plane requires a non-instance class".into());
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.id) {
                return bad(format!("duplicate class id {}", c.id));
            }
            let [smin, smax] = c.size;
            if !(smin > 0.0 && smin <= smax) {
                return bad(format!("class {}: size {:?} must satisfy 0 < min <= max", c.name, c.size));
            }
            if c.count[0] > c.count[1] {
                return bad(format!("class {}: count {:?} must satisfy min <= max", c.name, c.count));
            }
            if c.count[1] > 0 && (!c.instance || c.shape.is_none()) {
                return bad(format!("class {} places objects but is not an instance class with a shape", c.name));
            }
            if c.aspect().iter().any(|&a| !(a > 0.0)) {
                return bad(format!("class {}: aspect must be positive", c.name));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the scene spec's canonical TOML and the seed.
    pub fn fingerprint(&self, seed: u64) -> String {
        let text = toml::to_string(self).expect("scene spec serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub cloud: PointCloud,
    pub labels: LabelArray,
    /// Empty for scenes read from disk without a generator.
    pub spec_fingerprint: String,
}

impl LabeledScene {
    pub fn new(cloud: PointCloud, labels: LabelArray) -> Result<Self> {
        if cloud.len() != labels.len() {
            return Err(Error::Malformed(format!(
                "{} points but {} labels",
                cloud.len(),
                labels.len()
            )));
        }
        Ok(LabeledScene {
            cloud,
            labels,
            spec_fingerprint: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// One placed primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedObject {
    pub class_id: u16,
    pub instance_id: u16,
    pub shape: Shape,
    pub center: [f64; 2],
    /// Full x/y/z dimensions before rotation, meters.
    pub dims: [f64; 3],
    pub yaw: f64,
    /// Horizontal footprint radius used for spacing.
    pub footprint: f64,
}

fn footprint(shape: Shape, dims: [f64; 3]) -> f64 {
    match shape {
        Shape::Box => 0.5 * (dims[0] * dims[0] + dims[1] * dims[1]).sqrt(),
        Shape::Cylinder | Shape::Ellipsoid => 0.5 * dims[0].max(dims[1]),
    }
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<LabeledScene> {
    generate_scene_with_layout(spec, seed).map(|(s, _)| s)
}

/// Like [`generate_scene`], also returning the placed objects.
pub fn generate_scene_with_layout(spec: &SceneSpec, seed: u64) -> Result<(LabeledScene, Vec<PlacedObject>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = place_objects(spec, &mut rng)?;

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;

    if spec.ground_plane {
        let ground = spec.ground_class().expect("validated");
        for _ in 0..spec.ground_points {
            let x = rng.random_range(0.0..spec.extent);
            let y = rng.random_range(0.0..spec.extent);
            let z = noise.sample(&mut rng);
            points.push(Point::new(x as f32, y as f32, z as f32, rng.random::<f32>()));
            labels.push(Label::new(ground, 0));
        }
    }

    for obj in &objects {
        let [pmin, pmax] = spec.points_per_object;
        let n = rng.random_range(pmin..=pmax);
        for _ in 0..n {
            let local = sample_surface(obj.shape, obj.dims, &mut rng);
            let (s, c) = obj.yaw.sin_cos();
            let x = obj.center[0] + c * local[0] - s * local[1] + noise.sample(&mut rng);
            let y = obj.center[1] + s * local[0] + c * local[1] + noise.sample(&mut rng);
            let z = local[2] + noise.sample(&mut rng);
            points.push(Point::new(x as f32, y as f32, z as f32, rng.random::<f32>()));
            labels.push(Label::new(obj.class_id, obj.instance_id));
        }
    }

    let scene = LabeledScene {
        cloud: PointCloud::new(points),
        labels: LabelArray::new(labels),
        spec_fingerprint: spec.fingerprint(seed),
    };
    Ok((scene, objects))
}

fn place_objects(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<PlacedObject>> {
    let mut placed: Vec<PlacedObject> = Vec::new();
    for class in &spec.classes {
        let Some(shape) = class.shape else { continue };
        let count = rng.random_range(class.count[0]..=class.count[1]);
        let aspect = class.aspect();
        for _ in 0..count {
            let size = rng.random_range(class.size[0]..=class.size[1]);
            let dims = [size * aspect[0], size * aspect[1], size * aspect[2]];
            let yaw = match shape {
                Shape::Box => rng.random_range(0.0..PI),
                _ => 0.0,
            };
            let radius = footprint(shape, dims);
            if 2.0 * radius >= spec.extent {
                return Err(Error::Generation(format!(
                    "a {} of footprint {radius:.2} m does not fit in extent {}",
                    class.name, spec.extent
                )));
            }
            let mut center = None;
            for _ in 0..spec.max_retries.max(1) {
                let cx = rng.random_range(radius..spec.extent - radius);
                let cy = rng.random_range(radius..spec.extent - radius);
                let clear = placed.iter().all(|o| {
                    let d = ((o.center[0] - cx).powi(2) + (o.center[1] - cy).powi(2)).sqrt();
                    d >= (o.footprint + radius).max(spec.min_center_spacing)
                });
                if clear {
                    center = Some([cx, cy]);
                    break;
                }
            }
            let Some(center) = center else {
                return Err(Error::Generation(format!(
                    "could not place {} #{} after {} retries",
                    class.name,
                    placed.len() + 1,
                    spec.max_retries
                )));
            };
            if placed.len() >= u16::MAX as usize {
                return Err(Error::Generation("too many objects for 16-bit instance ids".into()));
            }
            placed.push(PlacedObject {
                class_id: class.id,
                instance_id: placed.len() as u16 + 1,
                shape,
                center,
                dims,
                yaw,
                footprint: radius,
            });
        }
    }
    Ok(placed)
}

/// A point on the primitive's visible surface in object-local coordinates
/// (origin at the footprint center on the ground, z up). The bottom face is
/// never sampled.
fn sample_surface(shape: Shape, dims: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let [lx, ly, lz] = dims;
    match shape {
        Shape::Box => {
            let top = lx * ly;
            let side_x = ly * lz;
            let side_y = lx * lz;
            let total = top + 2.0 * side_x + 2.0 * side_y;
            let pick = rng.random_range(0.0..total);
            let u: f64 = rng.random_range(-0.5..0.5);
            let v: f64 = rng.random_range(-0.5..0.5);
            if pick < top {
                [u * lx, v * ly, lz]
            } else if pick < top + 2.0 * side_x {
                let sign = if pick < top + side_x { 0.5 } else { -0.5 };
                [sign * lx, u * ly, (v + 0.5) * lz]
            } else {
                let sign = if pick < top + 2.0 * side_x + side_y { 0.5 } else { -0.5 };
                [u * lx, sign * ly, (v + 0.5) * lz]
            }
        }
        Shape::Cylinder => {
            let r = 0.5 * lx.max(ly);
            let side = 2.0 * PI * r * lz;
            let cap = PI * r * r;
            let theta = rng.random_range(0.0..2.0 * PI);
            if rng.random_range(0.0..side + cap) < side {
                [r * theta.cos(), r * theta.sin(), rng.random_range(0.0..lz)]
            } else {
                let rho = r * rng.random::<f64>().sqrt();
                [rho * theta.cos(), rho * theta.sin(), lz]
            }
        }
        Shape::Ellipsoid => {
            let mut d = [0.0f64; 3];
            loop {
                for x in &mut d {
                    *x = StandardNormal.sample(rng);
                }
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if n > 1e-12 {
                    d.iter_mut().for_each(|x| *x /= n);
                    break;
                }
            }
            [0.5 * lx * d[0], 0.5 * ly * d[1], 0.5 * lz * (d[2] + 1.0)]
        }
    }
}
