//! Semantic-guided instance clustering.
//!
//! Points of each instance class are clustered separately with a flat-kernel
//! mean-shift over `f = (p, w·λ_p·d)`: the position `p` in meters followed
//! by the descriptor `d` scaled by the confidence `λ_p = 1/σ_p` (σ_p is the
//! mean per-dimension descriptor variance among same-class points within the
//! class radius) and a global descriptor weight `w`. The class radius is the
//! mean-shift bandwidth.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::tensor::Matrix;
use crate::voxel::VoxelGrid;

pub const LAMBDA_MIN: f64 = 1e-3;
pub const LAMBDA_MAX: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEntry {
    pub class: u16,
    pub radius: f64,
}

/// Per-class neighborhood radius r_p, meters. Also the mask radius of the
/// reconstruction head.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<RadiusEntry>", into = "Vec<RadiusEntry>")]
pub struct RadiusTable {
    radii: BTreeMap<u16, f64>,
}

impl From<Vec<RadiusEntry>> for RadiusTable {
    fn from(v: Vec<RadiusEntry>) -> Self {
        RadiusTable {
            radii: v.into_iter().map(|e| (e.class, e.radius)).collect(),
        }
    }
}

impl From<RadiusTable> for Vec<RadiusEntry> {
    fn from(t: RadiusTable) -> Self {
        t.radii
            .into_iter()
            .map(|(class, radius)| RadiusEntry { class, radius })
            .collect()
    }
}

impl RadiusTable {
    pub fn new(entries: &[(u16, f64)]) -> Self {
        RadiusTable {
            radii: entries.iter().copied().collect(),
        }
    }

    /// Radii for the built-in benchmark classes: boxes 1.0 m, pedestrians
    /// and poles 0.5 m.
    pub fn benchmark() -> Self {
        RadiusTable::new(&[(1, 1.0), (2, 1.0), (3, 0.5), (4, 0.5)])
    }

    pub fn get(&self, class: u16) -> Option<f64> {
        self.radii.get(&class).copied()
    }

    /// Classes with a radius, ascending.
    pub fn classes(&self) -> Vec<u16> {
        self.radii.keys().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.radii.iter().find(|(_, &r)| !(r > 0.0 && r.is_finite())) {
            Some((c, r)) => Err(arg_err!("class {c} has non-positive radius {r}")),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Instance classes and their radii.
    pub radii: RadiusTable,
    /// Clusters with fewer points are dropped.
    pub min_points: usize,
    /// Global scale `w` on the λ-weighted descriptor block.
    pub descriptor_weight: f64,
    pub max_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            radii: RadiusTable::benchmark(),
            min_points: 5,
            descriptor_weight: 1e-4,
            max_iterations: 100,
        }
    }
}

/// Uniform hash grid over the first three feature columns. Any row within
/// `cell` of a query in the full feature space is within `cell` in those
/// columns too, so the 27 surrounding cells are an exact candidate set.
struct SpatialHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<u32>>,
}

impl SpatialHash {
    fn new(rows: &Matrix, cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for i in 0..rows.rows() {
            buckets.entry(Self::key(rows.row(i), cell)).or_default().push(i as u32);
        }
        SpatialHash { cell, buckets }
    }

    fn key(row: &[f64], cell: f64) -> [i64; 3] {
        let c = |k: usize| row.get(k).map_or(0, |v| (v / cell).floor() as i64);
        [c(0), c(1), c(2)]
    }

    fn for_each_candidate(&self, query: &[f64], mut f: impl FnMut(usize)) {
        let k = Self::key(query, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        b.iter().for_each(|&i| f(i as usize));
                    }
                }
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Confidence weight λ_p = 1/σ_p per point, clamped to
/// [`LAMBDA_MIN`, `LAMBDA_MAX`]. Points whose class has no radius get `None`.
pub fn compute_lambda(
    positions: &[[f64; 3]],
    descriptors: &Matrix,
    labels: &[u16],
    radii: &RadiusTable,
) -> Result<Vec<Option<f64>>> {
    if descriptors.rows() != positions.len() || labels.len() != positions.len() {
        return Err(arg_err!(
            "{} positions, {} descriptors, {} labels",
            positions.len(),
            descriptors.rows(),
            labels.len()
        ));
    }
    let mut out = vec![None; positions.len()];
    for class in radii.classes() {
        let r = radii.get(class).expect("listed class");
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let pos = Matrix::from_rows(&members.iter().map(|&i| positions[i]).collect::<Vec<_>>());
        let hash = SpatialHash::new(&pos, r);
        let d = descriptors.cols();
        let mut neighbors = Vec::new();
        let mut mean = vec![0.0; d];
        for (local, &global) in members.iter().enumerate() {
            neighbors.clear();
            let p = pos.row(local);
            hash.for_each_candidate(p, |j| {
                if squared_distance(p, pos.row(j)) <= r * r {
                    neighbors.push(members[j]);
                }
            });
            neighbors.sort_unstable();
            let n = neighbors.len() as f64;
            mean.iter_mut().for_each(|m| *m = 0.0);
            for &j in &neighbors {
                for (m, x) in mean.iter_mut().zip(descriptors.row(j)) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = 0.0;
            for &j in &neighbors {
                for (m, x) in mean.iter().zip(descriptors.row(j)) {
                    var += (x - m) * (x - m);
                }
            }
            let sigma = if d == 0 { 0.0 } else { var / (n * d as f64) };
            out[global] = Some((1.0 / sigma).clamp(LAMBDA_MIN, LAMBDA_MAX));
        }
    }
    Ok(out)
}

/// Flat-kernel mean-shift. Every row seeds a trajectory that moves to the
/// mean of the rows within `bandwidth` until the shift falls below
/// `1e-4·bandwidth` or `max_iterations` is reached. Modes within
/// `bandwidth/2` of an earlier surviving mode are merged into it; each row
/// is assigned to the surviving mode nearest its own. Returns dense cluster
/// ids in order of the surviving modes.
pub fn mean_shift(features: &Matrix, bandwidth: f64, max_iterations: usize) -> Result<Vec<usize>> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(arg_err!("bandwidth must be positive, got {bandwidth}"));
    }
    if features.rows() == 0 {
        return Err(arg_err!("mean-shift needs at least one row"));
    }
    let n = features.rows();
    let dim = features.cols();
    let hash = SpatialHash::new(features, bandwidth);
    let bw2 = bandwidth * bandwidth;
    let tol = 1e-4 * bandwidth;

    let mut modes = Matrix::zeros(n, dim);
    let mut x = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    for i in 0..n {
        x.copy_from_slice(features.row(i));
        for _ in 0..max_iterations {
            next.iter_mut().for_each(|v| *v = 0.0);
            let mut count = 0usize;
            hash.for_each_candidate(&x, |j| {
                let row = features.row(j);
                if squared_distance(&x, row) <= bw2 {
                    count += 1;
                    for (s, v) in next.iter_mut().zip(row) {
                        *s += v;
                    }
                }
            });
            if count == 0 {
                break;
            }
            next.iter_mut().for_each(|v| *v /= count as f64);
            let shift = squared_distance(&x, &next).sqrt();
            std::mem::swap(&mut x, &mut next);
            if shift < tol {
                break;
            }
        }
        modes.row_mut(i).copy_from_slice(&x);
    }

    let merge2 = 0.25 * bw2;
    let mut survivors: Vec<usize> = Vec::new();
    for i in 0..n {
        let m = modes.row(i);
        if !survivors.iter().any(|&s| squared_distance(m, modes.row(s)) <= merge2) {
            survivors.push(i);
        }
    }
    let assignment = (0..n)
        .map(|i| {
            let m = modes.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &s) in survivors.iter().enumerate() {
                let d = squared_distance(m, modes.row(s));
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(assignment)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub class_id: u16,
    /// Member points, ascending.
    pub points: Vec<usize>,
    /// Voxels containing the member points, ascending.
    pub voxels: Vec<usize>,
}

/// Predicted instances and the per-point assignment (−1 = none).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
    pub assignment: Vec<i64>,
}

impl InstanceSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Build from per-point instance ids (0 = none), e.g. ground truth.
    pub fn from_instance_ids(ids: &[u16], semantic: &[u16], grid: Option<&VoxelGrid>) -> Self {
        let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate() {
            if id != 0 {
                groups.entry(id).or_default().push(i);
            }
        }
        let mut set = InstanceSet {
            instances: Vec::new(),
            assignment: vec![-1; ids.len()],
        };
        for (_, points) in groups {
            set.push(semantic[points[0]], points, grid);
        }
        set
    }

    fn push(&mut self, class_id: u16, points: Vec<usize>, grid: Option<&VoxelGrid>) {
        let k = self.instances.len() as i64;
        for &p in &points {
            self.assignment[p] = k;
        }
        let voxels = grid.map_or_else(Vec::new, |g| {
            let mut v: Vec<usize> = points.iter().map(|&p| g.point_to_voxel[p]).collect();
            v.sort_unstable();
            v.dedup();
            v
        });
        self.instances.push(Instance {
            class_id,
            points,
            voxels,
        });
    }
}

/// Cluster every instance class present in `semantic` separately. Classes
/// are processed in ascending id order; within a class, instances follow
/// mean-shift cluster order.
pub fn cluster_instances(
    positions: &[[f64; 3]],
    semantic: &[u16],
    descriptors: &Matrix,
    grid: Option<&VoxelGrid>,
    config: &ClusterConfig,
) -> Result<InstanceSet> {
    config.radii.validate()?;
    let n = positions.len();
    if semantic.len() != n || descriptors.rows() != n {
        return Err(arg_err!(
            "{n} positions, {} labels, {} descriptors",
            semantic.len(),
            descriptors.rows()
        ));
    }
    if let Some(g) = grid {
        if g.point_to_voxel.len() != n {
            return Err(arg_err!("grid covers {} points, scene has {n}", g.point_to_voxel.len()));
        }
    }
    let lambda = compute_lambda(positions, descriptors, semantic, &config.radii)?;
    let d = descriptors.cols();
    let mut set = InstanceSet {
        instances: Vec::new(),
        assignment: vec![-1; n],
    };
    for class in config.radii.classes() {
        let bandwidth = config.radii.get(class).expect("listed class");
        let members: Vec<usize> = (0..n).filter(|&i| semantic[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut feats = Matrix::zeros(members.len(), 3 + d);
        for (r, &i) in members.iter().enumerate() {
            let row = feats.row_mut(r);
            row[..3].copy_from_slice(&positions[i]);
            let w = config.descriptor_weight * lambda[i].expect("class has a radius");
            for (o, x) in row[3..].iter_mut().zip(descriptors.row(i)) {
                *o = w * x;
            }
        }
        let labels = mean_shift(&feats, bandwidth, config.max_iterations)?;
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (r, &l) in labels.iter().enumerate() {
            clusters[l].push(members[r]);
        }
        for points in clusters {
            if points.len() >= config.min_points.max(1) {
                set.push(class, points, grid);
            }
        }
    }
    Ok(set)
}
