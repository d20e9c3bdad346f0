//! Sparse voxel grids over point clouds.

use std::collections::{BTreeMap, HashMap};

use crate::autodiff::RowGroups;
use crate::error::{arg_err, Result};
use crate::scene::PointCloud;
use crate::tensor::Matrix;

/// Width of the per-voxel input features: mean offset from the voxel
/// center (3), ln(1 + point count), mean height above the scene minimum.
pub const INITIAL_FEATURE_DIM: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelCell {
    pub key: [i64; 3],
    pub center: [f64; 3],
    /// Indices into the source cloud, ascending.
    pub points: Vec<usize>,
}

/// Occupied cells sorted by key, plus the inverse point → cell map.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub cells: Vec<VoxelCell>,
    pub point_to_voxel: Vec<usize>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// M×3 matrix of cell centers.
    pub fn centers(&self) -> Matrix {
        let mut m = Matrix::zeros(self.cells.len(), 3);
        for (i, c) in self.cells.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&c.center);
        }
        m
    }
}

/// Grid origin for a cloud: the minimum corner snapped down to a multiple
/// of the voxel size.
pub fn default_origin(positions: &[[f64; 3]], voxel_size: f64) -> [f64; 3] {
    if positions.is_empty() {
        return [0.0; 3];
    }
    let mut min = [f64::INFINITY; 3];
    for p in positions {
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
        }
    }
    min.map(|m| (m / voxel_size).floor() * voxel_size)
}

pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    let positions: Vec<[f64; 3]> = cloud.positions().collect();
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(arg_err!("voxel size must be positive, got {voxel_size}"));
    }
    let origin = default_origin(&positions, voxel_size);
    voxelize_positions(&positions, voxel_size, origin)
}

/// Quantize positions with `key = floor((p - origin) / voxel_size)`.
pub fn voxelize_positions(positions: &[[f64; 3]], voxel_size: f64, origin: [f64; 3]) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(arg_err!("voxel size must be positive, got {voxel_size}"));
    }
    let mut buckets: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in positions.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(arg_err!("point {i} is not finite"));
        }
        let key = [0, 1, 2].map(|k| ((p[k] - origin[k]) / voxel_size).floor() as i64);
        buckets.entry(key).or_default().push(i);
    }
    let mut point_to_voxel = vec![0; positions.len()];
    let cells = buckets
        .into_iter()
        .enumerate()
        .map(|(ci, (key, points))| {
            for &p in &points {
                point_to_voxel[p] = ci;
            }
            let center = [0, 1, 2].map(|k| origin[k] + (key[k] as f64 + 0.5) * voxel_size);
            VoxelCell { key, center, points }
        })
        .collect();
    Ok(VoxelGrid {
        voxel_size,
        origin,
        cells,
        point_to_voxel,
    })
}

/// Per-voxel input features (M × [`INITIAL_FEATURE_DIM`]).
pub fn initial_features(grid: &VoxelGrid, cloud: &PointCloud) -> Matrix {
    let min_z = cloud
        .points
        .iter()
        .map(|p| p.z as f64)
        .fold(f64::INFINITY, f64::min);
    let mut f = Matrix::zeros(grid.len(), INITIAL_FEATURE_DIM);
    for (i, cell) in grid.cells.iter().enumerate() {
        let n = cell.points.len() as f64;
        let mut offset = [0.0; 3];
        let mut height = 0.0;
        for &pi in &cell.points {
            let p = cloud.points[pi].position();
            for k in 0..3 {
                offset[k] += p[k] - cell.center[k];
            }
            height += p[2] - min_z;
        }
        let row = f.row_mut(i);
        for k in 0..3 {
            row[k] = offset[k] / n;
        }
        row[3] = (1.0 + n).ln();
        row[4] = height / n;
    }
    f
}

/// Give every point the feature row of its own voxel.
pub fn interpolate_to_points(grid: &VoxelGrid, per_voxel: &Matrix) -> Result<Matrix> {
    if per_voxel.rows() != grid.len() {
        return Err(arg_err!(
            "{} feature rows for {} voxels",
            per_voxel.rows(),
            grid.len()
        ));
    }
    Ok(per_voxel.select_rows(&grid.point_to_voxel))
}

/// Broadcast a per-voxel label to points.
pub fn labels_to_points<T: Copy>(grid: &VoxelGrid, per_voxel: &[T]) -> Result<Vec<T>> {
    if per_voxel.len() != grid.len() {
        return Err(arg_err!("{} labels for {} voxels", per_voxel.len(), grid.len()));
    }
    Ok(grid.point_to_voxel.iter().map(|&v| per_voxel[v]).collect())
}

/// Majority semantic label of each voxel's points; lowest class id wins ties.
pub fn voxel_majority_labels(grid: &VoxelGrid, point_labels: &[u16]) -> Vec<usize> {
    grid.cells
        .iter()
        .map(|cell| {
            let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
            for &p in &cell.points {
                *counts.entry(point_labels[p]).or_default() += 1;
            }
            let mut best = (0usize, 0u16);
            for (&label, &count) in &counts {
                if count > best.0 {
                    best = (count, label);
                }
            }
            best.1 as usize
        })
        .collect()
}

/// For each voxel, the voxels whose centers lie within `radius` of its
/// center (itself included), ascending by index.
pub fn radius_neighborhoods(grid: &VoxelGrid, radius: f64) -> RowGroups {
    // Centers lie on the lattice, so distances are compared in key units.
    let reach = (radius / grid.voxel_size).floor() as i64;
    let limit = (radius / grid.voxel_size).powi(2) + 1e-9;
    let index: HashMap<[i64; 3], usize> = grid
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.key, i))
        .collect();
    let mut groups = RowGroups::new();
    let mut members = Vec::new();
    for cell in &grid.cells {
        members.clear();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if ((dx * dx + dy * dy + dz * dz) as f64) > limit {
                        continue;
                    }
                    let key = [cell.key[0] + dx, cell.key[1] + dy, cell.key[2] + dz];
                    if let Some(&j) = index.get(&key) {
                        members.push(j);
                    }
                }
            }
        }
        members.sort_unstable();
        groups.push(members.iter().copied());
    }
    groups
}
