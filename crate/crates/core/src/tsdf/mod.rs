//! Sparse weighted TSDF grid: projective ray integration, submap fusion, and
//! zero-set extraction by marching cubes.
//!
//! Voxel `v` (integer triple) is centred at `v * voxel_size`; voxels live in
//! 16^3 blocks allocated on first touch. Distances are positive on the
//! sensor (free-space) side.

mod mesh;
mod ply;
mod tables;

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::Vector3;

pub use mesh::{extract_mesh, TriangleMesh};
pub use ply::{read_ply, write_ply, PlyFormat};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::Pose;

pub const BLOCK_SIZE: i64 = 16;
const BLOCK_VOXELS: usize = (BLOCK_SIZE * BLOCK_SIZE * BLOCK_SIZE) as usize;

pub type VoxelIndex = [i64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsdfVoxel {
    pub distance: f64,
    pub weight: f64,
}

impl TsdfVoxel {
    pub fn is_observed(&self) -> bool {
        self.weight > 0.0
    }

    /// Weighted running average, weight saturating at `max_weight`.
    fn fuse(&mut self, distance: f64, weight: f64, max_weight: f64) {
        if weight <= 0.0 {
            return;
        }
        let total = self.weight + weight;
        self.distance = (self.weight * self.distance + weight * distance) / total;
        self.weight = total.min(max_weight);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    #[default]
    Constant,
    /// `1 / z^2` with `z` floored at 1 m, clamped to `[1e-4, 1]`.
    Quadratic,
}

pub fn compute_weight(range: f64, mode: WeightMode) -> Result<f64> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidArgument(format!("range must be positive, got {range}")));
    }
    Ok(match mode {
        WeightMode::Constant => 1.0,
        WeightMode::Quadratic => {
            let z = range.max(1.0);
            (1.0 / (z * z)).clamp(1e-4, 1.0)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_weight: f64,
    pub mode: WeightMode,
    pub exec: Exec,
}

impl Default for TsdfConfig {
    fn default() -> Self {
        TsdfConfig {
            voxel_size: 0.1,
            truncation: 0.4,
            max_weight: 100.0,
            mode: WeightMode::Constant,
            exec: Exec::default(),
        }
    }
}

impl TsdfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidArgument("voxel size must be positive".into()));
        }
        if !(self.truncation >= 2.0 * self.voxel_size && self.truncation.is_finite()) {
            return Err(Error::InvalidArgument("truncation must be at least two voxels".into()));
        }
        if !(self.max_weight > 0.0) {
            return Err(Error::InvalidArgument("max weight must be positive".into()));
        }
        Ok(())
    }
}

type Block = Box<[TsdfVoxel]>;

fn new_block() -> Block {
    vec![TsdfVoxel::default(); BLOCK_VOXELS].into_boxed_slice()
}

fn split_index(v: &VoxelIndex) -> (VoxelIndex, usize) {
    let b = v.map(|c| c.div_euclid(BLOCK_SIZE));
    let l = v.map(|c| c.rem_euclid(BLOCK_SIZE) as usize);
    let n = BLOCK_SIZE as usize;
    (b, l[0] + n * (l[1] + n * l[2]))
}

fn join_index(block: &VoxelIndex, local: usize) -> VoxelIndex {
    let n = BLOCK_SIZE as usize;
    let l = [local % n, (local / n) % n, local / (n * n)];
    [0, 1, 2].map(|k| block[k] * BLOCK_SIZE + l[k] as i64)
}

/// Counts from one integration call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegrationStats {
    pub integrated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    config: TsdfConfig,
    blocks: HashMap<VoxelIndex, Block>,
}

impl VoxelGrid {
    pub fn new(config: TsdfConfig) -> Result<Self> {
        config.validate()?;
        Ok(VoxelGrid {
            config,
            blocks: HashMap::new(),
        })
    }

    pub fn config(&self) -> &TsdfConfig {
        &self.config
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.config.truncation
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn center(&self, v: &VoxelIndex) -> Vector3<f64> {
        Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64) * self.config.voxel_size
    }

    /// Voxel whose cell contains `p`.
    pub fn index_of(&self, p: &Vector3<f64>) -> VoxelIndex {
        let s = self.config.voxel_size;
        [0, 1, 2].map(|k| (p[k] / s).round() as i64)
    }

    /// Stored voxel, observed or not; `None` if its block is unallocated.
    pub fn voxel(&self, v: &VoxelIndex) -> Option<TsdfVoxel> {
        let (b, l) = split_index(v);
        self.blocks.get(&b).map(|blk| blk[l])
    }

    /// Observed voxel (weight > 0).
    pub fn get(&self, v: &VoxelIndex) -> Option<TsdfVoxel> {
        self.voxel(v).filter(TsdfVoxel::is_observed)
    }

    /// Overwrites a voxel, clamping the distance to the truncation band.
    pub fn set(&mut self, v: &VoxelIndex, voxel: TsdfVoxel) {
        let (b, l) = split_index(v);
        let d = self.config.truncation;
        self.blocks.entry(b).or_insert_with(new_block)[l] = TsdfVoxel {
            distance: voxel.distance.clamp(-d, d),
            weight: voxel.weight.clamp(0.0, self.config.max_weight),
        };
    }

    /// Fuses one observation into a voxel with the weighted-average rule.
    pub fn fuse(&mut self, v: &VoxelIndex, distance: f64, weight: f64) {
        let (b, l) = split_index(v);
        let d = self.config.truncation;
        let w_max = self.config.max_weight;
        self.blocks.entry(b).or_insert_with(new_block)[l].fuse(distance.clamp(-d, d), weight, w_max);
    }

    /// Allocated block indices in ascending order.
    pub fn block_indices(&self) -> Vec<VoxelIndex> {
        let mut keys: Vec<_> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Observed voxels of one block in storage order.
    pub fn block_voxels(&self, block: &VoxelIndex) -> Vec<(VoxelIndex, TsdfVoxel)> {
        self.blocks.get(block).map_or_else(Vec::new, |blk| {
            blk.iter()
                .enumerate()
                .filter(|(_, v)| v.is_observed())
                .map(|(l, v)| (join_index(block, l), *v))
                .collect()
        })
    }

    /// All observed voxels, ordered by block then storage order.
    pub fn observed(&self) -> Vec<(VoxelIndex, TsdfVoxel)> {
        self.block_indices()
            .iter()
            .flat_map(|b| self.block_voxels(b))
            .collect()
    }

    pub fn observed_count(&self) -> usize {
        self.blocks
            .values()
            .map(|b| b.iter().filter(|v| v.is_observed()).count())
            .sum()
    }

    /// Voxels crossed by the segment `[r - delta, r + delta]` of the ray to
    /// `point`, with their clamped projective distances.
    fn ray_updates(&self, origin: &Vector3<f64>, point: &Vector3<f64>) -> Option<Vec<(VoxelIndex, f64)>> {
        let ray = point - origin;
        let range = ray.norm();
        if !(range > 1e-9 && range.is_finite() && origin.iter().all(|x| x.is_finite())) {
            return None;
        }
        let u = ray / range;
        let delta = self.config.truncation;
        let s = self.config.voxel_size;
        let a = origin + u * (range - delta).max(0.0);
        let b = origin + u * (range + delta);
        // grid coordinates in which cell `v` spans [v, v + 1)
        let ga = a / s + Vector3::repeat(0.5);
        let gb = b / s + Vector3::repeat(0.5);
        let dir = gb - ga;
        let mut cell = ga.map(|x| x.floor() as i64);
        let last = gb.map(|x| x.floor() as i64);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if dir[k] > 0.0 {
                step[k] = 1;
                t_max[k] = (cell[k] as f64 + 1.0 - ga[k]) / dir[k];
                t_delta[k] = 1.0 / dir[k];
            } else if dir[k] < 0.0 {
                step[k] = -1;
                t_max[k] = (cell[k] as f64 - ga[k]) / dir[k];
                t_delta[k] = -1.0 / dir[k];
            }
        }
        let budget = (last - cell).abs().sum() as usize + 1;
        let mut out = Vec::with_capacity(budget);
        for _ in 0..budget {
            let v = [cell.x, cell.y, cell.z];
            let along = (self.center(&v) - origin).dot(&u);
            out.push((v, (range - along).clamp(-delta, delta)));
            let k = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[k] > 1.0 {
                break;
            }
            cell[k] += step[k];
            t_max[k] += t_delta[k];
        }
        Some(out)
    }

    /// Integrates world-frame `points` observed from `origin`. Rays are
    /// traced in parallel; each block then applies its updates in point
    /// order, so the result is independent of the execution policy.
    pub fn integrate_cloud(&mut self, points: &[Vector3<f64>], origin: &Vector3<f64>) -> IntegrationStats {
        let mode = self.config.mode;
        let exec = self.config.exec;
        let rays = exec.map(points, |p| {
            let w = compute_weight((p - origin).norm(), mode).ok()?;
            Some((w, self.ray_updates(origin, p)?))
        });
        let mut stats = IntegrationStats::default();
        let mut per_block: BTreeMap<VoxelIndex, Vec<(usize, f64, f64)>> = BTreeMap::new();
        for ray in rays {
            let Some((w, updates)) = ray else {
                stats.skipped += 1;
                continue;
            };
            stats.integrated += 1;
            for (v, d) in updates {
                let (b, l) = split_index(&v);
                per_block.entry(b).or_default().push((l, d, w));
            }
        }
        let mut work: Vec<(VoxelIndex, Block, Vec<(usize, f64, f64)>)> = per_block
            .into_iter()
            .map(|(b, ups)| {
                let blk = self.blocks.remove(&b).unwrap_or_else(new_block);
                (b, blk, ups)
            })
            .collect();
        let w_max = self.config.max_weight;
        exec.for_each_mut(&mut work, |(_, blk, ups)| {
            for &(l, d, w) in ups.iter() {
                blk[l].fuse(d, w, w_max);
            }
        });
        for (b, blk, _) in work {
            self.blocks.insert(b, blk);
        }
        stats
    }

    /// Trilinear interpolation of distance and weight at a point; `None`
    /// unless every surrounding voxel with a non-negligible trilinear weight
    /// is observed.
    pub fn interpolate(&self, p: &Vector3<f64>) -> Option<TsdfVoxel> {
        let g = p / self.config.voxel_size;
        let base = g.map(|x| x.floor());
        let f = g - base;
        let base = [base.x as i64, base.y as i64, base.z as i64];
        let mut out = TsdfVoxel::default();
        let mut total = 0.0;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let beta: f64 = (0..3)
                .map(|k| if o[k] == 1 { f[k] } else { 1.0 - f[k] })
                .product();
            // corners with vanishing weight need not be observed
            if beta < 1e-9 {
                continue;
            }
            let v = [0, 1, 2].map(|k| base[k] + o[k] as i64);
            let vox = self.get(&v)?;
            out.distance += beta * vox.distance;
            out.weight += beta * vox.weight;
            total += beta;
        }
        out.distance /= total;
        out.weight /= total;
        Some(out)
    }
}

/// A grid expressed in the frame of its anchor keyframe.
#[derive(Debug, Clone)]
pub struct Submap {
    pub anchor: Pose,
    pub grid: VoxelGrid,
    pub keyframes: Vec<usize>,
}

/// Resamples every submap into one world grid: each output voxel near a
/// transformed observed voxel takes the trilinear interpolation of the
/// submap at its centre, fused in submap order with the weighted-average
/// rule.
pub fn fuse_submaps(config: TsdfConfig, submaps: &[Submap], anchors: &[Pose]) -> Result<VoxelGrid> {
    if anchors.len() != submaps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} anchors for {} submaps",
            anchors.len(),
            submaps.len()
        )));
    }
    let mut out = VoxelGrid::new(config)?;
    let s = config.voxel_size;
    for (sub, anchor) in submaps.iter().zip(anchors) {
        let mut candidates = HashSet::new();
        for (v, _) in sub.grid.observed() {
            let q = anchor.transform(&sub.grid.center(&v)) / s;
            let base = q.map(|x| x.floor() as i64);
            for corner in 0..8 {
                candidates.insert([
                    base.x + (corner & 1),
                    base.y + ((corner >> 1) & 1),
                    base.z + ((corner >> 2) & 1),
                ]);
            }
        }
        let mut candidates: Vec<_> = candidates.into_iter().collect();
        candidates.sort_unstable();
        let inv = anchor.inverse();
        let samples = config.exec.map(&candidates, |v| {
            sub.grid.interpolate(&inv.transform(&out.center(v)))
        });
        for (v, sample) in candidates.iter().zip(samples) {
            if let Some(vox) = sample {
                out.fuse(v, vox.distance, vox.weight);
            }
        }
    }
    Ok(out)
}
