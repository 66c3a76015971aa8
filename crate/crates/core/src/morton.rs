//! Voxel addressing: metric coordinates, integer voxel keys and Morton codes.
//!
//! A tree has `depth_levels` levels below the root. Keys are stored with the
//! `2^(depth_levels - 1)` bias already applied so every component is unsigned.
//! The Morton word interleaves one bit of each component per level, x in the
//! lowest bit of each triple and z in the highest; bit 63 is never used.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

/// Deepest supported tree; 21 levels of 3 bits fill 63 bits of a `u64`.
pub const MAX_DEPTH_LEVELS: u8 = 21;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeGeometry<T> {
    resolution: T,
    depth_levels: u8,
}

impl<T: Real> TreeGeometry<T> {
    pub fn new(resolution: T, depth_levels: u8) -> Result<Self> {
        if !(resolution.is_finite() && resolution > T::zero()) {
            return Err(Error::InvalidGeometry(format!(
                "resolution must be positive and finite, got {resolution}"
            )));
        }
        if !(1..=MAX_DEPTH_LEVELS).contains(&depth_levels) {
            return Err(Error::InvalidGeometry(format!(
                "depth levels must lie in [1, {MAX_DEPTH_LEVELS}], got {depth_levels}"
            )));
        }
        Ok(Self {
            resolution,
            depth_levels,
        })
    }

    #[inline]
    pub fn resolution(&self) -> T {
        self.resolution
    }

    #[inline]
    pub fn depth_levels(&self) -> u8 {
        self.depth_levels
    }

    /// Edge length of a node at `depth` (0 = leaf).
    #[inline]
    pub fn res_at(&self, depth: u8) -> T {
        self.resolution * T::lit((1u64 << depth) as f64)
    }

    #[inline]
    pub fn half_extent(&self) -> T {
        self.res_at(self.depth_levels - 1)
    }

    /// Edge length of the whole mapped cube.
    #[inline]
    pub fn extent(&self) -> T {
        self.res_at(self.depth_levels)
    }

    #[inline]
    pub(crate) fn key_offset(&self) -> i64 {
        1i64 << (self.depth_levels - 1)
    }

    /// Number of leaf cells per axis.
    #[inline]
    pub fn cells_per_axis(&self) -> u64 {
        1u64 << self.depth_levels
    }

    /// Metric coordinate of the grid line with (biased) leaf index `k`.
    #[inline]
    pub fn grid_line(&self, k: i64) -> T {
        T::lit((k - self.key_offset()) as f64) * self.resolution
    }

    pub fn contains(&self, c: Vec3<T>) -> bool {
        coord_to_key(c, self, 0).is_ok()
    }

    /// Closed axis-aligned bounds of the cell named by `key`.
    pub fn cell_bounds(&self, key: VoxelKey) -> (Vec3<T>, Vec3<T>) {
        let size = 1i64 << key.depth;
        let lo = Vec3::new(
            self.grid_line(key.x as i64),
            self.grid_line(key.y as i64),
            self.grid_line(key.z as i64),
        );
        let hi = Vec3::new(
            self.grid_line(key.x as i64 + size),
            self.grid_line(key.y as i64 + size),
            self.grid_line(key.z as i64 + size),
        );
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelKey {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub depth: u8,
}

impl VoxelKey {
    /// Builds a key, clearing the low `depth` bits of each component.
    pub fn new(x: u32, y: u32, z: u32, depth: u8) -> Self {
        let mask = !((1u32 << depth) - 1);
        Self {
            x: x & mask,
            y: y & mask,
            z: z & mask,
            depth,
        }
    }

    /// Ancestor (or self) at `depth`.
    #[inline]
    pub fn at_depth(self, depth: u8) -> Self {
        debug_assert!(depth >= self.depth);
        Self::new(self.x, self.y, self.z, depth)
    }

    #[inline]
    pub fn component(&self, axis: usize) -> u32 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    #[inline]
    pub fn morton(self) -> MortonCode {
        encode(self)
    }
}

/// A Morton word tagged with the depth of the node it names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MortonCode {
    pub code: u64,
    pub depth: u8,
}

impl MortonCode {
    #[inline]
    pub const fn new(code: u64, depth: u8) -> Self {
        Self { code, depth }
    }

    /// The root of a tree with `depth_levels` levels.
    #[inline]
    pub const fn root(depth_levels: u8) -> Self {
        Self::new(0, depth_levels)
    }

    #[inline]
    pub fn child_index(self, level: u8) -> usize {
        child_index(self, level)
    }

    /// Ancestor (or self) at `depth`.
    #[inline]
    pub fn at_depth(self, depth: u8) -> Self {
        debug_assert!(depth >= self.depth);
        let mask = if depth == 0 {
            u64::MAX
        } else {
            !((1u64 << (3 * depth as u32)) - 1)
        };
        Self::new(self.code & mask, depth)
    }

    /// Child `idx` (0..8) one level below.
    #[inline]
    pub fn child(self, idx: usize) -> Self {
        debug_assert!(self.depth > 0 && idx < 8);
        let d = self.depth - 1;
        Self::new(self.code | ((idx as u64) << (3 * d as u32)), d)
    }

    #[inline]
    pub fn is_ancestor_of(self, other: MortonCode) -> bool {
        self.depth >= other.depth && other.at_depth(self.depth) == self
    }

    #[inline]
    pub fn key(self) -> VoxelKey {
        decode(self)
    }
}

impl PartialOrd for MortonCode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Preorder: by word, and an ancestor before its descendants.
impl Ord for MortonCode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.code
            .cmp(&other.code)
            .then_with(|| other.depth.cmp(&self.depth))
    }
}

impl fmt::Display for MortonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}@{}", self.code, self.depth)
    }
}

/// Maps a metric coordinate to the key of the cell at `depth` containing it.
pub fn coord_to_key<T: Real>(c: Vec3<T>, geo: &TreeGeometry<T>, depth: u8) -> Result<VoxelKey> {
    debug_assert!(depth <= geo.depth_levels);
    let limit = geo.cells_per_axis() as i64;
    let mut k = [0u32; 3];
    for (axis, name) in ['x', 'y', 'z'].into_iter().enumerate() {
        let v = c[axis];
        let scaled = (v / geo.resolution).floor();
        let idx = scaled.to_i64().map(|s| s.saturating_add(geo.key_offset()));
        match idx {
            Some(i) if (0..limit).contains(&i) => k[axis] = i as u32,
            _ => {
                return Err(Error::OutOfExtent {
                    axis: name,
                    value: v.as_f64(),
                    half_extent: geo.half_extent().as_f64(),
                })
            }
        }
    }
    Ok(VoxelKey::new(k[0], k[1], k[2], depth))
}

/// Center of the cell named by `key`.
pub fn key_to_coord<T: Real>(key: VoxelKey, geo: &TreeGeometry<T>) -> Vec3<T> {
    let half = geo.res_at(key.depth) * T::lit(0.5);
    Vec3::new(
        geo.grid_line(key.x as i64) + half,
        geo.grid_line(key.y as i64) + half,
        geo.grid_line(key.z as i64) + half,
    )
}

/// Spreads the low 21 bits of `v` so bit i lands on bit 3i.
#[inline]
pub fn dilate(v: u32) -> u64 {
    let mut x = (v as u64) & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

/// Inverse of [`dilate`]: gathers bits 0, 3, 6, ... into a 21-bit integer.
#[inline]
pub fn contract(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

#[inline]
pub fn encode(k: VoxelKey) -> MortonCode {
    MortonCode::new(
        dilate(k.x) | (dilate(k.y) << 1) | (dilate(k.z) << 2),
        k.depth,
    )
}

#[inline]
pub fn decode(m: MortonCode) -> VoxelKey {
    VoxelKey {
        x: contract(m.code),
        y: contract(m.code >> 1),
        z: contract(m.code >> 2),
        depth: m.depth,
    }
}

/// Three-bit child index stored for `level` (0 = the leaf level).
#[inline]
pub fn child_index(m: MortonCode, level: u8) -> usize {
    ((m.code >> (3 * level as u32)) & 0b111) as usize
}
