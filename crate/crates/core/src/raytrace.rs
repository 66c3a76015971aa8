//! Ray traversal over the voxel grid and ray preprocessing.

use crate::error::Result;
use crate::morton::{coord_to_key, TreeGeometry, VoxelKey};
use crate::scalar::{Real, Vec3};
use crate::volume::Aabb;

/// Exact grid traversal (3D DDA) between the cells of two points.
///
/// Yields, in order of increasing ray parameter, the cells at `depth` that the
/// segment passes through strictly between the start cell and the end cell.
/// The start cell can be included with [`GridRay::including_start`].
///
/// Crossing parameters are computed directly from the integer index of each
/// grid plane, so [`GridRay::skip_block`] can jump over an aligned block of
/// cells and land in exactly the state cell-by-cell stepping would reach.
#[derive(Debug, Clone)]
pub struct GridRay<T> {
    origin: Vec3<T>,
    delta: Vec3<T>,
    geo: TreeGeometry<T>,
    depth: u8,
    cur: [i64; 3],
    end: [i64; 3],
    step: [i64; 3],
    t_next: [T; 3],
    remaining: u64,
    pending: bool,
}

impl<T: Real> GridRay<T> {
    pub fn new(origin: Vec3<T>, end: Vec3<T>, geo: &TreeGeometry<T>, depth: u8) -> Result<Self> {
        let start_key = coord_to_key(origin, geo, depth)?;
        let end_key = coord_to_key(end, geo, depth)?;
        let cur = grid_index(start_key);
        let end_idx = grid_index(end_key);
        let delta = end - origin;
        let mut ray = Self {
            origin,
            delta,
            geo: *geo,
            depth,
            cur,
            end: end_idx,
            step: [0; 3],
            t_next: [T::infinity(); 3],
            remaining: 0,
            pending: false,
        };
        for a in 0..3 {
            ray.step[a] = (end_idx[a] - cur[a]).signum();
            ray.remaining += (end_idx[a] - cur[a]).unsigned_abs();
            ray.refresh_axis(a);
        }
        Ok(ray)
    }

    /// Also yield the start cell (unless it is the end cell).
    pub fn including_start(mut self) -> Self {
        self.pending = true;
        self
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// Total number of cell steps from the start cell to the end cell.
    pub fn remaining_steps(&self) -> u64 {
        self.remaining
    }

    #[inline]
    fn key_of(&self, g: [i64; 3]) -> VoxelKey {
        let d = self.depth;
        VoxelKey::new(
            (g[0] << d) as u32,
            (g[1] << d) as u32,
            (g[2] << d) as u32,
            d,
        )
    }

    /// Ray parameter at which the plane with grid index `b` on `axis` is hit.
    #[inline]
    fn plane_t(&self, axis: usize, b: i64) -> T {
        (self.geo.grid_line(b << self.depth) - self.origin[axis]) / self.delta[axis]
    }

    /// Index of the next plane crossed on `axis` from cell `g`.
    #[inline]
    fn next_plane(&self, axis: usize, g: i64) -> i64 {
        if self.step[axis] > 0 {
            g + 1
        } else {
            g
        }
    }

    #[inline]
    fn refresh_axis(&mut self, a: usize) {
        self.t_next[a] = if self.cur[a] == self.end[a] {
            T::infinity()
        } else {
            self.plane_t(a, self.next_plane(a, self.cur[a]))
        };
    }

    /// Axis of the next crossing, ties broken towards x.
    #[inline]
    fn next_axis(&self) -> usize {
        let mut best = 0;
        for a in 1..3 {
            if self.t_next[a] < self.t_next[best] {
                best = a;
            }
        }
        if self.cur[best] == self.end[best] {
            // all remaining axes are exhausted; pick any live one
            (0..3).find(|&a| self.cur[a] != self.end[a]).unwrap_or(best)
        } else {
            best
        }
    }

    /// Skips every remaining cell inside the aligned block at `block_depth`
    /// that contains the current cell. The next yielded cell is the first
    /// cell after the block, if the ray reaches one before its end cell.
    pub fn skip_block(&mut self, block_depth: u8) {
        if self.remaining == 0 {
            return;
        }
        debug_assert!(block_depth >= self.depth);
        let size = 1i64 << (block_depth - self.depth);
        let lo = self.cur.map(|g| g & !(size - 1));

        // exit plane per axis, if the ray leaves the block through it
        let mut exit: Option<(T, usize)> = None;
        let mut exit_plane = [0i64; 3];
        for a in 0..3 {
            let crosses = match self.step[a] {
                1 => self.end[a] >= lo[a] + size,
                -1 => self.end[a] < lo[a],
                _ => false,
            };
            if !crosses {
                continue;
            }
            exit_plane[a] = if self.step[a] > 0 {
                lo[a] + size
            } else {
                lo[a]
            };
            let t = self.plane_t(a, exit_plane[a]);
            if exit.is_none_or(|(bt, _)| t < bt) {
                exit = Some((t, a));
            }
        }

        let Some((t_exit, a_exit)) = exit else {
            // the end cell lies inside the block
            self.cur = self.end;
            self.remaining = 0;
            self.pending = false;
            return;
        };

        for a in 0..3 {
            if self.step[a] == 0 {
                continue;
            }
            let in_block = if self.step[a] > 0 {
                lo[a] + size - 1 - self.cur[a]
            } else {
                self.cur[a] - lo[a]
            };
            let to_end = (self.end[a] - self.cur[a]).abs();
            let n = if a == a_exit {
                in_block + 1
            } else {
                let limit = in_block.min(to_end);
                // count crossings that precede the exit crossing
                let before = |j: i64| {
                    let plane = self.next_plane(a, self.cur[a] + j * self.step[a]);
                    let t = self.plane_t(a, plane);
                    t < t_exit || (t == t_exit && a < a_exit)
                };
                let (mut lo_j, mut hi_j) = (0i64, limit);
                while lo_j < hi_j {
                    let mid = (lo_j + hi_j) / 2;
                    if before(mid) {
                        lo_j = mid + 1;
                    } else {
                        hi_j = mid;
                    }
                }
                lo_j
            };
            self.cur[a] += n * self.step[a];
            self.remaining -= n as u64;
        }
        for a in 0..3 {
            self.refresh_axis(a);
        }
        self.pending = true;
    }
}

impl<T: Real> Iterator for GridRay<T> {
    type Item = VoxelKey;

    fn next(&mut self) -> Option<VoxelKey> {
        if self.pending {
            self.pending = false;
            return (self.remaining > 0).then(|| self.key_of(self.cur));
        }
        if self.remaining == 0 {
            return None;
        }
        let a = self.next_axis();
        self.cur[a] += self.step[a];
        self.remaining -= 1;
        self.refresh_axis(a);
        (self.remaining > 0).then(|| self.key_of(self.cur))
    }
}

#[inline]
fn grid_index(k: VoxelKey) -> [i64; 3] {
    [
        (k.x >> k.depth) as i64,
        (k.y >> k.depth) as i64,
        (k.z >> k.depth) as i64,
    ]
}

/// Leaf cells strictly between the cells of `origin` and `end`.
pub fn trace_ray_cells<T: Real>(
    origin: Vec3<T>,
    end: Vec3<T>,
    geo: &TreeGeometry<T>,
) -> Result<Vec<VoxelKey>> {
    Ok(GridRay::new(origin, end, geo, 0)?.collect())
}

/// Sample positions `origin + i * res_d * dir` for
/// `i = 0 ..= floor(|end - origin| / res_d) - n`.
pub fn coarse_free_samples<T: Real>(
    origin: Vec3<T>,
    end: Vec3<T>,
    res_d: T,
    n: u32,
) -> Vec<Vec3<T>> {
    let d = end - origin;
    let len = d.norm();
    if !(len > T::zero()) || !(res_d > T::zero()) {
        return Vec::new();
    }
    let upper = (len / res_d).floor().to_i64().unwrap_or(-1) - n as i64;
    if upper < 0 {
        return Vec::new();
    }
    let unit = d / len;
    (0..=upper)
        .map(|i| origin + unit * (T::lit(i as f64) * res_d))
        .collect()
}

/// Clips a segment to a box. Endpoints already inside are returned untouched.
pub fn clamp_ray_to_region<T: Real>(
    origin: Vec3<T>,
    end: Vec3<T>,
    region: &Aabb<T>,
) -> Option<(Vec3<T>, Vec3<T>)> {
    let d = end - origin;
    let (mut t0, mut t1) = (T::zero(), T::one());
    for a in 0..3 {
        if d[a] == T::zero() {
            if origin[a] < region.min[a] || origin[a] > region.max[a] {
                return None;
            }
            continue;
        }
        let mut ta = (region.min[a] - origin[a]) / d[a];
        let mut tb = (region.max[a] - origin[a]) / d[a];
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    let clip = |t: T, fallback: Vec3<T>, bound_t: T| {
        if t == bound_t {
            fallback
        } else {
            // keep the clipped point on the box despite rounding
            (origin + d * t).max(region.min).min(region.max)
        }
    };
    Some((clip(t0, origin, T::zero()), clip(t1, end, T::one())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geo() -> TreeGeometry<f64> {
        TreeGeometry::new(0.1, 16).unwrap()
    }

    fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
        Vec3::new(x, y, z)
    }

    #[test]
    fn same_cell_is_empty() {
        let g = geo();
        assert!(
            trace_ray_cells(v(0.01, 0.02, 0.03), v(0.09, 0.08, 0.07), &g)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn axis_aligned_ray() {
        let g = geo();
        let cells = trace_ray_cells(v(0.05, 0.05, 0.05), v(0.45, 0.05, 0.05), &g).unwrap();
        let xs: Vec<u32> = cells.iter().map(|k| k.x - 32768).collect();
        assert_eq!(xs, vec![1, 2, 3]);
        assert!(cells.iter().all(|k| k.y == 32768 && k.z == 32768));
    }

    #[test]
    fn endpoint_outside_extent_is_an_error() {
        let g = TreeGeometry::new(0.1, 4).unwrap();
        assert!(trace_ray_cells(v(0.0, 0.0, 0.0), v(5.0, 0.0, 0.0), &g).is_err());
    }

    #[test]
    fn includes_start_on_request() {
        let g = geo();
        let cells: Vec<_> = GridRay::new(v(0.05, 0.05, 0.05), v(0.25, 0.05, 0.05), &g, 0)
            .unwrap()
            .including_start()
            .collect();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].x, 32768);
        let none: Vec<_> = GridRay::new(v(0.05, 0.05, 0.05), v(0.06, 0.05, 0.05), &g, 0)
            .unwrap()
            .including_start()
            .collect();
        assert!(none.is_empty());
    }

    #[test]
    fn coarse_samples_examples() {
        let s = coarse_free_samples(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.25, 1);
        let xs: Vec<f64> = s.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75]);
        let s = coarse_free_samples(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.25, 0);
        assert_eq!(s.len(), 5);
        assert_eq!(s[4].x, 1.0);
        assert!(coarse_free_samples(v(0.0, 0.0, 0.0), v(0.3, 0.0, 0.0), 0.25, 2).is_empty());
        assert!(coarse_free_samples(v(0.0, 0.0, 0.0), v(0.0, 0.0, 0.0), 0.25, 0).is_empty());
    }

    #[test]
    fn clamp_examples() {
        let b = Aabb::new(v(0.0, 0.0, 0.0), v(1.0, 1.0, 1.0));
        let (o, e) = clamp_ray_to_region(v(-1.0, 0.5, 0.5), v(0.5, 0.5, 0.5), &b).unwrap();
        assert!((o - v(0.0, 0.5, 0.5)).norm() < 1e-12);
        assert_eq!(e, v(0.5, 0.5, 0.5));
        let inside = (v(0.1, 0.2, 0.3), v(0.9, 0.8, 0.7));
        assert_eq!(clamp_ray_to_region(inside.0, inside.1, &b), Some(inside));
        assert_eq!(
            clamp_ray_to_region(v(-3.0, 0.5, 0.5), v(-2.0, 0.5, 0.5), &b),
            None
        );
        assert_eq!(
            clamp_ray_to_region(v(-1.0, 2.0, 0.5), v(2.0, 2.0, 0.5), &b),
            None
        );
    }

    /// Cells whose box meets the open segment with positive length.
    fn brute_force(
        o: Vec3<f64>,
        e: Vec3<f64>,
        g: &TreeGeometry<f64>,
    ) -> (Vec<VoxelKey>, Vec<VoxelKey>) {
        let ko = coord_to_key(o, g, 0).unwrap();
        let ke = coord_to_key(e, g, 0).unwrap();
        let lo = [ko.x.min(ke.x), ko.y.min(ke.y), ko.z.min(ke.z)];
        let hi = [ko.x.max(ke.x), ko.y.max(ke.y), ko.z.max(ke.z)];
        let (mut must, mut may) = (Vec::new(), Vec::new());
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let k = VoxelKey::new(x, y, z, 0);
                    if k == ko || k == ke {
                        continue;
                    }
                    let (bl, bh) = g.cell_bounds(k);
                    let (mut t0, mut t1) = (0.0f64, 1.0f64);
                    for a in 0..3 {
                        let d = e[a] - o[a];
                        if d == 0.0 {
                            if o[a] < bl[a] || o[a] > bh[a] {
                                t0 = 2.0;
                            }
                            continue;
                        }
                        let (mut ta, mut tb) = ((bl[a] - o[a]) / d, (bh[a] - o[a]) / d);
                        if ta > tb {
                            std::mem::swap(&mut ta, &mut tb);
                        }
                        t0 = t0.max(ta);
                        t1 = t1.min(tb);
                    }
                    if t1 - t0 > 1e-9 {
                        must.push(k);
                    } else if t1 - t0 >= -1e-9 {
                        may.push(k);
                    }
                }
            }
        }
        (must, may)
    }

    proptest! {
        #[test]
        fn dda_matches_segment_box_oracle(
            ox in -1.0f64..1.0, oy in -1.0f64..1.0, oz in -1.0f64..1.0,
            ex in -1.0f64..1.0, ey in -1.0f64..1.0, ez in -1.0f64..1.0,
        ) {
            let g = geo();
            let (o, e) = (v(ox, oy, oz), v(ex, ey, ez));
            let cells = trace_ray_cells(o, e, &g).unwrap();
            let (must, may) = brute_force(o, e, &g);
            for k in &must {
                prop_assert!(cells.contains(k), "missing {:?}", k);
            }
            for k in &cells {
                prop_assert!(must.contains(k) || may.contains(k), "extra {:?}", k);
            }
            // ordered by entry parameter
            let entry = |k: &VoxelKey| {
                let (bl, bh) = g.cell_bounds(*k);
                (0..3).map(|a| {
                    let d = e[a] - o[a];
                    if d == 0.0 { f64::NEG_INFINITY } else { ((bl[a] - o[a]) / d).min((bh[a] - o[a]) / d) }
                }).fold(f64::NEG_INFINITY, f64::max)
            };
            for w in cells.windows(2) {
                prop_assert!(entry(&w[0]) <= entry(&w[1]) + 1e-12);
            }
        }

        #[test]
        fn skipping_matches_stepping(
            ox in -2.0f64..2.0, oy in -2.0f64..2.0, oz in -2.0f64..2.0,
            ex in -2.0f64..2.0, ey in -2.0f64..2.0, ez in -2.0f64..2.0,
            block in 1u8..4, every in 1usize..6,
        ) {
            let g = geo();
            let (o, e) = (v(ox, oy, oz), v(ex, ey, ez));
            let all: Vec<_> = GridRay::new(o, e, &g, 0).unwrap().collect();
            let mut ray = GridRay::new(o, e, &g, 0).unwrap();
            let mut i = 0usize;
            let mut expect_pos = 0usize;
            while let Some(k) = ray.next() {
                prop_assert_eq!(Some(&k), all.get(expect_pos));
                i += 1;
                expect_pos += 1;
                if i % every == 0 {
                    ray.skip_block(block);
                    let blk = k.at_depth(block);
                    while expect_pos < all.len() && all[expect_pos].at_depth(block) == blk {
                        expect_pos += 1;
                    }
                }
            }
            prop_assert_eq!(expect_pos, all.len());
        }

        #[test]
        fn coarse_ray_cells_cover_leaf_ray(
            ox in -2.0f64..2.0, oy in -2.0f64..2.0, oz in -2.0f64..2.0,
            ex in -2.0f64..2.0, ey in -2.0f64..2.0, ez in -2.0f64..2.0,
        ) {
            let g = geo();
            let (o, e) = (v(ox, oy, oz), v(ex, ey, ez));
            let coarse: Vec<_> = GridRay::new(o, e, &g, 2).unwrap().including_start().collect();
            let ke = coord_to_key(e, &g, 2).unwrap();
            for k in GridRay::new(o, e, &g, 0).unwrap() {
                let a = k.at_depth(2);
                prop_assert!(coarse.contains(&a) || a == ke);
            }
        }
    }
}
