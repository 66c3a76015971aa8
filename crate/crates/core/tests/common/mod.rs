//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use occtree::morton::{coord_to_key, encode, key_to_coord};
use occtree::{
    MortonCode, NodeHandle, NodeState, OccupancyConfig, OccupancyMap, TreeGeometry, Vec3, VoxelKey,
};
use rand::Rng;

pub type V = Vec3<f64>;

pub fn v(x: f64, y: f64, z: f64) -> V {
    Vec3::new(x, y, z)
}

/// Leaf cells met by the segment `o -> e`, excluding the cells of both
/// endpoints. Built by sorting every grid-plane crossing and probing the
/// midpoint of each gap; gaps of (numerically) zero length are skipped.
pub fn sweep_cells(o: V, e: V, geo: &TreeGeometry<f64>) -> Vec<VoxelKey> {
    let ko = coord_to_key(o, geo, 0).unwrap();
    let ke = coord_to_key(e, geo, 0).unwrap();
    if ko == ke {
        return Vec::new();
    }
    let mut ts = vec![0.0, 1.0];
    for a in 0..3 {
        let d = e[a] - o[a];
        if d == 0.0 {
            continue;
        }
        let (ka, kb) = (ko.component(a) as i64, ke.component(a) as i64);
        for b in ka.min(kb) + 1..=ka.max(kb) {
            let t = (geo.grid_line(b) - o[a]) / d;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<VoxelKey> = Vec::new();
    for w in ts.windows(2) {
        if w[1] - w[0] < 1e-12 {
            continue;
        }
        let t = 0.5 * (w[0] + w[1]);
        let k = coord_to_key(o + (e - o) * t, geo, 0).unwrap();
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    out.retain(|k| *k != ko && *k != ke);
    out
}

/// Dense leaf grid over a whole (small) map.
#[derive(Clone)]
pub struct Dense {
    pub geo: TreeGeometry<f64>,
    pub n: usize,
    pub vals: Vec<f32>,
}

impl Dense {
    pub fn new(geo: TreeGeometry<f64>, prior: f32) -> Self {
        let n = geo.cells_per_axis() as usize;
        Self {
            geo,
            n,
            vals: vec![prior; n * n * n],
        }
    }

    #[inline]
    pub fn idx(&self, k: VoxelKey) -> usize {
        (k.z as usize * self.n + k.y as usize) * self.n + k.x as usize
    }

    pub fn get(&self, k: VoxelKey) -> f32 {
        self.vals[self.idx(k)]
    }

    pub fn set(&mut self, k: VoxelKey, val: f32) {
        let i = self.idx(k);
        self.vals[i] = val;
    }

    pub fn keys(&self) -> impl Iterator<Item = VoxelKey> + '_ {
        let n = self.n as u32;
        (0..n).flat_map(move |z| {
            (0..n).flat_map(move |y| (0..n).map(move |x| VoxelKey::new(x, y, z, 0)))
        })
    }

    pub fn block_keys(&self, code: MortonCode) -> Vec<VoxelKey> {
        let k = code.key();
        let s = 1u32 << code.depth;
        let mut out = Vec::with_capacity((s * s * s) as usize);
        for z in k.z..k.z + s {
            for y in k.y..k.y + s {
                for x in k.x..k.x + s {
                    out.push(VoxelKey::new(x, y, z, 0));
                }
            }
        }
        out
    }

    fn block_range(code: MortonCode) -> (VoxelKey, u32) {
        (code.key(), 1u32 << code.depth)
    }

    fn block_max(&self, code: MortonCode) -> f32 {
        let (k, s) = Self::block_range(code);
        let mut max = f32::NEG_INFINITY;
        for z in k.z..k.z + s {
            for y in k.y..k.y + s {
                let row = self.idx(VoxelKey::new(k.x, y, z, 0));
                max = self.vals[row..row + s as usize]
                    .iter()
                    .fold(max, |m, &v| m.max(v));
            }
        }
        max
    }

    /// Reference semantics of coarse writes: a block whose maximum is not
    /// occupied is overwritten as a whole with `op(max)`; otherwise the rule
    /// is applied to each child block; occupied leaves are kept.
    pub fn coarse(
        &mut self,
        code: MortonCode,
        cfg: &OccupancyConfig,
        occupied: &dyn Fn(f32) -> bool,
        op: &dyn Fn(f32) -> f32,
    ) {
        let max = self.block_max(code);
        if !occupied(max) {
            let val = cfg.clamp(op(max));
            let (k, s) = Self::block_range(code);
            for z in k.z..k.z + s {
                for y in k.y..k.y + s {
                    let row = self.idx(VoxelKey::new(k.x, y, z, 0));
                    self.vals[row..row + s as usize].fill(val);
                }
            }
            return;
        }
        if code.depth == 0 {
            return;
        }
        for i in 0..8 {
            self.coarse(code.child(i), cfg, occupied, op);
        }
    }
}

/// Everything wrong with the tree, checked against brute-force recomputation.
pub fn invariant_violations(map: &OccupancyMap<f64>) -> Vec<String> {
    struct Acc {
        errors: Vec<String>,
        logical_nodes: usize,
    }
    #[derive(Clone, Copy)]
    struct Sub {
        occupied: bool,
        free: bool,
        unknown: bool,
    }
    fn rec(map: &OccupancyMap<f64>, h: NodeHandle<'_, f64>, acc: &mut Acc) -> Sub {
        acc.logical_nodes += 1;
        let view = h.view();
        let cfg = map.config();
        if view.depth() as usize > map.depth_levels() as usize {
            acc.errors
                .push(format!("{}: depth out of range", view.code));
        }
        let Some(children) = h.children() else {
            let v = view.occupancy;
            if !(v >= cfg.clamp_min && v <= cfg.clamp_max) {
                acc.errors
                    .push(format!("{}: value {v} not clamped", view.code));
            }
            let s = map.classify(v);
            let sub = Sub {
                occupied: s == NodeState::Occupied,
                free: s == NodeState::Free,
                unknown: s == NodeState::Unknown,
            };
            check_flags(&view, sub, acc);
            return sub;
        };
        let mut sub = Sub {
            occupied: false,
            free: false,
            unknown: false,
        };
        let mut max = f32::NEG_INFINITY;
        for c in children {
            let s = rec(map, c, acc);
            sub.occupied |= s.occupied;
            sub.free |= s.free;
            sub.unknown |= s.unknown;
            max = max.max(c.occupancy());
        }
        if view.occupancy.to_bits() != max.to_bits() {
            acc.errors.push(format!(
                "{}: value {} != max of children {max}",
                view.code, view.occupancy
            ));
        }
        if view.indicators.all_children_same {
            acc.errors
                .push(format!("{}: expanded node flagged all-same", view.code));
        }
        if map.auto_prune() {
            let first = children[0].view();
            if children.iter().all(|c| {
                c.is_leaf()
                    && c.occupancy().to_bits() == first.occupancy.to_bits()
                    && c.view().color == first.color
            }) {
                acc.errors.push(format!(
                    "{}: prunable node left with auto-prune on",
                    view.code
                ));
            }
        }
        check_flags(&view, sub, acc);
        sub
    }
    fn check_flags(view: &occtree::NodeView, sub: Sub, acc: &mut Acc) {
        if view.indicators.contains_free != sub.free
            || view.indicators.contains_unknown != sub.unknown
            || view.contains_occupied != sub.occupied
        {
            acc.errors.push(format!(
                "{}: indicators (o {}, f {}, u {}) vs subtree (o {}, f {}, u {})",
                view.code,
                view.contains_occupied,
                view.indicators.contains_free,
                view.indicators.contains_unknown,
                sub.occupied,
                sub.free,
                sub.unknown
            ));
        }
    }
    let mut acc = Acc {
        errors: Vec::new(),
        logical_nodes: 0,
    };
    rec(map, map.root(), &mut acc);
    if map.auto_prune() && map.tree_stats().total() != acc.logical_nodes {
        acc.errors.push(format!(
            "auto-prune on but {} physical nodes for {} logical ones",
            map.tree_stats().total(),
            acc.logical_nodes
        ));
    }
    acc.errors
}

/// Occupancy of every leaf, read through the map.
pub fn leaf_values(map: &OccupancyMap<f64>) -> Vec<f32> {
    let d = Dense::new(*map.geometry(), 0.0);
    d.keys()
        .map(|k| map.get_node(encode(k)).occupancy)
        .collect()
}

/// Random point strictly inside the map, `margin` away from the faces.
pub fn random_point(rng: &mut impl Rng, geo: &TreeGeometry<f64>, margin: f64) -> V {
    let h = geo.half_extent() - margin;
    v(
        rng.gen_range(-h..h),
        rng.gen_range(-h..h),
        rng.gen_range(-h..h),
    )
}

pub fn center(k: VoxelKey, geo: &TreeGeometry<f64>) -> V {
    key_to_coord(k, geo)
}

/// Leaf state per key, for quick oracle lookups.
pub fn state_grid(map: &OccupancyMap<f64>) -> HashMap<VoxelKey, NodeState> {
    let d = Dense::new(*map.geometry(), 0.0);
    d.keys()
        .map(|k| (k, map.get_node(encode(k)).state))
        .collect()
}

/// A map with a mix of occupied, free and unknown regions built from
/// leaf updates and coarse writes.
pub fn random_map(rng: &mut impl Rng, levels: u8, res: f64, auto_prune: bool) -> OccupancyMap<f64> {
    let mut m = OccupancyMap::new(res, levels, OccupancyConfig::default(), auto_prune).unwrap();
    let geo = *m.geometry();
    let n = geo.cells_per_axis() as u32;
    // free blocks
    for _ in 0..rng.gen_range(2..8) {
        let d = rng.gen_range(1..levels.min(4));
        let k = VoxelKey::new(
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            d,
        );
        m.set_coarse(encode(k), -1.5).unwrap();
    }
    // scattered leaves and occupied slabs
    for _ in 0..rng.gen_range(20..200) {
        let k = VoxelKey::new(
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            0,
        );
        let delta = [0.85, -0.41, 2.0, -2.0, 0.3][rng.gen_range(0..5)];
        m.update_occupancy(encode(k), delta).unwrap();
    }
    for _ in 0..rng.gen_range(0..3) {
        let axis = rng.gen_range(0..3);
        let at = rng.gen_range(0..n);
        let (lo, hi) = (rng.gen_range(0..n / 2), rng.gen_range(n / 2..n));
        for a in lo..hi {
            for b in lo..hi {
                let c = match axis {
                    0 => [at, a, b],
                    1 => [a, at, b],
                    _ => [a, b, at],
                };
                m.update_occupancy(encode(VoxelKey::new(c[0], c[1], c[2], 0)), 1.0)
                    .unwrap();
            }
        }
    }
    m
}

/// Mostly observed map: free everywhere, with unknown pockets and
/// occupied leaves and slabs.
pub fn known_map(rng: &mut impl Rng, levels: u8, res: f64, occupied: bool) -> OccupancyMap<f64> {
    let mut m = OccupancyMap::new(res, levels, OccupancyConfig::default(), true).unwrap();
    let n = m.geometry().cells_per_axis() as u32;
    m.set_coarse(m.root_code(), -2.0).unwrap();
    for _ in 0..rng.gen_range(3..12) {
        let d = rng.gen_range(1..levels.min(4));
        let k = VoxelKey::new(
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            d,
        );
        m.set_coarse(encode(k), 0.0).unwrap();
    }
    for _ in 0..rng.gen_range(0..40) {
        let k = VoxelKey::new(
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            0,
        );
        m.set_coarse(encode(k).at_depth(1), 0.0).unwrap();
    }
    if !occupied {
        return m;
    }
    for _ in 0..rng.gen_range(10..100) {
        let k = VoxelKey::new(
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            0,
        );
        m.update_occupancy(encode(k), 3.0).unwrap();
    }
    for _ in 0..rng.gen_range(1..4) {
        let axis = rng.gen_range(0..3);
        let at = rng.gen_range(0..n);
        let (lo, hi) = (rng.gen_range(0..n / 2), rng.gen_range(n / 2..n));
        for a in lo..hi {
            for b in lo..hi {
                let c = match axis {
                    0 => [at, a, b],
                    1 => [a, at, b],
                    _ => [a, b, at],
                };
                m.update_occupancy(encode(VoxelKey::new(c[0], c[1], c[2], 0)), 3.0)
                    .unwrap();
            }
        }
    }
    m
}
