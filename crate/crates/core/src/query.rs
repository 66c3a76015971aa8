//! Filtered region iteration and the collision / information-gain queries.

use crate::error::Result;
use crate::morton::{coord_to_key, encode, key_to_coord, MortonCode, VoxelKey};
use crate::octree::{Children, NodeRef, NodeState, NodeView, OccupancyMap, ALL_SAME_FLAG};
use crate::raytrace::GridRay;
use crate::scalar::{Real, Vec3};
use crate::volume::{Aabb, BoundingVolume, SensorModel, Sphere};

/// Which nodes an iterator yields.
///
/// State flags match nodes that are not expanded further (leaves, inner
/// leaves and nodes at the minimum depth). Contains flags match any node
/// whose subtree holds such space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateFilter {
    pub occupied: bool,
    pub free: bool,
    pub unknown: bool,
    pub contains_occupied: bool,
    pub contains_free: bool,
    pub contains_unknown: bool,
}

impl StateFilter {
    pub const OCCUPIED: Self = Self::states(true, false, false);
    pub const FREE: Self = Self::states(false, true, false);
    pub const UNKNOWN: Self = Self::states(false, false, true);
    pub const ALL_STATES: Self = Self::states(true, true, true);

    pub const fn states(occupied: bool, free: bool, unknown: bool) -> Self {
        Self {
            occupied,
            free,
            unknown,
            contains_occupied: false,
            contains_free: false,
            contains_unknown: false,
        }
    }

    pub fn any(&self) -> bool {
        self.occupied
            || self.free
            || self.unknown
            || self.contains_occupied
            || self.contains_free
            || self.contains_unknown
    }

    #[inline]
    fn state_matches(&self, s: NodeState) -> bool {
        match s {
            NodeState::Occupied => self.occupied,
            NodeState::Free => self.free,
            NodeState::Unknown => self.unknown,
        }
    }

    #[inline]
    fn contains_matches(&self, v: &NodeView) -> bool {
        (self.contains_occupied && v.contains_occupied)
            || (self.contains_free && v.indicators.contains_free)
            || (self.contains_unknown && v.indicators.contains_unknown)
    }

    /// Whether `v` is yielded; `terminal` nodes are not expanded further.
    pub fn matches(&self, v: &NodeView, terminal: bool) -> bool {
        self.contains_matches(v) || (terminal && self.state_matches(v.state))
    }

    /// Whether anything below `v` can still match.
    pub fn subtree_may_match(&self, v: &NodeView) -> bool {
        ((self.occupied || self.contains_occupied) && v.contains_occupied)
            || ((self.free || self.contains_free) && v.indicators.contains_free)
            || ((self.unknown || self.contains_unknown) && v.indicators.contains_unknown)
    }
}

/// Depth-first, Morton-ordered iteration over the nodes intersecting a volume.
pub struct RegionIter<'a, T> {
    map: &'a OccupancyMap<T>,
    volume: BoundingVolume<T>,
    filter: StateFilter,
    min_depth: u8,
    prune_search: bool,
    honor_all_same: bool,
    stack: Vec<(NodeRef<'a>, MortonCode)>,
    all_same_descents: usize,
    visited: usize,
}

impl<'a, T: Real> RegionIter<'a, T> {
    fn new(
        map: &'a OccupancyMap<T>,
        volume: BoundingVolume<T>,
        filter: StateFilter,
        min_depth: u8,
    ) -> Self {
        let mut stack = Vec::with_capacity(8 * map.depth_levels() as usize + 1);
        if volume.is_valid() && filter.any() && min_depth <= map.depth_levels() {
            stack.push((map.root_ref(), map.root_code()));
        }
        Self {
            map,
            volume,
            filter,
            min_depth,
            prune_search: true,
            honor_all_same: true,
            stack,
            all_same_descents: 0,
            visited: 0,
        }
    }

    /// Descends every intersecting branch, ignoring indicators. Same output,
    /// more work; used to check the indicator shortcuts.
    pub fn without_indicator_pruning(mut self) -> Self {
        self.prune_search = false;
        self
    }

    /// Expands all-same nodes as if their stale children were current.
    /// Only useful to exercise [`Self::all_same_descents`].
    pub fn ignoring_all_same(mut self) -> Self {
        self.honor_all_same = false;
        self
    }

    /// Number of expanded nodes that carried the all-same flag.
    pub fn all_same_descents(&self) -> usize {
        self.all_same_descents
    }

    /// Nodes examined so far.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl<'a, T: Real> Iterator for RegionIter<'a, T> {
    type Item = NodeView;

    fn next(&mut self) -> Option<NodeView> {
        let geo = *self.map.geometry();
        while let Some((node, code)) = self.stack.pop() {
            self.visited += 1;
            let (lo, hi) = geo.cell_bounds(code.key());
            if !self.volume.intersects_box(lo, hi) {
                continue;
            }
            let view = self.map.make_view(node, code);
            let children = if code.depth > self.min_depth {
                expand(node, self.honor_all_same, &mut self.all_same_descents)
            } else {
                None
            };
            let terminal = children.is_none();
            if let Some(ch) = children {
                if !self.prune_search || self.filter.subtree_may_match(&view) {
                    for i in (0..8).rev() {
                        self.stack.push((ch.get(i), code.child(i)));
                    }
                }
            }
            if self.filter.matches(&view, terminal) {
                return Some(view);
            }
        }
        None
    }
}

/// Children to expand, from a single read of the node's flags. Stale
/// children under an all-same node are skipped unless `honor_all_same` is off;
/// expanding such a node bumps the counter.
#[inline]
fn expand<'a>(
    node: NodeRef<'a>,
    honor_all_same: bool,
    all_same_descents: &mut usize,
) -> Option<&'a Children> {
    match node {
        NodeRef::Leaf(_) => None,
        NodeRef::Inner(n) => {
            let flags = n.flags();
            let children = n.physical_children()?;
            if flags & ALL_SAME_FLAG != 0 {
                if honor_all_same {
                    return None;
                }
                *all_same_descents += 1;
            }
            Some(children)
        }
    }
}

pub fn iterate_region<T: Real>(
    map: &OccupancyMap<T>,
    volume: impl Into<BoundingVolume<T>>,
    filter: StateFilter,
    min_depth: u8,
) -> RegionIter<'_, T> {
    RegionIter::new(map, volume.into(), filter, min_depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CollisionMode {
    /// Occupied and unknown space both collide.
    Conservative,
    OccupiedOnly,
}

impl CollisionMode {
    #[inline]
    fn filter(self) -> StateFilter {
        match self {
            CollisionMode::Conservative => StateFilter::states(true, false, true),
            CollisionMode::OccupiedOnly => StateFilter::OCCUPIED,
        }
    }

    #[inline]
    fn collides(self, s: NodeState) -> bool {
        match self {
            CollisionMode::Conservative => s != NodeState::Free,
            CollisionMode::OccupiedOnly => s == NodeState::Occupied,
        }
    }
}

/// True if any cell intersecting the sphere is occupied (or unknown, in
/// conservative mode).
pub fn region_collision<T: Real>(
    map: &OccupancyMap<T>,
    sphere: &Sphere<T>,
    mode: CollisionMode,
) -> bool {
    iterate_region(map, *sphere, mode.filter(), 0)
        .next()
        .is_some()
}

/// Leaf-by-leaf version of [`region_collision`].
pub fn region_collision_flat<T: Real>(
    map: &OccupancyMap<T>,
    sphere: &Sphere<T>,
    mode: CollisionMode,
) -> bool {
    let geo = map.geometry();
    let mut hit = false;
    for_each_leaf_in(map, &sphere.aabb(), |key| {
        let (lo, hi) = geo.cell_bounds(key);
        if sphere.intersects_box(lo, hi) && mode.collides(map.get_node(encode(key)).state) {
            hit = true;
            return false;
        }
        true
    });
    hit
}

/// Calls `f` for every leaf key inside `b` (clipped to the extent) until it
/// returns false.
pub(crate) fn for_each_leaf_in<T: Real>(
    map: &OccupancyMap<T>,
    b: &Aabb<T>,
    mut f: impl FnMut(VoxelKey) -> bool,
) {
    let geo = map.geometry();
    let h = geo.half_extent();
    let Some(b) = b.intersection(&Aabb::new(Vec3::splat(-h), Vec3::splat(h))) else {
        return;
    };
    let top = geo.cells_per_axis() as i64 - 1;
    let idx = |c: T| {
        let off = geo.key_offset();
        ((c / geo.resolution()).floor().to_i64().unwrap_or(0) + off).clamp(0, top) as u32
    };
    let (lo, hi) = (b.min.to_array().map(idx), b.max.to_array().map(idx));
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                if !f(VoxelKey::new(x, y, z, 0)) {
                    return;
                }
            }
        }
    }
}

/// True if any cell on the closed segment collides.
///
/// Branches that cannot collide are crossed in one step.
pub fn line_collision<T: Real>(
    map: &OccupancyMap<T>,
    p0: Vec3<T>,
    p1: Vec3<T>,
    mode: CollisionMode,
) -> Result<bool> {
    let geo = map.geometry();
    let k0 = coord_to_key(p0, geo, 0)?;
    let k1 = coord_to_key(p1, geo, 0)?;
    if mode.collides(map.get_node(encode(k0)).state)
        || mode.collides(map.get_node(encode(k1)).state)
    {
        return Ok(true);
    }
    let mut ray = GridRay::new(p0, p1, geo, 0)?;
    Ok(walk_ray(map, &mut ray, mode.filter()))
}

/// Leaf-by-leaf version of [`line_collision`].
pub fn line_collision_flat<T: Real>(
    map: &OccupancyMap<T>,
    p0: Vec3<T>,
    p1: Vec3<T>,
    mode: CollisionMode,
) -> Result<bool> {
    let geo = map.geometry();
    let k0 = coord_to_key(p0, geo, 0)?;
    let k1 = coord_to_key(p1, geo, 0)?;
    let state = |k: VoxelKey| map.get_node(encode(k)).state;
    if mode.collides(state(k0)) || mode.collides(state(k1)) {
        return Ok(true);
    }
    Ok(GridRay::new(p0, p1, geo, 0)?.any(|k| mode.collides(state(k))))
}

/// Walks the ray and reports whether it meets a cell matching `filter`.
/// Cells are at the ray's depth; a coarser node that cannot match is
/// skipped as a whole.
fn walk_ray<T: Real>(map: &OccupancyMap<T>, ray: &mut GridRay<T>, filter: StateFilter) -> bool {
    let depth = ray.depth();
    while let Some(key) = ray.next() {
        let target = encode(key);
        let mut node = map.root_ref();
        let mut at = map.root_code();
        loop {
            let view = map.make_view(node, at);
            if !filter.subtree_may_match(&view) {
                if at.depth > depth {
                    ray.skip_block(at.depth);
                }
                break;
            }
            let children = if at.depth > depth {
                node.logical_children()
            } else {
                None
            };
            match children {
                None => {
                    if filter.matches(&view, true) {
                        return true;
                    }
                    break;
                }
                Some(ch) => {
                    let idx = target.child_index(at.depth - 1);
                    node = ch.get(idx);
                    at = at.child(idx);
                }
            }
        }
    }
    false
}

/// Whether an occupied cell at `depth` lies strictly between the cell of
/// `from` and the cell of `to`. A coarse cell counts as occupied if any
/// cell inside it is.
pub fn ray_blocked<T: Real>(
    map: &OccupancyMap<T>,
    from: Vec3<T>,
    to: Vec3<T>,
    depth: u8,
) -> Result<bool> {
    let mut ray = GridRay::new(from, to, map.geometry(), depth)?;
    Ok(walk_ray(map, &mut ray, StateFilter::OCCUPIED))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GainVariant {
    /// Unknown nodes found hierarchically, rays traced at the node's depth.
    Exact,
    /// A node counts in full as soon as one of its leaf cells is visible.
    Fast,
    /// Every leaf cell in view traced on its own.
    Flat,
}

impl GainVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GainVariant::Exact => "exact",
            GainVariant::Fast => "fast",
            GainVariant::Flat => "flat",
        }
    }
}

/// Number of unknown leaf cells visible from the sensor.
pub fn info_gain<T: Real>(
    map: &OccupancyMap<T>,
    sensor: &SensorModel<T>,
    variant: GainVariant,
) -> Result<u64> {
    if !sensor.is_valid() {
        return Ok(0);
    }
    // the sensor must sit inside the map to trace from it
    coord_to_key(sensor.position(), map.geometry(), 0)?;
    match variant {
        GainVariant::Flat => info_gain_flat(map, sensor),
        GainVariant::Exact | GainVariant::Fast => {
            let mut total = 0u64;
            for view in iterate_region(map, *sensor, StateFilter::UNKNOWN, 0) {
                total += if variant == GainVariant::Exact {
                    visible_exact(map, sensor, view.code)?
                } else {
                    visible_fast(map, sensor, view.code)?
                };
            }
            Ok(total)
        }
    }
}

fn info_gain_flat<T: Real>(map: &OccupancyMap<T>, sensor: &SensorModel<T>) -> Result<u64> {
    let geo = map.geometry();
    let mut total = 0u64;
    let mut err = None;
    for_each_leaf_in(map, &sensor.aabb(), |key| {
        let c = key_to_coord(key, geo);
        if !sensor.contains_point(c) || map.get_node(encode(key)).state != NodeState::Unknown {
            return true;
        }
        match ray_blocked(map, sensor.position(), c, 0) {
            Ok(false) => total += 1,
            Ok(true) => {}
            Err(e) => {
                err = Some(e);
                return false;
            }
        }
        true
    });
    err.map_or(Ok(total), Err)
}

#[inline]
fn leaf_count(depth: u8) -> u64 {
    1u64 << (3 * depth as u32)
}

fn visible_leaf<T: Real>(
    map: &OccupancyMap<T>,
    sensor: &SensorModel<T>,
    code: MortonCode,
) -> Result<u64> {
    let c = key_to_coord(code.key(), map.geometry());
    Ok((sensor.contains_point(c) && !ray_blocked(map, sensor.position(), c, 0)?) as u64)
}

fn visible_exact<T: Real>(
    map: &OccupancyMap<T>,
    sensor: &SensorModel<T>,
    code: MortonCode,
) -> Result<u64> {
    if code.depth == 0 {
        return visible_leaf(map, sensor, code);
    }
    let geo = map.geometry();
    let (lo, hi) = geo.cell_bounds(code.key());
    if sensor.contains_box(lo, hi) {
        let c = key_to_coord(code.key(), geo);
        if !ray_blocked(map, sensor.position(), c, code.depth)? {
            return Ok(leaf_count(code.depth));
        }
    }
    let mut total = 0;
    for i in 0..8 {
        let child = code.child(i);
        let (lo, hi) = geo.cell_bounds(child.key());
        if sensor.may_intersect_box(lo, hi) {
            total += visible_exact(map, sensor, child)?;
        }
    }
    Ok(total)
}

fn visible_fast<T: Real>(
    map: &OccupancyMap<T>,
    sensor: &SensorModel<T>,
    code: MortonCode,
) -> Result<u64> {
    if code.depth == 0 {
        return visible_leaf(map, sensor, code);
    }
    let geo = map.geometry();
    let (lo, hi) = geo.cell_bounds(code.key());
    if sensor.contains_box(lo, hi) {
        return Ok(if any_leaf_visible(map, sensor, code)? {
            leaf_count(code.depth)
        } else {
            0
        });
    }
    let mut total = 0;
    for i in 0..8 {
        let child = code.child(i);
        let (lo, hi) = geo.cell_bounds(child.key());
        if sensor.may_intersect_box(lo, hi) {
            total += visible_fast(map, sensor, child)?;
        }
    }
    Ok(total)
}

fn any_leaf_visible<T: Real>(
    map: &OccupancyMap<T>,
    sensor: &SensorModel<T>,
    code: MortonCode,
) -> Result<bool> {
    if code.depth == 0 {
        return Ok(visible_leaf(map, sensor, code)? == 1);
    }
    for i in 0..8 {
        if any_leaf_visible(map, sensor, code.child(i))? {
            return Ok(true);
        }
    }
    Ok(false)
}
