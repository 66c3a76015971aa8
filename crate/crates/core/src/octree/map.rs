use std::sync::atomic::{AtomicBool, Ordering};

use super::config::{Color, NodeState, OccupancyConfig, Thresholds};
use super::node::{
    blend_color, color_of, rgb_part, state_flags, Children, InnerNode, NodeRef, ALL_SAME,
    CONTAINS_FREE, CONTAINS_UNKNOWN, DIRTY,
};
use crate::error::{Error, Result};
use crate::morton::{coord_to_key, encode, MortonCode, TreeGeometry, VoxelKey};
use crate::scalar::{Real, Vec3};

/// Bytes per inner or inner-leaf node in the reporting model.
pub const INNER_NODE_BYTES: usize = 16;
/// Bytes per leaf node in the reporting model.
pub const LEAF_NODE_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Finest level; carries only occupancy (and colour).
    Leaf,
    /// Above the finest level but without (logical) children.
    InnerLeaf,
    /// Has eight children.
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Indicators {
    pub contains_free: bool,
    pub contains_unknown: bool,
    pub all_children_same: bool,
}

/// Snapshot of one node as seen by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView {
    pub code: MortonCode,
    pub occupancy: f32,
    pub state: NodeState,
    pub kind: NodeKind,
    pub indicators: Indicators,
    /// Derived from the max-of-children occupancy.
    pub contains_occupied: bool,
    pub color: Option<Color>,
}

impl NodeView {
    #[inline]
    pub fn depth(&self) -> u8 {
        self.code.depth
    }

    #[inline]
    pub fn key(&self) -> VoxelKey {
        self.code.key()
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.kind != NodeKind::Inner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TreeStats {
    pub inner: usize,
    pub inner_leaf: usize,
    pub leaf: usize,
}

impl TreeStats {
    pub fn total(&self) -> usize {
        self.inner + self.inner_leaf + self.leaf
    }

    pub fn leaf_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.leaf as f64 / self.total() as f64
        }
    }

    pub fn bytes_model(&self) -> usize {
        (self.inner + self.inner_leaf) * INNER_NODE_BYTES + self.leaf * LEAF_NODE_BYTES
    }
}

/// How a coarse write changes a node that is not occupied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum CoarseOp {
    Set(f32),
    Add(f32),
}

/// Occupancy octree.
///
/// The root sits at depth `depth_levels`; leaves are at depth 0. Every inner
/// node stores the maximum occupancy of its children plus the free/unknown
/// indicators of its subtree, so queries can skip branches that cannot match.
///
/// With `auto_prune` on, eight identical childless children are merged into
/// their parent after every mutating call. With it off the structure only
/// grows until [`OccupancyMap::prune`] is called, which is what allows a
/// [`SharedWriter`] to insert while readers iterate.
#[derive(Debug)]
pub struct OccupancyMap<T> {
    geometry: TreeGeometry<T>,
    config: OccupancyConfig,
    thresholds: Thresholds,
    root: InnerNode,
    auto_prune: bool,
    color_enabled: bool,
    writer_active: AtomicBool,
}

impl<T: Real> OccupancyMap<T> {
    pub fn new(
        resolution: T,
        depth_levels: u8,
        config: OccupancyConfig,
        auto_prune: bool,
    ) -> Result<Self> {
        let geometry = TreeGeometry::new(resolution, depth_levels)?;
        Self::with_geometry(geometry, config, auto_prune)
    }

    pub fn with_geometry(
        geometry: TreeGeometry<T>,
        config: OccupancyConfig,
        auto_prune: bool,
    ) -> Result<Self> {
        config.validate()?;
        let thresholds = config.thresholds();
        let prior = config.prior;
        Ok(Self {
            geometry,
            config,
            thresholds,
            root: InnerNode::new(prior, 0, state_flags(thresholds.classify(prior))),
            auto_prune,
            color_enabled: false,
            writer_active: AtomicBool::new(false),
        })
    }

    pub fn with_color(mut self, enabled: bool) -> Self {
        self.color_enabled = enabled;
        self
    }

    #[inline]
    pub fn geometry(&self) -> &TreeGeometry<T> {
        &self.geometry
    }

    #[inline]
    pub fn config(&self) -> &OccupancyConfig {
        &self.config
    }

    #[inline]
    pub fn depth_levels(&self) -> u8 {
        self.geometry.depth_levels()
    }

    #[inline]
    pub fn resolution(&self) -> T {
        self.geometry.resolution()
    }

    #[inline]
    pub fn auto_prune(&self) -> bool {
        self.auto_prune
    }

    /// Turning automatic pruning on prunes immediately.
    pub fn set_auto_prune(&mut self, on: bool) {
        self.auto_prune = on;
        if on {
            self.prune();
        }
    }

    #[inline]
    pub fn color_enabled(&self) -> bool {
        self.color_enabled
    }

    #[inline]
    pub fn classify(&self, log_odds: f32) -> NodeState {
        self.thresholds.classify(log_odds)
    }

    #[inline]
    pub fn is_occupied_value(&self, log_odds: f32) -> bool {
        log_odds > self.thresholds.occupied_above
    }

    #[inline]
    pub fn root_code(&self) -> MortonCode {
        MortonCode::root(self.depth_levels())
    }

    pub fn code_at(&self, c: Vec3<T>, depth: u8) -> Result<MortonCode> {
        Ok(encode(coord_to_key(c, &self.geometry, depth)?))
    }

    /// Descends towards `code` and stops at its depth or at the first node
    /// without logical children, whichever comes first.
    pub fn get_node(&self, code: MortonCode) -> NodeView {
        let (node, at) = self.descend(code);
        self.make_view(node, at)
    }

    pub fn state_at(&self, c: Vec3<T>) -> Result<NodeState> {
        Ok(self.get_node(self.code_at(c, 0)?).state)
    }

    pub fn occupancy_at(&self, c: Vec3<T>) -> Result<f32> {
        Ok(self.get_node(self.code_at(c, 0)?).occupancy)
    }

    pub fn root(&self) -> NodeHandle<'_, T> {
        NodeHandle {
            map: self,
            node: NodeRef::Inner(&self.root),
            code: self.root_code(),
        }
    }

    #[inline]
    pub(crate) fn root_ref(&self) -> NodeRef<'_> {
        NodeRef::Inner(&self.root)
    }

    #[inline]
    pub(crate) fn descend(&self, code: MortonCode) -> (NodeRef<'_>, MortonCode) {
        let mut node = NodeRef::Inner(&self.root);
        let mut at = self.root_code();
        while at.depth > code.depth {
            let Some(children) = node.logical_children() else {
                break;
            };
            let idx = code.child_index(at.depth - 1);
            node = children.get(idx);
            at = at.child(idx);
        }
        (node, at)
    }

    pub(crate) fn make_view(&self, node: NodeRef<'_>, code: MortonCode) -> NodeView {
        let occupancy = node.value();
        let state = self.classify(occupancy);
        let (kind, indicators) = match node {
            NodeRef::Leaf(_) => (
                NodeKind::Leaf,
                Indicators {
                    contains_free: state == NodeState::Free,
                    contains_unknown: state == NodeState::Unknown,
                    all_children_same: false,
                },
            ),
            NodeRef::Inner(n) => {
                let flags = n.flags();
                let kind = if n.is_logical_leaf() {
                    NodeKind::InnerLeaf
                } else {
                    NodeKind::Inner
                };
                (
                    kind,
                    Indicators {
                        contains_free: flags & CONTAINS_FREE != 0,
                        contains_unknown: flags & CONTAINS_UNKNOWN != 0,
                        all_children_same: flags & ALL_SAME != 0,
                    },
                )
            }
        };
        NodeView {
            code,
            occupancy,
            state,
            kind,
            indicators,
            contains_occupied: self.is_occupied_value(occupancy),
            color: if self.color_enabled {
                color_of(node.color())
            } else {
                None
            },
        }
    }

    /// Adds `delta` to the leaf at `code` and returns its new state.
    pub fn update_occupancy(&mut self, code: MortonCode, delta: f32) -> Result<NodeState> {
        self.update_occupancy_colored(code, delta, None)
    }

    pub fn update_occupancy_colored(
        &mut self,
        code: MortonCode,
        delta: f32,
        color: Option<Color>,
    ) -> Result<NodeState> {
        self.check_leaf_code(code, delta)?;
        self.write_leaf(code, delta, color);
        self.finish_write();
        Ok(self.get_node(code).state)
    }

    pub fn update_at(&mut self, c: Vec3<T>, delta: f32) -> Result<NodeState> {
        let code = self.code_at(c, 0)?;
        self.update_occupancy(code, delta)
    }

    /// Overwrites the node at `code` with `value` unless it is occupied, in
    /// which case the rule is applied to each child, down to the leaves.
    /// Occupied leaves are left untouched.
    ///
    /// Returns the shallowest depth that was written, if any.
    pub fn set_coarse(&mut self, code: MortonCode, value: f32) -> Result<Option<u8>> {
        if !value.is_finite() {
            return Err(Error::Contract(format!("non-finite coarse value {value}")));
        }
        self.coarse(code, CoarseOp::Set(value))
    }

    /// Like [`Self::set_coarse`] but adds `delta` to each written node.
    pub fn update_coarse(&mut self, code: MortonCode, delta: f32) -> Result<Option<u8>> {
        if !delta.is_finite() {
            return Err(Error::Contract(format!("non-finite coarse delta {delta}")));
        }
        self.coarse(code, CoarseOp::Add(delta))
    }

    fn coarse(&mut self, code: MortonCode, op: CoarseOp) -> Result<Option<u8>> {
        self.check_coarse_code(code)?;
        let written = self.write_coarse(code, op);
        self.finish_write();
        Ok(written)
    }

    /// Removes every subtree whose children are identical and childless.
    /// Returns the number of nodes removed.
    pub fn prune(&mut self) -> usize {
        fn rec(node: &mut InnerNode) -> usize {
            *node.flags_mut() &= !DIRTY;
            if *node.flags_mut() & ALL_SAME != 0 {
                *node.flags_mut() &= !ALL_SAME;
                return node.take_children().map_or(0, |c| c.subtree_size());
            }
            match node.children_mut() {
                Some(Children::Inner(nodes)) => nodes.iter_mut().map(rec).sum(),
                _ => 0,
            }
        }
        rec(&mut self.root)
    }

    pub fn tree_stats(&self) -> TreeStats {
        fn rec(node: &InnerNode, stats: &mut TreeStats) {
            match node.physical_children() {
                None => stats.inner_leaf += 1,
                Some(Children::Leaf(_)) => {
                    stats.inner += 1;
                    stats.leaf += 8;
                }
                Some(Children::Inner(nodes)) => {
                    stats.inner += 1;
                    nodes.iter().for_each(|n| rec(n, stats));
                }
            }
        }
        let mut stats = TreeStats::default();
        rec(&self.root, &mut stats);
        stats
    }

    /// Write handle usable through a shared reference, so that readers can
    /// traverse concurrently. Requires automatic pruning to be off; only one
    /// handle may exist at a time.
    pub fn shared_writer(&self) -> Result<SharedWriter<'_, T>> {
        if self.auto_prune {
            return Err(Error::Contract(
                "concurrent writing requires automatic pruning to be disabled".into(),
            ));
        }
        if self
            .writer_active
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(Error::Contract("another shared writer is active".into()));
        }
        Ok(SharedWriter { map: self })
    }

    pub(crate) fn check_leaf_code(&self, code: MortonCode, delta: f32) -> Result<()> {
        if code.depth != 0 {
            return Err(Error::Contract(format!(
                "occupancy updates address leaves, got depth {}",
                code.depth
            )));
        }
        self.check_in_tree(code)?;
        if !delta.is_finite() {
            return Err(Error::Contract(format!("non-finite delta {delta}")));
        }
        Ok(())
    }

    pub(crate) fn check_coarse_code(&self, code: MortonCode) -> Result<()> {
        if code.depth == 0 || code.depth > self.depth_levels() {
            return Err(Error::Contract(format!(
                "coarse writes need depth in (0, {}], got {}",
                self.depth_levels(),
                code.depth
            )));
        }
        self.check_in_tree(code)
    }

    fn check_in_tree(&self, code: MortonCode) -> Result<()> {
        let bits = 3 * self.depth_levels() as u32;
        if bits < 64 && code.code >> bits != 0 {
            return Err(Error::Contract(format!(
                "code {code} lies outside the tree"
            )));
        }
        Ok(())
    }

    /// Collapses uniform subtrees left behind by the last write when
    /// automatic pruning is on.
    pub(crate) fn finish_write(&mut self) {
        if self.auto_prune {
            collapse_dirty(&mut self.root);
        }
    }

    // Writer primitives. They take `&self` and never remove nodes; callers
    // guarantee a single writer.

    pub(crate) fn write_leaf(&self, code: MortonCode, delta: f32, color: Option<Color>) {
        let color = color.filter(|_| self.color_enabled);
        self.write_leaf_rec(&self.root, self.depth_levels(), code, delta, color);
    }

    fn write_leaf_rec(
        &self,
        node: &InnerNode,
        depth: u8,
        code: MortonCode,
        delta: f32,
        color: Option<Color>,
    ) {
        let children = self.ensure_children(node, depth);
        let idx = code.child_index(depth - 1);
        match children {
            Children::Leaf(leaves) => {
                let leaf = &leaves[idx];
                leaf.set_value(self.config.clamp(leaf.value() + delta));
                if let Some(c) = color {
                    leaf.set_color(blend_color(leaf.color(), c));
                }
            }
            Children::Inner(nodes) => {
                self.write_leaf_rec(&nodes[idx], depth - 1, code, delta, color)
            }
        }
        self.refresh(node, children);
    }

    pub(crate) fn write_coarse(&self, code: MortonCode, op: CoarseOp) -> Option<u8> {
        self.write_coarse_rec(&self.root, self.depth_levels(), code, op)
    }

    fn write_coarse_rec(
        &self,
        node: &InnerNode,
        depth: u8,
        code: MortonCode,
        op: CoarseOp,
    ) -> Option<u8> {
        if depth == code.depth {
            return self.apply_coarse(node, depth, op);
        }
        let children = self.ensure_children(node, depth);
        let idx = code.child_index(depth - 1);
        let written = match children {
            Children::Inner(nodes) => self.write_coarse_rec(&nodes[idx], depth - 1, code, op),
            Children::Leaf(_) => unreachable!("coarse target below the leaf level"),
        };
        self.refresh(node, children);
        written
    }

    #[inline]
    fn coarse_value(&self, current: f32, op: CoarseOp) -> f32 {
        self.config.clamp(match op {
            CoarseOp::Set(v) => v,
            CoarseOp::Add(d) => current + d,
        })
    }

    fn apply_coarse(&self, node: &InnerNode, depth: u8, op: CoarseOp) -> Option<u8> {
        let current = node.value();
        if !self.is_occupied_value(current) {
            let v = self.coarse_value(current, op);
            let logical_leaf = node.is_logical_leaf();
            node.set_value(v);
            if !logical_leaf {
                node.set_color(0);
            }
            let mut flags = state_flags(self.classify(v)) | DIRTY;
            if node.physical_children().is_some() {
                // children are stale from here on; the node now acts as a leaf
                flags |= ALL_SAME;
            }
            node.set_flags(flags);
            return Some(depth);
        }
        let children = node.logical_children()?;
        let written = match children {
            Children::Leaf(leaves) => {
                let mut any = false;
                for leaf in leaves {
                    let cur = leaf.value();
                    if !self.is_occupied_value(cur) {
                        leaf.set_value(self.coarse_value(cur, op));
                        any = true;
                    }
                }
                any.then_some(0)
            }
            Children::Inner(nodes) => nodes
                .iter()
                .filter_map(|n| self.apply_coarse(n, depth - 1, op))
                .max(),
        };
        self.refresh(node, children);
        written
    }

    /// Makes sure `node` has logical children, expanding it or pushing its
    /// value down into stale children.
    fn ensure_children<'a>(&self, node: &'a InnerNode, depth: u8) -> &'a Children {
        let value = node.value();
        let color = node.color();
        let flags = node.flags();
        match node.physical_children() {
            None => {
                let child_flags = state_flags(self.classify(value));
                node.publish_children(Children::filled(depth - 1, value, color, child_flags));
                node.physical_children().expect("just published")
            }
            Some(children) => {
                if flags & ALL_SAME != 0 {
                    let child_flags = state_flags(self.classify(value)) | DIRTY;
                    match children {
                        Children::Leaf(leaves) => {
                            for leaf in leaves {
                                leaf.set_value(value);
                                leaf.set_color(color);
                            }
                        }
                        Children::Inner(nodes) => {
                            for n in nodes {
                                n.set_value(value);
                                n.set_color(color);
                                let stale = if n.physical_children().is_some() {
                                    ALL_SAME
                                } else {
                                    0
                                };
                                n.set_flags(child_flags | stale);
                            }
                        }
                    }
                    node.set_flags((flags & !ALL_SAME) | DIRTY);
                }
                children
            }
        }
    }

    /// Recomputes max occupancy, indicators and the all-same flag from the
    /// (logical) children.
    fn refresh(&self, node: &InnerNode, children: &Children) {
        let mut max = f32::NEG_INFINITY;
        let mut flags = DIRTY;
        let first = children.get(0);
        let (first_bits, first_rgb) = (first.value().to_bits(), rgb_part(first.color()));
        let mut same = true;
        match children {
            Children::Leaf(leaves) => {
                for leaf in leaves {
                    let v = leaf.value();
                    max = max.max(v);
                    flags |= state_flags(self.classify(v));
                    same &= v.to_bits() == first_bits && rgb_part(leaf.color()) == first_rgb;
                }
            }
            Children::Inner(nodes) => {
                for n in nodes {
                    let v = n.value();
                    max = max.max(v);
                    flags |= n.flags() & (CONTAINS_FREE | CONTAINS_UNKNOWN);
                    same &= n.is_logical_leaf()
                        && v.to_bits() == first_bits
                        && rgb_part(n.color()) == first_rgb;
                }
            }
        }
        node.set_value(max);
        if same {
            node.set_color(first.color());
            flags |= ALL_SAME;
        } else {
            node.set_color(0);
        }
        node.set_flags(flags);
    }

    /// Replaces the whole tree, then derives every inner value, indicator and
    /// all-same flag from the leaves. Returns how many inner values changed.
    pub(crate) fn install_root(&mut self, root: InnerNode) -> usize {
        fn rec<T: Real>(map: &OccupancyMap<T>, node: &InnerNode) -> usize {
            let Some(children) = node.physical_children() else {
                node.set_flags(state_flags(map.classify(node.value())));
                return 0;
            };
            let mut repaired = match children {
                Children::Inner(nodes) => nodes.iter().map(|n| rec(map, n)).sum(),
                Children::Leaf(_) => 0,
            };
            let before = node.value().to_bits();
            map.refresh(node, children);
            node.set_flags(node.flags() & !DIRTY);
            repaired += (before != node.value().to_bits()) as usize;
            repaired
        }
        self.root = root;
        let repaired = rec(self, &self.root);
        if self.auto_prune {
            self.prune();
        }
        repaired
    }

    #[cfg(test)]
    pub(crate) fn has_dirty_nodes(&self) -> bool {
        fn rec(node: &InnerNode) -> bool {
            node.flags() & DIRTY != 0
                || matches!(node.physical_children(), Some(Children::Inner(n)) if n.iter().any(rec))
        }
        rec(&self.root)
    }
}

fn collapse_dirty(node: &mut InnerNode) -> usize {
    let flags = *node.flags_mut();
    if flags & DIRTY == 0 {
        return 0;
    }
    *node.flags_mut() = flags & !DIRTY;
    if flags & ALL_SAME != 0 {
        *node.flags_mut() &= !ALL_SAME;
        return node.take_children().map_or(0, |c| c.subtree_size());
    }
    match node.children_mut() {
        Some(Children::Inner(nodes)) => nodes.iter_mut().map(collapse_dirty).sum(),
        _ => 0,
    }
}

/// Read-only cursor into the logical tree.
#[derive(Clone, Copy)]
pub struct NodeHandle<'a, T> {
    map: &'a OccupancyMap<T>,
    node: NodeRef<'a>,
    code: MortonCode,
}

impl<'a, T: Real> NodeHandle<'a, T> {
    #[inline]
    pub fn code(&self) -> MortonCode {
        self.code
    }

    #[inline]
    pub fn depth(&self) -> u8 {
        self.code.depth
    }

    #[inline]
    pub fn occupancy(&self) -> f32 {
        self.node.value()
    }

    #[inline]
    pub fn state(&self) -> NodeState {
        self.map.classify(self.occupancy())
    }

    pub fn view(&self) -> NodeView {
        self.map.make_view(self.node, self.code)
    }

    /// True if the node has no logical children.
    pub fn is_leaf(&self) -> bool {
        self.node.logical_children().is_none()
    }

    /// The eight logical children, or `None` for leaves and inner leaves.
    pub fn children(&self) -> Option<[NodeHandle<'a, T>; 8]> {
        let children = self.node.logical_children()?;
        Some(std::array::from_fn(|i| NodeHandle {
            map: self.map,
            node: children.get(i),
            code: self.code.child(i),
        }))
    }
}

/// Writer usable through `&OccupancyMap`; see [`OccupancyMap::shared_writer`].
pub struct SharedWriter<'m, T> {
    map: &'m OccupancyMap<T>,
}

impl<'m, T: Real> SharedWriter<'m, T> {
    pub fn map(&self) -> &'m OccupancyMap<T> {
        self.map
    }

    pub fn update_occupancy(&self, code: MortonCode, delta: f32) -> Result<NodeState> {
        self.map.check_leaf_code(code, delta)?;
        self.map.write_leaf(code, delta, None);
        Ok(self.map.get_node(code).state)
    }

    pub fn set_coarse(&self, code: MortonCode, value: f32) -> Result<Option<u8>> {
        self.map.check_coarse_code(code)?;
        Ok(self.map.write_coarse(code, CoarseOp::Set(value)))
    }
}

impl<T> Drop for SharedWriter<'_, T> {
    fn drop(&mut self) {
        self.map.writer_active.store(false, Ordering::Release);
    }
}
