//! Node storage.
//!
//! Occupancy and colour are atomics so that readers may traverse the tree
//! while a single writer grows it. A child block is published once through a
//! `OnceLock` and only ever removed through `&mut` access.

use std::sync::atomic::{AtomicU32, AtomicU8, Ordering};
use std::sync::OnceLock;

use super::config::{Color, NodeState};

/// Subtree contains free space.
pub(crate) const CONTAINS_FREE: u8 = 1;
/// Subtree contains unknown space.
pub(crate) const CONTAINS_UNKNOWN: u8 = 1 << 1;
/// All eight children are identical childless nodes; the node acts as a leaf.
pub(crate) const ALL_SAME: u8 = 1 << 2;
/// Touched by the writer since the last collapse pass. Never read by readers.
pub(crate) const DIRTY: u8 = 1 << 3;

const COLOR_COUNT_SHIFT: u32 = 24;

#[inline]
pub(crate) fn state_flags(state: NodeState) -> u8 {
    match state {
        NodeState::Free => CONTAINS_FREE,
        NodeState::Unknown => CONTAINS_UNKNOWN,
        NodeState::Occupied => 0,
    }
}

/// Packs a colour together with a saturating observation count (0 = none).
#[inline]
pub(crate) fn blend_color(packed: u32, c: Color) -> u32 {
    let count = packed >> COLOR_COUNT_SHIFT;
    if count == 0 {
        return c.rgb_bits() | 1 << COLOR_COUNT_SHIFT;
    }
    let old = Color::from_bits(packed);
    let n = count.min(254);
    let mix = |o: u8, v: u8| ((o as u32 * n + v as u32 + n / 2) / (n + 1)) as u8;
    let out = Color::new(mix(old.r, c.r), mix(old.g, c.g), mix(old.b, c.b));
    out.rgb_bits() | (n + 1) << COLOR_COUNT_SHIFT
}

#[inline]
pub(crate) fn color_of(packed: u32) -> Option<Color> {
    (packed >> COLOR_COUNT_SHIFT != 0).then(|| Color::from_bits(packed))
}

/// Restores a packed colour from stored RGB bits; black reads as no colour.
#[inline]
pub(crate) fn packed_from_rgb(rgb: u32) -> u32 {
    if rgb == 0 {
        0
    } else {
        rgb | 1 << COLOR_COUNT_SHIFT
    }
}

#[inline]
pub(crate) fn rgb_part(packed: u32) -> u32 {
    packed & 0x00ff_ffff
}

#[derive(Debug)]
pub(crate) struct LeafNode {
    value: AtomicU32,
    color: AtomicU32,
}

impl LeafNode {
    pub fn new(value: f32, color: u32) -> Self {
        Self {
            value: AtomicU32::new(value.to_bits()),
            color: AtomicU32::new(color),
        }
    }

    #[inline]
    pub fn value(&self) -> f32 {
        f32::from_bits(self.value.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set_value(&self, v: f32) {
        self.value.store(v.to_bits(), Ordering::Relaxed);
    }

    #[inline]
    pub fn color(&self) -> u32 {
        self.color.load(Ordering::Relaxed)
    }

    #[inline]
    pub fn set_color(&self, c: u32) {
        self.color.store(c, Ordering::Relaxed);
    }
}

#[derive(Debug)]
pub(crate) struct InnerNode {
    value: AtomicU32,
    color: AtomicU32,
    flags: AtomicU8,
    children: OnceLock<Box<Children>>,
}

#[derive(Debug)]
pub(crate) enum Children {
    Inner([InnerNode; 8]),
    Leaf([LeafNode; 8]),
}

impl Children {
    pub fn filled(depth_of_children: u8, value: f32, color: u32, flags: u8) -> Self {
        if depth_of_children == 0 {
            Children::Leaf(std::array::from_fn(|_| LeafNode::new(value, color)))
        } else {
            Children::Inner(std::array::from_fn(|_| InnerNode::new(value, color, flags)))
        }
    }

    /// Physical node count of the block and everything below it.
    pub fn subtree_size(&self) -> usize {
        match self {
            Children::Leaf(_) => 8,
            Children::Inner(nodes) => {
                8 + nodes
                    .iter()
                    .filter_map(|n| n.physical_children())
                    .map(Children::subtree_size)
                    .sum::<usize>()
            }
        }
    }
}

impl InnerNode {
    pub fn new(value: f32, color: u32, flags: u8) -> Self {
        Self {
            value: AtomicU32::new(value.to_bits()),
            color: AtomicU32::new(color),
            flags: AtomicU8::new(flags),
            children: OnceLock::new(),
        }
    }

    #[inline]
    pub fn value(&self) -> f32 {
        f32::from_bits(self.value.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set_value(&self, v: f32) {
        self.value.store(v.to_bits(), Ordering::Relaxed);
    }

    #[inline]
    pub fn color(&self) -> u32 {
        self.color.load(Ordering::Relaxed)
    }

    #[inline]
    pub fn set_color(&self, c: u32) {
        self.color.store(c, Ordering::Relaxed);
    }

    #[inline]
    pub fn flags(&self) -> u8 {
        self.flags.load(Ordering::Acquire)
    }

    #[inline]
    pub fn set_flags(&self, f: u8) {
        self.flags.store(f, Ordering::Release);
    }

    #[inline]
    pub fn flags_mut(&mut self) -> &mut u8 {
        self.flags.get_mut()
    }

    #[inline]
    pub fn physical_children(&self) -> Option<&Children> {
        self.children.get().map(|b| &**b)
    }

    /// Children as the logical tree sees them: none if childless or uniform.
    #[inline]
    pub fn logical_children(&self) -> Option<&Children> {
        if self.flags() & ALL_SAME != 0 {
            None
        } else {
            self.physical_children()
        }
    }

    #[inline]
    pub fn is_logical_leaf(&self) -> bool {
        self.logical_children().is_none()
    }

    pub fn publish_children(&self, block: Children) {
        if self.children.set(Box::new(block)).is_err() {
            unreachable!("child block published twice");
        }
    }

    pub fn children_mut(&mut self) -> Option<&mut Children> {
        self.children.get_mut().map(|b| &mut **b)
    }

    pub fn take_children(&mut self) -> Option<Box<Children>> {
        self.children.take()
    }
}

/// Borrowed view of either node kind.
#[derive(Debug, Clone, Copy)]
pub(crate) enum NodeRef<'a> {
    Inner(&'a InnerNode),
    Leaf(&'a LeafNode),
}

impl<'a> NodeRef<'a> {
    #[inline]
    pub fn value(self) -> f32 {
        match self {
            NodeRef::Inner(n) => n.value(),
            NodeRef::Leaf(n) => n.value(),
        }
    }

    #[inline]
    pub fn color(self) -> u32 {
        match self {
            NodeRef::Inner(n) => n.color(),
            NodeRef::Leaf(n) => n.color(),
        }
    }

    /// Children honouring the all-same indicator.
    #[inline]
    pub fn logical_children(self) -> Option<&'a Children> {
        match self {
            NodeRef::Inner(n) => n.logical_children(),
            NodeRef::Leaf(_) => None,
        }
    }
}

impl Children {
    #[inline]
    pub fn get(&self, idx: usize) -> NodeRef<'_> {
        match self {
            Children::Inner(n) => NodeRef::Inner(&n[idx]),
            Children::Leaf(n) => NodeRef::Leaf(&n[idx]),
        }
    }
}
