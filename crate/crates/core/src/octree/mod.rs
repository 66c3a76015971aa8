//! The occupancy octree: storage, fusion, classification and pruning.

mod config;
mod map;
mod node;

pub use config::{logit, probability, Color, NodeState, OccupancyConfig};
pub use map::{
    Indicators, NodeHandle, NodeKind, NodeView, OccupancyMap, SharedWriter, TreeStats,
    INNER_NODE_BYTES, LEAF_NODE_BYTES,
};

pub(crate) use map::CoarseOp;
pub(crate) use node::{
    packed_from_rgb, rgb_part, Children, InnerNode, LeafNode, NodeRef, ALL_SAME as ALL_SAME_FLAG,
};
