//! Occupancy mapping on an octree that keeps occupied, free and unknown space
//! explicit.
//!
//! Coordinates are generic over [`Real`] (`f32` or `f64`); occupancy is
//! stored as clamped 32-bit log-odds. Inner nodes carry the maximum of their
//! children plus "contains free" / "contains unknown" indicators, which lets
//! filtered queries skip whole branches.

pub mod error;
pub mod integrate;
pub mod io;
pub mod morton;
pub mod octree;
pub mod query;
pub mod raytrace;
pub mod scalar;
pub mod volume;

pub use error::{Error, Result};
pub use integrate::{IntegrationReport, IntegratorConfig, IntegratorMethod, Scan};
pub use morton::{MortonCode, TreeGeometry, VoxelKey};
pub use octree::{
    Color, Indicators, NodeHandle, NodeKind, NodeState, NodeView, OccupancyConfig, OccupancyMap,
    SharedWriter, TreeStats,
};
pub use query::{CollisionMode, GainVariant, StateFilter};
pub use scalar::{Real, Vec3};
pub use volume::{Aabb, BoundingVolume, Pose, SensorModel, Sphere};

pub type Vec3f = Vec3<f32>;
pub type Vec3d = Vec3<f64>;
pub type OccupancyMapF32 = OccupancyMap<f32>;
pub type OccupancyMapF64 = OccupancyMap<f64>;
pub type TreeGeometryF32 = TreeGeometry<f32>;
pub type TreeGeometryF64 = TreeGeometry<f64>;
