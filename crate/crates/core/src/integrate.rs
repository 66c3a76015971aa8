//! Fusing point-cloud scans into the map.
//!
//! Integration runs in two phases. The first computes every cell that a scan
//! frees or hits (the plan); the second applies the plan to the tree. Misses
//! are always applied before hits.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::morton::{coord_to_key, encode, key_to_coord, MortonCode, TreeGeometry, VoxelKey};
use crate::octree::{CoarseOp, Color, OccupancyMap, SharedWriter};
use crate::raytrace::{clamp_ray_to_region, GridRay};
use crate::scalar::{Real, Vec3};
use crate::volume::Aabb;

/// One sensor sweep: an origin and the points it observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<T> {
    pub origin: Vec3<T>,
    pub points: Vec<Vec3<T>>,
    pub colors: Option<Vec<Color>>,
}

impl<T: Real> Scan<T> {
    pub fn new(origin: Vec3<T>, points: Vec<Vec3<T>>) -> Self {
        Self {
            origin,
            points,
            colors: None,
        }
    }

    pub fn with_colors(origin: Vec3<T>, points: Vec<Vec3<T>>, colors: Vec<Color>) -> Result<Self> {
        let scan = Self {
            origin,
            points,
            colors: Some(colors),
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(Error::Input(format!(
                    "{} colors for {} points",
                    c.len(),
                    self.points.len()
                )));
            }
        }
        if !self.origin.is_finite() {
            return Err(Error::Input("non-finite scan origin".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Input(format!("non-finite point at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn color(&self, i: usize) -> Option<Color> {
        self.colors.as_ref().map(|c| c[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegratorMethod {
    /// Trace every point.
    Simple,
    /// Deduplicate endpoints per leaf cell, trace to cell centers.
    Discrete,
    /// Discrete endpoints, free space cleared with coarse cells.
    FastDiscrete,
}

impl IntegratorMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IntegratorMethod::Simple => "simple",
            IntegratorMethod::Discrete => "discrete",
            IntegratorMethod::FastDiscrete => "fast",
        }
    }
}

impl std::str::FromStr for IntegratorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "discrete" => Ok(Self::Discrete),
            "fast" | "fast_discrete" => Ok(Self::FastDiscrete),
            _ => Err(Error::InvalidIntegrator(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T> {
    pub method: IntegratorMethod,
    /// Number of coarse cells left before the endpoint (fast method only).
    pub fast_n: u32,
    /// Depth of the coarse cells (fast method only).
    pub fast_depth: u8,
    pub region: Option<Aabb<T>>,
    pub max_range: Option<T>,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self::new(IntegratorMethod::Discrete)
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn new(method: IntegratorMethod) -> Self {
        Self {
            method,
            fast_n: 0,
            fast_depth: 0,
            region: None,
            max_range: None,
        }
    }

    pub fn fast(n: u32, depth: u8) -> Self {
        Self {
            fast_n: n,
            fast_depth: depth,
            ..Self::new(IntegratorMethod::FastDiscrete)
        }
    }

    pub fn with_region(mut self, region: Aabb<T>) -> Self {
        self.region = Some(region);
        self
    }

    pub fn with_max_range(mut self, range: T) -> Self {
        self.max_range = Some(range);
        self
    }

    pub fn validate(&self, geo: &TreeGeometry<T>) -> Result<()> {
        if self.method == IntegratorMethod::FastDiscrete && self.fast_depth >= geo.depth_levels() {
            return Err(Error::InvalidIntegrator(format!(
                "fast depth {} must be below the tree depth {}",
                self.fast_depth,
                geo.depth_levels()
            )));
        }
        if let Some(r) = &self.region {
            if !r.is_valid() {
                return Err(Error::InvalidIntegrator("invalid bounding region".into()));
            }
        }
        if let Some(m) = self.max_range {
            if !(m > T::zero()) || !m.is_finite() {
                return Err(Error::InvalidIntegrator(format!(
                    "max range must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IntegrationReport {
    pub rays_traced: usize,
    /// Miss updates: leaf cells plus coarse cells.
    pub cells_freed: usize,
    /// Hit updates.
    pub cells_occupied: usize,
    pub raytrace_time: Duration,
    pub insert_time: Duration,
}

impl IntegrationReport {
    pub fn total_time(&self) -> Duration {
        self.raytrace_time + self.insert_time
    }
}

/// Cells touched by one scan, in application order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationPlan {
    pub rays_traced: usize,
    /// Coarse cells cleared by the fast method, each once per scan.
    pub coarse: Vec<MortonCode>,
    /// Leaf misses; a cell appears once per ray through it.
    pub misses: Vec<MortonCode>,
    pub hits: Vec<(MortonCode, Option<Color>)>,
}

/// A ray after clipping, ready for tracing.
struct Segment<T> {
    origin: Vec3<T>,
    end: Vec3<T>,
    /// Origin moved by clipping; its cell is free space too.
    origin_clipped: bool,
    /// End moved by clipping or range truncation; no hit, end cell is free.
    end_clipped: bool,
}

struct Planner<'a, T> {
    geo: &'a TreeGeometry<T>,
    cfg: &'a IntegratorConfig<T>,
    bounds: Option<Aabb<T>>,
    plan: IntegrationPlan,
    // fast method state
    blocked: Vec<HashSet<VoxelKey>>,
    coarse_seen: HashSet<MortonCode>,
}

/// Box rays are clipped to: the map extent, intersected with the region.
fn clip_bounds<T: Real>(geo: &TreeGeometry<T>, region: Option<&Aabb<T>>) -> Option<Aabb<T>> {
    let h = geo.half_extent();
    // the upper face belongs to no cell
    let top = h - h * T::epsilon() * T::lit(4.0);
    let extent = Aabb::new(Vec3::splat(-h), Vec3::splat(top));
    match region {
        Some(r) => r.intersection(&extent),
        None => Some(extent),
    }
}

impl<'a, T: Real> Planner<'a, T> {
    fn new(geo: &'a TreeGeometry<T>, cfg: &'a IntegratorConfig<T>) -> Self {
        Self {
            geo,
            cfg,
            bounds: clip_bounds(geo, cfg.region.as_ref()),
            plan: IntegrationPlan::default(),
            blocked: Vec::new(),
            coarse_seen: HashSet::new(),
        }
    }

    fn segment(&self, origin: Vec3<T>, end: Vec3<T>) -> Option<Segment<T>> {
        let mut end_clipped = false;
        let mut end = end;
        if let Some(max) = self.cfg.max_range {
            let d = end - origin;
            let len = d.norm();
            if len > max {
                end = origin + d * (max / len);
                end_clipped = true;
            }
        }
        let bounds = self.bounds?;
        let (o, e) = clamp_ray_to_region(origin, end, &bounds)?;
        Some(Segment {
            origin: o,
            end: e,
            origin_clipped: o != origin,
            end_clipped: end_clipped || e != end,
        })
    }

    fn plan(mut self, scan: &Scan<T>) -> Result<IntegrationPlan> {
        let geo = self.geo;
        if self.cfg.region.is_none() {
            coord_to_key(scan.origin, geo, 0)?;
        }
        match self.cfg.method {
            IntegratorMethod::Simple => {
                for (i, &p) in scan.points.iter().enumerate() {
                    let hit = coord_to_key(p, geo, 0)
                        .ok()
                        .map(|k| (encode(k), scan.color(i)));
                    self.trace(scan.origin, p, hit, false)?;
                }
            }
            IntegratorMethod::Discrete | IntegratorMethod::FastDiscrete => {
                // first point per cell wins; points outside the extent are traced as is
                let mut seen = HashSet::new();
                let mut targets = Vec::new();
                for (i, &p) in scan.points.iter().enumerate() {
                    match coord_to_key(p, geo, 0) {
                        Ok(k) => {
                            if seen.insert(k) {
                                targets
                                    .push((key_to_coord(k, geo), Some((encode(k), scan.color(i)))));
                            }
                        }
                        Err(_) => targets.push((p, None)),
                    }
                }
                let fast =
                    self.cfg.method == IntegratorMethod::FastDiscrete && self.cfg.fast_depth > 0;
                if fast {
                    let d = self.cfg.fast_depth;
                    self.blocked = (0..=d)
                        .map(|k| seen.iter().map(|key| key.at_depth(k)).collect())
                        .collect();
                }
                for (end, hit) in targets {
                    self.trace(scan.origin, end, hit, fast)?;
                }
            }
        }
        Ok(self.plan)
    }

    fn trace(
        &mut self,
        origin: Vec3<T>,
        end: Vec3<T>,
        hit: Option<(MortonCode, Option<Color>)>,
        fast: bool,
    ) -> Result<()> {
        let Some(seg) = self.segment(origin, end) else {
            return Ok(());
        };
        self.plan.rays_traced += 1;
        let mut start = seg.origin;
        let mut include_start = seg.origin_clipped;
        if fast {
            if let Some(p) = self.coarse_walk(&seg)? {
                start = p;
                include_start = true;
            }
        }
        let mut ray = GridRay::new(start, seg.end, self.geo, 0)?;
        if include_start {
            ray = ray.including_start();
        }
        self.plan.misses.extend(ray.map(encode));
        if seg.end_clipped {
            self.plan
                .misses
                .push(encode(coord_to_key(seg.end, self.geo, 0)?));
        } else if let Some(h) = hit {
            self.plan.hits.push(h);
        }
        Ok(())
    }

    /// Clears the ray with coarse cells, dropping one depth whenever the
    /// next sample is too close to the end, falls into a cell holding an
    /// endpoint, or leaves the region. Returns where leaf tracing resumes,
    /// or `None` if no coarse cell was placed.
    fn coarse_walk(&mut self, seg: &Segment<T>) -> Result<Option<Vec3<T>>> {
        let dir = seg.end - seg.origin;
        let len = dir.norm();
        if !(len > T::zero()) {
            return Ok(None);
        }
        let unit = dir / len;
        let n = self.cfg.fast_n as i64;
        let mut t = T::zero();
        let mut k = self.cfg.fast_depth;
        while k > 0 {
            let res = self.geo.res_at(k);
            let upper = (len / res).floor().to_i64().unwrap_or(-1) - n;
            let limit = T::lit(upper as f64) * res;
            if upper < 0 || t > limit {
                k -= 1;
                continue;
            }
            let p = seg.origin + unit * t;
            let key = coord_to_key(p, self.geo, k)?;
            let inside = match &self.cfg.region {
                Some(r) => {
                    let (lo, hi) = self.geo.cell_bounds(key);
                    r.contains_box(lo, hi)
                }
                None => true,
            };
            if !inside || self.blocked[k as usize].contains(&key) {
                k -= 1;
                continue;
            }
            let code = encode(key);
            if self.coarse_seen.insert(code) {
                self.plan.coarse.push(code);
            }
            t = t + res;
        }
        Ok((t > T::zero()).then(|| seg.origin + unit * t.min(len)))
    }
}

/// Computes the plan for `scan` without touching a map.
pub fn plan_scan<T: Real>(
    geo: &TreeGeometry<T>,
    scan: &Scan<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<IntegrationPlan> {
    scan.validate()?;
    cfg.validate(geo)?;
    Planner::new(geo, cfg).plan(scan)
}

fn run<T: Real>(
    map: &OccupancyMap<T>,
    scan: &Scan<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<IntegrationReport> {
    let t0 = Instant::now();
    let plan = plan_scan(map.geometry(), scan, cfg)?;
    let raytrace_time = t0.elapsed();

    let t1 = Instant::now();
    let log_miss = map.config().log_miss;
    let log_hit = map.config().log_hit;
    for &code in &plan.coarse {
        map.write_coarse(code, CoarseOp::Add(log_miss));
    }
    for &code in &plan.misses {
        map.write_leaf(code, log_miss, None);
    }
    for &(code, color) in &plan.hits {
        map.write_leaf(code, log_hit, color);
    }
    Ok(IntegrationReport {
        rays_traced: plan.rays_traced,
        cells_freed: plan.coarse.len() + plan.misses.len(),
        cells_occupied: plan.hits.len(),
        raytrace_time,
        insert_time: t1.elapsed(),
    })
}

impl<T: Real> OccupancyMap<T> {
    /// Integrates one scan.
    pub fn integrate(
        &mut self,
        scan: &Scan<T>,
        cfg: &IntegratorConfig<T>,
    ) -> Result<IntegrationReport> {
        let report = run(self, scan, cfg)?;
        let t = Instant::now();
        self.finish_write();
        let mut report = report;
        report.insert_time += t.elapsed();
        Ok(report)
    }
}

impl<T: Real> SharedWriter<'_, T> {
    /// Integrates one scan while readers may be traversing the map.
    pub fn integrate(
        &self,
        scan: &Scan<T>,
        cfg: &IntegratorConfig<T>,
    ) -> Result<IntegrationReport> {
        run(self.map(), scan, cfg)
    }
}
