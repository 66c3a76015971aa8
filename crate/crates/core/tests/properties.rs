mod common;

use common::*;
use occtree::integrate::plan_scan;
use occtree::io::{read_map, write_map};
use occtree::morton::{coord_to_key, encode};
use occtree::query::{info_gain, iterate_region, line_collision};
use occtree::{
    Aabb, CollisionMode, GainVariant, IntegratorConfig, IntegratorMethod, NodeState,
    OccupancyConfig, OccupancyMap, OccupancyMapF32, Pose, Scan, SensorModel, StateFilter, Vec3f,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan(r: &mut impl Rng, m: &OccupancyMap<f64>, n: usize) -> Scan<f64> {
    let geo = m.geometry();
    let origin = random_point(r, geo, 0.5);
    Scan::new(origin, (0..n).map(|_| random_point(r, geo, 0.05)).collect())
}

#[test]
fn all_states_tile_the_extent() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let m = random_map(&mut r, 6, 0.1, true);
        let h = m.geometry().half_extent();
        let whole = Aabb::new(v(-h, -h, -h), v(h, h, h));
        let mut volume = 0u64;
        for view in iterate_region(&m, whole, StateFilter::ALL_STATES, 0) {
            volume += 1 << (3 * view.depth() as u64);
        }
        assert_eq!(volume, 1 << 18);
    }
}

#[test]
fn discrete_matches_simple_on_cell_centers() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut a = OccupancyMap::new(0.1, 6, OccupancyConfig::default(), true).unwrap();
    let mut b = OccupancyMap::new(0.1, 6, OccupancyConfig::default(), true).unwrap();
    let geo = *a.geometry();
    for _ in 0..5 {
        let s = scan(&mut r, &a, 200);
        // one point per cell, already at its center
        let mut seen = std::collections::HashSet::new();
        let pts = s
            .points
            .iter()
            .map(|&p| coord_to_key(p, &geo, 0).unwrap())
            .filter(|k| seen.insert(*k))
            .map(|k| center(k, &geo))
            .collect();
        let s = Scan::new(s.origin, pts);
        a.integrate(&s, &IntegratorConfig::new(IntegratorMethod::Simple))
            .unwrap();
        b.integrate(&s, &IntegratorConfig::new(IntegratorMethod::Discrete))
            .unwrap();
    }
    assert_eq!(leaf_values(&a), leaf_values(&b));
}

#[test]
fn region_limits_what_changes() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let region = Aabb::new(v(-1.0, -0.6, -1.3), v(0.8, 1.2, 0.4));
    for cfg in [
        IntegratorConfig::new(IntegratorMethod::Discrete),
        IntegratorConfig::fast(1, 2),
    ] {
        let mut m = OccupancyMap::new(0.1, 6, OccupancyConfig::default(), true).unwrap();
        let geo = *m.geometry();
        for _ in 0..4 {
            let s = scan(&mut r, &m, 300);
            m.integrate(&s, &cfg.with_region(region)).unwrap();
        }
        let d = Dense::new(geo, 0.0);
        let mut touched = 0;
        for k in d.keys() {
            let (lo, hi) = geo.cell_bounds(k);
            if m.get_node(encode(k)).occupancy != 0.0 {
                touched += 1;
                assert!(
                    region.intersects_box(lo, hi),
                    "{k:?} changed outside the region"
                );
            }
        }
        assert!(touched > 0);
    }
}

#[test]
fn integration_is_deterministic() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let m0 = OccupancyMap::new(0.05, 8, OccupancyConfig::default(), true).unwrap();
    let scans: Vec<_> = (0..3).map(|_| scan(&mut r, &m0, 500)).collect();
    let run = || {
        let mut m = OccupancyMap::new(0.05, 8, OccupancyConfig::default(), true).unwrap();
        for s in &scans {
            m.integrate(s, &IntegratorConfig::fast(2, 3)).unwrap();
        }
        let mut out = Vec::new();
        write_map(&m, &mut out).unwrap();
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn plan_order_and_counts() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let m = OccupancyMap::new(0.1, 7, OccupancyConfig::default(), true).unwrap();
    let s = scan(&mut r, &m, 100);
    let plan = plan_scan(m.geometry(), &s, &IntegratorConfig::fast(0, 3)).unwrap();
    assert_eq!(plan.rays_traced, plan.hits.len());
    assert!(!plan.coarse.is_empty());
    let hits: std::collections::HashSet<_> = plan.hits.iter().map(|h| h.0).collect();
    // no coarse cell covers an endpoint
    for c in &plan.coarse {
        assert!(
            hits.iter().all(|h| !c.is_ancestor_of(*h)),
            "{c} covers an endpoint"
        );
    }
}

#[test]
fn larger_range_sees_no_less() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let m = known_map(&mut r, 5, 0.1, true);
    for _ in 0..10 {
        let pose = Pose::from_yaw_pitch_roll(
            random_point(&mut r, m.geometry(), 0.2),
            r.gen_range(-3.0..3.0),
            0.0,
            0.0,
        );
        let mut last = 0;
        for range in [0.5, 1.0, 2.0, 4.0] {
            let s = SensorModel::new(pose, 1.5, 1.0, 0.0, range);
            let g = info_gain(&m, &s, GainVariant::Flat).unwrap();
            assert!(g >= last);
            last = g;
        }
    }
}

#[test]
fn collision_respects_mode_ordering() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let m = known_map(&mut r, 6, 0.1, true);
    for _ in 0..500 {
        let a = random_point(&mut r, m.geometry(), 0.0);
        let b = random_point(&mut r, m.geometry(), 0.0);
        let occ = line_collision(&m, a, b, CollisionMode::OccupiedOnly).unwrap();
        let cons = line_collision(&m, a, b, CollisionMode::Conservative).unwrap();
        assert!(!occ || cons);
    }
}

#[test]
fn single_precision_maps_round_trip() {
    let mut m = OccupancyMapF32::new(0.1, 8, OccupancyConfig::default(), true).unwrap();
    let s = Scan::new(
        Vec3f::new(0.01, 0.02, 0.03),
        (0..50)
            .map(|i| Vec3f::new(2.0, -1.0 + i as f32 * 0.04, 0.5))
            .collect(),
    );
    m.integrate(&s, &IntegratorConfig::fast(1, 2)).unwrap();
    assert_eq!(
        m.state_at(Vec3f::new(2.0, 0.0, 0.5)).unwrap(),
        NodeState::Occupied
    );
    assert_eq!(
        m.state_at(Vec3f::new(1.0, 0.0, 0.3)).unwrap(),
        NodeState::Free
    );
    let mut bytes = Vec::new();
    write_map(&m, &mut bytes).unwrap();
    let back = read_map::<f32, _>(&bytes[..]).unwrap().map;
    let mut again = Vec::new();
    write_map(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
}
