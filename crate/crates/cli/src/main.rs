//! `occtree`: build maps from scan directories, benchmark queries, probe maps.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 I/O or parse failure,
//! 3 a runtime precondition that cannot be met.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use occtree::io::{load_map, read_scan_file, save_map, write_csv_stats, StatsRow};
use occtree::octree::probability;
use occtree::query::{info_gain, iterate_region, line_collision, region_collision};
use occtree::{
    Aabb, CollisionMode, Error, GainVariant, IntegratorConfig, IntegratorMethod, OccupancyConfig,
    OccupancyMap, Pose, SensorModel, Sphere, StateFilter, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Map = OccupancyMap<f64>;
type V = Vec3<f64>;

const MAX_ATTEMPTS: u64 = 1_000_000;

#[derive(Parser, Debug)]
#[command(
    name = "occtree",
    version,
    about = "Occupancy octree maps: build, bench, query"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate every scan file of a directory, in lexicographic order.
    Build(BuildArgs),
    /// Time randomized queries against a map.
    Bench(BenchArgs),
    /// Print the state of the node containing a point.
    Query(QueryArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Simple,
    Discrete,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Collision,
    Line,
    Gain,
}

#[derive(clap::Args, Debug)]
struct BuildArgs {
    scan_dir: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    resolution: f64,
    #[arg(long, default_value_t = 16)]
    levels: u8,
    #[arg(long, value_enum, default_value = "discrete")]
    integrator: Method,
    #[arg(long = "fast-n", default_value_t = 0)]
    fast_n: u32,
    #[arg(long = "fast-depth", default_value_t = 0)]
    fast_depth: u8,
    #[arg(long, default_value_t = 0.7)]
    hit: f64,
    #[arg(long, default_value_t = 0.4)]
    miss: f64,
    #[arg(long = "clamp-min", default_value_t = 0.12)]
    clamp_min: f64,
    #[arg(long = "clamp-max", default_value_t = 0.97)]
    clamp_max: f64,
    /// Free threshold (probability).
    #[arg(long, default_value_t = 0.5)]
    tf: f64,
    /// Occupied threshold (probability).
    #[arg(long = "to", default_value_t = 0.5)]
    t_occ: f64,
    /// Bounding region "x0,y0,z0,x1,y1,z1".
    #[arg(long)]
    bbox: Option<String>,
    #[arg(long = "max-range")]
    max_range: Option<f64>,
    #[arg(long = "auto-prune", value_enum, default_value = "on")]
    auto_prune: OnOff,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 1000)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sphere radius for the collision suite.
    #[arg(long, default_value_t = 0.25)]
    radius: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    map: PathBuf,
    /// "x,y,z"
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    #[arg(long, default_value_t = 0)]
    depth: u8,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn precondition(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    fn at(path: &Path, e: Error) -> Self {
        let mut f = Self::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_)
            | Error::InvalidGeometry(_)
            | Error::InvalidIntegrator(_)
            | Error::Contract(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Build(a) => cmd_build(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Query(a) => cmd_query(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn parse_floats(s: &str, n: usize, what: &str) -> CliResult<Vec<f64>> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(Failure::usage(format!(
            "{what} expects {n} comma-separated numbers, got {s:?}"
        ))),
    }
}

fn cmd_build(a: &BuildArgs) -> CliResult {
    let config =
        OccupancyConfig::from_probabilities(a.hit, a.miss, a.clamp_min, a.clamp_max, a.tf, a.t_occ);
    let method = match a.integrator {
        Method::Simple => IntegratorMethod::Simple,
        Method::Discrete => IntegratorMethod::Discrete,
        Method::Fast => IntegratorMethod::FastDiscrete,
    };
    let mut icfg = IntegratorConfig {
        fast_n: a.fast_n,
        fast_depth: a.fast_depth,
        ..IntegratorConfig::new(method)
    };
    if let Some(b) = &a.bbox {
        let v = parse_floats(b, 6, "--bbox")?;
        let region = Aabb::new(V::new(v[0], v[1], v[2]), V::new(v[3], v[4], v[5]));
        if !region.is_valid() {
            return Err(Failure::usage("--bbox needs min <= max on every axis"));
        }
        icfg.region = Some(region);
    }
    if let Some(r) = a.max_range {
        icfg.max_range = Some(r);
    }
    let mut map = Map::new(a.resolution, a.levels, config, a.auto_prune == OnOff::On)?;
    icfg.validate(map.geometry())?;

    let mut files: Vec<PathBuf> = fs::read_dir(&a.scan_dir)
        .map_err(|e| Failure::from(e).with_path(&a.scan_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut scans = Vec::with_capacity(files.len());
    for f in &files {
        scans.push(read_scan_file::<f64>(f).map_err(|e| Failure::at(f, e))?);
    }
    if scans.iter().any(|s| s.colors.is_some()) {
        map = map.with_color(true);
    }

    let mut rows = Vec::with_capacity(scans.len());
    for (f, scan) in files.iter().zip(&scans) {
        let r = map.integrate(scan, &icfg).map_err(|e| Failure::at(f, e))?;
        let stats = map.tree_stats();
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        log::info!("{name}: {} rays, {:?}", r.rays_traced, r.total_time());
        rows.push(StatsRow {
            scan: name,
            method: method.as_str().to_string(),
            total_ms: ms(r.total_time()),
            raytrace_ms: ms(r.raytrace_time),
            insert_ms: ms(r.insert_time),
            cells_freed: r.cells_freed,
            cells_occupied: r.cells_occupied,
            nodes_total: stats.total(),
            nodes_leaf: stats.leaf,
            bytes_model: stats.bytes_model(),
        });
    }
    save_map(&map, &a.map).map_err(|e| Failure::at(&a.map, e))?;
    if let Some(csv) = &a.csv {
        let file = fs::File::create(csv).map_err(|e| Failure::from(e).with_path(csv))?;
        write_csv_stats(&rows, file).map_err(|e| Failure::at(csv, e))?;
    }
    Ok(())
}

impl Failure {
    fn with_path(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn us(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Bounding box of all known (free or occupied) space.
fn known_bounds(map: &Map) -> Option<Aabb<f64>> {
    let h = map.geometry().half_extent();
    let whole = Aabb::new(V::splat(-h), V::splat(h));
    let mut out: Option<Aabb<f64>> = None;
    for view in iterate_region(map, whole, StateFilter::states(true, true, false), 0) {
        let (lo, hi) = map.geometry().cell_bounds(view.key());
        out = Some(match out {
            None => Aabb::new(lo, hi),
            Some(b) => Aabb::new(b.min.min(lo), b.max.max(hi)),
        });
    }
    out
}

fn sample_in(rng: &mut ChaCha8Rng, b: &Aabb<f64>) -> V {
    let mut axis = |a: usize| {
        if b.max[a] > b.min[a] {
            rng.gen_range(b.min[a]..b.max[a])
        } else {
            b.min[a]
        }
    };
    V::new(axis(0), axis(1), axis(2))
}

fn cmd_bench(a: &BenchArgs) -> CliResult {
    if a.count == 0 {
        return Err(Failure::usage("--count must be positive"));
    }
    if !(a.radius > 0.0) {
        return Err(Failure::usage("--radius must be positive"));
    }
    let map = load_map::<f64>(&a.map)
        .map_err(|e| Failure::at(&a.map, e))?
        .map;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let known = known_bounds(&map);
    let h = map.geometry().half_extent();
    let top = h - map.resolution() * 0.5;
    let bounds = known.unwrap_or_else(|| Aabb::new(V::splat(-h), V::splat(top)));

    let mut out: Box<dyn Write> = match &a.csv {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Failure::from(e).with_path(p))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(&mut out);
    let to_io = |e: csv::Error| Failure::from(io::Error::from(e));

    match a.suite {
        Suite::Collision => {
            if known.is_none() {
                return Err(Failure::precondition(
                    "map has no free space to sample poses from",
                ));
            }
            w.write_record([
                "query",
                "x",
                "y",
                "z",
                "conservative",
                "occupied_only",
                "us_conservative",
                "us_occupied_only",
            ])
            .map_err(to_io)?;
            let (mut total_us, mut hits) = (0.0, 0u64);
            for q in 0..a.count {
                let mut attempts = 0u64;
                let center = loop {
                    if attempts == MAX_ATTEMPTS {
                        return Err(Failure::precondition(format!(
                            "no pose with a free center found in {MAX_ATTEMPTS} attempts"
                        )));
                    }
                    attempts += 1;
                    let p = sample_in(&mut rng, &bounds);
                    if map
                        .state_at(p)
                        .map(|s| s == occtree::NodeState::Free)
                        .unwrap_or(false)
                    {
                        break p;
                    }
                };
                let s = Sphere::new(center, a.radius);
                let t = Instant::now();
                let c = region_collision(&map, &s, CollisionMode::Conservative);
                let tc = us(t.elapsed());
                let t = Instant::now();
                let o = region_collision(&map, &s, CollisionMode::OccupiedOnly);
                let to = us(t.elapsed());
                total_us += tc;
                hits += c as u64;
                w.write_record([
                    q.to_string(),
                    format!("{:.6}", center.x),
                    format!("{:.6}", center.y),
                    format!("{:.6}", center.z),
                    (c as u8).to_string(),
                    (o as u8).to_string(),
                    format!("{tc:.3}"),
                    format!("{to:.3}"),
                ])
                .map_err(to_io)?;
            }
            eprintln!(
                "collision: {:.3} us/pose, collision fraction {:.4}",
                total_us / a.count as f64,
                hits as f64 / a.count as f64
            );
        }
        Suite::Line => {
            w.write_record([
                "query",
                "x0",
                "y0",
                "z0",
                "x1",
                "y1",
                "z1",
                "conservative",
                "occupied_only",
                "us_conservative",
                "us_occupied_only",
            ])
            .map_err(to_io)?;
            let mut total_us = 0.0;
            for q in 0..a.count {
                let p0 = sample_in(&mut rng, &bounds);
                let p1 = sample_in(&mut rng, &bounds);
                let t = Instant::now();
                let c = line_collision(&map, p0, p1, CollisionMode::Conservative)?;
                let tc = us(t.elapsed());
                let t = Instant::now();
                let o = line_collision(&map, p0, p1, CollisionMode::OccupiedOnly)?;
                let to = us(t.elapsed());
                total_us += tc;
                let mut rec = vec![q.to_string()];
                rec.extend(
                    [p0.x, p0.y, p0.z, p1.x, p1.y, p1.z]
                        .iter()
                        .map(|v| format!("{v:.6}")),
                );
                rec.extend([
                    (c as u8).to_string(),
                    (o as u8).to_string(),
                    format!("{tc:.3}"),
                    format!("{to:.3}"),
                ]);
                w.write_record(rec).map_err(to_io)?;
            }
            eprintln!("line: {:.3} us/line", total_us / a.count as f64);
        }
        Suite::Gain => {
            w.write_record([
                "query", "x", "y", "z", "yaw", "exact", "fast", "flat", "us_exact", "us_fast",
                "us_flat",
            ])
            .map_err(to_io)?;
            let variants = [GainVariant::Exact, GainVariant::Fast, GainVariant::Flat];
            let mut totals = [0.0f64; 3];
            for q in 0..a.count {
                let p = sample_in(&mut rng, &bounds);
                let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let sensor =
                    SensorModel::exploration_default(Pose::from_yaw_pitch_roll(p, yaw, 0.0, 0.0));
                let mut counts = [0u64; 3];
                let mut times = [0.0f64; 3];
                for (i, v) in variants.iter().enumerate() {
                    let t = Instant::now();
                    counts[i] = info_gain(&map, &sensor, *v)?;
                    times[i] = us(t.elapsed());
                    totals[i] += times[i];
                }
                let mut rec = vec![q.to_string()];
                rec.extend([p.x, p.y, p.z, yaw].iter().map(|v| format!("{v:.6}")));
                rec.extend(counts.iter().map(|c| c.to_string()));
                rec.extend(times.iter().map(|t| format!("{t:.3}")));
                w.write_record(rec).map_err(to_io)?;
            }
            for (v, t) in variants.iter().zip(totals) {
                eprintln!("gain {}: {:.3} us/pose", v.as_str(), t / a.count as f64);
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_query(a: &QueryArgs) -> CliResult {
    let v = parse_floats(&a.point, 3, "--point")?;
    let map = load_map::<f64>(&a.map)
        .map_err(|e| Failure::at(&a.map, e))?
        .map;
    if a.depth > map.depth_levels() {
        return Err(Failure::usage(format!(
            "--depth {} exceeds the map depth {}",
            a.depth,
            map.depth_levels()
        )));
    }
    let code = map.code_at(V::new(v[0], v[1], v[2]), a.depth)?;
    let node = map.get_node(code);
    let p = format!("{:.6}", probability(node.occupancy));
    let p = p.trim_end_matches('0').trim_end_matches('.');
    println!("state={} p={} depth={}", node.state, p, node.depth());
    Ok(())
}
