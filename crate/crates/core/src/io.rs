//! Map files, scan files and per-scan statistics.
//!
//! Map file layout (all little-endian):
//!
//! ```text
//! "UFOS1" | resolution f64 | depth_levels u8 | t_free f32 | t_occ f32
//!         | clamp_min f32 | clamp_max f32 | flags u8 | node_count u64
//! node_count records, preorder, children in Morton order:
//!     occupancy f32 | flags u8 (bit 0: has 8 children) | [r g b]
//! ```
//!
//! Thresholds are stored as probabilities and clamp bounds as log-odds, the
//! same way [`OccupancyConfig`] holds them. Inner values and indicators are
//! not trusted on load; they are recomputed from the leaves.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrate::Scan;
use crate::morton::TreeGeometry;
use crate::octree::{
    packed_from_rgb, rgb_part, Children, Color, InnerNode, LeafNode, NodeRef, OccupancyConfig,
    OccupancyMap,
};
use crate::scalar::{Real, Vec3};

pub const MAP_MAGIC: &[u8; 5] = b"UFOS1";
pub const MAP_HEADER_LEN: u64 = 5 + 8 + 1 + 4 * 4 + 1 + 8;

const FLAG_COLOR: u8 = 1;
const RECORD_HAS_CHILDREN: u8 = 1;

/// Writes `map` and returns the number of bytes written.
pub fn write_map<T: Real, W: Write>(map: &OccupancyMap<T>, sink: W) -> Result<u64> {
    let mut out = BufWriter::new(sink);
    let cfg = map.config();
    let color = map.color_enabled();
    let count = count_records(map.root_ref());

    out.write_all(MAP_MAGIC)?;
    out.write_all(&map.resolution().as_f64().to_le_bytes())?;
    out.write_all(&[map.depth_levels()])?;
    for v in [cfg.t_free, cfg.t_occ, cfg.clamp_min, cfg.clamp_max] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&[if color { FLAG_COLOR } else { 0 }])?;
    out.write_all(&count.to_le_bytes())?;

    let record = 5 + if color { 3 } else { 0 };
    write_records(&mut out, map.root_ref(), color)?;
    out.flush()?;
    Ok(MAP_HEADER_LEN + count * record)
}

fn count_records(node: NodeRef<'_>) -> u64 {
    match node.logical_children() {
        None => 1,
        Some(ch) => 1 + (0..8).map(|i| count_records(ch.get(i))).sum::<u64>(),
    }
}

fn write_records<W: Write>(out: &mut W, node: NodeRef<'_>, color: bool) -> io::Result<()> {
    let children = node.logical_children();
    out.write_all(&node.value().to_le_bytes())?;
    out.write_all(&[if children.is_some() {
        RECORD_HAS_CHILDREN
    } else {
        0
    }])?;
    if color {
        let rgb = rgb_part(node.color());
        out.write_all(&[rgb as u8, (rgb >> 8) as u8, (rgb >> 16) as u8])?;
    }
    if let Some(ch) = children {
        for i in 0..8 {
            write_records(out, ch.get(i), color)?;
        }
    }
    Ok(())
}

pub fn save_map<T: Real>(map: &OccupancyMap<T>, path: impl AsRef<Path>) -> Result<u64> {
    write_map(map, File::create(path)?)
}

/// A loaded map plus anything the loader had to repair.
#[derive(Debug)]
pub struct LoadedMap<T> {
    pub map: OccupancyMap<T>,
    pub warnings: Vec<String>,
}

struct Source<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Source<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => {
                self.offset += N as u64;
                Ok(buf)
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(self.error(format!("truncated while reading {what}")))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::MapFormat {
            offset: self.offset,
            message: message.into(),
        }
    }
}

/// Reads a map written by [`write_map`]. The loaded map has automatic
/// pruning on.
pub fn read_map<T: Real, R: Read>(source: R) -> Result<LoadedMap<T>> {
    let mut src = Source {
        inner: BufReader::new(source),
        offset: 0,
    };
    let magic: [u8; 5] = src.bytes("magic")?;
    if &magic != MAP_MAGIC {
        src.offset = 0;
        return Err(src.error("bad magic"));
    }
    let resolution = f64::from_le_bytes(src.bytes("resolution")?);
    let levels = src.bytes::<1>("depth")?[0];
    let mut f = [0f32; 4];
    for v in &mut f {
        *v = f32::from_le_bytes(src.bytes("thresholds")?);
    }
    let flags = src.bytes::<1>("flags")?[0];
    let node_count = u64::from_le_bytes(src.bytes("node count")?);
    if flags & !FLAG_COLOR != 0 {
        return Err(src.error(format!("unknown header flags {flags:#04x}")));
    }

    let geometry =
        TreeGeometry::new(T::lit(resolution), levels).map_err(|e| src.error(e.to_string()))?;
    let config = OccupancyConfig {
        t_free: f[0],
        t_occ: f[1],
        clamp_min: f[2],
        clamp_max: f[3],
        ..OccupancyConfig::default()
    };
    let color = flags & FLAG_COLOR != 0;
    let mut map = OccupancyMap::with_geometry(geometry, config, true)
        .map_err(|e| src.error(e.to_string()))?
        .with_color(color);

    let mut reader = RecordReader {
        src,
        color,
        clamp: (config.clamp_min, config.clamp_max),
        remaining: node_count,
        clamped: 0,
    };
    let (value, packed, has_children) = reader.record()?;
    let root = InnerNode::new(value, packed, 0);
    if has_children {
        root.publish_children(reader.children(levels - 1)?);
    }
    if reader.remaining != 0 {
        return Err(reader.src.error(format!(
            "header announces {node_count} records, tree holds {}",
            node_count - reader.remaining
        )));
    }
    let mut probe = [0u8; 1];
    if reader.src.inner.read(&mut probe)? != 0 {
        return Err(reader.src.error("trailing bytes after the last record"));
    }

    let mut warnings = Vec::new();
    if reader.clamped > 0 {
        warnings.push(format!(
            "{} stored values outside the clamp bounds were clamped",
            reader.clamped
        ));
    }
    let repaired = map.install_root(root);
    if repaired > 0 {
        warnings.push(format!("{repaired} inner values disagreed with the maximum of their children and were repaired"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LoadedMap { map, warnings })
}

pub fn load_map<T: Real>(path: impl AsRef<Path>) -> Result<LoadedMap<T>> {
    read_map(File::open(path)?)
}

struct RecordReader<R> {
    src: Source<R>,
    color: bool,
    clamp: (f32, f32),
    remaining: u64,
    clamped: usize,
}

impl<R: Read> RecordReader<R> {
    fn record(&mut self) -> Result<(f32, u32, bool)> {
        if self.remaining == 0 {
            return Err(self.src.error("more records than the header announces"));
        }
        self.remaining -= 1;
        let mut value = f32::from_le_bytes(self.src.bytes("occupancy")?);
        if !value.is_finite() {
            return Err(self.src.error("non-finite occupancy"));
        }
        let f = self.src.bytes::<1>("record flags")?[0];
        if f & !RECORD_HAS_CHILDREN != 0 {
            return Err(self.src.error(format!("unknown record flags {f:#04x}")));
        }
        let packed = if self.color {
            let [r, g, b] = self.src.bytes::<3>("color")?;
            packed_from_rgb(Color::new(r, g, b).rgb_bits())
        } else {
            0
        };
        if value < self.clamp.0 || value > self.clamp.1 {
            value = value.clamp(self.clamp.0, self.clamp.1);
            self.clamped += 1;
        }
        Ok((value, packed, f & RECORD_HAS_CHILDREN != 0))
    }

    fn children(&mut self, depth: u8) -> Result<Children> {
        if depth == 0 {
            let mut leaves = Vec::with_capacity(8);
            for _ in 0..8 {
                let (v, c, has_children) = self.record()?;
                if has_children {
                    return Err(self.src.error("leaf record claims children"));
                }
                leaves.push(LeafNode::new(v, c));
            }
            return Ok(Children::Leaf(leaves.try_into().expect("eight leaves")));
        }
        let mut nodes = Vec::with_capacity(8);
        for _ in 0..8 {
            let (v, c, has_children) = self.record()?;
            let node = InnerNode::new(v, c, 0);
            if has_children {
                node.publish_children(self.children(depth - 1)?);
            }
            nodes.push(node);
        }
        Ok(Children::Inner(nodes.try_into().expect("eight nodes")))
    }
}

/// Parses the text scan format:
///
/// ```text
/// ORIGIN x y z
/// x y z            (or x y z r g b, consistently)
/// ```
///
/// Blank lines and lines starting with `#` are skipped.
pub fn read_scan<T: Real, R: BufRead>(source: R) -> Result<Scan<T>> {
    let mut origin = None;
    let mut points = Vec::new();
    let mut colors: Vec<Color> = Vec::new();
    let mut colored: Option<bool> = None;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::ScanFormat {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = text.split_whitespace().collect();
        if origin.is_none() {
            if fields[0] != "ORIGIN" {
                return Err(err("expected \"ORIGIN x y z\"".into()));
            }
            if fields.len() != 4 {
                return Err(err(format!(
                    "ORIGIN takes 3 coordinates, got {}",
                    fields.len() - 1
                )));
            }
            origin = Some(parse_vec3::<T>(&fields[1..]).map_err(err)?);
            continue;
        }
        let has_color = match fields.len() {
            3 => false,
            6 => true,
            n => return Err(err(format!("expected 3 or 6 fields, got {n}"))),
        };
        match colored {
            None => colored = Some(has_color),
            Some(c) if c != has_color => {
                return Err(err("mixed colored and uncolored points".into()))
            }
            _ => {}
        }
        points.push(parse_vec3::<T>(&fields[..3]).map_err(err)?);
        if has_color {
            let mut rgb = [0u8; 3];
            for (c, f) in rgb.iter_mut().zip(&fields[3..]) {
                *c = f.parse::<u8>().map_err(|_| {
                    err(format!(
                        "color component {f:?} is not an integer in 0..=255"
                    ))
                })?;
            }
            colors.push(Color::new(rgb[0], rgb[1], rgb[2]));
        }
    }
    let Some(origin) = origin else {
        return Err(Error::ScanFormat {
            line: 1,
            message: "missing ORIGIN line".into(),
        });
    };
    Ok(Scan {
        origin,
        points,
        colors: (colored == Some(true)).then_some(colors),
    })
}

fn parse_vec3<T: Real>(fields: &[&str]) -> std::result::Result<Vec3<T>, String> {
    let mut v = [0f64; 3];
    for (out, f) in v.iter_mut().zip(fields) {
        *out = f
            .parse::<f64>()
            .map_err(|_| format!("{f:?} is not a number"))?;
        if !out.is_finite() {
            return Err(format!("{f:?} is not finite"));
        }
    }
    Ok(Vec3::from_f64(v[0], v[1], v[2]))
}

pub fn read_scan_file<T: Real>(path: impl AsRef<Path>) -> Result<Scan<T>> {
    read_scan(BufReader::new(File::open(path)?))
}

/// One row of the per-scan statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub scan: String,
    pub method: String,
    pub total_ms: f64,
    pub raytrace_ms: f64,
    pub insert_ms: f64,
    pub cells_freed: usize,
    pub cells_occupied: usize,
    pub nodes_total: usize,
    pub nodes_leaf: usize,
    pub bytes_model: usize,
}

pub const CSV_HEADER: [&str; 10] = [
    "scan",
    "method",
    "total_ms",
    "raytrace_ms",
    "insert_ms",
    "cells_freed",
    "cells_occupied",
    "nodes_total",
    "nodes_leaf",
    "bytes_model",
];

pub fn write_csv_stats<W: Write>(rows: &[StatsRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER).map_err(io::Error::from)?;
    for r in rows {
        w.write_record([
            r.scan.clone(),
            r.method.clone(),
            format!("{:.3}", r.total_ms),
            format!("{:.3}", r.raytrace_ms),
            format!("{:.3}", r.insert_ms),
            r.cells_freed.to_string(),
            r.cells_occupied.to_string(),
            r.nodes_total.to_string(),
            r.nodes_leaf.to_string(),
            r.bytes_model.to_string(),
        ])
        .map_err(io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::NodeState;

    fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
        Vec3::new(x, y, z)
    }

    fn bytes(map: &OccupancyMap<f64>) -> Vec<u8> {
        let mut out = Vec::new();
        let n = write_map(map, &mut out).unwrap();
        assert_eq!(n, out.len() as u64);
        out
    }

    fn sample() -> OccupancyMap<f64> {
        let mut m = OccupancyMap::new(0.1, 8, OccupancyConfig::default(), true).unwrap();
        m.update_at(v(0.05, 0.05, 0.05), 1.0).unwrap();
        m.update_at(v(-1.05, 0.35, 0.05), -0.4).unwrap();
        let code = m.code_at(v(1.0, 1.0, 1.0), 3).unwrap();
        m.set_coarse(code, -1.0).unwrap();
        m
    }

    #[test]
    fn fresh_map_is_header_plus_one_record() {
        let m = OccupancyMap::<f64>::new(0.1, 8, OccupancyConfig::default(), true).unwrap();
        let b = bytes(&m);
        assert_eq!(b.len() as u64, MAP_HEADER_LEN + 5);
        assert_eq!(&b[..5], MAP_MAGIC);
        assert_eq!(u64::from_le_bytes(b[31..39].try_into().unwrap()), 1);
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let m = sample();
        let a = bytes(&m);
        let loaded = read_map::<f64, _>(&a[..]).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.map.tree_stats(), m.tree_stats());
        assert_eq!(bytes(&loaded.map), a);
        for p in [
            v(0.05, 0.05, 0.05),
            v(-1.05, 0.35, 0.05),
            v(1.0, 1.0, 1.0),
            v(3.0, -2.0, 1.0),
        ] {
            assert_eq!(loaded.map.state_at(p).unwrap(), m.state_at(p).unwrap());
        }
        let count = u64::from_le_bytes(a[31..39].try_into().unwrap());
        assert_eq!(a.len() as u64, MAP_HEADER_LEN + 5 * count);
    }

    #[test]
    fn colors_roundtrip() {
        let mut m = OccupancyMap::<f64>::new(0.1, 6, OccupancyConfig::default(), true)
            .unwrap()
            .with_color(true);
        let code = m.code_at(v(0.05, 0.05, 0.05), 0).unwrap();
        m.update_occupancy_colored(code, 1.0, Some(Color::new(10, 20, 30)))
            .unwrap();
        let a = bytes(&m);
        let loaded = read_map::<f64, _>(&a[..]).unwrap().map;
        assert_eq!(loaded.get_node(code).color, Some(Color::new(10, 20, 30)));
        assert_eq!(bytes(&loaded), a);
    }

    #[test]
    fn truncation_names_the_offset() {
        let a = bytes(&sample());
        let cut = a.len() - 3;
        match read_map::<f64, _>(&a[..cut]) {
            Err(Error::MapFormat { offset, .. }) => {
                assert!(offset <= cut as u64 && offset >= cut as u64 - 5)
            }
            other => panic!("unexpected {other:?}"),
        }
        match read_map::<f64, _>(&b"UFOS2"[..]) {
            Err(Error::MapFormat { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_inner_value_is_repaired() {
        let m = sample();
        let mut a = bytes(&m);
        // root record sits right after the header
        let at = MAP_HEADER_LEN as usize;
        a[at..at + 4].copy_from_slice(&(-1.5f32).to_le_bytes());
        let loaded = read_map::<f64, _>(&a[..]).unwrap();
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.map.root().occupancy(), m.root().occupancy());
        assert_eq!(bytes(&loaded.map), bytes(&m));
    }

    #[test]
    fn leaf_with_children_is_rejected() {
        let mut m = OccupancyMap::<f64>::new(0.1, 1, OccupancyConfig::default(), true).unwrap();
        m.update_at(v(0.05, 0.05, 0.05), 1.0).unwrap();
        let mut a = bytes(&m);
        let first_leaf_flags = MAP_HEADER_LEN as usize + 5 + 4;
        a[first_leaf_flags] = 1;
        assert!(matches!(
            read_map::<f64, _>(&a[..]),
            Err(Error::MapFormat { .. })
        ));
    }

    #[test]
    fn scan_parsing() {
        let s: Scan<f64> = read_scan("ORIGIN 0 0 0\n1 0 0\n".as_bytes()).unwrap();
        assert_eq!(s.origin, v(0.0, 0.0, 0.0));
        assert_eq!(s.points, vec![v(1.0, 0.0, 0.0)]);
        assert!(s.colors.is_none());

        let s: Scan<f64> = read_scan("# c\n\nORIGIN 1 2 3\n1 0 0 255 0 7\n".as_bytes()).unwrap();
        assert_eq!(s.colors, Some(vec![Color::new(255, 0, 7)]));

        match read_scan::<f64, _>("1 0 0\n".as_bytes()) {
            Err(Error::ScanFormat { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_scan::<f64, _>("ORIGIN 0 0 0\n1 0 0\n1 0 0 1 2 3\n".as_bytes()) {
            Err(Error::ScanFormat { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_scan::<f64, _>("ORIGIN 0 0 0\n1 0 x\n".as_bytes()) {
            Err(Error::ScanFormat { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_scan::<f64, _>("ORIGIN 0 0 0\n1 0 0 256 0 0\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_output() {
        let mut out = Vec::new();
        write_csv_stats(&[], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "scan,method,total_ms,raytrace_ms,insert_ms,cells_freed,cells_occupied,nodes_total,nodes_leaf,bytes_model\n"
        );
        let row = StatsRow {
            scan: "a.txt".into(),
            method: "fast".into(),
            total_ms: 1.5,
            raytrace_ms: 1.0,
            insert_ms: 0.5,
            cells_freed: 3,
            cells_occupied: 1,
            nodes_total: 9,
            nodes_leaf: 8,
            bytes_model: 48,
        };
        let mut out = Vec::new();
        write_csv_stats(&[row.clone(), row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "a.txt,fast,1.500,1.000,0.500,3,1,9,8,48"
        );
    }

    #[test]
    fn loaded_state_matches_thresholds() {
        let mut m = OccupancyMap::<f64>::new(
            0.1,
            6,
            OccupancyConfig::default().with_thresholds(0.3, 0.8),
            true,
        )
        .unwrap();
        m.update_at(v(0.05, 0.05, 0.05), 0.5).unwrap();
        let loaded = read_map::<f64, _>(&bytes(&m)[..]).unwrap().map;
        assert_eq!(
            loaded.state_at(v(0.05, 0.05, 0.05)).unwrap(),
            NodeState::Unknown
        );
        assert_eq!(loaded.config().t_occ, m.config().t_occ);
    }
}
