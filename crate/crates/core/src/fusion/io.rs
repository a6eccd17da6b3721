//! Binary chunked serialization of [`SceneMap`].
//!
//! Layout (little-endian):
//! ```text
//! "SMAP" u32:version
//! f64:leaf_size f64x3:bounds_min f64x3:bounds_max f64:max_range
//! f32x4:log_odds(hit, miss, min, max) u32:chunk_count
//! chunk*: u8:kind(0 instance, 1 free) u32:id u64:count (i32 ix, i32 iy, i32 iz, f32 logodds)*
//! ```
//!
//! Surrounding grids are stored per target as `grid_{id}.bin` (the four
//! bitmasks of [`SurroundGrids::to_bytes`]) next to a `grid_{id}.json`
//! sidecar holding origin, voxel size and dimension.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::grids::{SurroundGrids, SurroundSidecar};
use super::map::{LogOdds, MapConfig, SceneMap};
use super::octree::Octree;
use crate::error::{Error, Result};
use crate::geometry::Aabb;

const MAGIC: &[u8; 4] = b"SMAP";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated scene map".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn point(&mut self) -> Result<Point3<f64>> {
        Ok(Point3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

fn write_chunk(out: &mut Vec<u8>, kind: u8, id: u32, tree: &Octree) {
    let leaves = tree.leaves();
    out.push(kind);
    out.extend(id.to_le_bytes());
    out.extend((leaves.len() as u64).to_le_bytes());
    for (k, v) in leaves {
        for c in k {
            out.extend((c as i32).to_le_bytes());
        }
        out.extend(v.to_le_bytes());
    }
}

impl SceneMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(cfg.leaf_size.to_le_bytes());
        for p in [cfg.bounds.min, cfg.bounds.max] {
            for c in p.iter() {
                out.extend(c.to_le_bytes());
            }
        }
        out.extend(cfg.max_range.to_le_bytes());
        let lo = cfg.log_odds;
        for v in [lo.hit, lo.miss, lo.min, lo.max] {
            out.extend(v.to_le_bytes());
        }
        let ids: Vec<u32> = self.instance_ids().collect();
        out.extend((ids.len() as u32 + 1).to_le_bytes());
        for id in ids {
            write_chunk(&mut out, 0, id, self.instance_tree(id).expect("listed id"));
        }
        write_chunk(&mut out, 1, 0, self.free_tree());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SceneMap> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a scene map (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported scene map version {version}")));
        }
        let leaf_size = r.f64()?;
        let bounds = Aabb {
            min: r.point()?,
            max: r.point()?,
        };
        let max_range = r.f64()?;
        let log_odds = LogOdds {
            hit: r.f32()?,
            miss: r.f32()?,
            min: r.f32()?,
            max: r.f32()?,
        };
        let config = MapConfig {
            leaf_size,
            bounds,
            max_range,
            log_odds,
        };
        let depth = SceneMap::new(config)?.depth();
        let chunks = r.u32()?;
        let mut instances = BTreeMap::new();
        let mut free = None;
        for _ in 0..chunks {
            let kind = r.u8()?;
            let id = r.u32()?;
            let count = r.u64()?;
            let mut tree = Octree::new(depth);
            for _ in 0..count {
                let k = [r.i32()?, r.i32()?, r.i32()?];
                let v = r.f32()?;
                if k.iter().any(|&c| c < 0 || c as u32 >= tree.side()) {
                    return Err(Error::Format(format!("leaf key {k:?} outside map")));
                }
                tree.set(&[k[0] as u32, k[1] as u32, k[2] as u32], v);
            }
            match kind {
                0 => {
                    if instances.insert(id, tree).is_some() {
                        return Err(Error::Format(format!("duplicate instance chunk {id}")));
                    }
                }
                1 => free = Some(tree),
                k => return Err(Error::Format(format!("unknown chunk kind {k}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after scene map".into()));
        }
        let free = free.ok_or_else(|| Error::Format("missing free-space chunk".into()))?;
        SceneMap::from_parts(config, instances, free)
    }
}

pub fn write_grids(dir: &Path, grids: &SurroundGrids) -> Result<()> {
    fs::create_dir_all(dir)?;
    let id = grids.target_id;
    fs::write(dir.join(format!("grid_{id}.bin")), grids.to_bytes())?;
    fs::write(dir.join(format!("grid_{id}.json")), serde_json::to_string_pretty(&grids.sidecar())? + "\n")?;
    Ok(())
}

pub fn read_grids(dir: &Path, id: u32) -> Result<SurroundGrids> {
    let meta: SurroundSidecar = serde_json::from_str(&fs::read_to_string(dir.join(format!("grid_{id}.json")))?)?;
    if meta.target_id != id {
        return Err(Error::IdMismatch(format!("grid_{id}.json describes target {}", meta.target_id)));
    }
    SurroundGrids::from_bytes(&meta, &fs::read(dir.join(format!("grid_{id}.bin")))?)
}
