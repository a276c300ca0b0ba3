//! Building a pyramid from a stored level 0, monolithic or per-day sharded.
//!
//! Sharded builds write each day to `.shards/<day_index>/` with a `done`
//! marker, so an interrupted build resumes with the unfinished days. Shard
//! levels are then merged by concatenating their encoded frames, and the
//! levels above the day are built from the stitched day frames.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::layout::{read_chunk, write_manifest, ChunkWriter, LevelSource, Plane, Store, StoreLayout, StoreSink};
use crate::builder::{level_grids, plan_shards, sharded_grids, stream_pyramid, with_workers, BuildOptions, Shard};
use crate::error::{Error, Result};
use crate::frame::{FrameSource, Shape};
use crate::pyramid::{Checksums, PyramidManifest};
use crate::schedule::{schedule_for, LevelSchedule};
use crate::time::TimeGrid;

const WORK_DIR: &str = ".shards";
const DONE_MARKER: &str = "done";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreBuildOptions {
    pub workers: usize,
    pub sharded: bool,
    pub layout: Option<StoreLayout>,
    /// Explicit strides instead of the schedule derived from the span.
    pub strides: Option<Vec<u8>>,
}

impl Default for StoreBuildOptions {
    fn default() -> Self {
        StoreBuildOptions {
            workers: 1,
            sharded: false,
            layout: None,
            strides: None,
        }
    }
}

/// The schedule for a level-0 grid.
pub fn schedule_for_grid(grid: &TimeGrid) -> Result<LevelSchedule> {
    let span = grid
        .period
        .checked_mul(grid.count as u64)
        .ok_or_else(|| Error::Schedule("input span overflows".into()))?;
    schedule_for(grid.period, span)
}

/// Builds every level above 0 of the store at `root`.
pub fn build_store(root: &Path, options: &StoreBuildOptions) -> Result<PyramidManifest> {
    let input = Store::open(root)?;
    if !input.manifest().input_stored {
        return Err(Error::Manifest("level 0 is not stored in this root; run ingest first".into()));
    }
    let grid = input.manifest().gaussian[0].clone();
    let shape = input.manifest().shape;
    let layout = options.layout.unwrap_or_else(|| input.layout());
    if layout.chunk_size != input.manifest().chunk_size {
        return Err(Error::InvalidArgument("chunk size must match the stored level 0".into()));
    }
    let schedule = match &options.strides {
        Some(s) => LevelSchedule::from_strides(grid.period, s.clone())?,
        None => schedule_for_grid(&grid)?,
    };
    let g0_checksum = input.manifest().checksums.gaussian[0].clone();
    let level0 = input.source(Plane::Gaussian, 0)?;

    let mut manifest = if options.sharded {
        match plan_shards(&grid, &schedule) {
            Ok(_) => build_sharded_on_disk(root, &level0, &grid, &schedule, layout, options.workers)?,
            Err(Error::ShardingUnnecessary(why)) => {
                log::info!("building monolithically: {why}");
                build_monolithic(root, &level0, &grid, &schedule, layout)?
            }
            Err(e) => return Err(e),
        }
    } else {
        build_monolithic(root, &level0, &grid, &schedule, layout)?
    };
    manifest.checksums.gaussian[0] = g0_checksum;
    manifest.input_stored = true;
    debug_assert_eq!(manifest.shape, shape);
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

fn base_manifest(schedule: &LevelSchedule, shape: Shape, layout: StoreLayout) -> PyramidManifest {
    let depth = schedule.depth();
    PyramidManifest {
        schedule: schedule.clone(),
        shape,
        gaussian: Vec::new(),
        laplacian: Vec::new(),
        laplacian_encoding: layout.laplacian_encoding,
        chunk_size: layout.chunk_size,
        input_stored: true,
        checksums: Checksums {
            gaussian: vec![None; depth + 1],
            laplacian: vec![None; depth],
        },
        shards: None,
    }
}

fn quantized() -> BuildOptions {
    BuildOptions { quantize_gaussian: true }
}

fn build_monolithic(
    root: &Path,
    level0: &LevelSource,
    grid: &TimeGrid,
    schedule: &LevelSchedule,
    layout: StoreLayout,
) -> Result<PyramidManifest> {
    let shape = level0.shape();
    let depth = schedule.depth();
    let grids = level_grids(grid, &schedule.strides)?;
    let mut manifest = base_manifest(schedule, shape, layout);
    if depth > 0 {
        let mut sink = StoreSink::create(root, 0, depth, layout, shape.len())?;
        stream_pyramid(level0, grid, &schedule.strides, 0, &quantized(), &mut sink)?;
        let (g, l) = sink.finish()?;
        for (i, (g, l)) in g.into_iter().zip(l).enumerate() {
            manifest.checksums.gaussian[i + 1] = Some(g);
            manifest.checksums.laplacian[i] = Some(l);
        }
    }
    manifest.laplacian = grids[..depth].to_vec();
    manifest.gaussian = grids;
    Ok(manifest)
}

fn shard_dir(root: &Path, shard: &Shard) -> PathBuf {
    root.join(WORK_DIR).join(shard.day_index.to_string())
}

fn marker_text(shard: &Shard, merge: usize) -> String {
    format!("{}\t{}\t{}\t{merge}\n", shard.day_index, shard.start, shard.end)
}

fn build_shard(
    root: &Path,
    level0: &LevelSource,
    shard: &Shard,
    grid: &TimeGrid,
    strides: &[u8],
    layout: StoreLayout,
) -> Result<()> {
    let dir = shard_dir(root, shard);
    let marker = dir.join(DONE_MARKER);
    let expected = marker_text(shard, strides.len());
    if fs::read_to_string(&marker).is_ok_and(|m| m == expected) {
        log::info!("shard {} already built, skipping", shard.date);
        return Ok(());
    }
    let window = crate::frame::slot_window(level0, shard.slots())?;
    let mut sink = StoreSink::create(&dir, 0, strides.len(), layout, level0.shape().len())?;
    stream_pyramid(&window, grid, strides, 0, &quantized(), &mut sink)?;
    sink.finish()?;
    fs::write(&marker, expected).map_err(|e| Error::io(&marker, e))
}

/// Concatenates one level of every shard into the root.
fn merge_level(
    root: &Path,
    plane: Plane,
    level: usize,
    shards: &[Shard],
    counts: &[usize],
    layout: StoreLayout,
    shape: Shape,
) -> Result<String> {
    let mut writer = ChunkWriter::create(root, plane, level, layout, shape.len())?;
    let frame_bytes = shape.len() * layout.sample_bytes(plane);
    for (shard, &count) in shards.iter().zip(counts) {
        let dir = shard_dir(root, shard);
        for c in 0..count.div_ceil(layout.chunk_size) {
            let bytes = read_chunk(&dir, plane, level, c, layout, frame_bytes, count)?;
            writer.push_encoded(&bytes)?;
        }
    }
    writer.finish()
}

/// The kept day ranges of a level, in order, as one source.
struct Stitched<'a> {
    inner: &'a LevelSource,
    /// (first stitched slot, first inner slot), ascending.
    starts: Vec<(usize, usize)>,
    len: usize,
}

impl FrameSource for Stitched<'_> {
    fn shape(&self) -> Shape {
        self.inner.shape()
    }

    fn len(&self) -> usize {
        self.len
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        if slot >= self.len {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: self.len,
            });
        }
        let i = self.starts.partition_point(|&(s, _)| s <= slot) - 1;
        let (s, inner) = self.starts[i];
        self.inner.read_frame(inner + slot - s, out)
    }
}

fn build_sharded_on_disk(
    root: &Path,
    level0: &LevelSource,
    grid: &TimeGrid,
    schedule: &LevelSchedule,
    layout: StoreLayout,
    workers: usize,
) -> Result<PyramidManifest> {
    let plan = plan_shards(grid, schedule)?;
    let grids = sharded_grids(grid, schedule, &plan)?;
    let merge = plan.merge_level;
    let depth = schedule.depth();
    let shape = level0.shape();
    let lower = &schedule.strides[..merge];

    if merge > 0 {
        with_workers(workers, || {
            plan.shards
                .par_iter()
                .zip(&grids.shard_grids)
                .try_for_each(|(shard, g)| {
                    build_shard(root, level0, shard, &g[0], lower, layout).map_err(|e| Error::Shard {
                        day: shard.date,
                        source: Box::new(e),
                    })
                })
        })??;
    }

    let mut manifest = base_manifest(schedule, shape, layout);
    for level in 1..=merge {
        let g_counts: Vec<usize> = grids.shard_grids.iter().map(|g| g[level].count).collect();
        let l_counts: Vec<usize> = grids.shard_grids.iter().map(|g| g[level - 1].count).collect();
        manifest.checksums.gaussian[level] =
            Some(merge_level(root, Plane::Gaussian, level, &plan.shards, &g_counts, layout, shape)?);
        manifest.checksums.laplacian[level - 1] =
            Some(merge_level(root, Plane::Laplacian, level, &plan.shards, &l_counts, layout, shape)?);
    }

    if merge < depth {
        let day_source = if merge == 0 {
            None
        } else {
            Some(LevelSource::new(
                root,
                Plane::Gaussian,
                merge,
                layout,
                shape,
                grids.gaussian[merge].count,
            ))
        };
        let inner = day_source.as_ref().unwrap_or(level0);
        let mut starts = Vec::new();
        let mut len = 0;
        for i in grids.layout.kept() {
            let r = &grids.day_ranges[i];
            if !r.is_empty() {
                starts.push((len, r.start));
                len += r.len();
            }
        }
        let stitched = Stitched { inner, starts, len };
        let upper = &schedule.strides[merge..];
        let mut sink = StoreSink::create(root, merge, upper.len(), layout, shape.len())?;
        stream_pyramid(&stitched, &grids.stitched, upper, merge, &quantized(), &mut sink)?;
        let (g, l) = sink.finish()?;
        for (i, (g, l)) in g.into_iter().zip(l).enumerate() {
            manifest.checksums.gaussian[merge + 1 + i] = Some(g);
            manifest.checksums.laplacian[merge + i] = Some(l);
        }
    }

    let work = root.join(WORK_DIR);
    if work.exists() {
        fs::remove_dir_all(&work).map_err(|e| Error::io(&work, e))?;
    }
    manifest.gaussian = grids.gaussian;
    manifest.laplacian = grids.laplacian;
    manifest.shards = Some(grids.layout);
    Ok(manifest)
}
