//! Day shards: each calendar day is built independently up to the day
//! level, then the day frames are stitched and the upper levels are built
//! from the stitched sequence.
//!
//! Filters clamp at shard edges, so slots within a kernel radius of midnight
//! differ from a monolithic build. Everything else matches it exactly.

use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;

use super::{level_grids, stream_pyramid, BuildOptions, MemorySink};
use crate::error::{Error, Result};
use crate::frame::{fill_missing, slot_window, FrameSequence, FrameSource, SequenceKind};
use crate::pyramid::{Checksums, LaplacianEncoding, Pyramid, PyramidManifest, ShardLayout, DEFAULT_CHUNK_SIZE};
use crate::schedule::LevelSchedule;
use crate::time::{date_of, midnight_ns, MissingRuns, Period, TimeGrid, NANOS_PER_DAY};

/// Day-frames each year keeps once its surplus days are dropped.
pub const DAYS_PER_YEAR: usize = 360;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub day_index: usize,
    pub date: NaiveDate,
    /// Level-0 slot range `[start, end)`.
    pub start: usize,
    pub end: usize,
}

impl Shard {
    pub fn slots(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub shards: Vec<Shard>,
    /// Dates left out above the day level, ascending.
    pub drop_days: Vec<NaiveDate>,
    pub merge_level: usize,
}

impl ShardPlan {
    /// Indices into `shards` of the dropped days.
    pub fn dropped_indices(&self) -> Vec<usize> {
        self.shards
            .iter()
            .enumerate()
            .filter(|(_, s)| self.drop_days.binary_search(&s.date).is_ok())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn layout(&self) -> ShardLayout {
        ShardLayout {
            merge_level: self.merge_level,
            bounds: self.shards.iter().map(|s| (s.start, s.end)).collect(),
            dropped: self.dropped_indices(),
        }
    }

    /// One `day_index<TAB>start_slot<TAB>end_slot` line per shard.
    pub fn worklist(&self) -> String {
        self.shards
            .iter()
            .map(|s| format!("{}\t{}\t{}\n", s.day_index, s.start, s.end))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkItem {
    pub day_index: usize,
    pub start: usize,
    pub end: usize,
}

pub fn parse_worklist(text: &str) -> Result<Vec<WorkItem>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::InvalidArgument(format!("work list line {}: {line:?}", n + 1));
            let fields: Vec<usize> = line
                .split('\t')
                .map(|f| f.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            match fields[..] {
                [day_index, start, end] if start < end => Ok(WorkItem {
                    day_index,
                    start,
                    end,
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

fn days_in_year(year: i32) -> usize {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// Splits `grid` at UTC midnights and, when the schedule reaches a year
/// level, picks the surplus days of each calendar year to drop.
///
/// A year with more than 360 days in the input drops its surplus (5, or 6 in
/// a leap year), choosing the days with the most missing slots and breaking
/// ties by earliest date. Slots a partial day lacks count as missing.
pub fn plan_shards(grid: &TimeGrid, schedule: &LevelSchedule) -> Result<ShardPlan> {
    if grid.period != schedule.base_period {
        return Err(Error::GridMismatch(format!(
            "grid period {} differs from schedule base period {}",
            grid.period, schedule.base_period
        )));
    }
    let span = grid.end_time() as i128 - grid.origin_ns as i128;
    if grid.count == 0 || span < NANOS_PER_DAY as i128 {
        return Err(Error::ShardingUnnecessary("input spans less than one day".into()));
    }
    let merge_level = schedule
        .day_level
        .ok_or_else(|| Error::ShardingUnnecessary("schedule has no day level".into()))?;

    let first = date_of(grid.slot_to_time(0)?);
    let last = date_of(grid.slot_to_time(grid.count - 1)?);
    let mut shards = Vec::new();
    for date in first.iter_days().take_while(|d| *d <= last) {
        let next = date.succ_opt().ok_or_else(|| Error::InvalidArgument("date overflow".into()))?;
        let slots = grid.slots_in(midnight_ns(date), midnight_ns(next));
        if !slots.is_empty() {
            shards.push(Shard {
                day_index: shards.len(),
                date,
                start: slots.start,
                end: slots.end,
            });
        }
    }

    let mut drop_days = Vec::new();
    if schedule.year_level.is_some() {
        let per_day = Period::days(1)?
            .ratio(&grid.period)
            .map(|n| n as usize)
            .unwrap_or(usize::MAX);
        let mut i = 0;
        while i < shards.len() {
            let year = shards[i].date.year();
            let j = i + shards[i..].iter().take_while(|s| s.date.year() == year).count();
            let surplus = (j - i).saturating_sub(DAYS_PER_YEAR);
            debug_assert!(surplus <= days_in_year(year) - DAYS_PER_YEAR);
            let mut ranked: Vec<(usize, NaiveDate)> = shards[i..j]
                .iter()
                .map(|s| {
                    let absent = per_day.saturating_sub(s.end - s.start);
                    (grid.missing.count_in(s.slots()) + absent, s.date)
                })
                .collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            drop_days.extend(ranked.into_iter().take(surplus).map(|(_, d)| d));
            i = j;
        }
        drop_days.sort_unstable();
    }
    Ok(ShardPlan {
        shards,
        drop_days,
        merge_level,
    })
}

/// Joins consecutive grids of the same period. The result keeps explicit
/// timestamps only when the parts do not line up on one uniform grid.
pub fn concat_grids(parts: &[TimeGrid]) -> Result<TimeGrid> {
    let first = parts.first().ok_or(Error::EmptySequence)?;
    let period = first.period;
    let count = parts.iter().map(|g| g.count).sum();
    let mut ranges = Vec::new();
    let mut offset = 0;
    let mut uniform = true;
    for g in parts {
        if g.period != period {
            return Err(Error::GridMismatch("cannot join grids of different periods".into()));
        }
        ranges.extend(g.missing.shifted(offset).runs().iter().map(|&(a, b)| a..b));
        if g.times.is_some() || (g.origin_ns as i128 != first.origin_ns as i128 + period.offset(offset as u64)) {
            uniform = false;
        }
        offset += g.count;
    }
    let grid = TimeGrid::new(first.origin_ns, period, count).with_missing(MissingRuns::from_ranges(ranges))?;
    if uniform {
        return Ok(grid);
    }
    let mut times = Vec::with_capacity(count);
    for g in parts {
        for slot in 0..g.count {
            times.push(g.slot_to_time(slot)?);
        }
    }
    grid.with_times(times)
}

/// The sub-sequence of `grid` made of `keep` ranges, in order.
fn select_slots(grid: &TimeGrid, keep: &[Range<usize>]) -> Result<TimeGrid> {
    let parts = keep
        .iter()
        .map(|r| grid.slice(r.clone()))
        .collect::<Result<Vec<_>>>()?;
    concat_grids(&parts)
}

/// Grids of a sharded pyramid, without any frame data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardedGrids {
    /// Gaussian levels 0..=N.
    pub gaussian: Vec<TimeGrid>,
    /// Laplacian levels 1..=N.
    pub laplacian: Vec<TimeGrid>,
    /// Day-level grid with the dropped days removed; the source of level
    /// `merge_level + 1`.
    pub stitched: TimeGrid,
    /// Per shard, its level-0 grid and the grids of levels 1..=merge_level.
    pub shard_grids: Vec<Vec<TimeGrid>>,
    /// Per shard, its slot range within the merged day-level grid.
    pub day_ranges: Vec<Range<usize>>,
    pub layout: ShardLayout,
}

pub fn sharded_grids(grid: &TimeGrid, schedule: &LevelSchedule, plan: &ShardPlan) -> Result<ShardedGrids> {
    let merge = plan.merge_level;
    let depth = schedule.depth();
    if merge > depth {
        return Err(Error::Schedule(format!("merge level {merge} above depth {depth}")));
    }
    let lower = &schedule.strides[..merge];
    let shard_grids = plan
        .shards
        .iter()
        .map(|s| level_grids(&grid.slice(s.slots())?, lower))
        .collect::<Result<Vec<_>>>()?;
    let mut gaussian = vec![grid.clone()];
    for level in 1..=merge {
        let parts: Vec<TimeGrid> = shard_grids.iter().map(|g| g[level].clone()).collect();
        gaussian.push(concat_grids(&parts)?);
    }
    let mut day_ranges = Vec::with_capacity(plan.shards.len());
    let mut start = 0;
    for g in &shard_grids {
        day_ranges.push(start..start + g[merge].count);
        start += g[merge].count;
    }
    let layout = plan.layout();
    let kept: Vec<Range<usize>> = layout.kept().map(|i| day_ranges[i].clone()).collect();
    if kept.iter().all(|r| r.is_empty()) {
        return Err(Error::EmptySequence);
    }
    let stitched = select_slots(&gaussian[merge], &kept)?;
    let upper = level_grids(&stitched, &schedule.strides[merge..])?;
    let mut laplacian = gaussian[..merge].to_vec();
    laplacian.extend(upper[..depth - merge].iter().cloned());
    gaussian.extend(upper.into_iter().skip(1));
    Ok(ShardedGrids {
        gaussian,
        laplacian,
        stitched,
        shard_grids,
        day_ranges,
        layout,
    })
}

struct ShardOutput {
    gaussian: Vec<Vec<f32>>,
    laplacian: Vec<Vec<f32>>,
}

fn build_one(
    source: &dyn FrameSource,
    shard: &Shard,
    grid: &TimeGrid,
    strides: &[u8],
    options: &BuildOptions,
) -> Result<ShardOutput> {
    let window = slot_window(source, shard.slots())?;
    let mut sink = MemorySink::new(0, strides.len(), source.shape().len());
    if !strides.is_empty() {
        stream_pyramid(&window, grid, strides, 0, options, &mut sink)?;
    }
    let (gaussian, laplacian) = sink.into_parts();
    Ok(ShardOutput { gaussian, laplacian })
}

/// Runs `f` on a pool of `workers` threads.
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn build_sharded(
    input: &FrameSequence,
    schedule: &LevelSchedule,
    plan: &ShardPlan,
    workers: usize,
) -> Result<Pyramid> {
    build_sharded_with(input, schedule, plan, workers, &BuildOptions::default())
}

pub fn build_sharded_with(
    input: &FrameSequence,
    schedule: &LevelSchedule,
    plan: &ShardPlan,
    workers: usize,
    options: &BuildOptions,
) -> Result<Pyramid> {
    build_sharded_source(input, &input.grid, schedule, plan, workers, options)
}

/// Sharded build over any frame source laid out on `grid`.
pub fn build_sharded_source(
    source: &dyn FrameSource,
    grid: &TimeGrid,
    schedule: &LevelSchedule,
    plan: &ShardPlan,
    workers: usize,
    options: &BuildOptions,
) -> Result<Pyramid> {
    if grid.period != schedule.base_period {
        return Err(Error::GridMismatch(format!(
            "input period {} differs from schedule base period {}",
            grid.period, schedule.base_period
        )));
    }
    if source.len() != grid.count {
        return Err(Error::GridMismatch(format!(
            "source has {} frames but grid has {} slots",
            source.len(),
            grid.count
        )));
    }
    let shape = source.shape();
    let frame_len = shape.len();
    let merge = plan.merge_level;
    let depth = schedule.depth();
    let grids = sharded_grids(grid, schedule, plan)?;
    let lower = &schedule.strides[..merge];

    let outputs = with_workers(workers, || {
        plan.shards
            .par_iter()
            .zip(&grids.shard_grids)
            .map(|(shard, g)| {
                build_one(source, shard, &g[0], lower, options).map_err(|e| Error::Shard {
                    day: shard.date,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut gaussian = Vec::with_capacity(depth);
    let mut laplacian = Vec::with_capacity(depth);
    for level in 1..=merge {
        let g: Vec<f32> = outputs.iter().flat_map(|o| o.gaussian[level - 1].iter().copied()).collect();
        let l: Vec<f32> = outputs.iter().flat_map(|o| o.laplacian[level - 1].iter().copied()).collect();
        gaussian.push(FrameSequence::new(grids.gaussian[level].clone(), SequenceKind::Gaussian, shape, g)?);
        laplacian.push(FrameSequence::new(grids.laplacian[level - 1].clone(), SequenceKind::Laplacian, shape, l)?);
    }

    if merge < depth {
        let mut stitched_data = Vec::with_capacity(grids.stitched.count * frame_len);
        if merge == 0 {
            let filled = fill_missing(source, &grid.missing);
            let mut buf = vec![0.0; frame_len];
            for i in grids.layout.kept() {
                for slot in grids.day_ranges[i].clone() {
                    filled.read_frame(slot, &mut buf)?;
                    stitched_data.extend_from_slice(&buf);
                }
            }
        } else {
            let day_data = gaussian[merge - 1].data();
            for i in grids.layout.kept() {
                let r = &grids.day_ranges[i];
                stitched_data.extend_from_slice(&day_data[r.start * frame_len..r.end * frame_len]);
            }
        }
        let stitched = FrameSequence::new(grids.stitched.clone(), SequenceKind::Gaussian, shape, stitched_data)?;
        let upper = &schedule.strides[merge..];
        let mut sink = MemorySink::new(merge, upper.len(), frame_len);
        stream_pyramid(&stitched, &stitched.grid, upper, merge, options, &mut sink)?;
        let (g, l) = sink.into_parts();
        for (i, (g, l)) in g.into_iter().zip(l).enumerate() {
            let level = merge + 1 + i;
            gaussian.push(FrameSequence::new(grids.gaussian[level].clone(), SequenceKind::Gaussian, shape, g)?);
            laplacian.push(FrameSequence::new(grids.laplacian[level - 1].clone(), SequenceKind::Laplacian, shape, l)?);
        }
    }

    let manifest = PyramidManifest {
        schedule: schedule.clone(),
        shape,
        gaussian: grids.gaussian,
        laplacian: grids.laplacian,
        laplacian_encoding: LaplacianEncoding::F32,
        chunk_size: DEFAULT_CHUNK_SIZE,
        input_stored: false,
        checksums: Checksums {
            gaussian: vec![None; depth + 1],
            laplacian: vec![None; depth],
        },
        shards: Some(grids.layout),
    };
    manifest.validate()?;
    Ok(Pyramid {
        manifest,
        gaussian,
        laplacian,
    })
}
