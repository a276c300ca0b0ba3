//! The video spectrogram: one activity value per Laplacian frame, laid out
//! as time against timescale.

mod heatmap;

pub use heatmap::{export_heatmap, render_heatmap, HeatmapOptions, MISSING_COLOR};

use std::ops::Range;

use image::{DynamicImage, GrayImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{interleave_u8, Shape};
use crate::kernels::kernel_for_stride;
use crate::pyramid::LevelReader;
use crate::time::{MissingRuns, TimeGrid};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
        }
    }
}

/// L2 norm over all pixels and channels.
pub fn frame_norm(values: &[f32]) -> f64 {
    frame_norm_with(values, NormKind::L2)
}

pub fn frame_norm_with(values: &[f32], kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => values.iter().map(|&v| (v as f64).abs()).sum(),
        NormKind::L2 => values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt(),
    }
}

/// `log10(norm + eps) - log10(eps)`: zero maps to zero, strictly increasing.
pub fn log_map(norm: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok((norm + epsilon).log10() - epsilon.log10())
}

/// Display value of a Laplacian sample: zero is mid-gray.
pub fn laplacian_display(v: f32) -> f32 {
    128.0 + v / 2.0
}

/// Renders a Laplacian frame as an 8-bit image centred on mid-gray.
pub fn render_laplacian(shape: Shape, values: &[f32]) -> Result<DynamicImage> {
    let shifted: Vec<f32> = values.iter().map(|&v| laplacian_display(v)).collect();
    frame_image(shape, &shifted)
}

/// A planar frame as an 8-bit image (values rounded and clamped).
pub fn frame_image(shape: Shape, values: &[f32]) -> Result<DynamicImage> {
    if values.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", shape.len()),
            got: format!("{} samples", values.len()),
        });
    }
    let bytes = interleave_u8(shape, values);
    let bad = || Error::InvalidArgument("image buffer size".into());
    Ok(match shape.channels {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(shape.width, shape.height, bytes).ok_or_else(bad)?),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(shape.width, shape.height, bytes).ok_or_else(bad)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramOptions {
    pub norm: NormKind,
    pub epsilon: f64,
}

impl Default for SpectrogramOptions {
    fn default() -> Self {
        SpectrogramOptions {
            norm: NormKind::L2,
            epsilon: 1.0,
        }
    }
}

/// Norms of every frame of one Laplacian level.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramLevel {
    pub level: usize,
    pub label: String,
    /// Grid of the Laplacian level (tile positions and widths).
    pub grid: TimeGrid,
    pub norms: Vec<f32>,
    /// Cells whose whole kernel support is missing. Their norm is 0.
    pub missing: MissingRuns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramGrid {
    pub levels: Vec<SpectrogramLevel>,
    pub options: SpectrogramOptions,
    /// Smallest and largest norm over non-missing cells, if any.
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Cells of Laplacian `level` whose clamped kernel window lies entirely in
/// missing slots.
pub fn missing_cells(grid: &TimeGrid, segments: &[Range<usize>], stride: u8) -> Result<MissingRuns> {
    let kernel = kernel_for_stride(stride as u32)?;
    let mut flagged = Vec::new();
    for &(a, b) in grid.missing.runs() {
        for t in a..b {
            let seg = segments
                .get(segments.partition_point(|s| s.end <= t))
                .filter(|s| s.contains(&t))
                .ok_or(Error::OutOfRange {
                    what: "slot",
                    index: t,
                    len: grid.count,
                })?;
            let lo = t.saturating_sub(kernel.offset()).max(seg.start);
            let hi = (t + kernel.taps() - kernel.offset()).min(seg.end);
            if grid.missing.covers(lo..hi) {
                flagged.push(t..t + 1);
            }
        }
    }
    Ok(MissingRuns::from_ranges(flagged))
}

/// Norms of Laplacian `level`, read in one pass.
pub fn level_norms(reader: &dyn LevelReader, level: usize, options: &SpectrogramOptions) -> Result<SpectrogramLevel> {
    let m = reader.manifest();
    let grid = m.laplacian_grid(level)?.clone();
    let segments = m.laplacian_segments(level)?;
    let missing = missing_cells(&grid, &segments, m.schedule.strides[level - 1])?;
    let frames = reader.laplacian_frames(level)?;
    let frame_len = m.shape.len();
    const BLOCK: usize = 256;
    let mut norms = vec![0.0f32; grid.count];
    norms
        .par_chunks_mut(BLOCK)
        .enumerate()
        .try_for_each(|(b, out)| -> Result<()> {
            let mut buf = vec![0.0f32; frame_len];
            for (i, o) in out.iter_mut().enumerate() {
                let slot = b * BLOCK + i;
                if missing.contains(slot) {
                    continue;
                }
                frames.read_frame(slot, &mut buf)?;
                *o = frame_norm_with(&buf, options.norm) as f32;
            }
            Ok(())
        })?;
    Ok(SpectrogramLevel {
        level,
        label: m.schedule.labels.get(level).cloned().unwrap_or_default(),
        grid,
        norms,
        missing,
    })
}

pub fn compute_spectrogram(reader: &dyn LevelReader, options: &SpectrogramOptions) -> Result<SpectrogramGrid> {
    log_map(0.0, options.epsilon)?;
    let depth = reader.manifest().depth();
    if depth == 0 {
        return Err(Error::InvalidArgument("pyramid has no Laplacian levels".into()));
    }
    let levels = (1..=depth)
        .map(|l| level_norms(reader, l, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrogramGrid::new(levels, *options))
}

impl SpectrogramGrid {
    pub fn new(levels: Vec<SpectrogramLevel>, options: SpectrogramOptions) -> Self {
        let mut min: Option<f64> = None;
        let mut max: Option<f64> = None;
        for l in &levels {
            for (i, &n) in l.norms.iter().enumerate() {
                if l.missing.contains(i) {
                    continue;
                }
                let n = n as f64;
                min = Some(min.map_or(n, |m| m.min(n)));
                max = Some(max.map_or(n, |m| m.max(n)));
            }
        }
        SpectrogramGrid {
            levels,
            options,
            min,
            max,
        }
    }

    pub fn level(&self, level: usize) -> Result<&SpectrogramLevel> {
        self.levels.iter().find(|l| l.level == level).ok_or(Error::OutOfRange {
            what: "level",
            index: level,
            len: self.levels.len() + 1,
        })
    }

    /// Log-mapped range of the non-missing cells.
    pub fn log_range(&self) -> Option<(f64, f64)> {
        let eps = self.options.epsilon;
        Some((log_map(self.min?, eps).ok()?, log_map(self.max?, eps).ok()?))
    }

    /// Cells of `levels` whose tiles overlap `[from, to)`.
    pub fn window(&self, levels: Range<usize>, from: i64, to: i64) -> Result<SpectrogramWindow> {
        if levels.is_empty() || from >= to {
            return Err(Error::InvalidArgument("empty spectrogram selection".into()));
        }
        let mut out = Vec::new();
        for l in levels {
            let lvl = self.level(l)?;
            let cells = tile_range(&lvl.grid, from, to)?;
            let mut times = Vec::with_capacity(cells.len());
            for slot in cells.clone() {
                times.push(lvl.grid.slot_to_time(slot)?);
            }
            let norms: Vec<f32> = lvl.norms[cells.clone()].to_vec();
            let log = norms
                .iter()
                .map(|&n| log_map(n as f64, self.options.epsilon))
                .collect::<Result<Vec<_>>>()?;
            out.push(WindowLevel {
                level: l,
                label: lvl.label.clone(),
                period_ns: lvl.grid.period.as_nanos_f64(),
                first_slot: cells.start,
                times,
                norms,
                log,
                missing: cells.clone().map(|s| lvl.missing.contains(s)).collect(),
            });
        }
        Ok(SpectrogramWindow {
            from,
            to,
            epsilon: self.options.epsilon,
            norm: self.options.norm,
            log_min: self.log_range().map(|r| r.0),
            log_max: self.log_range().map(|r| r.1),
            levels: out,
        })
    }

    /// The `spectrogram.json` sidecar.
    pub fn sidecar(&self) -> SpectrogramSidecar {
        SpectrogramSidecar {
            levels: self
                .levels
                .iter()
                .map(|l| SidecarLevel {
                    level: l.level,
                    label: l.label.clone(),
                    period_ns: l.grid.period.as_nanos_f64(),
                    origin_ns: l.grid.origin_ns,
                    count: l.grid.count,
                    norms: l.norms.clone(),
                    missing: l.missing.clone(),
                })
                .collect(),
            epsilon: self.options.epsilon,
            norm: self.options.norm,
            min: self.min,
            max: self.max,
        }
    }
}

/// Slots of `grid` whose tiles `[time, time + period)` overlap `[from, to)`.
pub fn tile_range(grid: &TimeGrid, from: i64, to: i64) -> Result<Range<usize>> {
    let mut r = grid.slots_in(from, to);
    if r.start > 0 {
        let prev = r.start - 1;
        let end = grid.slot_to_time(prev)? as i128 + grid.period.offset(1);
        if end > from as i128 {
            r.start = prev;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarLevel {
    pub level: usize,
    pub label: String,
    pub period_ns: f64,
    pub origin_ns: i64,
    pub count: usize,
    pub norms: Vec<f32>,
    pub missing: MissingRuns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramSidecar {
    pub levels: Vec<SidecarLevel>,
    pub epsilon: f64,
    pub norm: NormKind,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLevel {
    pub level: usize,
    pub label: String,
    pub period_ns: f64,
    pub first_slot: usize,
    pub times: Vec<i64>,
    pub norms: Vec<f32>,
    pub log: Vec<f64>,
    pub missing: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramWindow {
    pub from: i64,
    pub to: i64,
    pub epsilon: f64,
    pub norm: NormKind,
    pub log_min: Option<f64>,
    pub log_max: Option<f64>,
    pub levels: Vec<WindowLevel>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_pyramid;
    use crate::frame::{FrameSequence, SequenceKind};
    use crate::schedule::LevelSchedule;
    use crate::time::Period;
    use proptest::prelude::*;

    fn pyramid(values: Vec<f32>, strides: &[u8]) -> crate::pyramid::Pyramid {
        let grid = TimeGrid::new(0, Period::from_secs(1).unwrap(), values.len());
        let x = FrameSequence::new(grid, SequenceKind::Input, Shape::gray(1, 1), values).unwrap();
        let s = LevelSchedule::from_strides(Period::from_secs(1).unwrap(), strides.to_vec()).unwrap();
        build_pyramid(&x, &s).unwrap()
    }

    #[test]
    fn norms() {
        assert_eq!(frame_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(frame_norm(&[0.0; 6]), 0.0);
        assert_eq!(frame_norm(&[1.0; 4]), 2.0);
        assert_eq!(frame_norm_with(&[-3.0, 4.0], NormKind::L1), 7.0);
    }

    #[test]
    fn log_map_examples() {
        assert_eq!(log_map(0.0, 1.0).unwrap(), 0.0);
        assert!((log_map(99.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((log_map(9.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(log_map(1.0, 0.0).is_err());
        assert!(log_map(1.0, -1.0).is_err());
    }

    #[test]
    fn render_examples() {
        let img = render_laplacian(Shape::gray(3, 1), &[0.0, 254.0, -256.0]).unwrap();
        assert_eq!(img.to_luma8().into_raw(), [128, 255, 0]);
    }

    #[test]
    fn constant_input_has_no_activity() {
        let p = pyramid(vec![77.0; 600], &[2, 3, 5]);
        let s = compute_spectrogram(&p, &SpectrogramOptions::default()).unwrap();
        assert_eq!(s.levels.len(), 3);
        for l in &s.levels {
            assert_eq!(l.norms.len(), l.grid.count);
            assert!(l.norms.iter().all(|&n| n < 1e-3));
        }
    }

    #[test]
    fn blip_activity_stays_near_blip() {
        let mut v = vec![0.0; 900];
        v[450] = 255.0;
        let p = pyramid(v, &[2, 3, 5]);
        let s = compute_spectrogram(&p, &SpectrogramOptions::default()).unwrap();
        // Supports widen with each level; 60 level-0 slots covers all three.
        for l in &s.levels {
            let m = p.manifest.schedule.cumulative_stride(l.level - 1).unwrap() as usize;
            for (slot, &n) in l.norms.iter().enumerate() {
                let t0 = slot * m;
                if t0 + 60 < 450 || t0 > 450 + 60 {
                    assert!(n < 1e-4, "level {} slot {slot} norm {n}", l.level);
                }
            }
            assert!(l.norms.iter().any(|&n| n > 1.0));
        }
    }

    #[test]
    fn missing_cells_need_whole_window() {
        let grid = TimeGrid::new(0, Period::from_secs(1).unwrap(), 20)
            .with_missing(MissingRuns::from_ranges([5..10, 19..20]))
            .unwrap();
        let m = missing_cells(&grid, &[0..20], 2).unwrap();
        // Window [t-1, t+2] must be missing: t = 6, 7. The clamped tail
        // window of t = 19 still reaches slot 18.
        assert_eq!(m.runs(), &[(6, 8)]);
        // A segment edge at 10 clamps the windows of t = 8, 9.
        let m = missing_cells(&grid, &[0..10, 10..20], 2).unwrap();
        assert_eq!(m.runs(), &[(6, 10)]);
        let seg = missing_cells(&grid, &[0..8, 8..20], 3).unwrap();
        assert_eq!(seg.runs(), &[(7, 8)]);
    }

    #[test]
    fn window_selection() {
        let p = pyramid((0..120).map(|i| (i % 7) as f32 * 30.0).collect(), &[2, 3]);
        let s = compute_spectrogram(&p, &SpectrogramOptions::default()).unwrap();
        let ns = 1_000_000_000i64;
        let w = s.window(1..3, 10 * ns, 20 * ns).unwrap();
        assert_eq!(w.levels[0].first_slot, 10);
        assert_eq!(w.levels[0].norms.len(), 10);
        // Level 2 tiles are 2 s wide.
        assert_eq!(w.levels[1].first_slot, 5);
        assert_eq!(w.levels[1].times[0], 10 * ns);
        assert!(s.window(1..1, 0, 1).is_err());
        assert!(s.window(1..2, 5, 5).is_err());
        let w = s.window(2..3, 11 * ns, 12 * ns).unwrap();
        assert_eq!(w.levels[0].first_slot, 5);
        assert_eq!(w.levels[0].norms.len(), 1);
    }

    proptest! {
        #[test]
        fn norm_scales_linearly(v in proptest::collection::vec(-255.0f32..255.0, 1..64), a in -4.0f32..4.0) {
            let scaled: Vec<f32> = v.iter().map(|x| x * a).collect();
            let lhs = frame_norm(&scaled);
            let rhs = (a.abs() as f64) * frame_norm(&v);
            prop_assert!((lhs - rhs).abs() <= 1e-5 * rhs.max(1.0));
        }

        #[test]
        fn log_map_increasing(a in 0.0f64..1e6, b in 0.0f64..1e6, eps in 1e-3f64..10.0) {
            prop_assume!(a < b);
            prop_assert!(log_map(a, eps).unwrap() < log_map(b, eps).unwrap());
        }

        #[test]
        fn squared_norms_sum_to_energy(seed in any::<u64>()) {
            let mut x = seed;
            let v: Vec<f32> = (0..300).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((x >> 40) % 256) as f32
            }).collect();
            let p = pyramid(v, &[3, 2]);
            let s = compute_spectrogram(&p, &SpectrogramOptions::default()).unwrap();
            for l in &s.levels {
                let lhs: f64 = l.norms.iter().map(|&n| (n as f64).powi(2)).sum();
                let rhs: f64 = p.laplacian(l.level).unwrap().data().iter().map(|&v| (v as f64).powi(2)).sum();
                prop_assert!((lhs - rhs).abs() <= 1e-6 * rhs.max(1.0) + 1e-3);
            }
        }
    }

    #[test]
    fn periodic_input_gives_periodic_norms() {
        let period = 30;
        let v: Vec<f32> = (0..1800).map(|i| if i % period < 12 { 200.0 } else { 20.0 }).collect();
        let p = pyramid(v, &[2, 3, 5]);
        let s = compute_spectrogram(&p, &SpectrogramOptions::default()).unwrap();
        for l in &s.levels {
            let m = p.manifest.schedule.cumulative_stride(l.level - 1).unwrap() as usize;
            let q = period / m;
            let n = l.norms.len();
            for t in 10..n - q - 10 {
                assert_eq!(l.norms[t], l.norms[t + q], "level {} slot {t}", l.level);
            }
        }
    }
}
