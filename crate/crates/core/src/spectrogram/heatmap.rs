//! Heatmap raster of a spectrogram: one row per level, coarsest on top,
//! time running left to right, so tiles widen with the level period.

use std::io::Cursor;
use std::ops::RangeInclusive;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use super::{log_map, tile_range, SpectrogramGrid};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Cells whose whole kernel support is missing.
pub const MISSING_COLOR: [u8; 3] = [48, 48, 48];
/// Columns with no tile (outside a level's extent).
pub const BACKGROUND_COLOR: [u8; 3] = [0, 0, 0];

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapOptions {
    pub width: u32,
    pub row_height: u32,
    /// Levels to draw; all by default.
    pub levels: Option<RangeInclusive<usize>>,
    /// Time window `[from, to)` in ns; the full extent by default.
    pub from: Option<i64>,
    pub to: Option<i64>,
    /// Normalize each row by its own range instead of the global one.
    pub per_level: bool,
}

impl Default for HeatmapOptions {
    fn default() -> Self {
        HeatmapOptions {
            width: 1200,
            row_height: 12,
            levels: None,
            from: None,
            to: None,
            per_level: false,
        }
    }
}

/// Viridis color at `t` in `[0, 1]`.
pub fn color_at(t: f64) -> [u8; 3] {
    let c = colorous::VIRIDIS.eval_continuous(t.clamp(0.0, 1.0));
    [c.r, c.g, c.b]
}

fn extent(grid: &SpectrogramGrid) -> Option<(i64, i64)> {
    let from = grid.levels.iter().filter(|l| l.grid.count > 0).map(|l| l.grid.origin_ns).min()?;
    let to = grid.levels.iter().filter(|l| l.grid.count > 0).map(|l| l.grid.end_time()).max()?;
    Some((from, to))
}

pub fn render_heatmap(grid: &SpectrogramGrid, options: &HeatmapOptions) -> Result<RgbImage> {
    let empty = || Error::InvalidArgument("empty heatmap selection".into());
    let (lo_t, hi_t) = extent(grid).ok_or_else(empty)?;
    let from = options.from.unwrap_or(lo_t);
    let to = options.to.unwrap_or(hi_t);
    let first = grid.levels.first().ok_or_else(empty)?.level;
    let last = grid.levels.last().ok_or_else(empty)?.level;
    let levels = options.levels.clone().unwrap_or(first..=last);
    if from >= to || levels.is_empty() || options.width == 0 || options.row_height == 0 {
        return Err(empty());
    }
    let rows: Vec<usize> = levels.rev().collect();
    let eps = grid.options.epsilon;
    let height = rows.len() as u32 * options.row_height;
    let mut img = RgbImage::from_pixel(options.width, height, Rgb(BACKGROUND_COLOR));
    let span = (to as i128 - from as i128) as u128;
    let global = grid.log_range();

    for (r, &level) in rows.iter().enumerate() {
        let lvl = grid.level(level)?;
        let range = if options.per_level {
            let vals = lvl
                .norms
                .iter()
                .enumerate()
                .filter(|(i, _)| !lvl.missing.contains(*i))
                .map(|(_, &n)| n as f64);
            let (mn, mx) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            (mn <= mx).then(|| (log_map(mn, eps), log_map(mx, eps)))
        } else {
            global.map(|(a, b)| (Ok(a), Ok(b)))
        };
        let (lo, hi) = match range {
            Some((a, b)) => (a?, b?),
            None => (0.0, 0.0),
        };
        for x in 0..options.width {
            let ta = from as i128 + (x as u128 * span / options.width as u128) as i128;
            let tb = from as i128 + ((x as u128 + 1) * span / options.width as u128) as i128;
            let cells = tile_range(&lvl.grid, ta as i64, (tb as i64).max(ta as i64 + 1))?;
            if cells.is_empty() {
                continue;
            }
            let best = cells
                .filter(|&s| !lvl.missing.contains(s))
                .map(|s| lvl.norms[s])
                .fold(None, |acc: Option<f32>, n| Some(acc.map_or(n, |a| a.max(n))));
            let color = match best {
                None => MISSING_COLOR,
                Some(n) => {
                    let v = log_map(n as f64, eps)?;
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                    color_at(t)
                }
            };
            for y in 0..options.row_height {
                img.put_pixel(x, r as u32 * options.row_height + y, Rgb(color));
            }
        }
    }
    Ok(img)
}

/// Writes the heatmap PNG and, when `sidecar` is given, the
/// `spectrogram.json` norms next to it.
pub fn export_heatmap(
    grid: &SpectrogramGrid,
    options: &HeatmapOptions,
    png: Option<&Path>,
    sidecar: Option<&Path>,
) -> Result<()> {
    if let Some(path) = png {
        let img = render_heatmap(grid, options)?;
        let mut bytes = Vec::new();
        img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
        write_atomic(path, &bytes)?;
    }
    if let Some(path) = sidecar {
        let json = serde_json::to_vec_pretty(&grid.sidecar())?;
        write_atomic(path, &json)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrogram::{SpectrogramLevel, SpectrogramOptions, SpectrogramSidecar};
    use crate::time::{MissingRuns, Period, TimeGrid};

    fn level(level: usize, secs: u64, norms: Vec<f32>, missing: MissingRuns) -> SpectrogramLevel {
        SpectrogramLevel {
            level,
            label: format!("{secs} s"),
            grid: TimeGrid::new(0, Period::from_secs(secs).unwrap(), norms.len()),
            norms,
            missing,
        }
    }

    #[test]
    fn endpoints_of_the_scale() {
        let g = SpectrogramGrid::new(
            vec![level(1, 1, vec![0.0, 99.0], MissingRuns::new())],
            SpectrogramOptions::default(),
        );
        let opts = HeatmapOptions {
            width: 2,
            row_height: 1,
            ..Default::default()
        };
        let img = render_heatmap(&g, &opts).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, color_at(0.0));
        assert_eq!(img.get_pixel(1, 0).0, color_at(1.0));
    }

    #[test]
    fn all_missing_is_reserved_color() {
        let g = SpectrogramGrid::new(
            vec![level(1, 1, vec![0.0; 4], MissingRuns::from_ranges([0..4]))],
            SpectrogramOptions::default(),
        );
        let img = render_heatmap(&g, &HeatmapOptions { width: 8, row_height: 2, ..Default::default() }).unwrap();
        assert!(img.pixels().all(|p| p.0 == MISSING_COLOR));
    }

    #[test]
    fn coarse_rows_on_top_with_wide_tiles() {
        let g = SpectrogramGrid::new(
            vec![
                level(1, 1, vec![0.0, 9.0, 0.0, 9.0], MissingRuns::new()),
                level(2, 2, vec![0.0, 99.0], MissingRuns::new()),
            ],
            SpectrogramOptions::default(),
        );
        let img = render_heatmap(&g, &HeatmapOptions { width: 4, row_height: 1, ..Default::default() }).unwrap();
        assert_eq!(img.height(), 2);
        // Row 0 is level 2: each tile spans two columns.
        assert_eq!(img.get_pixel(0, 0), img.get_pixel(1, 0));
        assert_eq!(img.get_pixel(2, 0).0, color_at(1.0));
        assert_eq!(img.get_pixel(1, 1).0, color_at(0.5));
        #[allow(clippy::reversed_empty_ranges)]
        let reversed = 2..=1;
        assert!(render_heatmap(&g, &HeatmapOptions { levels: Some(reversed), ..Default::default() }).is_err());
    }

    #[test]
    fn sidecar_written() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpectrogramGrid::new(
            vec![level(1, 1, vec![1.0, 2.0], MissingRuns::from_ranges([1..2]))],
            SpectrogramOptions::default(),
        );
        let png = dir.path().join("s.png");
        let json = dir.path().join("spectrogram.json");
        export_heatmap(&g, &HeatmapOptions::default(), Some(&png), Some(&json)).unwrap();
        assert!(image::open(&png).is_ok());
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
        assert_eq!(v["norm"], "l2");
        assert_eq!(v["epsilon"], 1.0);
        assert_eq!(v["levels"][0]["period_ns"], 1e9);
        assert_eq!(v["levels"][0]["missing"], serde_json::json!([[1, 2]]));
        let back: SpectrogramSidecar = serde_json::from_value(v).unwrap();
        assert_eq!(back, g.sidecar());
    }
}
