//! A slow, fully materialized reference cascade.
//!
//! Each pixel's time series is run through textbook convolutions in f64,
//! sharing nothing with the streaming builder except the conventions:
//! clamped edges, window start `t - offset`, sample `k*s + phase` clamped to
//! the last frame, and level counts `ceil(n / s)`.

use crate::error::{Error, Result};
use crate::frame::{FrameSequence, SequenceKind};
use crate::pyramid::{Checksums, LaplacianEncoding, Pyramid, PyramidManifest, DEFAULT_CHUNK_SIZE};
use crate::schedule::LevelSchedule;
use crate::time::TimeGrid;

pub const ORACLE_MAX_FRAMES: usize = 100_000;
pub const ORACLE_MAX_PIXELS: usize = 32 * 32;

/// Integer taps, window offset and sampling phase for a stride.
fn conventions(stride: u8) -> Result<(Vec<f64>, usize, usize)> {
    let taps: Vec<f64> = match stride {
        2 => vec![1.0, 2.0, 2.0, 1.0],
        3 => vec![1.0, 2.0, 3.0, 2.0, 1.0],
        5 => vec![1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0, 2.0, 1.0],
        s => return Err(Error::UnsupportedStride(s as u32)),
    };
    let sum: f64 = taps.iter().sum();
    let (offset, phase) = match stride {
        2 => (1, 1),
        3 => (2, 1),
        _ => (4, 2),
    };
    Ok((taps.into_iter().map(|w| w / sum).collect(), offset, phase))
}

fn blur(x: &[f64], taps: &[f64], offset: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (j, w) in taps.iter().enumerate() {
                let i = (t + j as isize - offset as isize).clamp(0, n - 1);
                acc += w * x[i as usize];
            }
            acc
        })
        .collect()
}

/// Per-pixel cascade for one series: Gaussian levels 1..=N and Laplacian
/// levels 1..=N.
pub fn oracle_series(x: &[f64], strides: &[u8]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut gauss = Vec::new();
    let mut lap = Vec::new();
    let mut g = x.to_vec();
    for &s in strides {
        let (taps, offset, phase) = conventions(s)?;
        let s = s as usize;
        let n = g.len();
        let blurred = blur(&g, &taps, offset);
        let next: Vec<f64> = (0..n.div_ceil(s)).map(|k| blurred[(k * s + phase).min(n - 1)]).collect();
        let repeated: Vec<f64> = (0..n).map(|u| next[(u / s).min(next.len() - 1)]).collect();
        let up = blur(&repeated, &taps, offset);
        lap.push(g.iter().zip(&up).map(|(a, b)| a - b).collect());
        gauss.push(next.clone());
        g = next;
    }
    Ok((gauss, lap))
}

/// The pyramid of `input` under `schedule`, computed pixel by pixel.
pub fn oracle_pyramid(input: &FrameSequence, schedule: &LevelSchedule) -> Result<Pyramid> {
    let shape = input.shape();
    let n = input.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    if n > ORACLE_MAX_FRAMES || shape.pixels() > ORACLE_MAX_PIXELS {
        return Err(Error::OracleTooLarge(format!(
            "{n} frames of {shape}; limit {ORACLE_MAX_FRAMES} frames of {ORACLE_MAX_PIXELS} pixels"
        )));
    }
    if input.grid.period != schedule.base_period {
        return Err(Error::GridMismatch("input period differs from the schedule".into()));
    }
    let depth = schedule.depth();
    let mut grids = vec![input.grid.clone()];
    for &s in &schedule.strides {
        let (_, _, phase) = conventions(s)?;
        let next = grids.last().unwrap().subsampled(s as usize, phase)?;
        grids.push(next);
    }
    let mut gdata: Vec<Vec<f32>> = grids[1..].iter().map(|g| vec![0.0; g.count * shape.len()]).collect();
    let mut ldata: Vec<Vec<f32>> = grids[..depth].iter().map(|g| vec![0.0; g.count * shape.len()]).collect();

    let len = shape.len();
    for sample in 0..len {
        let series: Vec<f64> = (0..n)
            .map(|t| {
                if input.grid.missing.contains(t) {
                    0.0
                } else {
                    input.frame(t)[sample] as f64
                }
            })
            .collect();
        let (g, l) = oracle_series(&series, &schedule.strides)?;
        for (level, values) in g.iter().enumerate() {
            for (t, v) in values.iter().enumerate() {
                gdata[level][t * len + sample] = *v as f32;
            }
        }
        for (level, values) in l.iter().enumerate() {
            for (t, v) in values.iter().enumerate() {
                ldata[level][t * len + sample] = *v as f32;
            }
        }
    }

    let seqs = |data: Vec<Vec<f32>>, grids: &[TimeGrid], kind| {
        data.into_iter()
            .zip(grids)
            .map(|(d, g)| FrameSequence::new(g.clone(), kind, shape, d))
            .collect::<Result<Vec<_>>>()
    };
    let gaussian = seqs(gdata, &grids[1..], SequenceKind::Gaussian)?;
    let laplacian = seqs(ldata, &grids[..depth], SequenceKind::Laplacian)?;
    let manifest = PyramidManifest {
        schedule: schedule.clone(),
        shape,
        laplacian: grids[..depth].to_vec(),
        gaussian: grids,
        laplacian_encoding: LaplacianEncoding::F32,
        chunk_size: DEFAULT_CHUNK_SIZE,
        input_stored: false,
        checksums: Checksums {
            gaussian: vec![None; depth + 1],
            laplacian: vec![None; depth],
        },
        shards: None,
    };
    Ok(Pyramid {
        manifest,
        gaussian,
        laplacian,
    })
}
