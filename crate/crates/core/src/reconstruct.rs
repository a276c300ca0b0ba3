//! Reconstruction from the top Gaussian level down, re-adding a chosen set
//! of Laplacian levels:
//!
//! ```text
//! B = G[N]
//! for i in N..=k+1:  B = blur(upsample(B)) + W[i] * L[i]
//! ```
//!
//! With every `W[i] = 1` and `k = 0` the input comes back. Zeroing the lower
//! levels gives a smooth slow-motion of a coarse level.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frame::{FrameSequence, SequenceKind};
use crate::kernels::upsample_blur_to;
use crate::pyramid::{LevelReader, PyramidManifest};

/// Which Laplacian levels to add back. Bit `i - 1` is level `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DetailMask(Vec<bool>);

impl DetailMask {
    pub fn all(levels: usize) -> Self {
        DetailMask(vec![true; levels])
    }

    pub fn none(levels: usize) -> Self {
        DetailMask(vec![false; levels])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        DetailMask(bits)
    }

    /// Detail only above `level`.
    pub fn above(level: usize, levels: usize) -> Self {
        DetailMask((1..=levels).map(|l| l > level).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether Laplacian `level` (1-based) is added.
    pub fn get(&self, level: usize) -> bool {
        level >= 1 && self.0.get(level - 1).copied().unwrap_or(false)
    }

    /// Parses `all`, `none`, or a string of `0`/`1` with level 1 first, for a
    /// pyramid of `levels` levels.
    pub fn parse(text: &str, levels: usize) -> Result<Self> {
        match text.trim() {
            "all" => Ok(Self::all(levels)),
            "none" => Ok(Self::none(levels)),
            bits => {
                let mask: DetailMask = bits.parse()?;
                if mask.len() != levels {
                    return Err(Error::InvalidArgument(format!(
                        "detail mask has {} bits, pyramid has {levels} levels",
                        mask.len()
                    )));
                }
                Ok(mask)
            }
        }
    }
}

impl FromStr for DetailMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::InvalidArgument(format!("detail mask {s:?}: expected 0/1 digits"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(DetailMask)
    }
}

impl fmt::Display for DetailMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Pairs of (coarse, fine) ranges that are upsampled independently when
/// going from level `i` to the grid of Laplacian `i`.
fn upsample_segments(m: &PyramidManifest, i: usize) -> Result<Vec<(Range<usize>, Range<usize>)>> {
    match &m.shards {
        Some(sh) if i <= sh.merge_level => {
            let coarse = m.gaussian_segments(i)?;
            let fine = m.laplacian_segments(i)?;
            Ok(coarse.into_iter().zip(fine).collect())
        }
        _ => Ok(vec![(0..m.gaussian_grid(i)?.count, 0..m.laplacian_grid(i)?.count)]),
    }
}

/// One cascade step: `B[i]` on the Gaussian grid of level `i` to the grid of
/// Laplacian `i`, adding the Laplacian when `detail` is set.
fn step_down(reader: &dyn LevelReader, b: &FrameSequence, i: usize, detail: bool) -> Result<FrameSequence> {
    let m = reader.manifest();
    let stride = m.schedule.strides[i - 1] as u32;
    let target = m.laplacian_grid(i)?.clone();
    let segments = upsample_segments(m, i)?;
    let mut out = if segments.len() == 1 {
        upsample_blur_to(b, stride, target)?
    } else {
        let mut out = FrameSequence::zeros(target, b.kind, b.shape());
        for (coarse, fine) in segments {
            if fine.is_empty() {
                continue;
            }
            let part = b.slice(coarse)?;
            let grid = out.grid.slice(fine.clone())?;
            let up = upsample_blur_to(&part, stride, grid)?;
            let len = b.shape().len();
            out.data_mut()[fine.start * len..fine.end * len].copy_from_slice(up.data());
        }
        out
    };
    if detail {
        let lap = reader.laplacian(i)?;
        if lap.len() != out.len() {
            return Err(Error::Manifest(format!(
                "laplacian level {i} has {} frames, expected {}",
                lap.len(),
                out.len()
            )));
        }
        for (o, &l) in out.data_mut().iter_mut().zip(lap.data()) {
            *o += l;
        }
    }
    Ok(out)
}

/// Re-inserts day frames that were left out above the merge level, taken
/// from the stored day-level Gaussian.
fn restore_dropped(reader: &dyn LevelReader, stitched: FrameSequence) -> Result<FrameSequence> {
    let m = reader.manifest();
    let Some(sh) = &m.shards else {
        return Ok(stitched);
    };
    let merge = sh.merge_level;
    if sh.dropped.is_empty() {
        let grid = m.gaussian_grid(merge)?.clone();
        return FrameSequence::new(grid, stitched.kind, stitched.shape(), stitched.into_data());
    }
    let stored = reader.gaussian(merge)?;
    let segments = m.gaussian_segments(merge)?;
    let len = stitched.shape().len();
    let mut out = FrameSequence::zeros(m.gaussian_grid(merge)?.clone(), stitched.kind, stitched.shape());
    let data = out.data_mut();
    let mut next = 0;
    for (idx, seg) in segments.iter().enumerate() {
        let dst = &mut data[seg.start * len..seg.end * len];
        if sh.dropped.binary_search(&idx).is_ok() {
            dst.copy_from_slice(&stored.data()[seg.start * len..seg.end * len]);
        } else {
            dst.copy_from_slice(&stitched.data()[next * len..(next + seg.len()) * len]);
            next += seg.len();
        }
    }
    Ok(out)
}

/// Runs the cascade from `start` (Gaussian level `from`) down to level `to`.
/// Slots flagged missing in the result are black.
pub fn cascade(
    reader: &dyn LevelReader,
    start: FrameSequence,
    from: usize,
    to: usize,
    mask: &DetailMask,
) -> Result<FrameSequence> {
    let m = reader.manifest();
    if from > m.depth() || to > from {
        return Err(Error::OutOfRange {
            what: "level",
            index: from.max(to),
            len: m.depth() + 1,
        });
    }
    let merge = m.shards.as_ref().map(|s| s.merge_level);
    let mut b = start;
    for i in (to + 1..=from).rev() {
        b = step_down(reader, &b, i, mask.get(i))?;
        if merge == Some(i - 1) {
            b = restore_dropped(reader, b)?;
        }
    }
    b.kind = SequenceKind::Gaussian;
    let len = b.shape().len();
    let runs = b.grid.missing.runs().to_vec();
    let data = b.data_mut();
    for (a, e) in runs {
        data[a * len..e * len].fill(0.0);
    }
    Ok(b)
}

/// Reconstructs Gaussian level `k` from the top level and the Laplacian
/// levels selected by `mask`.
pub fn reconstruct(reader: &dyn LevelReader, k: usize, mask: &DetailMask) -> Result<FrameSequence> {
    let n = reader.manifest().depth();
    if n == 0 || k >= n {
        return Err(Error::OutOfRange {
            what: "level",
            index: k,
            len: n,
        });
    }
    if mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "detail mask has {} bits, pyramid has {n} levels",
            mask.len()
        )));
    }
    let top = reader.gaussian(n)?.into_owned();
    cascade(reader, top, n, k, mask)
}

/// Level `i` played at the frame rate of level `i - j`, interpolated by the
/// blur cascade with no detail added.
pub fn smooth_upsample(reader: &dyn LevelReader, i: usize, j: usize) -> Result<FrameSequence> {
    let n = reader.manifest().depth();
    if i > n || j > i {
        return Err(Error::OutOfRange {
            what: "level",
            index: i,
            len: n + 1,
        });
    }
    let start = reader.gaussian(i)?.into_owned();
    cascade(reader, start, i, i - j, &DetailMask::none(n))
}
