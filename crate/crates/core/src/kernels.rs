//! Temporal blur kernels and the filter/subsample/upsample primitives.
//!
//! Conventions shared by construction and reconstruction:
//!
//! * Out-of-range taps are clamped to the nearest valid frame (edge
//!   replication), so constant sequences stay exactly constant.
//! * Odd kernels are centred on the output frame. The 4-tap stride-2 kernel
//!   covers `[t-1, t+2]`, centre of mass between `t` and `t+1`.
//! * Subsampling keeps frame `k*s + phase` with phase 1 for stride 2 and
//!   `(s-1)/2` otherwise; the last index is clamped to `len-1`, so a level of
//!   `n` frames always yields `ceil(n/s)` frames.
//! * Missing slots are black frames and carry full weight.

use crate::error::{Error, Result};
use crate::frame::{FrameSequence, SequenceKind};
use crate::time::TimeGrid;

/// A normalized, symmetric 1-D blur kernel paired with its stride.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    stride: u32,
    taps: Vec<u32>,
    weights: Vec<f64>,
    offset: usize,
}

impl Kernel {
    pub fn stride(&self) -> usize {
        self.stride as usize
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integer tap weights before normalization.
    pub fn integer_taps(&self) -> &[u32] {
        &self.taps
    }

    pub fn taps(&self) -> usize {
        self.taps.len()
    }

    /// Frames before the output frame that the window reaches.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Frames after the output frame that the window reaches.
    pub fn reach(&self) -> usize {
        self.taps.len() - 1 - self.offset
    }

    /// Subsampling phase paired with this kernel.
    pub fn phase(&self) -> usize {
        if self.stride == 2 {
            1
        } else {
            (self.stride as usize - 1) / 2
        }
    }

    pub(crate) fn norm(&self) -> f32 {
        self.taps.iter().sum::<u32>() as f32
    }

    /// Clamped source index for tap `j` of output frame `t` in `[lo, hi)`.
    #[inline]
    pub(crate) fn tap_index(&self, t: usize, j: usize, lo: usize, hi: usize) -> usize {
        let raw = t as isize + j as isize - self.offset as isize;
        raw.clamp(lo as isize, hi as isize - 1) as usize
    }

    /// Sampled source index for coarse frame `k` of a level of `len` frames.
    #[inline]
    pub(crate) fn sample_index(&self, k: usize, len: usize) -> usize {
        (k * self.stride as usize + self.phase()).min(len - 1)
    }
}

pub fn kernel_for_stride(stride: u32) -> Result<Kernel> {
    let (taps, offset): (Vec<u32>, usize) = match stride {
        2 => (vec![1, 2, 2, 1], 1),
        3 => (vec![1, 2, 3, 2, 1], 2),
        5 => (vec![1, 2, 3, 4, 5, 4, 3, 2, 1], 4),
        other => return Err(Error::UnsupportedStride(other)),
    };
    let sum: u32 = taps.iter().sum();
    let weights = taps.iter().map(|&t| t as f64 / sum as f64).collect();
    Ok(Kernel {
        stride,
        taps,
        weights,
        offset,
    })
}

/// `out = sum_j taps[j] * frames[j] / norm`, accumulating integer-weighted
/// sums so integer-valued inputs are filtered exactly.
#[inline]
pub(crate) fn accumulate<'a>(
    out: &mut [f32],
    kernel: &Kernel,
    mut frame_at: impl FnMut(usize) -> &'a [f32],
) {
    out.fill(0.0);
    for (j, &w) in kernel.taps.iter().enumerate() {
        let src = frame_at(j);
        let w = w as f32;
        for (o, &v) in out.iter_mut().zip(src) {
            *o += w * v;
        }
    }
    let norm = kernel.norm();
    for o in out.iter_mut() {
        *o /= norm;
    }
}

/// Blurs each pixel's time series; output has the input's grid.
pub fn temporal_blur(seq: &FrameSequence, kernel: &Kernel) -> Result<FrameSequence> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = FrameSequence::zeros(seq.grid.clone(), seq.kind, seq.shape());
    for t in 0..n {
        accumulate(out.frame_mut(t), kernel, |j| seq.frame(kernel.tap_index(t, j, 0, n)));
    }
    Ok(out)
}

/// Keeps every `stride`-th frame at the stride's phase.
pub fn subsample(seq: &FrameSequence, stride: u32) -> Result<FrameSequence> {
    let kernel = kernel_for_stride(stride)?;
    let n = seq.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let grid = seq.grid.subsampled(stride as usize, kernel.phase())?;
    let mut out = FrameSequence::zeros(grid, SequenceKind::Gaussian, seq.shape());
    for k in 0..out.len() {
        out.frame_mut(k)
            .copy_from_slice(seq.frame(kernel.sample_index(k, n)));
    }
    Ok(out)
}

/// Repeats each frame `stride` times, then blurs with the stride's kernel.
/// Output length is `len * stride`.
pub fn upsample_blur(seq: &FrameSequence, stride: u32) -> Result<FrameSequence> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let period = seq
        .grid
        .period
        .checked_div(stride as u64)
        .ok_or_else(|| Error::InvalidArgument("period underflow".into()))?;
    let grid = TimeGrid::new(seq.grid.origin_ns, period, seq.len() * stride as usize);
    upsample_blur_to(seq, stride, grid)
}

/// Like [`upsample_blur`] but truncated (or edge-padded) to `target.count`
/// frames, the recorded length of the finer level.
pub fn upsample_blur_to(seq: &FrameSequence, stride: u32, target: TimeGrid) -> Result<FrameSequence> {
    let kernel = kernel_for_stride(stride)?;
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = target.count;
    let s = stride as usize;
    let last = seq.len() - 1;
    let mut out = FrameSequence::zeros(target, seq.kind, seq.shape());
    for t in 0..n {
        accumulate(out.frame_mut(t), &kernel, |j| {
            let u = kernel.tap_index(t, j, 0, n);
            seq.frame((u / s).min(last))
        });
    }
    Ok(out)
}
