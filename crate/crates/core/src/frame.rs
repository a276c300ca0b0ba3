use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::TimeGrid;

/// Spatial shape of every frame in a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

impl Shape {
    pub fn new(width: u32, height: u32, channels: u8) -> Result<Self> {
        if width == 0 || height == 0 || !matches!(channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "frame shape {width}x{height}x{channels} (channels must be 1 or 3)"
            )));
        }
        Ok(Shape {
            width,
            height,
            channels,
        })
    }

    pub fn gray(width: u32, height: u32) -> Self {
        Shape {
            width,
            height,
            channels: 1,
        }
    }

    /// Samples per frame.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Input,
    Gaussian,
    Laplacian,
}

impl SequenceKind {
    /// Valid sample range for this kind.
    pub fn value_range(&self) -> (f32, f32) {
        match self {
            SequenceKind::Input | SequenceKind::Gaussian => (0.0, 255.0),
            SequenceKind::Laplacian => (-255.0, 255.0),
        }
    }
}

/// One frame, stored planar (channel-major, then row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub shape: Shape,
    pub values: Vec<f32>,
}

impl Frame {
    pub fn new(shape: Shape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} samples", shape.len()),
                got: format!("{} samples", values.len()),
            });
        }
        Ok(Frame { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        Frame {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Frame {
            shape,
            values: vec![value; shape.len()],
        }
    }

    /// Planar frame from interleaved 8-bit samples (`RGBRGB...` or gray).
    pub fn from_interleaved_u8(shape: Shape, data: &[u8]) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bytes", shape.len()),
                got: format!("{} bytes", data.len()),
            });
        }
        let c = shape.channels as usize;
        let px = shape.pixels();
        let mut values = vec![0.0; shape.len()];
        for (p, chunk) in data.chunks_exact(c).enumerate() {
            for (ch, &v) in chunk.iter().enumerate() {
                values[ch * px + p] = v as f32;
            }
        }
        Ok(Frame { shape, values })
    }

    /// Interleaved 8-bit samples, clamped and rounded half-to-even.
    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        interleave_u8(self.shape, &self.values)
    }

    pub fn within_range(&self, kind: SequenceKind) -> bool {
        let (lo, hi) = kind.value_range();
        self.values.iter().all(|&v| (lo..=hi).contains(&v))
    }
}

/// Rounds to the nearest 8-bit value, ties to even, after clamping to [0, 255].
pub fn quantize_u8(v: f32) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

pub(crate) fn interleave_u8(shape: Shape, planar: &[f32]) -> Vec<u8> {
    let c = shape.channels as usize;
    let px = shape.pixels();
    let mut out = vec![0u8; shape.len()];
    for p in 0..px {
        for ch in 0..c {
            out[p * c + ch] = quantize_u8(planar[ch * px + p]);
        }
    }
    out
}

/// Ordered, random-access frames.
pub trait FrameSource: Send + Sync {
    fn shape(&self) -> Shape;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes frame `slot` into `out` (length `shape().len()`).
    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()>;
}

impl<T: FrameSource + ?Sized> FrameSource for &T {
    fn shape(&self) -> Shape {
        (**self).shape()
    }

    fn len(&self) -> usize {
        (**self).len()
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        (**self).read_frame(slot, out)
    }
}

/// A fully materialized frame sequence on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub grid: TimeGrid,
    pub kind: SequenceKind,
    shape: Shape,
    data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(grid: TimeGrid, kind: SequenceKind, shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid.count * shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} frames of {shape}", grid.count),
                got: format!("{} samples", data.len()),
            });
        }
        Ok(FrameSequence {
            grid,
            kind,
            shape,
            data,
        })
    }

    pub fn zeros(grid: TimeGrid, kind: SequenceKind, shape: Shape) -> Self {
        let data = vec![0.0; grid.count * shape.len()];
        FrameSequence {
            grid,
            kind,
            shape,
            data,
        }
    }

    pub fn from_frames(grid: TimeGrid, kind: SequenceKind, frames: &[Frame]) -> Result<Self> {
        let shape = frames.first().ok_or(Error::EmptySequence)?.shape;
        let mut data = Vec::with_capacity(frames.len() * shape.len());
        for f in frames {
            if f.shape != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_string(),
                    got: f.shape.to_string(),
                });
            }
            data.extend_from_slice(&f.values);
        }
        FrameSequence::new(grid, kind, shape, data)
    }

    /// Reads every frame of `source`, substituting black for missing slots.
    pub fn collect(source: &dyn FrameSource, grid: TimeGrid, kind: SequenceKind) -> Result<Self> {
        if source.len() != grid.count {
            return Err(Error::GridMismatch(format!(
                "source has {} frames, grid has {} slots",
                source.len(),
                grid.count
            )));
        }
        let shape = source.shape();
        let missing = grid.missing.clone();
        let mut seq = FrameSequence::zeros(grid, kind, shape);
        let filled = fill_missing(source, &missing);
        for i in 0..seq.len() {
            filled.read_frame(i, seq.frame_mut(i))?;
        }
        Ok(seq)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.grid.count
    }

    pub fn is_empty(&self) -> bool {
        self.grid.count == 0
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.shape.len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn to_frame(&self, i: usize) -> Frame {
        Frame {
            shape: self.shape,
            values: self.frame(i).to_vec(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.shape.len().max(1)).take(self.len())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Copy of the slots in `range` on the corresponding sub-grid.
    pub fn slice(&self, range: Range<usize>) -> Result<FrameSequence> {
        let grid = self.grid.slice(range.clone())?;
        let n = self.shape.len();
        Ok(FrameSequence {
            grid,
            kind: self.kind,
            shape: self.shape,
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    /// Largest absolute per-sample difference; `None` if shapes or lengths differ.
    pub fn max_abs_diff(&self, other: &FrameSequence) -> Option<f32> {
        if self.shape != other.shape || self.len() != other.len() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}

impl FrameSource for FrameSequence {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn len(&self) -> usize {
        self.grid.count
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        if slot >= self.len() {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: self.len(),
            });
        }
        out.copy_from_slice(self.frame(slot));
        Ok(())
    }
}

/// Frame provider that yields the all-black frame for missing slots and
/// defers to the wrapped source otherwise.
pub struct MissingFill<'a, S: ?Sized> {
    inner: &'a S,
    missing: &'a crate::time::MissingRuns,
}

pub fn fill_missing<'a, S: FrameSource + ?Sized>(
    inner: &'a S,
    missing: &'a crate::time::MissingRuns,
) -> MissingFill<'a, S> {
    MissingFill { inner, missing }
}

impl<S: FrameSource + ?Sized> FrameSource for MissingFill<'_, S> {
    fn shape(&self) -> Shape {
        self.inner.shape()
    }

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        if self.missing.contains(slot) {
            if slot >= self.len() {
                return Err(Error::OutOfRange {
                    what: "slot",
                    index: slot,
                    len: self.len(),
                });
            }
            out.fill(0.0);
            Ok(())
        } else {
            self.inner.read_frame(slot, out)
        }
    }
}

/// The frames `range` of another source, re-based to start at slot 0.
pub struct SlotWindow<'a, S: ?Sized> {
    inner: &'a S,
    start: usize,
    len: usize,
}

pub fn slot_window<S: FrameSource + ?Sized>(inner: &S, range: Range<usize>) -> Result<SlotWindow<'_, S>> {
    if range.start > range.end || range.end > inner.len() {
        return Err(Error::OutOfRange {
            what: "slot",
            index: range.end,
            len: inner.len(),
        });
    }
    Ok(SlotWindow {
        inner,
        start: range.start,
        len: range.len(),
    })
}

impl<S: FrameSource + ?Sized> FrameSource for SlotWindow<'_, S> {
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
        self.inner.read_frame(self.start + slot, out)
    }
}
