//! On-disk pyramid layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/G/<level>/chunk_NNNN.raw   8-bit Gaussian frames
//! <root>/L/<level>/chunk_NNNN.raw   Laplacian frames, f32 LE or i16 LE
//! ```
//!
//! Chunks are headerless planar frames in slot order; slot `i` lives in
//! chunk `i / chunk_size` at frame offset `i % chunk_size`. Each level
//! carries an xxh64 checksum of its chunk bytes in slot order.

use std::borrow::Cow;
use std::collections::VecDeque;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use xxhash_rust::xxh64::Xxh64;

use crate::builder::PyramidSink;
use crate::error::{Error, Result};
use crate::frame::{quantize_u8, FrameSequence, FrameSource, SequenceKind, Shape};
use crate::fsutil::{create_dir_all, write_atomic};
use crate::pyramid::{LaplacianEncoding, LevelReader, Pyramid, PyramidManifest, DEFAULT_CHUNK_SIZE};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Which half of the pyramid a level belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    Gaussian,
    Laplacian,
}

impl Plane {
    pub fn dir(&self) -> &'static str {
        match self {
            Plane::Gaussian => "G",
            Plane::Laplacian => "L",
        }
    }

    pub fn kind(&self) -> SequenceKind {
        match self {
            Plane::Gaussian => SequenceKind::Gaussian,
            Plane::Laplacian => SequenceKind::Laplacian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreLayout {
    pub chunk_size: usize,
    pub laplacian_encoding: LaplacianEncoding,
}

impl Default for StoreLayout {
    fn default() -> Self {
        StoreLayout {
            chunk_size: DEFAULT_CHUNK_SIZE,
            laplacian_encoding: LaplacianEncoding::F32,
        }
    }
}

impl StoreLayout {
    pub fn of(manifest: &PyramidManifest) -> Self {
        StoreLayout {
            chunk_size: manifest.chunk_size,
            laplacian_encoding: manifest.laplacian_encoding,
        }
    }

    pub fn sample_bytes(&self, plane: Plane) -> usize {
        match plane {
            Plane::Gaussian => 1,
            Plane::Laplacian => self.laplacian_encoding.bytes_per_sample(),
        }
    }
}

/// Root-relative path of a chunk, e.g. `L/3/chunk_0007.raw`.
pub fn chunk_rel_path(plane: Plane, level: usize, chunk: usize) -> String {
    format!("{}/{level}/chunk_{chunk:04}.raw", plane.dir())
}

pub fn checksum_hex(hash: u64) -> String {
    format!("{hash:016x}")
}

fn encode_into(plane: Plane, enc: LaplacianEncoding, values: &[f32], out: &mut Vec<u8>) {
    match (plane, enc) {
        (Plane::Gaussian, _) => out.extend(values.iter().map(|&v| quantize_u8(v))),
        (Plane::Laplacian, LaplacianEncoding::F32) => {
            for &v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        (Plane::Laplacian, LaplacianEncoding::I16) => {
            for &v in values {
                let q = v.round_ties_even().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
    }
}

fn decode_into(plane: Plane, enc: LaplacianEncoding, bytes: &[u8], out: &mut [f32]) {
    match (plane, enc) {
        (Plane::Gaussian, _) => {
            for (o, &b) in out.iter_mut().zip(bytes) {
                *o = b as f32;
            }
        }
        (Plane::Laplacian, LaplacianEncoding::F32) => {
            for (o, b) in out.iter_mut().zip(bytes.chunks_exact(4)) {
                *o = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        (Plane::Laplacian, LaplacianEncoding::I16) => {
            for (o, b) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                *o = i16::from_le_bytes([b[0], b[1]]) as f32;
            }
        }
    }
}

/// Appends frames of one level, writing each chunk once it is full.
pub struct ChunkWriter {
    root: PathBuf,
    plane: Plane,
    level: usize,
    layout: StoreLayout,
    frame_bytes: usize,
    buf: Vec<u8>,
    chunk: usize,
    frames: usize,
    hasher: Xxh64,
}

impl ChunkWriter {
    /// Starts a level, discarding any chunks a previous run left there.
    pub fn create(root: &Path, plane: Plane, level: usize, layout: StoreLayout, frame_len: usize) -> Result<Self> {
        if layout.chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk size must be positive".into()));
        }
        let dir = root.join(plane.dir()).join(level.to_string());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        create_dir_all(&dir)?;
        Ok(ChunkWriter {
            root: root.to_path_buf(),
            plane,
            level,
            layout,
            frame_bytes: frame_len * layout.sample_bytes(plane),
            buf: Vec::new(),
            chunk: 0,
            frames: 0,
            hasher: Xxh64::new(0),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn push(&mut self, values: &[f32]) -> Result<()> {
        encode_into(self.plane, self.layout.laplacian_encoding, values, &mut self.buf);
        self.frames += 1;
        if self.buf.len() == self.layout.chunk_size * self.frame_bytes {
            self.flush()?;
        }
        Ok(())
    }

    /// Appends already-encoded whole frames.
    pub fn push_encoded(&mut self, mut bytes: &[u8]) -> Result<()> {
        if !bytes.len().is_multiple_of(self.frame_bytes) {
            return Err(Error::InvalidArgument("encoded bytes are not whole frames".into()));
        }
        let chunk_bytes = self.layout.chunk_size * self.frame_bytes;
        while !bytes.is_empty() {
            let take = (chunk_bytes - self.buf.len()).min(bytes.len());
            self.buf.extend_from_slice(&bytes[..take]);
            self.frames += take / self.frame_bytes;
            bytes = &bytes[take..];
            if self.buf.len() == chunk_bytes {
                self.flush()?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        self.hasher.update(&self.buf);
        let path = self.root.join(chunk_rel_path(self.plane, self.level, self.chunk));
        write_atomic(&path, &self.buf)?;
        self.buf.clear();
        self.chunk += 1;
        Ok(())
    }

    /// Writes the final short chunk and returns the level checksum.
    pub fn finish(mut self) -> Result<String> {
        self.flush()?;
        Ok(checksum_hex(self.hasher.digest()))
    }
}

/// Streams builder output straight into chunk files.
pub struct StoreSink {
    first_level: usize,
    gaussian: Vec<ChunkWriter>,
    laplacian: Vec<ChunkWriter>,
}

impl StoreSink {
    /// Writers for levels `first_level + 1 ..= first_level + levels`.
    pub fn create(root: &Path, first_level: usize, levels: usize, layout: StoreLayout, frame_len: usize) -> Result<Self> {
        let make = |plane| {
            (first_level + 1..=first_level + levels)
                .map(|l| ChunkWriter::create(root, plane, l, layout, frame_len))
                .collect::<Result<Vec<_>>>()
        };
        Ok(StoreSink {
            first_level,
            gaussian: make(Plane::Gaussian)?,
            laplacian: make(Plane::Laplacian)?,
        })
    }

    /// Per-level Gaussian and Laplacian checksums.
    pub fn finish(self) -> Result<(Vec<String>, Vec<String>)> {
        let g = self.gaussian.into_iter().map(ChunkWriter::finish).collect::<Result<_>>()?;
        let l = self.laplacian.into_iter().map(ChunkWriter::finish).collect::<Result<_>>()?;
        Ok((g, l))
    }

    fn writer(list: &mut [ChunkWriter], first: usize, level: usize) -> Result<&mut ChunkWriter> {
        let n = list.len();
        list.get_mut(level.wrapping_sub(first + 1)).ok_or(Error::OutOfRange {
            what: "level",
            index: level,
            len: first + n + 1,
        })
    }
}

impl PyramidSink for StoreSink {
    fn gaussian(&mut self, level: usize, slot: usize, frame: &[f32]) -> Result<()> {
        let w = Self::writer(&mut self.gaussian, self.first_level, level)?;
        debug_assert_eq!(w.frames(), slot);
        w.push(frame)
    }

    fn laplacian(&mut self, level: usize, slot: usize, frame: &[f32]) -> Result<()> {
        let w = Self::writer(&mut self.laplacian, self.first_level, level)?;
        debug_assert_eq!(w.frames(), slot);
        w.push(frame)
    }
}

/// Raw bytes of one stored chunk, checked against its expected length.
pub(crate) fn read_chunk(
    root: &Path,
    plane: Plane,
    level: usize,
    chunk: usize,
    layout: StoreLayout,
    frame_bytes: usize,
    count: usize,
) -> Result<Vec<u8>> {
    let rel = chunk_rel_path(plane, level, chunk);
    let path = root.join(&rel);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingChunk { path: rel }),
        Err(e) => return Err(Error::io(path, e)),
    };
    let start = chunk * layout.chunk_size;
    let end = (start + layout.chunk_size).min(count);
    let want = (end - start) * frame_bytes;
    if bytes.len() != want {
        return Err(Error::CorruptChunk {
            path: rel,
            level,
            start,
            end,
            detail: format!("expected {want} bytes, found {}", bytes.len()),
        });
    }
    Ok(bytes)
}

/// One stored level as a random-access frame source. Recently used chunks
/// are kept in a small cache, so sequential reads touch each file once.
pub struct LevelSource {
    root: PathBuf,
    plane: Plane,
    level: usize,
    layout: StoreLayout,
    shape: Shape,
    count: usize,
    cache: Mutex<VecDeque<(usize, Arc<Vec<u8>>)>>,
}

const CACHED_CHUNKS: usize = 8;

impl LevelSource {
    pub fn new(root: &Path, plane: Plane, level: usize, layout: StoreLayout, shape: Shape, count: usize) -> Self {
        LevelSource {
            root: root.to_path_buf(),
            plane,
            level,
            layout,
            shape,
            count,
            cache: Mutex::new(VecDeque::new()),
        }
    }

    fn frame_bytes(&self) -> usize {
        self.shape.len() * self.layout.sample_bytes(self.plane)
    }

    fn chunk(&self, idx: usize) -> Result<Arc<Vec<u8>>> {
        {
            let cache = self.cache.lock().expect("chunk cache poisoned");
            if let Some((_, c)) = cache.iter().find(|(i, _)| *i == idx) {
                return Ok(Arc::clone(c));
            }
        }
        let bytes = Arc::new(read_chunk(
            &self.root,
            self.plane,
            self.level,
            idx,
            self.layout,
            self.frame_bytes(),
            self.count,
        )?);
        let mut cache = self.cache.lock().expect("chunk cache poisoned");
        if cache.len() == CACHED_CHUNKS {
            cache.pop_front();
        }
        cache.push_back((idx, Arc::clone(&bytes)));
        Ok(bytes)
    }

    /// Encoded bytes of `slot`.
    pub fn read_encoded(&self, slot: usize, out: &mut Vec<u8>) -> Result<()> {
        if slot >= self.count {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: self.count,
            });
        }
        let fb = self.frame_bytes();
        let chunk = self.chunk(slot / self.layout.chunk_size)?;
        let off = (slot % self.layout.chunk_size) * fb;
        out.extend_from_slice(&chunk[off..off + fb]);
        Ok(())
    }

    pub fn read_range(&self, range: Range<usize>) -> Result<Vec<f32>> {
        let len = self.shape.len();
        let mut out = vec![0.0; range.len() * len];
        for (i, slot) in range.enumerate() {
            self.read_frame(slot, &mut out[i * len..(i + 1) * len])?;
        }
        Ok(out)
    }
}

impl FrameSource for LevelSource {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn len(&self) -> usize {
        self.count
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        if slot >= self.count {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: self.count,
            });
        }
        let fb = self.frame_bytes();
        let chunk = self.chunk(slot / self.layout.chunk_size)?;
        let off = (slot % self.layout.chunk_size) * fb;
        decode_into(self.plane, self.layout.laplacian_encoding, &chunk[off..off + fb], out);
        Ok(())
    }
}

/// A pyramid root opened for reading.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    manifest: PyramidManifest,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = PyramidManifest::from_json(&text)?;
        Ok(Store { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &PyramidManifest {
        &self.manifest
    }

    pub fn layout(&self) -> StoreLayout {
        StoreLayout::of(&self.manifest)
    }

    fn count(&self, plane: Plane, level: usize) -> Result<usize> {
        match plane {
            Plane::Gaussian => {
                if level == 0 && !self.manifest.input_stored {
                    return Err(Error::Manifest("level 0 is not stored in this pyramid".into()));
                }
                Ok(self.manifest.gaussian_grid(level)?.count)
            }
            Plane::Laplacian => Ok(self.manifest.laplacian_grid(level)?.count),
        }
    }

    pub fn grid(&self, plane: Plane, level: usize) -> Result<&crate::time::TimeGrid> {
        match plane {
            Plane::Gaussian => self.manifest.gaussian_grid(level),
            Plane::Laplacian => self.manifest.laplacian_grid(level),
        }
    }

    pub fn source(&self, plane: Plane, level: usize) -> Result<LevelSource> {
        let count = self.count(plane, level)?;
        Ok(LevelSource::new(&self.root, plane, level, self.layout(), self.manifest.shape, count))
    }

    fn chunk_count(&self, plane: Plane, level: usize) -> Result<usize> {
        Ok(self.count(plane, level)?.div_ceil(self.manifest.chunk_size))
    }

    /// Whether every chunk file of a level is present.
    pub fn level_available(&self, plane: Plane, level: usize) -> bool {
        match self.chunk_count(plane, level) {
            Ok(n) => (0..n).all(|c| self.root.join(chunk_rel_path(plane, level, c)).is_file()),
            Err(_) => false,
        }
    }

    fn expected_checksum(&self, plane: Plane, level: usize) -> Option<&str> {
        let c = &self.manifest.checksums;
        let entry = match plane {
            Plane::Gaussian => c.gaussian.get(level),
            Plane::Laplacian => c.laplacian.get(level.wrapping_sub(1)),
        };
        entry.and_then(|e| e.as_deref())
    }

    /// Reads a whole level, verifying its checksum.
    pub fn read_level(&self, plane: Plane, level: usize) -> Result<FrameSequence> {
        let count = self.count(plane, level)?;
        let layout = self.layout();
        let shape = self.manifest.shape;
        let frame_bytes = shape.len() * layout.sample_bytes(plane);
        let mut hasher = Xxh64::new(0);
        let mut data = vec![0.0f32; count * shape.len()];
        for c in 0..self.chunk_count(plane, level)? {
            let bytes = read_chunk(&self.root, plane, level, c, layout, frame_bytes, count)?;
            hasher.update(&bytes);
            let start = c * layout.chunk_size * shape.len();
            let n = bytes.len() / layout.sample_bytes(plane);
            decode_into(plane, layout.laplacian_encoding, &bytes, &mut data[start..start + n]);
        }
        if let Some(expected) = self.expected_checksum(plane, level) {
            let actual = checksum_hex(hasher.digest());
            if actual != expected {
                return Err(Error::Checksum {
                    what: format!("{}/{level}", plane.dir()),
                    expected: expected.to_string(),
                    actual,
                });
            }
        }
        let kind = if level == 0 && plane == Plane::Gaussian {
            SequenceKind::Input
        } else {
            plane.kind()
        };
        FrameSequence::new(self.grid(plane, level)?.clone(), kind, shape, data)
    }

    /// Decoded values of one frame, reading only that frame's bytes.
    pub fn read_frame(&self, plane: Plane, level: usize, slot: usize) -> Result<Vec<f32>> {
        use std::io::{Read, Seek, SeekFrom};

        let count = self.count(plane, level)?;
        if slot >= count {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: count,
            });
        }
        let layout = self.layout();
        let shape = self.manifest.shape;
        let fb = shape.len() * layout.sample_bytes(plane);
        let chunk = slot / layout.chunk_size;
        let rel = chunk_rel_path(plane, level, chunk);
        let path = self.root.join(&rel);
        let mut file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingChunk { path: rel }),
            Err(e) => return Err(Error::io(path, e)),
        };
        let start = chunk * layout.chunk_size;
        let end = (start + layout.chunk_size).min(count);
        let want = ((end - start) * fb) as u64;
        let found = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if found != want {
            return Err(Error::CorruptChunk {
                path: rel,
                level,
                start,
                end,
                detail: format!("expected {want} bytes, found {found}"),
            });
        }
        let mut bytes = vec![0u8; fb];
        file.seek(SeekFrom::Start(((slot - start) * fb) as u64))
            .and_then(|_| file.read_exact(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        let mut out = vec![0.0; shape.len()];
        decode_into(plane, layout.laplacian_encoding, &bytes, &mut out);
        Ok(out)
    }

    /// Reads slots `range` of a level (no checksum verification).
    pub fn read_range(&self, plane: Plane, level: usize, range: Range<usize>) -> Result<FrameSequence> {
        let src = self.source(plane, level)?;
        let grid = self.grid(plane, level)?.slice(range.clone())?;
        let data = src.read_range(range)?;
        FrameSequence::new(grid, plane.kind(), self.manifest.shape, data)
    }

    /// Checks every stored level against its checksum.
    pub fn verify(&self) -> Result<()> {
        let start = if self.manifest.input_stored { 0 } else { 1 };
        for level in start..=self.manifest.depth() {
            self.read_level(Plane::Gaussian, level)?;
        }
        for level in 1..=self.manifest.depth() {
            self.read_level(Plane::Laplacian, level)?;
        }
        Ok(())
    }

    /// Bytes of all chunk files on disk.
    pub fn disk_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for plane in [Plane::Gaussian, Plane::Laplacian] {
            let dir = self.root.join(plane.dir());
            if !dir.exists() {
                continue;
            }
            for level in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let level = level.map_err(|e| Error::io(&dir, e))?.path();
                for f in fs::read_dir(&level).map_err(|e| Error::io(&level, e))? {
                    let f = f.map_err(|e| Error::io(&level, e))?;
                    if f.file_name().to_string_lossy().ends_with(".raw") {
                        total += f.metadata().map_err(|e| Error::io(f.path(), e))?.len();
                    }
                }
            }
        }
        Ok(total)
    }
}

impl LevelReader for Store {
    fn manifest(&self) -> &PyramidManifest {
        &self.manifest
    }

    fn gaussian(&self, level: usize) -> Result<Cow<'_, FrameSequence>> {
        self.read_level(Plane::Gaussian, level).map(Cow::Owned)
    }

    fn laplacian(&self, level: usize) -> Result<Cow<'_, FrameSequence>> {
        self.read_level(Plane::Laplacian, level).map(Cow::Owned)
    }

    fn laplacian_frames(&self, level: usize) -> Result<Box<dyn FrameSource + '_>> {
        Ok(Box::new(self.source(Plane::Laplacian, level)?))
    }
}

pub fn write_manifest(root: &Path, manifest: &PyramidManifest) -> Result<()> {
    manifest.validate()?;
    write_atomic(&root.join(MANIFEST_FILE), manifest.to_json()?.as_bytes())
}

fn write_level(root: &Path, plane: Plane, level: usize, layout: StoreLayout, seq: &FrameSequence) -> Result<String> {
    let mut w = ChunkWriter::create(root, plane, level, layout, seq.shape().len())?;
    for f in seq.frames() {
        w.push(f)?;
    }
    w.finish()
}

/// Writes an in-memory pyramid (and optionally its level-0 input) under
/// `root`, returning the manifest as written.
pub fn write_pyramid(
    pyramid: &Pyramid,
    root: &Path,
    layout: StoreLayout,
    input: Option<&FrameSequence>,
) -> Result<PyramidManifest> {
    let mut manifest = pyramid.manifest.clone();
    manifest.chunk_size = layout.chunk_size;
    manifest.laplacian_encoding = layout.laplacian_encoding;
    manifest.input_stored = input.is_some();
    let depth = manifest.depth();
    manifest.checksums.gaussian = vec![None; depth + 1];
    manifest.checksums.laplacian = vec![None; depth];
    if let Some(x) = input {
        if x.grid != manifest.gaussian[0] {
            return Err(Error::GridMismatch("input grid differs from the pyramid's level 0".into()));
        }
        manifest.checksums.gaussian[0] = Some(write_level(root, Plane::Gaussian, 0, layout, x)?);
    }
    for level in 1..=depth {
        manifest.checksums.gaussian[level] =
            Some(write_level(root, Plane::Gaussian, level, layout, pyramid.gaussian(level)?)?);
        manifest.checksums.laplacian[level - 1] =
            Some(write_level(root, Plane::Laplacian, level, layout, pyramid.laplacian(level)?)?);
    }
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Reads every stored level above 0 back into memory.
pub fn read_pyramid(root: &Path) -> Result<Pyramid> {
    let store = Store::open(root)?;
    let depth = store.manifest.depth();
    let gaussian = (1..=depth)
        .map(|l| store.read_level(Plane::Gaussian, l))
        .collect::<Result<Vec<_>>>()?;
    let laplacian = (1..=depth)
        .map(|l| store.read_level(Plane::Laplacian, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid {
        manifest: store.manifest,
        gaussian,
        laplacian,
    })
}
