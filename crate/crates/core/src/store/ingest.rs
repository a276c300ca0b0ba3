//! Level-0 ingestion: timestamped image files or raw frame streams are
//! snapped onto a uniform grid and written as the `G/0` level of a store.

use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use image::imageops::{resize, FilterType};
use image::DynamicImage;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::layout::{write_manifest, ChunkWriter, Plane, StoreLayout};
use crate::error::{Error, Result};
use crate::frame::Shape;
use crate::pyramid::PyramidManifest;
use crate::time::{parse_time, MissingRuns, Period, TimeGrid};

/// Where level-0 frames come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IngestSource {
    /// Image files whose names carry their capture time.
    ImageDirectory { dir: PathBuf, pattern: String },
    /// Back-to-back interleaved 8-bit frames of `shape`, one per slot,
    /// starting at the spec origin. `-` reads standard input.
    RawStream { path: PathBuf },
    /// A text file of `<time>\t<image path>` lines; time is integer
    /// nanoseconds or RFC 3339. Relative paths resolve against the list.
    ManifestList { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub source: IngestSource,
    pub period: Period,
    /// Time of slot 0; defaults to the earliest frame.
    #[serde(default)]
    pub origin_ns: Option<i64>,
    /// Largest accepted distance to a slot, as a fraction of the period.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Frame shape; defaults to the first decoded image.
    #[serde(default)]
    pub shape: Option<Shape>,
    #[serde(default)]
    pub grayscale: bool,
}

fn default_tolerance() -> f64 {
    0.5
}

impl IngestSpec {
    pub fn new(source: IngestSource, period: Period) -> Self {
        IngestSpec {
            source,
            period,
            origin_ns: None,
            tolerance: default_tolerance(),
            shape: None,
            grayscale: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "snap tolerance {} outside (0, 0.5]",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub grid: TimeGrid,
    pub shape: Shape,
    pub frames: usize,
    /// Frames that lost their slot to an earlier frame.
    pub duplicates: usize,
    /// Frames farther than the tolerance from any slot, or before slot 0.
    pub rejected: usize,
    pub resized: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Year,
    Month,
    Day,
    Hour,
    Minute,
    Second,
    Milli,
}

/// A compiled filename timestamp pattern.
///
/// Tokens are `YYYY`, `MM`, `DD`, `HH`, `SS` and `mmm`; everything else is
/// literal. `MM` means minutes when it follows `HH` and minutes are still
/// unassigned, and months otherwise. Patterns without a `.` match the file
/// stem; the others match the whole file name. Times are UTC.
#[derive(Debug, Clone)]
pub struct TimestampPattern {
    regex: Regex,
    fields: Vec<Field>,
}

impl TimestampPattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let ambiguous = |why: &str| Error::Ingest(format!("ambiguous timestamp pattern {pattern:?}: {why}"));
        let mut re = String::from("^");
        let mut fields = Vec::new();
        let mut rest = pattern;
        let mut seen_hour = false;
        while !rest.is_empty() {
            let (field, width, len) = if rest.starts_with("YYYY") {
                (Some(Field::Year), 4, 4)
            } else if rest.starts_with("mmm") {
                (Some(Field::Milli), 3, 3)
            } else if rest.starts_with("MM") {
                let f = if seen_hour && !fields.contains(&Field::Minute) {
                    Field::Minute
                } else if !fields.contains(&Field::Month) {
                    Field::Month
                } else {
                    return Err(ambiguous("MM cannot be read as month or minute"));
                };
                (Some(f), 2, 2)
            } else if rest.starts_with("DD") {
                (Some(Field::Day), 2, 2)
            } else if rest.starts_with("HH") {
                seen_hour = true;
                (Some(Field::Hour), 2, 2)
            } else if rest.starts_with("SS") {
                (Some(Field::Second), 2, 2)
            } else {
                (None, 0, rest.chars().next().map_or(1, char::len_utf8))
            };
            match field {
                Some(f) => {
                    if fields.contains(&f) {
                        return Err(ambiguous(&format!("{f:?} appears twice")));
                    }
                    fields.push(f);
                    re.push_str(&format!("(\\d{{{width}}})"));
                }
                None => re.push_str(&regex::escape(&rest[..len])),
            }
            rest = &rest[len..];
        }
        for need in [Field::Year, Field::Month, Field::Day] {
            if !fields.contains(&need) {
                return Err(ambiguous(&format!("no {need:?} field")));
            }
        }
        if fields.contains(&Field::Second) && !fields.contains(&Field::Minute) {
            return Err(ambiguous("seconds without minutes"));
        }
        if fields.contains(&Field::Minute) && !fields.contains(&Field::Hour) {
            return Err(ambiguous("minutes without hours"));
        }
        re.push('$');
        let regex = Regex::new(&re).map_err(|e| Error::Ingest(e.to_string()))?;
        Ok(TimestampPattern { regex, fields })
    }

    fn matches_whole_name(&self) -> bool {
        self.regex.as_str().contains("\\.")
    }

    /// The timestamp in ns encoded by `file_name`, if it matches.
    pub fn timestamp(&self, file_name: &str) -> Option<i64> {
        let subject = if self.matches_whole_name() {
            file_name
        } else {
            Path::new(file_name).file_stem()?.to_str()?
        };
        let caps = self.regex.captures(subject)?;
        let mut v = [0u32; 7];
        v[1] = 1;
        v[2] = 1;
        for (i, f) in self.fields.iter().enumerate() {
            let n: u32 = caps[i + 1].parse().ok()?;
            v[*f as usize] = n;
        }
        let date = NaiveDate::from_ymd_opt(v[0] as i32, v[1], v[2])?;
        let dt = date.and_hms_milli_opt(v[3], v[4], v[5], v[6])?;
        dt.and_utc().timestamp_nanos_opt()
    }
}

/// Slot nearest to `t`, if within `tolerance` periods and not before 0.
pub fn snap(origin_ns: i64, period: Period, tolerance: f64, t: i64) -> Option<usize> {
    let offset = t as i128 - origin_ns as i128;
    let (n, d) = (period.numer() as i128, period.denom() as i128);
    // Round half up: a frame exactly halfway goes to the later slot.
    let slot = (2 * offset * d + n).div_euclid(2 * n);
    if slot < 0 {
        return None;
    }
    let dist = (offset - period.offset(slot as u64)).unsigned_abs() as f64;
    (dist <= tolerance * period.as_nanos_f64()).then_some(slot as usize)
}

struct Timed {
    time: i64,
    path: PathBuf,
}

fn list_directory(dir: &Path, pattern: &str) -> Result<Vec<Timed>> {
    let pattern = TimestampPattern::parse(pattern)?;
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        match pattern.timestamp(name) {
            Some(time) => out.push(Timed { time, path: entry.path() }),
            None => log::debug!("skipping {name}: does not match the timestamp pattern"),
        }
    }
    Ok(out)
}

fn read_list(path: &Path) -> Result<Vec<Timed>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Ingest(format!("{}:{}: expected `<time>\\t<path>`", path.display(), n + 1));
        let (t, p) = line.split_once('\t').ok_or_else(bad)?;
        let time = parse_time(t.trim()).ok_or_else(bad)?;
        out.push(Timed {
            time,
            path: base.join(p.trim()),
        });
    }
    Ok(out)
}

/// Planar f32 samples of `img` at `shape`, resizing with nearest neighbour
/// when the dimensions differ. Returns whether a resize happened.
pub fn image_to_planar(img: &DynamicImage, shape: Shape, grayscale: bool) -> (Vec<f32>, bool) {
    let rgb = img.to_rgb8();
    let resized = rgb.width() != shape.width || rgb.height() != shape.height;
    let rgb = if resized {
        resize(&rgb, shape.width, shape.height, FilterType::Nearest)
    } else {
        rgb
    };
    let px = shape.pixels();
    let mut out = vec![0.0f32; shape.len()];
    for (p, pixel) in rgb.pixels().enumerate() {
        let [r, g, b] = pixel.0.map(f32::from);
        if grayscale || shape.channels == 1 {
            out[p] = 0.299 * r + 0.587 * g + 0.114 * b;
        } else {
            out[p] = r;
            out[px + p] = g;
            out[2 * px + p] = b;
        }
    }
    (out, resized)
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Ingest(format!("cannot decode {}: {e}", path.display())))
}

/// Ingests `spec` into `root`, writing `G/0` and an input-only manifest.
pub fn ingest(spec: &IngestSpec, root: &Path, layout: StoreLayout) -> Result<IngestReport> {
    spec.validate()?;
    match &spec.source {
        IngestSource::ImageDirectory { dir, pattern } => {
            let files = list_directory(dir, pattern)?;
            ingest_files(spec, files, root, layout)
        }
        IngestSource::ManifestList { path } => ingest_files(spec, read_list(path)?, root, layout),
        IngestSource::RawStream { path } => {
            if path.as_os_str() == "-" {
                ingest_raw(spec, std::io::stdin().lock(), root, layout)
            } else {
                let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                ingest_raw(spec, BufReader::new(f), root, layout)
            }
        }
    }
}

const DECODE_BATCH: usize = 64;

fn ingest_files(spec: &IngestSpec, mut files: Vec<Timed>, root: &Path, layout: StoreLayout) -> Result<IngestReport> {
    if files.is_empty() {
        return Err(Error::Ingest("no input frames found".into()));
    }
    files.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.path.cmp(&b.path)));
    let origin = spec.origin_ns.unwrap_or(files[0].time);

    let mut slots: Vec<(usize, &Timed)> = Vec::with_capacity(files.len());
    let (mut duplicates, mut rejected) = (0, 0);
    for f in &files {
        match snap(origin, spec.period, spec.tolerance, f.time) {
            None => {
                log::warn!("{}: no slot within tolerance, skipped", f.path.display());
                rejected += 1;
            }
            Some(s) => match slots.iter().rev().find(|(t, _)| *t == s) {
                Some((_, kept)) => {
                    log::warn!("{}: slot {s} already taken by {}", f.path.display(), kept.path.display());
                    duplicates += 1;
                }
                None => slots.push((s, f)),
            },
        }
    }
    // Ascending times snap to non-decreasing slots, so `slots` is sorted.
    let Some(&(last, _)) = slots.last() else {
        return Err(Error::Ingest("zero usable frames".into()));
    };
    let count = last + 1;

    let shape = match spec.shape {
        Some(s) => s,
        None => {
            let img = open_image(&slots[0].1.path)?;
            Shape::new(img.width(), img.height(), if spec.grayscale { 1 } else { 3 })?
        }
    };
    let mut present = vec![false; count];
    for &(s, _) in &slots {
        present[s] = true;
    }
    let missing = MissingRuns::from_mask(&present.iter().map(|p| !p).collect::<Vec<_>>());
    let grid = TimeGrid::new(origin, spec.period, count).with_missing(missing)?;

    let mut writer = ChunkWriter::create(root, Plane::Gaussian, 0, layout, shape.len())?;
    let black = vec![0.0f32; shape.len()];
    let mut next = 0;
    let mut resized = 0;
    for batch in slots.chunks(DECODE_BATCH) {
        let decoded = batch
            .par_iter()
            .map(|(_, f)| Ok(image_to_planar(&open_image(&f.path)?, shape, spec.grayscale)))
            .collect::<Result<Vec<_>>>()?;
        for (&(slot, f), (frame, was_resized)) in batch.iter().zip(decoded) {
            if was_resized {
                log::info!("{}: resized to {}x{}", f.path.display(), shape.width, shape.height);
                resized += 1;
            }
            while next < slot {
                writer.push(&black)?;
                next += 1;
            }
            writer.push(&frame)?;
            next += 1;
        }
    }
    finish(root, layout, grid, shape, writer, slots.len(), duplicates, rejected, resized)
}

fn ingest_raw(spec: &IngestSpec, mut input: impl Read, root: &Path, layout: StoreLayout) -> Result<IngestReport> {
    let shape = spec
        .shape
        .ok_or_else(|| Error::InvalidArgument("raw streams need an explicit frame shape".into()))?;
    let origin = spec.origin_ns.unwrap_or(0);
    let in_channels = shape.channels as usize;
    let out_shape = if spec.grayscale {
        Shape::gray(shape.width, shape.height)
    } else {
        shape
    };
    let mut writer = ChunkWriter::create(root, Plane::Gaussian, 0, layout, out_shape.len())?;
    let mut bytes = vec![0u8; shape.len()];
    let mut planar = vec![0.0f32; out_shape.len()];
    let px = shape.pixels();
    let mut frames = 0;
    loop {
        match read_full(&mut input, &mut bytes) {
            Ok(0) => break,
            Ok(n) if n < bytes.len() => {
                return Err(Error::Ingest(format!(
                    "raw stream ends with a partial frame ({n} of {} bytes)",
                    bytes.len()
                )))
            }
            Ok(_) => {}
            Err(e) => return Err(Error::Ingest(format!("reading raw stream: {e}"))),
        }
        for p in 0..px {
            let s = &bytes[p * in_channels..(p + 1) * in_channels];
            if spec.grayscale && in_channels == 3 {
                planar[p] = 0.299 * s[0] as f32 + 0.587 * s[1] as f32 + 0.114 * s[2] as f32;
            } else {
                for (c, &v) in s.iter().enumerate().take(out_shape.channels as usize) {
                    planar[c * px + p] = v as f32;
                }
            }
        }
        writer.push(&planar)?;
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Ingest("zero usable frames".into()));
    }
    let grid = TimeGrid::new(origin, spec.period, frames);
    finish(root, layout, grid, out_shape, writer, frames, 0, 0, 0)
}

fn read_full(input: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    root: &Path,
    layout: StoreLayout,
    grid: TimeGrid,
    shape: Shape,
    writer: ChunkWriter,
    frames: usize,
    duplicates: usize,
    rejected: usize,
    resized: usize,
) -> Result<IngestReport> {
    let checksum = writer.finish()?;
    let mut manifest = PyramidManifest::input_only(grid.clone(), shape)?;
    manifest.chunk_size = layout.chunk_size;
    manifest.laplacian_encoding = layout.laplacian_encoding;
    manifest.checksums.gaussian[0] = Some(checksum);
    write_manifest(root, &manifest)?;
    Ok(IngestReport {
        grid,
        shape,
        frames,
        duplicates,
        rejected,
        resized,
    })
}

/// Writes an in-memory level-0 sequence as a store root.
pub fn write_input(seq: &crate::frame::FrameSequence, root: &Path, layout: StoreLayout) -> Result<PyramidManifest> {
    let mut writer = ChunkWriter::create(root, Plane::Gaussian, 0, layout, seq.shape().len())?;
    for f in seq.frames() {
        writer.push(f)?;
    }
    let checksum = writer.finish()?;
    let mut manifest = PyramidManifest::input_only(seq.grid.clone(), seq.shape())?;
    manifest.chunk_size = layout.chunk_size;
    manifest.laplacian_encoding = layout.laplacian_encoding;
    manifest.checksums.gaussian[0] = Some(checksum);
    write_manifest(root, &manifest)?;
    Ok(manifest)
}
