//! The pyramid container and its manifest.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSequence, FrameSource, Shape};
use crate::schedule::LevelSchedule;
use crate::time::{MissingRuns, Period, TimeGrid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianEncoding {
    /// Little-endian IEEE 754 single precision; exact.
    #[default]
    F32,
    /// Little-endian signed 16-bit, rounded half-to-even; error <= 0.5.
    I16,
}

impl LaplacianEncoding {
    pub fn bytes_per_sample(&self) -> usize {
        match self {
            LaplacianEncoding::F32 => 4,
            LaplacianEncoding::I16 => 2,
        }
    }
}

/// Day shards of a sharded build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardLayout {
    /// Level reached independently inside each shard (the day level).
    pub merge_level: usize,
    /// Level-0 slot range of each shard, in time order.
    pub bounds: Vec<(usize, usize)>,
    /// Shards left out of the levels above `merge_level`, ascending.
    pub dropped: Vec<usize>,
}

impl ShardLayout {
    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.bounds.len()).filter(|i| self.dropped.binary_search(i).is_err())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Checksums {
    /// One per Gaussian level 0..=N.
    pub gaussian: Vec<Option<String>>,
    /// One per Laplacian level 1..=N.
    pub laplacian: Vec<Option<String>>,
}

/// Everything needed to interpret a pyramid without reading frame data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidManifest {
    pub schedule: LevelSchedule,
    pub shape: Shape,
    /// Grids of Gaussian levels 0..=N.
    pub gaussian: Vec<TimeGrid>,
    /// Grids of Laplacian levels 1..=N (index `i - 1`).
    pub laplacian: Vec<TimeGrid>,
    pub laplacian_encoding: LaplacianEncoding,
    pub chunk_size: usize,
    /// Whether level-0 frames are stored alongside the pyramid.
    pub input_stored: bool,
    pub checksums: Checksums,
    pub shards: Option<ShardLayout>,
}

/// Storage byte counts implied by a manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteBudget {
    pub input: u64,
    pub gaussian: u64,
    pub laplacian: u64,
}

impl ByteBudget {
    pub fn total(&self) -> u64 {
        self.input + self.gaussian + self.laplacian
    }
}

pub const DEFAULT_CHUNK_SIZE: usize = 1024;

impl PyramidManifest {
    /// A manifest describing only a stored level-0 sequence.
    pub fn input_only(grid: TimeGrid, shape: Shape) -> Result<Self> {
        let schedule = LevelSchedule::from_strides(grid.period, Vec::new())?;
        Ok(PyramidManifest {
            schedule,
            shape,
            gaussian: vec![grid],
            laplacian: Vec::new(),
            laplacian_encoding: LaplacianEncoding::default(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            input_stored: true,
            checksums: Checksums {
                gaussian: vec![None],
                laplacian: Vec::new(),
            },
            shards: None,
        })
    }

    pub fn depth(&self) -> usize {
        self.schedule.depth()
    }

    pub fn gaussian_grid(&self, level: usize) -> Result<&TimeGrid> {
        self.gaussian.get(level).ok_or(Error::OutOfRange {
            what: "gaussian level",
            index: level,
            len: self.gaussian.len(),
        })
    }

    /// Grid of Laplacian level `level` (1-based).
    pub fn laplacian_grid(&self, level: usize) -> Result<&TimeGrid> {
        level
            .checked_sub(1)
            .and_then(|i| self.laplacian.get(i))
            .ok_or(Error::OutOfRange {
                what: "laplacian level",
                index: level,
                len: self.laplacian.len() + 1,
            })
    }

    pub fn level_period(&self, level: usize) -> Result<Period> {
        self.schedule.level_period(level)
    }

    /// Independently filtered segments of Gaussian `level`; filters clamp at
    /// segment edges.
    pub fn gaussian_segments(&self, level: usize) -> Result<Vec<Range<usize>>> {
        let grid = self.gaussian_grid(level)?;
        match &self.shards {
            Some(sh) if level <= sh.merge_level => {
                let mut out = Vec::with_capacity(sh.bounds.len());
                let mut start = 0;
                for &(a, b) in &sh.bounds {
                    let mut len = b - a;
                    for &s in &self.schedule.strides[..level] {
                        len = len.div_ceil(s as usize);
                    }
                    out.push(start..start + len);
                    start += len;
                }
                Ok(out)
            }
            _ => Ok(vec![0..grid.count]),
        }
    }

    /// Segments of Laplacian `level` (1-based).
    pub fn laplacian_segments(&self, level: usize) -> Result<Vec<Range<usize>>> {
        let grid = self.laplacian_grid(level)?;
        match &self.shards {
            Some(sh) if level <= sh.merge_level => self.gaussian_segments(level - 1),
            _ => Ok(vec![0..grid.count]),
        }
    }

    pub fn predicted_bytes(&self) -> ByteBudget {
        let frame = self.shape.len() as u64;
        let input = if self.input_stored {
            self.gaussian[0].count as u64 * frame
        } else {
            0
        };
        let gaussian = self.gaussian[1..].iter().map(|g| g.count as u64 * frame).sum();
        let per = self.laplacian_encoding.bytes_per_sample() as u64;
        let laplacian = self.laplacian.iter().map(|g| g.count as u64 * frame * per).sum();
        ByteBudget {
            input,
            gaussian,
            laplacian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depth();
        if self.gaussian.len() != n + 1 || self.laplacian.len() != n {
            return Err(Error::Manifest(format!(
                "{} strides but {} gaussian and {} laplacian grids",
                n,
                self.gaussian.len(),
                self.laplacian.len()
            )));
        }
        if self.checksums.gaussian.len() != n + 1 || self.checksums.laplacian.len() != n {
            return Err(Error::Manifest("checksum list lengths do not match levels".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Manifest("chunk_size must be positive".into()));
        }
        for g in self.gaussian.iter().chain(&self.laplacian) {
            g.missing
                .validate(g.count)
                .map_err(|e| Error::Manifest(e.to_string()))?;
        }
        if self.shards.is_none() {
            for (i, &s) in self.schedule.strides.iter().enumerate() {
                let want = self.gaussian[i].count.div_ceil(s as usize);
                if self.gaussian[i + 1].count != want {
                    return Err(Error::Manifest(format!(
                        "level {} has {} frames, expected ceil({}/{s}) = {want}",
                        i + 1,
                        self.gaussian[i + 1].count,
                        self.gaussian[i].count
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ManifestFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// On-disk `manifest.json`. Field names are a format contract.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    origin_ns: i64,
    base_period_ns: u64,
    #[serde(default = "one")]
    base_period_den: u64,
    width: u32,
    height: u32,
    channels: u8,
    strides: Vec<u8>,
    labels: Vec<String>,
    day_level: Option<usize>,
    year_level: Option<usize>,
    counts: Vec<usize>,
    missing: Vec<MissingRuns>,
    laplacian_counts: Vec<usize>,
    laplacian_missing: Vec<MissingRuns>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    gaussian_times: BTreeMap<String, Vec<i64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    laplacian_times: BTreeMap<String, Vec<i64>>,
    gaussian_encoding: String,
    laplacian_encoding: LaplacianEncoding,
    chunk_size: usize,
    input_stored: bool,
    checksums: ChecksumFile,
    shards: Option<ShardLayout>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChecksumFile {
    gaussian: Vec<Option<String>>,
    laplacian: Vec<Option<String>>,
}

fn one() -> u64 {
    1
}

impl From<&PyramidManifest> for ManifestFile {
    fn from(m: &PyramidManifest) -> Self {
        let times = |grids: &[TimeGrid], first_level: usize| {
            grids
                .iter()
                .enumerate()
                .filter_map(|(i, g)| {
                    g.times
                        .as_ref()
                        .map(|t| ((i + first_level).to_string(), t.clone()))
                })
                .collect()
        };
        ManifestFile {
            schema_version: SCHEMA_VERSION,
            origin_ns: m.gaussian[0].origin_ns,
            base_period_ns: m.schedule.base_period.numer(),
            base_period_den: m.schedule.base_period.denom(),
            width: m.shape.width,
            height: m.shape.height,
            channels: m.shape.channels,
            strides: m.schedule.strides.clone(),
            labels: m.schedule.labels.clone(),
            day_level: m.schedule.day_level,
            year_level: m.schedule.year_level,
            counts: m.gaussian.iter().map(|g| g.count).collect(),
            missing: m.gaussian.iter().map(|g| g.missing.clone()).collect(),
            laplacian_counts: m.laplacian.iter().map(|g| g.count).collect(),
            laplacian_missing: m.laplacian.iter().map(|g| g.missing.clone()).collect(),
            gaussian_times: times(&m.gaussian, 0),
            laplacian_times: times(&m.laplacian, 1),
            gaussian_encoding: "u8".into(),
            laplacian_encoding: m.laplacian_encoding,
            chunk_size: m.chunk_size,
            input_stored: m.input_stored,
            checksums: ChecksumFile {
                gaussian: m.checksums.gaussian.clone(),
                laplacian: m.checksums.laplacian.clone(),
            },
            shards: m.shards.clone(),
        }
    }
}

impl TryFrom<ManifestFile> for PyramidManifest {
    type Error = Error;

    fn try_from(f: ManifestFile) -> Result<Self> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        if f.gaussian_encoding != "u8" {
            return Err(Error::Manifest(format!(
                "unsupported gaussian_encoding {:?}",
                f.gaussian_encoding
            )));
        }
        let base = Period::new(f.base_period_ns, f.base_period_den)?;
        let schedule = LevelSchedule::from_strides(base, f.strides)?;
        if schedule.labels != f.labels {
            return Err(Error::Manifest("labels do not match strides".into()));
        }
        if schedule.day_level != f.day_level || schedule.year_level != f.year_level {
            return Err(Error::Manifest("day/year levels do not match strides".into()));
        }
        let shape = Shape::new(f.width, f.height, f.channels)?;
        let n = schedule.depth();
        if f.counts.len() != n + 1
            || f.missing.len() != n + 1
            || f.laplacian_counts.len() != n
            || f.laplacian_missing.len() != n
        {
            return Err(Error::Manifest("per-level lists do not match strides".into()));
        }
        let mut gaussian_times = f.gaussian_times;
        let mut laplacian_times = f.laplacian_times;
        let grid = |period: Period,
                    count: usize,
                    missing: MissingRuns,
                    times: Option<Vec<i64>>|
         -> Result<TimeGrid> {
            let origin = times
                .as_ref()
                .and_then(|t| t.first().copied())
                .unwrap_or(f.origin_ns);
            let mut g = TimeGrid::new(origin, period, count).with_missing(missing)?;
            if let Some(t) = times {
                g = g.with_times(t)?;
            }
            Ok(g)
        };
        let mut gaussian = Vec::with_capacity(n + 1);
        for (level, (count, missing)) in f.counts.into_iter().zip(f.missing).enumerate() {
            let times = gaussian_times.remove(&level.to_string());
            gaussian.push(grid(schedule.level_period(level)?, count, missing, times)?);
        }
        let mut laplacian = Vec::with_capacity(n);
        for (i, (count, missing)) in f
            .laplacian_counts
            .into_iter()
            .zip(f.laplacian_missing)
            .enumerate()
        {
            let times = laplacian_times.remove(&(i + 1).to_string());
            laplacian.push(grid(schedule.level_period(i)?, count, missing, times)?);
        }
        let m = PyramidManifest {
            schedule,
            shape,
            gaussian,
            laplacian,
            laplacian_encoding: f.laplacian_encoding,
            chunk_size: f.chunk_size,
            input_stored: f.input_stored,
            checksums: Checksums {
                gaussian: f.checksums.gaussian,
                laplacian: f.checksums.laplacian,
            },
            shards: f.shards,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Paired Gaussian and Laplacian level sequences.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub manifest: PyramidManifest,
    /// Gaussian levels 1..=N at index `i - 1`; level 0 is the input.
    pub gaussian: Vec<FrameSequence>,
    /// Laplacian levels 1..=N at index `i - 1`.
    pub laplacian: Vec<FrameSequence>,
}

impl Pyramid {
    pub fn depth(&self) -> usize {
        self.manifest.depth()
    }

    /// Gaussian level `level` in `1..=N`.
    pub fn gaussian(&self, level: usize) -> Result<&FrameSequence> {
        level
            .checked_sub(1)
            .and_then(|i| self.gaussian.get(i))
            .ok_or(Error::OutOfRange {
                what: "gaussian level",
                index: level,
                len: self.gaussian.len() + 1,
            })
    }

    /// Laplacian level `level` in `1..=N`.
    pub fn laplacian(&self, level: usize) -> Result<&FrameSequence> {
        level
            .checked_sub(1)
            .and_then(|i| self.laplacian.get(i))
            .ok_or(Error::OutOfRange {
                what: "laplacian level",
                index: level,
                len: self.laplacian.len() + 1,
            })
    }

    pub fn top(&self) -> Option<&FrameSequence> {
        self.gaussian.last()
    }
}

/// Random access to the stored levels of a pyramid.
pub trait LevelReader {
    fn manifest(&self) -> &PyramidManifest;

    /// Gaussian `level` (0..=N). Level 0 is only available when stored.
    fn gaussian(&self, level: usize) -> Result<Cow<'_, FrameSequence>>;

    /// Laplacian `level` (1..=N).
    fn laplacian(&self, level: usize) -> Result<Cow<'_, FrameSequence>>;

    /// Laplacian `level` as a frame source, for one streaming pass.
    fn laplacian_frames(&self, level: usize) -> Result<Box<dyn FrameSource + '_>> {
        Ok(match self.laplacian(level)? {
            Cow::Borrowed(s) => Box::new(s),
            Cow::Owned(s) => Box::new(s),
        })
    }
}

impl LevelReader for Pyramid {
    fn manifest(&self) -> &PyramidManifest {
        &self.manifest
    }

    fn gaussian(&self, level: usize) -> Result<Cow<'_, FrameSequence>> {
        Pyramid::gaussian(self, level).map(Cow::Borrowed)
    }

    fn laplacian(&self, level: usize) -> Result<Cow<'_, FrameSequence>> {
        Pyramid::laplacian(self, level).map(Cow::Borrowed)
    }
}
