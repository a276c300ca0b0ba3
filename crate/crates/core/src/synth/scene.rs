//! Synthetic multi-timescale scenes.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSequence, FrameSource, SequenceKind, Shape};
use crate::time::{MissingRuns, Period, TimeGrid, NANOS_PER_DAY};

/// A rectangle of pixels; `None` regions cover the whole frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Region {
    fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Component {
    /// `amplitude * sin(2π t / period_slots + phase)`.
    Sinusoid {
        period_slots: f64,
        amplitude: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        region: Option<Region>,
    },
    /// `amplitude` during slots `start .. start + duration`.
    Blip {
        start: usize,
        #[serde(default = "one")]
        duration: usize,
        amplitude: f64,
        #[serde(default)]
        region: Option<Region>,
    },
    /// `rate * t`.
    Ramp {
        rate: f64,
        #[serde(default)]
        region: Option<Region>,
    },
    /// `day` while the UTC time of day lies within the `day_fraction` of the
    /// day centred on noon, `night` otherwise.
    DayNight {
        day_fraction: f64,
        day: f64,
        night: f64,
        #[serde(default)]
        region: Option<Region>,
    },
    /// Slots `start..end` are absent: black and flagged missing.
    Missing { start: usize, end: usize },
}

fn one() -> usize {
    1
}

impl Component {
    fn region(&self) -> Option<&Region> {
        match self {
            Component::Sinusoid { region, .. }
            | Component::Blip { region, .. }
            | Component::Ramp { region, .. }
            | Component::DayNight { region, .. } => region.as_ref(),
            Component::Missing { .. } => None,
        }
    }

    /// Contribution at `slot` (time `t_ns`), before the region mask.
    fn value(&self, slot: usize, t_ns: i64) -> f64 {
        match *self {
            Component::Sinusoid {
                period_slots,
                amplitude,
                phase,
                ..
            } => amplitude * (TAU * slot as f64 / period_slots + phase).sin(),
            Component::Blip {
                start,
                duration,
                amplitude,
                ..
            } => {
                if (start..start + duration).contains(&slot) {
                    amplitude
                } else {
                    0.0
                }
            }
            Component::Ramp { rate, .. } => rate * slot as f64,
            Component::DayNight {
                day_fraction,
                day,
                night,
                ..
            } => {
                let tod = t_ns.rem_euclid(NANOS_PER_DAY as i64) as f64 / NANOS_PER_DAY as f64;
                if (tod - 0.5).abs() < day_fraction / 2.0 {
                    day
                } else {
                    night
                }
            }
            Component::Missing { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Uniform noise in `[-amplitude, amplitude]`.
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub period: Period,
    pub count: usize,
    #[serde(default)]
    pub origin_ns: i64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "gray")]
    pub channels: u8,
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub components: Vec<Component>,
    #[serde(default)]
    pub noise: Option<Noise>,
}

fn gray() -> u8 {
    1
}

impl SceneSpec {
    pub fn new(period: Period, count: usize, width: u32, height: u32) -> Self {
        SceneSpec {
            period,
            count,
            origin_ns: 0,
            width,
            height,
            channels: 1,
            base: 0.0,
            components: Vec::new(),
            noise: None,
        }
    }

    pub fn with(mut self, component: Component) -> Self {
        self.components.push(component);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.width, self.height, self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if self.count == 0 {
            return Err(Error::EmptySequence);
        }
        for c in &self.components {
            if let Some(r) = c.region() {
                if r.width == 0 || r.height == 0 || r.x + r.width > self.width || r.y + r.height > self.height {
                    return Err(Error::InvalidArgument(format!(
                        "region {}x{}+{}+{} outside the {}x{} frame",
                        r.width, r.height, r.x, r.y, self.width, self.height
                    )));
                }
            }
            match *c {
                Component::Sinusoid { period_slots, .. } if !(period_slots > 0.0) => {
                    return Err(Error::InvalidArgument("sinusoid period must be positive".into()))
                }
                Component::DayNight { day_fraction, .. } if !(0.0..=1.0).contains(&day_fraction) => {
                    return Err(Error::InvalidArgument("day fraction must lie in [0, 1]".into()))
                }
                Component::Missing { start, end } if start > end || end > self.count => {
                    return Err(Error::InvalidArgument(format!("missing span {start}..{end} outside the scene")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let missing = MissingRuns::from_ranges(self.components.iter().filter_map(|c| match *c {
            Component::Missing { start, end } => Some(start..end),
            _ => None,
        }));
        TimeGrid::new(self.origin_ns, self.period, self.count).with_missing(missing)
    }
}

/// Frames of a scene computed on demand.
#[derive(Debug, Clone)]
pub struct SceneSource {
    spec: SceneSpec,
    shape: Shape,
    grid: TimeGrid,
}

impl SceneSource {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        Ok(SceneSource {
            shape: spec.shape()?,
            grid: spec.grid()?,
            spec,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }
}

impl FrameSource for SceneSource {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn len(&self) -> usize {
        self.grid.count
    }

    fn read_frame(&self, slot: usize, out: &mut [f32]) -> Result<()> {
        if slot >= self.grid.count {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: self.grid.count,
            });
        }
        if self.grid.missing.contains(slot) {
            out.fill(0.0);
            return Ok(());
        }
        let t = self.grid.slot_to_time(slot)?;
        let values: Vec<(f64, Option<&Region>)> = self
            .spec
            .components
            .iter()
            .map(|c| (c.value(slot, t), c.region()))
            .collect();
        // Noise is a pure function of (seed, slot) so frames can be read in
        // any order.
        let mut rng = self
            .spec
            .noise
            .map(|n| ChaCha8Rng::seed_from_u64(n.seed ^ (slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let px = self.shape.pixels();
        let w = self.shape.width;
        for c in 0..self.shape.channels as usize {
            for p in 0..px {
                let (x, y) = (p as u32 % w, p as u32 / w);
                let mut v = self.spec.base;
                for (cv, region) in &values {
                    if region.is_none_or(|r| r.contains(x, y)) {
                        v += cv;
                    }
                }
                if let (Some(rng), Some(n)) = (rng.as_mut(), self.spec.noise) {
                    v += rng.random_range(-1.0..=1.0) * n.amplitude;
                }
                out[c * px + p] = v.clamp(0.0, 255.0) as f32;
            }
        }
        Ok(())
    }
}

/// Materializes a scene.
pub fn generate(spec: &SceneSpec) -> Result<FrameSequence> {
    let src = SceneSource::new(spec.clone())?;
    FrameSequence::collect(&src, src.grid.clone(), SequenceKind::Input)
}

/// A random scene of a few overlapping components, for property tests.
pub fn random_scene(seed: u64, period: Period, count: usize, width: u32, height: u32) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SceneSpec::new(period, count, width, height);
    spec.base = rng.random_range(40.0..160.0);
    let region = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            return None;
        }
        let rw = rng.random_range(1..=width);
        let rh = rng.random_range(1..=height);
        Some(Region {
            x: rng.random_range(0..=width - rw),
            y: rng.random_range(0..=height - rh),
            width: rw,
            height: rh,
        })
    };
    for _ in 0..rng.random_range(1..=4) {
        let c = match rng.random_range(0..4) {
            0 => Component::Sinusoid {
                period_slots: rng.random_range(2.0..count as f64),
                amplitude: rng.random_range(5.0..60.0),
                phase: rng.random_range(0.0..TAU),
                region: region(&mut rng),
            },
            1 => Component::Blip {
                start: rng.random_range(0..count),
                duration: rng.random_range(1..=count.min(20)),
                amplitude: rng.random_range(-80.0..80.0),
                region: region(&mut rng),
            },
            2 => Component::Ramp {
                rate: rng.random_range(-50.0..50.0) / count as f64,
                region: region(&mut rng),
            },
            _ => {
                let start = rng.random_range(0..count);
                Component::Missing {
                    start,
                    end: (start + rng.random_range(1..=count / 10 + 1)).min(count),
                }
            }
        };
        spec.components.push(c);
    }
    spec.noise = Some(Noise {
        amplitude: rng.random_range(0.0..10.0),
        seed: rng.random(),
    });
    spec
}
