//! Exact time arithmetic.
//!
//! All timestamps are integer nanoseconds since the UTC epoch. Frame periods
//! are exact rationals of nanoseconds so that rates such as 30 fps
//! (1e9/30 ns per frame) accumulate without drift: slot `i` of a grid is
//! always `origin + floor(i * numer / denom)`.

use std::fmt;
use std::ops::Range;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NANOS_PER_SEC: u64 = 1_000_000_000;
pub const NANOS_PER_MIN: u64 = 60 * NANOS_PER_SEC;
pub const NANOS_PER_HOUR: u64 = 60 * NANOS_PER_MIN;
pub const NANOS_PER_DAY: u64 = 24 * NANOS_PER_HOUR;
/// The pyramid's year: 360 day-frames.
pub const NANOS_PER_YEAR: u64 = 360 * NANOS_PER_DAY;

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// An exact positive duration of `numer / denom` nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PeriodRepr", into = "PeriodRepr")]
pub struct Period {
    numer: u64,
    denom: u64,
}

#[derive(Serialize, Deserialize)]
struct PeriodRepr {
    ns: u64,
    #[serde(default = "one")]
    den: u64,
}

fn one() -> u64 {
    1
}

impl TryFrom<PeriodRepr> for Period {
    type Error = Error;

    fn try_from(r: PeriodRepr) -> Result<Self> {
        Period::new(r.ns, r.den)
    }
}

impl From<Period> for PeriodRepr {
    fn from(p: Period) -> Self {
        PeriodRepr {
            ns: p.numer,
            den: p.denom,
        }
    }
}

impl Period {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::InvalidArgument(format!(
                "period must be positive, got {numer}/{denom} ns"
            )));
        }
        let g = gcd(numer as u128, denom as u128) as u64;
        Ok(Period {
            numer: numer / g,
            denom: denom / g,
        })
    }

    pub fn from_nanos(ns: u64) -> Result<Self> {
        Period::new(ns, 1)
    }

    pub fn from_secs(secs: u64) -> Result<Self> {
        Period::new(secs * NANOS_PER_SEC, 1)
    }

    /// One frame at `fps` frames per second.
    pub fn from_fps(fps: u64) -> Result<Self> {
        Period::new(NANOS_PER_SEC, fps)
    }

    pub fn days(n: u64) -> Result<Self> {
        Period::new(n * NANOS_PER_DAY, 1)
    }

    pub fn numer(&self) -> u64 {
        self.numer
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    /// Whole nanoseconds, when the period is an integer number of them.
    pub fn as_nanos(&self) -> Option<u64> {
        (self.denom == 1).then_some(self.numer)
    }

    pub fn as_nanos_f64(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.as_nanos_f64() / NANOS_PER_SEC as f64
    }

    pub fn checked_mul(&self, k: u64) -> Option<Period> {
        let g = gcd(k as u128, self.denom as u128);
        let numer = (self.numer as u128).checked_mul(k as u128 / g)?;
        let numer = u64::try_from(numer).ok()?;
        Some(Period {
            numer,
            denom: (self.denom as u128 / g) as u64,
        })
    }

    pub fn checked_div(&self, k: u64) -> Option<Period> {
        if k == 0 {
            return None;
        }
        let denom = (self.denom as u128).checked_mul(k as u128)?;
        let g = gcd(self.numer as u128, denom);
        Some(Period {
            numer: (self.numer as u128 / g) as u64,
            denom: u64::try_from(denom / g).ok()?,
        })
    }

    /// `self / other` when it is an exact positive integer.
    pub fn ratio(&self, other: &Period) -> Option<u64> {
        let a = self.numer as u128 * other.denom as u128;
        let b = other.numer as u128 * self.denom as u128;
        a.is_multiple_of(b).then(|| (a / b) as u64)
    }

    /// Offset of slot `i` from a grid origin, floored to whole nanoseconds.
    pub fn offset(&self, i: u64) -> i128 {
        (i as u128 * self.numer as u128 / self.denom as u128) as i128
    }

    /// Number of whole periods needed to cover `span_ns` (ceiling).
    pub fn slots_covering(&self, span_ns: u128) -> u128 {
        (span_ns * self.denom as u128).div_ceil(self.numer as u128)
    }

    /// Human-readable timescale name, e.g. "1/30 s", "5 min", "12 h", "1 day".
    pub fn label(&self) -> String {
        const UNITS: [(u64, &str); 4] = [
            (NANOS_PER_DAY, "d"),
            (NANOS_PER_HOUR, "h"),
            (NANOS_PER_MIN, "min"),
            (NANOS_PER_SEC, "s"),
        ];
        if let Some(ns) = self.as_nanos() {
            if ns == NANOS_PER_DAY {
                return "1 day".to_string();
            }
            for (unit, name) in UNITS {
                if ns >= unit && ns % unit == 0 {
                    return format!("{} {name}", ns / unit);
                }
            }
        }
        let per_sec = Period::from_secs(1).unwrap();
        if let Some(k) = per_sec.ratio(self) {
            return format!("1/{k} s");
        }
        if let Some(ns) = self.as_nanos().filter(|ns| ns % 1_000_000 == 0) {
            return format!("{} ms", ns / 1_000_000);
        }
        format!("{:.3} ms", self.as_nanos_f64() / 1e6)
    }
}

impl Ord for Period {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let a = self.numer as u128 * other.denom as u128;
        let b = other.numer as u128 * self.denom as u128;
        a.cmp(&b)
    }
}

impl PartialOrd for Period {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A non-negative decimal or `a/b` fraction as an exact ratio.
fn parse_ratio(s: &str) -> Option<(u128, u128)> {
    if let Some((a, b)) = s.split_once('/') {
        return Some((a.trim().parse().ok()?, b.trim().parse().ok()?));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 18 {
        return None;
    }
    let digits = |t: &str| t.is_empty() || t.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return None;
    }
    let scale = 10u128.pow(frac.len() as u32);
    let int: u128 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac: u128 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    Some((int.checked_mul(scale)?.checked_add(frac)?, scale))
}

/// Parses `30fps`, `29.97fps`, `1min`, `5m`, `1/30s`, `500ms`, `2h`, `1d`,
/// `250us`, `100ns` or a bare integer of nanoseconds.
impl std::str::FromStr for Period {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let s = text.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse period {text:?} (try 30fps, 1min, 1/30s or 500ms)"));
        let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
        let (value, unit) = (s[..split].trim(), s[split..].trim());
        let (p, q) = parse_ratio(value).ok_or_else(bad)?;
        let (numer, denom) = if unit == "fps" {
            // frames per second p/q -> q/p seconds
            (q * NANOS_PER_SEC as u128, p)
        } else {
            let ns = match unit {
                "" | "ns" => 1,
                "us" => 1_000,
                "ms" => 1_000_000,
                "s" => NANOS_PER_SEC,
                "m" | "min" => NANOS_PER_MIN,
                "h" => NANOS_PER_HOUR,
                "d" => NANOS_PER_DAY,
                _ => return Err(bad()),
            } as u128;
            (p * ns, q)
        };
        let g = gcd(numer, denom).max(1);
        let (numer, denom) = (numer / g, denom / g);
        Period::new(u64::try_from(numer).map_err(|_| bad())?, u64::try_from(denom).map_err(|_| bad())?)
    }
}

/// Integer nanoseconds since the epoch, or an RFC 3339 timestamp.
pub fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    s.parse::<i64>()
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok()?.timestamp_nanos_opt())
}

/// Sorted, non-overlapping, non-adjacent half-open runs of missing slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MissingRuns(Vec<(usize, usize)>);

impl MissingRuns {
    pub fn new() -> Self {
        MissingRuns(Vec::new())
    }

    /// Builds normalized runs from arbitrary (possibly overlapping) ranges.
    pub fn from_ranges(ranges: impl IntoIterator<Item = Range<usize>>) -> Self {
        let mut v: Vec<(usize, usize)> = ranges
            .into_iter()
            .filter(|r| r.start < r.end)
            .map(|r| (r.start, r.end))
            .collect();
        v.sort_unstable();
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        MissingRuns(out)
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &m) in mask.iter().enumerate() {
            match (m, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, mask.len()));
        }
        MissingRuns(runs)
    }

    pub fn runs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, slot: usize) -> bool {
        let idx = self.0.partition_point(|&(_, end)| end <= slot);
        self.0.get(idx).is_some_and(|&(start, _)| start <= slot)
    }

    /// Whether every slot of `range` is missing.
    pub fn covers(&self, range: Range<usize>) -> bool {
        if range.is_empty() {
            return true;
        }
        let idx = self.0.partition_point(|&(_, end)| end <= range.start);
        self.0
            .get(idx)
            .is_some_and(|&(a, b)| a <= range.start && range.end <= b)
    }

    /// Number of missing slots inside `range`.
    pub fn count_in(&self, range: Range<usize>) -> usize {
        self.0
            .iter()
            .map(|&(a, b)| {
                let lo = a.max(range.start);
                let hi = b.min(range.end);
                hi.saturating_sub(lo)
            })
            .sum()
    }

    pub fn to_mask(&self, len: usize) -> Vec<bool> {
        let mut mask = vec![false; len];
        for &(a, b) in &self.0 {
            for m in &mut mask[a.min(len)..b.min(len)] {
                *m = true;
            }
        }
        mask
    }

    /// Runs restricted to `range`, re-based so that `range.start` becomes 0.
    pub fn slice(&self, range: Range<usize>) -> MissingRuns {
        MissingRuns::from_ranges(self.0.iter().filter_map(|&(a, b)| {
            let lo = a.max(range.start);
            let hi = b.min(range.end);
            (lo < hi).then(|| lo - range.start..hi - range.start)
        }))
    }

    /// Runs shifted right by `offset` slots.
    pub fn shifted(&self, offset: usize) -> MissingRuns {
        MissingRuns(self.0.iter().map(|&(a, b)| (a + offset, b + offset)).collect())
    }

    /// Missing runs after sampling every `stride`-th slot starting at
    /// `phase`, with the final sample index clamped to `len - 1`: output
    /// slot `k` is missing iff input slot `min(k*stride + phase, len-1)` is.
    pub fn subsampled(&self, len: usize, stride: usize, phase: usize) -> MissingRuns {
        let out_len = len.div_ceil(stride);
        if out_len == 0 {
            return MissingRuns::new();
        }
        let first_unclamped = |a: usize| a.saturating_sub(phase).div_ceil(stride);
        let last = out_len - 1;
        let last_clamped = last * stride + phase >= len;
        let mut ranges = Vec::new();
        for &(a, b) in &self.0 {
            let lo = first_unclamped(a).min(out_len);
            let mut hi = first_unclamped(b).min(out_len);
            if last_clamped {
                hi = hi.min(last);
            }
            if lo < hi {
                ranges.push(lo..hi);
            }
            if last_clamped && a < len && len - 1 < b {
                ranges.push(last..out_len);
            }
        }
        MissingRuns::from_ranges(ranges)
    }

    pub fn validate(&self, count: usize) -> Result<()> {
        let mut prev_end = 0;
        for (i, &(a, b)) in self.0.iter().enumerate() {
            if a >= b || b > count || (i > 0 && a <= prev_end) {
                return Err(Error::InvalidArgument(format!(
                    "missing runs must be sorted, non-empty, disjoint and within [0, {count}); bad run [{a}, {b})"
                )));
            }
            prev_end = b;
        }
        Ok(())
    }
}

/// The time axis of a frame sequence.
///
/// Uniform grids map slot `i` to `origin + i * period`. Grids above the
/// merge level of a sharded multi-year build skip dropped days and carry an
/// explicit per-slot timestamp list instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeGrid {
    pub origin_ns: i64,
    pub period: Period,
    pub count: usize,
    pub missing: MissingRuns,
    pub times: Option<Vec<i64>>,
}

impl TimeGrid {
    pub fn new(origin_ns: i64, period: Period, count: usize) -> Self {
        TimeGrid {
            origin_ns,
            period,
            count,
            missing: MissingRuns::new(),
            times: None,
        }
    }

    pub fn with_missing(mut self, missing: MissingRuns) -> Result<Self> {
        missing.validate(self.count)?;
        self.missing = missing;
        Ok(self)
    }

    pub fn with_times(mut self, times: Vec<i64>) -> Result<Self> {
        if times.len() != self.count {
            return Err(Error::InvalidArgument(format!(
                "explicit timestamps: expected {}, got {}",
                self.count,
                times.len()
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "explicit timestamps must be strictly increasing".into(),
            ));
        }
        self.times = Some(times);
        Ok(self)
    }

    pub fn is_missing(&self, slot: usize) -> bool {
        self.missing.contains(slot)
    }

    /// Absolute time of `slot` in nanoseconds since the epoch.
    pub fn slot_to_time(&self, slot: usize) -> Result<i64> {
        if slot >= self.count {
            return Err(Error::OutOfRange {
                what: "slot",
                index: slot,
                len: self.count,
            });
        }
        if let Some(times) = &self.times {
            return Ok(times[slot]);
        }
        let t = self.origin_ns as i128 + self.period.offset(slot as u64);
        i64::try_from(t).map_err(|_| Error::InvalidArgument(format!("slot {slot} overflows i64 time")))
    }

    /// Time just past the last slot.
    pub fn end_time(&self) -> i64 {
        if self.count == 0 {
            return self.origin_ns;
        }
        match &self.times {
            Some(times) => times[self.count - 1] + self.period.offset(1) as i64,
            None => (self.origin_ns as i128 + self.period.offset(self.count as u64)) as i64,
        }
    }

    /// The first slot whose time is `>= t` (may equal `count`).
    pub fn first_slot_at_or_after(&self, t: i64) -> usize {
        match &self.times {
            Some(times) => times.partition_point(|&x| x < t),
            None => {
                if t <= self.origin_ns {
                    return 0;
                }
                let delta = (t as i128 - self.origin_ns as i128) as u128;
                // smallest i with floor(i*numer/denom) >= delta
                let n = self.period.numer() as u128;
                let d = self.period.denom() as u128;
                let i = (delta * d).div_ceil(n);
                (i.min(self.count as u128)) as usize
            }
        }
    }

    /// Slots whose timestamps fall in `[from, to)`.
    pub fn slots_in(&self, from: i64, to: i64) -> Range<usize> {
        let a = self.first_slot_at_or_after(from);
        let b = self.first_slot_at_or_after(to).max(a);
        a..b
    }

    /// The grid after keeping sample `min(k*stride + phase, count-1)`.
    /// The origin is unchanged: coarse slot `k` starts where fine slot
    /// `k*stride` starts.
    pub fn subsampled(&self, stride: usize, phase: usize) -> Result<TimeGrid> {
        let period = self
            .period
            .checked_mul(stride as u64)
            .ok_or_else(|| Error::Schedule("level period overflows".into()))?;
        let count = self.count.div_ceil(stride);
        let times = self
            .times
            .as_ref()
            .map(|t| (0..count).map(|k| t[k * stride]).collect());
        Ok(TimeGrid {
            origin_ns: self.origin_ns,
            period,
            count,
            missing: self.missing.subsampled(self.count, stride, phase),
            times,
        })
    }

    /// The sub-grid of slots in `range`.
    pub fn slice(&self, range: Range<usize>) -> Result<TimeGrid> {
        if range.start > range.end || range.end > self.count {
            return Err(Error::OutOfRange {
                what: "slot",
                index: range.end,
                len: self.count,
            });
        }
        let origin_ns = if range.start < self.count {
            self.slot_to_time(range.start)?
        } else {
            self.end_time()
        };
        Ok(TimeGrid {
            origin_ns,
            period: self.period,
            count: range.len(),
            missing: self.missing.slice(range.clone()),
            times: self.times.as_ref().map(|t| t[range].to_vec()),
        })
    }
}

pub fn to_datetime(ns: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_nanos(ns)
}

/// ISO-8601 UTC timestamp with nanosecond precision.
pub fn format_time(ns: i64) -> String {
    to_datetime(ns).to_rfc3339_opts(chrono::SecondsFormat::Nanos, true)
}

/// ISO-8601 duration such as `PT43200S` or `PT0.033333333S`.
pub fn format_duration(period: &Period) -> String {
    let ns = period.offset(1) as u128;
    let secs = ns / NANOS_PER_SEC as u128;
    let frac = ns % NANOS_PER_SEC as u128;
    if frac == 0 {
        format!("PT{secs}S")
    } else {
        let frac = format!("{frac:09}");
        format!("PT{secs}.{}S", frac.trim_end_matches('0'))
    }
}

pub fn date_of(ns: i64) -> NaiveDate {
    to_datetime(ns).date_naive()
}

/// Nanosecond timestamp of midnight UTC at the start of `date`.
pub fn midnight_ns(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp_nanos_opt()
        .expect("date within i64 nanosecond range")
}
