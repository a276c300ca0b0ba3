//! Level schedules: which stride separates each pair of adjacent levels.
//!
//! Strides are drawn from {2, 3, 5} so that cumulative periods land exactly
//! on familiar units. The sub-day ladder, stated for a 30 fps base, is
//!
//! ```text
//! stride   2      3     5    5    3     2     2     5     3      2      2    2    2    3     2
//! period 1/15 s 1/5 s  1 s  5 s  15 s  30 s  1 min 5 min 15 min 30 min 1 h  2 h  4 h  12 h  1 day
//! ```
//!
//! followed by `[3, 2, 5, 3, 2, 2]` from one day to the 360-day year
//! (3 d, 6 d, 30 d, 90 d, 180 d, 1 year) and by powers of two beyond that.
//! Bases that sit on the ladder use its suffix; other bases first climb to
//! the nearest ladder rung they divide.
//!
//! The ordering is part of the storage format: two schedules with the same
//! stride multiset only share cumulative periods at matching prefixes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{Period, NANOS_PER_DAY, NANOS_PER_YEAR};

/// Sub-day strides for a 1/30 s base.
pub const SUB_DAY_STRIDES: [u8; 15] = [2, 3, 5, 5, 3, 2, 2, 5, 3, 2, 2, 2, 2, 3, 2];
/// Strides from one day to one 360-day year.
pub const DAY_TO_YEAR_STRIDES: [u8; 6] = [3, 2, 5, 3, 2, 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub base_period: Period,
    pub strides: Vec<u8>,
    /// One label per level, `strides.len() + 1` entries.
    pub labels: Vec<String>,
    pub day_level: Option<usize>,
    pub year_level: Option<usize>,
}

impl LevelSchedule {
    /// A schedule with explicit strides and no day/year anchors checks.
    pub fn from_strides(base_period: Period, strides: Vec<u8>) -> Result<Self> {
        for &s in &strides {
            if !matches!(s, 2 | 3 | 5) {
                return Err(Error::UnsupportedStride(s as u32));
            }
        }
        let mut s = LevelSchedule {
            base_period,
            strides,
            labels: Vec::new(),
            day_level: None,
            year_level: None,
        };
        let day = Period::from_nanos(NANOS_PER_DAY)?;
        let year = Period::from_nanos(NANOS_PER_YEAR)?;
        for level in 0..=s.strides.len() {
            let p = s.level_period(level)?;
            if p == day {
                s.day_level = Some(level);
            }
            if p == year {
                s.year_level = Some(level);
            }
        }
        s.labels = (0..=s.strides.len())
            .map(|l| s.label_for(l))
            .collect::<Result<_>>()?;
        Ok(s)
    }

    /// Number of pyramid levels above level 0.
    pub fn depth(&self) -> usize {
        self.strides.len()
    }

    pub fn cumulative_stride(&self, level: usize) -> Result<u64> {
        if level > self.strides.len() {
            return Err(Error::OutOfRange {
                what: "level",
                index: level,
                len: self.strides.len() + 1,
            });
        }
        self.strides[..level]
            .iter()
            .try_fold(1u64, |acc, &s| acc.checked_mul(s as u64))
            .ok_or_else(|| Error::Schedule("cumulative stride overflows".into()))
    }

    /// Duration of one frame at `level`.
    pub fn level_period(&self, level: usize) -> Result<Period> {
        let m = self.cumulative_stride(level)?;
        self.base_period
            .checked_mul(m)
            .ok_or_else(|| Error::Schedule(format!("level {level} period overflows")))
    }

    /// Frame counts per level for a level-0 sequence of `count` frames.
    pub fn level_counts(&self, count: usize) -> Vec<usize> {
        let mut counts = vec![count];
        for &s in &self.strides {
            let last = *counts.last().unwrap();
            counts.push(last.div_ceil(s as usize));
        }
        counts
    }

    fn label_for(&self, level: usize) -> Result<String> {
        let p = self.level_period(level)?;
        if let Some(y) = self.year_level {
            if level >= y {
                let years = p
                    .ratio(&Period::from_nanos(NANOS_PER_YEAR)?)
                    .unwrap_or(1);
                return Ok(if years == 1 {
                    "1 year".to_string()
                } else {
                    format!("{years} years")
                });
            }
        }
        Ok(p.label())
    }
}

fn smallest_prime_factor(n: u64) -> u64 {
    let mut f = 2;
    while f * f <= n {
        if n.is_multiple_of(f) {
            return f;
        }
        f += 1;
    }
    n
}

/// Splits `n` into factors of 2, 3 and 5, ascending; errors name the first
/// other prime factor.
fn factor_235(n: u64) -> std::result::Result<Vec<u8>, u64> {
    let mut rest = n;
    let mut out = Vec::new();
    for p in [2u64, 3, 5] {
        while rest.is_multiple_of(p) {
            rest /= p;
            out.push(p as u8);
        }
    }
    if rest == 1 {
        Ok(out)
    } else {
        Err(smallest_prime_factor(rest))
    }
}

/// Strides from `base` up to exactly one day.
fn sub_day_strides(base: Period) -> Result<Vec<u8>> {
    let day = Period::from_nanos(NANOS_PER_DAY)?;
    let per_day = day.ratio(&base).ok_or_else(|| {
        Error::Schedule(format!(
            "base period {} does not divide one day into a whole number of frames",
            base.label()
        ))
    })?;
    if let Err(f) = factor_235(per_day) {
        return Err(Error::Schedule(format!(
            "base period {} splits a day into {per_day} frames, which has prime factor {f} (only 2, 3 and 5 are allowed)",
            base.label()
        )));
    }
    // Walk the canonical ladder; climb to the first rung that base divides.
    let mut rung = Period::from_fps(30)?;
    let mut rungs = vec![rung];
    for &s in &SUB_DAY_STRIDES {
        rung = rung.checked_mul(s as u64).expect("ladder fits u64");
        rungs.push(rung);
    }
    for (i, rung) in rungs.iter().enumerate() {
        if let Some(k) = rung.ratio(&base) {
            let mut strides = factor_235(k).expect("divisor of a 2-3-5 smooth number");
            strides.extend_from_slice(&SUB_DAY_STRIDES[i..]);
            return Ok(strides);
        }
    }
    unreachable!("the final rung is one day, which base divides")
}

/// Builds the schedule for a sequence of `total_span` sampled every
/// `base_period`.
///
/// The schedule passes exactly through one day when the span covers a day,
/// and through the 360-day year when it covers one; beyond those anchors it
/// continues while the next level would still hold at least two frames.
pub fn schedule_for(base_period: Period, total_span: Period) -> Result<LevelSchedule> {
    if total_span < base_period {
        return Err(Error::Schedule(format!(
            "total span {} is shorter than the base period {}",
            total_span.label(),
            base_period.label()
        )));
    }
    let sub_day = sub_day_strides(base_period)?;
    let mut sequence = sub_day.clone();
    sequence.extend_from_slice(&DAY_TO_YEAR_STRIDES);

    let day = Period::from_nanos(NANOS_PER_DAY)?;
    let year = Period::from_nanos(NANOS_PER_YEAR)?;
    let covers = |p: &Period| total_span >= *p;
    let mut anchor_len = 0;
    if covers(&day) {
        anchor_len = sub_day.len();
    }
    if covers(&year) {
        anchor_len = sequence.len();
    }

    let span_num = total_span.numer() as u128 * base_period.denom() as u128;
    let span_den = total_span.denom() as u128 * base_period.numer() as u128;
    let mut count = span_num.div_ceil(span_den);
    let mut strides = Vec::new();
    let mut i = 0;
    loop {
        let s = sequence.get(i).copied().unwrap_or(2);
        let next = count.div_ceil(s as u128);
        if i >= anchor_len && next < 2 {
            break;
        }
        strides.push(s);
        count = next;
        i += 1;
    }
    LevelSchedule::from_strides(base_period, strides)
}
